mod common;

use std::fs;

use ecgres_cli::stages::MetricsFile;
use ecgres_cli::{ExperimentConfig, Pipeline, PipelineError, Stage, Status};

fn mini_pipeline(dir: &std::path::Path) -> Pipeline {
    let db = common::synthetic_db(dir, 3, 7);
    let cfg_path = common::write_config(dir, &db, &dir.join("out"), "");
    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    cfg.apply_mini().unwrap();
    let mut p = Pipeline::new(cfg, false).unwrap();
    p.quiet = true;
    p
}

#[test]
fn mini_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = mini_pipeline(dir.path());
    p.run_all().unwrap();

    assert_eq!(p.manifest.stages.len(), 9);
    for key in p.manifest.output_files() {
        assert!(p.out.join(&key).is_file(), "{key} missing");
    }
    let metrics: MetricsFile =
        serde_json::from_slice(&fs::read(p.out.join("evaluate/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.table.rows.len(), 6);
    eprintln!("{}", fs::read_to_string(p.out.join("report/summary.txt")).unwrap());

    // Score trace: one row per state sample.
    let info: ecgres_cli::stages::DatasetInfo =
        serde_json::from_slice(&fs::read(p.out.join("dataset/streams.json")).unwrap()).unwrap();
    let rows = fs::read_to_string(p.out.join("report/score_trace_test.csv")).unwrap().lines().count() - 1;
    let expected = ecgres_core::readout::n_samples(info.streams["test"].duration_s, p.cfg.readout.sample_period);
    assert_eq!(rows, expected);

    // Unchanged inputs: every stage is skipped.
    for s in Stage::ALL {
        assert_eq!(p.run(Some(s)).unwrap(), Status::Skipped, "{}", s.name());
    }

    // A corrupted upstream artifact is detected before use.
    let target = p.out.join("simulate/test.aer");
    let mut bytes = fs::read(&target).unwrap();
    bytes[20] ^= 0xff;
    fs::write(&target, bytes).unwrap();
    let err = p.run(Some(Stage::Evaluate)).unwrap_err();
    assert!(matches!(err, PipelineError::StaleArtifact { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}
