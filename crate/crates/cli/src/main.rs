use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgres_cli::config::{DatasetSection, ExperimentConfig};
use ecgres_cli::standalone;
use ecgres_cli::{Pipeline, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "ecgres", version, about = "Spiking reservoir ECG anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// CI-scale preset: 3 records, 2,000 training beats, 10 eval segments.
    #[arg(long)]
    mini: bool,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-run even when inputs are unchanged.
    #[arg(long)]
    force: bool,
}

/// Stage options, all optional so that the standalone forms can share the
/// subcommand.
#[derive(Args, Clone, Default)]
struct OptRunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mini: bool,
    #[arg(long)]
    force: bool,
}

impl OptRunArgs {
    fn into_run(self, out: Option<PathBuf>) -> Result<RunArgs, PipelineError> {
        Ok(RunArgs {
            config: self.config.ok_or_else(|| PipelineError::Config("--config is required".into()))?,
            mini: self.mini,
            out,
            force: self.force,
        })
    }
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct DatasetCmd {
    #[command(subcommand)]
    action: Option<DatasetAction>,
    #[command(flatten)]
    run: OptRunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Build the three streams straight from a record directory.
    Build {
        #[arg(long)]
        records_dir: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mini: bool,
    },
}

/// With `--in`, encodes one signal file into `--out`; otherwise runs the
/// encode stage, with `--out` overriding the output directory.
#[derive(Args)]
struct EncodeCmd {
    #[command(flatten)]
    run: OptRunArgs,
    #[arg(long = "in", conflicts_with = "config", requires_all = ["target_rate", "out"])]
    input: Option<PathBuf>,
    /// Events per second per channel.
    #[arg(long)]
    target_rate: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Ingest(RunArgs),
    Dataset(DatasetCmd),
    Encode(EncodeCmd),
    Build(RunArgs),
    Tune(RunArgs),
    Simulate(RunArgs),
    Train(RunArgs),
    Calibrate(RunArgs),
    Evaluate(RunArgs),
    Report(RunArgs),
    /// All stages followed by the report.
    All(RunArgs),
    /// Score an event file with a calibrated model.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run directory holding build/ and tune/; defaults to the model's.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
    },
}

fn pipeline(a: &RunArgs) -> Result<Pipeline, PipelineError> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    if a.mini {
        cfg.apply_mini()?;
    }
    Pipeline::new(cfg, a.force)
}

fn stage(a: &RunArgs, s: Option<Stage>) -> Result<(), PipelineError> {
    pipeline(a)?.run(s).map(|_| ())
}

fn dispatch(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Ingest(a) => stage(&a, Some(Stage::Ingest)),
        Command::Dataset(DatasetCmd {
            action: Some(DatasetAction::Build { records_dir, seed, out, mini }),
            ..
        }) => {
            let mut section = DatasetSection::default();
            if mini {
                section.apply_mini();
            }
            let info = standalone::dataset_build(&records_dir, seed, &section, &out)?;
            println!("{}", serde_json::to_string_pretty(&info.split).expect("split serializes"));
            Ok(())
        }
        Command::Dataset(DatasetCmd { run, out, .. }) => stage(&run.into_run(out)?, Some(Stage::Dataset)),
        Command::Encode(EncodeCmd {
            input: Some(input),
            target_rate: Some(rate),
            out: Some(out),
            ..
        }) => {
            let meta = standalone::encode_signal(&input, rate, &out)?;
            println!("{} events, delta {:?} mV", meta.n_events, meta.delta_mv);
            Ok(())
        }
        Command::Encode(EncodeCmd { run, out, .. }) => stage(&run.into_run(out)?, Some(Stage::Encode)),
        Command::Build(a) => stage(&a, Some(Stage::Build)),
        Command::Tune(a) => stage(&a, Some(Stage::Tune)),
        Command::Simulate(a) => stage(&a, Some(Stage::Simulate)),
        Command::Train(a) => stage(&a, Some(Stage::Train)),
        Command::Calibrate(a) => stage(&a, Some(Stage::Calibrate)),
        Command::Evaluate(a) => stage(&a, Some(Stage::Evaluate)),
        Command::Report(a) => stage(&a, None),
        Command::All(a) => pipeline(&a)?.run_all(),
        Command::Run { model, events, out, network, dt } => {
            let dir = network
                .or_else(|| standalone::run_dir_of_model(&model))
                .ok_or_else(|| PipelineError::Config("cannot locate the network; pass --network".into()))?;
            let net = standalone::network_of_run(&dir)?;
            let rows = standalone::run_model(&model, &events, &net, dt, &out)?;
            println!("{rows} rows written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
