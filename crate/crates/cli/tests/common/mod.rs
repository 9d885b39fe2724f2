#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ecgres_testkit::{write_database, SynthConfig};

/// Synthetic record directory with `n` records.
pub fn synthetic_db(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let db = dir.join("db");
    write_database(&db, n, seed, &SynthConfig::default()).unwrap();
    db
}

/// Config text for a run over `db` writing to `out`.
pub fn config_text(db: &Path, out: &Path, extra: &str) -> String {
    format!(
        r#"records_dir = "{}"
out_dir = "{}"

[seeds]
split = 11
training = 12
validation = 13
test = 14
topology = 15
mismatch = 16
{extra}"#,
        db.display(),
        out.display()
    )
}

pub fn write_config(dir: &Path, db: &Path, out: &Path, extra: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, config_text(db, out, extra)).unwrap();
    p
}
