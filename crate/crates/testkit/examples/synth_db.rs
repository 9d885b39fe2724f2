//! Write a synthetic WFDB database: `synth_db <dir> [records] [seed]`.

use std::path::PathBuf;

use ecgres_testkit::{write_database, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().expect("usage: synth_db <dir> [records] [seed]"));
    let n = args.next().map_or(3, |s| s.parse().expect("record count"));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    let names = write_database(&dir, n, seed, &SynthConfig::default()).expect("write database");
    println!("{} records in {}", names.len(), dir.display());
}
