//! Runs a scenario file and prints the metrics report.
//!
//! cargo run --example run_scenario -- scenarios/diamond.scn

use std::path::PathBuf;

use r2p2::simnet::{self, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/fig1.scn")));
    let scenario = Scenario::load(&path)?;
    let out = simnet::run(&scenario)?;
    println!("{}", out.report.to_json());
    if std::env::var_os("TRACE").is_some() {
        eprint!("{}", out.trace_ndjson());
    }
    Ok(())
}
