//! Channels and settlements needed by pay-all versus hop-by-hop payment on
//! the ten-node mesh.

use std::path::Path;

use r2p2::cli::compare_payment;
use r2p2::simnet::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/mesh10.scn");
    let rows = compare_payment(&Scenario::load(&path)?)?;
    println!(
        "{:<12} {:>9} {:>12} {:>8}",
        "mode", "channels", "settlements", "updates"
    );
    for r in rows {
        println!(
            "{:<12} {:>9} {:>12} {:>8}",
            r.mode, r.channels_opened, r.settlements, r.updates
        );
    }
    Ok(())
}
