//! Hybrid forwarding under link failures on the diamond scenario.
//!
//! Prints every strategy change at relay B, then the transition counters.

use std::path::Path;

use r2p2::simnet::{self, Scenario, TraceEvent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/diamond.scn");
    let out = simnet::run(&Scenario::load(&path)?)?;
    let mut last = String::new();
    for ev in &out.trace {
        match ev {
            TraceEvent::Link { t, a, b, up } => {
                println!(
                    "{:>8.1} ms  link {a}-{b} {}",
                    *t as f64 / 1e3,
                    if *up { "up" } else { "down" }
                )
            }
            TraceEvent::Decision {
                t,
                node,
                name,
                mode,
                action,
                ..
            } if node == "B" && *mode != last => {
                println!(
                    "{:>8.1} ms  B switches to {mode:<14} for {name}: {action}",
                    *t as f64 / 1e3
                );
                last = mode.clone();
            }
            _ => {}
        }
    }
    let flow = &out.report.flows[0];
    println!("\ntransitions: {:?}", out.report.mode_transitions);
    println!(
        "flow {}: {}/{} chunks, {} retries, {} invalid chunks, final route {:?}",
        flow.prefix, flow.chunks_done, flow.chunks_total, flow.retries, flow.invalid_chunks, flow.last_route
    );
    Ok(())
}
