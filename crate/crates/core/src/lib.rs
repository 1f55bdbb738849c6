//! Price-aware route discovery, hybrid Interest forwarding, chunk-level
//! proof-of-forwarding and hop-by-hop micropayments for Named Data
//! Networking in ad-hoc networks, with a deterministic simulator.
//!
//! Modules, bottom up:
//!
//! - [`wire`]: packet types and the strict TLV codec.
//! - [`tables`]: PIT, FIB with per-hop price windows, neighbor liveness and
//!   the content store.
//! - [`pof`]: chained per-hop signatures over content chunks.
//! - [`payment`]: two-party channels, vouchers and the mock ledger.
//! - [`forwarding`]: the per-node state machine tying the above together.
//! - [`simnet`]: discrete-event simulator, scenario files, trace auditor.
//! - [`cli`]: the `r2p2` command line.
//!
//! ```
//! use r2p2::simnet::{self, Scenario};
//!
//! let text = r#"
//! version = 1
//! name = "pair"
//! seed = 1
//! duration_ms = 500
//!
//! [[node]]
//! name = "A"
//! addr = "00-14-00-00-00-01"
//!
//! [[node]]
//! name = "P"
//! addr = "00-14-00-00-00-02"
//! cost = 4
//!
//! [[link]]
//! a = "A"
//! b = "P"
//! latency_ms = 1
//!
//! [[content]]
//! prefix = "/doc"
//! producer = "P"
//! chunks = 1
//! packets_per_chunk = 2
//! packet_size = 100
//!
//! [[schedule]]
//! at_ms = 150
//! action = "fetch"
//! node = "A"
//! prefix = "/doc"
//! "#;
//! let out = simnet::run(&Scenario::from_toml_str(text).unwrap()).unwrap();
//! assert_eq!(out.report.discovered_paths[0].price, 4);
//! assert!(out.report.flows[0].completed());
//! ```

pub mod cli;
pub mod forwarding;
pub mod payment;
pub mod pof;
pub mod simnet;
pub mod tables;
pub mod time;
pub mod wire;

pub use forwarding::{Forwarder, NodeConfig};
pub use simnet::{run, Scenario};
pub use time::SimTime;
pub use wire::{Name, NodeAddr, Packet};
