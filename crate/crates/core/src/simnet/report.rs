//! Trace records and the metrics report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::forwarding::NodeCounters;

/// One line of the NDJSON event trace. Times are microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    Send {
        t: u64,
        node: String,
        to: String,
        kind: String,
        name: String,
        bytes: usize,
        broadcast: bool,
        arrive: u64,
    },
    Recv {
        t: u64,
        node: String,
        from: String,
        kind: String,
        name: String,
        sent: u64,
        latency_us: u64,
    },
    Lost {
        t: u64,
        node: String,
        to: String,
        kind: String,
        name: String,
        why: String,
    },
    Decision {
        t: u64,
        node: String,
        name: String,
        mode: String,
        action: String,
        named_next: Option<String>,
        named_next_alive: bool,
        enabled_hop: bool,
    },
    Path {
        t: u64,
        node: String,
        prefix: String,
        route: Vec<String>,
        price: u64,
    },
    Link {
        t: u64,
        a: String,
        b: String,
        up: bool,
    },
    NeighborDown {
        t: u64,
        node: String,
        neighbor: String,
        last_heard: u64,
    },
    NeighborUp {
        t: u64,
        node: String,
        neighbor: String,
    },
    Chunk {
        t: u64,
        node: String,
        prefix: String,
        chunk: u64,
        valid: bool,
        detail: String,
        signers: Vec<String>,
    },
    Flow {
        t: u64,
        node: String,
        prefix: String,
        event: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FibReport {
    pub prefix: String,
    pub next_hop: String,
    pub min_price: Option<u64>,
    pub enabled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NodeReport {
    pub addr: String,
    pub cost: u64,
    pub counters: NodeCounters,
    pub signatures_verified: u64,
    pub tokens_paid: u64,
    pub tokens_earned: u64,
    /// Settled account balance minus the starting balance.
    pub net_income: i64,
    pub fib: Vec<FibReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FlowReport {
    pub node: String,
    pub prefix: String,
    pub started_us: u64,
    pub completed_us: Option<u64>,
    pub latency_us: Option<u64>,
    pub chunks_total: u64,
    pub chunks_done: u64,
    pub packets_received: u64,
    pub retries: u64,
    pub invalid_chunks: u64,
    pub discoveries: u64,
    pub failed: Option<String>,
    pub last_route: Vec<String>,
}

impl FlowReport {
    pub fn completed(&self) -> bool {
        self.completed_us.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PathReport {
    pub node: String,
    pub prefix: String,
    pub route: Vec<String>,
    pub price: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LedgerReport {
    pub payment_mode: String,
    pub channels_opened: usize,
    pub updates: usize,
    pub settlements: usize,
    pub minted: u64,
    pub final_total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub events: u64,
    pub nodes: BTreeMap<String, NodeReport>,
    pub flows: Vec<FlowReport>,
    pub discovered_paths: Vec<PathReport>,
    pub mode_totals: BTreeMap<String, u64>,
    pub mode_transitions: BTreeMap<String, u64>,
    pub broadcasts_suppressed: u64,
    pub signatures_produced: u64,
    pub signatures_verified: u64,
    pub ledger: LedgerReport,
    pub violations: Vec<Violation>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
