//! Scenario files: versioned TOML describing topology, content, defaults
//! and a timed schedule. See `docs/formats.md` for the schema.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forwarding::RelayMode;
use crate::wire::{Name, NodeAddr};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaymentMode {
    #[default]
    None,
    HopByHop,
    PayAll,
}

impl PaymentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PaymentMode::None => "none",
            PaymentMode::HopByHop => "hop_by_hop",
            PaymentMode::PayAll => "pay_all",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub keepalive_period_ms: u64,
    pub keepalive_timeout_ms: u64,
    pub window_capacity: usize,
    pub interest_lifetime_ms: u32,
    pub discovery_wait_ms: u64,
    pub rediscovery_interval_ms: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub payment_mode: PaymentMode,
    pub relay_mode: RelayMode,
    /// Link bandwidth; 0 means serialization is free.
    pub bandwidth_kbps: u64,
    pub account_balance: u64,
    pub channel_deposit: u64,
    pub cs_capacity_bytes: usize,
    pub assembly_timeout_ms: u64,
    pub broadcast_budget: u32,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            keepalive_period_ms: 100,
            keepalive_timeout_ms: 300,
            window_capacity: 8,
            interest_lifetime_ms: 300,
            discovery_wait_ms: 100,
            rediscovery_interval_ms: 100,
            max_retries: 5,
            retry_backoff_ms: 50,
            payment_mode: PaymentMode::None,
            relay_mode: RelayMode::CutThrough,
            bandwidth_kbps: 0,
            account_balance: 100_000,
            channel_deposit: 1_000,
            cs_capacity_bytes: 0,
            assembly_timeout_ms: 2_000,
            broadcast_budget: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub addr: NodeAddr,
    #[serde(default)]
    pub cost: u64,
    #[serde(default)]
    pub overcharge: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency_ms: u64,
    #[serde(default = "yes")]
    pub up: bool,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub bandwidth_kbps: Option<u64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentEntry {
    pub prefix: Name,
    pub producer: String,
    pub chunks: u64,
    pub packets_per_chunk: u32,
    pub packet_size: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleEntry {
    Fetch { at_ms: u64, node: String, prefix: Name },
    Discover { at_ms: u64, node: String, prefix: Name },
    LinkDown { at_ms: u64, a: String, b: String },
    LinkUp { at_ms: u64, a: String, b: String },
}

impl ScheduleEntry {
    pub fn at_ms(&self) -> u64 {
        match self {
            ScheduleEntry::Fetch { at_ms, .. }
            | ScheduleEntry::Discover { at_ms, .. }
            | ScheduleEntry::LinkDown { at_ms, .. }
            | ScheduleEntry::LinkUp { at_ms, .. } => *at_ms,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(rename = "link", default)]
    pub links: Vec<LinkSpec>,
    #[serde(rename = "content", default)]
    pub content: Vec<ContentEntry>,
    #[serde(rename = "schedule", default)]
    pub schedule: Vec<ScheduleEntry>,
}

/// Largest packet payload that still fits one TLV value with headers.
pub const MAX_PACKET_SIZE: u32 = 60_000;

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let s = Self::from_toml_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_by_addr(&self, addr: &NodeAddr) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.addr == *addr)
    }

    pub fn content(&self, prefix: &Name) -> Option<&ContentEntry> {
        self.content.iter().find(|c| c.prefix == *prefix)
    }

    /// Advertised per-node costs.
    pub fn price_directory(&self) -> BTreeMap<NodeAddr, u64> {
        self.nodes.iter().map(|n| (n.addr, n.cost)).collect()
    }

    pub fn has_link(&self, a: &str, b: &str) -> bool {
        self.links
            .iter()
            .any(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        if self.version != SCENARIO_VERSION {
            errs.push(format!(
                "unsupported version {} (expected {SCENARIO_VERSION})",
                self.version
            ));
        }
        if self.duration_ms == 0 {
            errs.push("duration_ms must be positive".into());
        }
        let d = &self.defaults;
        if d.keepalive_period_ms == 0 || d.keepalive_timeout_ms == 0 {
            errs.push("keep-alive period and timeout must be positive".into());
        }
        if d.window_capacity == 0 {
            errs.push("window_capacity must be positive".into());
        }
        if d.interest_lifetime_ms == 0 {
            errs.push("interest_lifetime_ms must be positive".into());
        }
        if d.rediscovery_interval_ms == 0 {
            errs.push("rediscovery_interval_ms must be positive".into());
        }
        if self.nodes.is_empty() {
            errs.push("scenario has no nodes".into());
        }
        let mut names = BTreeSet::new();
        let mut addrs = BTreeSet::new();
        for n in &self.nodes {
            if n.name.is_empty() {
                errs.push("node with empty name".into());
            }
            if !names.insert(n.name.as_str()) {
                errs.push(format!("duplicate node name `{}`", n.name));
            }
            if !addrs.insert(n.addr) {
                errs.push(format!("duplicate node address {}", n.addr));
            }
            if n.addr.is_broadcast() {
                errs.push(format!("node `{}` uses the broadcast address", n.name));
            }
        }
        let known = |x: &str, errs: &mut Vec<String>, ctx: &str| {
            if !names.contains(x) {
                errs.push(format!("{ctx} references unknown node `{x}`"));
            }
        };
        let mut pairs = BTreeSet::new();
        for l in &self.links {
            known(&l.a, &mut errs, "link");
            known(&l.b, &mut errs, "link");
            if l.a == l.b {
                errs.push(format!("self-link on `{}`", l.a));
            }
            if l.latency_ms == 0 {
                errs.push(format!("link {}–{} must have positive latency", l.a, l.b));
            }
            if !(0.0..1.0).contains(&l.drop_prob) {
                errs.push(format!("link {}–{} drop_prob must be in [0, 1)", l.a, l.b));
            }
            let key = if l.a < l.b { (&l.a, &l.b) } else { (&l.b, &l.a) };
            if !pairs.insert(key) {
                errs.push(format!("duplicate link {}–{}", l.a, l.b));
            }
        }
        let mut prefixes = BTreeSet::new();
        for c in &self.content {
            known(&c.producer, &mut errs, "content");
            if !prefixes.insert(&c.prefix) {
                errs.push(format!("duplicate content prefix {}", c.prefix));
            }
            if c.prefix.chunk_index.is_some() {
                errs.push(format!("content prefix {} must not carry a chunk index", c.prefix));
            }
            if c.chunks == 0 || c.packets_per_chunk == 0 {
                errs.push(format!("content {} needs at least one chunk and one packet", c.prefix));
            }
            if c.packet_size == 0 || c.packet_size > MAX_PACKET_SIZE {
                errs.push(format!(
                    "content {} packet_size must be in 1..={MAX_PACKET_SIZE}",
                    c.prefix
                ));
            }
        }
        for (i, s) in self.schedule.iter().enumerate() {
            let ctx = format!("schedule[{i}]");
            if s.at_ms() > self.duration_ms {
                errs.push(format!(
                    "{ctx} at {} ms is past duration {} ms",
                    s.at_ms(),
                    self.duration_ms
                ));
            }
            match s {
                ScheduleEntry::Fetch { node, prefix, .. } | ScheduleEntry::Discover { node, prefix, .. } => {
                    known(node, &mut errs, &ctx);
                    if self.content(prefix).is_none() {
                        errs.push(format!("{ctx} names unknown content {prefix}"));
                    }
                }
                ScheduleEntry::LinkDown { a, b, .. } | ScheduleEntry::LinkUp { a, b, .. } => {
                    known(a, &mut errs, &ctx);
                    known(b, &mut errs, &ctx);
                    if !self.has_link(a, b) {
                        errs.push(format!("{ctx} names missing link {a}–{b}"));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }
}
