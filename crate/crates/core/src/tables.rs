//! Per-node NDN state: PIT, price-aware FIB, neighbor liveness and a
//! byte-bounded LRU content store.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::time::SimTime;
use crate::wire::{Data, Name, NodeAddr};

pub type Nonce = [u8; 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PitInsert {
    New,
    Aggregated,
    DuplicateNonce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitDownstream {
    pub addr: NodeAddr,
    pub nonce: Nonce,
    pub expiry: SimTime,
}

#[derive(Debug, Clone)]
pub struct PitEntry {
    pub name: Name,
    pub downstreams: Vec<PitDownstream>,
    pub created: SimTime,
}

impl PitEntry {
    fn prune(&mut self, now: SimTime) {
        self.downstreams.retain(|d| now < d.expiry);
    }
}

#[derive(Debug, Default, Clone)]
pub struct Pit {
    entries: BTreeMap<Name, PitEntry>,
}

impl Pit {
    /// Records that `downstream` asked for `name`. The downstream expires at
    /// `expiry` (the Interest's lifetime).
    pub fn insert(
        &mut self,
        name: &Name,
        downstream: NodeAddr,
        nonce: Nonce,
        now: SimTime,
        expiry: SimTime,
    ) -> PitInsert {
        let fresh = PitDownstream {
            addr: downstream,
            nonce,
            expiry,
        };
        match self.entries.get_mut(name) {
            Some(entry) => {
                entry.prune(now);
                if entry.downstreams.is_empty() {
                    entry.created = now;
                    entry.downstreams.push(fresh);
                    return PitInsert::New;
                }
                if entry
                    .downstreams
                    .iter()
                    .any(|d| d.addr == downstream && d.nonce == nonce)
                {
                    return PitInsert::DuplicateNonce;
                }
                entry.downstreams.push(fresh);
                PitInsert::Aggregated
            }
            None => {
                self.entries.insert(
                    name.clone(),
                    PitEntry {
                        name: name.clone(),
                        downstreams: vec![fresh],
                        created: now,
                    },
                );
                PitInsert::New
            }
        }
    }

    /// Removes the entry and returns its live downstreams in insertion order.
    pub fn consume(&mut self, name: &Name, now: SimTime) -> Vec<(NodeAddr, Nonce)> {
        match self.entries.remove(name) {
            Some(mut e) => {
                e.prune(now);
                e.downstreams.into_iter().map(|d| (d.addr, d.nonce)).collect()
            }
            None => Vec::new(),
        }
    }

    /// Live downstreams without removing the entry. Route discovery replies
    /// use this so that several replies can travel back to the same requester.
    pub fn peek(&mut self, name: &Name, now: SimTime) -> Vec<(NodeAddr, Nonce)> {
        let Some(e) = self.entries.get_mut(name) else {
            return Vec::new();
        };
        e.prune(now);
        let out = e.downstreams.iter().map(|d| (d.addr, d.nonce)).collect();
        if e.downstreams.is_empty() {
            self.entries.remove(name);
        }
        out
    }

    /// Removes and returns the downstream waiting with `nonce`.
    pub fn take_nonce(&mut self, name: &Name, nonce: &Nonce, now: SimTime) -> Option<NodeAddr> {
        let e = self.entries.get_mut(name)?;
        e.prune(now);
        let pos = e.downstreams.iter().position(|d| d.nonce == *nonce);
        let out = pos.map(|p| e.downstreams.remove(p).addr);
        if e.downstreams.is_empty() {
            self.entries.remove(name);
        }
        out
    }

    pub fn contains(&self, name: &Name) -> bool {
        self.entries.contains_key(name)
    }

    pub fn purge(&mut self, now: SimTime) {
        self.entries.retain(|_, e| {
            e.prune(now);
            !e.downstreams.is_empty()
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PitEntry> {
        self.entries.values()
    }
}

/// Bounded FIFO of observed prices for one next hop.
#[derive(Debug, Clone)]
pub struct PriceWindow {
    samples: VecDeque<(u64, SimTime)>,
    capacity: usize,
}

impl PriceWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "price window capacity must be positive");
        PriceWindow {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, price: u64, observed: SimTime) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((price, observed));
    }

    pub fn min(&self) -> Option<u64> {
        self.samples.iter().map(|(p, _)| *p).min()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> impl Iterator<Item = &(u64, SimTime)> {
        self.samples.iter()
    }
}

#[derive(Debug, Clone)]
pub struct NextHop {
    pub window: PriceWindow,
    pub enabled: bool,
}

#[derive(Debug, Clone)]
pub struct FibEntry {
    pub prefix: Name,
    pub next_hops: BTreeMap<NodeAddr, NextHop>,
}

impl FibEntry {
    /// Cheapest enabled, sampled next hop. Ties go to the lower address.
    pub fn min_cost_hop(&self) -> Option<(NodeAddr, u64)> {
        let mut best: Option<(NodeAddr, u64)> = None;
        for (addr, hop) in &self.next_hops {
            if !hop.enabled {
                continue;
            }
            let Some(m) = hop.window.min() else { continue };
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((*addr, m));
            }
        }
        best
    }

    pub fn has_enabled_hop(&self) -> bool {
        self.next_hops.values().any(|h| h.enabled && !h.window.is_empty())
    }
}

#[derive(Debug, Clone)]
pub struct Fib {
    entries: BTreeMap<Name, FibEntry>,
    window_capacity: usize,
}

impl Fib {
    pub fn new(window_capacity: usize) -> Self {
        Fib {
            entries: BTreeMap::new(),
            window_capacity,
        }
    }

    /// Records `price` for `next_hop` under `prefix` and enables the hop.
    pub fn update(&mut self, prefix: &Name, next_hop: NodeAddr, price: u64, now: SimTime) {
        let cap = self.window_capacity;
        let entry = self.entries.entry(prefix.prefix()).or_insert_with(|| FibEntry {
            prefix: prefix.prefix(),
            next_hops: BTreeMap::new(),
        });
        let hop = entry.next_hops.entry(next_hop).or_insert_with(|| NextHop {
            window: PriceWindow::new(cap),
            enabled: true,
        });
        hop.window.push(price, now);
        hop.enabled = true;
    }

    /// Longest-prefix match of `name` (chunk/segment suffix stripped).
    pub fn lookup(&self, name: &Name) -> Option<&FibEntry> {
        let key = name.prefix();
        (1..=key.components.len()).rev().find_map(|n| {
            self.entries.get(&Name {
                components: key.components[..n].to_vec(),
                chunk_index: None,
            })
        })
    }

    pub fn get(&self, prefix: &Name) -> Option<&FibEntry> {
        self.entries.get(prefix)
    }

    pub fn min_cost_hop(&self, name: &Name) -> Option<(NodeAddr, u64)> {
        self.lookup(name).and_then(FibEntry::min_cost_hop)
    }

    pub fn has_enabled_hop(&self, name: &Name) -> bool {
        self.lookup(name).is_some_and(FibEntry::has_enabled_hop)
    }

    pub fn set_enabled(&mut self, neighbor: NodeAddr, enabled: bool) {
        for e in self.entries.values_mut() {
            if let Some(h) = e.next_hops.get_mut(&neighbor) {
                h.enabled = enabled;
            }
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &FibEntry> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLiveness {
    pub neighbor: NodeAddr,
    pub last_seen: SimTime,
    pub alive: bool,
}

#[derive(Debug, Clone)]
pub struct Neighbors {
    pub period_ms: u64,
    pub timeout_ms: u64,
    table: BTreeMap<NodeAddr, NeighborLiveness>,
}

impl Neighbors {
    pub fn new(period_ms: u64, timeout_ms: u64) -> Self {
        assert!(period_ms > 0 && timeout_ms > 0, "keep-alive timers must be positive");
        Neighbors {
            period_ms,
            timeout_ms,
            table: BTreeMap::new(),
        }
    }

    /// Returns true if the neighbor was previously unknown or dead.
    fn heard(&mut self, neighbor: NodeAddr, now: SimTime) -> bool {
        let entry = self.table.entry(neighbor).or_insert(NeighborLiveness {
            neighbor,
            last_seen: now,
            alive: false,
        });
        let revived = !entry.alive;
        entry.last_seen = now;
        entry.alive = true;
        revived
    }

    fn sweep(&mut self, now: SimTime) -> Vec<NodeAddr> {
        let timeout_us = self.timeout_ms * 1_000;
        let mut dead = Vec::new();
        for n in self.table.values_mut() {
            if n.alive && now.since(n.last_seen) >= timeout_us {
                n.alive = false;
                dead.push(n.neighbor);
            }
        }
        dead
    }

    pub fn is_alive(&self, neighbor: &NodeAddr) -> bool {
        self.table.get(neighbor).is_some_and(|n| n.alive)
    }

    pub fn get(&self, neighbor: &NodeAddr) -> Option<&NeighborLiveness> {
        self.table.get(neighbor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborLiveness> {
        self.table.values()
    }
}

/// Byte-bounded LRU store of content Data.
#[derive(Debug, Clone)]
pub struct ContentStore {
    capacity_bytes: usize,
    used_bytes: usize,
    clock: u64,
    entries: BTreeMap<Name, (Data, u64)>,
    recency: BTreeMap<u64, Name>,
}

impl ContentStore {
    pub fn new(capacity_bytes: usize) -> Self {
        ContentStore {
            capacity_bytes,
            used_bytes: 0,
            clock: 0,
            entries: BTreeMap::new(),
            recency: BTreeMap::new(),
        }
    }

    fn touch(&mut self, name: &Name) {
        self.clock += 1;
        if let Some((_, stamp)) = self.entries.get_mut(name) {
            self.recency.remove(stamp);
            *stamp = self.clock;
            self.recency.insert(self.clock, name.clone());
        }
    }

    pub fn lookup(&mut self, name: &Name) -> Option<Data> {
        if !self.entries.contains_key(name) {
            return None;
        }
        self.touch(name);
        self.entries.get(name).map(|(d, _)| d.clone())
    }

    /// Inserts, evicting least-recently-used entries as needed. Data larger
    /// than the whole store is not cached.
    pub fn insert(&mut self, data: Data) {
        let size = data.payload.len();
        if size > self.capacity_bytes {
            return;
        }
        if let Some((old, stamp)) = self.entries.remove(&data.name) {
            self.used_bytes -= old.payload.len();
            self.recency.remove(&stamp);
        }
        while self.used_bytes + size > self.capacity_bytes {
            let Some((_, victim)) = self.recency.pop_first() else {
                break;
            };
            if let Some((d, _)) = self.entries.remove(&victim) {
                self.used_bytes -= d.payload.len();
            }
        }
        self.clock += 1;
        self.used_bytes += size;
        self.recency.insert(self.clock, data.name.clone());
        self.entries.insert(data.name.clone(), (data, self.clock));
    }

    pub fn used_bytes(&self) -> usize {
        self.used_bytes
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &Name> {
        self.entries.keys()
    }
}

#[derive(Debug, Clone)]
pub struct TableConfig {
    pub keepalive_period_ms: u64,
    pub keepalive_timeout_ms: u64,
    pub window_capacity: usize,
    pub cs_capacity_bytes: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            keepalive_period_ms: 100,
            keepalive_timeout_ms: 300,
            window_capacity: 8,
            cs_capacity_bytes: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tables {
    pub pit: Pit,
    pub fib: Fib,
    pub neighbors: Neighbors,
    pub cs: ContentStore,
}

impl Tables {
    pub fn new(cfg: &TableConfig) -> Self {
        Tables {
            pit: Pit::default(),
            fib: Fib::new(cfg.window_capacity),
            neighbors: Neighbors::new(cfg.keepalive_period_ms, cfg.keepalive_timeout_ms),
            cs: ContentStore::new(cfg.cs_capacity_bytes),
        }
    }

    /// Returns true if this revived a dead or unknown neighbor.
    pub fn keepalive_heard(&mut self, neighbor: NodeAddr, now: SimTime) -> bool {
        let revived = self.neighbors.heard(neighbor, now);
        self.fib.set_enabled(neighbor, true);
        revived
    }

    /// Disables every FIB next hop via a neighbor whose keep-alive timed out
    /// and returns the newly dead neighbors.
    pub fn keepalive_sweep(&mut self, now: SimTime) -> Vec<NodeAddr> {
        let dead = self.neighbors.sweep(now);
        for n in &dead {
            self.fib.set_enabled(*n, false);
        }
        dead
    }

    /// One record per line, `key=value` fields; see `docs/formats.md`.
    pub fn dump(&self, node: &str) -> Vec<String> {
        let mut out = Vec::new();
        for e in self.pit.entries() {
            for d in &e.downstreams {
                out.push(format!(
                    "node={node} table=pit name={} downstream={} nonce={} expiry_us={}",
                    e.name,
                    d.addr,
                    hex::encode(d.nonce),
                    d.expiry.as_us()
                ));
            }
        }
        for e in self.fib.entries() {
            for (addr, hop) in &e.next_hops {
                let mut samples = String::new();
                for (i, (p, t)) in hop.window.samples().enumerate() {
                    if i > 0 {
                        samples.push(',');
                    }
                    let _ = write!(samples, "{p}@{}", t.as_us());
                }
                out.push(format!(
                    "node={node} table=fib prefix={} next_hop={addr} enabled={} min={} samples={samples}",
                    e.prefix,
                    hop.enabled,
                    hop.window.min().map_or("-".to_string(), |m| m.to_string()),
                ));
            }
        }
        for n in self.neighbors.iter() {
            out.push(format!(
                "node={node} table=neighbor addr={} last_seen_us={} alive={}",
                n.neighbor,
                n.last_seen.as_us(),
                n.alive
            ));
        }
        for name in self.cs.names() {
            out.push(format!("node={node} table=cs name={name}"));
        }
        out
    }
}
