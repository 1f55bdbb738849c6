//! Per-node forwarding engine.
//!
//! [`Forwarder`] is a pure event handler: each call takes a packet (or a
//! timer) plus the current time and returns the packets to emit, anything
//! delivered to the local application, and the strategy decision taken.
//!
//! Content Interests are forwarded by the first strategy that applies:
//! the source route, then the cheapest enabled FIB next hop, then a
//! round-robin rediscovery broadcast.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::payment::{PaymentError, PaymentNetwork};
use crate::pof::{sign_chunk, AssemblyStatus, ChunkAssembly, ChunkDescriptor, KeyPair, SignedChunk};
use crate::tables::{Nonce, PitInsert, TableConfig, Tables};
use crate::time::SimTime;
use crate::wire::{ChunkProof, Data, HopInfo, Interest, Nack, NackReason, Name, NodeAddr, Packet, Payment, RouteStack};

/// Content a producer serves: `chunks` groups of `packets_per_chunk`
/// packets of `packet_size` bytes under `prefix`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentSpec {
    pub prefix: Name,
    pub chunks: u64,
    pub packets_per_chunk: u32,
    pub packet_size: u32,
}

impl ContentSpec {
    pub fn descriptor(&self, chunk: u64) -> ChunkDescriptor {
        ChunkDescriptor::new(&self.prefix, chunk, self.packets_per_chunk, self.packet_size)
    }

    /// Deterministic filler content.
    pub fn packet_payload(&self, chunk: u64, index: u32) -> Vec<u8> {
        let base = chunk.wrapping_mul(131).wrapping_add(u64::from(index) * 31);
        (0..u64::from(self.packet_size))
            .map(|j| (base.wrapping_add(j) % 251) as u8)
            .collect()
    }

    pub fn chunk_payload(&self, chunk: u64) -> Vec<u8> {
        (0..self.packets_per_chunk)
            .flat_map(|i| self.packet_payload(chunk, i))
            .collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.chunks * u64::from(self.packets_per_chunk) * u64::from(self.packet_size)
    }

    pub fn contains(&self, name: &Name) -> bool {
        name.prefix() == self.prefix
            && name.chunk_index.is_some_and(|c| c < self.chunks)
            && name.packet_index().is_some_and(|i| i < self.packets_per_chunk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelayMode {
    /// Forward every packet on arrival; sign the group's final packet if
    /// the whole group has been seen.
    #[default]
    CutThrough,
    /// Hold a group's packets until it is complete, then release them.
    StoreAndForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "budget")]
pub enum BroadcastPolicyKind {
    /// Rebroadcast each discovery nonce at most `n` times.
    Budget(u32),
}

impl Default for BroadcastPolicyKind {
    fn default() -> Self {
        BroadcastPolicyKind::Budget(1)
    }
}

impl BroadcastPolicyKind {
    pub fn build(self) -> Box<dyn BroadcastPolicy> {
        match self {
            BroadcastPolicyKind::Budget(n) => Box::new(RebroadcastBudget::new(n)),
        }
    }
}

/// Decides whether a discovery Interest is rebroadcast.
pub trait BroadcastPolicy: fmt::Debug {
    fn should_rebroadcast(&mut self, name: &Name, nonce: &Nonce, now: SimTime) -> bool;
    fn purge(&mut self, now: SimTime);
}

#[derive(Debug, Clone)]
pub struct RebroadcastBudget {
    budget: u32,
    seen: BTreeMap<(Name, Nonce), (u32, SimTime)>,
}

const NONCE_MEMORY_MS: u64 = 5_000;

impl RebroadcastBudget {
    pub fn new(budget: u32) -> Self {
        RebroadcastBudget {
            budget,
            seen: BTreeMap::new(),
        }
    }
}

impl BroadcastPolicy for RebroadcastBudget {
    fn should_rebroadcast(&mut self, name: &Name, nonce: &Nonce, now: SimTime) -> bool {
        let slot = self
            .seen
            .entry((name.clone(), *nonce))
            .or_insert((0, now.plus_ms(NONCE_MEMORY_MS)));
        if slot.0 < self.budget {
            slot.0 += 1;
            true
        } else {
            false
        }
    }

    fn purge(&mut self, now: SimTime) {
        self.seen.retain(|_, (_, until)| now < *until);
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub addr: NodeAddr,
    /// Price of one Data delivery through this node.
    pub forwarding_cost: u64,
    /// Extra tokens kept from each payment beyond the advertised cost.
    pub overcharge: u64,
    pub produces: Vec<ContentSpec>,
    pub broadcast_policy: BroadcastPolicyKind,
    pub relay_mode: RelayMode,
    pub rediscovery_interval_ms: u64,
    pub discovery_lifetime_ms: u32,
    pub assembly_timeout_ms: u64,
    pub tables: TableConfig,
}

impl NodeConfig {
    pub fn new(addr: NodeAddr, forwarding_cost: u64) -> Self {
        NodeConfig {
            addr,
            forwarding_cost,
            overcharge: 0,
            produces: Vec::new(),
            broadcast_policy: BroadcastPolicyKind::default(),
            relay_mode: RelayMode::default(),
            rediscovery_interval_ms: 100,
            discovery_lifetime_ms: 1_000,
            assembly_timeout_ms: 2_000,
            tables: TableConfig::default(),
        }
    }

    pub fn producing(mut self, spec: ContentSpec) -> Self {
        self.produces.push(spec);
        self
    }

    pub fn producer_prefixes(&self) -> BTreeSet<Name> {
        self.produces.iter().map(|s| s.prefix.clone()).collect()
    }

    fn content_for(&self, name: &Name) -> Option<&ContentSpec> {
        let prefix = name.prefix();
        self.produces.iter().find(|s| s.prefix == prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SourceRouted,
    MinCost,
    Rediscovery,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SourceRouted => "source_routed",
            Mode::MinCost => "min_cost",
            Mode::Rediscovery => "rediscovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    ForwardUnicast(NodeAddr),
    Broadcast,
    Nack(NackReason),
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyDecision {
    pub action: Action,
    pub mode: Mode,
}

/// A strategy decision together with the table state it was based on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionRecord {
    pub name: Name,
    pub decision: StrategyDecision,
    pub named_next: Option<NodeAddr>,
    pub named_next_alive: bool,
    pub enabled_hop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Emit {
    Unicast { to: NodeAddr, pkt: Packet },
    Broadcast(Packet),
}

/// Something handed to the node's own application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Path {
        prefix: Name,
        route: Vec<NodeAddr>,
        price: u64,
    },
    Data(Data),
    Nack(Nack),
}

#[derive(Debug, Default)]
pub struct Output {
    pub emits: Vec<Emit>,
    pub delivered: Vec<Delivery>,
    pub decision: Option<DecisionRecord>,
    /// Relay hold time of each released content packet, in microseconds.
    pub holds_us: Vec<u64>,
}

impl Output {
    fn unicast(&mut self, to: NodeAddr, pkt: impl Into<Packet>) {
        self.emits.push(Emit::Unicast { to, pkt: pkt.into() });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    pub interests_in: u64,
    pub discovery_interests_in: u64,
    pub data_in: u64,
    pub discovery_data_in: u64,
    pub nacks_in: u64,
    pub interests_forwarded: u64,
    pub data_sent: u64,
    pub discovery_data_sent: u64,
    pub nacks_sent: u64,
    pub broadcasts: u64,
    pub broadcasts_suppressed: u64,
    pub rediscoveries: u64,
    pub drops: BTreeMap<String, u64>,
    pub modes: BTreeMap<String, u64>,
    pub mode_transitions: BTreeMap<String, u64>,
    pub signatures_produced: u64,
    pub unsigned_finals: u64,
    pub payments_rejected: u64,
    pub relay_held_packets: u64,
    pub relay_hold_us_total: u64,
    pub relay_hold_us_max: u64,
}

impl NodeCounters {
    fn drop(&mut self, reason: &str) {
        *self.drops.entry(reason.to_string()).or_insert(0) += 1;
    }
}

/// Payment processing hook used when a paid Interest is forwarded.
pub trait PaymentGate {
    /// Takes this hop's cost from `incoming` and returns the voucher for
    /// `next` (`None` when this node is the final recipient).
    fn process(
        &mut self,
        me: NodeAddr,
        from: NodeAddr,
        incoming: &Payment,
        cost: u64,
        next: Option<NodeAddr>,
    ) -> Result<Option<Payment>, PaymentError>;
}

/// Accepts every Interest and strips attached payments.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoPayments;

impl PaymentGate for NoPayments {
    fn process(
        &mut self,
        _: NodeAddr,
        _: NodeAddr,
        _: &Payment,
        _: u64,
        _: Option<NodeAddr>,
    ) -> Result<Option<Payment>, PaymentError> {
        Ok(None)
    }
}

impl PaymentGate for PaymentNetwork {
    fn process(
        &mut self,
        me: NodeAddr,
        from: NodeAddr,
        incoming: &Payment,
        cost: u64,
        next: Option<NodeAddr>,
    ) -> Result<Option<Payment>, PaymentError> {
        self.relay_process_payment(me, from, incoming, cost, next)
    }
}

/// Strict round-robin over flow names. New flows join at the tail.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    order: VecDeque<Name>,
}

impl RoundRobin {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn select(&mut self, pending: &[Name]) -> Option<Name> {
        for p in pending {
            if !self.order.contains(p) {
                self.order.push_back(p.clone());
            }
        }
        self.order.retain(|f| pending.contains(f));
        let chosen = self.order.pop_front()?;
        self.order.push_back(chosen.clone());
        Some(chosen)
    }
}

/// Stateless form of one selection step, for callers that keep their own
/// rotation.
pub fn rediscovery_select(rotation: &mut RoundRobin, pending: &[Name]) -> Option<Name> {
    rotation.select(pending)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredPath {
    /// Consumer first, producer last.
    pub route: Vec<NodeAddr>,
    pub price: u64,
    pub last_seen: SimTime,
    pub trusted: bool,
}

/// The consumer's `k` cheapest discovered paths per prefix.
#[derive(Debug, Clone)]
pub struct PathTable {
    k: usize,
    paths: BTreeMap<Name, Vec<DiscoveredPath>>,
}

impl PathTable {
    pub fn new(k: usize) -> Self {
        PathTable {
            k,
            paths: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, prefix: &Name, route: Vec<NodeAddr>, price: u64, now: SimTime) {
        let list = self.paths.entry(prefix.clone()).or_default();
        match list.iter_mut().find(|p| p.route == route) {
            Some(p) => {
                p.price = price;
                p.last_seen = now;
            }
            None => list.push(DiscoveredPath {
                route,
                price,
                last_seen: now,
                trusted: true,
            }),
        }
        list.sort_by(|a, b| (a.price, &a.route).cmp(&(b.price, &b.route)));
        list.truncate(self.k);
    }

    /// Cheapest trusted path.
    pub fn best(&self, prefix: &Name) -> Option<&DiscoveredPath> {
        self.paths.get(prefix)?.iter().find(|p| p.trusted)
    }

    pub fn distrust(&mut self, prefix: &Name, route: &[NodeAddr]) {
        if let Some(p) = self
            .paths
            .get_mut(prefix)
            .and_then(|l| l.iter_mut().find(|p| p.route == route))
        {
            p.trusted = false;
        }
    }

    pub fn clear(&mut self, prefix: &Name) {
        self.paths.remove(prefix);
    }

    pub fn paths(&self, prefix: &Name) -> &[DiscoveredPath] {
        self.paths.get(prefix).map_or(&[], Vec::as_slice)
    }

    pub fn all(&self) -> impl Iterator<Item = (&Name, &DiscoveredPath)> {
        self.paths.iter().flat_map(|(n, l)| l.iter().map(move |p| (n, p)))
    }
}

/// Discovery reply from a producer: downstream on top, producer beneath.
pub fn producer_answer_discovery(interest: &Interest, me: NodeAddr, downstream: NodeAddr, cost: u64) -> Data {
    Data {
        name: interest.name.clone(),
        payload: Vec::new(),
        hop_info: HopInfo {
            local: me,
            remote: Some(downstream),
        },
        route: Some(RouteStack::from_top_down(vec![downstream, me])),
        price: Some(cost),
        proof: None,
    }
}

#[derive(Debug)]
struct Held {
    data: Data,
    downstreams: Vec<NodeAddr>,
    arrived: SimTime,
}

const PRODUCER_CACHE: usize = 16;

#[derive(Debug)]
pub struct Forwarder {
    pub config: NodeConfig,
    pub tables: Tables,
    pub counters: NodeCounters,
    pub paths: PathTable,
    key: KeyPair,
    policy: Box<dyn BroadcastPolicy>,
    rng: ChaCha8Rng,
    assemblies: BTreeMap<Name, ChunkAssembly>,
    held: BTreeMap<Name, Vec<Held>>,
    produced: BTreeMap<Name, SignedChunk>,
    answered: BTreeMap<(Nonce, NodeAddr), SimTime>,
    rotation: RoundRobin,
    failing_flows: BTreeMap<Name, SimTime>,
    next_rediscovery: SimTime,
    last_mode: BTreeMap<Name, Mode>,
}

impl Forwarder {
    pub fn new(config: NodeConfig, key: KeyPair, seed: u64) -> Self {
        assert_eq!(key.owner, config.addr, "key owner must match node address");
        let mut addr_bits = [0u8; 8];
        addr_bits[2..].copy_from_slice(&config.addr.0);
        Forwarder {
            tables: Tables::new(&config.tables),
            counters: NodeCounters::default(),
            paths: PathTable::new(4),
            key,
            policy: config.broadcast_policy.build(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ u64::from_be_bytes(addr_bits)),
            assemblies: BTreeMap::new(),
            held: BTreeMap::new(),
            produced: BTreeMap::new(),
            answered: BTreeMap::new(),
            rotation: RoundRobin::new(),
            failing_flows: BTreeMap::new(),
            next_rediscovery: SimTime::ZERO,
            last_mode: BTreeMap::new(),
            config,
        }
    }

    pub fn addr(&self) -> NodeAddr {
        self.config.addr
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn fresh_nonce(&mut self) -> Nonce {
        let mut n = [0u8; 8];
        self.rng.fill_bytes(&mut n);
        n
    }

    fn cost(&self) -> u64 {
        self.config.forwarding_cost + self.config.overcharge
    }

    pub fn handle(&mut self, pkt: Packet, from: NodeAddr, now: SimTime, gate: &mut dyn PaymentGate) -> Output {
        match pkt {
            Packet::Interest(i) => self.on_interest(i, from, now, gate),
            Packet::Data(d) => self.on_data(d, from, now),
            Packet::Nack(n) => self.on_nack(n, from, now),
        }
    }

    pub fn on_keepalive(&mut self, from: NodeAddr, now: SimTime) -> bool {
        self.tables.keepalive_heard(from, now)
    }

    /// Periodic housekeeping. Returns neighbors that just timed out.
    pub fn on_tick(&mut self, now: SimTime) -> Vec<NodeAddr> {
        let dead = self.tables.keepalive_sweep(now);
        self.tables.pit.purge(now);
        self.policy.purge(now);
        self.answered.retain(|_, until| now < *until);
        let window = self.config.rediscovery_interval_ms * 2_000;
        self.failing_flows.retain(|_, t| now.since(*t) <= window);
        let mut expired = Vec::new();
        for (name, a) in self.assemblies.iter_mut() {
            if a.check_deadline(now) {
                expired.push(name.clone());
            }
        }
        for name in expired {
            self.assemblies.remove(&name);
            if let Some(h) = self.held.remove(&name) {
                for _ in h {
                    self.counters.drop("hold_expired");
                }
            }
        }
        dead
    }

    fn note_mode(&mut self, name: &Name, mode: Mode) {
        *self.counters.modes.entry(mode.as_str().to_string()).or_insert(0) += 1;
        let flow = name.prefix();
        if let Some(prev) = self.last_mode.insert(flow, mode) {
            if prev != mode {
                let key = format!("{}->{}", prev.as_str(), mode.as_str());
                *self.counters.mode_transitions.entry(key).or_insert(0) += 1;
            }
        }
    }

    fn nack(&mut self, out: &mut Output, to: NodeAddr, i: &Interest, reason: NackReason) {
        let nack = Nack {
            name: i.name.clone(),
            nonce: i.nonce,
            reason,
        };
        if to == self.addr() {
            out.delivered.push(Delivery::Nack(nack));
        } else {
            self.counters.nacks_sent += 1;
            out.unicast(to, nack);
        }
    }

    pub fn on_interest(&mut self, i: Interest, from: NodeAddr, now: SimTime, gate: &mut dyn PaymentGate) -> Output {
        if i.is_discovery() {
            self.counters.discovery_interests_in += 1;
            return self.on_discovery_interest(i, from, now);
        }
        self.counters.interests_in += 1;
        let mut out = Output::default();

        if self.config.content_for(&i.name).is_some() || self.tables.cs.lookup(&i.name).is_some() {
            self.satisfy_locally(&mut out, &i, from, now, gate);
            return out;
        }

        let mut route = i.route.clone().expect("content Interest carries a route");
        if route.top() != Some(self.addr()) {
            self.counters.drop("malformed_route");
            out.decision = Some(self.record(&i.name, Action::Drop, Mode::SourceRouted, None, false, false));
            return out;
        }
        let expiry = now.plus_ms(u64::from(i.lifetime_ms));
        if self.tables.pit.insert(&i.name, from, i.nonce, now, expiry) == PitInsert::DuplicateNonce {
            self.counters.drop("duplicate_nonce");
            out.decision = Some(self.record(&i.name, Action::Drop, Mode::SourceRouted, None, false, false));
            return out;
        }
        route.pop();
        self.route_content(&mut out, i, route, from, now, gate);
        out
    }

    fn record(
        &self,
        name: &Name,
        action: Action,
        mode: Mode,
        named_next: Option<NodeAddr>,
        named_next_alive: bool,
        enabled_hop: bool,
    ) -> DecisionRecord {
        DecisionRecord {
            name: name.clone(),
            decision: StrategyDecision { action, mode },
            named_next,
            named_next_alive,
            enabled_hop,
        }
    }

    /// Cheapest enabled FIB next hop for `name`, never back toward `from`.
    fn min_cost_hop(&self, name: &Name, from: NodeAddr) -> Option<NodeAddr> {
        let entry = self.tables.fib.lookup(name)?;
        let mut best: Option<(NodeAddr, u64)> = None;
        for (addr, hop) in &entry.next_hops {
            if !hop.enabled || *addr == from || *addr == self.addr() {
                continue;
            }
            let Some(m) = hop.window.min() else { continue };
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((*addr, m));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Strategy for a content Interest whose route has had this node popped.
    fn route_content(
        &mut self,
        out: &mut Output,
        i: Interest,
        mut route: RouteStack,
        from: NodeAddr,
        now: SimTime,
        gate: &mut dyn PaymentGate,
    ) {
        let named = route.top();
        let named_alive = named.is_some_and(|n| n != from && self.tables.neighbors.is_alive(&n));
        let fallback = self.min_cost_hop(&i.name, from);
        let (next, mode) = if named_alive {
            (named.expect("alive implies named"), Mode::SourceRouted)
        } else if let Some(hop) = fallback {
            match route.addrs.iter().position(|a| *a == hop) {
                Some(pos) => route.addrs.drain(..pos).for_each(drop),
                None if route.is_empty() => route.push(hop),
                None => route.addrs[0] = hop,
            }
            (hop, Mode::MinCost)
        } else {
            self.rediscover(out, &i, from, now, named);
            return;
        };
        let enabled = fallback.is_some();

        let payment = match &i.payment {
            None => None,
            Some(p) => match gate.process(self.addr(), from, p, self.cost(), Some(next)) {
                Ok(out_payment) => out_payment,
                Err(_) => {
                    self.counters.payments_rejected += 1;
                    self.tables.pit.take_nonce(&i.name, &i.nonce, now);
                    let reason = NackReason::InsufficientPayment;
                    self.nack(out, from, &i, reason);
                    out.decision = Some(self.record(&i.name, Action::Nack(reason), mode, named, named_alive, enabled));
                    self.note_mode(&i.name, mode);
                    return;
                }
            },
        };
        let fwd = Interest {
            hop_info: HopInfo {
                local: self.addr(),
                remote: Some(next),
            },
            route: Some(route),
            payment,
            ..i
        };
        self.counters.interests_forwarded += 1;
        out.decision = Some(self.record(
            &fwd.name,
            Action::ForwardUnicast(next),
            mode,
            named,
            named_alive,
            enabled,
        ));
        self.note_mode(&fwd.name, mode);
        out.unicast(next, fwd);
    }

    /// No enabled hop: give one failing flow per interval a fresh discovery
    /// broadcast and NACK the packet.
    fn rediscover(&mut self, out: &mut Output, i: &Interest, from: NodeAddr, now: SimTime, named: Option<NodeAddr>) {
        let flow = i.name.prefix();
        self.failing_flows.insert(flow.clone(), now);
        let mut action = Action::Nack(NackReason::NoRoute);
        if now >= self.next_rediscovery {
            self.next_rediscovery = now.plus_ms(self.config.rediscovery_interval_ms);
            let pending: Vec<Name> = self.failing_flows.keys().cloned().collect();
            if let Some(selected) = self.rotation.select(&pending) {
                self.counters.rediscoveries += 1;
                if selected == flow {
                    action = Action::Broadcast;
                }
                let (emitted, _) = self.originate_discovery(&selected, now);
                out.emits.extend(emitted.emits);
                out.delivered.extend(emitted.delivered);
            }
        }
        self.tables.pit.take_nonce(&i.name, &i.nonce, now);
        self.nack(out, from, i, NackReason::NoRoute);
        out.decision = Some(self.record(&i.name, action, Mode::Rediscovery, named, false, false));
        self.note_mode(&i.name, Mode::Rediscovery);
    }

    fn satisfy_locally(
        &mut self,
        out: &mut Output,
        i: &Interest,
        from: NodeAddr,
        now: SimTime,
        gate: &mut dyn PaymentGate,
    ) {
        if let Some(p) = &i.payment {
            if from != self.addr() {
                if let Err(_e) = gate.process(self.addr(), from, p, self.cost(), None) {
                    self.counters.payments_rejected += 1;
                    self.nack(out, from, i, NackReason::InsufficientPayment);
                    return;
                }
            }
        }
        let data = match self.tables.cs.lookup(&i.name) {
            Some(d) => Some(d),
            None => self.produce(&i.name),
        };
        let Some(mut data) = data else {
            self.nack(out, from, i, NackReason::NoRoute);
            return;
        };
        data.hop_info = HopInfo {
            local: self.addr(),
            remote: (from != self.addr()).then_some(from),
        };
        let _ = now;
        if from == self.addr() {
            out.delivered.push(Delivery::Data(data));
        } else {
            self.counters.data_sent += 1;
            out.unicast(from, data);
        }
    }

    /// Builds a content packet this node produces. The producer signs each
    /// chunk once; the signature rides in the group's final packet.
    fn produce(&mut self, name: &Name) -> Option<Data> {
        let spec = self.config.content_for(name)?.clone();
        if !spec.contains(name) {
            return None;
        }
        let chunk = name.chunk_index?;
        let index = name.packet_index()?;
        let desc = spec.descriptor(chunk);
        let proof = if index == desc.final_index() {
            let signed = match self.produced.get(&desc.name) {
                Some(s) => s.clone(),
                None => {
                    let s = sign_chunk(&SignedChunk::new(desc.clone(), spec.chunk_payload(chunk)), &self.key)
                        .expect("fresh chunk digest matches");
                    self.counters.signatures_produced += 1;
                    if self.produced.len() >= PRODUCER_CACHE {
                        self.produced.pop_first();
                    }
                    self.produced.insert(desc.name.clone(), s.clone());
                    s
                }
            };
            signed.proof()
        } else {
            ChunkProof {
                packet_count: desc.packet_count,
                digest: None,
                chain: Vec::new(),
            }
        };
        Some(Data {
            name: name.clone(),
            payload: spec.packet_payload(chunk, index),
            hop_info: HopInfo {
                local: self.addr(),
                remote: None,
            },
            route: None,
            price: None,
            proof: Some(proof),
        })
    }

    fn on_discovery_interest(&mut self, i: Interest, from: NodeAddr, now: SimTime) -> Output {
        let mut out = Output::default();
        if self.config.content_for(&i.name).is_some() {
            let until = now.plus_ms(NONCE_MEMORY_MS);
            if self.answered.insert((i.nonce, from), until).is_some() {
                self.counters.drop("duplicate_nonce");
                return out;
            }
            let reply = producer_answer_discovery(&i, self.addr(), from, self.config.forwarding_cost);
            self.counters.discovery_data_sent += 1;
            out.unicast(from, reply);
            return out;
        }
        let expiry = now.plus_ms(u64::from(i.lifetime_ms));
        if self.tables.pit.insert(&i.name, from, i.nonce, now, expiry) == PitInsert::DuplicateNonce {
            self.counters.drop("duplicate_nonce");
            return out;
        }
        if !self.policy.should_rebroadcast(&i.name, &i.nonce, now) {
            self.counters.broadcasts_suppressed += 1;
            return out;
        }
        self.counters.broadcasts += 1;
        out.emits.push(Emit::Broadcast(
            Interest {
                hop_info: HopInfo {
                    local: self.addr(),
                    remote: None,
                },
                ..i
            }
            .into(),
        ));
        out
    }

    /// Starts route discovery for `prefix` from this node. Returns the
    /// broadcast and the nonce used.
    pub fn originate_discovery(&mut self, prefix: &Name, now: SimTime) -> (Output, Nonce) {
        let mut out = Output::default();
        let nonce = self.fresh_nonce();
        if self.config.content_for(prefix).is_some() {
            self.paths.record(prefix, vec![self.addr()], 0, now);
            out.delivered.push(Delivery::Path {
                prefix: prefix.clone(),
                route: vec![self.addr()],
                price: 0,
            });
            return (out, nonce);
        }
        let lifetime = self.config.discovery_lifetime_ms;
        self.tables
            .pit
            .insert(prefix, self.addr(), nonce, now, now.plus_ms(u64::from(lifetime)));
        self.policy.should_rebroadcast(prefix, &nonce, now);
        self.counters.broadcasts += 1;
        out.emits.push(Emit::Broadcast(
            Interest {
                name: prefix.clone(),
                nonce,
                hop_info: HopInfo {
                    local: self.addr(),
                    remote: None,
                },
                route: None,
                payment: None,
                lifetime_ms: lifetime,
            }
            .into(),
        ));
        (out, nonce)
    }

    /// Sends a content Interest built by the local application. The route
    /// names the first hop on top; the payment, if any, is for that hop.
    pub fn originate_interest(&mut self, i: Interest, now: SimTime, gate: &mut dyn PaymentGate) -> Output {
        let mut out = Output::default();
        let me = self.addr();
        if self.config.content_for(&i.name).is_some() || self.tables.cs.lookup(&i.name).is_some() {
            self.satisfy_locally(&mut out, &i, me, now, gate);
            return out;
        }
        let Some(first) = i.route.as_ref().and_then(RouteStack::top) else {
            self.nack(&mut out, me, &i, NackReason::NoRoute);
            return out;
        };
        if !self.tables.neighbors.is_alive(&first) {
            self.nack(&mut out, me, &i, NackReason::NoRoute);
            out.decision = Some(self.record(
                &i.name,
                Action::Nack(NackReason::NoRoute),
                Mode::SourceRouted,
                Some(first),
                false,
                false,
            ));
            return out;
        }
        let expiry = now.plus_ms(u64::from(i.lifetime_ms));
        self.tables.pit.insert(&i.name, me, i.nonce, now, expiry);
        self.counters.interests_forwarded += 1;
        out.decision = Some(self.record(
            &i.name,
            Action::ForwardUnicast(first),
            Mode::SourceRouted,
            Some(first),
            true,
            false,
        ));
        self.note_mode(&i.name, Mode::SourceRouted);
        out.unicast(first, i);
        out
    }

    pub fn on_data(&mut self, d: Data, from: NodeAddr, now: SimTime) -> Output {
        if d.is_discovery() {
            self.counters.discovery_data_in += 1;
            return self.on_discovery_data(d, from, now);
        }
        self.counters.data_in += 1;
        let mut out = Output::default();
        let downs: Vec<NodeAddr> = self
            .tables
            .pit
            .consume(&d.name, now)
            .into_iter()
            .map(|(a, _)| a)
            .collect();
        if downs.is_empty() {
            self.counters.drop("unsolicited");
            return out;
        }
        self.tables.cs.insert(d.clone());
        let me = self.addr();
        let remote: Vec<NodeAddr> = downs.iter().copied().filter(|a| *a != me).collect();
        if downs.contains(&me) {
            out.delivered.push(Delivery::Data(d.clone()));
        }
        if remote.is_empty() {
            return out;
        }
        match (&d.proof, self.config.relay_mode) {
            (None, _) => self.send_data(&mut out, d, &remote),
            (Some(_), RelayMode::CutThrough) => {
                let d = self.relay_sign(d, now);
                self.send_data(&mut out, d, &remote);
                out.holds_us.push(0);
                self.note_hold(0);
            }
            (Some(_), RelayMode::StoreAndForward) => self.hold(&mut out, d, remote, now),
        }
        out
    }

    fn send_data(&mut self, out: &mut Output, d: Data, to: &[NodeAddr]) {
        for down in to {
            let mut copy = d.clone();
            copy.hop_info = HopInfo {
                local: self.addr(),
                remote: Some(*down),
            };
            self.counters.data_sent += 1;
            out.unicast(*down, copy);
        }
    }

    fn note_hold(&mut self, us: u64) {
        self.counters.relay_held_packets += 1;
        self.counters.relay_hold_us_total += us;
        self.counters.relay_hold_us_max = self.counters.relay_hold_us_max.max(us);
    }

    fn assembly_for(&mut self, d: &Data, now: SimTime) -> Option<Name> {
        let proof = d.proof.as_ref()?;
        let chunk = d.name.chunk_index?;
        let desc = ChunkDescriptor::new(&d.name.prefix(), chunk, proof.packet_count, d.payload.len() as u32);
        let key = desc.name.clone();
        let deadline = now.plus_ms(self.config.assembly_timeout_ms);
        let a = self
            .assemblies
            .entry(key.clone())
            .or_insert_with(|| ChunkAssembly::new(desc.clone(), deadline));
        if a.is_expired() || a.descriptor.packet_count != proof.packet_count {
            *a = ChunkAssembly::new(desc, deadline);
        }
        Some(key)
    }

    /// Cut-through: record the packet and, on the group's final packet,
    /// append this node's signature if every packet has been seen.
    fn relay_sign(&mut self, mut d: Data, now: SimTime) -> Data {
        let Some(key) = self.assembly_for(&d, now) else {
            return d;
        };
        let a = self.assemblies.get_mut(&key).expect("just inserted");
        a.assemble(&d, now);
        if d.name.packet_index() != Some(a.descriptor.final_index()) {
            return d;
        }
        match a.sign(&self.key) {
            Ok(signed) => {
                d.proof = Some(signed.proof());
                self.counters.signatures_produced += 1;
            }
            Err(_) => self.counters.unsigned_finals += 1,
        }
        self.assemblies.remove(&key);
        d
    }

    fn hold(&mut self, out: &mut Output, d: Data, downstreams: Vec<NodeAddr>, now: SimTime) {
        let Some(key) = self.assembly_for(&d, now) else {
            self.send_data(out, d, &downstreams);
            return;
        };
        let a = self.assemblies.get_mut(&key).expect("just inserted");
        let status = a.assemble(&d, now);
        self.held.entry(key.clone()).or_default().push(Held {
            data: d,
            downstreams,
            arrived: now,
        });
        if !matches!(status, AssemblyStatus::Complete(_)) {
            return;
        }
        let signed = a.sign(&self.key);
        let final_index = a.descriptor.final_index();
        self.assemblies.remove(&key);
        let mut held = self.held.remove(&key).unwrap_or_default();
        held.sort_by_key(|h| h.data.name.packet_index());
        match &signed {
            Ok(_) => self.counters.signatures_produced += 1,
            Err(_) => self.counters.unsigned_finals += 1,
        }
        let mut sent = BTreeSet::new();
        for mut h in held {
            if h.data.name.packet_index() == Some(final_index) {
                if let Ok(s) = &signed {
                    h.data.proof = Some(s.proof());
                }
            }
            let hold = now.since(h.arrived);
            out.holds_us.push(hold);
            self.note_hold(hold);
            let fresh: Vec<NodeAddr> = h
                .downstreams
                .iter()
                .copied()
                .filter(|down| sent.insert((h.data.name.clone(), *down)))
                .collect();
            self.send_data(out, h.data, &fresh);
        }
    }

    pub fn on_discovery_data(&mut self, d: Data, from: NodeAddr, now: SimTime) -> Output {
        let mut out = Output::default();
        let (Some(route), Some(price)) = (d.route.clone(), d.price) else {
            self.counters.drop("malformed_discovery");
            return out;
        };
        self.tables.fib.update(&d.name, from, price, now);
        if route.top() != Some(self.addr()) {
            self.counters.drop("route_mismatch");
            return out;
        }
        let downs = self.tables.pit.peek(&d.name, now);
        if downs.is_empty() {
            self.counters.drop("unsolicited");
            return out;
        }
        let me = self.addr();
        let mut seen = BTreeSet::new();
        for (down, _) in downs {
            if !seen.insert(down) {
                continue;
            }
            if down == me {
                self.paths.record(&d.name.prefix(), route.addrs.clone(), price, now);
                out.delivered.push(Delivery::Path {
                    prefix: d.name.prefix(),
                    route: route.addrs.clone(),
                    price,
                });
                continue;
            }
            if route.contains(&down) {
                self.counters.drop("loop_suppressed");
                continue;
            }
            let mut r = route.clone();
            r.push(down);
            let reply = Data {
                hop_info: HopInfo {
                    local: me,
                    remote: Some(down),
                },
                route: Some(r),
                price: Some(price + self.config.forwarding_cost),
                ..d.clone()
            };
            self.counters.discovery_data_sent += 1;
            out.unicast(down, reply);
        }
        out
    }

    pub fn on_nack(&mut self, n: Nack, _from: NodeAddr, now: SimTime) -> Output {
        self.counters.nacks_in += 1;
        let mut out = Output::default();
        match self.tables.pit.take_nonce(&n.name, &n.nonce, now) {
            Some(d) if d == self.addr() => out.delivered.push(Delivery::Nack(n)),
            Some(d) => {
                self.counters.nacks_sent += 1;
                out.unicast(d, n);
            }
            None => self.counters.drop("unsolicited"),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pof::{verify_chain, KeyDirectory};
    use proptest::prelude::*;

    fn name(s: &str) -> Name {
        s.parse().unwrap()
    }

    fn addr(s: &str) -> NodeAddr {
        s.parse().unwrap()
    }

    fn spec(prefix: &str, n: u32) -> ContentSpec {
        ContentSpec {
            prefix: name(prefix),
            chunks: 4,
            packets_per_chunk: n,
            packet_size: 64,
        }
    }

    /// Instant-delivery network for walking packet exchanges by hand.
    struct Net {
        nodes: BTreeMap<NodeAddr, Forwarder>,
        links: BTreeSet<(NodeAddr, NodeAddr)>,
        log: Vec<(NodeAddr, NodeAddr, Packet)>,
        delivered: Vec<(NodeAddr, Delivery)>,
        decisions: Vec<(NodeAddr, DecisionRecord)>,
    }

    impl Net {
        fn new(nodes: Vec<NodeConfig>, links: &[(NodeAddr, NodeAddr)]) -> Self {
            let nodes = nodes
                .into_iter()
                .map(|c| {
                    let k = KeyPair::derive(c.addr, 7);
                    (c.addr, Forwarder::new(c, k, 7))
                })
                .collect();
            let mut net = Net {
                nodes,
                links: BTreeSet::new(),
                log: Vec::new(),
                delivered: Vec::new(),
                decisions: Vec::new(),
            };
            for (a, b) in links {
                net.links.insert((*a, *b));
                net.links.insert((*b, *a));
            }
            let pairs: Vec<_> = net.links.iter().copied().collect();
            for (a, b) in pairs {
                net.nodes.get_mut(&a).unwrap().on_keepalive(b, SimTime::ZERO);
            }
            net
        }

        fn node(&mut self, a: NodeAddr) -> &mut Forwarder {
            self.nodes.get_mut(&a).unwrap()
        }

        fn neighbors(&self, a: NodeAddr) -> Vec<NodeAddr> {
            self.links.iter().filter(|(x, _)| *x == a).map(|(_, y)| *y).collect()
        }

        fn cut(&mut self, a: NodeAddr, b: NodeAddr) {
            self.links.remove(&(a, b));
            self.links.remove(&(b, a));
        }

        /// Delivers `out` and everything it causes, FIFO.
        fn run(&mut self, origin: NodeAddr, out: Output, now: SimTime) {
            let mut queue: VecDeque<(NodeAddr, Output)> = VecDeque::from([(origin, out)]);
            while let Some((at, out)) = queue.pop_front() {
                for d in out.delivered {
                    self.delivered.push((at, d));
                }
                if let Some(rec) = out.decision {
                    self.decisions.push((at, rec));
                }
                for e in out.emits {
                    let (targets, pkt) = match e {
                        Emit::Unicast { to, pkt } => (vec![to], pkt),
                        Emit::Broadcast(pkt) => (self.neighbors(at), pkt),
                    };
                    for to in targets {
                        if !self.links.contains(&(at, to)) {
                            continue;
                        }
                        self.log.push((at, to, pkt.clone()));
                        let next = self.node(to).handle(pkt.clone(), at, now, &mut NoPayments);
                        queue.push_back((to, next));
                    }
                }
            }
        }

        fn discover(&mut self, from: NodeAddr, prefix: &str, now: SimTime) {
            let (out, _) = self.node(from).originate_discovery(&name(prefix), now);
            self.run(from, out, now);
        }
    }

    const A: &str = "00-14-00-00-00-0A";
    const B: &str = "00-40-00-00-00-0B";
    const C: &str = "00-30-00-00-00-0C";

    fn fig1() -> Net {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        Net::new(
            vec![
                NodeConfig::new(a, 0),
                NodeConfig::new(b, 3),
                NodeConfig::new(c, 12).producing(spec("/video", 4)),
            ],
            &[(a, b), (b, c)],
        )
    }

    #[test]
    fn fig1_discovery_walk() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        net.discover(a, "/video", SimTime::from_ms(10));

        let Packet::Interest(first) = &net.log[0].2 else {
            panic!()
        };
        assert_eq!(first.hop_info, HopInfo { local: a, remote: None });
        let rebroadcast = net
            .log
            .iter()
            .find(|(from, to, p)| *from == b && *to == c && matches!(p, Packet::Interest(_)))
            .unwrap();
        let Packet::Interest(i) = &rebroadcast.2 else { panic!() };
        assert_eq!(i.hop_info.local, b);
        assert_eq!(i.hop_info.remote, None);

        let (_, _, Packet::Data(reply)) = net
            .log
            .iter()
            .find(|(f, _, p)| *f == c && matches!(p, Packet::Data(_)))
            .unwrap()
        else {
            panic!()
        };
        assert_eq!(reply.route.as_ref().unwrap().addrs, vec![b, c]);
        assert_eq!(reply.price, Some(12));

        let paths: Vec<_> = net
            .delivered
            .iter()
            .filter_map(|(at, d)| match d {
                Delivery::Path { route, price, .. } if *at == a => Some((route.clone(), *price)),
                _ => None,
            })
            .collect();
        assert_eq!(paths, vec![(vec![a, b, c], 15)]);
        assert_eq!(net.node(b).tables.fib.min_cost_hop(&name("/video")), Some((c, 12)));
        assert_eq!(net.node(a).tables.fib.min_cost_hop(&name("/video")), Some((b, 15)));
        assert_eq!(net.node(a).paths.best(&name("/video")).unwrap().price, 15);
    }

    #[test]
    fn zero_hop_path_is_producer_cost() {
        let (a, c) = (addr(A), addr(C));
        let mut net = Net::new(
            vec![
                NodeConfig::new(a, 0),
                NodeConfig::new(c, 12).producing(spec("/video", 4)),
            ],
            &[(a, c)],
        );
        net.discover(a, "/video", SimTime::ZERO);
        let p = net.node(a).paths.best(&name("/video")).unwrap().clone();
        assert_eq!((p.route, p.price), (vec![a, c], 12));
    }

    fn content_interest(n: &Forwarder, target: &Name, route: Vec<NodeAddr>) -> Interest {
        Interest {
            name: target.clone(),
            nonce: [9; 8],
            hop_info: HopInfo {
                local: n.addr(),
                remote: route.first().copied(),
            },
            route: Some(RouteStack::from_top_down(route)),
            payment: None,
            lifetime_ms: 300,
        }
    }

    #[test]
    fn source_routed_happy_path_and_delivery() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        let now = SimTime::from_ms(5);
        let target = name("/video").segment(0, 0);
        let i = content_interest(net.node(a), &target, vec![b, c]);
        let out = net.node(a).originate_interest(i, now, &mut NoPayments);
        net.run(a, out, now);
        let at_b = net.decisions.iter().find(|(n, _)| *n == b).unwrap();
        assert_eq!(
            at_b.1.decision,
            StrategyDecision {
                action: Action::ForwardUnicast(c),
                mode: Mode::SourceRouted
            }
        );
        assert!(net
            .delivered
            .iter()
            .any(|(at, d)| *at == a && matches!(d, Delivery::Data(d) if d.name == target)));
        for (_, _, p) in &net.log {
            if let Packet::Interest(i) = p {
                assert_eq!(i.hop_info.remote, i.route.as_ref().unwrap().top());
            }
        }
    }

    #[test]
    fn duplicate_nonce_dropped() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        let target = name("/video").segment(0, 0);
        let i = content_interest(net.node(a), &target, vec![b, c]);
        let now = SimTime::from_ms(1);
        let first = net.node(b).on_interest(i.clone(), a, now, &mut NoPayments);
        assert!(matches!(
            first.decision.unwrap().decision.action,
            Action::ForwardUnicast(_)
        ));
        let second = net.node(b).on_interest(i, a, now, &mut NoPayments);
        assert_eq!(second.decision.unwrap().decision.action, Action::Drop);
        assert!(second.emits.is_empty());
    }

    #[test]
    fn malformed_route_dropped() {
        let (a, c) = (addr(A), addr(C));
        let mut net = fig1();
        let target = name("/video").segment(0, 0);
        let i = content_interest(net.node(a), &target, vec![c]);
        let out = net.node(addr(B)).on_interest(i, a, SimTime::ZERO, &mut NoPayments);
        assert!(out.emits.is_empty());
        assert_eq!(net.node(addr(B)).counters.drops["malformed_route"], 1);
    }

    #[test]
    fn discovery_data_updates_fib_even_on_route_mismatch() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        let reply = Data {
            name: name("/video"),
            payload: vec![],
            hop_info: HopInfo {
                local: c,
                remote: Some(a),
            },
            route: Some(RouteStack::from_top_down(vec![a, c])),
            price: Some(12),
            proof: None,
        };
        let out = net.node(b).on_data(reply, c, SimTime::ZERO);
        assert!(out.emits.is_empty());
        assert_eq!(net.node(b).tables.fib.min_cost_hop(&name("/video")), Some((c, 12)));
        assert_eq!(net.node(b).counters.drops["route_mismatch"], 1);
    }

    const D: &str = "00-30-00-00-00-0D";
    const E: &str = "00-30-00-00-00-0E";

    /// A–B, B–C, B–E, C–D, E–D with producer D.
    fn diamond(cost_c: u64, cost_e: u64) -> Net {
        let (a, b, c, d, e) = (addr(A), addr(B), addr(C), addr(D), addr(E));
        Net::new(
            vec![
                NodeConfig::new(a, 0),
                NodeConfig::new(b, 2),
                NodeConfig::new(c, cost_c),
                NodeConfig::new(d, 3).producing(spec("/map", 4)),
                NodeConfig::new(e, cost_e),
            ],
            &[(a, b), (b, c), (b, e), (c, d), (e, d)],
        )
    }

    #[test]
    fn diamond_records_both_paths_cheapest_first() {
        let (a, b, c, d, e) = (addr(A), addr(B), addr(C), addr(D), addr(E));
        let mut net = diamond(1, 4);
        net.discover(a, "/map", SimTime::ZERO);
        let got: Vec<_> = net
            .node(a)
            .paths
            .paths(&name("/map"))
            .iter()
            .map(|p| (p.route.clone(), p.price))
            .collect();
        assert_eq!(got, vec![(vec![a, b, c, d], 6), (vec![a, b, e, d], 9)]);
    }

    #[test]
    fn diamond_falls_back_to_min_cost_when_named_hop_dies() {
        let (a, b, c, d, e) = (addr(A), addr(B), addr(C), addr(D), addr(E));
        let mut net = diamond(1, 1);
        net.discover(a, "/map", SimTime::ZERO);
        net.cut(b, c);
        let now = SimTime::from_ms(400);
        for x in [a, c, e] {
            net.node(b)
                .on_keepalive(x, SimTime::from_ms(if x == c { 0 } else { 350 }));
        }
        assert_eq!(net.node(b).on_tick(now), vec![c]);

        let target = name("/map").segment(1, 0);
        let i = content_interest(net.node(a), &target, vec![b, c, d]);
        let out = net.node(a).originate_interest(i, now, &mut NoPayments);
        net.run(a, out, now);
        // Oracle: C is named but dead, E is B's only other priced hop.
        let (_, rec) = net.decisions.iter().find(|(n, _)| *n == b).unwrap();
        assert_eq!(rec.decision.action, Action::ForwardUnicast(e));
        assert_eq!(rec.decision.mode, Mode::MinCost);
        assert!(!rec.named_next_alive);
        let Some((_, _, Packet::Interest(spliced))) = net
            .log
            .iter()
            .find(|(f, t, p)| *f == b && *t == e && matches!(p, Packet::Interest(i) if !i.is_discovery()))
        else {
            panic!()
        };
        assert_eq!(spliced.route.as_ref().unwrap().addrs, vec![e, d]);
        assert!(net
            .delivered
            .iter()
            .any(|(at, d)| *at == a && matches!(d, Delivery::Data(_))));
        assert_eq!(
            net.node(b).counters.mode_transitions.get("source_routed->min_cost"),
            None
        );
    }

    #[test]
    fn no_enabled_hop_triggers_rediscovery_and_nack() {
        let (a, b, c, e) = (addr(A), addr(B), addr(C), addr(E));
        let mut net = diamond(1, 1);
        net.discover(a, "/map", SimTime::ZERO);
        let now = SimTime::from_ms(500);
        net.node(b).on_keepalive(a, SimTime::from_ms(450));
        let dead = net.node(b).on_tick(now);
        assert_eq!(dead, vec![c, e]);
        let target = name("/map").segment(0, 1);
        let i = content_interest(net.node(a), &target, vec![b, c, addr(D)]);
        let out = net.node(b).on_interest(i, a, now, &mut NoPayments);
        let rec = out.decision.unwrap();
        assert_eq!(
            rec.decision,
            StrategyDecision {
                action: Action::Broadcast,
                mode: Mode::Rediscovery
            }
        );
        assert!(!rec.enabled_hop);
        assert!(out
            .emits
            .iter()
            .any(|e| matches!(e, Emit::Broadcast(Packet::Interest(i)) if i.is_discovery())));
        assert!(out.emits.iter().any(
            |e| matches!(e, Emit::Unicast { to, pkt: Packet::Nack(n) } if *to == a && n.reason == NackReason::NoRoute)
        ));
    }

    #[test]
    fn one_rediscovery_slot_per_interval() {
        let (a, b, c, e) = (addr(A), addr(B), addr(C), addr(E));
        let mut net = diamond(1, 1);
        net.discover(a, "/map", SimTime::ZERO);
        net.node(b).on_keepalive(a, SimTime::from_ms(450));
        net.node(b).on_tick(SimTime::from_ms(500));
        let _ = (c, e);
        let mut broadcasts = 0;
        for (k, ms) in [500u64, 520, 560, 610].into_iter().enumerate() {
            let target = name("/map").segment(0, k as u32);
            let mut i = content_interest(net.node(a), &target, vec![b, c]);
            i.nonce = [k as u8; 8];
            let out = net.node(b).on_interest(i, a, SimTime::from_ms(ms), &mut NoPayments);
            broadcasts += out.emits.iter().filter(|e| matches!(e, Emit::Broadcast(_))).count();
        }
        assert_eq!(broadcasts, 2);
    }

    #[test]
    fn round_robin_sequence() {
        let flows: Vec<Name> = ["/f1", "/f2", "/f3"].iter().map(|s| name(s)).collect();
        let mut rr = RoundRobin::new();
        let picks: Vec<Name> = (0..6).map(|_| rediscovery_select(&mut rr, &flows).unwrap()).collect();
        assert_eq!(picks, [flows.clone(), flows.clone()].concat());
        let mut solo = RoundRobin::new();
        assert_eq!(solo.select(&flows[..1]), Some(flows[0].clone()));
        assert_eq!(solo.select(&[]), None);
    }

    proptest! {
        /// Every pending flow is selected within |flows| rounds of joining,
        /// however flows arrive mid-rotation.
        #[test]
        fn round_robin_fairness(joins in proptest::collection::vec(0usize..12, 1..8)) {
            let mut rr = RoundRobin::new();
            let mut pending: Vec<Name> = Vec::new();
            let mut waiting: BTreeMap<Name, usize> = BTreeMap::new();
            for round in 0..40usize {
                for (f, at) in joins.iter().enumerate() {
                    if *at == round {
                        let n = name(&format!("/f{f}"));
                        if !pending.contains(&n) {
                            pending.push(n.clone());
                            waiting.insert(n, 0);
                        }
                    }
                }
                if pending.is_empty() {
                    continue;
                }
                let chosen = rr.select(&pending).unwrap();
                prop_assert!(pending.contains(&chosen));
                for (f, w) in waiting.iter_mut() {
                    if *f == chosen {
                        *w = 0;
                    } else {
                        *w += 1;
                        prop_assert!(*w < pending.len(), "flow {f} starved");
                    }
                }
            }
        }

        /// MinCost only when the named hop is dead, Rediscovery only when no
        /// hop is enabled.
        #[test]
        fn strategy_precedence(c_alive: bool, e_alive: bool, d_alive: bool) {
            let (a, b, c, d, e) = (addr(A), addr(B), addr(C), addr(D), addr(E));
            let mut net = diamond(1, 2);
            net.discover(a, "/map", SimTime::ZERO);
            let now = SimTime::from_ms(1_000);
            for (x, alive) in [(a, true), (c, c_alive), (e, e_alive), (d, d_alive)] {
                if alive {
                    net.node(b).on_keepalive(x, SimTime::from_ms(900));
                }
            }
            net.node(b).on_tick(now);
            let target = name("/map").segment(2, 0);
            let i = content_interest(net.node(a), &target, vec![b, c, d]);
            let rec = net.node(b).on_interest(i, a, now, &mut NoPayments).decision.unwrap();
            let expect = if c_alive {
                (Action::ForwardUnicast(c), Mode::SourceRouted)
            } else if e_alive {
                (Action::ForwardUnicast(e), Mode::MinCost)
            } else {
                (Action::Broadcast, Mode::Rediscovery)
            };
            prop_assert_eq!((rec.decision.action, rec.decision.mode), expect);
        }
    }

    #[test]
    fn reply_interleavings_all_give_sorted_table() {
        let (a, b, c, d, e) = (addr(A), addr(B), addr(C), addr(D), addr(E));
        let oracle = vec![(vec![a, b, e, d], 2 + 1 + 3), (vec![a, b, c, d], 2 + 5 + 3)];
        for order in [[c, e], [e, c]] {
            let mut net = diamond(5, 1);
            let (out, _) = net.node(a).originate_discovery(&name("/map"), SimTime::ZERO);
            let Emit::Broadcast(Packet::Interest(disc)) = &out.emits[0] else {
                panic!()
            };
            let disc = disc.clone();
            net.node(b).on_interest(disc.clone(), a, SimTime::ZERO, &mut NoPayments);
            for relay in order {
                let mut at_relay = disc.clone();
                at_relay.hop_info.local = b;
                net.node(relay)
                    .on_interest(at_relay.clone(), b, SimTime::ZERO, &mut NoPayments);
                at_relay.hop_info.local = relay;
                let reply = net.node(d).on_interest(at_relay, relay, SimTime::ZERO, &mut NoPayments);
                let Emit::Unicast {
                    pkt: Packet::Data(r), ..
                } = &reply.emits[0]
                else {
                    panic!()
                };
                let up = net.node(relay).on_data(r.clone(), d, SimTime::ZERO);
                let Emit::Unicast {
                    pkt: Packet::Data(r), ..
                } = &up.emits[0]
                else {
                    panic!()
                };
                let up = net.node(b).on_data(r.clone(), relay, SimTime::ZERO);
                let Emit::Unicast {
                    pkt: Packet::Data(r), ..
                } = &up.emits[0]
                else {
                    panic!()
                };
                net.node(a).on_data(r.clone(), b, SimTime::ZERO);
            }
            let got: Vec<_> = net
                .node(a)
                .paths
                .paths(&name("/map"))
                .iter()
                .map(|p| (p.route.clone(), p.price))
                .collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn insufficient_payment_nacked() {
        use crate::payment::PaymentNetwork;
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        let mut pay = PaymentNetwork::new();
        for x in [a, b, c] {
            pay.add_party(KeyPair::derive(x, 7), 1_000);
        }
        pay.ledger.open_channel(a, b, 100, 0).unwrap();
        pay.ledger.open_channel(b, c, 100, 0).unwrap();
        let target = name("/video").segment(0, 0);
        let mut i = content_interest(net.node(a), &target, vec![b, c]);
        i.payment = Some(pay.issue_payment(a, b, 2).unwrap());
        let out = net.node(b).on_interest(i.clone(), a, SimTime::ZERO, &mut pay);
        assert!(matches!(
            &out.emits[..],
            [Emit::Unicast { to, pkt: Packet::Nack(n) }] if *to == a && n.reason == NackReason::InsufficientPayment
        ));

        i.nonce = [1; 8];
        i.payment = Some(pay.issue_payment(a, b, 15).unwrap());
        let out = net.node(b).on_interest(i, a, SimTime::ZERO, &mut pay);
        let Emit::Unicast {
            pkt: Packet::Interest(fwd),
            ..
        } = &out.emits[0]
        else {
            panic!()
        };
        assert_eq!(fwd.payment.as_ref().unwrap().amount, 12);
        let out = net.node(c).on_interest(fwd.clone(), b, SimTime::ZERO, &mut pay);
        assert!(matches!(
            &out.emits[..],
            [Emit::Unicast {
                pkt: Packet::Data(_),
                ..
            }]
        ));
        assert_eq!(pay.ledger.received(&b), 15);
        assert_eq!(pay.ledger.received(&c), 12);
    }

    fn fetch_chunk(net: &mut Net, n: u32, route: Vec<NodeAddr>, chunk: u64) -> Vec<Data> {
        let a = addr(A);
        for idx in 0..n {
            let target = name("/video").segment(chunk, idx);
            let mut i = content_interest(net.node(a), &target, route.clone());
            i.nonce = [idx as u8, chunk as u8, 0, 0, 0, 0, 0, 1];
            let out = net.node(a).originate_interest(i, SimTime::from_ms(10), &mut NoPayments);
            net.run(a, out, SimTime::from_ms(10));
        }
        net.delivered
            .iter()
            .filter_map(|(at, d)| match d {
                Delivery::Data(d) if *at == a && d.name.chunk_index == Some(chunk) => Some(d.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn relays_chain_sign_complete_chunks() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        let got = fetch_chunk(&mut net, 4, vec![b, c], 0);
        assert_eq!(got.len(), 4);
        let mut asm = ChunkAssembly::new(spec("/video", 4).descriptor(0), SimTime::from_ms(100));
        for d in &got {
            asm.assemble(d, SimTime::ZERO);
        }
        let chunk = asm.to_signed_chunk().unwrap();
        let dir: KeyDirectory = [c, b].iter().map(|x| (*x, KeyPair::derive(*x, 7).public())).collect();
        assert_eq!(verify_chain(&chunk, &[c, b], &dir), crate::pof::ChainVerdict::Valid);
        assert_eq!(net.node(b).counters.signatures_produced, 1);
        assert_eq!(net.node(c).counters.signatures_produced, 1);
        assert_eq!(net.node(a).counters.signatures_produced, 0);
    }

    #[test]
    fn relay_forwards_final_unsigned_when_group_incomplete() {
        let (b, c) = (addr(B), addr(C));
        let mut net = fig1();
        let got = fetch_chunk(&mut net, 1, vec![b, c], 1);
        assert_eq!(got.len(), 1);
        let target = name("/video").segment(1, 3);
        let mut i = content_interest(net.node(addr(A)), &target, vec![b, c]);
        i.nonce = [77; 8];
        let out = net
            .node(addr(A))
            .originate_interest(i, SimTime::from_ms(10), &mut NoPayments);
        net.run(addr(A), out, SimTime::from_ms(10));
        assert_eq!(net.node(b).counters.unsigned_finals, 1);
        let last = net.delivered.last().unwrap();
        let Delivery::Data(d) = &last.1 else { panic!() };
        assert_eq!(d.proof.as_ref().unwrap().chain.len(), 1);
    }

    #[test]
    fn store_and_forward_holds_until_complete() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut cfg_b = NodeConfig::new(b, 3);
        cfg_b.relay_mode = RelayMode::StoreAndForward;
        let mut net = Net::new(
            vec![
                NodeConfig::new(a, 0),
                cfg_b,
                NodeConfig::new(c, 12).producing(spec("/video", 4)),
            ],
            &[(a, b), (b, c)],
        );
        let got = fetch_chunk(&mut net, 3, vec![b, c], 0);
        assert!(got.is_empty());
        let got = fetch_chunk(&mut net, 4, vec![b, c], 0);
        assert_eq!(got.len(), 4);
        assert_eq!(net.node(b).counters.signatures_produced, 1);
    }

    #[test]
    fn producer_local_fetch_served_without_forwarding() {
        let c = addr(C);
        let mut net = fig1();
        let target = name("/video").segment(0, 0);
        let i = Interest {
            name: target.clone(),
            nonce: [3; 8],
            hop_info: HopInfo { local: c, remote: None },
            route: None,
            payment: None,
            lifetime_ms: 100,
        };
        let out = net.node(c).originate_interest(i, SimTime::ZERO, &mut NoPayments);
        assert!(out.emits.is_empty());
        assert!(matches!(&out.delivered[..], [Delivery::Data(d)] if d.name == target));
    }

    #[test]
    fn content_data_is_never_broadcast() {
        let (a, b, c) = (addr(A), addr(B), addr(C));
        let mut net = fig1();
        net.discover(a, "/video", SimTime::ZERO);
        fetch_chunk(&mut net, 4, vec![b, c], 2);
        assert!(net
            .log
            .iter()
            .any(|(_, _, p)| matches!(p, Packet::Data(d) if !d.is_discovery())));
        for (from, to, p) in &net.log {
            if let Packet::Data(d) = p {
                assert_eq!(d.hop_info.remote, Some(*to), "{from}→{to}");
            }
        }
    }
}
