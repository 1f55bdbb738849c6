//! Deterministic discrete-event simulator.
//!
//! Events run in `(time, seq)` order, where `seq` is assigned when the
//! event is scheduled. All randomness comes from one seeded generator, so
//! a scenario and seed fully determine the trace and the report.
//!
//! Links carry encoded packets with per-direction serialization delay plus
//! propagation latency. A unicast sent on a down link is silently lost;
//! keep-alive beacons are how nodes notice.

pub mod audit;
pub mod report;
pub mod scenario;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::forwarding::{
    Action, BroadcastPolicyKind, ContentSpec, DecisionRecord, Delivery, Emit, Forwarder, NodeConfig, Output,
    PaymentGate, RelayMode,
};
use crate::payment::{audit_log, LedgerRecord, PaymentError, PaymentNetwork};
use crate::pof::{verify_chain, ChainVerdict, ChunkAssembly, KeyDirectory, KeyPair};
use crate::tables::{Nonce, TableConfig};
use crate::time::SimTime;
use crate::wire::{self, ChannelId, Data, HopInfo, Interest, Nack, Name, NodeAddr, Packet, Payment, RouteStack};

pub use report::{FlowReport, MetricsReport, NodeReport, PathReport, TraceEvent, Violation};
pub use scenario::{PaymentMode, Scenario, ScenarioError, ScheduleEntry};

#[derive(Debug)]
enum AppTimer {
    DiscoveryDone { epoch: u64 },
    Timeout { epoch: u64, idx: u32, nonce: Nonce },
    Retry { epoch: u64, idx: u32 },
}

#[derive(Debug)]
enum EventKind {
    Tick(usize),
    KeepAlive {
        to: usize,
        from: usize,
    },
    Arrival {
        to: usize,
        from: usize,
        bytes: Vec<u8>,
        sent: SimTime,
        latency_us: u64,
    },
    Schedule(usize),
    App {
        flow: usize,
        timer: AppTimer,
    },
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug)]
struct LinkState {
    latency_us: u64,
    up: bool,
    drop_prob: f64,
    bandwidth_kbps: u64,
    /// Transmitter busy-until, indexed by direction (`from < to` is 1).
    busy: [SimTime; 2],
}

#[derive(Debug)]
struct Flow {
    node: usize,
    spec: ContentSpec,
    chunk: u64,
    epoch: u64,
    route: Vec<NodeAddr>,
    price: u64,
    received: BTreeMap<u32, Data>,
    outstanding: BTreeMap<u32, Option<Nonce>>,
    attempts: BTreeMap<u32, u32>,
    discovery_attempts: u32,
    done: bool,
    report: FlowReport,
}

/// Payment gate that opens channels on first use.
struct SimGate<'a> {
    pay: &'a mut PaymentNetwork,
    deposit: u64,
}

fn ensure_channel(
    pay: &mut PaymentNetwork,
    payer: NodeAddr,
    payee: NodeAddr,
    need: u64,
    deposit: u64,
) -> Result<ChannelId, PaymentError> {
    if let Some(ch) = pay.ledger.channel_between(payer, payee) {
        if ch.balance_a >= need {
            return Ok(ch.channel_id);
        }
    }
    Ok(pay.ledger.open_channel(payer, payee, deposit.max(need), 0)?.channel_id)
}

impl PaymentGate for SimGate<'_> {
    fn process(
        &mut self,
        me: NodeAddr,
        from: NodeAddr,
        incoming: &Payment,
        cost: u64,
        next: Option<NodeAddr>,
    ) -> Result<Option<Payment>, PaymentError> {
        if let Some(n) = next {
            ensure_channel(self.pay, me, n, incoming.amount.saturating_sub(cost), self.deposit)?;
        }
        self.pay.relay_process_payment(me, from, incoming, cost, next)
    }
}

/// Everything a run produces.
#[derive(Debug)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub trace: Vec<TraceEvent>,
    pub ledger_log: Vec<LedgerRecord>,
    /// Final table state of every node, one `key=value` record per line.
    pub state: Vec<String>,
}

impl SimOutput {
    pub fn trace_ndjson(&self) -> String {
        let mut s = String::new();
        for ev in &self.trace {
            s.push_str(&serde_json::to_string(ev).expect("trace serializes"));
            s.push('\n');
        }
        s
    }

    pub fn ledger_ndjson(&self) -> String {
        let mut s = String::new();
        for r in &self.ledger_log {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

pub struct Simulator {
    sc: Scenario,
    now: SimTime,
    seq: u64,
    events: u64,
    queue: BinaryHeap<Reverse<Event>>,
    nodes: Vec<Forwarder>,
    names: Vec<String>,
    index: BTreeMap<NodeAddr, usize>,
    links: BTreeMap<(usize, usize), LinkState>,
    adj: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    pay: PaymentNetwork,
    directory: KeyDirectory,
    flows: Vec<Flow>,
    trace: Vec<TraceEvent>,
    verified: Vec<u64>,
    paths: BTreeMap<(String, String, Vec<String>), u64>,
    app_queue: VecDeque<(usize, Delivery)>,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Validates and runs a scenario to its duration.
pub fn run(scenario: &Scenario) -> Result<SimOutput, ScenarioError> {
    scenario.validate()?;
    let mut sim = Simulator::new(scenario.clone());
    sim.run_to_end();
    Ok(sim.finish())
}

impl Simulator {
    pub fn new(sc: Scenario) -> Self {
        let d = sc.defaults.clone();
        let mut nodes = Vec::new();
        let mut names = Vec::new();
        let mut index = BTreeMap::new();
        let mut pay = PaymentNetwork::new();
        let mut directory = KeyDirectory::new();
        for (i, n) in sc.nodes.iter().enumerate() {
            let mut cfg = NodeConfig::new(n.addr, n.cost);
            cfg.overcharge = n.overcharge;
            cfg.broadcast_policy = BroadcastPolicyKind::Budget(d.broadcast_budget);
            cfg.relay_mode = d.relay_mode;
            cfg.rediscovery_interval_ms = d.rediscovery_interval_ms;
            cfg.assembly_timeout_ms = d.assembly_timeout_ms;
            cfg.tables = TableConfig {
                keepalive_period_ms: d.keepalive_period_ms,
                keepalive_timeout_ms: d.keepalive_timeout_ms,
                window_capacity: d.window_capacity,
                cs_capacity_bytes: d.cs_capacity_bytes,
            };
            for c in sc.content.iter().filter(|c| c.producer == n.name) {
                cfg.produces.push(ContentSpec {
                    prefix: c.prefix.clone(),
                    chunks: c.chunks,
                    packets_per_chunk: c.packets_per_chunk,
                    packet_size: c.packet_size,
                });
            }
            let key = KeyPair::derive(n.addr, sc.seed);
            directory.insert(n.addr, key.public());
            pay.add_party(key.clone(), d.account_balance);
            nodes.push(Forwarder::new(cfg, key, sc.seed));
            names.push(n.name.clone());
            index.insert(n.addr, i);
        }
        let by_name: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut links = BTreeMap::new();
        let mut adj = vec![Vec::new(); nodes.len()];
        for l in &sc.links {
            let (a, b) = (by_name[l.a.as_str()], by_name[l.b.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
            links.insert(
                ordered(a, b),
                LinkState {
                    latency_us: l.latency_ms * 1_000,
                    up: l.up,
                    drop_prob: l.drop_prob,
                    bandwidth_kbps: l.bandwidth_kbps.unwrap_or(d.bandwidth_kbps),
                    busy: [SimTime::ZERO; 2],
                },
            );
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        let n = nodes.len();
        let mut sim = Simulator {
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            sc,
            now: SimTime::ZERO,
            seq: 0,
            events: 0,
            queue: BinaryHeap::new(),
            nodes,
            names,
            index,
            links,
            adj,
            pay,
            directory,
            flows: Vec::new(),
            trace: Vec::new(),
            verified: vec![0; n],
            paths: BTreeMap::new(),
            app_queue: VecDeque::new(),
        };
        for i in 0..n {
            sim.schedule(SimTime::ZERO, EventKind::Tick(i));
        }
        for i in 0..sim.sc.schedule.len() {
            let at = SimTime::from_ms(sim.sc.schedule[i].at_ms());
            sim.schedule(at, EventKind::Schedule(i));
        }
        sim
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Processes events up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.time > until {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.events += 1;
            self.dispatch(ev.kind);
            self.drain_app();
        }
        self.now = self.now.max(until);
    }

    pub fn run_to_end(&mut self) {
        self.run_until(SimTime::from_ms(self.sc.duration_ms));
    }

    pub fn node(&self, name: &str) -> Option<&Forwarder> {
        self.names.iter().position(|n| n == name).map(|i| &self.nodes[i])
    }

    fn name_of(&self, addr: &NodeAddr) -> String {
        self.index
            .get(addr)
            .map_or_else(|| addr.to_string(), |i| self.names[*i].clone())
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Tick(i) => self.tick(i),
            EventKind::KeepAlive { to, from } => {
                if self.link_up(to, from) {
                    let from_addr = self.nodes[from].addr();
                    if self.nodes[to].on_keepalive(from_addr, self.now) {
                        self.trace.push(TraceEvent::NeighborUp {
                            t: self.now.as_us(),
                            node: self.names[to].clone(),
                            neighbor: self.names[from].clone(),
                        });
                    }
                }
            }
            EventKind::Arrival {
                to,
                from,
                bytes,
                sent,
                latency_us,
            } => self.arrive(to, from, &bytes, sent, latency_us),
            EventKind::Schedule(i) => self.scheduled(i),
            EventKind::App { flow, timer } => self.app_timer(flow, timer),
        }
    }

    fn link_up(&self, a: usize, b: usize) -> bool {
        self.links.get(&ordered(a, b)).is_some_and(|l| l.up)
    }

    fn tick(&mut self, i: usize) {
        let now = self.now;
        let neighbors = self.adj[i].clone();
        for nb in neighbors {
            let link = &self.links[&ordered(i, nb)];
            if link.up {
                let at = now + link.latency_us;
                self.schedule(at, EventKind::KeepAlive { to: nb, from: i });
            }
        }
        let last_heard: BTreeMap<NodeAddr, SimTime> = self.nodes[i]
            .tables
            .neighbors
            .iter()
            .map(|n| (n.neighbor, n.last_seen))
            .collect();
        for dead in self.nodes[i].on_tick(now) {
            self.trace.push(TraceEvent::NeighborDown {
                t: now.as_us(),
                node: self.names[i].clone(),
                neighbor: self.name_of(&dead),
                last_heard: last_heard.get(&dead).map_or(0, |t| t.as_us()),
            });
        }
        let period = self.sc.defaults.keepalive_period_ms;
        self.schedule(now.plus_ms(period), EventKind::Tick(i));
    }

    fn scheduled(&mut self, i: usize) {
        let entry = self.sc.schedule[i].clone();
        let idx = |s: &Self, n: &str| s.names.iter().position(|x| x == n).expect("validated");
        match entry {
            ScheduleEntry::Fetch { node, prefix, .. } => {
                let n = idx(self, &node);
                self.start_flow(n, &prefix);
            }
            ScheduleEntry::Discover { node, prefix, .. } => {
                let n = idx(self, &node);
                let (out, _) = self.nodes[n].originate_discovery(&prefix, self.now);
                self.process_output(n, out);
            }
            ScheduleEntry::LinkDown { a, b, .. } | ScheduleEntry::LinkUp { a, b, .. } => {
                let up = matches!(self.sc.schedule[i], ScheduleEntry::LinkUp { .. });
                let (x, y) = (idx(self, &a), idx(self, &b));
                if let Some(l) = self.links.get_mut(&ordered(x, y)) {
                    l.up = up;
                }
                self.trace.push(TraceEvent::Link {
                    t: self.now.as_us(),
                    a,
                    b,
                    up,
                });
            }
        }
    }

    fn lost(&mut self, from: usize, to: String, pkt: &Packet, why: &str) {
        self.trace.push(TraceEvent::Lost {
            t: self.now.as_us(),
            node: self.names[from].clone(),
            to,
            kind: pkt.kind().to_string(),
            name: pkt.name().to_string(),
            why: why.to_string(),
        });
    }

    fn transmit(&mut self, from: usize, to: usize, pkt: &Packet, broadcast: bool) {
        let bytes = match wire::encode(pkt) {
            Ok(b) => b,
            Err(_) => {
                let to_name = self.names[to].clone();
                self.lost(from, to_name, pkt, "encode");
                return;
            }
        };
        let key = ordered(from, to);
        let Some(link) = self.links.get(&key) else {
            let to_name = self.names[to].clone();
            self.lost(from, to_name, pkt, "no_link");
            return;
        };
        if !link.up {
            let to_name = self.names[to].clone();
            self.lost(from, to_name, pkt, "link_down");
            return;
        }
        let drop_prob = link.drop_prob;
        if drop_prob > 0.0 && self.rng.gen::<f64>() < drop_prob {
            let to_name = self.names[to].clone();
            self.lost(from, to_name, pkt, "drop");
            return;
        }
        let link = self.links.get_mut(&key).expect("checked");
        let tx_us = if link.bandwidth_kbps == 0 {
            0
        } else {
            (bytes.len() as u64 * 8 * 1_000).div_ceil(link.bandwidth_kbps)
        };
        let dir = usize::from(from < to);
        let start = self.now.max(link.busy[dir]);
        let done = start + tx_us;
        link.busy[dir] = done;
        let latency_us = link.latency_us;
        let arrive = done + latency_us;
        self.trace.push(TraceEvent::Send {
            t: self.now.as_us(),
            node: self.names[from].clone(),
            to: self.names[to].clone(),
            kind: pkt.kind().to_string(),
            name: pkt.name().to_string(),
            bytes: bytes.len(),
            broadcast,
            arrive: arrive.as_us(),
        });
        let sent = self.now;
        self.schedule(
            arrive,
            EventKind::Arrival {
                to,
                from,
                bytes,
                sent,
                latency_us,
            },
        );
    }

    fn arrive(&mut self, to: usize, from: usize, bytes: &[u8], sent: SimTime, latency_us: u64) {
        let pkt = match wire::decode(bytes) {
            Ok(p) => p,
            Err(_) => {
                self.trace.push(TraceEvent::Lost {
                    t: self.now.as_us(),
                    node: self.names[from].clone(),
                    to: self.names[to].clone(),
                    kind: "unknown".into(),
                    name: String::new(),
                    why: "decode".into(),
                });
                return;
            }
        };
        if !self.link_up(to, from) {
            let to_name = self.names[to].clone();
            self.lost(from, to_name, &pkt, "link_down_in_flight");
            return;
        }
        self.trace.push(TraceEvent::Recv {
            t: self.now.as_us(),
            node: self.names[to].clone(),
            from: self.names[from].clone(),
            kind: pkt.kind().to_string(),
            name: pkt.name().to_string(),
            sent: sent.as_us(),
            latency_us,
        });
        let from_addr = self.nodes[from].addr();
        let mut gate = SimGate {
            pay: &mut self.pay,
            deposit: self.sc.defaults.channel_deposit,
        };
        let out = self.nodes[to].handle(pkt, from_addr, self.now, &mut gate);
        self.process_output(to, out);
    }

    fn trace_decision(&mut self, node: usize, rec: DecisionRecord) {
        let action = match rec.decision.action {
            Action::ForwardUnicast(n) => format!("forward {}", self.name_of(&n)),
            Action::Broadcast => "broadcast".to_string(),
            Action::Nack(r) => format!("nack {}", r.as_str()),
            Action::Drop => "drop".to_string(),
        };
        self.trace.push(TraceEvent::Decision {
            t: self.now.as_us(),
            node: self.names[node].clone(),
            name: rec.name.to_string(),
            mode: rec.decision.mode.as_str().to_string(),
            action,
            named_next: rec.named_next.map(|n| self.name_of(&n)),
            named_next_alive: rec.named_next_alive,
            enabled_hop: rec.enabled_hop,
        });
    }

    fn process_output(&mut self, node: usize, out: Output) {
        if let Some(rec) = out.decision {
            self.trace_decision(node, rec);
        }
        for e in out.emits {
            match e {
                Emit::Unicast { to, pkt } => match self.index.get(&to) {
                    Some(&t) => self.transmit(node, t, &pkt, false),
                    None => self.lost(node, to.to_string(), &pkt, "unknown_node"),
                },
                Emit::Broadcast(pkt) => {
                    let neighbors = self.adj[node].clone();
                    for nb in neighbors {
                        if self.link_up(node, nb) {
                            self.transmit(node, nb, &pkt, true);
                        }
                    }
                }
            }
        }
        for d in out.delivered {
            self.app_queue.push_back((node, d));
        }
    }

    fn drain_app(&mut self) {
        while let Some((node, d)) = self.app_queue.pop_front() {
            match d {
                Delivery::Path { prefix, route, price } => {
                    let route: Vec<String> = route.iter().map(|a| self.name_of(a)).collect();
                    self.trace.push(TraceEvent::Path {
                        t: self.now.as_us(),
                        node: self.names[node].clone(),
                        prefix: prefix.to_string(),
                        route: route.clone(),
                        price,
                    });
                    self.paths
                        .insert((self.names[node].clone(), prefix.to_string(), route), price);
                }
                Delivery::Data(d) => self.flow_data(node, d),
                Delivery::Nack(n) => self.flow_nack(node, n),
            }
        }
    }

    fn flow_trace(&mut self, fi: usize, event: &str) {
        let f = &self.flows[fi];
        self.trace.push(TraceEvent::Flow {
            t: self.now.as_us(),
            node: self.names[f.node].clone(),
            prefix: f.spec.prefix.to_string(),
            event: event.to_string(),
        });
    }

    fn start_flow(&mut self, node: usize, prefix: &Name) {
        let c = self.sc.content(prefix).expect("validated").clone();
        let spec = ContentSpec {
            prefix: c.prefix.clone(),
            chunks: c.chunks,
            packets_per_chunk: c.packets_per_chunk,
            packet_size: c.packet_size,
        };
        let fi = self.flows.len();
        self.flows.push(Flow {
            node,
            chunk: 0,
            epoch: 0,
            route: Vec::new(),
            price: 0,
            received: BTreeMap::new(),
            outstanding: BTreeMap::new(),
            attempts: BTreeMap::new(),
            discovery_attempts: 0,
            done: false,
            report: FlowReport {
                node: self.names[node].clone(),
                prefix: prefix.to_string(),
                started_us: self.now.as_us(),
                chunks_total: spec.chunks,
                ..Default::default()
            },
            spec,
        });
        self.flow_trace(fi, "start");
        if self.nodes[node].paths.best(prefix).is_some() {
            self.start_chunk(fi);
        } else {
            self.start_discovery(fi);
        }
    }

    fn fail_flow(&mut self, fi: usize, why: String) {
        let f = &mut self.flows[fi];
        if f.done {
            return;
        }
        f.done = true;
        f.report.failed = Some(why);
        self.flow_trace(fi, "failed");
    }

    fn start_discovery(&mut self, fi: usize) {
        let max = self.sc.defaults.max_retries;
        let f = &mut self.flows[fi];
        f.discovery_attempts += 1;
        if f.discovery_attempts > max + 1 {
            self.fail_flow(fi, "no route discovered".into());
            return;
        }
        f.report.discoveries += 1;
        f.epoch += 1;
        let (node, epoch, prefix) = (f.node, f.epoch, f.spec.prefix.clone());
        let (out, _) = self.nodes[node].originate_discovery(&prefix, self.now);
        self.process_output(node, out);
        let at = self.now.plus_ms(self.sc.defaults.discovery_wait_ms);
        self.schedule(
            at,
            EventKind::App {
                flow: fi,
                timer: AppTimer::DiscoveryDone { epoch },
            },
        );
    }

    fn start_chunk(&mut self, fi: usize) {
        let node = self.flows[fi].node;
        let prefix = self.flows[fi].spec.prefix.clone();
        let Some(best) = self.nodes[node].paths.best(&prefix).cloned() else {
            self.start_discovery(fi);
            return;
        };
        let f = &mut self.flows[fi];
        f.discovery_attempts = 0;
        f.route = best.route;
        f.price = best.price;
        f.epoch += 1;
        f.received.clear();
        f.outstanding.clear();
        f.attempts.clear();
        for idx in 0..f.spec.packets_per_chunk {
            self.send_packet(fi, idx);
            if self.flows[fi].done {
                return;
            }
        }
    }

    fn send_packet(&mut self, fi: usize, idx: u32) {
        let node = self.flows[fi].node;
        let me = self.nodes[node].addr();
        let f = &self.flows[fi];
        let hops: Vec<NodeAddr> = f.route.iter().skip(1).copied().collect();
        let name = f.spec.prefix.segment(f.chunk, idx);
        let (price, epoch) = (f.price, f.epoch);
        let deposit = self.sc.defaults.channel_deposit;
        let payment = match (self.sc.defaults.payment_mode, hops.first()) {
            (PaymentMode::HopByHop, Some(first)) => ensure_channel(&mut self.pay, me, *first, price, deposit)
                .and_then(|_| self.pay.issue_payment(me, *first, price))
                .map(Some),
            (PaymentMode::PayAll, Some(_)) => {
                let costs: Vec<u64> = hops
                    .iter()
                    .map(|h| self.nodes[self.index[h]].config.forwarding_cost)
                    .collect();
                let mut res: Result<Option<Payment>, PaymentError> = Ok(None);
                for (h, c) in hops.iter().zip(&costs) {
                    if let Err(e) = ensure_channel(&mut self.pay, me, *h, *c, deposit) {
                        res = Err(e);
                        break;
                    }
                }
                res.and_then(|_| self.pay.consumer_pay_all(me, &hops, &costs).map(|_| None))
            }
            _ => Ok(None),
        };
        let payment = match payment {
            Ok(p) => p,
            Err(e) => {
                self.fail_flow(fi, format!("payment: {e}"));
                return;
            }
        };
        let nonce = self.nodes[node].fresh_nonce();
        let lifetime = self.sc.defaults.interest_lifetime_ms;
        let interest = Interest {
            name,
            nonce,
            hop_info: HopInfo {
                local: me,
                remote: hops.first().copied(),
            },
            route: (!hops.is_empty()).then(|| RouteStack::from_top_down(hops.clone())),
            payment,
            lifetime_ms: lifetime,
        };
        let f = &mut self.flows[fi];
        f.outstanding.insert(idx, Some(nonce));
        *f.attempts.entry(idx).or_insert(0) += 1;
        let at = self.now.plus_ms(u64::from(lifetime));
        self.schedule(
            at,
            EventKind::App {
                flow: fi,
                timer: AppTimer::Timeout { epoch, idx, nonce },
            },
        );
        let mut gate = SimGate {
            pay: &mut self.pay,
            deposit,
        };
        let out = self.nodes[node].originate_interest(interest, self.now, &mut gate);
        self.process_output(node, out);
    }

    fn find_flow(&self, node: usize, name: &Name) -> Option<usize> {
        let prefix = name.prefix();
        self.flows
            .iter()
            .position(|f| !f.done && f.node == node && f.spec.prefix == prefix)
    }

    fn retry(&mut self, fi: usize, idx: u32, delay_ms: u64) {
        let max = self.sc.defaults.max_retries;
        let f = &mut self.flows[fi];
        if f.attempts.get(&idx).copied().unwrap_or(0) > max {
            let why = format!("packet {idx} of chunk {} exhausted {max} retries", f.chunk);
            self.fail_flow(fi, why);
            return;
        }
        f.report.retries += 1;
        f.outstanding.insert(idx, None);
        let epoch = f.epoch;
        let at = self.now.plus_ms(delay_ms);
        self.schedule(
            at,
            EventKind::App {
                flow: fi,
                timer: AppTimer::Retry { epoch, idx },
            },
        );
    }

    fn app_timer(&mut self, fi: usize, timer: AppTimer) {
        if self.flows[fi].done {
            return;
        }
        let f = &self.flows[fi];
        match timer {
            AppTimer::DiscoveryDone { epoch } if epoch == f.epoch => self.start_chunk(fi),
            AppTimer::Timeout { epoch, idx, nonce }
                if epoch == f.epoch && f.outstanding.get(&idx) == Some(&Some(nonce)) =>
            {
                self.retry(fi, idx, 0)
            }
            AppTimer::Retry { epoch, idx } if epoch == f.epoch && !f.received.contains_key(&idx) => {
                self.send_packet(fi, idx)
            }
            _ => {}
        }
    }

    fn flow_nack(&mut self, node: usize, n: Nack) {
        let Some(fi) = self.find_flow(node, &n.name) else {
            return;
        };
        let f = &self.flows[fi];
        let Some(idx) = n.name.packet_index() else { return };
        if n.name.chunk_index != Some(f.chunk) || f.outstanding.get(&idx) != Some(&Some(n.nonce)) {
            return;
        }
        let backoff = self.sc.defaults.retry_backoff_ms;
        self.retry(fi, idx, backoff);
    }

    fn flow_data(&mut self, node: usize, d: Data) {
        let Some(fi) = self.find_flow(node, &d.name) else {
            return;
        };
        let f = &mut self.flows[fi];
        let Some(idx) = d.name.packet_index() else { return };
        if d.name.chunk_index != Some(f.chunk) || f.received.contains_key(&idx) {
            return;
        }
        f.outstanding.remove(&idx);
        f.received.insert(idx, d);
        f.report.packets_received += 1;
        if f.received.len() == f.spec.packets_per_chunk as usize {
            self.verify_chunk(fi);
        }
    }

    fn verify_chunk(&mut self, fi: usize) {
        let f = &self.flows[fi];
        let node = f.node;
        let mut asm = ChunkAssembly::new(f.spec.descriptor(f.chunk), SimTime(u64::MAX));
        for d in f.received.values() {
            asm.assemble(d, self.now);
        }
        let expected: Vec<NodeAddr> = if f.route.len() > 1 {
            f.route.iter().skip(1).rev().copied().collect()
        } else {
            f.route.clone()
        };
        let (verdict, signers) = match asm.to_signed_chunk() {
            Ok(chunk) => (
                verify_chain(&chunk, &expected, &self.directory),
                chunk.chain.iter().map(|l| self.name_of(&l.signer)).collect::<Vec<_>>(),
            ),
            Err(_) => (
                ChainVerdict::Invalid {
                    at: 0,
                    why: crate::pof::InvalidReason::MissingSigner,
                },
                Vec::new(),
            ),
        };
        let checked = match verdict {
            ChainVerdict::Valid => signers.len() as u64,
            ChainVerdict::Invalid { at, .. } => (at as u64 + 1).min(signers.len() as u64),
        };
        self.verified[node] += checked;
        let detail = match verdict {
            ChainVerdict::Valid => "valid".to_string(),
            ChainVerdict::Invalid { at, why } => format!("{why:?} at {at}"),
        };
        let f = &self.flows[fi];
        self.trace.push(TraceEvent::Chunk {
            t: self.now.as_us(),
            node: self.names[node].clone(),
            prefix: f.spec.prefix.to_string(),
            chunk: f.chunk,
            valid: verdict.is_valid(),
            detail,
            signers,
        });
        let f = &mut self.flows[fi];
        if verdict.is_valid() {
            f.report.chunks_done += 1;
            f.chunk += 1;
            if f.chunk == f.spec.chunks {
                f.done = true;
                f.report.completed_us = Some(self.now.as_us());
                f.report.latency_us = Some(self.now.as_us() - f.report.started_us);
                self.flow_trace(fi, "complete");
            } else {
                self.start_chunk(fi);
            }
            return;
        }
        f.report.invalid_chunks += 1;
        if f.report.invalid_chunks > u64::from(self.sc.defaults.max_retries) {
            self.fail_flow(fi, "too many invalid chunks".into());
            return;
        }
        let (prefix, route) = (f.spec.prefix.clone(), f.route.clone());
        let paths = &mut self.nodes[node].paths;
        paths.distrust(&prefix, &route);
        if paths.best(&prefix).is_none() {
            paths.clear(&prefix);
        }
        self.start_chunk(fi);
    }

    /// Settles the ledger, audits the trace and builds the report.
    pub fn finish(mut self) -> SimOutput {
        self.pay.ledger.settle_all().expect("latest states settle");
        let ledger_log = self.pay.ledger.log().to_vec();
        let mut violations = audit::audit(&self.sc, &self.trace, &ledger_log);
        let summary = audit_log(&ledger_log).unwrap_or_default();
        if self.pay.ledger.total_tokens() != self.pay.ledger.minted() {
            violations.push(Violation {
                rule: "token_conservation".into(),
                detail: "ledger total differs from minted".into(),
            });
        }

        let mut report = MetricsReport {
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            duration_ms: self.sc.duration_ms,
            events: self.events,
            ..Default::default()
        };
        let start_balance = self.sc.defaults.account_balance as i64;
        let mut state = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let addr = n.addr();
            let fib = n
                .tables
                .fib
                .entries()
                .flat_map(|e| {
                    e.next_hops.iter().map(|(hop, h)| report::FibReport {
                        prefix: e.prefix.to_string(),
                        next_hop: self.name_of(hop),
                        min_price: h.window.min(),
                        enabled: h.enabled,
                    })
                })
                .collect();
            let balance = self.pay.ledger.account(&addr).map_or(0, |a| a.balance) as i64;
            report.nodes.insert(
                self.names[i].clone(),
                NodeReport {
                    addr: addr.to_string(),
                    cost: n.config.forwarding_cost,
                    counters: n.counters.clone(),
                    signatures_verified: self.verified[i],
                    tokens_paid: self.pay.ledger.spent(&addr),
                    tokens_earned: self.pay.ledger.received(&addr),
                    net_income: balance - start_balance,
                    fib,
                },
            );
            for (k, v) in &n.counters.modes {
                *report.mode_totals.entry(k.clone()).or_insert(0) += v;
            }
            for (k, v) in &n.counters.mode_transitions {
                *report.mode_transitions.entry(k.clone()).or_insert(0) += v;
            }
            report.broadcasts_suppressed += n.counters.broadcasts_suppressed;
            report.signatures_produced += n.counters.signatures_produced;
            report.signatures_verified += self.verified[i];
            state.extend(n.tables.dump(&self.names[i]));
        }
        report.flows = self
            .flows
            .iter()
            .map(|f| {
                let mut r = f.report.clone();
                r.last_route = f.route.iter().map(|a| self.name_of(a)).collect();
                r
            })
            .collect();
        report.discovered_paths = self
            .paths
            .iter()
            .map(|((node, prefix, route), price)| PathReport {
                node: node.clone(),
                prefix: prefix.clone(),
                route: route.clone(),
                price: *price,
            })
            .collect();
        report.ledger = report::LedgerReport {
            payment_mode: self.sc.defaults.payment_mode.as_str().to_string(),
            channels_opened: summary.channels_opened,
            updates: summary.updates,
            settlements: summary.settlements,
            minted: summary.minted,
            final_total: summary.final_total,
        };
        report.violations = violations;
        SimOutput {
            report,
            trace: self.trace,
            ledger_log,
            state,
        }
    }
}

/// Relay hold measurement for one chunk size on a three-node line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct HoldSample {
    pub packets_per_chunk: u32,
    /// Largest per-packet hold at the relay in cut-through mode.
    pub cut_through_max_us: u64,
    /// Hold of the first packet at the relay in store-and-forward mode.
    pub store_forward_first_us: u64,
}

/// Line scenario A–B–C where C serves one chunk of `n` packets.
pub fn line_scenario(n: u32, packet_size: u32, bandwidth_kbps: u64, relay: RelayMode) -> Scenario {
    let text = format!(
        r#"
version = 1
name = "line-{n}"
seed = 11
duration_ms = 60000

[defaults]
bandwidth_kbps = {bandwidth_kbps}
interest_lifetime_ms = 30000
relay_mode = "{relay}"

[[node]]
name = "A"
addr = "00-14-00-00-00-01"

[[node]]
name = "B"
addr = "00-40-00-00-00-02"
cost = 1

[[node]]
name = "C"
addr = "00-30-00-00-00-03"
cost = 1

[[link]]
a = "A"
b = "B"
latency_ms = 1

[[link]]
a = "B"
b = "C"
latency_ms = 1

[[content]]
prefix = "/bench"
producer = "C"
chunks = 1
packets_per_chunk = {n}
packet_size = {packet_size}

[[schedule]]
at_ms = 50
action = "fetch"
node = "A"
prefix = "/bench"
"#,
        relay = match relay {
            RelayMode::CutThrough => "cut_through",
            RelayMode::StoreAndForward => "store_and_forward",
        }
    );
    Scenario::from_toml_str(&text).expect("generated scenario parses")
}

/// Runs the line scenario in both relay modes for each chunk size.
pub fn relay_hold_sweep(ns: &[u32], packet_size: u32, bandwidth_kbps: u64) -> Vec<HoldSample> {
    ns.iter()
        .map(|&n| {
            let hold = |mode| {
                let out = run(&line_scenario(n, packet_size, bandwidth_kbps, mode)).expect("valid");
                assert!(out.report.flows[0].completed(), "bench flow must complete");
                out.report.nodes["B"].counters.relay_hold_us_max
            };
            HoldSample {
                packets_per_chunk: n,
                cut_through_max_us: hold(RelayMode::CutThrough),
                store_forward_first_us: hold(RelayMode::StoreAndForward),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_order_by_time_then_seq() {
        let mut q = BinaryHeap::new();
        for (t, s) in [(5u64, 2u64), (5, 1), (1, 9), (7, 0)] {
            q.push(Reverse(Event {
                time: SimTime(t),
                seq: s,
                kind: EventKind::Tick(0),
            }));
        }
        let order: Vec<(u64, u64)> = std::iter::from_fn(|| q.pop().map(|Reverse(e)| (e.time.0, e.seq))).collect();
        assert_eq!(order, vec![(1, 9), (5, 1), (5, 2), (7, 0)]);
    }

    #[test]
    fn line_fetch_completes_and_is_deterministic() {
        let sc = line_scenario(4, 500, 1_000, RelayMode::CutThrough);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        assert!(a.report.flows[0].completed());
        assert!(a.report.violations.is_empty(), "{:?}", a.report.violations);
        assert_eq!(a.trace_ndjson(), b.trace_ndjson());
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.report.nodes["B"].counters.signatures_produced, 1);
        assert_eq!(a.report.nodes["A"].signatures_verified, 2);
    }

    #[test]
    fn empty_schedule_gives_zero_flow_counters() {
        let mut sc = line_scenario(1, 100, 0, RelayMode::CutThrough);
        sc.schedule.clear();
        sc.duration_ms = 500;
        let out = run(&sc).unwrap();
        assert!(out.report.flows.is_empty());
        for n in out.report.nodes.values() {
            assert_eq!(n.counters.interests_in + n.counters.data_in, 0);
        }
    }

    #[test]
    fn store_and_forward_hold_grows_with_chunk() {
        let s = relay_hold_sweep(&[1, 4], 500, 1_000);
        assert_eq!(s[0].store_forward_first_us, 0);
        assert!(s[1].store_forward_first_us > 0);
        assert_eq!(s[1].cut_through_max_us, 0);
    }
}
