//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use r2p2::cli::bench_table;
use r2p2::payment::{channel_update, ChannelState, Ledger, LedgerRecord};
use r2p2::pof::{sign_chunk, verify_chain, ChunkDescriptor, KeyDirectory, KeyPair, SignedChunk};
use r2p2::simnet::{self, relay_hold_sweep, Scenario};
use r2p2::wire::{
    self, ChannelId, ChunkProof, Data, HopInfo, Interest, Nack, NackReason, Name, NodeAddr, Packet, Payment, RouteStack,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed_run(name: &str, limit: Duration) -> Result<(simnet::SimOutput, Duration), String> {
    let sc = scenario(name);
    let start = Instant::now();
    let out = simnet::run(&sc).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(took < limit, format!("{name} took {took:?}, limit {limit:?}"))?;
    ensure(
        out.report.violations.is_empty(),
        format!("{name} violations: {:?}", out.report.violations),
    )?;
    Ok((out, took))
}

fn c1_fig1() -> Outcome {
    let (out, took) = timed_run("fig1.scn", Duration::from_secs(1))?;
    let paths = &out.report.discovered_paths;
    ensure(paths.len() == 1, format!("expected one path, got {paths:?}"))?;
    ensure(paths[0].route == ["A", "B", "C"], format!("route {:?}", paths[0].route))?;
    ensure(paths[0].price == 12 + 3, format!("price {}", paths[0].price))?;
    let fib = &out.report.nodes["B"].fib;
    ensure(
        fib.iter()
            .any(|f| f.next_hop == "C" && f.enabled && f.min_price == Some(12)),
        format!("B fib {fib:?}"),
    )?;
    Ok(format!("path A>B>C price 15, B next hop C at 12, {took:.0?}"))
}

fn c2_fig6() -> Outcome {
    let sc = scenario("fig6.scn");
    let (out, took) = timed_run("fig6.scn", Duration::from_secs(1))?;
    ensure(out.report.flows.iter().all(|f| f.completed()), "fetch did not complete")?;
    // Replay the settled ledger: each party's income is its settled share
    // minus what it deposited, summed over channels.
    let mut opened: BTreeMap<u64, (String, String, u64, u64)> = BTreeMap::new();
    let mut income: BTreeMap<String, i64> = BTreeMap::new();
    for r in &out.ledger_log {
        match r {
            LedgerRecord::Open {
                channel,
                party_a,
                party_b,
                deposit_a,
                deposit_b,
            } => {
                opened.insert(*channel, (party_a.clone(), party_b.clone(), *deposit_a, *deposit_b));
            }
            LedgerRecord::Settle {
                channel,
                balance_a,
                balance_b,
                ..
            } => {
                let (a, b, da, db) = opened[channel].clone();
                *income.entry(a).or_default() += *balance_a as i64 - da as i64;
                *income.entry(b).or_default() += *balance_b as i64 - db as i64;
            }
            _ => {}
        }
    }
    let by_name = |n: &str| income.get(&sc.node(n).unwrap().addr.to_string()).copied().unwrap_or(0);
    let got = [by_name("A"), by_name("B"), by_name("C"), by_name("D")];
    ensure(got == [-10, 5, 2, 3], format!("incomes A,B,C,D = {got:?}"))?;
    Ok(format!(
        "consumer -10, relays +5 +2, producer +3 from settled ledger, {took:.0?}"
    ))
}

fn c3_diamond() -> Outcome {
    let (out, _) = timed_run("diamond.scn", Duration::from_secs(60))?;
    let r = &out.report;
    ensure(r.flows[0].completed(), format!("flow incomplete: {:?}", r.flows[0]))?;
    let seen: Vec<&str> = r.mode_transitions.keys().flat_map(|k| k.split("->")).collect();
    for m in ["source_routed", "min_cost", "rediscovery"] {
        ensure(
            seen.contains(&m),
            format!("{m} absent from transitions {:?}", r.mode_transitions),
        )?;
    }
    Ok(format!("transitions {:?}, flow complete", r.mode_transitions))
}

fn c4_pof_mutation() -> Outcome {
    let start = Instant::now();
    let keys: Vec<KeyPair> = (1..=3u8)
        .map(|i| KeyPair::derive(NodeAddr([0, 0x30, 0, 0, 0, i]), 4))
        .collect();
    let dir: KeyDirectory = keys.iter().map(|k| (k.owner, k.public())).collect();
    let path: Vec<NodeAddr> = keys.iter().map(|k| k.owner).collect();
    let prefix: Name = "/sweep".parse().unwrap();
    let payload: Vec<u8> = (0..4 * 400u32).map(|i| (i * 31 % 251) as u8).collect();
    let mut honest = SignedChunk::new(ChunkDescriptor::new(&prefix, 0, 4, 400), payload);
    for k in &keys {
        honest = sign_chunk(&honest, k).map_err(|e| e.to_string())?;
    }
    ensure(verify_chain(&honest, &path, &dir).is_valid(), "honest chunk rejected")?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mutations = 0u64;
    let mut false_valid = 0u64;
    let mut check = |c: &SignedChunk| {
        mutations += 1;
        if verify_chain(c, &path, &dir).is_valid() {
            false_valid += 1;
        }
    };
    let random_masks: Vec<u8> = (0..4096).map(|_| rng.gen_range(1..=255u8)).collect();
    let masks = |pos: usize| [0x01u8, 0x80, 0xFF, random_masks[pos % random_masks.len()]];
    for pos in 0..honest.payload.len() {
        for m in masks(pos) {
            let mut c = honest.clone();
            c.payload[pos] ^= m;
            check(&c);
        }
    }
    for pos in 0..32 {
        for m in masks(pos) {
            let mut c = honest.clone();
            c.digest[pos] ^= m;
            check(&c);
        }
    }
    for link in 0..honest.chain.len() {
        for pos in 0..6 + 32 + 64 {
            for m in masks(pos + link * 102) {
                let mut c = honest.clone();
                let l = &mut c.chain[link];
                match pos {
                    0..6 => l.signer.0[pos] ^= m,
                    6..38 => l.signer_pub[pos - 6] ^= m,
                    _ => l.sig[pos - 38] ^= m,
                }
                check(&c);
            }
        }
    }
    let took = start.elapsed();
    ensure(mutations >= 6_000, format!("only {mutations} mutations"))?;
    ensure(
        false_valid == 0,
        format!("{false_valid} of {mutations} mutations verified"),
    )?;
    ensure(took < Duration::from_secs(60), format!("sweep took {took:?}"))?;
    Ok(format!(
        "{mutations} mutations, 0 false valid, honest chunk valid, {took:.0?}"
    ))
}

fn c5_scalability() -> Outcome {
    let ns = [1u64, 4, 16, 64];
    // 1,536,000 bytes at 1500 bytes per packet is 1024 packets, divisible by every N.
    let rows = bench_table(1_536_000, 1_500, &ns, 3);
    let base = rows[0].signatures;
    ensure(base == 3 * 1024, format!("packet-level signatures {base}"))?;
    for (row, n) in rows[1..].iter().zip(ns) {
        ensure(
            row.signatures * n == base && row.verifications * n == rows[0].verifications,
            format!("{}: {} signatures, expected {}", row.mode, row.signatures, base / n),
        )?;
    }

    let sizes = [1u32, 4, 16, 64];
    let holds = relay_hold_sweep(&sizes, 1_000, 1_000);
    let tick = 1u64;
    let ct: Vec<u64> = holds.iter().map(|h| h.cut_through_max_us).collect();
    let ct_spread = ct.iter().max().unwrap() - ct.iter().min().unwrap();
    ensure(ct_spread <= tick, format!("cut-through holds {ct:?}"))?;
    let sf: Vec<u64> = holds.iter().map(|h| h.store_forward_first_us).collect();
    ensure(sf[0] <= tick, format!("single-packet store-and-forward hold {}", sf[0]))?;
    // Linear growth: a least-squares line through (N, hold) must fit every
    // point, and its slope must match one content packet's serialization
    // time on the 1000 kbps link (8 us per byte).
    let sample = Packet::Data(Data {
        name: "/bench".parse::<Name>().unwrap().segment(0, 10),
        payload: vec![0; 1_000],
        hop_info: HopInfo {
            local: NodeAddr([0, 0x40, 0, 0, 0, 2]),
            remote: Some(NodeAddr([0, 0x14, 0, 0, 0, 1])),
        },
        route: None,
        price: None,
        proof: None,
    });
    let tx_us = wire::encode(&sample).unwrap().len() as f64 * 8.0;
    let xs: Vec<f64> = sizes.iter().map(|&n| f64::from(n)).collect();
    let ys: Vec<f64> = sf.iter().map(|&h| h as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let intercept = my - slope * mx;
    let worst = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).abs())
        .fold(0.0, f64::max);
    ensure(
        worst <= 0.01 * ys[3],
        format!("store-and-forward holds {sf:?} deviate {worst:.0} us from a line"),
    )?;
    ensure(
        (slope - tx_us).abs() <= 0.02 * tx_us,
        format!("slope {slope:.0} us per packet, expected about {tx_us:.0}"),
    )?;
    let ratios: Vec<u64> = rows[1..].iter().map(|r| base / r.signatures).collect();
    Ok(format!(
        "signature reduction {ratios:?} for N={ns:?}; cut-through hold {ct:?} us; store-and-forward first-packet hold {sf:?} us, {slope:.0} us per packet"
    ))
}

fn c6_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let keys: Vec<KeyPair> = (1..=6u8)
        .map(|i| KeyPair::derive(NodeAddr([0, 0x14, 0, 0, 1, i]), 6))
        .collect();
    let mut ledger = Ledger::new();
    for k in &keys {
        ledger.register(k.owner, k.public(), 10_000);
    }
    let minted = ledger.minted();
    let key_of = |a: NodeAddr| keys.iter().find(|k| k.owner == a).unwrap();
    let mut history: BTreeMap<ChannelId, Vec<ChannelState>> = BTreeMap::new();
    let (mut stale_tried, mut stale_rejected, mut accepted) = (0u64, 0u64, 0u64);
    for op in 0..10_000 {
        let open_ids: Vec<ChannelId> = history.keys().copied().collect();
        match rng.gen_range(0..10) {
            0..=2 => {
                let a = rng.gen_range(0..keys.len());
                let b = (a + rng.gen_range(1..keys.len())) % keys.len();
                let (da, db) = (rng.gen_range(0..800), rng.gen_range(0..200));
                if let Ok(ch) = ledger.open_channel(keys[a].owner, keys[b].owner, da, db) {
                    history.insert(ch.channel_id, vec![ch]);
                    accepted += 1;
                }
            }
            3..=7 if !open_ids.is_empty() => {
                let id = open_ids[rng.gen_range(0..open_ids.len())];
                let cur = history[&id].last().unwrap().clone();
                let delta = rng.gen_range(0..=cur.balance_a + 5);
                if let Ok(next) = channel_update(&cur, delta, key_of(cur.party_a), key_of(cur.party_b)) {
                    if ledger.commit(&next).is_ok() {
                        history.get_mut(&id).unwrap().push(next);
                        accepted += 1;
                    }
                }
            }
            8 | 9 if !open_ids.is_empty() => {
                let id = open_ids[rng.gen_range(0..open_ids.len())];
                let states = history.remove(&id).unwrap();
                for stale in &states[..states.len() - 1] {
                    stale_tried += 1;
                    if ledger.settle(stale).is_err() {
                        stale_rejected += 1;
                    }
                }
                let latest = states.last().unwrap();
                ledger
                    .settle(latest)
                    .map_err(|e| format!("op {op}: latest state refused: {e}"))?;
                accepted += 1;
                for old in &states {
                    stale_tried += 1;
                    if ledger.settle(old).is_err() {
                        stale_rejected += 1;
                    }
                }
            }
            _ => {}
        }
        ensure(
            ledger.total_tokens() == minted,
            format!("op {op}: total {} != minted {minted}", ledger.total_tokens()),
        )?;
    }
    ensure(
        stale_tried > 0 && stale_rejected == stale_tried,
        format!("{stale_rejected}/{stale_tried} stale settlements rejected"),
    )?;
    Ok(format!(
        "10000 ops ({accepted} accepted), total fixed at {minted}, {stale_rejected}/{stale_tried} stale replays rejected"
    ))
}

fn c7_determinism() -> Outcome {
    let names = ["fig1.scn", "fig6.scn", "diamond.scn", "churn.scn", "mesh10.scn"];
    for name in names {
        let sc = scenario(name);
        let a = simnet::run(&sc).map_err(|e| e.to_string())?;
        let b = simnet::run(&sc).map_err(|e| e.to_string())?;
        ensure(a.trace_ndjson() == b.trace_ndjson(), format!("{name}: traces differ"))?;
        ensure(
            a.report.to_json() == b.report.to_json(),
            format!("{name}: reports differ"),
        )?;
        ensure(
            a.ledger_ndjson() == b.ledger_ndjson(),
            format!("{name}: ledgers differ"),
        )?;
    }
    Ok(format!("{} scenarios byte-identical across two runs", names.len()))
}

fn rand_addr(rng: &mut ChaCha8Rng) -> NodeAddr {
    loop {
        let a = NodeAddr(rng.gen());
        if !a.is_broadcast() {
            return a;
        }
    }
}

fn rand_bytes(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<u8> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| rng.gen()).collect()
}

fn rand_name(rng: &mut ChaCha8Rng) -> Name {
    Name {
        components: (0..rng.gen_range(1..=4)).map(|_| rand_bytes(rng, 1, 12)).collect(),
        chunk_index: rng.gen_bool(0.6).then(|| rng.gen()),
    }
}

fn rand_route(rng: &mut ChaCha8Rng) -> RouteStack {
    let mut addrs: Vec<NodeAddr> = Vec::new();
    for _ in 0..rng.gen_range(1..=5) {
        let mut a = rand_addr(rng);
        while addrs.last() == Some(&a) {
            a = rand_addr(rng);
        }
        addrs.push(a);
    }
    RouteStack::from_top_down(addrs)
}

fn rand_hop(rng: &mut ChaCha8Rng, remote: Option<NodeAddr>) -> HopInfo {
    let mut local = rand_addr(rng);
    while Some(local) == remote {
        local = rand_addr(rng);
    }
    HopInfo { local, remote }
}

fn rand_packet(rng: &mut ChaCha8Rng) -> Packet {
    match rng.gen_range(0..5) {
        0 | 1 => {
            let route = rng.gen_bool(0.7).then(|| rand_route(rng));
            let remote = route.as_ref().and_then(|r| r.top());
            Packet::Interest(Interest {
                name: rand_name(rng),
                nonce: rng.gen(),
                hop_info: rand_hop(rng, remote),
                route,
                payment: rng.gen_bool(0.5).then(|| Payment {
                    channel_id: ChannelId(rng.gen()),
                    amount: rng.gen(),
                    sequence: rng.gen(),
                    payer_sig: rand_bytes(rng, 0, 64),
                }),
                lifetime_ms: rng.gen_range(1..=u32::MAX),
            })
        }
        2 | 3 => {
            let discovery = rng.gen_bool(0.4);
            let remote = rng.gen_bool(0.5).then(|| rand_addr(rng));
            Packet::Data(Data {
                name: rand_name(rng),
                payload: rand_bytes(rng, 0, 200),
                hop_info: rand_hop(rng, remote),
                route: discovery.then(|| rand_route(rng)),
                price: discovery.then(|| rng.gen()),
                proof: (!discovery && rng.gen_bool(0.6)).then(|| ChunkProof {
                    packet_count: rng.gen_range(1..=u32::MAX),
                    digest: rng.gen_bool(0.5).then(|| rng.gen()),
                    chain: (0..rng.gen_range(0..=3))
                        .map(|_| r2p2::pof::HopSignature {
                            signer: rand_addr(rng),
                            signer_pub: rng.gen(),
                            sig: {
                                let mut s = [0u8; 64];
                                rng.fill(&mut s[..]);
                                s
                            },
                        })
                        .collect(),
                }),
            })
        }
        _ => Packet::Nack(Nack {
            name: rand_name(rng),
            nonce: rng.gen(),
            reason: [
                NackReason::NoRoute,
                NackReason::InsufficientPayment,
                NackReason::Duplicate,
                NackReason::Expired,
            ][rng.gen_range(0..4)],
        }),
    }
}

fn c8_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let total = 100_000u64;
    let (mut decoded_mutants, mut panics) = (0u64, 0u64);
    for i in 0..total {
        let pkt = rand_packet(&mut rng);
        let bytes = wire::encode(&pkt).map_err(|e| format!("packet {i}: encode failed: {e}"))?;
        let back = wire::decode(&bytes).map_err(|e| format!("packet {i}: decode failed: {e}"))?;
        ensure(back == pkt, format!("packet {i}: round trip changed the packet"))?;

        let mut mutant = bytes.clone();
        let pos = rng.gen_range(0..mutant.len());
        mutant[pos] ^= rng.gen_range(1..=255u8);
        let garbage = rand_bytes(&mut rng, 0, 64);
        for input in [&mutant, &garbage] {
            match catch_unwind(AssertUnwindSafe(|| wire::decode(input))) {
                Err(_) => panics += 1,
                Ok(Ok(p)) => {
                    decoded_mutants += 1;
                    let again = wire::encode(&p).map_err(|e| format!("packet {i}: decoded mutant re-encode: {e}"))?;
                    ensure(&again == input, format!("packet {i}: non-canonical mutant accepted"))?;
                }
                Ok(Err(_)) => {}
            }
        }
    }
    ensure(panics == 0, format!("{panics} decoder panics"))?;
    Ok(format!(
        "{total} packets round-trip canonically; {} fuzz inputs, 0 panics, {decoded_mutants} accepted mutants re-encode identically",
        2 * total
    ))
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 8] = [
        ("fig1-discovery", c1_fig1),
        ("fig6-payment-split", c2_fig6),
        ("hybrid-strategy-coverage", c3_diamond),
        ("pof-soundness", c4_pof_mutation),
        ("pof-scalability", c5_scalability),
        ("token-conservation", c6_conservation),
        ("determinism", c7_determinism),
        ("codec", c8_codec),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_string()));
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
