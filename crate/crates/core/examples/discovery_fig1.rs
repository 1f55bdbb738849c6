//! Price-aware discovery on a three-node line, driven by hand.
//!
//! A floods a discovery Interest for /video. B rebroadcasts it, producer C
//! answers with its cost, and B adds its own cost on the way back, so A
//! learns route A, B, C at price 3 + 12.

use std::collections::VecDeque;

use r2p2::forwarding::{ContentSpec, Delivery, Emit, Forwarder, NoPayments, NodeConfig};
use r2p2::pof::KeyPair;
use r2p2::time::SimTime;
use r2p2::wire::{Name, NodeAddr, Packet};

fn main() {
    let a: NodeAddr = "00-14-00-00-00-0A".parse().unwrap();
    let b: NodeAddr = "00-40-00-00-00-0B".parse().unwrap();
    let c: NodeAddr = "00-30-00-00-00-0C".parse().unwrap();
    let prefix: Name = "/video".parse().unwrap();

    let spec = ContentSpec {
        prefix: prefix.clone(),
        chunks: 1,
        packets_per_chunk: 1,
        packet_size: 100,
    };
    let configs = [
        NodeConfig::new(a, 0),
        NodeConfig::new(b, 3),
        NodeConfig::new(c, 12).producing(spec),
    ];
    let mut nodes: Vec<Forwarder> = configs
        .into_iter()
        .map(|cfg| {
            let key = KeyPair::derive(cfg.addr, 1);
            Forwarder::new(cfg, key, 1)
        })
        .collect();
    let links = [(a, b), (b, c)];
    let neighbors = |x: NodeAddr| -> Vec<NodeAddr> {
        links
            .iter()
            .filter_map(|&(p, q)| {
                if p == x {
                    Some(q)
                } else if q == x {
                    Some(p)
                } else {
                    None
                }
            })
            .collect()
    };
    let now = SimTime::from_ms(10);
    for n in nodes.iter_mut() {
        for nb in neighbors(n.addr()) {
            n.on_keepalive(nb, SimTime::ZERO);
        }
    }

    let (out, _) = nodes[0].originate_discovery(&prefix, now);
    let mut queue = VecDeque::from([(a, out)]);
    while let Some((at, out)) = queue.pop_front() {
        for d in out.delivered {
            if let Delivery::Path { route, price, .. } = d {
                let hops: Vec<String> = route.iter().map(ToString::to_string).collect();
                println!("{at} learned path {} at price {price}", hops.join(" > "));
            }
        }
        for e in out.emits {
            let (targets, pkt): (Vec<NodeAddr>, Packet) = match e {
                Emit::Unicast { to, pkt } => (vec![to], pkt),
                Emit::Broadcast(pkt) => (neighbors(at), pkt),
            };
            for t in targets {
                println!("  {at} -> {t}: {} {}", pkt.kind(), pkt.name());
                let node = nodes.iter_mut().find(|n| n.addr() == t).unwrap();
                queue.push_back((t, node.handle(pkt.clone(), at, now, &mut NoPayments)));
            }
        }
    }
    println!("\nFIB at B:");
    for line in nodes[1].tables.dump("B").iter().filter(|l| l.contains("table=fib")) {
        println!("  {line}");
    }
}
