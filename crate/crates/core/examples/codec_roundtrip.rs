//! Encodes a source-routed Interest, decodes it back and shows how the
//! strict decoder reports damaged input.

use r2p2::wire::{self, HopInfo, Interest, Name, NodeAddr, Packet, RouteStack};

fn main() {
    let a: NodeAddr = "00-14-00-00-00-0A".parse().unwrap();
    let b: NodeAddr = "00-40-00-00-00-0B".parse().unwrap();
    let c: NodeAddr = "00-30-00-00-00-0C".parse().unwrap();
    let pkt = Packet::Interest(Interest {
        name: "/video".parse::<Name>().unwrap().segment(0, 3),
        nonce: *b"r2p2demo",
        hop_info: HopInfo {
            local: a,
            remote: Some(b),
        },
        route: Some(RouteStack::from_top_down(vec![b, c])),
        payment: None,
        lifetime_ms: 300,
    });
    let bytes = wire::encode(&pkt).unwrap();
    println!("{} bytes: {}", bytes.len(), hex::encode(&bytes));
    let back = wire::decode(&bytes).unwrap();
    assert_eq!(back, pkt);
    println!("decoded {} {}", back.kind(), back.name());

    println!("truncated: {}", wire::decode(&bytes[..bytes.len() - 2]).unwrap_err());
    let mut bad = bytes.clone();
    bad[0] = 0x7F;
    println!("bad tag:   {}", wire::decode(&bad).unwrap_err());
}
