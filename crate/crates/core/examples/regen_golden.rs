//! Rewrites the golden fixtures under tests/fixtures: byte vectors for an
//! Interest and a signed chunk, and `run` output for fig1 and fig6.
//!
//! cargo run --example regen_golden

use std::path::Path;

use r2p2::pof::{sign_chunk, ChunkDescriptor, KeyPair, SignedChunk};
use r2p2::wire::{self, ChannelId, HopInfo, Interest, Name, NodeAddr, Packet, Payment, RouteStack};

fn addr(s: &str) -> NodeAddr {
    s.parse().expect("valid address")
}

fn golden_interest() -> Packet {
    let prefix: Name = "/video/clip".parse().expect("valid name");
    Packet::Interest(Interest {
        name: prefix.segment(3, 2),
        nonce: [1, 2, 3, 4, 5, 6, 7, 8],
        hop_info: HopInfo {
            local: addr("00-14-00-00-00-0A"),
            remote: Some(addr("00-40-00-00-00-0B")),
        },
        route: Some(RouteStack::from_top_down(vec![
            addr("00-40-00-00-00-0B"),
            addr("00-30-00-00-00-0C"),
        ])),
        payment: Some(Payment {
            channel_id: ChannelId(7),
            amount: 15,
            sequence: 1,
            payer_sig: vec![0xAB; 64],
        }),
        lifetime_ms: 300,
    })
}

fn golden_chunk() -> SignedChunk {
    let prefix: Name = "/video/clip".parse().expect("valid name");
    let payload: Vec<u8> = (0..64u32).map(|i| (i * 7 % 256) as u8).collect();
    let mut chunk = SignedChunk::new(ChunkDescriptor::new(&prefix, 3, 4, 16), payload);
    for a in ["00-30-00-00-00-0C", "00-40-00-00-00-0B"] {
        chunk = sign_chunk(&chunk, &KeyPair::derive(addr(a), 1)).expect("honest chunk");
    }
    chunk
}

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir)?;
    let interest = wire::encode(&golden_interest()).expect("golden interest encodes");
    std::fs::write(dir.join("golden_interest.hex"), hex::encode(interest) + "\n")?;
    std::fs::write(
        dir.join("golden_chunk.hex"),
        hex::encode(golden_chunk().to_bytes()) + "\n",
    )?;
    for name in ["fig1", "fig6"] {
        let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.scn"));
        let mut out = Vec::new();
        let code = r2p2::cli::main_with(
            ["r2p2", "run", "--scenario", scenario.to_str().expect("utf-8 path")],
            &mut out,
            &mut std::io::stderr(),
        );
        assert_eq!(code, 0, "{name} run failed");
        std::fs::write(dir.join(format!("run_{name}.json")), out)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}
