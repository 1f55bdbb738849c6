//! Chunk-level proof-of-forwarding over a three-hop path.

use r2p2::pof::{
    sign_chunk, signature_budget, verify_chain, ChunkDescriptor, KeyDirectory, KeyPair, SignedChunk, SigningMode,
};
use r2p2::wire::{Name, NodeAddr};

fn main() {
    let names = ["producer", "relay-1", "relay-2"];
    let keys: Vec<KeyPair> = (1..=3u8)
        .map(|i| KeyPair::derive(NodeAddr([0, 0x30, 0, 0, 0, i]), 42))
        .collect();
    let dir: KeyDirectory = keys.iter().map(|k| (k.owner, k.public())).collect();
    let path: Vec<NodeAddr> = keys.iter().map(|k| k.owner).collect();

    let prefix: Name = "/movie".parse().unwrap();
    let payload: Vec<u8> = (0..8 * 1_000u32).map(|i| (i % 251) as u8).collect();
    let mut chunk = SignedChunk::new(ChunkDescriptor::new(&prefix, 0, 8, 1_000), payload);
    for (k, who) in keys.iter().zip(names) {
        chunk = sign_chunk(&chunk, k).unwrap();
        println!("{who:<9} signs, chain length {}", chunk.chain.len());
    }
    println!("honest chunk: {:?}", verify_chain(&chunk, &path, &dir));

    let mut tampered = chunk.clone();
    tampered.payload[17] ^= 1;
    println!("payload bit flip: {:?}", verify_chain(&tampered, &path, &dir));

    let mut skipped = chunk.clone();
    skipped.chain.remove(1);
    println!("relay-1 dropped: {:?}", verify_chain(&skipped, &path, &dir));

    println!("\nsignatures per hop for 2 MiB of 1500-byte packets:");
    for mode in [
        SigningMode::PacketLevel,
        SigningMode::ChunkLevel(16),
        SigningMode::ChunkLevel(64),
    ] {
        println!(
            "  {:<10} {}",
            mode.label(),
            signature_budget(2 * 1024 * 1024, 1_500, mode)
        );
    }
}
