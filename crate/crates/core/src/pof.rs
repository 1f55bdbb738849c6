//! Proof-of-forwarding: chunk assembly and chained per-hop signatures.
//!
//! A chunk is signed once per hop. Hop `k` signs
//! `SHA-256(digest ‖ chain[0..k])`, where `digest` is the SHA-256 of the
//! chunk payload and each prior link is serialized as
//! `signer (6) ‖ signer_pub (32) ‖ sig (64)`. Because every signature covers
//! all of its predecessors, a relay cannot drop, reorder or forge earlier
//! links without invalidating the chain.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::time::SimTime;
use crate::wire::{ChunkProof, Data, Name, NodeAddr};

pub type KeyDirectory = BTreeMap<NodeAddr, [u8; 32]>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PofError {
    #[error("chunk {name} is incomplete: {have} of {need} packets")]
    Incomplete { name: String, have: usize, need: u32 },
    #[error("chunk payload does not match its digest")]
    DigestMismatch,
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    pub owner: NodeAddr,
}

impl KeyPair {
    pub fn from_secret(owner: NodeAddr, secret: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&secret),
            owner,
        }
    }

    /// Deterministic key derived from a scenario seed and the owner address.
    pub fn derive(owner: NodeAddr, seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"r2p2/node-key");
        h.update(seed.to_be_bytes());
        h.update(owner.0);
        Self::from_secret(owner, h.finalize().into())
    }

    pub fn public(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn secret(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.signing.sign(msg).to_bytes()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("owner", &self.owner)
            .field("public", &hex::encode(self.public()))
            .finish_non_exhaustive()
    }
}

pub fn verify_signature(public: &[u8; 32], msg: &[u8], sig: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    key.verify_strict(msg, &sig).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopSignature {
    pub signer: NodeAddr,
    pub signer_pub: [u8; 32],
    pub sig: [u8; 64],
}

impl HopSignature {
    pub const SERIALIZED_LEN: usize = 6 + 32 + 64;

    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.signer.0);
        out.extend_from_slice(&self.signer_pub);
        out.extend_from_slice(&self.sig);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkDescriptor {
    /// Group name: the content prefix with `chunk_index` set.
    pub name: Name,
    pub packet_count: u32,
    pub packet_size: u32,
}

impl ChunkDescriptor {
    pub fn new(prefix: &Name, chunk: u64, packet_count: u32, packet_size: u32) -> Self {
        assert!(packet_count >= 1, "a chunk has at least one packet");
        ChunkDescriptor {
            name: Name {
                components: prefix.components.clone(),
                chunk_index: Some(chunk),
            },
            packet_count,
            packet_size,
        }
    }

    pub fn prefix(&self) -> Name {
        Name {
            components: self.name.components.clone(),
            chunk_index: None,
        }
    }

    pub fn chunk_index(&self) -> u64 {
        self.name.chunk_index.unwrap_or(0)
    }

    pub fn packet_name(&self, index: u32) -> Name {
        self.prefix().segment(self.chunk_index(), index)
    }

    pub fn final_index(&self) -> u32 {
        self.packet_count - 1
    }

    /// True if `name` is one of this group's packets.
    pub fn contains(&self, name: &Name) -> bool {
        name.chunk_index == self.name.chunk_index
            && name.prefix().components == self.name.components
            && name.packet_index().is_some_and(|i| i < self.packet_count)
    }
}

/// A content chunk with its signature chain, producer first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedChunk {
    pub descriptor: ChunkDescriptor,
    pub payload: Vec<u8>,
    /// Digest the producer attested to; honest chunks have
    /// `digest == chunk_digest(&payload)`.
    pub digest: [u8; 32],
    pub chain: Vec<HopSignature>,
}

pub fn chunk_digest(payload: &[u8]) -> [u8; 32] {
    Sha256::digest(payload).into()
}

/// Hash that hop `chain.len()` signs.
pub fn chain_message_hash(digest: &[u8; 32], prior: &[HopSignature]) -> [u8; 32] {
    let mut msg = Vec::with_capacity(32 + prior.len() * HopSignature::SERIALIZED_LEN);
    msg.extend_from_slice(digest);
    for link in prior {
        link.write_to(&mut msg);
    }
    Sha256::digest(&msg).into()
}

impl SignedChunk {
    /// Fresh unsigned chunk, as held by the producer before signing.
    pub fn new(descriptor: ChunkDescriptor, payload: Vec<u8>) -> Self {
        let digest = chunk_digest(&payload);
        SignedChunk {
            descriptor,
            payload,
            digest,
            chain: Vec::new(),
        }
    }

    pub fn proof(&self) -> ChunkProof {
        ChunkProof {
            packet_count: self.descriptor.packet_count,
            digest: Some(self.digest),
            chain: self.chain.clone(),
        }
    }

    /// Serialized chunk: `descriptor ‖ digest ‖ chain ‖ payload`, each part
    /// length-prefixed where variable. Used for golden fixtures.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let name = self.descriptor.name.to_string();
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&self.descriptor.packet_count.to_be_bytes());
        out.extend_from_slice(&self.descriptor.packet_size.to_be_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.chain.len() as u16).to_be_bytes());
        for link in &self.chain {
            link.write_to(&mut out);
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Appends `key`'s signature over the payload digest and the existing chain.
pub fn sign_chunk(chunk: &SignedChunk, key: &KeyPair) -> Result<SignedChunk, PofError> {
    if chunk_digest(&chunk.payload) != chunk.digest {
        return Err(PofError::DigestMismatch);
    }
    let msg = chain_message_hash(&chunk.digest, &chunk.chain);
    let mut out = chunk.clone();
    out.chain.push(HopSignature {
        signer: key.owner,
        signer_pub: key.public(),
        sig: key.sign(&msg),
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InvalidReason {
    MissingSigner,
    UnexpectedSigner,
    BadSignature,
    PayloadTampered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVerdict {
    Valid,
    Invalid { at: usize, why: InvalidReason },
}

impl ChainVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ChainVerdict::Valid)
    }
}

/// Checks that `chunk` was signed by exactly `expected_path` (producer
/// first) and that every link verifies. Reports the first failing index.
pub fn verify_chain(chunk: &SignedChunk, expected_path: &[NodeAddr], directory: &KeyDirectory) -> ChainVerdict {
    let invalid = |at, why| ChainVerdict::Invalid { at, why };

    if chunk_digest(&chunk.payload) != chunk.digest {
        return invalid(0, InvalidReason::PayloadTampered);
    }
    let len = chunk.chain.len().max(expected_path.len());
    for i in 0..len {
        let Some(link) = chunk.chain.get(i) else {
            return invalid(i, InvalidReason::MissingSigner);
        };
        let Some(expected) = expected_path.get(i) else {
            return invalid(i, InvalidReason::UnexpectedSigner);
        };
        if link.signer != *expected {
            let why = if expected_path[i + 1..].contains(&link.signer) {
                InvalidReason::MissingSigner
            } else {
                InvalidReason::UnexpectedSigner
            };
            return invalid(i, why);
        }
        let Some(public) = directory.get(&link.signer) else {
            return invalid(i, InvalidReason::UnexpectedSigner);
        };
        if link.signer_pub != *public {
            return invalid(i, InvalidReason::BadSignature);
        }
        let msg = chain_message_hash(&chunk.digest, &chunk.chain[..i]);
        if !verify_signature(public, &msg, &link.sig) {
            return invalid(i, InvalidReason::BadSignature);
        }
    }
    ChainVerdict::Valid
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssemblyStatus {
    Incomplete,
    Complete(Vec<u8>),
    Expired,
}

/// Per-node cache of one chunk group's packets, kept until the group is
/// complete or its deadline passes.
#[derive(Debug, Clone)]
pub struct ChunkAssembly {
    pub descriptor: ChunkDescriptor,
    received: BTreeMap<u32, Vec<u8>>,
    pub deadline: SimTime,
    expired: bool,
    /// Proof fragment from the group's final packet, once seen.
    pub final_proof: Option<ChunkProof>,
}

impl ChunkAssembly {
    pub fn new(descriptor: ChunkDescriptor, deadline: SimTime) -> Self {
        ChunkAssembly {
            descriptor,
            received: BTreeMap::new(),
            deadline,
            expired: false,
            final_proof: None,
        }
    }

    pub fn received_count(&self) -> usize {
        self.received.len()
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.descriptor.packet_count as usize
    }

    pub fn is_expired(&self) -> bool {
        self.expired
    }

    /// Records `data` if it belongs to this group. Duplicate indices are
    /// ignored. Packet forwarding never waits on this call.
    pub fn assemble(&mut self, data: &Data, now: SimTime) -> AssemblyStatus {
        if self.expired || (!self.is_complete() && now >= self.deadline) {
            self.expired = true;
            self.received.clear();
            return AssemblyStatus::Expired;
        }
        if let Some(idx) = data.name.packet_index() {
            if self.descriptor.contains(&data.name) {
                self.received.entry(idx).or_insert_with(|| data.payload.clone());
                if idx == self.descriptor.final_index() {
                    if let Some(p) = &data.proof {
                        self.final_proof = Some(p.clone());
                    }
                }
            }
        }
        match self.payload() {
            Some(p) => AssemblyStatus::Complete(p),
            None => AssemblyStatus::Incomplete,
        }
    }

    /// Marks the assembly expired if its deadline passed before completion.
    pub fn check_deadline(&mut self, now: SimTime) -> bool {
        if !self.expired && !self.is_complete() && now >= self.deadline {
            self.expired = true;
            self.received.clear();
        }
        self.expired
    }

    /// Concatenated payloads in index order, once complete.
    pub fn payload(&self) -> Option<Vec<u8>> {
        if !self.is_complete() {
            return None;
        }
        Some(self.received.values().flatten().copied().collect())
    }

    /// Builds the chunk as received, with the chain carried by the final
    /// packet. Fails while packets are missing.
    pub fn to_signed_chunk(&self) -> Result<SignedChunk, PofError> {
        let payload = self.payload().ok_or_else(|| PofError::Incomplete {
            name: self.descriptor.name.to_string(),
            have: self.received.len(),
            need: self.descriptor.packet_count,
        })?;
        let (digest, chain) = match &self.final_proof {
            Some(ChunkProof {
                digest: Some(d), chain, ..
            }) => (*d, chain.clone()),
            _ => (chunk_digest(&payload), Vec::new()),
        };
        Ok(SignedChunk {
            descriptor: self.descriptor.clone(),
            payload,
            digest,
            chain,
        })
    }

    /// Signs the assembled chunk. Partial chunks are never signed.
    pub fn sign(&self, key: &KeyPair) -> Result<SignedChunk, PofError> {
        sign_chunk(&self.to_signed_chunk()?, key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigningMode {
    PacketLevel,
    /// One signature per `N` packets.
    ChunkLevel(u64),
}

/// Signing operations one hop performs to forward `content_bytes`.
pub fn signature_budget(content_bytes: u64, packet_size: u64, mode: SigningMode) -> u64 {
    assert!(packet_size > 0, "packet size must be positive");
    match mode {
        SigningMode::PacketLevel => content_bytes.div_ceil(packet_size),
        SigningMode::ChunkLevel(n) => {
            assert!(n > 0, "chunk packet count must be positive");
            content_bytes.div_ceil(n * packet_size)
        }
    }
}

/// Operation counts for forwarding one piece of content over a path.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BenchRow {
    pub mode: String,
    pub packets: u64,
    /// Signed units (chunks, or packets in packet-level mode).
    pub units: u64,
    pub hops: u64,
    pub signatures: u64,
    pub verifications: u64,
    /// `hops * signature_budget(..)`, for comparison with the executed count.
    pub budget: u64,
}

impl SigningMode {
    pub fn label(self) -> String {
        match self {
            SigningMode::PacketLevel => "packet".to_string(),
            SigningMode::ChunkLevel(n) => format!("chunk({n})"),
        }
    }

    fn packets_per_unit(self) -> u64 {
        match self {
            SigningMode::PacketLevel => 1,
            SigningMode::ChunkLevel(n) => n,
        }
    }
}

/// Signs `content_bytes` of synthetic content at every hop of a
/// `hops`-long path, then verifies each unit at the consumer, counting the
/// signing and verification operations actually performed.
pub fn bench_pof(content_bytes: u64, packet_size: u64, mode: SigningMode, hops: u8) -> BenchRow {
    assert!(hops > 0, "path needs at least one signer");
    let keys: Vec<KeyPair> = (0..hops)
        .map(|i| KeyPair::derive(NodeAddr([0x02, 0, 0, 0, 0xbe, i]), 0))
        .collect();
    let dir: KeyDirectory = keys.iter().map(|k| (k.owner, k.public())).collect();
    let path: Vec<NodeAddr> = keys.iter().map(|k| k.owner).collect();
    let prefix: Name = "/bench".parse().expect("valid name");
    let unit_bytes = mode.packets_per_unit() * packet_size;
    let units = signature_budget(content_bytes, packet_size, mode);
    let (mut signatures, mut verifications) = (0u64, 0u64);
    for u in 0..units {
        let start = u * unit_bytes;
        let len = unit_bytes.min(content_bytes - start);
        let packets = len.div_ceil(packet_size) as u32;
        let payload: Vec<u8> = (start..start + len).map(|i| (i % 251) as u8).collect();
        let desc = ChunkDescriptor::new(&prefix, u, packets, packet_size as u32);
        let mut chunk = SignedChunk::new(desc, payload);
        for k in &keys {
            chunk = sign_chunk(&chunk, k).expect("honest chunk");
            signatures += 1;
        }
        assert!(verify_chain(&chunk, &path, &dir).is_valid(), "honest chain verifies");
        verifications += chunk.chain.len() as u64;
    }
    BenchRow {
        mode: mode.label(),
        packets: content_bytes.div_ceil(packet_size),
        units,
        hops: u64::from(hops),
        signatures,
        verifications,
        budget: u64::from(hops) * units,
    }
}
