//! Packet model and canonical TLV codec.
//!
//! Every TLV is `tag (1 byte) | length (2 bytes, big-endian) | value`.
//! Fields inside a packet appear in a fixed order and absent optional fields
//! are omitted, so each packet has exactly one encoding. The decoder is
//! strict: anything it accepts re-encodes to the same bytes.
//!
//! Tag values are listed in `docs/wire-format.md`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::pof::HopSignature;

pub const MAX_TLV_LEN: usize = u16::MAX as usize;

pub mod tag {
    pub const INTEREST: u8 = 0x05;
    pub const DATA: u8 = 0x06;
    pub const NACK: u8 = 0x03;

    pub const NAME: u8 = 0x07;
    pub const NAME_COMPONENT: u8 = 0x08;
    pub const CHUNK_INDEX: u8 = 0x09;
    pub const NONCE: u8 = 0x0A;
    pub const LIFETIME: u8 = 0x0C;
    pub const PAYLOAD: u8 = 0x15;

    pub const HOP_INFO: u8 = 0x20;
    pub const ROUTE: u8 = 0x21;
    pub const PAYMENT: u8 = 0x22;
    pub const HOP_LOCAL: u8 = 0x23;
    pub const HOP_REMOTE: u8 = 0x24;
    pub const ROUTE_ADDR: u8 = 0x25;
    pub const CHANNEL_ID: u8 = 0x26;
    pub const AMOUNT: u8 = 0x27;
    pub const SEQUENCE: u8 = 0x28;
    pub const PAYER_SIG: u8 = 0x29;
    pub const PRICE: u8 = 0x2A;

    pub const PROOF: u8 = 0x30;
    pub const PACKET_COUNT: u8 = 0x31;
    pub const DIGEST: u8 = 0x32;
    pub const HOP_SIG: u8 = 0x33;
    pub const SIGNER: u8 = 0x34;
    pub const SIGNER_PUB: u8 = 0x35;
    pub const SIG: u8 = 0x36;
    pub const NACK_REASON: u8 = 0x37;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("field with tag {tag:#04x} is {len} bytes, over the 65535-byte TLV limit")]
    Oversized { tag: u8, len: usize },
    #[error("packet violates its invariants: {0}")]
    Invalid(String),
    #[error("decode error at offset {offset}: {kind}")]
    Decode { offset: usize, kind: DecodeErrorKind },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeErrorKind {
    #[error("truncated TLV header")]
    Truncated,
    #[error("length {len} overruns the {available} remaining bytes")]
    LengthOverrun { len: usize, available: usize },
    #[error("unknown top-level tag {0:#04x}")]
    UnknownTopLevel(u8),
    #[error("duplicate field tag {0:#04x}")]
    DuplicateField(u8),
    #[error("unexpected tag {found:#04x}")]
    UnexpectedTag { found: u8 },
    #[error("missing field {0:#04x}")]
    MissingField(u8),
    #[error("field {tag:#04x} has length {len}, expected {expected}")]
    BadLength { tag: u8, len: usize, expected: usize },
    #[error("trailing bytes after last field")]
    TrailingBytes,
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

fn decode_err(offset: usize, kind: DecodeErrorKind) -> WireError {
    WireError::Decode { offset, kind }
}

/// Six-octet link-layer identifier, rendered `00-14-00-00-00-0A`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeAddr(pub [u8; 6]);

impl NodeAddr {
    pub const BROADCAST: NodeAddr = NodeAddr([0xFF; 6]);

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    pub fn is_broadcast(&self) -> bool {
        *self == Self::BROADCAST
    }
}

impl fmt::Display for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02X}-{:02X}-{:02X}-{:02X}-{:02X}-{:02X}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeAddr({self})")
    }
}

impl FromStr for NodeAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(['-', ':']).collect();
        if parts.len() != 6 {
            return Err(format!("address `{s}` must have 6 octets"));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(&parts) {
            if part.len() != 2 {
                return Err(format!("address `{s}`: octet `{part}` must be two hex digits"));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| format!("address `{s}`: octet `{part}` is not hex"))?;
        }
        Ok(NodeAddr(out))
    }
}

impl serde::Serialize for NodeAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for NodeAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hierarchical content name. Names inside a chunk group carry the group's
/// index in `chunk_index` and the packet's position as the last component.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name {
    pub components: Vec<Vec<u8>>,
    pub chunk_index: Option<u64>,
}

impl Name {
    pub fn new<I, C>(components: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: Into<Vec<u8>>,
    {
        Name {
            components: components.into_iter().map(Into::into).collect(),
            chunk_index: None,
        }
    }

    /// Name of packet `packet` of chunk group `chunk` under this prefix.
    pub fn segment(&self, chunk: u64, packet: u32) -> Name {
        let mut components = self.components.clone();
        components.push(packet.to_string().into_bytes());
        Name {
            components,
            chunk_index: Some(chunk),
        }
    }

    /// The routable prefix: the name minus the chunk/segment suffix.
    pub fn prefix(&self) -> Name {
        match self.chunk_index {
            Some(_) if self.components.len() > 1 => Name {
                components: self.components[..self.components.len() - 1].to_vec(),
                chunk_index: None,
            },
            _ => Name {
                components: self.components.clone(),
                chunk_index: None,
            },
        }
    }

    /// Packet position within its chunk group, parsed from the last component.
    pub fn packet_index(&self) -> Option<u32> {
        self.chunk_index?;
        std::str::from_utf8(self.components.last()?).ok()?.parse().ok()
    }

    pub fn has_prefix(&self, prefix: &Name) -> bool {
        prefix.components.len() <= self.components.len()
            && self.components[..prefix.components.len()] == prefix.components[..]
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.components {
            write!(f, "/{}", String::from_utf8_lossy(c))?;
        }
        if let Some(idx) = self.chunk_index {
            write!(f, "#{idx}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Name({self})")
    }
}

impl FromStr for Name {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (path, chunk_index) = match s.rsplit_once('#') {
            Some((p, idx)) => (
                p,
                Some(idx.parse::<u64>().map_err(|_| format!("bad chunk index in `{s}`"))?),
            ),
            None => (s, None),
        };
        let path = path
            .strip_prefix('/')
            .ok_or_else(|| format!("name `{s}` must start with '/'"))?;
        let components: Vec<Vec<u8>> = path.split('/').map(|c| c.as_bytes().to_vec()).collect();
        if components.iter().any(Vec::is_empty) {
            return Err(format!("name `{s}` has an empty component"));
        }
        Ok(Name {
            components,
            chunk_index,
        })
    }
}

impl serde::Serialize for Name {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Name {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HopInfo {
    pub local: NodeAddr,
    /// `None` is the NULL remote: the Interest is broadcast.
    pub remote: Option<NodeAddr>,
}

/// FILO address stack; index 0 is the top.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RouteStack {
    pub addrs: Vec<NodeAddr>,
}

impl RouteStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_top_down(addrs: Vec<NodeAddr>) -> Self {
        RouteStack { addrs }
    }

    pub fn push(&mut self, addr: NodeAddr) {
        self.addrs.insert(0, addr);
    }

    pub fn pop(&mut self) -> Option<NodeAddr> {
        if self.addrs.is_empty() {
            None
        } else {
            Some(self.addrs.remove(0))
        }
    }

    pub fn top(&self) -> Option<NodeAddr> {
        self.addrs.first().copied()
    }

    pub fn len(&self) -> usize {
        self.addrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }

    pub fn contains(&self, addr: &NodeAddr) -> bool {
        self.addrs.contains(addr)
    }

    fn has_adjacent_duplicates(&self) -> bool {
        self.addrs.windows(2).any(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ChannelId(pub u64);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// An off-chain payment voucher riding in an Interest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payment {
    pub channel_id: ChannelId,
    pub amount: u64,
    pub sequence: u64,
    pub payer_sig: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interest {
    pub name: Name,
    pub nonce: [u8; 8],
    pub hop_info: HopInfo,
    /// Present on source-routed Interests only.
    pub route: Option<RouteStack>,
    pub payment: Option<Payment>,
    pub lifetime_ms: u32,
}

impl Interest {
    pub fn is_discovery(&self) -> bool {
        self.route.is_none()
    }
}

/// Chunk proof fragment carried by content Data. Every packet of a group
/// carries the group size; the final packet also carries the payload digest
/// and the accumulated signature chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkProof {
    pub packet_count: u32,
    pub digest: Option<[u8; 32]>,
    pub chain: Vec<HopSignature>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Data {
    pub name: Name,
    pub payload: Vec<u8>,
    pub hop_info: HopInfo,
    pub route: Option<RouteStack>,
    pub price: Option<u64>,
    pub proof: Option<ChunkProof>,
}

impl Data {
    /// Route discovery replies carry a route and a price; content Data
    /// carries neither.
    pub fn is_discovery(&self) -> bool {
        self.route.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NackReason {
    NoRoute = 1,
    InsufficientPayment = 2,
    Duplicate = 3,
    Expired = 4,
}

impl NackReason {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::NoRoute),
            2 => Some(Self::InsufficientPayment),
            3 => Some(Self::Duplicate),
            4 => Some(Self::Expired),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NoRoute => "no_route",
            Self::InsufficientPayment => "insufficient_payment",
            Self::Duplicate => "duplicate",
            Self::Expired => "expired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nack {
    pub name: Name,
    pub nonce: [u8; 8],
    pub reason: NackReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Interest(Interest),
    Data(Data),
    Nack(Nack),
}

impl Packet {
    pub fn name(&self) -> &Name {
        match self {
            Packet::Interest(i) => &i.name,
            Packet::Data(d) => &d.name,
            Packet::Nack(n) => &n.name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Packet::Interest(i) if i.is_discovery() => "discovery_interest",
            Packet::Interest(_) => "interest",
            Packet::Data(d) if d.is_discovery() => "discovery_data",
            Packet::Data(_) => "data",
            Packet::Nack(_) => "nack",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Packet::Interest(i) => validate_interest(i),
            Packet::Data(d) => validate_data(d),
            Packet::Nack(n) => validate_name(&n.name),
        }
    }
}

impl From<Interest> for Packet {
    fn from(i: Interest) -> Self {
        Packet::Interest(i)
    }
}

impl From<Data> for Packet {
    fn from(d: Data) -> Self {
        Packet::Data(d)
    }
}

impl From<Nack> for Packet {
    fn from(n: Nack) -> Self {
        Packet::Nack(n)
    }
}

fn validate_name(name: &Name) -> Result<(), String> {
    if name.components.is_empty() {
        return Err("name has no components".into());
    }
    if name.components.iter().any(Vec::is_empty) {
        return Err("name has an empty component".into());
    }
    Ok(())
}

fn validate_hop_info(h: &HopInfo) -> Result<(), String> {
    if h.local.is_broadcast() {
        return Err("hop_info.local is the broadcast address".into());
    }
    if h.remote == Some(h.local) {
        return Err("hop_info.local equals hop_info.remote".into());
    }
    Ok(())
}

fn validate_route(r: &RouteStack) -> Result<(), String> {
    if r.is_empty() {
        return Err("attached route is empty".into());
    }
    if r.has_adjacent_duplicates() {
        return Err("route has adjacent duplicate entries".into());
    }
    Ok(())
}

fn validate_interest(i: &Interest) -> Result<(), String> {
    validate_name(&i.name)?;
    validate_hop_info(&i.hop_info)?;
    if i.lifetime_ms == 0 {
        return Err("lifetime_ms must be positive".into());
    }
    match &i.route {
        None => {
            if i.hop_info.remote.is_some() {
                return Err("discovery Interest must have a NULL remote".into());
            }
        }
        Some(r) => {
            validate_route(r)?;
            if i.hop_info.remote != r.top() {
                return Err("source-routed Interest: remote must name the route top".into());
            }
        }
    }
    Ok(())
}

fn validate_data(d: &Data) -> Result<(), String> {
    validate_name(&d.name)?;
    validate_hop_info(&d.hop_info)?;
    match (&d.route, d.price) {
        (Some(r), Some(_)) => {
            validate_route(r)?;
            if d.proof.is_some() {
                return Err("discovery Data carries no chunk proof".into());
            }
        }
        (None, None) => {}
        _ => return Err("route and price must both be present or both absent".into()),
    }
    if let Some(p) = &d.proof {
        if p.packet_count == 0 {
            return Err("chunk proof packet_count must be positive".into());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

fn put(buf: &mut Vec<u8>, tag: u8, value: &[u8]) -> Result<(), WireError> {
    if value.len() > MAX_TLV_LEN {
        return Err(WireError::Oversized { tag, len: value.len() });
    }
    buf.push(tag);
    buf.extend_from_slice(&(value.len() as u16).to_be_bytes());
    buf.extend_from_slice(value);
    Ok(())
}

fn put_name(buf: &mut Vec<u8>, name: &Name) -> Result<(), WireError> {
    let mut inner = Vec::new();
    for c in &name.components {
        put(&mut inner, tag::NAME_COMPONENT, c)?;
    }
    if let Some(idx) = name.chunk_index {
        put(&mut inner, tag::CHUNK_INDEX, &idx.to_be_bytes())?;
    }
    put(buf, tag::NAME, &inner)
}

fn put_hop_info(buf: &mut Vec<u8>, h: &HopInfo) -> Result<(), WireError> {
    let mut inner = Vec::new();
    put(&mut inner, tag::HOP_LOCAL, &h.local.0)?;
    if let Some(r) = h.remote {
        put(&mut inner, tag::HOP_REMOTE, &r.0)?;
    }
    put(buf, tag::HOP_INFO, &inner)
}

fn put_route(buf: &mut Vec<u8>, r: &RouteStack) -> Result<(), WireError> {
    let mut inner = Vec::new();
    for a in &r.addrs {
        put(&mut inner, tag::ROUTE_ADDR, &a.0)?;
    }
    put(buf, tag::ROUTE, &inner)
}

fn put_payment(buf: &mut Vec<u8>, p: &Payment) -> Result<(), WireError> {
    let mut inner = Vec::new();
    put(&mut inner, tag::CHANNEL_ID, &p.channel_id.0.to_be_bytes())?;
    put(&mut inner, tag::AMOUNT, &p.amount.to_be_bytes())?;
    put(&mut inner, tag::SEQUENCE, &p.sequence.to_be_bytes())?;
    put(&mut inner, tag::PAYER_SIG, &p.payer_sig)?;
    put(buf, tag::PAYMENT, &inner)
}

fn put_hop_signature(buf: &mut Vec<u8>, s: &HopSignature) -> Result<(), WireError> {
    let mut inner = Vec::new();
    put(&mut inner, tag::SIGNER, &s.signer.0)?;
    put(&mut inner, tag::SIGNER_PUB, &s.signer_pub)?;
    put(&mut inner, tag::SIG, &s.sig)?;
    put(buf, tag::HOP_SIG, &inner)
}

fn put_proof(buf: &mut Vec<u8>, p: &ChunkProof) -> Result<(), WireError> {
    let mut inner = Vec::new();
    put(&mut inner, tag::PACKET_COUNT, &p.packet_count.to_be_bytes())?;
    if let Some(d) = &p.digest {
        put(&mut inner, tag::DIGEST, d)?;
    }
    for s in &p.chain {
        put_hop_signature(&mut inner, s)?;
    }
    put(buf, tag::PROOF, &inner)
}

/// Canonical encoding of a packet.
pub fn encode(pkt: &Packet) -> Result<Vec<u8>, WireError> {
    pkt.validate().map_err(WireError::Invalid)?;
    let mut inner = Vec::new();
    let top = match pkt {
        Packet::Interest(i) => {
            put_name(&mut inner, &i.name)?;
            put(&mut inner, tag::NONCE, &i.nonce)?;
            put_hop_info(&mut inner, &i.hop_info)?;
            if let Some(r) = &i.route {
                put_route(&mut inner, r)?;
            }
            if let Some(p) = &i.payment {
                put_payment(&mut inner, p)?;
            }
            put(&mut inner, tag::LIFETIME, &i.lifetime_ms.to_be_bytes())?;
            tag::INTEREST
        }
        Packet::Data(d) => {
            put_name(&mut inner, &d.name)?;
            put_hop_info(&mut inner, &d.hop_info)?;
            if let Some(r) = &d.route {
                put_route(&mut inner, r)?;
            }
            if let Some(price) = d.price {
                put(&mut inner, tag::PRICE, &price.to_be_bytes())?;
            }
            if let Some(p) = &d.proof {
                put_proof(&mut inner, p)?;
            }
            put(&mut inner, tag::PAYLOAD, &d.payload)?;
            tag::DATA
        }
        Packet::Nack(n) => {
            put_name(&mut inner, &n.name)?;
            put(&mut inner, tag::NONCE, &n.nonce)?;
            put(&mut inner, tag::NACK_REASON, &[n.reason as u8])?;
            tag::NACK
        }
    };
    let mut out = Vec::with_capacity(inner.len() + 3);
    put(&mut out, top, &inner)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Tlv<'a> {
    tag: u8,
    offset: usize,
    value: &'a [u8],
    value_offset: usize,
}

/// Sequential reader over the TLVs of one container. Fields must appear in
/// canonical order; a repeated singleton tag is reported as a duplicate.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
    seen: Vec<u8>,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Reader {
            buf,
            pos: 0,
            base,
            seen: Vec::new(),
        }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn peek_tag(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    fn next_tlv(&mut self) -> Result<Tlv<'a>, WireError> {
        let offset = self.offset();
        if self.buf.len() - self.pos < 3 {
            return Err(decode_err(offset, DecodeErrorKind::Truncated));
        }
        let tag = self.buf[self.pos];
        let len = u16::from_be_bytes([self.buf[self.pos + 1], self.buf[self.pos + 2]]) as usize;
        let start = self.pos + 3;
        let available = self.buf.len() - start;
        if len > available {
            return Err(decode_err(offset, DecodeErrorKind::LengthOverrun { len, available }));
        }
        self.pos = start + len;
        Ok(Tlv {
            tag,
            offset,
            value: &self.buf[start..start + len],
            value_offset: self.base + start,
        })
    }

    fn unexpected(&self, found: u8) -> WireError {
        let kind = if self.seen.contains(&found) {
            DecodeErrorKind::DuplicateField(found)
        } else {
            DecodeErrorKind::UnexpectedTag { found }
        };
        decode_err(self.offset(), kind)
    }

    fn required(&mut self, tag: u8) -> Result<Tlv<'a>, WireError> {
        match self.peek_tag() {
            Some(t) if t == tag => {
                self.seen.push(tag);
                self.next_tlv()
            }
            Some(t) => Err(self.unexpected(t)),
            None => Err(decode_err(self.offset(), DecodeErrorKind::MissingField(tag))),
        }
    }

    fn optional(&mut self, tag: u8) -> Result<Option<Tlv<'a>>, WireError> {
        if self.peek_tag() == Some(tag) {
            self.seen.push(tag);
            self.next_tlv().map(Some)
        } else {
            Ok(None)
        }
    }

    fn repeated(&mut self, tag: u8) -> Result<Vec<Tlv<'a>>, WireError> {
        let mut out = Vec::new();
        while self.peek_tag() == Some(tag) {
            out.push(self.next_tlv()?);
        }
        if !out.is_empty() {
            self.seen.push(tag);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<(), WireError> {
        match self.peek_tag() {
            None => Ok(()),
            Some(t) if self.seen.contains(&t) => Err(self.unexpected(t)),
            Some(_) => Err(decode_err(self.offset(), DecodeErrorKind::TrailingBytes)),
        }
    }
}

fn fixed<const N: usize>(tlv: Tlv<'_>) -> Result<[u8; N], WireError> {
    tlv.value.try_into().map_err(|_| {
        decode_err(
            tlv.offset,
            DecodeErrorKind::BadLength {
                tag: tlv.tag,
                len: tlv.value.len(),
                expected: N,
            },
        )
    })
}

fn u64_field(tlv: Tlv<'_>) -> Result<u64, WireError> {
    fixed::<8>(tlv).map(u64::from_be_bytes)
}

fn invalid(offset: usize, msg: impl Into<String>) -> WireError {
    decode_err(offset, DecodeErrorKind::InvalidValue(msg.into()))
}

fn read_name(tlv: Tlv<'_>) -> Result<Name, WireError> {
    let mut r = Reader::new(tlv.value, tlv.value_offset);
    let comps = r.repeated(tag::NAME_COMPONENT)?;
    if comps.is_empty() {
        return Err(invalid(tlv.offset, "name has no components"));
    }
    let mut components = Vec::with_capacity(comps.len());
    for c in comps {
        if c.value.is_empty() {
            return Err(invalid(c.offset, "empty name component"));
        }
        components.push(c.value.to_vec());
    }
    let chunk_index = r.optional(tag::CHUNK_INDEX)?.map(u64_field).transpose()?;
    r.finish()?;
    Ok(Name {
        components,
        chunk_index,
    })
}

fn read_hop_info(tlv: Tlv<'_>) -> Result<HopInfo, WireError> {
    let mut r = Reader::new(tlv.value, tlv.value_offset);
    let local = NodeAddr(fixed(r.required(tag::HOP_LOCAL)?)?);
    let remote = r
        .optional(tag::HOP_REMOTE)?
        .map(|t| fixed(t).map(NodeAddr))
        .transpose()?;
    r.finish()?;
    Ok(HopInfo { local, remote })
}

fn read_route(tlv: Tlv<'_>) -> Result<RouteStack, WireError> {
    let mut r = Reader::new(tlv.value, tlv.value_offset);
    let addrs = r
        .repeated(tag::ROUTE_ADDR)?
        .into_iter()
        .map(|t| fixed(t).map(NodeAddr))
        .collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(RouteStack { addrs })
}

fn read_payment(tlv: Tlv<'_>) -> Result<Payment, WireError> {
    let mut r = Reader::new(tlv.value, tlv.value_offset);
    let channel_id = ChannelId(u64_field(r.required(tag::CHANNEL_ID)?)?);
    let amount = u64_field(r.required(tag::AMOUNT)?)?;
    let sequence = u64_field(r.required(tag::SEQUENCE)?)?;
    let payer_sig = r.required(tag::PAYER_SIG)?.value.to_vec();
    r.finish()?;
    Ok(Payment {
        channel_id,
        amount,
        sequence,
        payer_sig,
    })
}

fn read_hop_signature(tlv: Tlv<'_>) -> Result<HopSignature, WireError> {
    let mut r = Reader::new(tlv.value, tlv.value_offset);
    let signer = NodeAddr(fixed(r.required(tag::SIGNER)?)?);
    let signer_pub = fixed(r.required(tag::SIGNER_PUB)?)?;
    let sig = fixed(r.required(tag::SIG)?)?;
    r.finish()?;
    Ok(HopSignature {
        signer,
        signer_pub,
        sig,
    })
}

fn read_proof(tlv: Tlv<'_>) -> Result<ChunkProof, WireError> {
    let mut r = Reader::new(tlv.value, tlv.value_offset);
    let packet_count = u32::from_be_bytes(fixed(r.required(tag::PACKET_COUNT)?)?);
    let digest = r.optional(tag::DIGEST)?.map(fixed::<32>).transpose()?;
    let chain = r
        .repeated(tag::HOP_SIG)?
        .into_iter()
        .map(read_hop_signature)
        .collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(ChunkProof {
        packet_count,
        digest,
        chain,
    })
}

/// Strict inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
    let mut outer = Reader::new(bytes, 0);
    let top = outer.next_tlv()?;
    if outer.peek_tag().is_some() {
        return Err(decode_err(outer.offset(), DecodeErrorKind::TrailingBytes));
    }
    let mut r = Reader::new(top.value, top.value_offset);
    let pkt = match top.tag {
        tag::INTEREST => {
            let name = read_name(r.required(tag::NAME)?)?;
            let nonce = fixed(r.required(tag::NONCE)?)?;
            let hop_info = read_hop_info(r.required(tag::HOP_INFO)?)?;
            let route = r.optional(tag::ROUTE)?.map(read_route).transpose()?;
            let payment = r.optional(tag::PAYMENT)?.map(read_payment).transpose()?;
            let lifetime_ms = u32::from_be_bytes(fixed(r.required(tag::LIFETIME)?)?);
            Packet::Interest(Interest {
                name,
                nonce,
                hop_info,
                route,
                payment,
                lifetime_ms,
            })
        }
        tag::DATA => {
            let name = read_name(r.required(tag::NAME)?)?;
            let hop_info = read_hop_info(r.required(tag::HOP_INFO)?)?;
            let route = r.optional(tag::ROUTE)?.map(read_route).transpose()?;
            let price = r.optional(tag::PRICE)?.map(u64_field).transpose()?;
            let proof = r.optional(tag::PROOF)?.map(read_proof).transpose()?;
            let payload = r.required(tag::PAYLOAD)?.value.to_vec();
            Packet::Data(Data {
                name,
                payload,
                hop_info,
                route,
                price,
                proof,
            })
        }
        tag::NACK => {
            let name = read_name(r.required(tag::NAME)?)?;
            let nonce = fixed(r.required(tag::NONCE)?)?;
            let reason_tlv = r.required(tag::NACK_REASON)?;
            let [code] = fixed::<1>(reason_tlv)?;
            let reason = NackReason::from_u8(code)
                .ok_or_else(|| invalid(reason_tlv.offset, format!("unknown NACK reason {code}")))?;
            Packet::Nack(Nack { name, nonce, reason })
        }
        other => return Err(decode_err(0, DecodeErrorKind::UnknownTopLevel(other))),
    };
    r.finish()?;
    pkt.validate().map_err(|msg| invalid(0, msg))?;
    Ok(pkt)
}
