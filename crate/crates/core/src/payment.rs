//! Off-chain payments: 2/2-signed micropayment channels, hop-by-hop payment
//! relaying, the consumer-pays-every-node alternative, and an in-process
//! settlement ledger with an append-only transaction log.
//!
//! Channels are one-directional: `party_a` pays `party_b`. A channel state
//! is valid when both parties have signed
//! `(channel_id, sequence, balance_a, balance_b)`.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pof::{verify_signature, KeyDirectory, KeyPair};
use crate::wire::{ChannelId, NodeAddr, Payment};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaymentError {
    #[error("account {owner} holds {have}u, needs {need}u")]
    InsufficientBalance { owner: NodeAddr, need: u64, have: u64 },
    #[error("no account registered for {0}")]
    UnknownAccount(NodeAddr),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("channel {0} is settled")]
    NotOpen(ChannelId),
    #[error("no open channel from {from} to {to}")]
    NoChannel { from: NodeAddr, to: NodeAddr },
    #[error("transfer of {amount}u overdraws balance {balance}u on {channel}")]
    Overdraw {
        channel: ChannelId,
        amount: u64,
        balance: u64,
    },
    #[error("payment of {amount}u does not cover cost {cost}u")]
    InsufficientPayment { amount: u64, cost: u64 },
    #[error("missing signature on {0}")]
    MissingSignature(ChannelId),
    #[error("bad signature on {0}")]
    BadSignature(ChannelId),
    #[error("stale sequence {got} on {channel}, highest seen {seen}")]
    StaleSequence { channel: ChannelId, got: u64, seen: u64 },
    #[error("update on {0} does not conserve the channel pool")]
    Conservation(ChannelId),
    #[error("key owner does not match channel party on {0}")]
    KeyMismatch(ChannelId),
    #[error("state does not match the ledger's record of {0}")]
    StateMismatch(ChannelId),
    #[error("unknown cost for hop {0}")]
    UnknownHopCost(NodeAddr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LedgerAccount {
    pub owner: NodeAddr,
    pub balance: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStatus {
    Open,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelState {
    pub channel_id: ChannelId,
    pub party_a: NodeAddr,
    pub party_b: NodeAddr,
    pub deposit_a: u64,
    pub deposit_b: u64,
    pub balance_a: u64,
    pub balance_b: u64,
    pub sequence: u64,
    pub sigs: Option<([u8; 64], [u8; 64])>,
    pub status: ChannelStatus,
}

pub fn state_message(id: ChannelId, sequence: u64, balance_a: u64, balance_b: u64) -> Vec<u8> {
    let mut m = b"r2p2/channel-state".to_vec();
    m.extend_from_slice(&id.0.to_be_bytes());
    m.extend_from_slice(&sequence.to_be_bytes());
    m.extend_from_slice(&balance_a.to_be_bytes());
    m.extend_from_slice(&balance_b.to_be_bytes());
    m
}

/// Message a payer signs to authorize `amount` at `sequence`.
pub fn voucher_message(id: ChannelId, sequence: u64, amount: u64) -> Vec<u8> {
    let mut m = b"r2p2/voucher".to_vec();
    m.extend_from_slice(&id.0.to_be_bytes());
    m.extend_from_slice(&sequence.to_be_bytes());
    m.extend_from_slice(&amount.to_be_bytes());
    m
}

impl ChannelState {
    pub fn pool(&self) -> u64 {
        self.deposit_a + self.deposit_b
    }

    pub fn is_open(&self) -> bool {
        self.status == ChannelStatus::Open
    }

    /// Both signatures present and valid. The opening state (sequence 0)
    /// needs none.
    pub fn verify_sigs(&self, pub_a: &[u8; 32], pub_b: &[u8; 32]) -> bool {
        match &self.sigs {
            None => self.sequence == 0,
            Some((sa, sb)) => {
                let m = state_message(self.channel_id, self.sequence, self.balance_a, self.balance_b);
                verify_signature(pub_a, &m, sa) && verify_signature(pub_b, &m, sb)
            }
        }
    }

    /// Applies a proposed successor state carrying both parties' signatures.
    pub fn apply(
        &self,
        proposal: &ChannelUpdate,
        pub_a: &[u8; 32],
        pub_b: &[u8; 32],
    ) -> Result<ChannelState, PaymentError> {
        let id = self.channel_id;
        if !self.is_open() {
            return Err(PaymentError::NotOpen(id));
        }
        if proposal.channel_id != id {
            return Err(PaymentError::UnknownChannel(proposal.channel_id));
        }
        if proposal.sequence <= self.sequence {
            return Err(PaymentError::StaleSequence {
                channel: id,
                got: proposal.sequence,
                seen: self.sequence,
            });
        }
        if proposal.balance_a.checked_add(proposal.balance_b) != Some(self.pool())
            || proposal.balance_b < self.balance_b
        {
            return Err(PaymentError::Conservation(id));
        }
        let (Some(sa), Some(sb)) = (proposal.sig_a, proposal.sig_b) else {
            return Err(PaymentError::MissingSignature(id));
        };
        let m = state_message(id, proposal.sequence, proposal.balance_a, proposal.balance_b);
        if !verify_signature(pub_a, &m, &sa) || !verify_signature(pub_b, &m, &sb) {
            return Err(PaymentError::BadSignature(id));
        }
        Ok(ChannelState {
            balance_a: proposal.balance_a,
            balance_b: proposal.balance_b,
            sequence: proposal.sequence,
            sigs: Some((sa, sb)),
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelUpdate {
    pub channel_id: ChannelId,
    pub sequence: u64,
    pub balance_a: u64,
    pub balance_b: u64,
    pub sig_a: Option<[u8; 64]>,
    pub sig_b: Option<[u8; 64]>,
}

impl ChannelUpdate {
    /// Unsigned proposal moving `delta_to_b` from a to b at `sequence`.
    pub fn propose(ch: &ChannelState, delta_to_b: u64, sequence: u64) -> Result<Self, PaymentError> {
        if !ch.is_open() {
            return Err(PaymentError::NotOpen(ch.channel_id));
        }
        if delta_to_b > ch.balance_a {
            return Err(PaymentError::Overdraw {
                channel: ch.channel_id,
                amount: delta_to_b,
                balance: ch.balance_a,
            });
        }
        Ok(ChannelUpdate {
            channel_id: ch.channel_id,
            sequence,
            balance_a: ch.balance_a - delta_to_b,
            balance_b: ch.balance_b + delta_to_b,
            sig_a: None,
            sig_b: None,
        })
    }

    fn message(&self) -> Vec<u8> {
        state_message(self.channel_id, self.sequence, self.balance_a, self.balance_b)
    }

    pub fn sign_a(mut self, key: &KeyPair) -> Self {
        self.sig_a = Some(key.sign(&self.message()));
        self
    }

    pub fn sign_b(mut self, key: &KeyPair) -> Self {
        self.sig_b = Some(key.sign(&self.message()));
        self
    }
}

/// Moves `delta_to_b` from a to b, signed by both parties, with the next
/// sequence number.
pub fn channel_update(
    ch: &ChannelState,
    delta_to_b: u64,
    key_a: &KeyPair,
    key_b: &KeyPair,
) -> Result<ChannelState, PaymentError> {
    channel_update_at(ch, delta_to_b, ch.sequence + 1, key_a, key_b)
}

/// [`channel_update`] with an explicit sequence number (must exceed the
/// current one).
pub fn channel_update_at(
    ch: &ChannelState,
    delta_to_b: u64,
    sequence: u64,
    key_a: &KeyPair,
    key_b: &KeyPair,
) -> Result<ChannelState, PaymentError> {
    if key_a.owner != ch.party_a || key_b.owner != ch.party_b {
        return Err(PaymentError::KeyMismatch(ch.channel_id));
    }
    let proposal = ChannelUpdate::propose(ch, delta_to_b, sequence)?
        .sign_a(key_a)
        .sign_b(key_b);
    ch.apply(&proposal, &key_a.public(), &key_b.public())
}

/// One record of the append-only ledger log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LedgerRecord {
    Genesis {
        owner: String,
        balance: u64,
    },
    Open {
        channel: u64,
        party_a: String,
        party_b: String,
        deposit_a: u64,
        deposit_b: u64,
    },
    Update {
        channel: u64,
        sequence: u64,
        balance_a: u64,
        balance_b: u64,
    },
    Settle {
        channel: u64,
        sequence: u64,
        balance_a: u64,
        balance_b: u64,
    },
}

/// In-process settlement ledger. All operations are totally ordered.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    accounts: BTreeMap<NodeAddr, u64>,
    keys: KeyDirectory,
    channels: BTreeMap<ChannelId, ChannelState>,
    highest_seen: BTreeMap<ChannelId, u64>,
    log: Vec<LedgerRecord>,
    next_channel: u64,
    minted: u64,
    received: BTreeMap<NodeAddr, u64>,
    spent: BTreeMap<NodeAddr, u64>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates an account with an initial balance.
    pub fn register(&mut self, owner: NodeAddr, public: [u8; 32], balance: u64) {
        self.keys.insert(owner, public);
        *self.accounts.entry(owner).or_insert(0) += balance;
        self.minted += balance;
        self.log.push(LedgerRecord::Genesis {
            owner: owner.to_string(),
            balance,
        });
    }

    pub fn account(&self, owner: &NodeAddr) -> Option<LedgerAccount> {
        self.accounts.get(owner).map(|b| LedgerAccount {
            owner: *owner,
            balance: *b,
        })
    }

    pub fn accounts(&self) -> impl Iterator<Item = LedgerAccount> + '_ {
        self.accounts
            .iter()
            .map(|(o, b)| LedgerAccount { owner: *o, balance: *b })
    }

    pub fn public_key(&self, owner: &NodeAddr) -> Option<&[u8; 32]> {
        self.keys.get(owner)
    }

    pub fn channel(&self, id: ChannelId) -> Option<&ChannelState> {
        self.channels.get(&id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelState> {
        self.channels.values()
    }

    /// Most recently opened open channel in which `payer` pays `payee`.
    pub fn channel_between(&self, payer: NodeAddr, payee: NodeAddr) -> Option<&ChannelState> {
        self.channels
            .values()
            .rev()
            .find(|c| c.is_open() && c.party_a == payer && c.party_b == payee)
    }

    pub fn log(&self) -> &[LedgerRecord] {
        &self.log
    }

    /// Tokens created at genesis.
    pub fn minted(&self) -> u64 {
        self.minted
    }

    /// Account balances plus the pools of open channels.
    pub fn total_tokens(&self) -> u64 {
        self.accounts.values().sum::<u64>()
            + self
                .channels
                .values()
                .filter(|c| c.is_open())
                .map(ChannelState::pool)
                .sum::<u64>()
    }

    /// Tokens `owner` has received through committed channel updates.
    pub fn received(&self, owner: &NodeAddr) -> u64 {
        self.received.get(owner).copied().unwrap_or(0)
    }

    /// Tokens `owner` has paid through committed channel updates.
    pub fn spent(&self, owner: &NodeAddr) -> u64 {
        self.spent.get(owner).copied().unwrap_or(0)
    }

    pub fn open_channel(
        &mut self,
        a: NodeAddr,
        b: NodeAddr,
        deposit_a: u64,
        deposit_b: u64,
    ) -> Result<ChannelState, PaymentError> {
        let have_a = *self.accounts.get(&a).ok_or(PaymentError::UnknownAccount(a))?;
        let have_b = *self.accounts.get(&b).ok_or(PaymentError::UnknownAccount(b))?;
        if have_a < deposit_a {
            return Err(PaymentError::InsufficientBalance {
                owner: a,
                need: deposit_a,
                have: have_a,
            });
        }
        if have_b < deposit_b {
            return Err(PaymentError::InsufficientBalance {
                owner: b,
                need: deposit_b,
                have: have_b,
            });
        }
        *self.accounts.get_mut(&a).expect("checked") -= deposit_a;
        *self.accounts.get_mut(&b).expect("checked") -= deposit_b;
        let id = ChannelId(self.next_channel);
        self.next_channel += 1;
        let ch = ChannelState {
            channel_id: id,
            party_a: a,
            party_b: b,
            deposit_a,
            deposit_b,
            balance_a: deposit_a,
            balance_b: deposit_b,
            sequence: 0,
            sigs: None,
            status: ChannelStatus::Open,
        };
        self.channels.insert(id, ch.clone());
        self.highest_seen.insert(id, 0);
        self.log.push(LedgerRecord::Open {
            channel: id.0,
            party_a: a.to_string(),
            party_b: b.to_string(),
            deposit_a,
            deposit_b,
        });
        Ok(ch)
    }

    /// Records a co-signed off-chain update in the audit log. The update
    /// must be a valid successor of the last recorded state.
    pub fn commit(&mut self, next: &ChannelState) -> Result<(), PaymentError> {
        let id = next.channel_id;
        let cur = self.channels.get(&id).ok_or(PaymentError::UnknownChannel(id))?;
        if !cur.is_open() {
            return Err(PaymentError::NotOpen(id));
        }
        if (next.party_a, next.party_b, next.deposit_a, next.deposit_b)
            != (cur.party_a, cur.party_b, cur.deposit_a, cur.deposit_b)
        {
            return Err(PaymentError::StateMismatch(id));
        }
        let (Some(pa), Some(pb)) = (self.keys.get(&cur.party_a), self.keys.get(&cur.party_b)) else {
            return Err(PaymentError::UnknownAccount(cur.party_a));
        };
        let (Some((sa, sb)), true) = (next.sigs, next.sequence > cur.sequence) else {
            return Err(if next.sigs.is_none() {
                PaymentError::MissingSignature(id)
            } else {
                PaymentError::StaleSequence {
                    channel: id,
                    got: next.sequence,
                    seen: cur.sequence,
                }
            });
        };
        let proposal = ChannelUpdate {
            channel_id: id,
            sequence: next.sequence,
            balance_a: next.balance_a,
            balance_b: next.balance_b,
            sig_a: Some(sa),
            sig_b: Some(sb),
        };
        let applied = cur.apply(&proposal, pa, pb)?;
        let delta = applied.balance_b - cur.balance_b;
        *self.spent.entry(cur.party_a).or_insert(0) += delta;
        *self.received.entry(cur.party_b).or_insert(0) += delta;
        self.highest_seen.insert(id, applied.sequence);
        self.log.push(LedgerRecord::Update {
            channel: id.0,
            sequence: applied.sequence,
            balance_a: applied.balance_a,
            balance_b: applied.balance_b,
        });
        self.channels.insert(id, applied);
        Ok(())
    }

    /// Settles a channel from a state snapshot presented by either party.
    /// Snapshots older than the highest sequence seen are rejected.
    pub fn settle(&mut self, snapshot: &ChannelState) -> Result<(LedgerAccount, LedgerAccount), PaymentError> {
        let id = snapshot.channel_id;
        let cur = self.channels.get(&id).ok_or(PaymentError::UnknownChannel(id))?;
        if !cur.is_open() {
            return Err(PaymentError::NotOpen(id));
        }
        let seen = self.highest_seen.get(&id).copied().unwrap_or(0);
        if snapshot.sequence < seen {
            return Err(PaymentError::StaleSequence {
                channel: id,
                got: snapshot.sequence,
                seen,
            });
        }
        if (
            snapshot.party_a,
            snapshot.party_b,
            snapshot.deposit_a,
            snapshot.deposit_b,
        ) != (cur.party_a, cur.party_b, cur.deposit_a, cur.deposit_b)
            || snapshot.balance_a.checked_add(snapshot.balance_b) != Some(cur.pool())
        {
            return Err(PaymentError::StateMismatch(id));
        }
        if snapshot.sequence == cur.sequence && snapshot != cur {
            return Err(PaymentError::StateMismatch(id));
        }
        let pa = self
            .keys
            .get(&cur.party_a)
            .ok_or(PaymentError::UnknownAccount(cur.party_a))?;
        let pb = self
            .keys
            .get(&cur.party_b)
            .ok_or(PaymentError::UnknownAccount(cur.party_b))?;
        if snapshot.sigs.is_none() && snapshot.sequence > 0 {
            return Err(PaymentError::MissingSignature(id));
        }
        if !snapshot.verify_sigs(pa, pb) {
            return Err(PaymentError::BadSignature(id));
        }
        let (a, b) = (cur.party_a, cur.party_b);
        *self.accounts.get_mut(&a).ok_or(PaymentError::UnknownAccount(a))? += snapshot.balance_a;
        *self.accounts.get_mut(&b).ok_or(PaymentError::UnknownAccount(b))? += snapshot.balance_b;
        let mut settled = snapshot.clone();
        settled.status = ChannelStatus::Settled;
        self.highest_seen.insert(id, snapshot.sequence);
        self.channels.insert(id, settled);
        self.log.push(LedgerRecord::Settle {
            channel: id.0,
            sequence: snapshot.sequence,
            balance_a: snapshot.balance_a,
            balance_b: snapshot.balance_b,
        });
        Ok((
            self.account(&a).expect("registered"),
            self.account(&b).expect("registered"),
        ))
    }

    /// Settles every open channel at its latest state.
    pub fn settle_all(&mut self) -> Result<usize, PaymentError> {
        let open: Vec<ChannelState> = self.channels.values().filter(|c| c.is_open()).cloned().collect();
        for ch in &open {
            self.settle(ch)?;
        }
        Ok(open.len())
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub records: usize,
    pub minted: u64,
    pub final_total: u64,
    pub channels_opened: usize,
    pub updates: usize,
    pub settlements: usize,
}

/// Replays a ledger log and checks that no record creates or destroys
/// tokens, balances never go negative, sequences increase and settlement
/// is terminal.
pub fn audit_log(records: &[LedgerRecord]) -> Result<AuditSummary, String> {
    struct Chan {
        a: String,
        b: String,
        pool: u64,
        balance_b: u64,
        sequence: u64,
        open: bool,
    }
    let mut accounts: BTreeMap<String, u64> = BTreeMap::new();
    let mut chans: BTreeMap<u64, Chan> = BTreeMap::new();
    let mut s = AuditSummary {
        records: records.len(),
        ..Default::default()
    };
    for (i, rec) in records.iter().enumerate() {
        match rec {
            LedgerRecord::Genesis { owner, balance } => {
                *accounts.entry(owner.clone()).or_insert(0) += balance;
                s.minted += balance;
            }
            LedgerRecord::Open {
                channel,
                party_a,
                party_b,
                deposit_a,
                deposit_b,
            } => {
                for (p, d) in [(party_a, deposit_a), (party_b, deposit_b)] {
                    let bal = accounts
                        .get_mut(p)
                        .ok_or_else(|| format!("record {i}: unknown account {p}"))?;
                    *bal = bal
                        .checked_sub(*d)
                        .ok_or_else(|| format!("record {i}: {p} deposits more than it holds"))?;
                }
                if chans.contains_key(channel) {
                    return Err(format!("record {i}: channel {channel} opened twice"));
                }
                chans.insert(
                    *channel,
                    Chan {
                        a: party_a.clone(),
                        b: party_b.clone(),
                        pool: deposit_a + deposit_b,
                        balance_b: *deposit_b,
                        sequence: 0,
                        open: true,
                    },
                );
                s.channels_opened += 1;
            }
            LedgerRecord::Update {
                channel,
                sequence,
                balance_a,
                balance_b,
            }
            | LedgerRecord::Settle {
                channel,
                sequence,
                balance_a,
                balance_b,
            } => {
                let c = chans
                    .get_mut(channel)
                    .ok_or_else(|| format!("record {i}: unknown channel {channel}"))?;
                if !c.open {
                    return Err(format!("record {i}: channel {channel} already settled"));
                }
                if balance_a.checked_add(*balance_b) != Some(c.pool) {
                    return Err(format!("record {i}: channel {channel} pool not conserved"));
                }
                let settle = matches!(rec, LedgerRecord::Settle { .. });
                if settle {
                    if *sequence < c.sequence {
                        return Err(format!("record {i}: stale settlement on channel {channel}"));
                    }
                    *accounts.entry(c.a.clone()).or_insert(0) += balance_a;
                    *accounts.entry(c.b.clone()).or_insert(0) += balance_b;
                    c.open = false;
                    s.settlements += 1;
                } else {
                    if *sequence <= c.sequence || *balance_b < c.balance_b {
                        return Err(format!("record {i}: non-monotone update on channel {channel}"));
                    }
                    s.updates += 1;
                }
                c.sequence = *sequence;
                c.balance_b = *balance_b;
            }
        }
        let total: u64 =
            accounts.values().sum::<u64>() + chans.values().filter(|c| c.open).map(|c| c.pool).sum::<u64>();
        if total != s.minted {
            return Err(format!(
                "record {i}: token total {total} differs from minted {}",
                s.minted
            ));
        }
        s.final_total = total;
    }
    Ok(s)
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<LedgerRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Consumer→producer route with the price of each edge (the price of the
/// node the edge leads to).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopPaymentPlan {
    pub route: Vec<NodeAddr>,
    pub per_hop_cost: Vec<u64>,
    pub total: u64,
}

pub fn plan_payment(route: &[NodeAddr], costs: &BTreeMap<NodeAddr, u64>) -> Result<HopPaymentPlan, PaymentError> {
    let per_hop_cost = route
        .iter()
        .skip(1)
        .map(|a| costs.get(a).copied().ok_or(PaymentError::UnknownHopCost(*a)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HopPaymentPlan {
        route: route.to_vec(),
        total: per_hop_cost.iter().sum(),
        per_hop_cost,
    })
}

/// Ledger plus every node's keys and voucher counters. Stands in for the
/// message exchange in which the payer countersigns a payee's commit.
#[derive(Debug, Default)]
pub struct PaymentNetwork {
    pub ledger: Ledger,
    keys: BTreeMap<NodeAddr, KeyPair>,
    voucher_seq: BTreeMap<ChannelId, u64>,
}

impl PaymentNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_party(&mut self, key: KeyPair, balance: u64) {
        self.ledger.register(key.owner, key.public(), balance);
        self.keys.insert(key.owner, key);
    }

    pub fn key(&self, owner: &NodeAddr) -> Option<&KeyPair> {
        self.keys.get(owner)
    }

    /// Signs a voucher from `payer` to `payee` on their open channel.
    pub fn issue_payment(&mut self, payer: NodeAddr, payee: NodeAddr, amount: u64) -> Result<Payment, PaymentError> {
        let ch = self
            .ledger
            .channel_between(payer, payee)
            .ok_or(PaymentError::NoChannel { from: payer, to: payee })?;
        let id = ch.channel_id;
        let last = self.voucher_seq.get(&id).copied().unwrap_or(0).max(ch.sequence);
        let sequence = last + 1;
        let key = self.keys.get(&payer).ok_or(PaymentError::UnknownAccount(payer))?;
        let payer_sig = key.sign(&voucher_message(id, sequence, amount)).to_vec();
        self.voucher_seq.insert(id, sequence);
        Ok(Payment {
            channel_id: id,
            amount,
            sequence,
            payer_sig,
        })
    }

    /// Hop-by-hop relay step. Verifies the payer's voucher, keeps `my_cost`
    /// and returns the voucher for the remainder toward `next_hop` (`None`
    /// at the producer). Nothing is mutated when the payment is rejected.
    pub fn relay_process_payment(
        &mut self,
        me: NodeAddr,
        from: NodeAddr,
        incoming: &Payment,
        my_cost: u64,
        next_hop: Option<NodeAddr>,
    ) -> Result<Option<Payment>, PaymentError> {
        let id = incoming.channel_id;
        let ch = self.ledger.channel(id).ok_or(PaymentError::UnknownChannel(id))?.clone();
        if !ch.is_open() {
            return Err(PaymentError::NotOpen(id));
        }
        if ch.party_a != from || ch.party_b != me {
            return Err(PaymentError::NoChannel { from, to: me });
        }
        let payer_pub = self
            .ledger
            .public_key(&from)
            .ok_or(PaymentError::UnknownAccount(from))?;
        let msg = voucher_message(id, incoming.sequence, incoming.amount);
        if !verify_signature(payer_pub, &msg, &incoming.payer_sig) {
            return Err(PaymentError::BadSignature(id));
        }
        if incoming.sequence <= ch.sequence {
            return Err(PaymentError::StaleSequence {
                channel: id,
                got: incoming.sequence,
                seen: ch.sequence,
            });
        }
        if incoming.amount > ch.balance_a {
            return Err(PaymentError::Overdraw {
                channel: id,
                amount: incoming.amount,
                balance: ch.balance_a,
            });
        }
        if incoming.amount < my_cost {
            return Err(PaymentError::InsufficientPayment {
                amount: incoming.amount,
                cost: my_cost,
            });
        }
        let remainder = incoming.amount - my_cost;
        if let Some(next) = next_hop {
            let out = self
                .ledger
                .channel_between(me, next)
                .ok_or(PaymentError::NoChannel { from: me, to: next })?;
            if remainder > out.balance_a {
                return Err(PaymentError::Overdraw {
                    channel: out.channel_id,
                    amount: remainder,
                    balance: out.balance_a,
                });
            }
        }
        let (ka, kb) = match (self.keys.get(&from), self.keys.get(&me)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(PaymentError::UnknownAccount(me)),
        };
        let next_state = channel_update_at(&ch, incoming.amount, incoming.sequence, ka, kb)?;
        self.ledger.commit(&next_state)?;
        match next_hop {
            Some(next) => self.issue_payment(me, next, remainder).map(Some),
            None => Ok(None),
        }
    }

    /// Pays every node on `path` directly over consumer→node channels.
    /// All-or-nothing: any missing or underfunded channel aborts the whole
    /// operation before anything is committed.
    pub fn consumer_pay_all(
        &mut self,
        consumer: NodeAddr,
        path: &[NodeAddr],
        per_node_amounts: &[u64],
    ) -> Result<Vec<ChannelState>, PaymentError> {
        assert_eq!(path.len(), per_node_amounts.len(), "one amount per node");
        let mut planned = Vec::with_capacity(path.len());
        for (node, amount) in path.iter().zip(per_node_amounts) {
            let ch = self
                .ledger
                .channel_between(consumer, *node)
                .ok_or(PaymentError::NoChannel {
                    from: consumer,
                    to: *node,
                })?
                .clone();
            if *amount > ch.balance_a {
                return Err(PaymentError::Overdraw {
                    channel: ch.channel_id,
                    amount: *amount,
                    balance: ch.balance_a,
                });
            }
            let ka = self.keys.get(&consumer).ok_or(PaymentError::UnknownAccount(consumer))?;
            let kb = self.keys.get(node).ok_or(PaymentError::UnknownAccount(*node))?;
            planned.push(channel_update(&ch, *amount, ka, kb)?);
        }
        for st in &planned {
            self.ledger.commit(st)?;
        }
        Ok(planned)
    }
}
