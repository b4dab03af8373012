//! Payment-channel state machine and on-chain settlement.
//!
//! Channels here follow the Lightning construction closely enough for timing
//! attacks to be meaningful, and no closer. A channel is a capacity split
//! into two settled balances plus a set of in-flight HTLCs; every state
//! update revokes the previous state; a revoked state broadcast on-chain can
//! be punished with a justice transaction during a contest window of
//! `csv_delta` blocks. HTLC outputs resolve by preimage or by timeout, and
//! two spends of the same output race: whichever confirms first wins.
//! Hashes and preimages are opaque 32-byte tokens compared for equality —
//! no real hashing is involved, because nothing here attacks the hash.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Satoshi amounts.
pub type Sats = u64;

/// Opaque 32-byte payment preimage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaymentPreimage(pub [u8; 32]);

/// Opaque 32-byte payment hash. Pairing with a preimage is token equality:
/// `PaymentPreimage(b)` matches `PaymentHash(b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PaymentHash(pub [u8; 32]);

impl PaymentPreimage {
    pub fn hash(&self) -> PaymentHash {
        PaymentHash(self.0)
    }
}

impl fmt::Display for PaymentHash {
    /// The first four bytes identify a hash in trace output.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Which side of the channel offered an HTLC, from the local party's
/// perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HtlcDirection {
    /// Local funds escrowed, payable to remote against the preimage.
    Offered,
    /// Remote funds escrowed, payable to local against the preimage.
    Received,
}

/// An in-flight hash-time-locked payment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Htlc {
    pub amount: Sats,
    pub payment_hash: PaymentHash,
    /// Absolute block height at which the refund path becomes valid.
    pub expiry_height: u64,
    pub direction: HtlcDirection,
}

/// Channel parameters of the four mainstream node implementations.
///
/// `csv_delta` is the revocation contest window, `cltv_delta` the per-hop
/// HTLC expiry gap a routing node enforces, and `timeout_policy` how many
/// blocks before an accepted HTLC's expiry the holder goes on-chain to
/// claim it with the preimage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImplementationPreset {
    pub name: &'static str,
    pub csv_delta: u32,
    /// Upper end of the negotiable range, where an implementation scales
    /// the contest window with channel value.
    pub csv_delta_max: Option<u32>,
    pub cltv_delta: u32,
    pub timeout_policy: u32,
}

pub const C_LIGHTNING: ImplementationPreset = ImplementationPreset {
    name: "c-lightning",
    csv_delta: 144,
    csv_delta_max: None,
    cltv_delta: 14,
    timeout_policy: 7,
};

pub const LND: ImplementationPreset = ImplementationPreset {
    name: "lnd",
    csv_delta: 144,
    csv_delta_max: Some(2016),
    cltv_delta: 40,
    timeout_policy: 10,
};

pub const ECLAIR: ImplementationPreset = ImplementationPreset {
    name: "eclair",
    csv_delta: 720,
    csv_delta_max: None,
    cltv_delta: 144,
    timeout_policy: 11,
};

pub const RUST_LIGHTNING: ImplementationPreset = ImplementationPreset {
    name: "rust-lightning",
    csv_delta: 144,
    csv_delta_max: None,
    cltv_delta: 72,
    timeout_policy: 6,
};

pub const PRESETS: [ImplementationPreset; 4] = [C_LIGHTNING, LND, ECLAIR, RUST_LIGHTNING];

impl ImplementationPreset {
    pub fn by_name(name: &str) -> Option<ImplementationPreset> {
        PRESETS.iter().copied().find(|p| p.name == name)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("amounts must be positive")]
    NonPositiveAmount,
    #[error("initial balance exceeds the channel capacity")]
    BadOpeningSplit,
    #[error("insufficient settled balance: need {need} sat, have {have} sat")]
    InsufficientBalance { need: Sats, have: Sats },
    #[error("update would leave a party below its {reserve}-sat reserve")]
    ReserveViolated { reserve: Sats },
    #[error("in-flight total {in_flight} sat exceeds the {cap}-sat cap")]
    InflightCapExceeded { in_flight: Sats, cap: Sats },
    #[error("explicit balances {proposed:?} break conservation; settled funds total {settled}")]
    ConservationViolated { proposed: (Sats, Sats), settled: Sats },
    #[error("no in-flight HTLC with that payment hash")]
    UnknownHtlc,
    #[error("an HTLC with that payment hash is already in flight")]
    DuplicateHtlc,
    #[error("preimage does not match the payment hash")]
    PreimageMismatch,
    #[error("HTLC expiry {expiry} must be beyond the current height {height}")]
    ExpiryNotInFuture { expiry: u64, height: u64 },
    #[error("route hop delta must be at least one block")]
    ZeroHopDelta,
}

/// One committed channel state, retained so that old (revoked) states can
/// be broadcast and punished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    pub state_number: u64,
    pub balance_local: Sats,
    pub balance_remote: Sats,
    pub htlcs: Vec<Htlc>,
}

/// An operation inside a state update.
#[derive(Debug, Clone, Copy)]
pub enum HtlcOp {
    Add { direction: HtlcDirection, amount: Sats, payment_hash: PaymentHash, expiry_height: u64 },
    /// Resolve with the preimage: the escrowed amount goes to the receiving
    /// side.
    Settle { payment_hash: PaymentHash, preimage: PaymentPreimage },
    /// Cancel: the escrowed amount returns to the offerer.
    Fail { payment_hash: PaymentHash },
}

/// The live channel, as both parties currently agree on it.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub capacity: Sats,
    /// Minimum settled balance a party must keep once its balance has ever
    /// exceeded it; skin in the game that a cheater forfeits.
    pub reserve: Sats,
    /// Cap on the sum of in-flight HTLC amounts.
    pub max_inflight: Sats,
    pub balance_local: Sats,
    pub balance_remote: Sats,
    pub htlcs: Vec<Htlc>,
    pub state_number: u64,
    history: Vec<StateSnapshot>,
    local_was_above_reserve: bool,
    remote_was_above_reserve: bool,
}

impl ChannelState {
    /// Open with an explicit initial split. `max_inflight` defaults to the
    /// capacity when `None`.
    pub fn open(
        capacity: Sats,
        balance_local: Sats,
        reserve: Sats,
        max_inflight: Option<Sats>,
    ) -> Result<Self, ChannelError> {
        if capacity == 0 {
            return Err(ChannelError::NonPositiveAmount);
        }
        if balance_local > capacity {
            return Err(ChannelError::BadOpeningSplit);
        }
        let balance_remote = capacity - balance_local;
        let mut ch = ChannelState {
            capacity,
            reserve,
            max_inflight: max_inflight.unwrap_or(capacity),
            balance_local,
            balance_remote,
            htlcs: Vec::new(),
            state_number: 0,
            history: Vec::new(),
            local_was_above_reserve: balance_local > reserve,
            remote_was_above_reserve: balance_remote > reserve,
        };
        ch.history.push(ch.snapshot_current());
        Ok(ch)
    }

    fn snapshot_current(&self) -> StateSnapshot {
        StateSnapshot {
            state_number: self.state_number,
            balance_local: self.balance_local,
            balance_remote: self.balance_remote,
            htlcs: self.htlcs.clone(),
        }
    }

    pub fn in_flight_total(&self) -> Sats {
        self.htlcs.iter().map(|h| h.amount).sum()
    }

    /// `capacity == balance_local + balance_remote + in-flight` at every
    /// committed state.
    pub fn conserves_capacity(&self) -> bool {
        self.balance_local + self.balance_remote + self.in_flight_total() == self.capacity
    }

    pub fn snapshot(&self, state_number: u64) -> Option<&StateSnapshot> {
        self.history.get(state_number as usize)
    }

    pub fn is_revoked(&self, state_number: u64) -> bool {
        state_number < self.state_number
    }

    pub fn find_htlc(&self, hash: &PaymentHash) -> Option<&Htlc> {
        self.htlcs.iter().find(|h| h.payment_hash == *hash)
    }

    /// Negotiate the next state: apply `htlc_ops`, then an optional
    /// explicit re-split of the settled balances (a plain payment).
    /// Validates every channel invariant and leaves the state untouched on
    /// any error; on success the previous state becomes revoked.
    pub fn update_state(
        &mut self,
        new_balances: Option<(Sats, Sats)>,
        htlc_ops: &[HtlcOp],
        at_height: u64,
    ) -> Result<(), ChannelError> {
        let mut local = self.balance_local;
        let mut remote = self.balance_remote;
        let mut htlcs = self.htlcs.clone();

        for op in htlc_ops {
            match *op {
                HtlcOp::Add { direction, amount, payment_hash, expiry_height } => {
                    if amount == 0 {
                        return Err(ChannelError::NonPositiveAmount);
                    }
                    if expiry_height <= at_height {
                        return Err(ChannelError::ExpiryNotInFuture {
                            expiry: expiry_height,
                            height: at_height,
                        });
                    }
                    if htlcs.iter().any(|h| h.payment_hash == payment_hash) {
                        return Err(ChannelError::DuplicateHtlc);
                    }
                    let escrow_from = match direction {
                        HtlcDirection::Offered => &mut local,
                        HtlcDirection::Received => &mut remote,
                    };
                    if *escrow_from < amount {
                        return Err(ChannelError::InsufficientBalance {
                            need: amount,
                            have: *escrow_from,
                        });
                    }
                    *escrow_from -= amount;
                    htlcs.push(Htlc { amount, payment_hash, expiry_height, direction });
                }
                HtlcOp::Settle { payment_hash, preimage } => {
                    let idx = htlcs
                        .iter()
                        .position(|h| h.payment_hash == payment_hash)
                        .ok_or(ChannelError::UnknownHtlc)?;
                    if preimage.hash() != payment_hash {
                        return Err(ChannelError::PreimageMismatch);
                    }
                    let htlc = htlcs.remove(idx);
                    match htlc.direction {
                        HtlcDirection::Offered => remote += htlc.amount,
                        HtlcDirection::Received => local += htlc.amount,
                    }
                }
                HtlcOp::Fail { payment_hash } => {
                    let idx = htlcs
                        .iter()
                        .position(|h| h.payment_hash == payment_hash)
                        .ok_or(ChannelError::UnknownHtlc)?;
                    let htlc = htlcs.remove(idx);
                    match htlc.direction {
                        HtlcDirection::Offered => local += htlc.amount,
                        HtlcDirection::Received => remote += htlc.amount,
                    }
                }
            }
        }

        if let Some((l, r)) = new_balances {
            if l + r != local + remote {
                return Err(ChannelError::ConservationViolated {
                    proposed: (l, r),
                    settled: local + remote,
                });
            }
            local = l;
            remote = r;
        }

        let in_flight: Sats = htlcs.iter().map(|h| h.amount).sum();
        if in_flight > self.max_inflight {
            return Err(ChannelError::InflightCapExceeded { in_flight, cap: self.max_inflight });
        }
        if (self.local_was_above_reserve && local < self.reserve)
            || (self.remote_was_above_reserve && remote < self.reserve)
        {
            return Err(ChannelError::ReserveViolated { reserve: self.reserve });
        }
        debug_assert_eq!(local + remote + in_flight, self.capacity, "conservation broke");

        self.balance_local = local;
        self.balance_remote = remote;
        self.htlcs = htlcs;
        self.local_was_above_reserve |= local > self.reserve;
        self.remote_was_above_reserve |= remote > self.reserve;
        self.state_number += 1;
        self.history.push(self.snapshot_current());
        Ok(())
    }
}

/// A payment path's HTLC expiries, outermost (payer-side) hop first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub expiries: Vec<u64>,
}

/// Assign HTLC expiries backwards from the payee: the final HTLC expires at
/// `current_height + final_delta`, and each earlier hop adds that hop's
/// `cltv_delta` so every routing node keeps its safety margin.
pub fn build_route(
    current_height: u64,
    hop_cltv_deltas: &[u32],
    final_delta: u32,
) -> Result<Route, ChannelError> {
    if final_delta == 0 {
        return Err(ChannelError::ZeroHopDelta);
    }
    let mut expiry = current_height + final_delta as u64;
    let mut expiries = vec![expiry];
    for delta in hop_cltv_deltas.iter().rev() {
        if *delta == 0 {
            return Err(ChannelError::ZeroHopDelta);
        }
        expiry += *delta as u64;
        expiries.push(expiry);
    }
    expiries.reverse();
    Ok(Route { expiries })
}

/// Heights at which a justice transaction can confirm against a commitment
/// confirmed at `confirmed_at`: the window is inclusive on both ends, and
/// the cheater's own sweep becomes valid one block after it closes.
pub fn justice_window(confirmed_at: u64, csv_delta: u32) -> (u64, u64) {
    (confirmed_at, confirmed_at + csv_delta as u64 - 1)
}

/// A transaction handed to the chain for confirmation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnChainTx {
    /// Close the channel at a given state. Broadcasting a revoked state is
    /// the cheating move.
    Commitment { state_number: u64 },
    /// Refund an expired HTLC to its offerer (broadcast by the party who
    /// closed the channel).
    HtlcTimeout { hash: PaymentHash },
    /// Claim an HTLC with its preimage (broadcast by the party who closed
    /// the channel).
    HtlcSuccess { hash: PaymentHash, preimage: PaymentPreimage },
    /// Claim an HTLC with its preimage on the counterparty's commitment.
    Preimage { hash: PaymentHash, preimage: PaymentPreimage },
    /// Refund an expired HTLC on the counterparty's commitment.
    Timeout { hash: PaymentHash },
    /// Punish a revoked commitment: confiscate every output the cheater
    /// could claim. Valid only inside the contest window.
    Justice { state_number: u64 },
}

impl OnChainTx {
    pub fn label(&self) -> &'static str {
        match self {
            OnChainTx::Commitment { .. } => "commitment",
            OnChainTx::HtlcTimeout { .. } => "htlc-timeout",
            OnChainTx::HtlcSuccess { .. } => "htlc-success",
            OnChainTx::Preimage { .. } => "preimage-claim",
            OnChainTx::Timeout { .. } => "timeout-claim",
            OnChainTx::Justice { .. } => "justice",
        }
    }
}

/// Why a broadcast did not confirm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// A conflicting spend of the same output is already confirmed.
    ConflictingSpend,
    /// The transaction's timelock has not matured at this height.
    NotYetValid,
    /// The justice window has closed (or the sweep already resolved it).
    ContestWindowClosed,
    /// No commitment is on-chain yet, so second-level spends have nothing
    /// to spend.
    NoCommitmentOnChain,
    /// The referenced state was never committed in this channel.
    UnknownState,
    /// The referenced HTLC does not exist in the confirmed state.
    UnknownHtlc,
    /// The supplied preimage does not match the HTLC's hash.
    PreimageMismatch,
    /// Justice only applies to revoked states.
    NotRevoked,
}

impl RejectReason {
    pub fn label(&self) -> &'static str {
        match self {
            RejectReason::ConflictingSpend => "conflicting-spend",
            RejectReason::NotYetValid => "not-yet-valid",
            RejectReason::ContestWindowClosed => "contest-window-closed",
            RejectReason::NoCommitmentOnChain => "no-commitment-on-chain",
            RejectReason::UnknownState => "unknown-state",
            RejectReason::UnknownHtlc => "unknown-htlc",
            RejectReason::PreimageMismatch => "preimage-mismatch",
            RejectReason::NotRevoked => "not-revoked",
        }
    }
}

/// Result of handing a transaction to the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastOutcome {
    Confirmed { height: u64 },
    Rejected { reason: RejectReason },
}

impl BroadcastOutcome {
    pub fn confirmed(&self) -> bool {
        matches!(self, BroadcastOutcome::Confirmed { .. })
    }
}

/// How an HTLC output was resolved on-chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HtlcResolution {
    RefundedToOfferer { height: u64 },
    PaidWithPreimage { height: u64 },
}

/// How the broadcast commitment's revocable outputs ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContestOutcome {
    /// The wronged party confiscated everything inside the window.
    JusticeConfirmed { height: u64 },
    /// The window passed; the broadcaster swept their balance.
    Swept { height: u64 },
}

/// Per-channel on-chain settlement: which commitment confirmed, how each
/// HTLC output resolved, and how the contest ended. Confirmation is modeled
/// at block granularity — a transaction confirms *at* a height — and the
/// first confirmed spend of an output excludes every later one.
#[derive(Debug, Clone)]
pub struct Settlement {
    /// Contest window length negotiated for this channel.
    csv_delta: u32,
    commitment: Option<(u64, u64)>, // (state_number, confirmed_at)
    htlc_resolutions: BTreeMap<PaymentHash, HtlcResolution>,
    contest: Option<ContestOutcome>,
}

impl Settlement {
    pub fn new(csv_delta: u32) -> Self {
        Settlement {
            csv_delta,
            commitment: None,
            htlc_resolutions: BTreeMap::new(),
            contest: None,
        }
    }

    pub fn csv_delta(&self) -> u32 {
        self.csv_delta
    }

    /// `(state_number, confirmed_at)` of the confirmed commitment, if any.
    pub fn commitment(&self) -> Option<(u64, u64)> {
        self.commitment
    }

    pub fn htlc_resolution(&self, hash: &PaymentHash) -> Option<HtlcResolution> {
        self.htlc_resolutions.get(hash).copied()
    }

    pub fn contest(&self) -> Option<ContestOutcome> {
        self.contest
    }

    /// Hand a transaction to the chain at `at_height`. It confirms if its
    /// timelock (if any) has matured and no conflicting spend confirmed
    /// first; otherwise the caller learns why.
    pub fn broadcast(
        &mut self,
        channel: &ChannelState,
        tx: &OnChainTx,
        at_height: u64,
    ) -> BroadcastOutcome {
        use BroadcastOutcome::{Confirmed, Rejected};
        match *tx {
            OnChainTx::Commitment { state_number } => {
                if self.commitment.is_some() {
                    return Rejected { reason: RejectReason::ConflictingSpend };
                }
                if channel.snapshot(state_number).is_none() {
                    return Rejected { reason: RejectReason::UnknownState };
                }
                self.commitment = Some((state_number, at_height));
                Confirmed { height: at_height }
            }
            OnChainTx::HtlcTimeout { hash } | OnChainTx::Timeout { hash } => {
                let htlc = match self.confirmed_htlc(channel, &hash) {
                    Ok(h) => h,
                    Err(reason) => return Rejected { reason },
                };
                if at_height < htlc.expiry_height {
                    return Rejected { reason: RejectReason::NotYetValid };
                }
                if self.htlc_resolutions.contains_key(&hash) {
                    return Rejected { reason: RejectReason::ConflictingSpend };
                }
                self.htlc_resolutions
                    .insert(hash, HtlcResolution::RefundedToOfferer { height: at_height });
                Confirmed { height: at_height }
            }
            OnChainTx::HtlcSuccess { hash, preimage } | OnChainTx::Preimage { hash, preimage } => {
                if let Err(reason) = self.confirmed_htlc(channel, &hash) {
                    return Rejected { reason };
                }
                if preimage.hash() != hash {
                    return Rejected { reason: RejectReason::PreimageMismatch };
                }
                if self.htlc_resolutions.contains_key(&hash) {
                    return Rejected { reason: RejectReason::ConflictingSpend };
                }
                self.htlc_resolutions
                    .insert(hash, HtlcResolution::PaidWithPreimage { height: at_height });
                Confirmed { height: at_height }
            }
            OnChainTx::Justice { state_number } => {
                let (confirmed_state, confirmed_at) = match self.commitment {
                    Some(c) => c,
                    None => return Rejected { reason: RejectReason::NoCommitmentOnChain },
                };
                if confirmed_state != state_number {
                    return Rejected { reason: RejectReason::UnknownState };
                }
                if !channel.is_revoked(state_number) {
                    return Rejected { reason: RejectReason::NotRevoked };
                }
                if self.contest.is_some() {
                    return Rejected { reason: RejectReason::ConflictingSpend };
                }
                if at_height < confirmed_at {
                    return Rejected { reason: RejectReason::NotYetValid };
                }
                let (_, window_end) = justice_window(confirmed_at, self.csv_delta);
                if at_height > window_end {
                    return Rejected { reason: RejectReason::ContestWindowClosed };
                }
                self.contest = Some(ContestOutcome::JusticeConfirmed { height: at_height });
                Confirmed { height: at_height }
            }
        }
    }

    /// The broadcaster's sweep of their own commitment balance: valid once
    /// the contest window has fully passed, i.e. `csv_delta` blocks after
    /// confirmation, and only if no justice transaction landed first. A
    /// justice attempt arriving at the sweep height is already too late.
    pub fn try_sweep(&mut self, at_height: u64) -> bool {
        let (_, confirmed_at) = match self.commitment {
            Some(c) => c,
            None => return false,
        };
        if self.contest.is_some() {
            return false;
        }
        if at_height >= confirmed_at + self.csv_delta as u64 {
            self.contest = Some(ContestOutcome::Swept { height: at_height });
            true
        } else {
            false
        }
    }

    fn confirmed_htlc(
        &self,
        channel: &ChannelState,
        hash: &PaymentHash,
    ) -> Result<Htlc, RejectReason> {
        let (state_number, _) = self.commitment.ok_or(RejectReason::NoCommitmentOnChain)?;
        let snapshot = channel.snapshot(state_number).ok_or(RejectReason::UnknownState)?;
        snapshot
            .htlcs
            .iter()
            .find(|h| h.payment_hash == *hash)
            .copied()
            .ok_or(RejectReason::UnknownHtlc)
    }
}
