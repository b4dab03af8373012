//! Simulation clock, event queue, and the deterministic random source.
//!
//! Everything in this crate that consumes randomness draws from
//! [`RandomSource`], and every timed action flows through [`EventQueue`].
//! Together they give the portability contract the rest of the toolkit
//! relies on: a trial replayed with the same seed and configuration yields a
//! byte-identical event trace, on any platform.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::Serialize;
use thiserror::Error;

use crate::channel::PaymentHash;

/// Simulated time in whole seconds since the start of the trial.
///
/// Integer seconds keep arithmetic exact: there is no float drift to make
/// two platforms disagree about event order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn as_secs(self) -> u64 {
        self.0
    }

    pub fn as_hours(self) -> f64 {
        self.0 as f64 / 3600.0
    }

    /// Seconds elapsed since `earlier`. Saturates at zero rather than
    /// wrapping; callers compare views that can momentarily be ahead.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, secs: u64) -> SimTime {
        SimTime(self.0 + secs)
    }
}

impl AddAssign<u64> for SimTime {
    fn add_assign(&mut self, secs: u64) {
        self.0 += secs;
    }
}

impl Sub<SimTime> for SimTime {
    type Output = u64;
    fn sub(self, rhs: SimTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

/// Errors from the simulation plumbing itself (as opposed to model-level
/// failures, which are ordinary outcomes).
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    /// An event was scheduled before the current clock. That is always a
    /// programming error in a trial driver, never valid model behavior, so
    /// the trial must abort rather than silently reorder history.
    #[error("event scheduled at {at} but the clock is already at {clock}")]
    ScheduledInPast { at: SimTime, clock: SimTime },
    /// A trial ran past its configured block horizon without resolving.
    #[error("trial exceeded the {horizon}-block horizon without resolving")]
    HorizonExceeded { horizon: u64 },
}

/// Payloads carried by queue entries in the dilation and scenario loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    /// The honest network mined a block.
    BlockMined { height: u64 },
    /// The attacker released a block to the victim.
    BlockDelivered { height: u64 },
    /// The victim wakes up to compare its tip age against the stale window.
    /// `generation` invalidates checks that a fresh delivery superseded.
    StaleTipCheck { generation: u64 },
    /// An HTLC's absolute expiry height was reached on the real chain.
    HtlcExpiry { hash: PaymentHash },
    /// A party hands a transaction to the network for confirmation.
    Broadcast { label: &'static str },
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimEvent::BlockMined { height } => write!(f, "mined h={height}"),
            SimEvent::BlockDelivered { height } => write!(f, "delivered h={height}"),
            SimEvent::StaleTipCheck { generation } => write!(f, "stale-check gen={generation}"),
            SimEvent::HtlcExpiry { hash } => write!(f, "htlc-expiry {hash}"),
            SimEvent::Broadcast { label } => write!(f, "broadcast {label}"),
        }
    }
}

#[derive(Debug)]
struct Entry<T> {
    at: SimTime,
    seq: u64,
    payload: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl<T> Eq for Entry<T> {}
impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Time-ordered event queue with FIFO tie-breaking.
///
/// Events scheduled for the same second pop in insertion order, which makes
/// simultaneity deterministic instead of heap-implementation-defined. The
/// queue also owns the trial clock: popping an event advances it, and
/// scheduling behind it is rejected.
#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    next_seq: u64,
    clock: SimTime,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, clock: SimTime::ZERO }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedule `payload` for time `at`. `at` may equal the current clock
    /// (same-second reactions are normal); it may not precede it.
    pub fn schedule(&mut self, at: SimTime, payload: T) -> Result<(), SimError> {
        if at < self.clock {
            return Err(SimError::ScheduledInPast { at, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, payload }));
        Ok(())
    }

    /// Pop the earliest event, advancing the clock to its timestamp.
    pub fn pop(&mut self) -> Option<(SimTime, T)> {
        let Reverse(entry) = self.heap.pop()?;
        debug_assert!(entry.at >= self.clock, "event queue clock went backwards");
        self.clock = entry.at;
        Some((entry.at, entry.payload))
    }

    /// Timestamp of the next event without popping it.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    /// The next event without popping it.
    pub fn peek(&self) -> Option<(SimTime, &T)> {
        self.heap.peek().map(|Reverse(e)| (e.at, &e.payload))
    }
}

/// Seeded random source with a fully specified, platform-independent
/// algorithm, so non-Rust reimplementations can reproduce traces exactly.
///
/// - Generator: **xoshiro256++** (Blackman & Vigna). State is four `u64`
///   words; `next_u64` returns `rotl(s0 + s3, 23) + s0` and applies the
///   reference state transition.
/// - Seeding: the four state words are the first four outputs of
///   **SplitMix64** run from the `u64` seed, per the generator authors'
///   recommended bootstrap. A seed of any value (including 0) is valid.
/// - Floats: `next_f64` maps the top 53 bits to `[0, 1)` as
///   `(x >> 11) * 2^-53`.
/// - Exponential deltas: inverse CDF on `(0, 1]` — see
///   [`RandomSource::sample_exponential`].
/// - Bounded integers: Lemire's multiply-and-reject method — see
///   [`RandomSource::next_below`].
///
/// `f64::ln` from the host libm is *not* used anywhere; the exponential
/// sampler calls [`libm::log`], whose result is identical on every platform.
#[derive(Debug, Clone)]
pub struct RandomSource {
    state: [u64; 4],
}

/// One step of the SplitMix64 sequence; returns the mixed output and
/// advances `state`. Public so seed-derivation schemes (per-trial seeds in
/// the Monte-Carlo harness) share the exact same arithmetic.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-trial seed: mixes a base seed with a trial index so
/// parallel trials draw from disjoint, reproducible streams regardless of
/// thread scheduling.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut s = base ^ index.wrapping_mul(0xA076_1D64_78BD_642F);
    splitmix64(&mut s)
}

impl RandomSource {
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        RandomSource { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw: `true` with probability `p` (clamped to `[0, 1]`).
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Unbiased uniform integer in `[0, n)` via Lemire's method. `n` must be
    /// nonzero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires a nonzero bound");
        let mut m = self.next_u64() as u128 * n as u128;
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = self.next_u64() as u128 * n as u128;
            }
        }
        (m >> 64) as u64
    }

    /// Exponentially distributed delay with the given mean, quantized to
    /// whole seconds.
    ///
    /// Algorithm, exactly: draw `x = next_u64()`; form
    /// `u = ((x >> 11) + 1) * 2^-53`, a uniform draw on `(0, 1]` (the `+ 1`
    /// keeps `ln` away from zero); compute `-mean * ln(u)` with
    /// [`libm::log`]; round half-up to an integer; clamp to a minimum of
    /// one second so an event never lands on its own cause.
    pub fn sample_exponential(&mut self, mean_secs: u64) -> u64 {
        debug_assert!(mean_secs > 0, "exponential mean must be positive");
        let x = self.next_u64();
        let u = ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let raw = -(mean_secs as f64) * libm::log(u);
        let rounded = libm::floor(raw + 0.5) as u64;
        rounded.max(1)
    }

    /// 32 opaque bytes, for payment preimages and similar tokens.
    pub fn token32(&mut self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for chunk in out.chunks_exact_mut(8) {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        out
    }
}
