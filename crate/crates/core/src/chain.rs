//! Blocks, chain views, and Poisson mining.
//!
//! The chain model is intentionally thin: a block is a height plus the time
//! it was mined, and a view is whatever prefix of the chain a party has seen.
//! Consensus, forks, and difficulty are out of scope — the attacks modeled
//! here are about *when* honest blocks reach the victim, not about mining
//! power.

use serde::Serialize;

use crate::sim::{RandomSource, SimTime};

/// A mined block. Heights are consecutive from 0; block 0 is the common
/// starting tip that both the network and the victim hold at time zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Block {
    pub height: u64,
    pub mined_at: SimTime,
}

/// One party's knowledge of the chain: the highest block it has accepted and
/// when it accepted it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainView {
    pub tip_height: u64,
    pub tip_seen_at: SimTime,
}

impl ChainView {
    /// The shared starting point: block 0, seen at time zero.
    pub fn genesis() -> Self {
        ChainView { tip_height: 0, tip_seen_at: SimTime::ZERO }
    }
}

/// Sample `count` block arrivals with exponentially distributed gaps of the
/// given mean, returning blocks at heights `1..=count` with cumulative mined
/// times. Gap quantization (whole seconds, minimum 1) makes mined times
/// strictly increasing.
pub fn mine_sequence(count: u64, mean_interval_secs: u64, rng: &mut RandomSource) -> Vec<Block> {
    let mut blocks = Vec::with_capacity(count as usize);
    let mut at = SimTime::ZERO;
    for height in 1..=count {
        at += rng.sample_exponential(mean_interval_secs);
        blocks.push(Block { height, mined_at: at });
    }
    blocks
}

/// How many blocks ahead of `victim` the attacker's view is. Negative only
/// if the victim somehow got ahead, which no modeled schedule produces.
pub fn lead(attacker: &ChainView, victim: &ChainView) -> i64 {
    attacker.tip_height as i64 - victim.tip_height as i64
}
