//! Eclipse odds, de-eclipse resolution, and eclipse verification probes.
//!
//! Before any dilation can start, the attacker must own every peer slot the
//! victim has. This module answers three questions. How likely is that,
//! given a sybil population ([`eclipse_probability`])? When a suspicious
//! victim opens an extra connection, does the eclipse survive
//! ([`resolve_de_eclipse`])? And how does the attacker *verify* the eclipse
//! before betting money on it ([`transaction_probe`], [`block_probe`])?

use thiserror::Error;

use crate::chain::Block;
use crate::sim::RandomSource;

/// The peer population the victim draws connections from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SybilPool {
    /// Attacker-controlled candidate peers (N_a).
    pub attacker_nodes: u64,
    /// Honest candidate peers (N_h).
    pub honest_nodes: u64,
    /// Outbound connections the victim opens (C).
    pub outbound_count: u32,
    /// Fraction of the victim's address manager already poisoned with
    /// attacker addresses, in `[0, 1]`. Raises the odds that even a fresh
    /// connection lands on the attacker.
    pub addrman_poisoning: f64,
}

impl Default for SybilPool {
    fn default() -> Self {
        SybilPool {
            attacker_nodes: 500,
            honest_nodes: 50,
            outbound_count: 8,
            addrman_poisoning: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EclipseError {
    #[error("peer pool is empty; cannot draw connections")]
    EmptyPool,
    #[error("outbound count {outbound} exceeds pool size {pool} for draws without replacement")]
    PoolTooSmall { outbound: u32, pool: u64 },
}

/// Probability that every one of the victim's outbound connections lands on
/// an attacker node, with peers drawn independently and uniformly from the
/// pool: `(N_a / (N_h + N_a))^C`.
pub fn eclipse_probability(pool: &SybilPool) -> Result<f64, EclipseError> {
    let total = pool.attacker_nodes + pool.honest_nodes;
    if total == 0 {
        return Err(EclipseError::EmptyPool);
    }
    let per_draw = pool.attacker_nodes as f64 / total as f64;
    Ok(per_draw.powi(pool.outbound_count as i32))
}

/// Same question when each connected peer is removed from the pool before
/// the next draw (hypergeometric). Provided for comparison; the headline
/// formula above models draws with replacement.
pub fn eclipse_probability_without_replacement(pool: &SybilPool) -> Result<f64, EclipseError> {
    let total = pool.attacker_nodes + pool.honest_nodes;
    if total == 0 {
        return Err(EclipseError::EmptyPool);
    }
    if (pool.outbound_count as u64) > total {
        return Err(EclipseError::PoolTooSmall { outbound: pool.outbound_count, pool: total });
    }
    let mut p = 1.0;
    for i in 0..pool.outbound_count as u64 {
        if i >= pool.attacker_nodes {
            return Ok(0.0);
        }
        p *= (pool.attacker_nodes - i) as f64 / (total - i) as f64;
    }
    Ok(p)
}

/// How the simulator resolves a victim's de-eclipse attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriggerMode {
    /// Any attempt ends the attack. The attacker gets no credit for sybil
    /// density or address poisoning; this is the attacker-pessimal reading
    /// and the default.
    #[default]
    Pessimistic,
    /// The extra connection escapes only if it lands on an honest node:
    /// escape probability `(1 - poisoning) * N_h / (N_h + N_a)`.
    Probabilistic,
}

/// Result of one de-eclipse attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeEclipseOutcome {
    /// The victim reached an honest peer; the attack is over.
    DeEclipsed,
    /// The extra connection landed on the attacker too.
    StillEclipsed,
}

/// Resolve one de-eclipse attempt under the given mode.
pub fn resolve_de_eclipse(
    pool: &SybilPool,
    mode: TriggerMode,
    rng: &mut RandomSource,
) -> DeEclipseOutcome {
    match mode {
        TriggerMode::Pessimistic => DeEclipseOutcome::DeEclipsed,
        TriggerMode::Probabilistic => {
            let total = pool.attacker_nodes + pool.honest_nodes;
            let honest_share = if total == 0 {
                0.0
            } else {
                pool.honest_nodes as f64 / total as f64
            };
            let escape = (1.0 - pool.addrman_poisoning).clamp(0.0, 1.0) * honest_share;
            if rng.chance(escape) {
                DeEclipseOutcome::DeEclipsed
            } else {
                DeEclipseOutcome::StillEclipsed
            }
        }
    }
}

/// A link from the victim to a peer the attacker does not control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HiddenLink {
    /// No hidden link; the eclipse is total.
    #[default]
    None,
    /// A normal connection that relays both transactions and blocks.
    TxRelaying,
    /// A block-only connection: it never relays transactions, so only a
    /// block-based probe can expose it.
    BlockOnly,
}

/// What the attacker does not know about the victim's connectivity and is
/// trying to find out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VictimTopology {
    pub hidden_link: HiddenLink,
}

/// Verdict of an eclipse-verification probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeVerdict {
    /// Nothing leaked through; consistent with a total eclipse.
    Eclipsed,
    /// The probe surfaced through a link the attacker does not control.
    LeakDetected,
    /// The probe could not decide (e.g. block relay was never exercised).
    Inconclusive,
}

/// Transaction probe: send the victim a transaction through an attacker
/// link and watch whether it comes back from anywhere else. Exposes hidden
/// tx-relaying links, but is blind to block-only links by construction —
/// and never reports a leak on a fully eclipsed victim.
pub fn transaction_probe(topology: &VictimTopology) -> ProbeVerdict {
    match topology.hidden_link {
        HiddenLink::TxRelaying => ProbeVerdict::LeakDetected,
        HiddenLink::None | HiddenLink::BlockOnly => ProbeVerdict::Eclipsed,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("block {height} was already spent on an earlier probe; wait for a fresh block")]
    BlockAlreadyUsed { height: u64 },
}

/// Gatekeeper for block probes: each probe withholds one fresh block and
/// watches for it returning from a hidden link, so consecutive probes are
/// at least one block apart — about ten minutes on average.
#[derive(Debug, Default)]
pub struct BlockProbeSession {
    last_probed_height: u64,
}

impl BlockProbeSession {
    pub fn new() -> Self {
        Self::default()
    }

    /// Probe with `fresh_block`, which must be newer than any block already
    /// used. Any hidden link relays blocks (block-only links exist for
    /// exactly that), so both hidden-link kinds are exposed.
    pub fn block_probe(
        &mut self,
        topology: &VictimTopology,
        fresh_block: &Block,
    ) -> Result<ProbeVerdict, ProbeError> {
        if fresh_block.height <= self.last_probed_height {
            return Err(ProbeError::BlockAlreadyUsed { height: fresh_block.height });
        }
        self.last_probed_height = fresh_block.height;
        Ok(match topology.hidden_link {
            HiddenLink::None => ProbeVerdict::Eclipsed,
            HiddenLink::TxRelaying | HiddenLink::BlockOnly => ProbeVerdict::LeakDetected,
        })
    }
}

/// Run both probes and merge: any leak dominates; with no fresh block to
/// spend, a clean transaction probe alone cannot rule out a block-only link,
/// so the combined verdict is inconclusive.
pub fn combined_probe(
    session: &mut BlockProbeSession,
    topology: &VictimTopology,
    fresh_block: Option<&Block>,
) -> ProbeVerdict {
    if transaction_probe(topology) == ProbeVerdict::LeakDetected {
        return ProbeVerdict::LeakDetected;
    }
    match fresh_block {
        Some(b) => session.block_probe(topology, b).unwrap_or(ProbeVerdict::Inconclusive),
        None => ProbeVerdict::Inconclusive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::mine_sequence;

    #[test]
    fn headline_pool_is_about_47_percent() {
        let pool = SybilPool::default(); // 500 sybils, 50 honest, 8 outbound
        let p = eclipse_probability(&pool).unwrap();
        assert!((p - 0.4665).abs() < 0.0005, "got {p}");
    }

    #[test]
    fn probability_edges() {
        let none = SybilPool { attacker_nodes: 0, ..SybilPool::default() };
        assert_eq!(eclipse_probability(&none).unwrap(), 0.0);
        let all = SybilPool { honest_nodes: 0, ..SybilPool::default() };
        assert_eq!(eclipse_probability(&all).unwrap(), 1.0);
        let empty = SybilPool { attacker_nodes: 0, honest_nodes: 0, ..SybilPool::default() };
        assert_eq!(eclipse_probability(&empty), Err(EclipseError::EmptyPool));
    }

    #[test]
    fn scaling_both_populations_leaves_probability_unchanged() {
        let base = SybilPool::default();
        let p = eclipse_probability(&base).unwrap();
        for k in [2u64, 10, 1000] {
            let scaled = SybilPool {
                attacker_nodes: base.attacker_nodes * k,
                honest_nodes: base.honest_nodes * k,
                ..base
            };
            assert_eq!(eclipse_probability(&scaled).unwrap(), p, "scale factor {k}");
        }
    }

    #[test]
    fn without_replacement_matches_brute_force_on_small_pools() {
        // Oracle: exhaustive product over ordered draws is what the
        // hypergeometric closed form must reproduce.
        fn brute(na: u64, nh: u64, c: u32) -> f64 {
            let mut p = 1.0;
            let mut attackers = na as f64;
            let mut total = (na + nh) as f64;
            for _ in 0..c {
                p *= attackers / total;
                attackers -= 1.0;
                total -= 1.0;
            }
            p
        }
        for (na, nh, c) in [(5u64, 3u64, 4u32), (10, 2, 6), (8, 8, 3), (4, 0, 4)] {
            let pool = SybilPool {
                attacker_nodes: na,
                honest_nodes: nh,
                outbound_count: c,
                addrman_poisoning: 0.0,
            };
            let got = eclipse_probability_without_replacement(&pool).unwrap();
            let want = brute(na, nh, c);
            assert!((got - want).abs() < 1e-12, "({na},{nh},{c}): {got} vs {want}");
        }
        // Fewer attackers than connections: an honest peer is unavoidable.
        let tight = SybilPool {
            attacker_nodes: 3,
            honest_nodes: 10,
            outbound_count: 5,
            addrman_poisoning: 0.0,
        };
        assert_eq!(eclipse_probability_without_replacement(&tight).unwrap(), 0.0);
    }

    #[test]
    fn pessimistic_mode_always_de_eclipses() {
        let mut rng = RandomSource::from_seed(1);
        let pool = SybilPool::default();
        for _ in 0..100 {
            assert_eq!(
                resolve_de_eclipse(&pool, TriggerMode::Pessimistic, &mut rng),
                DeEclipseOutcome::DeEclipsed
            );
        }
    }

    #[test]
    fn probabilistic_mode_matches_the_honest_share() {
        // Escape probability 50/550 ~ 0.0909 with no poisoning.
        let mut rng = RandomSource::from_seed(8);
        let pool = SybilPool::default();
        let n = 100_000;
        let mut escaped = 0u64;
        for _ in 0..n {
            if resolve_de_eclipse(&pool, TriggerMode::Probabilistic, &mut rng)
                == DeEclipseOutcome::DeEclipsed
            {
                escaped += 1;
            }
        }
        let rate = escaped as f64 / n as f64;
        assert!((rate - 50.0 / 550.0).abs() < 0.003, "escape rate {rate}");
    }

    #[test]
    fn full_poisoning_never_escapes() {
        let mut rng = RandomSource::from_seed(9);
        let pool = SybilPool { addrman_poisoning: 1.0, ..SybilPool::default() };
        for _ in 0..1000 {
            assert_eq!(
                resolve_de_eclipse(&pool, TriggerMode::Probabilistic, &mut rng),
                DeEclipseOutcome::StillEclipsed
            );
        }
    }

    #[test]
    fn transaction_probe_sees_only_tx_relaying_links() {
        let eclipsed = VictimTopology { hidden_link: HiddenLink::None };
        let tx_link = VictimTopology { hidden_link: HiddenLink::TxRelaying };
        let block_link = VictimTopology { hidden_link: HiddenLink::BlockOnly };
        assert_eq!(transaction_probe(&eclipsed), ProbeVerdict::Eclipsed);
        assert_eq!(transaction_probe(&tx_link), ProbeVerdict::LeakDetected);
        // Blind spot by design: block-only links carry no transactions.
        assert_eq!(transaction_probe(&block_link), ProbeVerdict::Eclipsed);
    }

    #[test]
    fn block_probe_sees_all_hidden_links_and_spends_blocks() {
        let mut rng = RandomSource::from_seed(4);
        let blocks = mine_sequence(3, 600, &mut rng);
        let block_link = VictimTopology { hidden_link: HiddenLink::BlockOnly };

        let mut session = BlockProbeSession::new();
        assert_eq!(
            session.block_probe(&block_link, &blocks[0]).unwrap(),
            ProbeVerdict::LeakDetected
        );
        // Same block cannot be probed twice; the retry waits for the next
        // mined block, which by construction arrives later.
        assert_eq!(
            session.block_probe(&block_link, &blocks[0]),
            Err(ProbeError::BlockAlreadyUsed { height: 1 })
        );
        assert!(blocks[1].mined_at > blocks[0].mined_at);
        assert_eq!(
            session.block_probe(&block_link, &blocks[1]).unwrap(),
            ProbeVerdict::LeakDetected
        );

        let mut session = BlockProbeSession::new();
        let eclipsed = VictimTopology { hidden_link: HiddenLink::None };
        assert_eq!(session.block_probe(&eclipsed, &blocks[0]).unwrap(), ProbeVerdict::Eclipsed);
    }

    #[test]
    fn combined_probe_merges_and_reports_gaps() {
        let mut rng = RandomSource::from_seed(4);
        let blocks = mine_sequence(1, 600, &mut rng);
        let mut session = BlockProbeSession::new();

        let tx_link = VictimTopology { hidden_link: HiddenLink::TxRelaying };
        assert_eq!(combined_probe(&mut session, &tx_link, None), ProbeVerdict::LeakDetected);

        let block_link = VictimTopology { hidden_link: HiddenLink::BlockOnly };
        // No fresh block to spend: the tx probe alone cannot clear a
        // block-only link.
        assert_eq!(combined_probe(&mut session, &block_link, None), ProbeVerdict::Inconclusive);
        assert_eq!(
            combined_probe(&mut session, &block_link, Some(&blocks[0])),
            ProbeVerdict::LeakDetected
        );

        let eclipsed = VictimTopology { hidden_link: HiddenLink::None };
        let mut session = BlockProbeSession::new();
        assert_eq!(
            combined_probe(&mut session, &eclipsed, Some(&blocks[0])),
            ProbeVerdict::Eclipsed
        );
    }
}
