//! Linking Bitcoin peers to Lightning nodes by endpoint, and the odds that a
//! light client's payments are directly visible to a sybil operator.
//!
//! Two independent utilities live here:
//!
//! - **Endpoint correlation.** Given two scraped node lists — Bitcoin peers
//!   on one side, Lightning nodes on the other — find every pair advertising
//!   the same endpoint. IP endpoints are compared with the port stripped
//!   (one machine typically serves both daemons on different ports); onion
//!   endpoints are compared as exact strings, since every hidden-service
//!   address is its own identity and says nothing about co-location beyond
//!   a literal match.
//! - **First-spy odds.** A light client opens `C` peer connections drawn
//!   uniformly from a population containing `N_a` sybils. The first peer to
//!   hear a transaction is almost always its origin when that peer is a
//!   direct connection, so the operator learns the payment origin whenever
//!   at least one of the `C` draws lands on a sybil:
//!   `1 − (N_h / (N_h + N_a))^C`. A Monte-Carlo sampler cross-checks the
//!   closed form.
//!
//! The first-spy figure is an idealized upper bound: connection churn,
//! address reuse, and relay jitter all dilute it in the field, and reported
//! live measurements run a few points lower than the formula. This module
//! deliberately implements the clean sampling model and leaves the gap to
//! the reader.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};

use crate::eclipse::{EclipseError, SybilPool};
use crate::sim::RandomSource;

/// One line of a scraped node list: an opaque identifier and the endpoint it
/// advertises.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: String,
    pub endpoint: String,
}

/// One correlated pair: a Bitcoin node and a Lightning node advertising the
/// same endpoint (post-normalization, see [`correlate_by_ip`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedPair {
    pub bitcoin_id: String,
    pub lightning_id: String,
    /// The shared endpoint in normalized form (IP without port, or the
    /// exact onion string).
    pub endpoint: String,
}

/// Everything [`correlate_by_ip`] found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchReport {
    /// Every (bitcoin, lightning) combination sharing an endpoint, ordered
    /// by endpoint and then by input order within each endpoint group.
    pub pairs: Vec<MatchedPair>,
    pub bitcoin_total: usize,
    pub lightning_total: usize,
    /// Distinct endpoints present in both lists. Never exceeds either
    /// total, even when duplicate records share an address.
    pub matches: usize,
}

/// Parse a node list: one `id,endpoint` record per line, `#` starts a
/// comment, blank lines are skipped. Malformed lines are reported as
/// `(line_number, message)` and skipped; parsing always continues, because a
/// scrape with a few mangled rows is still a usable scrape.
pub fn parse_node_list(input: &str) -> (Vec<NodeRecord>, Vec<(usize, String)>) {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((id, endpoint)) = line.split_once(',') else {
            issues.push((line_no, format!("missing `id,endpoint` separator in {raw:?}")));
            continue;
        };
        let (id, endpoint) = (id.trim(), endpoint.trim());
        if id.is_empty() {
            issues.push((line_no, "empty id".to_string()));
            continue;
        }
        if endpoint.is_empty() {
            issues.push((line_no, "empty endpoint".to_string()));
            continue;
        }
        records.push(NodeRecord { id: id.to_string(), endpoint: endpoint.to_string() });
    }
    (records, issues)
}

/// Normalize an endpoint into its comparison key.
///
/// - `host:port` and `[v6]:port` forms parse as socket addresses; the key is
///   the IP alone, in canonical textual form (so `2001:DB8::1` and
///   `2001:db8:0:0:0:0:0:1` collide as they should).
/// - A bare IP parses likewise. A bare IPv6 address with a would-be trailing
///   port is indistinguishable from an address, which is exactly why the
///   bracketed form exists; we follow that convention.
/// - Anything else — onion services included — is compared as the exact
///   trimmed string, port and all.
fn endpoint_key(endpoint: &str) -> String {
    let e = endpoint.trim();
    if let Ok(sock) = e.parse::<SocketAddr>() {
        return sock.ip().to_string();
    }
    if let Ok(ip) = e.parse::<IpAddr>() {
        return ip.to_string();
    }
    e.to_string()
}

/// Correlate two node lists by endpoint: IP matches ignore the port, onion
/// (and any other non-IP) endpoints match as exact strings. Returns every
/// cross pair, ordered by endpoint key, plus summary counts.
pub fn correlate_by_ip(bitcoin: &[NodeRecord], lightning: &[NodeRecord]) -> MatchReport {
    let mut lightning_by_key: BTreeMap<String, Vec<&NodeRecord>> = BTreeMap::new();
    for r in lightning {
        lightning_by_key.entry(endpoint_key(&r.endpoint)).or_default().push(r);
    }
    let mut bitcoin_by_key: BTreeMap<String, Vec<&NodeRecord>> = BTreeMap::new();
    for r in bitcoin {
        bitcoin_by_key.entry(endpoint_key(&r.endpoint)).or_default().push(r);
    }

    let mut pairs = Vec::new();
    let mut matches = 0;
    for (key, btc_group) in &bitcoin_by_key {
        let Some(ln_group) = lightning_by_key.get(key) else { continue };
        matches += 1;
        for b in btc_group {
            for l in ln_group {
                pairs.push(MatchedPair {
                    bitcoin_id: b.id.clone(),
                    lightning_id: l.id.clone(),
                    endpoint: key.clone(),
                });
            }
        }
    }

    MatchReport { pairs, bitcoin_total: bitcoin.len(), lightning_total: lightning.len(), matches }
}

/// Probability that at least one of the light client's `C` uniformly drawn
/// peers is attacker-controlled — and with it, under first-spy attribution,
/// that the attacker sees the client's transactions at their origin:
/// `1 − (N_h / (N_h + N_a))^C`.
pub fn first_spy_direct_probability(pool: &SybilPool) -> Result<f64, EclipseError> {
    // "Every draw honest" is the eclipse event with the roles swapped.
    let swapped = SybilPool {
        attacker_nodes: pool.honest_nodes,
        honest_nodes: pool.attacker_nodes,
        ..*pool
    };
    Ok(1.0 - crate::eclipse::eclipse_probability(&swapped)?)
}

/// Monte-Carlo counterpart of [`first_spy_direct_probability`]: in each
/// trial the victim draws `C` peers uniformly (with replacement) and the
/// origin counts as inferred when at least one draw is a sybil. Returns the
/// inferred fraction.
pub fn simulate_origin_inference(
    pool: &SybilPool,
    trials: u64,
    rng: &mut RandomSource,
) -> Result<f64, EclipseError> {
    let total = pool.attacker_nodes + pool.honest_nodes;
    if total == 0 {
        return Err(EclipseError::EmptyPool);
    }
    assert!(trials >= 1, "at least one trial");
    let mut inferred = 0u64;
    for _ in 0..trials {
        for _ in 0..pool.outbound_count {
            if rng.next_below(total) < pool.attacker_nodes {
                inferred += 1;
                break;
            }
        }
    }
    Ok(inferred as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn rec(id: &str, endpoint: &str) -> NodeRecord {
        NodeRecord { id: id.to_string(), endpoint: endpoint.to_string() }
    }

    #[test]
    fn parses_records_comments_and_reports_bad_lines() {
        let input = "\
# scraped 2026-08-01
alpha , 1.2.3.4:8333
beta,[2001:db8::1]:8333   # dual-stack host
only-one-field
,10.0.0.1
gamma,
delta,10.0.0.2
";
        let (records, issues) = parse_node_list(input);
        assert_eq!(
            records,
            vec![
                rec("alpha", "1.2.3.4:8333"),
                rec("beta", "[2001:db8::1]:8333"),
                rec("delta", "10.0.0.2"),
            ]
        );
        let lines: Vec<usize> = issues.iter().map(|(n, _)| *n).collect();
        assert_eq!(lines, vec![4, 5, 6], "bad lines are reported by number, parsing continues");
    }

    #[test]
    fn ip_matching_ignores_ports_and_normalizes_ipv6() {
        let btc = vec![rec("a", "1.2.3.4"), rec("b", "2001:DB8::1")];
        let ln = vec![rec("x", "1.2.3.4:9735"), rec("y", "[2001:db8:0:0:0:0:0:1]:9735")];
        let report = correlate_by_ip(&btc, &ln);
        assert_eq!(report.matches, 2);
        assert_eq!(report.pairs.len(), 2);
        assert_eq!(report.pairs[0].endpoint, "1.2.3.4");
        assert_eq!(report.pairs[1].endpoint, "2001:db8::1");
    }

    #[test]
    fn onion_endpoints_match_exactly_or_not_at_all() {
        let btc = vec![
            rec("a", "abcdefghijklmnop.onion:8333"),
            rec("b", "qrstuvwxyz234567.onion:8333"),
        ];
        let ln = vec![
            rec("x", "abcdefghijklmnop.onion:8333"),
            rec("y", "qrstuvwxyz234567.onion:9735"), // differing port: no IP semantics
        ];
        let report = correlate_by_ip(&btc, &ln);
        assert_eq!(report.matches, 1);
        assert_eq!(report.pairs[0].bitcoin_id, "a");
        assert_eq!(report.pairs[0].lightning_id, "x");
    }

    #[test]
    fn disjoint_endpoint_sets_produce_no_matches() {
        let btc = vec![rec("a", "10.0.0.1"), rec("b", "10.0.0.2")];
        let ln = vec![rec("x", "10.0.1.1"), rec("y", "10.0.1.2")];
        let report = correlate_by_ip(&btc, &ln);
        assert_eq!(report.matches, 0);
        assert!(report.pairs.is_empty());
        assert_eq!((report.bitcoin_total, report.lightning_total), (2, 2));
    }

    /// Synthetic ground truth: 100 Bitcoin nodes, 20 Lightning nodes, 7
    /// planted co-located hosts — the report finds exactly the plant.
    #[test]
    fn planted_overlaps_are_recovered_exactly() {
        let mut btc: Vec<NodeRecord> =
            (0..100).map(|i| rec(&format!("btc{i}"), &format!("10.0.{}.{}:8333", i / 256, i % 256))).collect();
        let mut ln: Vec<NodeRecord> =
            (0..20).map(|i| rec(&format!("ln{i}"), &format!("10.1.0.{i}:9735"))).collect();
        for k in 0..7 {
            btc[k * 11].endpoint = format!("203.0.113.{k}:8333");
            ln[k * 2].endpoint = format!("203.0.113.{k}:9735");
        }
        let report = correlate_by_ip(&btc, &ln);
        assert_eq!(report.matches, 7);
        assert_eq!(report.pairs.len(), 7);
        let found: BTreeSet<String> = report.pairs.iter().map(|p| p.endpoint.clone()).collect();
        let planted: BTreeSet<String> = (0..7).map(|k| format!("203.0.113.{k}")).collect();
        assert_eq!(found, planted);
        assert!(report.matches <= report.bitcoin_total.min(report.lightning_total));
    }

    #[test]
    fn duplicate_hosts_expand_pairs_but_count_one_match() {
        let btc = vec![rec("a1", "9.9.9.9:8333"), rec("a2", "9.9.9.9:8334")];
        let ln = vec![
            rec("x1", "9.9.9.9:9735"),
            rec("x2", "9.9.9.9:9736"),
            rec("x3", "9.9.9.9:9737"),
        ];
        let report = correlate_by_ip(&btc, &ln);
        assert_eq!(report.pairs.len(), 6, "all combinations are listed");
        assert_eq!(report.matches, 1, "one co-located host");
        assert!(report.matches <= report.bitcoin_total.min(report.lightning_total));
    }

    #[test]
    fn swapping_inputs_transposes_pairs_and_preserves_counts() {
        let btc = vec![rec("a", "1.1.1.1"), rec("b", "2.2.2.2:8333"), rec("c", "3.3.3.3")];
        let ln = vec![rec("x", "2.2.2.2:9735"), rec("y", "3.3.3.3:9735"), rec("z", "4.4.4.4")];
        let forward = correlate_by_ip(&btc, &ln);
        let backward = correlate_by_ip(&ln, &btc);
        assert_eq!(forward.matches, backward.matches);
        let f: BTreeSet<(String, String)> = forward
            .pairs
            .iter()
            .map(|p| (p.bitcoin_id.clone(), p.lightning_id.clone()))
            .collect();
        let b: BTreeSet<(String, String)> = backward
            .pairs
            .iter()
            .map(|p| (p.lightning_id.clone(), p.bitcoin_id.clone()))
            .collect();
        assert_eq!(f, b);
    }

    #[test]
    fn first_spy_closed_form_reference_points() {
        let p = first_spy_direct_probability(&SybilPool {
            attacker_nodes: 100,
            honest_nodes: 50,
            outbound_count: 8,
            addrman_poisoning: 0.0,
        })
        .unwrap();
        assert!((p - (1.0 - (50.0f64 / 150.0).powi(8))).abs() < 1e-15);
        assert_eq!(format!("{p:.5}"), "0.99985");

        let all_honest = SybilPool { attacker_nodes: 0, honest_nodes: 50, ..SybilPool::default() };
        assert_eq!(first_spy_direct_probability(&all_honest).unwrap(), 0.0);
        let all_sybil = SybilPool { attacker_nodes: 50, honest_nodes: 0, ..SybilPool::default() };
        assert_eq!(first_spy_direct_probability(&all_sybil).unwrap(), 1.0);
    }

    /// Exhaustive enumeration over every possible draw sequence on a tiny
    /// pool agrees with the closed form.
    #[test]
    fn closed_form_matches_exhaustive_enumeration() {
        let pool = SybilPool {
            attacker_nodes: 2,
            honest_nodes: 3,
            outbound_count: 3,
            addrman_poisoning: 0.0,
        };
        let total = 5u64;
        let mut hits = 0u64;
        let sequences = total.pow(3);
        for seq in 0..sequences {
            let (a, b, c) = (seq % 5, (seq / 5) % 5, seq / 25);
            if a < 2 || b < 2 || c < 2 {
                hits += 1;
            }
        }
        let exhaustive = hits as f64 / sequences as f64;
        let closed = first_spy_direct_probability(&pool).unwrap();
        assert!((exhaustive - closed).abs() < 1e-12, "{exhaustive} vs {closed}");
    }

    #[test]
    fn monte_carlo_converges_to_the_closed_form() {
        let mut rng = RandomSource::from_seed(2026);
        for pool in [
            SybilPool { attacker_nodes: 100, honest_nodes: 50, outbound_count: 8, addrman_poisoning: 0.0 },
            SybilPool { attacker_nodes: 50, honest_nodes: 50, outbound_count: 4, addrman_poisoning: 0.0 },
            SybilPool { attacker_nodes: 10, honest_nodes: 90, outbound_count: 8, addrman_poisoning: 0.0 },
        ] {
            let closed = first_spy_direct_probability(&pool).unwrap();
            let empirical = simulate_origin_inference(&pool, 100_000, &mut rng).unwrap();
            assert!(
                (closed - empirical).abs() < 0.005,
                "pool {pool:?}: closed {closed} vs empirical {empirical}"
            );
        }
    }

    #[test]
    fn degenerate_pools_hit_the_rails() {
        let mut rng = RandomSource::from_seed(7);
        let all_sybil = SybilPool { attacker_nodes: 9, honest_nodes: 0, ..SybilPool::default() };
        assert_eq!(simulate_origin_inference(&all_sybil, 1000, &mut rng).unwrap(), 1.0);
        let all_honest = SybilPool { attacker_nodes: 0, honest_nodes: 9, ..SybilPool::default() };
        assert_eq!(simulate_origin_inference(&all_honest, 1000, &mut rng).unwrap(), 0.0);
        let empty = SybilPool { attacker_nodes: 0, honest_nodes: 0, ..SybilPool::default() };
        assert!(simulate_origin_inference(&empty, 10, &mut rng).is_err());
        assert!(first_spy_direct_probability(&empty).is_err());
    }
}
