//! Monte-Carlo tables over the scenario runner: per-implementation eclipse
//! durations, failure-rate sweeps over delivery delays, and CSV/JSON
//! emission of the results.
//!
//! A table run is a grid of **cells**, one per (implementation preset,
//! chain backend) pair. Each cell repeats the same scenario many times with
//! per-trial seeds derived from the cell's seed, then reports the mean and
//! the 5th/95th percentiles of the eclipse duration across the *successful*
//! trials, plus the fraction that failed. Light-client cells never fail —
//! there is no countermeasure to trip — so their failure rate is zero by
//! construction.
//!
//! Everything is deterministic: cell seeds are `base_seed + cell index`,
//! trial seeds derive from the cell seed, and aggregation reads per-trial
//! durations in index order. The same plan and seed produce byte-identical
//! output files on every run and platform.

use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{ChannelError, PRESETS};
use crate::dilation::{run_dilation, DilationStrategy, TrialPolicies};
use crate::scenario::{run_attack, AttackKind, LeadMode, ScenarioConfig};
use crate::sim::derive_seed;
use crate::victim::BackendKind;

/// A batch of scenario cells plus the knobs shared by all of them.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    /// One entry per table cell, in emission order.
    pub scenarios: Vec<ScenarioConfig>,
    pub trials_per_cell: u32,
    pub base_seed: u64,
}

impl ExperimentPlan {
    /// The standard grid for one attack: every preset crossed with both
    /// backends. Implementations that negotiate their contest window get a
    /// second pair of rows at the window's upper bound — for the
    /// revoked-commitment attack, whose duration that window sets.
    pub fn table_grid(attack: AttackKind, lead_mode: LeadMode) -> ExperimentPlan {
        let mut scenarios = Vec::new();
        for preset in PRESETS {
            for upper in [false, true] {
                if upper && !(attack == AttackKind::A1 && preset.csv_delta_max.is_some()) {
                    continue;
                }
                for backend in [BackendKind::FullNode, BackendKind::LightClient] {
                    let mut cfg = ScenarioConfig::new(attack, preset, backend);
                    cfg.lead_mode = lead_mode;
                    cfg.use_csv_upper = upper;
                    scenarios.push(cfg);
                }
            }
        }
        ExperimentPlan { scenarios, trials_per_cell: 10_000, base_seed: 42 }
    }
}

/// Aggregated statistics for one cell. Durations describe the successful
/// trials; an all-failure cell reports zeros. Values are pre-rounded to the
/// 4 decimals the emitters print, so every output format carries identical
/// numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean_hours: f64,
    pub p5_hours: f64,
    pub p95_hours: f64,
    pub failure_rate: f64,
    pub trials: u32,
}

/// One emitted row: a cell's identity plus its summary, fields in the exact
/// column order of the CSV contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub attack: String,
    pub implementation: String,
    pub backend: String,
    pub trials: u32,
    pub mean_hours: f64,
    pub p5_hours: f64,
    pub p95_hours: f64,
    pub failure_rate: f64,
    pub seed: u64,
}

impl TableRow {
    pub fn summary(&self) -> CellSummary {
        CellSummary {
            mean_hours: self.mean_hours,
            p5_hours: self.p5_hours,
            p95_hours: self.p95_hours,
            failure_rate: self.failure_rate,
            trials: self.trials,
        }
    }
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

/// Nearest-rank percentile of an ascending-sorted, non-empty sample.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(sorted_success_hours: &[f64], failures: u32, trials: u32) -> CellSummary {
    let (mean, p5, p95) = if sorted_success_hours.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let n = sorted_success_hours.len() as f64;
        let mean = sorted_success_hours.iter().sum::<f64>() / n;
        (
            mean,
            nearest_rank(sorted_success_hours, 0.05),
            nearest_rank(sorted_success_hours, 0.95),
        )
    };
    CellSummary {
        mean_hours: round4(mean),
        p5_hours: round4(p5),
        p95_hours: round4(p95),
        failure_rate: round4(failures as f64 / trials as f64),
        trials,
    }
}

/// Run one cell: `trials` independent scenario runs with per-trial seeds
/// derived from `cell_seed`, aggregated into a summary. Any trial error
/// aborts the whole cell.
pub fn run_cell(
    cfg: &ScenarioConfig,
    trials: u32,
    cell_seed: u64,
) -> Result<CellSummary, ChannelError> {
    assert!(trials >= 1, "a cell needs at least one trial");
    let results = (0..trials)
        .into_par_iter()
        .map(|t| run_attack(cfg, derive_seed(cell_seed, t as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut hours: Vec<f64> =
        results.iter().filter(|r| r.success).map(|r| r.eclipse_hours).collect();
    hours.sort_by(f64::total_cmp);
    let failures = trials - hours.len() as u32;
    Ok(summarize(&hours, failures, trials))
}

/// Row label for a cell: the preset name, with `-upper` marking rows run at
/// the top of a negotiable contest-window range.
fn implementation_label(cfg: &ScenarioConfig) -> String {
    if cfg.use_csv_upper {
        format!("{}-upper", cfg.preset.name)
    } else {
        cfg.preset.name.to_string()
    }
}

/// Run every cell of the plan, one row per cell in plan order, with cell
/// seeds `base_seed + cell index`.
pub fn run_table(plan: &ExperimentPlan) -> Result<Vec<TableRow>, ChannelError> {
    assert!(!plan.scenarios.is_empty(), "the plan has no cells");
    plan.scenarios
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let seed = plan.base_seed + i as u64;
            let s = run_cell(cfg, plan.trials_per_cell, seed)?;
            Ok(TableRow {
                attack: cfg.kind.label().to_string(),
                implementation: implementation_label(cfg),
                backend: cfg.backend.label().to_string(),
                trials: s.trials,
                mean_hours: s.mean_hours,
                p5_hours: s.p5_hours,
                p95_hours: s.p95_hours,
                failure_rate: s.failure_rate,
                seed,
            })
        })
        .collect()
}

/// Dilation-phase failure rates across per-block delivery delays: full-node
/// victim, defaults otherwise, `trials` trials per delay.
///
/// Per-trial seeds are shared across delays (common random numbers), so the
/// rates are monotone non-increasing in the delay *exactly*, not merely in
/// expectation: on the same mining schedule, a longer delay only deepens the
/// buffer of mined-but-undelivered blocks that absorbs mining droughts.
pub fn failure_sweep(
    delays: &[u64],
    target_lead: u64,
    trials: u32,
    base_seed: u64,
) -> Vec<(u64, f64)> {
    let policies = TrialPolicies::default();
    for &d in delays {
        assert!(
            d < policies.stale.threshold_secs,
            "delay {d} s would trip the stale-tip alarm ({} s) on every block",
            policies.stale.threshold_secs
        );
    }
    delays
        .iter()
        .map(|&delay| {
            let strategy = DilationStrategy::constant_delay(delay, target_lead);
            let failures = (0..trials)
                .into_par_iter()
                .filter(|&t| {
                    !run_dilation(&strategy, &policies, derive_seed(base_seed, t as u64)).success()
                })
                .count();
            (delay, round4(failures as f64 / trials as f64))
        })
        .collect()
}

/// Output format for [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
}

impl EmitFormat {
    pub fn from_name(name: &str) -> Option<EmitFormat> {
        match name.trim().to_ascii_lowercase().as_str() {
            "csv" => Some(EmitFormat::Csv),
            "json" => Some(EmitFormat::Json),
            _ => None,
        }
    }
}

/// The exact CSV column contract; JSON mirrors the same fields.
pub const CSV_HEADER: &str =
    "attack,implementation,backend,trials,mean_hours,p5_hours,p95_hours,failure_rate,seed";

/// Render rows to the requested format. CSV prints floats with 4 decimals;
/// JSON carries the same pre-rounded values, so the formats agree field by
/// field.
pub fn render(rows: &[TableRow], format: EmitFormat) -> String {
    match format {
        EmitFormat::Csv => {
            let mut out = String::with_capacity(64 * (rows.len() + 1));
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}\n",
                    r.attack,
                    r.implementation,
                    r.backend,
                    r.trials,
                    r.mean_hours,
                    r.p5_hours,
                    r.p95_hours,
                    r.failure_rate,
                    r.seed
                ));
            }
            out
        }
        EmitFormat::Json => {
            let mut out = serde_json::to_string_pretty(rows).expect("rows always serialize");
            out.push('\n');
            out
        }
    }
}

/// Write rows to `path` in the given format.
pub fn emit(rows: &[TableRow], format: EmitFormat, path: &Path) -> io::Result<()> {
    assert!(!rows.is_empty(), "refusing to emit an empty result set");
    std::fs::write(path, render(rows, format))
        .map_err(|e| io::Error::new(e.kind(), format!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ImplementationPreset;

    fn tiny_plan(kind: AttackKind, preset: &str, backend: BackendKind, trials: u32) -> ExperimentPlan {
        let preset = ImplementationPreset::by_name(preset).unwrap();
        let cfg = ScenarioConfig::new(kind, preset, backend);
        ExperimentPlan { scenarios: vec![cfg], trials_per_cell: trials, base_seed: 7 }
    }

    #[test]
    fn summaries_aggregate_rounded_order_statistics() {
        let sorted: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(&sorted, 0, 100);
        assert_eq!(s.mean_hours, 50.5);
        assert_eq!(s.p5_hours, 5.0);
        assert_eq!(s.p95_hours, 95.0);
        assert_eq!(s.failure_rate, 0.0);

        let third = summarize(&[1.0 / 3.0], 2, 3);
        assert_eq!(third.mean_hours, 0.3333, "values are rounded before emission");
        assert_eq!(third.failure_rate, 0.6667);

        let none = summarize(&[], 5, 5);
        assert_eq!((none.mean_hours, none.p5_hours, none.p95_hours), (0.0, 0.0, 0.0));
        assert_eq!(none.failure_rate, 1.0);

        let single = summarize(&[2.5], 0, 1);
        assert_eq!((single.p5_hours, single.mean_hours, single.p95_hours), (2.5, 2.5, 2.5));
    }

    #[test]
    fn grids_cover_presets_backends_and_upper_rows() {
        let a1 = ExperimentPlan::table_grid(AttackKind::A1, LeadMode::default());
        // Four presets crossed with two backends, plus an upper pair for the
        // one preset with a negotiable window.
        assert_eq!(a1.scenarios.len(), 10);
        assert_eq!(a1.scenarios.iter().filter(|c| c.use_csv_upper).count(), 2);

        for kind in [AttackKind::A2, AttackKind::A3] {
            let plan = ExperimentPlan::table_grid(kind, LeadMode::default());
            assert_eq!(plan.scenarios.len(), 8);
            assert!(plan.scenarios.iter().all(|c| !c.use_csv_upper));
        }
    }

    #[test]
    fn upper_rows_are_labeled_and_seeded_in_plan_order() {
        let mut plan = ExperimentPlan::table_grid(AttackKind::A1, LeadMode::default());
        plan.scenarios.retain(|c| c.backend == BackendKind::LightClient);
        plan.trials_per_cell = 3;
        let rows = run_table(&plan).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.implementation.as_str()).collect();
        assert_eq!(labels, ["c-lightning", "lnd", "lnd-upper", "eclair", "rust-lightning"]);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.seed, plan.base_seed + i as u64);
            assert_eq!(row.attack, "a1");
            assert_eq!(row.backend, "light");
        }
    }

    #[test]
    fn identical_plans_produce_identical_rows() {
        let plan = tiny_plan(AttackKind::A3, "c-lightning", BackendKind::LightClient, 5);
        assert_eq!(run_table(&plan).unwrap(), run_table(&plan).unwrap());
    }

    #[test]
    fn light_cell_statistics_track_the_block_clock() {
        // A withheld light client must stay eclipsed for exactly the target
        // lead's worth of mining, so the mean sits near target × 10 min and
        // the percentiles bracket the mean.
        let mut plan = tiny_plan(AttackKind::A3, "c-lightning", BackendKind::LightClient, 400);
        plan.scenarios[0].lead_mode = LeadMode::PolicyExact;
        let row = &run_table(&plan).unwrap()[0];
        let expected = 7.0 * 10.0 / 60.0;
        assert!((row.mean_hours - expected).abs() < 0.08, "mean {}", row.mean_hours);
        assert!(row.p5_hours <= row.mean_hours && row.mean_hours <= row.p95_hours);
        assert_eq!(row.failure_rate, 0.0, "no countermeasure can fire on a light client");
    }

    #[test]
    fn full_node_cells_take_longer_than_light_cells() {
        let preset = ImplementationPreset::by_name("c-lightning").unwrap();
        let light = ScenarioConfig::new(AttackKind::A3, preset, BackendKind::LightClient);
        let full = ScenarioConfig::new(AttackKind::A3, preset, BackendKind::FullNode);
        let plan = ExperimentPlan { scenarios: vec![light, full], trials_per_cell: 60, base_seed: 3 };
        let rows = run_table(&plan).unwrap();
        assert!(
            rows[1].mean_hours > rows[0].mean_hours,
            "rate-limited delivery beats outright withholding: {} vs {}",
            rows[1].mean_hours,
            rows[0].mean_hours
        );
    }

    #[test]
    fn sweep_rates_fall_as_the_delay_grows() {
        let sweep = failure_sweep(&[1170, 1470, 1770, 1799], 144, 150, 11);
        assert_eq!(sweep.len(), 4);
        for pair in sweep.windows(2) {
            assert!(
                pair[1].1 <= pair[0].1,
                "failure rate must not rise with delay: {sweep:?}"
            );
        }
        assert!(sweep[0].1 > sweep[2].1, "short delays leave droughts uncovered: {sweep:?}");
    }

    #[test]
    #[should_panic(expected = "stale-tip alarm")]
    fn sweep_rejects_delays_past_the_alarm_threshold() {
        failure_sweep(&[1800], 144, 10, 1);
    }

    #[test]
    fn rendering_agrees_across_formats() {
        let plan = tiny_plan(AttackKind::A3, "lnd", BackendKind::LightClient, 4);
        let rows = run_table(&plan).unwrap();
        let csv = render(&rows, EmitFormat::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[0..4], ["a3", "lnd", "light", "4"]);
        assert_eq!(fields[8], "7");

        let json: serde_json::Value =
            serde_json::from_str(&render(&rows, EmitFormat::Json)).unwrap();
        let row = &json[0];
        assert_eq!(row["attack"], "a3");
        assert_eq!(row["trials"], 4);
        assert_eq!(row["mean_hours"].as_f64().unwrap(), rows[0].mean_hours);
        assert_eq!(row["failure_rate"].as_f64().unwrap(), 0.0);
        assert_eq!(row["seed"], 7);
        // CSV prints exactly the same rounded value the JSON carries.
        assert_eq!(fields[4], format!("{:.4}", rows[0].mean_hours));
    }

    #[test]
    fn emission_reports_unwritable_paths() {
        let plan = tiny_plan(AttackKind::A3, "eclair", BackendKind::LightClient, 2);
        let rows = run_table(&plan).unwrap();
        let err = emit(&rows, EmitFormat::Csv, Path::new("/no-such-dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/no-such-dir/out.csv"));
    }
}
