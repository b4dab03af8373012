//! `tdsim` — command-line front end for the time-dilation attack simulator.
//!
//! One binary, five subcommands: `eclipse-prob` (sybil-capture odds),
//! `dilate` (one block-delivery dilation trial), `scenario` (one full
//! fund-stealing scenario), `experiment` (Monte-Carlo duration tables), and
//! `map` (endpoint correlation between node lists).
//!
//! Exit codes: 0 on success — a *failed attack* is still a successful
//! simulation — 1 on usage errors, 2 on runtime errors. A `--config` file
//! supplies defaults, flags override it, and the `DILATION_SEED` environment
//! variable overrides the seed alone (for CI matrices).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use tdsim_core::channel::C_LIGHTNING;
use tdsim_core::{
    correlate_by_ip, eclipse_probability, eclipse_probability_without_replacement,
    eclipse_time_formula, emit, parse_node_list, render, run_attack, run_dilation_traced,
    run_table, AppConfig, AttackKind, BackendKind, DilationStrategy, EmitFormat, ExperimentPlan,
    ImplementationPreset, LeadMode, ScenarioConfig, SybilPool,
};

fn parse_attack(s: &str) -> Result<AttackKind, String> {
    AttackKind::from_name(s).ok_or_else(|| format!("expected a1, a2, or a3, got {s:?}"))
}

fn parse_impl(s: &str) -> Result<ImplementationPreset, String> {
    ImplementationPreset::by_name(s).ok_or_else(|| {
        format!("expected c-lightning, lnd, eclair, or rust-lightning, got {s:?}")
    })
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    BackendKind::from_name(s).ok_or_else(|| format!("expected full or light, got {s:?}"))
}

fn parse_lead_mode(s: &str) -> Result<LeadMode, String> {
    LeadMode::from_name(s).ok_or_else(|| format!("expected race-margin or policy-exact, got {s:?}"))
}

fn parse_format(s: &str) -> Result<EmitFormat, String> {
    EmitFormat::from_name(s).ok_or_else(|| format!("expected csv or json, got {s:?}"))
}

/// One or all of the attacks, for `experiment --attack`.
#[derive(Debug, Clone)]
struct AttackSelection(Vec<AttackKind>);

fn parse_attack_selection(s: &str) -> Result<AttackSelection, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(AttackSelection(AttackKind::ALL.to_vec()));
    }
    AttackKind::from_name(s)
        .map(|k| AttackSelection(vec![k]))
        .ok_or_else(|| format!("expected a1, a2, a3, or all, got {s:?}"))
}

#[derive(Parser)]
#[command(
    name = "tdsim",
    version,
    about = "Simulator for time-dilation attacks on Lightning-style payment channels"
)]
struct Cli {
    /// Plain-text `key = value` file supplying defaults; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every randomized subcommand. The DILATION_SEED environment
    /// variable overrides this flag.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probability that every outbound connection lands on a sybil.
    EclipseProb(EclipseProbArgs),
    /// Run one block-delivery dilation trial.
    Dilate(DilateArgs),
    /// Run one fund-stealing scenario end to end.
    Scenario(ScenarioArgs),
    /// Monte-Carlo duration tables across presets and backends.
    Experiment(ExperimentArgs),
    /// Correlate Bitcoin and Lightning node lists by endpoint.
    Map(MapArgs),
}

#[derive(Args)]
struct EclipseProbArgs {
    /// Attacker-controlled candidate peers.
    #[arg(long, value_name = "COUNT")]
    na: Option<u64>,
    /// Honest candidate peers.
    #[arg(long, value_name = "COUNT")]
    nh: Option<u64>,
    /// Outbound connections the victim opens.
    #[arg(long, value_name = "COUNT")]
    c: Option<u32>,
    /// Draw peers without replacement (hypergeometric variant).
    #[arg(long)]
    without_replacement: bool,
}

#[derive(Args)]
struct DilateArgs {
    /// Blocks of lead to build before declaring success.
    #[arg(long, default_value_t = 144, value_name = "BLOCKS")]
    lead: u32,
    /// Victim backend: full or light.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Per-block delivery delay in seconds (full-node victims; light
    /// clients are withheld outright).
    #[arg(long, value_name = "SECS")]
    delay: Option<u64>,
    /// Print the per-event trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Which fund-stealing scenario to run: a1, a2, or a3.
    #[arg(long, value_parser = parse_attack)]
    attack: AttackKind,
    /// Implementation preset: c-lightning, lnd, eclair, rust-lightning.
    #[arg(long = "impl", value_parser = parse_impl, value_name = "NAME")]
    implementation: Option<ImplementationPreset>,
    /// Victim backend: full or light.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Dilation-target derivation: race-margin or policy-exact.
    #[arg(long, value_parser = parse_lead_mode)]
    lead_mode: Option<LeadMode>,
    /// Per-block delivery delay in seconds (full-node victims).
    #[arg(long, value_name = "SECS")]
    delay: Option<u64>,
    /// Use the preset's upper contest-window bound (where one exists).
    #[arg(long)]
    csv_upper: bool,
    /// Print the numbered event trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// a1, a2, a3, or all.
    #[arg(long, default_value = "all", value_parser = parse_attack_selection)]
    attack: AttackSelection,
    /// Trials per table cell.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), value_name = "N")]
    trials: Option<u32>,
    /// Dilation-target derivation: race-margin or policy-exact.
    #[arg(long, value_parser = parse_lead_mode)]
    lead_mode: Option<LeadMode>,
    /// Write rows here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, value_parser = parse_format)]
    format: Option<EmitFormat>,
}

#[derive(Args)]
struct MapArgs {
    /// Bitcoin node list: one `id,endpoint` per line, `#` comments.
    #[arg(long, value_name = "FILE")]
    bitcoin: PathBuf,
    /// Lightning node list, same format.
    #[arg(long, value_name = "FILE")]
    lightning: PathBuf,
    /// Write the matched pairs here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let app = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    match cli.command {
        Command::EclipseProb(args) => eclipse_prob_cmd(args, &app),
        Command::Dilate(args) => dilate_cmd(args, cli.seed, &app),
        Command::Scenario(args) => scenario_cmd(args, cli.seed, &app),
        Command::Experiment(args) => experiment_cmd(args, cli.seed, &app),
        Command::Map(args) => map_cmd(args),
    }
}

/// Seed precedence: DILATION_SEED, then `--seed`, then the config file,
/// then 42.
fn resolve_seed(flag: Option<u64>, app: &AppConfig) -> Result<u64> {
    if let Ok(v) = std::env::var("DILATION_SEED") {
        return v
            .trim()
            .parse()
            .map_err(|_| anyhow!("DILATION_SEED={v:?} is not an unsigned integer"));
    }
    Ok(flag.or(app.seed).unwrap_or(42))
}

fn eclipse_prob_cmd(args: EclipseProbArgs, app: &AppConfig) -> Result<()> {
    let mut pool = SybilPool::default();
    if let Some(n) = app.attacker_nodes {
        pool.attacker_nodes = n;
    }
    if let Some(n) = app.honest_nodes {
        pool.honest_nodes = n;
    }
    if let Some(c) = app.outbound_count {
        pool.outbound_count = c;
    }
    if let Some(n) = args.na {
        pool.attacker_nodes = n;
    }
    if let Some(n) = args.nh {
        pool.honest_nodes = n;
    }
    if let Some(c) = args.c {
        pool.outbound_count = c;
    }
    let p = if args.without_replacement {
        eclipse_probability_without_replacement(&pool)?
    } else {
        eclipse_probability(&pool)?
    };
    println!("{p:.4}");
    Ok(())
}

fn dilate_cmd(args: DilateArgs, seed_flag: Option<u64>, app: &AppConfig) -> Result<()> {
    let backend = args.backend.or(app.backend).unwrap_or(BackendKind::FullNode);
    let delay = args.delay.or(app.delay_secs).unwrap_or(1770);
    let strategy = match backend {
        BackendKind::FullNode => DilationStrategy::constant_delay(delay, args.lead as u64),
        BackendKind::LightClient => DilationStrategy::withhold(args.lead as u64),
    };
    let policies = app.policies(backend);
    let seed = resolve_seed(seed_flag, app)?;

    let (outcome, trace) = run_dilation_traced(&strategy, &policies, seed);
    if args.trace {
        for line in &trace {
            println!("{line}");
        }
    }
    match outcome.failure {
        None => println!(
            "lead {} reached after {:.2} h: network height {}, victim height {} \
             ({} blocks delivered, {} de-eclipse attempts)",
            outcome.lead(),
            outcome.elapsed.as_hours(),
            outcome.network_height,
            outcome.victim_height,
            outcome.blocks_delivered,
            outcome.de_eclipse_attempts,
        ),
        Some(cause) => println!(
            "failed ({}) after {:.2} h: network height {}, victim height {}",
            cause.label(),
            outcome.elapsed.as_hours(),
            outcome.network_height,
            outcome.victim_height,
        ),
    }
    let estimate = eclipse_time_formula(args.lead, strategy.mode.as_slowdown());
    if estimate.is_finite() {
        println!("closed-form estimate: {:.2} h", estimate.hours());
    } else {
        println!("closed-form estimate: unreachable at this delivery rate");
    }
    Ok(())
}

fn scenario_cmd(args: ScenarioArgs, seed_flag: Option<u64>, app: &AppConfig) -> Result<()> {
    let preset = args.implementation.or(app.implementation).unwrap_or(C_LIGHTNING);
    let backend = args.backend.or(app.backend).unwrap_or(BackendKind::FullNode);
    let mut cfg = ScenarioConfig::new(args.attack, preset, backend);
    app.apply(&mut cfg);
    if let Some(m) = args.lead_mode {
        cfg.lead_mode = m;
    }
    if let Some(d) = args.delay {
        cfg.delay_secs = d;
    }
    cfg.use_csv_upper = args.csv_upper;
    let seed = resolve_seed(seed_flag, app)?;

    let result = run_attack(&cfg, seed)?;
    if args.trace {
        for line in &result.trace {
            println!("{line}");
        }
    }
    println!(
        "attack {} on {} ({} backend, {} lead target {}), seed {}",
        args.attack.label(),
        preset.name,
        backend.label(),
        cfg.lead_mode.label(),
        cfg.target_lead(),
        seed,
    );
    match result.failure_cause {
        None => println!(
            "outcome: success — stole {} sat after {:.2} h eclipsed",
            result.stolen, result.eclipse_hours
        ),
        Some(cause) => println!(
            "outcome: failure ({}) after {:.2} h",
            cause.label(),
            result.eclipse_hours
        ),
    }
    Ok(())
}

fn experiment_cmd(args: ExperimentArgs, seed_flag: Option<u64>, app: &AppConfig) -> Result<()> {
    let lead_mode = args.lead_mode.or(app.lead_mode).unwrap_or_default();
    let trials = args.trials.or(app.trials).unwrap_or(10_000);
    let seed = resolve_seed(seed_flag, app)?;

    let mut scenarios = Vec::new();
    for kind in args.attack.0 {
        scenarios.extend(ExperimentPlan::table_grid(kind, lead_mode).scenarios);
    }
    for cell in &mut scenarios {
        app.apply(cell);
        cell.lead_mode = lead_mode;
    }
    let plan = ExperimentPlan { scenarios, trials_per_cell: trials, base_seed: seed };
    let rows = run_table(&plan)?;

    let format = args.format.or(app.format).unwrap_or(EmitFormat::Csv);
    match args.out.clone().or(app.out.clone()) {
        Some(path) => {
            emit(&rows, format, &path)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{}", render(&rows, format)),
    }
    Ok(())
}

fn map_cmd(args: MapArgs) -> Result<()> {
    let read = |path: &PathBuf| -> Result<String> {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    };
    let btc_text = read(&args.bitcoin)?;
    let ln_text = read(&args.lightning)?;
    let (btc, btc_issues) = parse_node_list(&btc_text);
    let (ln, ln_issues) = parse_node_list(&ln_text);
    for (line, msg) in &btc_issues {
        eprintln!("{} line {line}: {msg}", args.bitcoin.display());
    }
    for (line, msg) in &ln_issues {
        eprintln!("{} line {line}: {msg}", args.lightning.display());
    }

    let report = correlate_by_ip(&btc, &ln);
    let mut out = String::from("bitcoin_id,lightning_id,endpoint\n");
    for p in &report.pairs {
        out.push_str(&format!("{},{},{}\n", p.bitcoin_id, p.lightning_id, p.endpoint));
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &out).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} pairs to {}", report.pairs.len(), path.display());
        }
        None => print!("{out}"),
    }
    eprintln!(
        "{} shared endpoints across {} bitcoin and {} lightning records ({} pairs)",
        report.matches,
        report.bitcoin_total,
        report.lightning_total,
        report.pairs.len(),
    );
    Ok(())
}
