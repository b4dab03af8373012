//! Deterministic discrete-event simulator and analysis toolkit for
//! *time-dilation* attacks on Lightning-style payment channels.
//!
//! An attacker who controls all of a victim's peer connections can slow the
//! victim's view of the Bitcoin blockchain without stopping it outright:
//! blocks are delivered late, at a fixed per-block delay chosen to stay just
//! under the victim's stale-tip alarm. Once the victim's view lags far enough
//! behind the real chain, channel timelocks (revocation windows, HTLC
//! expiries) can be cheated. This crate models that pipeline end to end:
//!
//! - [`sim`] — integer-second clock, FIFO-stable event queue, and the seeded
//!   random source every stochastic component draws from.
//! - [`chain`] — blocks, per-party chain views, and Poisson block arrival.
//! - [`victim`] — the eclipsed node: full-node backend with stale-tip and
//!   initial-block-download countermeasures, or a light-client backend with
//!   neither.
//! - [`eclipse`] — how likely an eclipse is given a sybil population, and how
//!   de-eclipse attempts resolve once the victim gets suspicious.
//! - [`dilation`] — block-delivery scheduling, the closed-form eclipse-time
//!   estimate, and the core dilation trial loop.
//! - [`channel`] — a payment-channel state machine: balances, HTLCs,
//!   revocation, and on-chain settlement with confirmation races.
//! - [`scenario`] — the three fund-stealing attacks built on top of the
//!   dilation loop and the channel machine.
//! - [`mapping`] — utilities for linking Bitcoin peers to channel endpoints
//!   and for payment-origin inference odds.
//! - [`experiment`] — Monte-Carlo harness: per-implementation result tables,
//!   failure-rate sweeps, CSV/JSON emission.
//! - [`config`] — plain-text `key = value` configuration shared by the CLI.
//!
//! Determinism is a design requirement, not an accident: given the same seed
//! and configuration, every trial produces a byte-identical event trace on
//! every platform. See [`sim::RandomSource`] for the exact contract.

pub mod chain;
pub mod channel;
pub mod config;
pub mod dilation;
pub mod eclipse;
pub mod experiment;
pub mod mapping;
pub mod scenario;
pub mod sim;
pub mod victim;

pub use chain::{lead, mine_sequence, Block, ChainView};
pub use channel::{
    build_route, justice_window, BroadcastOutcome, ChannelError, ChannelState, Htlc, HtlcOp,
    ImplementationPreset, OnChainTx, PaymentHash, PaymentPreimage, Route, Settlement, PRESETS,
};
pub use config::AppConfig;
pub use dilation::{
    eclipse_time_formula, run_dilation, run_dilation_traced, schedule_delivery, DeliveryMode,
    DilationOutcome, DilationStrategy, EclipseTime, FailureCause, Slowdown, TrialPolicies,
};
pub use eclipse::{
    eclipse_probability, eclipse_probability_without_replacement, resolve_de_eclipse,
    DeEclipseOutcome, HiddenLink, ProbeVerdict, SybilPool, TriggerMode, VictimTopology,
};
pub use experiment::{
    emit, failure_sweep, render, run_cell, run_table, CellSummary, EmitFormat, ExperimentPlan,
    TableRow, CSV_HEADER,
};
pub use mapping::{
    correlate_by_ip, first_spy_direct_probability, parse_node_list, simulate_origin_inference,
    MatchReport, MatchedPair, NodeRecord,
};
pub use scenario::{
    run_attack, run_attack_with_forced_lead, AttackKind, LeadMode, ScenarioConfig, ScenarioResult,
};
pub use sim::{EventQueue, RandomSource, SimError, SimEvent, SimTime};
pub use victim::{BackendKind, IbdPolicy, StaleTipPolicy, TriggerOutcome, VictimState};
