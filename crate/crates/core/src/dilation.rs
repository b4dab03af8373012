//! Block-delivery dilation: the closed-form eclipse-time estimate, the
//! delivery schedule, and the core trial loop.
//!
//! The attacker's problem is a race against two clocks. Delivering blocks
//! too slowly trips the victim's stale-tip alarm; delivering them too fast
//! never builds a lead. The trial loop plays one strategy against a sampled
//! mining schedule and reports either the time at which the attacker's lead
//! reached its target or the countermeasure that ended the eclipse first.

use serde::Serialize;

use crate::chain::{lead, mine_sequence, Block, ChainView};
use crate::eclipse::{resolve_de_eclipse, DeEclipseOutcome, SybilPool, TriggerMode};
use crate::sim::{EventQueue, RandomSource, SimEvent, SimTime};
use crate::victim::{BackendKind, IbdPolicy, StaleTipPolicy, TriggerOutcome, VictimState};

/// Nominal network block cadence, in minutes, used by the closed-form
/// estimate.
pub const NOMINAL_BLOCK_MINUTES: f64 = 10.0;

/// How hard the attacker throttles the victim's view, for the closed-form
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slowdown {
    /// Withhold every block; the victim's view never advances.
    Unbounded,
    /// Deliver one block every `minutes` of real time.
    MinutesPerBlock(f64),
}

/// Result of the closed-form estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EclipseTime {
    pub minutes: f64,
}

impl EclipseTime {
    pub fn hours(&self) -> f64 {
        self.minutes / 60.0
    }

    pub fn is_finite(&self) -> bool {
        self.minutes.is_finite()
    }
}

/// First-order estimate of how long the victim must stay eclipsed before a
/// `timelock_blocks`-block timelock can be cheated.
///
/// With blocks withheld outright, the honest network just has to mine the
/// timelock out: `timelock × 10` minutes. With one block fed to the victim
/// every `sr` minutes, the estimate charges one extra network block for
/// every block the victim still receives in that span — the victim's view
/// advances by that much, extending the chase:
///
/// ```text
/// minutes = (timelock + timelock · 10 / sr) · 10
/// ```
///
/// The estimate deliberately ignores the second-order chase (blocks the
/// victim receives during the extension itself), so measured trial durations
/// run somewhat longer than this. A slowdown of zero minutes per block means
/// no throttling at all, for which no eclipse duration suffices.
pub fn eclipse_time_formula(timelock_blocks: u32, slowdown: Slowdown) -> EclipseTime {
    let tl = timelock_blocks as f64;
    let minutes = match slowdown {
        Slowdown::Unbounded => tl * NOMINAL_BLOCK_MINUTES,
        Slowdown::MinutesPerBlock(sr) => {
            if sr <= 0.0 {
                f64::INFINITY
            } else {
                // Grouped so the reference points are exact in f64:
                // tl·10 + tl·100/sr == 10·tl·(sr + 10)/sr.
                (NOMINAL_BLOCK_MINUTES * tl * (sr + NOMINAL_BLOCK_MINUTES)) / sr
            }
        }
    };
    EclipseTime { minutes }
}

/// How the attacker releases blocks to the victim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    /// Deliver every block `delay` seconds after the previous delivery, or
    /// at its mining time if that is later. Zero means honest immediate
    /// relay. This is the strategy for full-node victims: the delay is
    /// chosen just under the stale-tip threshold.
    Constant(u64),
    /// Never deliver anything. Viable against light clients, which have no
    /// stale-tip alarm to trip.
    WithholdAll,
}

impl DeliveryMode {
    /// The equivalent throttle for the closed-form estimate.
    pub fn as_slowdown(&self) -> Slowdown {
        match *self {
            DeliveryMode::Constant(delay_secs) => {
                Slowdown::MinutesPerBlock(delay_secs as f64 / 60.0)
            }
            DeliveryMode::WithholdAll => Slowdown::Unbounded,
        }
    }
}

/// When the block at `mined_at` reaches the victim, given the previous
/// delivery: never earlier than mined, never closer than the delay.
/// `None` when the mode withholds outright.
pub fn schedule_delivery(
    mined_at: SimTime,
    prev_delivery: SimTime,
    mode: DeliveryMode,
) -> Option<SimTime> {
    match mode {
        DeliveryMode::WithholdAll => None,
        DeliveryMode::Constant(delay_secs) => Some(mined_at.max(prev_delivery + delay_secs)),
    }
}

/// One attacker strategy: a delivery mode driven until the attacker's view
/// leads the victim's by `target_lead` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilationStrategy {
    pub mode: DeliveryMode,
    pub target_lead: u64,
}

impl DilationStrategy {
    pub fn constant_delay(delay_secs: u64, target_lead: u64) -> Self {
        DilationStrategy { mode: DeliveryMode::Constant(delay_secs), target_lead }
    }

    pub fn withhold(target_lead: u64) -> Self {
        DilationStrategy { mode: DeliveryMode::WithholdAll, target_lead }
    }
}

/// Everything about the victim and environment that a trial needs.
#[derive(Debug, Clone, Copy)]
pub struct TrialPolicies {
    pub backend: BackendKind,
    pub stale: StaleTipPolicy,
    pub ibd: IbdPolicy,
    pub pool: SybilPool,
    pub trigger_mode: TriggerMode,
    pub mean_block_interval_secs: u64,
    /// Override for the mining horizon; derived from the strategy when
    /// `None`.
    pub horizon_blocks: Option<u64>,
}

impl Default for TrialPolicies {
    fn default() -> Self {
        TrialPolicies {
            backend: BackendKind::FullNode,
            stale: StaleTipPolicy::default(),
            ibd: IbdPolicy::default(),
            pool: SybilPool::default(),
            trigger_mode: TriggerMode::default(),
            mean_block_interval_secs: 600,
            horizon_blocks: None,
        }
    }
}

impl TrialPolicies {
    /// Light-client victim: no stale-tip alarm, no IBD heuristic.
    pub fn light_client() -> Self {
        TrialPolicies { backend: BackendKind::LightClient, ..TrialPolicies::default() }
    }
}

/// Why an attack (or its dilation phase) failed. The first three arise in
/// the dilation loop; the last two in the channel endgame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureCause {
    /// A stale-tip alarm led to a successful de-eclipse.
    StaleTipDeEclipse,
    /// The initial-block-download heuristic flagged the lagging tip.
    IbdTriggered,
    /// The mining horizon ran out before the lead target was met.
    LeadNotAchieved,
    /// The defrauded party's justice transaction confirmed inside the
    /// contest window.
    JusticeConfirmed,
    /// The defrauded party's preimage claim confirmed before the theft.
    PreimageClaimed,
}

impl FailureCause {
    pub fn label(&self) -> &'static str {
        match self {
            FailureCause::StaleTipDeEclipse => "stale-tip-de-eclipse",
            FailureCause::IbdTriggered => "ibd-triggered",
            FailureCause::LeadNotAchieved => "lead-not-achieved",
            FailureCause::JusticeConfirmed => "justice-confirmed",
            FailureCause::PreimageClaimed => "preimage-claimed",
        }
    }
}

impl std::fmt::Display for FailureCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Result of one dilation trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilationOutcome {
    /// Time at which the lead target was met (success) or the trial failed.
    pub elapsed: SimTime,
    pub failure: Option<FailureCause>,
    pub network_height: u64,
    pub victim_height: u64,
    pub blocks_delivered: u64,
    pub de_eclipse_attempts: u64,
}

impl DilationOutcome {
    pub fn success(&self) -> bool {
        self.failure.is_none()
    }

    pub fn lead(&self) -> i64 {
        self.network_height as i64 - self.victim_height as i64
    }
}

/// Mining horizon when the caller does not override it: twice the expected
/// block count for the lead target to be met, floored at 1000 so strategies
/// that cannot succeed still get a bounded, meaningful trial.
pub(crate) fn auto_horizon(strategy: &DilationStrategy, policies: &TrialPolicies) -> u64 {
    let mean = policies.mean_block_interval_secs.max(1);
    let expected = match strategy.mode {
        DeliveryMode::WithholdAll => strategy.target_lead,
        // The lead grows at (1/mean - 1/delay) per second, so it hits the
        // target after target·delay/(delay - mean) network blocks.
        DeliveryMode::Constant(delay) if delay > mean => {
            strategy.target_lead.saturating_mul(delay) / (delay - mean)
        }
        // The lead never grows; the floor below bounds the trial.
        DeliveryMode::Constant(_) => strategy.target_lead,
    };
    expected.saturating_mul(2).max(1000)
}

/// What one engine step produced. The scenario layer drives the same engine
/// through its channel endgame, so this is crate-visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepKind {
    Mined { height: u64 },
    Delivered { height: u64 },
    /// A countermeasure ended the eclipse.
    Alarm { cause: FailureCause },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Step {
    pub at: SimTime,
    pub kind: StepKind,
}

/// The dilation trial engine: pre-sampled mining schedule, lazily scheduled
/// deliveries, stale-tip checks with generation invalidation.
///
/// Event order within one second is load-bearing and deterministic:
/// minings are scheduled up front, so a mined block pops before anything
/// else in its second (the attacker's lead is measured at its most
/// favorable instant); a stale check scheduled by delivery *k* pops before
/// delivery *k+1* in the same second, so a delivery gap of exactly the
/// threshold counts as stale.
pub(crate) struct Engine {
    pub blocks: Vec<Block>,
    queue: EventQueue<SimEvent>,
    pub victim: VictimState,
    pub network: ChainView,
    rng: RandomSource,
    pool: SybilPool,
    trigger_mode: TriggerMode,
    mode: DeliveryMode,
    pub delivered: u64,
    pub trace: Option<Vec<String>>,
}

impl Engine {
    pub(crate) fn new(
        strategy: &DilationStrategy,
        policies: &TrialPolicies,
        seed: u64,
        traced: bool,
    ) -> Engine {
        let mut rng = RandomSource::from_seed(seed);
        let horizon =
            policies.horizon_blocks.unwrap_or_else(|| auto_horizon(strategy, policies));
        let blocks = mine_sequence(horizon, policies.mean_block_interval_secs, &mut rng);

        let mut queue = EventQueue::new();
        for b in &blocks {
            queue
                .schedule(b.mined_at, SimEvent::BlockMined { height: b.height })
                .expect("mining schedule starts at the clock origin");
        }

        let victim = VictimState::new(policies.backend, policies.stale, policies.ibd);
        if let Some(at) = victim.pending_check_at {
            queue
                .schedule(at, SimEvent::StaleTipCheck { generation: victim.check_generation })
                .expect("initial stale check is in the future");
        }
        if let Some(first) = blocks.first() {
            if let Some(d) = schedule_delivery(first.mined_at, SimTime::ZERO, strategy.mode) {
                queue
                    .schedule(d, SimEvent::BlockDelivered { height: first.height })
                    .expect("first delivery is in the future");
            }
        }

        Engine {
            blocks,
            queue,
            victim,
            network: ChainView::genesis(),
            rng,
            pool: policies.pool,
            trigger_mode: policies.trigger_mode,
            mode: strategy.mode,
            delivered: 0,
            trace: traced.then(Vec::new),
        }
    }

    pub(crate) fn now(&self) -> SimTime {
        self.queue.clock()
    }

    pub(crate) fn lead(&self) -> i64 {
        lead(&self.network, &self.victim.view)
    }

    /// Timestamp of the next event that can change the engine's state,
    /// discarding superseded stale-tip checks along the way. The scenario
    /// layer uses this to detect when a timestamp is fully drained so it can
    /// resolve on-chain races with all of the second's arrivals in view.
    pub(crate) fn next_meaningful_at(&mut self) -> Option<SimTime> {
        loop {
            let (at, event) = self.queue.peek()?;
            if let SimEvent::StaleTipCheck { generation } = event {
                if !self.victim.check_is_current(*generation) {
                    self.queue.pop();
                    continue;
                }
            }
            return Some(at);
        }
    }

    fn trace_event(&mut self, at: SimTime, what: &str) {
        if let Some(lines) = &mut self.trace {
            lines.push(format!(
                "t={} {} victim_h={} network_h={} lead={}",
                at.as_secs(),
                what,
                self.victim.view.tip_height,
                self.network.tip_height,
                self.network.tip_height as i64 - self.victim.view.tip_height as i64,
            ));
        }
    }

    /// Advance to the next meaningful event. Returns `None` when the mining
    /// horizon is exhausted.
    pub(crate) fn step(&mut self) -> Option<Step> {
        loop {
            let (now, event) = self.queue.pop()?;
            match event {
                SimEvent::BlockMined { height } => {
                    self.network = ChainView { tip_height: height, tip_seen_at: now };
                    // Block arrival is the trial's wall-clock heartbeat, so
                    // the IBD lag comparison runs here. It is checked before
                    // the caller sees the new lead: the lag accumulated
                    // strictly before this instant.
                    if self.victim.check_ibd(now) {
                        self.trace_event(now, "ibd-alarm");
                        return Some(Step {
                            at: now,
                            kind: StepKind::Alarm { cause: FailureCause::IbdTriggered },
                        });
                    }
                    self.trace_event(now, &format!("mined h={height}"));
                    return Some(Step { at: now, kind: StepKind::Mined { height } });
                }
                SimEvent::BlockDelivered { height } => {
                    let block = self.blocks[(height - 1) as usize];
                    let next_check = self
                        .victim
                        .deliver_block(&block, now)
                        .expect("deliveries are scheduled consecutively and after mining");
                    if let Some(at) = next_check {
                        self.queue
                            .schedule(
                                at,
                                SimEvent::StaleTipCheck {
                                    generation: self.victim.check_generation,
                                },
                            )
                            .expect("stale check is scheduled ahead of the clock");
                    }
                    self.delivered += 1;
                    // Chain the next delivery after the stale check above,
                    // so a gap of exactly the threshold pops check-first.
                    if let Some(next) = self.blocks.get(height as usize) {
                        if let Some(d) = schedule_delivery(next.mined_at, now, self.mode) {
                            self.queue
                                .schedule(d, SimEvent::BlockDelivered { height: next.height })
                                .expect("next delivery never precedes the current one");
                        }
                    }
                    self.trace_event(now, &format!("delivered h={height}"));
                    return Some(Step { at: now, kind: StepKind::Delivered { height } });
                }
                SimEvent::StaleTipCheck { generation } => {
                    if !self.victim.check_is_current(generation) {
                        continue; // superseded by a delivery
                    }
                    if self.victim.check_stale_tip(now) != TriggerOutcome::DeEclipseAttempt {
                        continue;
                    }
                    let next = self.victim.record_attempt_and_rearm(now);
                    match resolve_de_eclipse(&self.pool, self.trigger_mode, &mut self.rng) {
                        DeEclipseOutcome::DeEclipsed => {
                            self.trace_event(
                                now,
                                &format!(
                                    "stale-alarm attempt={} escaped",
                                    self.victim.de_eclipse_attempts
                                ),
                            );
                            return Some(Step {
                                at: now,
                                kind: StepKind::Alarm {
                                    cause: FailureCause::StaleTipDeEclipse,
                                },
                            });
                        }
                        DeEclipseOutcome::StillEclipsed => {
                            self.trace_event(
                                now,
                                &format!(
                                    "stale-alarm attempt={} still-eclipsed",
                                    self.victim.de_eclipse_attempts
                                ),
                            );
                            if let Some(at) = next {
                                self.queue
                                    .schedule(
                                        at,
                                        SimEvent::StaleTipCheck {
                                            generation: self.victim.check_generation,
                                        },
                                    )
                                    .expect("retry check is scheduled ahead of the clock");
                            }
                        }
                    }
                }
                SimEvent::HtlcExpiry { .. } | SimEvent::Broadcast { .. } => {
                    unreachable!("the dilation loop never schedules channel events")
                }
            }
        }
    }

    fn outcome(&self, elapsed: SimTime, failure: Option<FailureCause>) -> DilationOutcome {
        DilationOutcome {
            elapsed,
            failure,
            network_height: self.network.tip_height,
            victim_height: self.victim.view.tip_height,
            blocks_delivered: self.delivered,
            de_eclipse_attempts: self.victim.de_eclipse_attempts,
        }
    }
}

fn run(strategy: &DilationStrategy, policies: &TrialPolicies, seed: u64, traced: bool) -> (DilationOutcome, Vec<String>) {
    let mut engine = Engine::new(strategy, policies, seed, traced);
    if strategy.target_lead == 0 {
        let outcome = engine.outcome(SimTime::ZERO, None);
        return (outcome, engine.trace.unwrap_or_default());
    }
    loop {
        match engine.step() {
            Some(Step { at, kind: StepKind::Mined { .. } }) => {
                if engine.lead() >= strategy.target_lead as i64 {
                    let outcome = engine.outcome(at, None);
                    return (outcome, engine.trace.unwrap_or_default());
                }
            }
            Some(Step { kind: StepKind::Delivered { .. }, .. }) => {}
            Some(Step { at, kind: StepKind::Alarm { cause } }) => {
                let outcome = engine.outcome(at, Some(cause));
                return (outcome, engine.trace.unwrap_or_default());
            }
            None => {
                let outcome = engine.outcome(engine.now(), Some(FailureCause::LeadNotAchieved));
                return (outcome, engine.trace.unwrap_or_default());
            }
        }
    }
}

/// Run one dilation trial: play `strategy` against a mining schedule drawn
/// from `seed` until the lead target is met or a countermeasure fires.
pub fn run_dilation(
    strategy: &DilationStrategy,
    policies: &TrialPolicies,
    seed: u64,
) -> DilationOutcome {
    run(strategy, policies, seed, false).0
}

/// Same trial, also returning the per-event trace. Given equal inputs the
/// trace is byte-identical across runs and platforms.
pub fn run_dilation_traced(
    strategy: &DilationStrategy,
    policies: &TrialPolicies,
    seed: u64,
) -> (DilationOutcome, Vec<String>) {
    run(strategy, policies, seed, true)
}
