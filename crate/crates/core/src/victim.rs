//! The victim node: backend kinds and their countermeasures.
//!
//! A full node ships two relevant self-defense mechanisms. The *stale-tip
//! check* fires when no block has arrived for a configurable window (30
//! minutes by default) and makes the node try one extra outbound connection,
//! retrying every 10 minutes while the tip stays stale. The *initial block
//! download* heuristic treats the node as badly behind when its best tip's
//! timestamp lags wall-clock time by more than a threshold (24 hours by
//! default). A light client implements neither, which is exactly what makes
//! it the softer target.

use thiserror::Error;

use crate::chain::{Block, ChainView};
use crate::sim::SimTime;

/// What kind of chain backend the victim runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Validates and follows full blocks; runs stale-tip and IBD checks.
    FullNode,
    /// Header/filter client with no stale-tip or IBD defenses.
    LightClient,
}

impl BackendKind {
    pub fn label(self) -> &'static str {
        match self {
            BackendKind::FullNode => "full",
            BackendKind::LightClient => "light",
        }
    }

    pub fn from_name(name: &str) -> Option<BackendKind> {
        match name.trim().to_ascii_lowercase().as_str() {
            "full" | "full-node" => Some(BackendKind::FullNode),
            "light" | "light-client" | "neutrino" => Some(BackendKind::LightClient),
            _ => None,
        }
    }
}

/// Stale-tip detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaleTipPolicy {
    pub enabled: bool,
    /// Tip age, in seconds, at which the node gets suspicious.
    pub threshold_secs: u64,
    /// How often it retries while the tip stays stale.
    pub retry_secs: u64,
}

impl Default for StaleTipPolicy {
    fn default() -> Self {
        StaleTipPolicy { enabled: true, threshold_secs: 1800, retry_secs: 600 }
    }
}

impl StaleTipPolicy {
    /// How many de-eclipse attempts an uninterrupted stale period of length
    /// `gap_secs` produces: one at the threshold, then one per retry
    /// interval. Zero if the gap never reaches the threshold.
    pub fn attempts_in_gap(&self, gap_secs: u64) -> u64 {
        if !self.enabled || gap_secs < self.threshold_secs {
            0
        } else {
            1 + (gap_secs - self.threshold_secs) / self.retry_secs
        }
    }
}

/// Initial-block-download detection parameters. Off by default because the
/// interesting attacks finish before it matters for most timelocks; the flag
/// exists to explore the boundary cases that take about a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IbdPolicy {
    pub enabled: bool,
    /// Tip-timestamp lag, in seconds, beyond which the node considers
    /// itself to be in initial block download.
    pub lag_secs: u64,
}

impl Default for IbdPolicy {
    fn default() -> Self {
        IbdPolicy { enabled: false, lag_secs: 86_400 }
    }
}

/// Outcome of a stale-tip check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerOutcome {
    NoTrigger,
    /// The node tries to open an extra connection past its current peers.
    DeEclipseAttempt,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VictimError {
    #[error("block {got} delivered but the view is at {tip}; deliveries must be consecutive")]
    OutOfOrderDelivery { got: u64, tip: u64 },
    #[error("block mined at {mined_at} cannot be delivered earlier, at {at}")]
    DeliveredBeforeMined { mined_at: SimTime, at: SimTime },
}

/// The eclipsed node's visible state: its chain view plus the bookkeeping the
/// countermeasures need.
#[derive(Debug, Clone)]
pub struct VictimState {
    pub backend: BackendKind,
    pub view: ChainView,
    /// Mined-at timestamp of the current tip, for the IBD lag comparison.
    pub tip_mined_at: SimTime,
    /// When the last block arrived (the stale-tip reference point).
    pub last_delivery_at: SimTime,
    pub stale_policy: StaleTipPolicy,
    pub ibd_policy: IbdPolicy,
    /// Next scheduled stale check, if any. Bumping `check_generation`
    /// invalidates checks already in flight in an event queue.
    pub pending_check_at: Option<SimTime>,
    pub check_generation: u64,
    /// Count of de-eclipse attempts this trial.
    pub de_eclipse_attempts: u64,
}

impl VictimState {
    pub fn new(backend: BackendKind, stale_policy: StaleTipPolicy, ibd_policy: IbdPolicy) -> Self {
        let mut v = VictimState {
            backend,
            view: ChainView::genesis(),
            tip_mined_at: SimTime::ZERO,
            last_delivery_at: SimTime::ZERO,
            stale_policy,
            ibd_policy,
            pending_check_at: None,
            check_generation: 0,
            de_eclipse_attempts: 0,
        };
        // The trial starts at a block boundary: block 0 counts as a fresh
        // delivery, so the first stale window opens at time zero.
        v.arm_stale_check(SimTime::ZERO);
        v
    }

    fn stale_checks_active(&self) -> bool {
        self.backend == BackendKind::FullNode && self.stale_policy.enabled
    }

    /// (Re)arm the stale-tip timer relative to a delivery at `at`. Returns
    /// the scheduled check time for the caller to enqueue.
    fn arm_stale_check(&mut self, at: SimTime) -> Option<SimTime> {
        if !self.stale_checks_active() {
            self.pending_check_at = None;
            return None;
        }
        let check_at = at + self.stale_policy.threshold_secs;
        self.pending_check_at = Some(check_at);
        self.check_generation += 1;
        Some(check_at)
    }

    /// Accept the next block. Advances the view, refreshes the stale-tip
    /// reference point, and returns the next stale check to schedule (if
    /// stale checks are active).
    pub fn deliver_block(&mut self, block: &Block, at: SimTime) -> Result<Option<SimTime>, VictimError> {
        if block.height != self.view.tip_height + 1 {
            return Err(VictimError::OutOfOrderDelivery {
                got: block.height,
                tip: self.view.tip_height,
            });
        }
        if at < block.mined_at {
            return Err(VictimError::DeliveredBeforeMined { mined_at: block.mined_at, at });
        }
        self.view = ChainView { tip_height: block.height, tip_seen_at: at };
        self.tip_mined_at = block.mined_at;
        self.last_delivery_at = at;
        Ok(self.arm_stale_check(at))
    }

    /// Evaluate the stale-tip condition at `now`: a full node with the check
    /// enabled attempts to de-eclipse once its tip is at least
    /// `threshold_secs` old.
    pub fn check_stale_tip(&self, now: SimTime) -> TriggerOutcome {
        if !self.stale_checks_active() {
            return TriggerOutcome::NoTrigger;
        }
        if now.since(self.last_delivery_at) >= self.stale_policy.threshold_secs {
            TriggerOutcome::DeEclipseAttempt
        } else {
            TriggerOutcome::NoTrigger
        }
    }

    /// Record a triggered attempt and arm the retry timer. Returns the next
    /// check time to schedule.
    pub fn record_attempt_and_rearm(&mut self, now: SimTime) -> Option<SimTime> {
        self.de_eclipse_attempts += 1;
        if !self.stale_checks_active() {
            return None;
        }
        let next = now + self.stale_policy.retry_secs;
        self.pending_check_at = Some(next);
        self.check_generation += 1;
        Some(next)
    }

    /// True when a queued check with the given generation is still current.
    pub fn check_is_current(&self, generation: u64) -> bool {
        self.check_generation == generation
    }

    /// IBD heuristic: does the node consider itself badly behind at
    /// `wall_clock`? Strictly greater than the lag threshold, so a tip
    /// lagging by exactly the threshold does not trip it.
    pub fn check_ibd(&self, wall_clock: SimTime) -> bool {
        self.backend == BackendKind::FullNode
            && self.ibd_policy.enabled
            && wall_clock.since(self.tip_mined_at) > self.ibd_policy.lag_secs
    }
}
