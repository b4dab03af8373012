//! Plain-text configuration for the command-line tools: `key = value` lines,
//! `#` comments, every value validated at load, unknown keys rejected.
//!
//! A config file supplies *defaults*; command-line flags override it. Every
//! field is optional — an empty file is a valid config that changes nothing.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::channel::{ImplementationPreset, Sats, C_LIGHTNING};
use crate::dilation::TrialPolicies;
use crate::eclipse::TriggerMode;
use crate::experiment::EmitFormat;
use crate::scenario::{AttackKind, LeadMode, ScenarioConfig};
use crate::victim::BackendKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable { path: PathBuf, source: io::Error },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    BadSyntax { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: `{key} = {value}`: expected {expected}")]
    BadValue { line: usize, key: String, value: String, expected: &'static str },
}

/// Tool-wide defaults loaded from a config file. `None` means the key was
/// not present and the built-in default stands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppConfig {
    pub implementation: Option<ImplementationPreset>,
    pub backend: Option<BackendKind>,
    pub lead_mode: Option<LeadMode>,
    pub trigger_mode: Option<TriggerMode>,
    pub delay_secs: Option<u64>,
    pub trials: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<EmitFormat>,
    pub capacity: Option<Sats>,
    pub reserve: Option<Sats>,
    pub htlc_amount: Option<Sats>,
    pub final_delta: Option<u32>,
    pub stale_enabled: Option<bool>,
    pub stale_threshold_secs: Option<u64>,
    pub stale_retry_secs: Option<u64>,
    pub ibd_enabled: Option<bool>,
    pub attacker_nodes: Option<u64>,
    pub honest_nodes: Option<u64>,
    pub outbound_count: Option<u32>,
    pub poisoning: Option<f64>,
    pub mean_block_interval_secs: Option<u64>,
    pub horizon_blocks: Option<u64>,
}

fn num<T: std::str::FromStr>(
    line: usize,
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn boolean(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            expected: "true or false",
        }),
    }
}

impl AppConfig {
    /// Parse config text. Later occurrences of a key override earlier ones.
    pub fn parse(text: &str) -> Result<AppConfig, ConfigError> {
        let mut cfg = AppConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadSyntax { line: line_no, text: line.to_string() });
            };
            cfg.set(line_no, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Parse the file at `path`.
    pub fn load(path: &Path) -> Result<AppConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Unreadable { path: path.to_path_buf(), source })?;
        AppConfig::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |expected: &'static str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            expected,
        };
        match key {
            "implementation" => {
                self.implementation = Some(
                    ImplementationPreset::by_name(value)
                        .ok_or(bad("one of c-lightning, lnd, eclair, rust-lightning"))?,
                );
            }
            "backend" => {
                self.backend = Some(BackendKind::from_name(value).ok_or(bad("full or light"))?);
            }
            "lead_mode" => {
                self.lead_mode =
                    Some(LeadMode::from_name(value).ok_or(bad("race-margin or policy-exact"))?);
            }
            "trigger_mode" => {
                self.trigger_mode = Some(match value {
                    "pessimistic" => TriggerMode::Pessimistic,
                    "probabilistic" => TriggerMode::Probabilistic,
                    _ => return Err(bad("pessimistic or probabilistic")),
                });
            }
            "delay_secs" => self.delay_secs = Some(num(line, key, value, "seconds")?),
            "trials" => {
                let t: u32 = num(line, key, value, "a count of at least 1")?;
                if t == 0 {
                    return Err(bad("a count of at least 1"));
                }
                self.trials = Some(t);
            }
            "seed" => self.seed = Some(num(line, key, value, "an unsigned integer")?),
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => {
                self.format = Some(EmitFormat::from_name(value).ok_or(bad("csv or json"))?);
            }
            "capacity" => {
                let c: Sats = num(line, key, value, "satoshis, at least 1")?;
                if c == 0 {
                    return Err(bad("satoshis, at least 1"));
                }
                self.capacity = Some(c);
            }
            "reserve" => self.reserve = Some(num(line, key, value, "satoshis")?),
            "htlc_amount" => {
                let h: Sats = num(line, key, value, "satoshis, at least 1")?;
                if h == 0 {
                    return Err(bad("satoshis, at least 1"));
                }
                self.htlc_amount = Some(h);
            }
            "final_delta" => self.final_delta = Some(num(line, key, value, "blocks")?),
            "stale_enabled" => self.stale_enabled = Some(boolean(line, key, value)?),
            "stale_threshold_secs" => {
                let s: u64 = num(line, key, value, "seconds, at least 1")?;
                if s == 0 {
                    return Err(bad("seconds, at least 1"));
                }
                self.stale_threshold_secs = Some(s);
            }
            "stale_retry_secs" => {
                let s: u64 = num(line, key, value, "seconds, at least 1")?;
                if s == 0 {
                    return Err(bad("seconds, at least 1"));
                }
                self.stale_retry_secs = Some(s);
            }
            "ibd_enabled" => self.ibd_enabled = Some(boolean(line, key, value)?),
            "attacker_nodes" => self.attacker_nodes = Some(num(line, key, value, "a count")?),
            "honest_nodes" => self.honest_nodes = Some(num(line, key, value, "a count")?),
            "outbound_count" => {
                let c: u32 = num(line, key, value, "a count of at least 1")?;
                if c == 0 {
                    return Err(bad("a count of at least 1"));
                }
                self.outbound_count = Some(c);
            }
            "poisoning" => {
                let p: f64 = num(line, key, value, "a fraction in [0, 1]")?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad("a fraction in [0, 1]"));
                }
                self.poisoning = Some(p);
            }
            "mean_block_interval_secs" => {
                let s: u64 = num(line, key, value, "seconds, at least 1")?;
                if s == 0 {
                    return Err(bad("seconds, at least 1"));
                }
                self.mean_block_interval_secs = Some(s);
            }
            "horizon_blocks" => {
                let h: u64 = num(line, key, value, "blocks, at least 1")?;
                if h == 0 {
                    return Err(bad("blocks, at least 1"));
                }
                self.horizon_blocks = Some(h);
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Overlay every set field onto a scenario configuration. Setting
    /// `capacity` rederives the dependent defaults (1% reserve, largest
    /// routable HTLC); explicit `reserve`/`htlc_amount` keys still win.
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(c) = self.capacity {
            cfg.channel_capacity = c;
            cfg.reserve = c / 100;
            cfg.htlc_amount = c.saturating_sub(2 * (c / 100));
        }
        if let Some(r) = self.reserve {
            cfg.reserve = r;
            if self.htlc_amount.is_none() {
                cfg.htlc_amount = cfg.channel_capacity.saturating_sub(2 * r);
            }
        }
        if let Some(h) = self.htlc_amount {
            cfg.htlc_amount = h;
        }
        if let Some(m) = self.lead_mode {
            cfg.lead_mode = m;
        }
        if let Some(d) = self.delay_secs {
            cfg.delay_secs = d;
        }
        if let Some(f) = self.final_delta {
            cfg.final_delta = f;
        }
        self.apply_policies(&mut cfg.policies);
    }

    fn apply_policies(&self, p: &mut TrialPolicies) {
        if let Some(e) = self.stale_enabled {
            p.stale.enabled = e;
        }
        if let Some(s) = self.stale_threshold_secs {
            p.stale.threshold_secs = s;
        }
        if let Some(s) = self.stale_retry_secs {
            p.stale.retry_secs = s;
        }
        if let Some(e) = self.ibd_enabled {
            p.ibd.enabled = e;
        }
        if let Some(t) = self.trigger_mode {
            p.trigger_mode = t;
        }
        if let Some(n) = self.attacker_nodes {
            p.pool.attacker_nodes = n;
        }
        if let Some(n) = self.honest_nodes {
            p.pool.honest_nodes = n;
        }
        if let Some(c) = self.outbound_count {
            p.pool.outbound_count = c;
        }
        if let Some(f) = self.poisoning {
            p.pool.addrman_poisoning = f;
        }
        if let Some(s) = self.mean_block_interval_secs {
            p.mean_block_interval_secs = s;
        }
        if let Some(h) = self.horizon_blocks {
            p.horizon_blocks = Some(h);
        }
    }

    /// Dilation-trial policies for `backend` with every relevant set field
    /// overlaid.
    pub fn policies(&self, backend: BackendKind) -> TrialPolicies {
        let mut p = match backend {
            BackendKind::FullNode => TrialPolicies::default(),
            BackendKind::LightClient => TrialPolicies::light_client(),
        };
        self.apply_policies(&mut p);
        p
    }

    /// Build a scenario for `kind` from this config: the configured
    /// implementation and backend (defaults: c-lightning on a full node)
    /// with every other set field overlaid.
    pub fn scenario(&self, kind: AttackKind) -> ScenarioConfig {
        let preset = self.implementation.unwrap_or(C_LIGHTNING);
        let backend = self.backend.unwrap_or(BackendKind::FullNode);
        let mut cfg = ScenarioConfig::new(kind, preset, backend);
        self.apply(&mut cfg);
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_comment_only_input_is_the_default_config() {
        assert_eq!(AppConfig::parse("").unwrap(), AppConfig::default());
        assert_eq!(
            AppConfig::parse("# nothing here\n\n   # still nothing\n").unwrap(),
            AppConfig::default()
        );
    }

    #[test]
    fn every_key_round_trips() {
        let text = "\
implementation = lnd
backend = light
lead_mode = policy-exact
trigger_mode = probabilistic
delay_secs = 1500
trials = 250          # inline comment
seed = 99
out = /tmp/rows.csv
format = json
capacity = 50000000
reserve = 400000
htlc_amount = 10000000
final_delta = 12
stale_enabled = false
stale_threshold_secs = 2400
stale_retry_secs = 300
ibd_enabled = true
attacker_nodes = 600
honest_nodes = 40
outbound_count = 10
poisoning = 0.25
mean_block_interval_secs = 300
horizon_blocks = 5000
";
        let cfg = AppConfig::parse(text).unwrap();
        assert_eq!(cfg.implementation.unwrap().name, "lnd");
        assert_eq!(cfg.backend, Some(BackendKind::LightClient));
        assert_eq!(cfg.lead_mode, Some(LeadMode::PolicyExact));
        assert_eq!(cfg.trigger_mode, Some(TriggerMode::Probabilistic));
        assert_eq!(cfg.delay_secs, Some(1500));
        assert_eq!(cfg.trials, Some(250));
        assert_eq!(cfg.seed, Some(99));
        assert_eq!(cfg.out, Some(PathBuf::from("/tmp/rows.csv")));
        assert_eq!(cfg.format, Some(EmitFormat::Json));
        assert_eq!(cfg.capacity, Some(50_000_000));
        assert_eq!(cfg.reserve, Some(400_000));
        assert_eq!(cfg.htlc_amount, Some(10_000_000));
        assert_eq!(cfg.final_delta, Some(12));
        assert_eq!(cfg.stale_enabled, Some(false));
        assert_eq!(cfg.stale_threshold_secs, Some(2400));
        assert_eq!(cfg.stale_retry_secs, Some(300));
        assert_eq!(cfg.ibd_enabled, Some(true));
        assert_eq!(cfg.attacker_nodes, Some(600));
        assert_eq!(cfg.honest_nodes, Some(40));
        assert_eq!(cfg.outbound_count, Some(10));
        assert_eq!(cfg.poisoning, Some(0.25));
        assert_eq!(cfg.mean_block_interval_secs, Some(300));
        assert_eq!(cfg.horizon_blocks, Some(5000));
    }

    #[test]
    fn unknown_keys_are_rejected_by_name_and_line() {
        let err = AppConfig::parse("seed = 1\nspeling = 3\n").unwrap_err();
        match &err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(*line, 2);
                assert_eq!(key, "speling");
            }
            other => panic!("wrong error: {other}"),
        }
        assert!(err.to_string().contains("speling"));
    }

    #[test]
    fn values_are_validated_at_load() {
        for (text, needle) in [
            ("trials = 0", "at least 1"),
            ("poisoning = 1.5", "[0, 1]"),
            ("backend = neutron", "full or light"),
            ("format = xml", "csv or json"),
            ("implementation = raiden", "c-lightning"),
            ("stale_enabled = yes", "true or false"),
            ("capacity = 0", "at least 1"),
            ("outbound_count = 0", "at least 1"),
            ("delay_secs = soon", "seconds"),
        ] {
            let err = AppConfig::parse(text).unwrap_err();
            assert!(
                matches!(err, ConfigError::BadValue { line: 1, .. }),
                "{text}: wrong error kind {err:?}"
            );
            assert!(err.to_string().contains(needle), "{text}: message {err}");
        }
    }

    #[test]
    fn lines_without_separator_are_syntax_errors() {
        let err = AppConfig::parse("seed 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadSyntax { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn later_keys_override_earlier_ones() {
        let cfg = AppConfig::parse("seed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.seed, Some(2));
    }

    #[test]
    fn missing_file_is_reported_with_its_path() {
        let err = AppConfig::load(Path::new("/no/such/config.conf")).unwrap_err();
        assert!(err.to_string().contains("/no/such/config.conf"));
    }

    #[test]
    fn scenario_overlay_rederives_dependent_amounts() {
        let cfg = AppConfig::parse("capacity = 10000000\n").unwrap();
        let s = cfg.scenario(AttackKind::A2);
        assert_eq!(s.channel_capacity, 10_000_000);
        assert_eq!(s.reserve, 100_000);
        assert_eq!(s.htlc_amount, 9_800_000);

        // An explicit reserve rederives the HTLC amount around it…
        let cfg = AppConfig::parse("capacity = 10000000\nreserve = 1000000\n").unwrap();
        let s = cfg.scenario(AttackKind::A2);
        assert_eq!(s.reserve, 1_000_000);
        assert_eq!(s.htlc_amount, 8_000_000);

        // …unless the HTLC amount is itself explicit.
        let cfg =
            AppConfig::parse("capacity = 10000000\nreserve = 1000000\nhtlc_amount = 123\n")
                .unwrap();
        assert_eq!(cfg.scenario(AttackKind::A2).htlc_amount, 123);
    }

    #[test]
    fn scenario_overlay_reaches_the_policy_layer() {
        let text = "\
implementation = eclair
backend = light
lead_mode = policy-exact
trigger_mode = probabilistic
stale_threshold_secs = 2400
attacker_nodes = 700
poisoning = 0.5
";
        let cfg = AppConfig::parse(text).unwrap();
        let s = cfg.scenario(AttackKind::A3);
        assert_eq!(s.preset.name, "eclair");
        assert_eq!(s.backend, BackendKind::LightClient);
        assert_eq!(s.lead_mode, LeadMode::PolicyExact);
        assert_eq!(s.policies.trigger_mode, TriggerMode::Probabilistic);
        assert_eq!(s.policies.stale.threshold_secs, 2400);
        assert_eq!(s.policies.pool.attacker_nodes, 700);
        assert_eq!(s.policies.pool.addrman_poisoning, 0.5);
        // Untouched defaults survive the overlay.
        assert_eq!(s.policies.stale.retry_secs, 600);
        assert_eq!(s.target_lead(), 11);
    }

    #[test]
    fn policy_projection_follows_the_backend() {
        let cfg = AppConfig::parse("stale_threshold_secs = 2400\nibd_enabled = true\n").unwrap();
        let full = cfg.policies(BackendKind::FullNode);
        assert_eq!(full.backend, BackendKind::FullNode);
        assert_eq!(full.stale.threshold_secs, 2400);
        assert!(full.ibd.enabled);
        let light = cfg.policies(BackendKind::LightClient);
        assert_eq!(light.backend, BackendKind::LightClient);
        assert_eq!(light.stale.threshold_secs, 2400, "overrides land regardless of backend");
    }
}
