//! Scenario configuration: a TOML document with one key per parameter. Every
//! key is optional; missing keys take the defaults below, unknown keys are
//! rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables::FuzzyOverrides;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("`{key}` = {value} is out of range ({bound})")]
    OutOfRange {
        key: &'static str,
        value: String,
        bound: &'static str,
    },
    #[error("invalid fuzzy tables: {0}")]
    Fuzzy(#[from] crate::fuzzy::FuzzyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Protocol {
    /// Trust filtering and rate control.
    #[default]
    #[serde(rename = "TFCC")]
    Tfcc,
    /// Rate control without trust: every in-range link is usable.
    #[serde(rename = "NO_TRUST")]
    NoTrust,
    /// Trust filtering without the traffic rate controller.
    #[serde(rename = "NO_RATE_CONTROL")]
    NoRateControl,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Tfcc, Protocol::NoTrust, Protocol::NoRateControl];

    pub fn uses_trust(self) -> bool {
        self != Protocol::NoTrust
    }

    pub fn uses_rate_control(self) -> bool {
        self != Protocol::NoRateControl
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tfcc => "TFCC",
            Protocol::NoTrust => "NO_TRUST",
            Protocol::NoRateControl => "NO_RATE_CONTROL",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TFCC" => Ok(Protocol::Tfcc),
            "NO_TRUST" => Ok(Protocol::NoTrust),
            "NO_RATE_CONTROL" => Ok(Protocol::NoRateControl),
            other => Err(format!(
                "unknown protocol `{other}` (expected TFCC, NO_TRUST or NO_RATE_CONTROL)"
            )),
        }
    }
}

/// Node behaviour model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    Benevolent,
    /// Drops each received packet with probability `p_drop`.
    Dropper { p_drop: f64 },
    /// Forwards every received packet `dup_factor` times.
    Flooder { dup_factor: u32 },
    /// Holds every received packet for `extra_delay_s` before queueing it.
    Delayer { extra_delay_s: f64 },
}

impl Behavior {
    pub fn is_malicious(&self) -> bool {
        !matches!(self, Behavior::Benevolent)
    }
}

/// Relative weights of the malicious behaviour models, with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorMix {
    pub dropper: f64,
    pub flooder: f64,
    pub delayer: f64,
    pub p_drop: f64,
    pub dup_factor: u32,
    pub extra_delay_s: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        Self {
            dropper: 0.5,
            flooder: 0.5,
            delayer: 0.0,
            p_drop: 1.0,
            dup_factor: 3,
            extra_delay_s: 0.5,
        }
    }
}

/// Explicitly placed node; the first entry of a layout is the sink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default = "benevolent")]
    pub behavior: Behavior,
}

fn benevolent() -> Behavior {
    Behavior::Benevolent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Total nodes including the sink.
    pub node_count: usize,
    pub field_width_m: f64,
    pub field_height_m: f64,
    pub radio_range_m: f64,
    pub malicious_fraction: f64,
    /// Assign exactly `round(fraction · (n − 1))` malicious nodes instead of
    /// independent per-node draws.
    pub exact_malicious_count: bool,
    pub behavior_mix: BehaviorMix,
    pub trust_threshold: f64,
    pub initial_trust: f64,
    pub trust_window_packets: u64,
    pub trust_window_s: f64,
    /// A packet a neighbour has not been heard forwarding within this time
    /// counts as dropped.
    pub ack_timeout_s: f64,
    pub epsilon: f64,
    pub queue_capacity: usize,
    pub c_min_fraction: f64,
    pub c_max_fraction: f64,
    /// Mean local packet generation rate of each benevolent node.
    pub traffic_rate_pps: f64,
    pub link_rate_pps: f64,
    pub packet_size: f64,
    pub energy_full: f64,
    pub energy_tx: f64,
    pub energy_rx: f64,
    pub duration_s: f64,
    pub control_interval_s: f64,
    pub sample_interval_s: f64,
    /// Samples before this time are excluded from steady-state statistics.
    pub warmup_s: f64,
    pub protocol: Protocol,
    /// Explicit placement; overrides random placement and behaviour draws.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<NodeSpec>>,
    #[serde(skip_serializing_if = "FuzzyOverrides::is_empty")]
    pub fuzzy: FuzzyOverrides,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            node_count: 100,
            field_width_m: 50.0,
            field_height_m: 50.0,
            radio_range_m: 12.0,
            malicious_fraction: 0.5,
            exact_malicious_count: false,
            behavior_mix: BehaviorMix::default(),
            trust_threshold: crate::trust::DEFAULT_TRUST_THRESHOLD,
            initial_trust: crate::trust::DEFAULT_INITIAL_TRUST,
            trust_window_packets: 100,
            trust_window_s: 5.0,
            ack_timeout_s: 2.0,
            epsilon: crate::congestion::DEFAULT_EPSILON,
            queue_capacity: 40,
            c_min_fraction: 0.25,
            c_max_fraction: 0.85,
            traffic_rate_pps: 2.0,
            link_rate_pps: 50.0,
            packet_size: 1.0,
            energy_full: 1e5,
            energy_tx: 2.0,
            energy_rx: 1.0,
            duration_s: 120.0,
            control_interval_s: 1.0,
            sample_interval_s: 1.0,
            warmup_s: 20.0,
            protocol: Protocol::Tfcc,
            layout: None,
            fuzzy: FuzzyOverrides::default(),
        }
    }
}

fn check(ok: bool, key: &'static str, value: impl fmt::Display, bound: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            value: value.to_string(),
            bound,
        })
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serialises to TOML")
    }

    pub fn c_min(&self) -> f64 {
        self.c_min_fraction * self.queue_capacity as f64
    }

    pub fn c_max(&self) -> f64 {
        self.c_max_fraction * self.queue_capacity as f64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.node_count >= 2, "node_count", self.node_count, ">= 2")?;
        check(self.field_width_m > 0.0, "field_width_m", self.field_width_m, "> 0")?;
        check(self.field_height_m > 0.0, "field_height_m", self.field_height_m, "> 0")?;
        check(self.radio_range_m > 0.0, "radio_range_m", self.radio_range_m, "> 0")?;
        check(
            (0.0..=1.0).contains(&self.malicious_fraction),
            "malicious_fraction",
            self.malicious_fraction,
            "0 ..= 1",
        )?;
        let mix = &self.behavior_mix;
        for (key, w) in [
            ("behavior_mix.dropper", mix.dropper),
            ("behavior_mix.flooder", mix.flooder),
            ("behavior_mix.delayer", mix.delayer),
        ] {
            check(w >= 0.0 && w.is_finite(), key, w, ">= 0")?;
        }
        check(
            mix.dropper + mix.flooder + mix.delayer > 0.0,
            "behavior_mix",
            mix.dropper + mix.flooder + mix.delayer,
            "weights sum > 0",
        )?;
        check((0.0..=1.0).contains(&mix.p_drop), "behavior_mix.p_drop", mix.p_drop, "0 ..= 1")?;
        check(mix.dup_factor >= 2, "behavior_mix.dup_factor", mix.dup_factor, ">= 2")?;
        check(
            mix.extra_delay_s >= 0.0 && mix.extra_delay_s.is_finite(),
            "behavior_mix.extra_delay_s",
            mix.extra_delay_s,
            ">= 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.trust_threshold),
            "trust_threshold",
            self.trust_threshold,
            "0 ..= 1",
        )?;
        check(
            (0.0..=1.0).contains(&self.initial_trust),
            "initial_trust",
            self.initial_trust,
            "0 ..= 1",
        )?;
        check(self.trust_window_packets >= 1, "trust_window_packets", self.trust_window_packets, ">= 1")?;
        check(self.trust_window_s > 0.0, "trust_window_s", self.trust_window_s, "> 0")?;
        check(
            self.ack_timeout_s > 0.0 && self.ack_timeout_s.is_finite(),
            "ack_timeout_s",
            self.ack_timeout_s,
            "> 0",
        )?;
        check(self.epsilon > 0.0 && self.epsilon < 1.0, "epsilon", self.epsilon, "0 < epsilon < 1")?;
        check(self.queue_capacity >= 1, "queue_capacity", self.queue_capacity, ">= 1")?;
        check(
            (0.0..1.0).contains(&self.c_min_fraction),
            "c_min_fraction",
            self.c_min_fraction,
            "0 ..< 1",
        )?;
        check(
            self.c_max_fraction > self.c_min_fraction && self.c_max_fraction <= 1.0,
            "c_max_fraction",
            self.c_max_fraction,
            "c_min_fraction < c_max_fraction <= 1",
        )?;
        check(
            self.traffic_rate_pps > 0.0 && self.traffic_rate_pps.is_finite(),
            "traffic_rate_pps",
            self.traffic_rate_pps,
            "> 0",
        )?;
        check(
            self.link_rate_pps > 0.0 && self.link_rate_pps.is_finite(),
            "link_rate_pps",
            self.link_rate_pps,
            "> 0",
        )?;
        check(self.packet_size > 0.0, "packet_size", self.packet_size, "> 0")?;
        check(self.energy_full > 0.0, "energy_full", self.energy_full, "> 0")?;
        check(self.energy_tx >= 0.0, "energy_tx", self.energy_tx, ">= 0")?;
        check(self.energy_rx >= 0.0, "energy_rx", self.energy_rx, ">= 0")?;
        check(
            self.duration_s > 0.0 && self.duration_s <= 1e6,
            "duration_s",
            self.duration_s,
            "0 < duration_s <= 1e6",
        )?;
        check(
            self.control_interval_s > 0.0,
            "control_interval_s",
            self.control_interval_s,
            "> 0",
        )?;
        check(self.sample_interval_s > 0.0, "sample_interval_s", self.sample_interval_s, "> 0")?;
        check(
            self.warmup_s >= 0.0 && self.warmup_s < self.duration_s,
            "warmup_s",
            self.warmup_s,
            "0 <= warmup_s < duration_s",
        )?;
        if let Some(layout) = &self.layout {
            check(
                layout.len() == self.node_count,
                "layout",
                layout.len(),
                "one entry per node (node_count)",
            )?;
            check(
                layout[0].behavior == Behavior::Benevolent,
                "layout",
                "sink behaviour",
                "the sink (first entry) must be benevolent",
            )?;
            for spec in layout {
                match spec.behavior {
                    Behavior::Dropper { p_drop } => {
                        check((0.0..=1.0).contains(&p_drop), "layout.behavior.p_drop", p_drop, "0 ..= 1")?
                    }
                    Behavior::Flooder { dup_factor } => {
                        check(dup_factor >= 2, "layout.behavior.dup_factor", dup_factor, ">= 2")?
                    }
                    Behavior::Delayer { extra_delay_s } => check(
                        extra_delay_s >= 0.0,
                        "layout.behavior.extra_delay_s",
                        extra_delay_s,
                        ">= 0",
                    )?,
                    Behavior::Benevolent => {}
                }
            }
        }
        if !self.fuzzy.is_empty() {
            crate::tables::trust_rule_table(&self.fuzzy)?;
            crate::tables::sigma_rule_table(&self.fuzzy)?;
        }
        Ok(())
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text)
}
