//! Bundled partitions and rule bases for both inference stages.

use serde::{Deserialize, Serialize};

use crate::fuzzy::{ranges, FuzzyPartition, LabelRange, Result, RuleAxis, RuleRow, RuleTable};

pub const TRANSMISSION_RATIO: &[(&str, f64, f64)] = &[
    ("VL", 0.0, 0.45),
    ("L", 0.4, 0.6),
    ("M", 0.55, 0.75),
    ("H", 0.7, 1.0),
];

/// The last label ("greater than 1") has no upper end.
pub const LATENCY_RATIO: &[(&str, f64, f64)] = &[
    ("VLD", 0.0, 0.45),
    ("LD", 0.4, 0.6),
    ("AD", 0.55, 1.0),
    ("HD", 1.0, f64::INFINITY),
];

pub const ENERGY_RATIO: &[(&str, f64, f64)] = &[
    ("VLE", 0.0, 0.45),
    ("LE", 0.4, 0.6),
    ("ME", 0.55, 0.75),
    ("HE", 0.7, 1.0),
];

pub const TRUST: &[(&str, f64, f64)] = &[
    ("VLT", 0.0, 0.45),
    ("LT", 0.4, 0.6),
    ("MT", 0.55, 0.75),
    ("HT", 0.7, 1.0),
];

pub const CONGESTION: &[(&str, f64, f64)] = &[
    ("VLC", 0.0, 0.3),
    ("LC", 0.25, 0.55),
    ("MC", 0.5, 0.75),
    ("HC", 0.7, 1.0),
];

pub const SIGMA_CT: &[(&str, f64, f64)] = &[
    ("VL", 0.0, 0.2),
    ("L", 0.15, 0.5),
    ("M", 0.45, 0.8),
    ("H", 0.75, 1.0),
];

/// Trust classes admitted to the congestion-trust rule base.
pub const BENEVOLENT_TRUST_LABELS: &[&str] = &["MT", "HT"];

/// Stage-1 rules over (transmission ratio, latency ratio, energy ratio).
pub const TRUST_RULES: &[(&[&str], &str)] = &[
    (&["VL/L/M/H", "VLD/LD/AD/HD", "VLE/LE"], "VLT"),
    (&["VL/L", "VLD/HD", "ME"], "VLT"),
    (&["VL/L", "VLD/HD", "HE"], "VLT"),
    (&["VL/L", "AD/LD", "ME"], "MT"),
    (&["VL/L", "AD/LD", "HE"], "MT"),
    (&["M/H", "AD/LD", "ME"], "HT"),
    (&["M/H", "AD/LD", "HE"], "HT"),
    (&["M/H", "VLD/HD", "ME"], "LT"),
    (&["M/H", "VLD/HD", "HE"], "LT"),
];

/// Stage-2 rules over (congestion index, trust).
pub const SIGMA_RULES: &[(&[&str], &str)] = &[
    (&["VLC", "MT/HT"], "VL"),
    (&["LC", "MT/HT"], "L"),
    (&["MC", "MT"], "M"),
    (&["HC", "MT"], "H"),
    (&["MC", "HT"], "M"),
    (&["HC", "HT"], "H"),
];

fn rows(table: &[(&[&str], &str)]) -> Vec<RuleRow> {
    table.iter().map(|(when, then)| RuleRow::new(when, then)).collect()
}

/// Optional replacements for the bundled tables, loaded from a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzyOverrides {
    pub transmission_ratio: Option<Vec<LabelRange>>,
    pub latency_ratio: Option<Vec<LabelRange>>,
    pub energy_ratio: Option<Vec<LabelRange>>,
    pub trust: Option<Vec<LabelRange>>,
    pub congestion: Option<Vec<LabelRange>>,
    pub sigma_ct: Option<Vec<LabelRange>>,
    pub trust_rules: Option<Vec<RuleRow>>,
    pub sigma_rules: Option<Vec<RuleRow>>,
}

impl FuzzyOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

fn partition(
    axis: &str,
    bundled: &[(&str, f64, f64)],
    custom: Option<&Vec<LabelRange>>,
    unbounded_top: bool,
) -> Result<FuzzyPartition> {
    match custom {
        Some(r) => FuzzyPartition::from_ranges(axis, r, unbounded_top),
        None => FuzzyPartition::from_ranges(axis, &ranges(bundled), unbounded_top),
    }
}

pub fn transmission_ratio_partition(o: &FuzzyOverrides) -> Result<FuzzyPartition> {
    partition("transmission_ratio", TRANSMISSION_RATIO, o.transmission_ratio.as_ref(), false)
}

pub fn latency_ratio_partition(o: &FuzzyOverrides) -> Result<FuzzyPartition> {
    partition("latency_ratio", LATENCY_RATIO, o.latency_ratio.as_ref(), true)
}

pub fn energy_ratio_partition(o: &FuzzyOverrides) -> Result<FuzzyPartition> {
    partition("energy_ratio", ENERGY_RATIO, o.energy_ratio.as_ref(), false)
}

pub fn trust_partition(o: &FuzzyOverrides) -> Result<FuzzyPartition> {
    partition("trust", TRUST, o.trust.as_ref(), false)
}

pub fn congestion_partition(o: &FuzzyOverrides) -> Result<FuzzyPartition> {
    partition("congestion", CONGESTION, o.congestion.as_ref(), false)
}

pub fn sigma_partition(o: &FuzzyOverrides) -> Result<FuzzyPartition> {
    partition("sigma_ct", SIGMA_CT, o.sigma_ct.as_ref(), false)
}

pub fn trust_rule_table(o: &FuzzyOverrides) -> Result<RuleTable> {
    let axes = vec![
        RuleAxis::full(transmission_ratio_partition(o)?),
        RuleAxis::full(latency_ratio_partition(o)?),
        RuleAxis::full(energy_ratio_partition(o)?),
    ];
    let rule_rows = o.trust_rules.clone().unwrap_or_else(|| rows(TRUST_RULES));
    RuleTable::new(axes, trust_partition(o)?, &rule_rows)
}

pub fn sigma_rule_table(o: &FuzzyOverrides) -> Result<RuleTable> {
    let axes = vec![
        RuleAxis::full(congestion_partition(o)?),
        RuleAxis::restricted(trust_partition(o)?, BENEVOLENT_TRUST_LABELS)?,
    ];
    let rule_rows = o.sigma_rules.clone().unwrap_or_else(|| rows(SIGMA_RULES));
    RuleTable::new(axes, sigma_partition(o)?, &rule_rows)
}
