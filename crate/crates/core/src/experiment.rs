//! Seed sweeps over protocol variants, with one metrics CSV per run and a
//! summary CSV per experiment.
//!
//! An experiment file is TOML:
//!
//! ```toml
//! scenario_file = "field.scenario"   # relative to this file; optional
//! seeds = [1, 2, 3]
//!
//! [scenario]                         # inline base keys, applied on top
//! duration_s = 60.0
//!
//! [[variants]]
//! protocol = "TFCC"
//!
//! [[variants]]
//! name = "NO_TRUST_slow_links"
//! protocol = "NO_TRUST"
//! overrides = { link_rate_pps = 25.0 }
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Protocol, ScenarioConfig};
use crate::sim::{MetricsTimeline, SimError, Simulation};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error("output directory {path}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("run {variant} seed {seed} failed")]
    Run {
        variant: String,
        seed: u64,
        #[source]
        source: SimError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    /// Defaults to the protocol name.
    #[serde(default)]
    pub name: Option<String>,
    pub protocol: Protocol,
    /// Scenario keys overriding the base for this variant.
    #[serde(default)]
    pub overrides: toml::Table,
}

impl VariantSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.protocol.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub scenario_file: Option<PathBuf>,
    #[serde(default)]
    pub scenario: toml::Table,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// One fully resolved variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))
    }

    /// Loads a spec file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Experiment, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec = Self::from_toml_str(&text)?;
        spec.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, base_dir: &Path) -> Result<Experiment, ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Spec("at least one seed is required".into()));
        }
        if self.variants.is_empty() {
            return Err(ExperimentError::Spec("at least one variant is required".into()));
        }
        let mut base = match &self.scenario_file {
            Some(f) => {
                let p = base_dir.join(f);
                let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                // Validate the file on its own first so errors point at it.
                ScenarioConfig::from_toml_str(&text)?;
                toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Schema(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        merge(&mut base, &self.scenario);

        let mut names = BTreeSet::new();
        let mut variants = Vec::with_capacity(self.variants.len());
        for v in &self.variants {
            let name = v.label();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                return Err(ExperimentError::Spec(format!(
                    "variant name `{name}` must be non-empty and use only [A-Za-z0-9_.-]"
                )));
            }
            if !names.insert(name.clone()) {
                return Err(ExperimentError::Spec(format!("duplicate variant name `{name}`")));
            }
            let mut table = base.clone();
            merge(&mut table, &v.overrides);
            table.insert("protocol".into(), toml::Value::String(v.protocol.to_string()));
            let config: ScenarioConfig = table
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Schema(e.to_string()))?;
            config.validate()?;
            variants.push(Variant { name, config });
        }
        Ok(Experiment {
            variants,
            seeds: self.seeds.clone(),
            output_dir: self.output_dir.as_ref().map(|d| base_dir.join(d)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub path: PathBuf,
    pub steady_state_throughput: f64,
    pub final_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub protocol: String,
    pub runs: usize,
    pub mean_steady_state_throughput: f64,
    pub stddev_steady_state_throughput: f64,
    pub mean_final_throughput: f64,
    pub stddev_final_throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

pub fn run_file_name(variant: &str, seed: u64) -> String {
    format!("{variant}_seed{seed}.csv")
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one scenario to its configured duration.
pub fn run_single(config: &ScenarioConfig, seed: u64) -> Result<MetricsTimeline, SimError> {
    let mut sim = Simulation::new(config.clone(), seed)?;
    sim.run_to_end();
    Ok(sim.into_timeline())
}

fn write_timeline(path: &Path, timeline: &MetricsTimeline) -> Result<(), ExperimentError> {
    let file = std::fs::File::create(path).map_err(|source| ExperimentError::Output {
        path: path.display().to_string(),
        source,
    })?;
    timeline.write_csv(std::io::BufWriter::new(file)).map_err(|source| ExperimentError::Csv {
        path: path.display().to_string(),
        source,
    })
}

/// Runs every (variant, seed) pair in parallel and writes the run CSVs and
/// `summary.csv` into `out_dir`.
pub fn run_experiment(experiment: &Experiment, out_dir: &Path) -> Result<ExperimentReport, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Output {
        path: out_dir.display().to_string(),
        source,
    })?;

    let jobs: Vec<(&Variant, u64)> = experiment
        .variants
        .iter()
        .flat_map(|v| experiment.seeds.iter().map(move |&s| (v, s)))
        .collect();

    let results: Vec<Result<RunResult, ExperimentError>> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let timeline = run_single(&variant.config, seed).map_err(|source| ExperimentError::Run {
                variant: variant.name.clone(),
                seed,
                source,
            })?;
            let path = out_dir.join(run_file_name(&variant.name, seed));
            write_timeline(&path, &timeline)?;
            Ok(RunResult {
                variant: variant.name.clone(),
                seed,
                path,
                steady_state_throughput: timeline
                    .steady_state_throughput(variant.config.warmup_s)
                    .unwrap_or(0.0),
                final_throughput: timeline.last().map_or(0.0, |r| r.normalized_throughput),
            })
        })
        .collect();
    let runs: Vec<RunResult> = results.into_iter().collect::<Result<_, _>>()?;

    let summary: Vec<SummaryRow> = experiment
        .variants
        .iter()
        .map(|v| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v.name).collect();
            let steady: Vec<f64> = mine.iter().map(|r| r.steady_state_throughput).collect();
            let fin: Vec<f64> = mine.iter().map(|r| r.final_throughput).collect();
            let (ms, ss) = mean_stddev(&steady);
            let (mf, sf) = mean_stddev(&fin);
            SummaryRow {
                variant: v.name.clone(),
                protocol: v.config.protocol.to_string(),
                runs: mine.len(),
                mean_steady_state_throughput: ms,
                stddev_steady_state_throughput: ss,
                mean_final_throughput: mf,
                stddev_final_throughput: sf,
            }
        })
        .collect();

    let summary_path = out_dir.join(SUMMARY_FILE);
    let write = || -> csv::Result<()> {
        let mut w = csv::Writer::from_path(&summary_path)?;
        for row in &summary {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|source| ExperimentError::Csv {
        path: summary_path.display().to_string(),
        source,
    })?;

    Ok(ExperimentReport {
        runs,
        summary,
        summary_path,
    })
}
