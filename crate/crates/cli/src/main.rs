use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tfcc_core::config::parse_scenario;
use tfcc_core::experiment::{run_experiment, ExperimentError, ExperimentSpec};
use tfcc_core::sim::{SimOptions, Simulation};
use tfcc_core::{Protocol, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "tfcc", version, about = "Trust-based fuzzy congestion control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single scenario and write its metrics timeline.
    Run(RunArgs),
    /// Run every variant of an experiment spec over its seed list.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; overrides `output_dir` in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario file, then print the resolved config.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// TFCC, NO_TRUST or NO_RATE_CONTROL.
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Seconds excluded from the steady-state throughput; must be below the duration.
    #[arg(long)]
    warmup: Option<f64>,
    /// Output directory for `metrics.csv`; the CSV goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `trace.log` (one line per transmit, deliver, drop, trust
    /// window and block event). Requires --out.
    #[arg(long, requires = "out")]
    trace: bool,
    /// Also write per-tick trust, route, rate and congestion CSVs. Requires --out.
    #[arg(long, requires = "out")]
    detail: bool,
}

/// Marks failures caused by bad input rather than by a run; these exit with 2.
#[derive(Debug)]
struct InputError(anyhow::Error);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input<E: Into<anyhow::Error>>(e: E) -> anyhow::Error {
    anyhow::Error::new(InputError(e.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Experiment { spec, out } => cmd_experiment(&spec, out),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.scenario {
        Some(path) => parse_scenario(path).map_err(input)?,
        None => ScenarioConfig::default(),
    };
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    if let Some(w) = args.warmup {
        cfg.warmup_s = w;
    }
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let options = SimOptions {
        trace: args.trace,
        detail: args.detail,
    };
    let mut sim = Simulation::with_options(cfg, args.seed, options).map_err(input)?;
    sim.run_to_end();

    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("metrics.csv");
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            sim.timeline()
                .write_csv(BufWriter::new(file))
                .with_context(|| format!("writing {}", path.display()))?;
            if args.trace {
                write_trace(&dir.join("trace.log"), &sim)?;
            }
            if args.detail {
                sim.detail()
                    .write_csvs(dir, "")
                    .with_context(|| format!("writing detail CSVs under {}", dir.display()))?;
            }
        }
        None => {
            let stdout = io::stdout();
            sim.timeline().write_csv(stdout.lock()).context("writing metrics to stdout")?;
        }
    }

    let c = sim.counters();
    let steady = sim.timeline().steady_state_throughput(sim.config().warmup_s);
    eprintln!(
        "{} seed {}: generated {} delivered {} dropped {} (overflow {}, malicious {}, no route {}), steady-state throughput {}",
        sim.config().protocol,
        args.seed,
        c.generated,
        c.delivered,
        c.dropped(),
        c.dropped_overflow,
        c.dropped_malicious,
        c.dropped_noroute,
        steady.map_or_else(|| "n/a".to_string(), |t| format!("{t:.4}")),
    );
    Ok(())
}

fn write_trace(path: &Path, sim: &Simulation) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for ev in sim.trace() {
        writeln!(w, "{ev}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_experiment(spec: &Path, out: Option<PathBuf>) -> Result<()> {
    let experiment = ExperimentSpec::load(spec).map_err(input)?;
    let out_dir = out
        .or_else(|| experiment.output_dir.clone())
        .ok_or_else(|| input(anyhow::anyhow!("no output directory: pass --out or set output_dir in the spec")))?;
    let report = run_experiment(&experiment, &out_dir).map_err(|e| match e {
        ExperimentError::Config(_) | ExperimentError::Spec(_) => input(e),
        other => anyhow::Error::new(other),
    })?;
    println!("variant,protocol,runs,mean_steady_state_throughput,stddev_steady_state_throughput");
    for row in &report.summary {
        println!(
            "{},{},{},{:.6},{:.6}",
            row.variant,
            row.protocol,
            row.runs,
            row.mean_steady_state_throughput,
            row.stddev_steady_state_throughput
        );
    }
    eprintln!("wrote {} run files and {}", report.runs.len(), report.summary_path.display());
    Ok(())
}

fn cmd_validate(scenario: &Path) -> Result<()> {
    let cfg = parse_scenario(scenario).map_err(input)?;
    print!("{}", cfg.to_toml_string());
    Ok(())
}
