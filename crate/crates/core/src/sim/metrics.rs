//! Sampled metrics, optional event trace and detail logs.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::NodeId;

/// Running totals since the start of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_malicious: u64,
    pub dropped_noroute: u64,
    pub transmissions: u64,
    pub receptions: u64,
    pub energy_consumed: f64,
    pub latency_sum: f64,
}

impl Counters {
    pub fn dropped(&self) -> u64 {
        self.dropped_overflow + self.dropped_malicious + self.dropped_noroute
    }
}

/// One sample. Counts are cumulative; latency is the mean over packets
/// delivered since the previous sample (empty when none were).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub time_s: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_malicious: u64,
    pub dropped_noroute: u64,
    pub in_flight: u64,
    pub mean_latency_s: Option<f64>,
    pub energy_units: f64,
    pub normalized_throughput: f64,
}

impl MetricsRow {
    pub fn dropped(&self) -> u64 {
        self.dropped_overflow + self.dropped_malicious + self.dropped_noroute
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTimeline {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTimeline {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Delivered over generated for packets counted after `warmup_s`
    /// (differences of the cumulative counts). `None` if nothing was
    /// generated in that span.
    pub fn steady_state_throughput(&self, warmup_s: f64) -> Option<f64> {
        let last = self.rows.last()?;
        let base = self
            .rows
            .iter()
            .rev()
            .find(|r| r.time_s <= warmup_s + 1e-9)
            .map(|r| (r.generated, r.delivered))
            .unwrap_or((0, 0));
        let generated = last.generated - base.0;
        (generated > 0).then(|| (last.delivered - base.1) as f64 / generated as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(HEADER)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

pub const HEADER: [&str; 10] = [
    "time_s",
    "generated",
    "delivered",
    "dropped_overflow",
    "dropped_malicious",
    "dropped_noroute",
    "in_flight",
    "mean_latency_s",
    "energy_units",
    "normalized_throughput",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    Overflow,
    Malicious,
    NoRoute,
}

impl fmt::Display for DropCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropCause::Overflow => "overflow",
            DropCause::Malicious => "malicious",
            DropCause::NoRoute => "noroute",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Transmit {
        time_s: f64,
        from: NodeId,
        to: NodeId,
        packet: u64,
        duplicate: bool,
    },
    Deliver {
        time_s: f64,
        packet: u64,
        latency_s: f64,
    },
    Drop {
        time_s: f64,
        node: NodeId,
        packet: u64,
        cause: DropCause,
    },
    TrustWindow {
        time_s: f64,
        evaluator: NodeId,
        subject: NodeId,
        sent: u64,
        acked: u64,
        trust: f64,
    },
    Block {
        time_s: f64,
        node: NodeId,
    },
    Unblock {
        time_s: f64,
        node: NodeId,
    },
}

impl TraceEvent {
    pub fn time_s(&self) -> f64 {
        match *self {
            TraceEvent::Transmit { time_s, .. }
            | TraceEvent::Deliver { time_s, .. }
            | TraceEvent::Drop { time_s, .. }
            | TraceEvent::TrustWindow { time_s, .. }
            | TraceEvent::Block { time_s, .. }
            | TraceEvent::Unblock { time_s, .. } => time_s,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Transmit { time_s, from, to, packet, duplicate } => write!(
                f,
                "t={time_s:.6} event=transmit from={from} to={to} packet={packet} duplicate={duplicate}"
            ),
            TraceEvent::Deliver { time_s, packet, latency_s } => {
                write!(f, "t={time_s:.6} event=deliver packet={packet} latency={latency_s:.6}")
            }
            TraceEvent::Drop { time_s, node, packet, cause } => {
                write!(f, "t={time_s:.6} event=drop node={node} packet={packet} cause={cause}")
            }
            TraceEvent::TrustWindow { time_s, evaluator, subject, sent, acked, trust } => write!(
                f,
                "t={time_s:.6} event=trust evaluator={evaluator} subject={subject} sent={sent} acked={acked} trust={trust:.9}"
            ),
            TraceEvent::Block { time_s, node } => write!(f, "t={time_s:.6} event=block node={node}"),
            TraceEvent::Unblock { time_s, node } => write!(f, "t={time_s:.6} event=unblock node={node}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustRow {
    pub time_s: f64,
    pub evaluator: u32,
    pub subject: u32,
    pub sent: u64,
    pub acked: u64,
    pub transmission_ratio: f64,
    pub latency_ratio: f64,
    pub energy_ratio: f64,
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteRow {
    pub time_s: f64,
    pub node: u32,
    pub next_hop: Option<u32>,
    pub hop_count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub time_s: f64,
    pub parent: u32,
    /// `local` or the child's node id.
    pub source: String,
    pub weight: f64,
    pub grant: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongestionRow {
    pub time_s: f64,
    pub node: u32,
    pub queues: usize,
    pub queued: usize,
    pub complementary_index: f64,
    pub congestion_index: f64,
    pub sigma_ct: f64,
}

/// Per-tick internals, collected only on request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetailLog {
    pub trust: Vec<TrustRow>,
    pub routes: Vec<RouteRow>,
    pub rates: Vec<RateRow>,
    pub congestion: Vec<CongestionRow>,
}

impl DetailLog {
    /// Writes `trust.csv`, `routes.csv`, `rates.csv` and `congestion.csv`
    /// under `dir` with the given file-name prefix.
    pub fn write_csvs(&self, dir: &std::path::Path, prefix: &str) -> csv::Result<()> {
        fn dump<T: Serialize>(path: std::path::PathBuf, rows: &[T]) -> csv::Result<()> {
            let mut w = csv::Writer::from_path(path)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
        dump(dir.join(format!("{prefix}trust.csv")), &self.trust)?;
        dump(dir.join(format!("{prefix}routes.csv")), &self.routes)?;
        dump(dir.join(format!("{prefix}rates.csv")), &self.rates)?;
        dump(dir.join(format!("{prefix}congestion.csv")), &self.congestion)?;
        Ok(())
    }
}

/// Fraction of post-warm-up samples in which any of a node's queues sat above
/// C_max.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueOverload {
    pub samples: u64,
    pub over_cmax: Vec<u64>,
}

impl QueueOverload {
    pub fn fraction(&self, node: NodeId) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.over_cmax.get(node.index()).copied().unwrap_or(0) as f64 / self.samples as f64
    }
}
