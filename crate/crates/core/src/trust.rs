//! Per-link trust: behavioural windows, the three trust metrics, stage-1 fuzzy
//! evaluation, link classification against the trust threshold, and
//! malicious-node identification.
//!
//! A record `(evaluator j, subject i)` holds T_ij, the trust node `j` places in
//! node `i`. Evidence about `i` is what `j` observes of packets handed to `i`
//! and of `i`'s forwarding transmissions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::fuzzy::{FuzzyError, FuzzyPartition, MembershipVector, RuleTable};
use crate::tables::{self, FuzzyOverrides};
use crate::NodeId;

pub const DEFAULT_TRUST_THRESHOLD: f64 = 0.5;

/// Trust assigned to a link before its first full window. Fully inside the
/// medium-trust plateau, so fresh links carry traffic.
pub const DEFAULT_INITIAL_TRUST: f64 = 0.6;

/// Latency ratio reported for a subject that acknowledged nothing in the
/// window: the top of the latency axis.
pub const UNACKNOWLEDGED_LATENCY_RATIO: f64 = crate::fuzzy::UNBOUNDED_AXIS_TRUNCATION;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("link {subject} -> {evaluator} carried no packets in the window")]
    DormantLink { evaluator: NodeId, subject: NodeId },
    #[error("full battery level must be positive, got {0}")]
    InvalidEnergy(f64),
    #[error("invalid stats window: {0}")]
    InvalidWindow(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

/// Behaviour of `subject` as observed by `evaluator` over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStatsWindow {
    pub evaluator: NodeId,
    pub subject: NodeId,
    /// Packets handed to the subject (α_tx).
    pub sent: u64,
    /// Forwarding acknowledgements heard from the subject (α_r).
    pub acked: u64,
    /// Mean acknowledgement latency of the subject, seconds (τ_s).
    pub subject_latency: f64,
    /// Mean latency of the evaluator's other neighbours, seconds (τ_av); 0 when
    /// none reported.
    pub peer_latency: f64,
    pub window_start: f64,
    pub window_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustMetrics {
    /// α_T = α_r / α_tx, unclamped.
    pub transmission_ratio: f64,
    /// τ_d = τ_s / τ_av.
    pub latency_ratio: f64,
    /// β_E = β_p / β_F.
    pub energy_ratio: f64,
    /// Set when more acknowledgements than packets were observed.
    pub overflow: bool,
}

impl TrustMetrics {
    /// Crisp inputs for the stage-1 fuzzifier. Overflow (duplicate
    /// retransmission) is scored as no useful delivery at near-zero latency.
    pub fn fuzzifier_inputs(&self) -> [f64; 3] {
        if self.overflow {
            [0.0, 0.0, self.energy_ratio]
        } else {
            [self.transmission_ratio, self.latency_ratio, self.energy_ratio]
        }
    }
}

pub fn compute_trust_metrics(
    window: &LinkStatsWindow,
    energy_present: f64,
    energy_full: f64,
) -> Result<TrustMetrics, TrustError> {
    if !(energy_full > 0.0) {
        return Err(TrustError::InvalidEnergy(energy_full));
    }
    if !(window.window_end > window.window_start) {
        return Err(TrustError::InvalidWindow(format!(
            "end {} not after start {}",
            window.window_end, window.window_start
        )));
    }
    if !(window.subject_latency >= 0.0 && window.peer_latency >= 0.0) {
        return Err(TrustError::InvalidWindow("negative or NaN latency".into()));
    }
    if window.sent == 0 {
        return Err(TrustError::DormantLink {
            evaluator: window.evaluator,
            subject: window.subject,
        });
    }

    let transmission_ratio = window.acked as f64 / window.sent as f64;
    let latency_ratio = if window.acked == 0 {
        UNACKNOWLEDGED_LATENCY_RATIO
    } else if window.peer_latency == 0.0 {
        1.0
    } else {
        window.subject_latency / window.peer_latency
    };
    Ok(TrustMetrics {
        transmission_ratio,
        latency_ratio,
        energy_ratio: (energy_present / energy_full).clamp(0.0, 1.0),
        overflow: window.acked > window.sent,
    })
}

/// Stage-1 pipeline: three fuzzifiers, the 64-rule base and the trust
/// defuzzifier.
#[derive(Debug, Clone)]
pub struct TrustEvaluator {
    rules: RuleTable,
}

impl TrustEvaluator {
    pub fn new(overrides: &FuzzyOverrides) -> Result<Self, FuzzyError> {
        Ok(Self {
            rules: tables::trust_rule_table(overrides)?,
        })
    }

    pub fn bundled() -> Self {
        Self::new(&FuzzyOverrides::default()).expect("bundled trust tables are valid")
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn trust_partition(&self) -> &FuzzyPartition {
        self.rules.output()
    }

    /// Fuzzy trust classes for a crisp trust value.
    pub fn trust_memberships(&self, trust: f64) -> Result<MembershipVector, FuzzyError> {
        self.trust_partition().fuzzify(trust)
    }

    pub fn infer(&self, metrics: &TrustMetrics) -> Result<MembershipVector, FuzzyError> {
        let inputs = metrics.fuzzifier_inputs();
        let fuzzified = [
            self.rules.input(0).fuzzify(inputs[0])?,
            self.rules.input(1).fuzzify(inputs[1])?,
            self.rules.input(2).fuzzify(inputs[2])?,
        ];
        self.rules.infer(&fuzzified)
    }

    /// Crisp trust in [0, 1], rounded to 1e-9 so that outputs landing on a
    /// class midpoint (LT centres on 0.5) compare exactly against the threshold.
    pub fn evaluate(&self, metrics: &TrustMetrics) -> Result<f64, FuzzyError> {
        let out = self.infer(metrics)?;
        let crisp = self.trust_partition().defuzzify_centroid(&out)?;
        Ok(((crisp * 1e9).round() / 1e9).clamp(0.0, 1.0))
    }
}

impl Default for TrustEvaluator {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRecord {
    pub evaluator: NodeId,
    pub subject: NodeId,
    pub value: f64,
    pub trusted: bool,
    pub last_update: f64,
    /// False until the first non-dormant window has been evaluated.
    pub observed: bool,
}

/// A directed trust relation: `subject` is trusted (or not) by `evaluator`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectedLink {
    pub evaluator: NodeId,
    pub subject: NodeId,
    pub trust: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkClassification {
    pub trusted: Vec<DirectedLink>,
    pub untrusted: Vec<DirectedLink>,
}

/// Splits records into trusted (T ≥ threshold) and untrusted links.
pub fn classify_links<'a>(
    records: impl IntoIterator<Item = &'a TrustRecord>,
    threshold: f64,
) -> LinkClassification {
    let mut out = LinkClassification::default();
    for r in records {
        let link = DirectedLink {
            evaluator: r.evaluator,
            subject: r.subject,
            trust: r.value,
        };
        if r.value >= threshold {
            out.trusted.push(link);
        } else {
            out.untrusted.push(link);
        }
    }
    out
}

/// A node is malicious when no neighbour trusts it: it is the subject of zero
/// trusted links. A node without neighbours is malicious vacuously.
pub fn find_malicious(
    node: NodeId,
    known_nodes: &BTreeSet<NodeId>,
    trusted_links: &[DirectedLink],
) -> Result<bool, TrustError> {
    if !known_nodes.contains(&node) {
        return Err(TrustError::UnknownNode(node));
    }
    Ok(!trusted_links.iter().any(|l| l.subject == node))
}

/// All directed one-hop trust records of a network.
#[derive(Debug, Clone)]
pub struct TrustTable {
    nodes: BTreeSet<NodeId>,
    records: BTreeMap<(NodeId, NodeId), TrustRecord>,
    threshold: f64,
}

impl TrustTable {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, threshold: f64) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            records: BTreeMap::new(),
            threshold,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    /// Adds (or resets) the record for `subject` as seen by `evaluator`.
    pub fn insert(&mut self, evaluator: NodeId, subject: NodeId, value: f64, now: f64) -> Result<(), TrustError> {
        for n in [evaluator, subject] {
            if !self.nodes.contains(&n) {
                return Err(TrustError::UnknownNode(n));
            }
        }
        self.records.insert(
            (evaluator, subject),
            TrustRecord {
                evaluator,
                subject,
                value,
                trusted: value >= self.threshold,
                last_update: now,
                observed: false,
            },
        );
        Ok(())
    }

    /// Stores a freshly evaluated trust value.
    pub fn update(&mut self, evaluator: NodeId, subject: NodeId, value: f64, now: f64) -> Result<(), TrustError> {
        let threshold = self.threshold;
        let rec = self
            .records
            .get_mut(&(evaluator, subject))
            .ok_or(TrustError::UnknownNode(subject))?;
        rec.value = value;
        rec.trusted = value >= threshold;
        rec.last_update = now;
        rec.observed = true;
        Ok(())
    }

    pub fn get(&self, evaluator: NodeId, subject: NodeId) -> Option<&TrustRecord> {
        self.records.get(&(evaluator, subject))
    }

    /// T_ij: trust placed in `subject` by `evaluator`.
    pub fn trust(&self, evaluator: NodeId, subject: NodeId) -> Option<f64> {
        self.get(evaluator, subject).map(|r| r.value)
    }

    pub fn records(&self) -> impl Iterator<Item = &TrustRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn classify(&self) -> LinkClassification {
        classify_links(self.records.values(), self.threshold)
    }

    pub fn find_malicious(&self, node: NodeId, classification: &LinkClassification) -> Result<bool, TrustError> {
        find_malicious(node, &self.nodes, &classification.trusted)
    }

    pub fn malicious_nodes(&self, classification: &LinkClassification) -> BTreeSet<NodeId> {
        let vouched: BTreeSet<NodeId> = classification.trusted.iter().map(|l| l.subject).collect();
        self.nodes.difference(&vouched).copied().collect()
    }
}

/// When a link's observation window is closed and evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPolicy {
    pub max_packets: u64,
    pub max_age_s: f64,
    /// A packet not forwarded this long after hand-over counts as lost.
    pub ack_timeout_s: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            max_packets: 100,
            max_age_s: 5.0,
            ack_timeout_s: 2.0,
        }
    }
}

/// Packet identity as heard on the air: (packet id, copy number).
pub type PacketKey = (u64, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckKind {
    /// Forward of a packet awaiting acknowledgement.
    Matched,
    /// Another forward of a packet id already acknowledged.
    Duplicate,
    /// Forward of a packet handed over before observation started or
    /// already written off.
    Ignored,
}

/// Watchdog counters for one (evaluator, subject) pair. Packets handed to the
/// subject stay outstanding until overheard being forwarded or until the
/// acknowledgement timeout, so a packet still queued when a window closes is
/// judged in a later window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowAccumulator {
    pub start: f64,
    /// Packets judged this window (acknowledged or timed out), α_tx.
    pub sent: u64,
    /// Forwards heard this window, duplicates included, α_r.
    pub acked: u64,
    pub latency_sum: f64,
    pub latency_count: u64,
    /// Hand-over time and handing neighbour of each unacknowledged packet.
    outstanding: BTreeMap<PacketKey, (f64, NodeId)>,
    /// Ids acknowledged in this and the previous window.
    recent: [BTreeSet<u64>; 2],
}

impl WindowAccumulator {
    pub fn starting_at(start: f64) -> Self {
        Self {
            start,
            ..Default::default()
        }
    }

    pub fn record_sent(&mut self, key: PacketKey, handed_at: f64, from: NodeId) {
        self.outstanding.insert(key, (handed_at, from));
    }

    /// Packets from one neighbour are forwarded in arrival order, so a
    /// forward also writes off every older packet from the same neighbour
    /// that is still outstanding.
    pub fn record_ack(&mut self, key: PacketKey, now: f64) -> AckKind {
        if let Some((handed_at, from)) = self.outstanding.remove(&key) {
            let before = self.outstanding.len();
            self.outstanding.retain(|_, (h, f)| *f != from || *h > handed_at);
            self.sent += 1 + (before - self.outstanding.len()) as u64;
            self.acked += 1;
            self.latency_sum += now - handed_at;
            self.latency_count += 1;
            self.recent[0].insert(key.0);
            AckKind::Matched
        } else if self.recent.iter().any(|s| s.contains(&key.0)) {
            self.acked += 1;
            AckKind::Duplicate
        } else {
            AckKind::Ignored
        }
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn mean_latency(&self) -> Option<f64> {
        (self.latency_count > 0).then(|| self.latency_sum / self.latency_count as f64)
    }

    pub fn is_full(&self, now: f64, policy: &WindowPolicy) -> bool {
        self.sent + self.outstanding.len() as u64 >= policy.max_packets || now - self.start >= policy.max_age_s - 1e-9
    }

    /// Writes off packets outstanding for at least `ack_timeout` seconds,
    /// closes the window into a stats record and restarts the counters at
    /// `now`. Younger outstanding packets carry over.
    pub fn close(
        &mut self,
        evaluator: NodeId,
        subject: NodeId,
        peer_latency: f64,
        now: f64,
        ack_timeout: f64,
    ) -> LinkStatsWindow {
        let before = self.outstanding.len();
        self.outstanding.retain(|_, (handed, _)| now - *handed < ack_timeout - 1e-9);
        self.sent += (before - self.outstanding.len()) as u64;
        let w = LinkStatsWindow {
            evaluator,
            subject,
            sent: self.sent,
            acked: self.acked,
            subject_latency: self.mean_latency().unwrap_or(0.0),
            peer_latency,
            window_start: self.start,
            window_end: now,
        };
        self.start = now;
        self.sent = 0;
        self.acked = 0;
        self.latency_sum = 0.0;
        self.latency_count = 0;
        self.recent.swap(0, 1);
        self.recent[0].clear();
        w
    }
}
