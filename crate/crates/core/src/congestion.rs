//! Queue-based congestion: per-queue index, node-level complementary index
//! (geometric mean over the node's queues) and the stage-2 congestion-trust
//! metric σ_CT.

use thiserror::Error;

use crate::fuzzy::{FuzzyError, FuzzyPartition, MembershipVector, RuleTable};
use crate::tables::{self, FuzzyOverrides, BENEVOLENT_TRUST_LABELS};
use crate::NodeId;

pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CongestionError {
    #[error("queue thresholds invalid: C_min = {c_min}, C_max = {c_max}, capacity = {capacity}")]
    InvalidThresholds { c_min: f64, c_max: f64, capacity: f64 },
    #[error("queue occupancy {occupancy} outside [0, {capacity}]")]
    InvalidOccupancy { occupancy: f64, capacity: f64 },
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("node has no queues")]
    NoQueues,
    #[error("per-queue congestion {0} outside (0, 1]")]
    InvalidIndex(f64),
    #[error("congestion index {0} outside [0, 1]")]
    InvalidCongestion(f64),
    #[error("node carries no medium/high trust mass and is not benevolent")]
    NotBenevolent,
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

/// Where a queue's packets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueueSource {
    Local,
    Child(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueState {
    pub owner: NodeId,
    pub source: QueueSource,
    pub occupancy: f64,
    pub capacity: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl QueueState {
    pub fn validate(&self) -> Result<(), CongestionError> {
        if !(0.0 <= self.c_min && self.c_min < self.c_max && self.c_max <= self.capacity) {
            return Err(CongestionError::InvalidThresholds {
                c_min: self.c_min,
                c_max: self.c_max,
                capacity: self.capacity,
            });
        }
        if !(0.0..=self.capacity).contains(&self.occupancy) {
            return Err(CongestionError::InvalidOccupancy {
                occupancy: self.occupancy,
                capacity: self.capacity,
            });
        }
        Ok(())
    }
}

/// I_k: ε up to C_min, linear to 1 at C_max, 1 beyond.
pub fn queue_congestion(q: &QueueState, epsilon: f64) -> Result<f64, CongestionError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CongestionError::InvalidEpsilon(epsilon));
    }
    q.validate()?;
    let value = if q.occupancy <= q.c_min {
        epsilon
    } else if q.occupancy > q.c_max {
        1.0
    } else {
        (1.0 - epsilon) * (q.occupancy - q.c_min) / (q.c_max - q.c_min) + epsilon
    };
    Ok(value)
}

/// Node-level indices from the per-queue values: the complementary index
/// I′ = (∏ (1 − I_k))^(1/n) and the congestion index I = 1 − I′.
pub fn node_cci(per_queue: &[f64]) -> Result<(f64, f64), CongestionError> {
    if per_queue.is_empty() {
        return Err(CongestionError::NoQueues);
    }
    if let Some(&bad) = per_queue.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(CongestionError::InvalidIndex(bad));
    }
    let n = per_queue.len() as f64;
    let product: f64 = per_queue.iter().map(|&ik| 1.0 - ik).product();
    let complementary = if product <= 0.0 { 0.0 } else { product.powf(1.0 / n) };
    Ok((complementary, 1.0 - complementary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongestionState {
    pub node: NodeId,
    pub per_queue: Vec<f64>,
    pub complementary: f64,
    pub index: f64,
    pub sigma_ct: f64,
}

/// Stage-2 pipeline: congestion fuzzifier, congestion-trust rule base and the
/// σ_CT defuzzifier.
#[derive(Debug, Clone)]
pub struct SigmaEvaluator {
    rules: RuleTable,
    trust: FuzzyPartition,
}

impl SigmaEvaluator {
    pub fn new(overrides: &FuzzyOverrides) -> Result<Self, FuzzyError> {
        Ok(Self {
            rules: tables::sigma_rule_table(overrides)?,
            trust: tables::trust_partition(overrides)?,
        })
    }

    pub fn bundled() -> Self {
        Self::new(&FuzzyOverrides::default()).expect("bundled congestion tables are valid")
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn congestion_partition(&self) -> &FuzzyPartition {
        self.rules.input(0)
    }

    pub fn output_partition(&self) -> &FuzzyPartition {
        self.rules.output()
    }

    /// σ_CT from the congestion index I(i) and the node's trust memberships.
    /// Only medium/high trust mass enters the rule base; it is renormalised to
    /// sum to one.
    pub fn compute_sigma_ct(
        &self,
        congestion_index: f64,
        trust_memberships: &MembershipVector,
    ) -> Result<f64, CongestionError> {
        if !(0.0..=1.0).contains(&congestion_index) {
            return Err(CongestionError::InvalidCongestion(congestion_index));
        }
        if trust_memberships.axis() != self.trust.axis() || trust_memberships.degrees().len() != self.trust.len() {
            return Err(FuzzyError::PartitionMismatch {
                index: 1,
                expected: self.trust.axis().to_string(),
                got: trust_memberships.axis().to_string(),
            }
            .into());
        }
        let mut kept = vec![0.0; self.trust.len()];
        let mut mass = 0.0;
        for label in BENEVOLENT_TRUST_LABELS {
            let i = self.trust.require_label(label)?;
            kept[i] = trust_memberships.degree(i);
            mass += kept[i];
        }
        if mass <= 0.0 {
            return Err(CongestionError::NotBenevolent);
        }
        for d in &mut kept {
            *d = (*d / mass).min(1.0);
        }
        let trust = self.trust.membership(kept)?;
        let congestion = self.congestion_partition().fuzzify(congestion_index)?;
        let out = self.rules.infer(&[congestion, trust])?;
        Ok(self.output_partition().defuzzify_centroid(&out)?)
    }
}

impl Default for SigmaEvaluator {
    fn default() -> Self {
        Self::bundled()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(occupancy: f64) -> QueueState {
        QueueState {
            owner: NodeId(1),
            source: QueueSource::Local,
            occupancy,
            capacity: 40.0,
            c_min: 10.0,
            c_max: 34.0,
        }
    }

    #[test]
    fn piecewise_queue_congestion() {
        assert_eq!(queue_congestion(&q(0.0), 0.05).unwrap(), 0.05);
        assert_eq!(queue_congestion(&q(10.0), 0.05).unwrap(), 0.05);
        assert!((queue_congestion(&q(22.0), 0.05).unwrap() - 0.525).abs() < 1e-12);
        assert_eq!(queue_congestion(&q(35.0), 0.05).unwrap(), 1.0);
        assert!((queue_congestion(&q(34.0), 0.05).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn queue_congestion_errors() {
        let mut same = q(5.0);
        same.c_max = same.c_min;
        assert!(matches!(
            queue_congestion(&same, 0.05),
            Err(CongestionError::InvalidThresholds { .. })
        ));
        assert!(matches!(
            queue_congestion(&q(41.0), 0.05),
            Err(CongestionError::InvalidOccupancy { .. })
        ));
        assert!(matches!(queue_congestion(&q(1.0), 1.0), Err(CongestionError::InvalidEpsilon(_))));
    }

    #[test]
    fn node_cci_cases() {
        let (c, i) = node_cci(&[0.05]).unwrap();
        assert!((c - 0.95).abs() < 1e-12 && (i - 0.05).abs() < 1e-12);
        let (c, _) = node_cci(&[0.1, 0.6]).unwrap();
        assert!((c - 0.6).abs() < 1e-12);
        assert_eq!(node_cci(&[0.2, 1.0, 0.3]).unwrap(), (0.0, 1.0));
        assert_eq!(node_cci(&[]), Err(CongestionError::NoQueues));
        assert_eq!(node_cci(&[0.0]), Err(CongestionError::InvalidIndex(0.0)));
    }

    #[test]
    fn sigma_rule_cases() {
        let s = SigmaEvaluator::bundled();
        let trust = tables::trust_partition(&FuzzyOverrides::default()).unwrap();
        let mt = trust.singleton("MT").unwrap();
        let ht = trust.singleton("HT").unwrap();
        // 0.6 sits on the MC plateau.
        assert!((s.compute_sigma_ct(0.6, &mt).unwrap() - 0.625).abs() < 1e-9);
        let vl = s.compute_sigma_ct(0.1, &ht).unwrap();
        assert!((0.0..=0.2).contains(&vl), "{vl}");
        for t in [&mt, &ht] {
            let h = s.compute_sigma_ct(0.9, t).unwrap();
            assert!((0.75..=1.0).contains(&h), "{h}");
        }
    }

    #[test]
    fn sigma_requires_benevolent_trust() {
        let s = SigmaEvaluator::bundled();
        let trust = tables::trust_partition(&FuzzyOverrides::default()).unwrap();
        let lt = trust.singleton("LT").unwrap();
        assert_eq!(s.compute_sigma_ct(0.5, &lt), Err(CongestionError::NotBenevolent));
        // Mixed LT/MT mass is renormalised onto MT.
        let mixed = trust.fuzzify(0.575).unwrap();
        let pure = trust.singleton("MT").unwrap();
        assert_eq!(
            s.compute_sigma_ct(0.6, &mixed).unwrap(),
            s.compute_sigma_ct(0.6, &pure).unwrap()
        );
        assert!(matches!(
            s.compute_sigma_ct(1.5, &pure),
            Err(CongestionError::InvalidCongestion(_))
        ));
    }
}
