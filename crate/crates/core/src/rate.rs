//! Traffic rate controller: trust-ordered queue priorities at a parent node,
//! σ_CT-scaled proportional rate grants, and per-interval queue-threshold
//! correction of the granted rates.

use thiserror::Error;

use crate::congestion::{QueueSource, QueueState};
use crate::NodeId;

/// Upper bound on a child's weight, keeping the local source strictly first.
pub const MAX_CHILD_WEIGHT: f64 = 0.99;

/// Fraction of capacity still granted at σ_CT = 1.
pub const CAPACITY_FLOOR: f64 = 0.1;

pub const DECREASE_FACTOR: f64 = 0.5;
pub const INCREASE_STEP: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("child {child} has trust {trust} below threshold {threshold} toward parent {parent}")]
    UntrustedChild {
        parent: NodeId,
        child: NodeId,
        trust: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityEntry {
    pub source: QueueSource,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityAssignment {
    pub parent: NodeId,
    /// Local source first, then children by descending weight.
    pub entries: Vec<PriorityEntry>,
}

impl PriorityAssignment {
    pub fn weight_of(&self, source: QueueSource) -> Option<f64> {
        self.entries.iter().find(|e| e.source == source).map(|e| e.weight)
    }
}

/// Local traffic gets weight 1; each child gets its trust toward the parent,
/// capped just below 1. Equal weights are ordered by lower node id.
pub fn assign_priorities(
    parent: NodeId,
    children_trust: &[(NodeId, f64)],
    threshold: f64,
) -> Result<PriorityAssignment, RateError> {
    if let Some(&(child, trust)) = children_trust.iter().find(|(_, t)| !(*t >= threshold)) {
        return Err(RateError::UntrustedChild {
            parent,
            child,
            trust,
            threshold,
        });
    }
    let mut children: Vec<(NodeId, f64)> = children_trust
        .iter()
        .map(|&(c, t)| (c, t.min(MAX_CHILD_WEIGHT)))
        .collect();
    children.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut entries = Vec::with_capacity(children.len() + 1);
    entries.push(PriorityEntry {
        source: QueueSource::Local,
        weight: 1.0,
    });
    entries.extend(children.into_iter().map(|(c, w)| PriorityEntry {
        source: QueueSource::Child(c),
        weight: w,
    }));
    Ok(PriorityAssignment { parent, entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    pub capacity: f64,
    pub effective_capacity: f64,
    /// Granted packets/second per queue, in assignment order.
    pub grants: Vec<(QueueSource, f64)>,
}

impl RateAllocation {
    pub fn grant(&self, source: QueueSource) -> Option<f64> {
        self.grants.iter().find(|(s, _)| *s == source).map(|&(_, r)| r)
    }

    pub fn total(&self) -> f64 {
        self.grants.iter().map(|(_, r)| r).sum()
    }
}

/// Splits `R · clamp(1 − σ_CT, 0.1, 1)` across queues in proportion to weight.
pub fn allocate_rates(assignment: &PriorityAssignment, capacity: f64, sigma_ct: f64) -> RateAllocation {
    let scale = (1.0 - sigma_ct).clamp(CAPACITY_FLOOR, 1.0);
    let effective = capacity.max(0.0) * scale;
    let weight_sum: f64 = assignment.entries.iter().map(|e| e.weight).sum();
    let grants = assignment
        .entries
        .iter()
        .map(|e| {
            let r = if weight_sum > 0.0 {
                effective * e.weight / weight_sum
            } else {
                0.0
            };
            (e.source, r)
        })
        .collect();
    RateAllocation {
        capacity,
        effective_capacity: effective,
        grants,
    }
}

/// One control-interval correction: halve above C_max, add one packet/s at or
/// below C_min, hold in between. The result never exceeds `grant`.
pub fn adjust_on_queue(current_rate: f64, grant: f64, q: &QueueState) -> f64 {
    let next = if q.occupancy > q.c_max {
        current_rate * DECREASE_FACTOR
    } else if q.occupancy <= q.c_min {
        current_rate + INCREASE_STEP
    } else {
        current_rate
    };
    next.min(grant).max(0.0)
}
