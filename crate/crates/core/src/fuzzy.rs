//! Single-output Mamdani fuzzy machinery.
//!
//! Partitions are families of trapezoids built from overlapping crisp ranges so
//! that memberships along the axis always sum to one. Rule tables map one label
//! per input axis to an output label; inference uses min for conjunction and
//! max for aggregation, and crisp outputs come from a grid centroid.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid size used by [`FuzzyPartition::defuzzify_centroid`].
pub const CENTROID_GRID_POINTS: usize = 2001;

/// Upper integration bound (and input clamp) for axes whose last label has an
/// unbounded plateau.
pub const UNBOUNDED_AXIS_TRUNCATION: f64 = 3.0;

/// Width of the synthetic crossover inserted between abutting ranges, as a
/// fraction of the lower range's span.
pub const ABUTTING_CROSSOVER_FRACTION: f64 = 0.1;

const ABUT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("partition `{axis}` has no labels")]
    EmptyPartition { axis: String },
    #[error("partition `{axis}`: range of `{label}` is invalid ({lo} .. {hi})")]
    InvalidRange {
        axis: String,
        label: String,
        lo: f64,
        hi: f64,
    },
    #[error("partition `{axis}`: ranges `{lower}` and `{upper}` are not in increasing order")]
    NonMonotone {
        axis: String,
        lower: String,
        upper: String,
    },
    #[error("partition `{axis}`: gap between `{lower}` and `{upper}`")]
    Gap {
        axis: String,
        lower: String,
        upper: String,
    },
    #[error("partition `{axis}`: `{lower}` overlaps non-adjacent `{upper}`")]
    NonPairwiseOverlap {
        axis: String,
        lower: String,
        upper: String,
    },
    #[error("duplicate label `{label}` on axis `{axis}`")]
    DuplicateLabel { axis: String, label: String },
    #[error("NaN input on axis `{axis}` (corrupt telemetry)")]
    NanInput { axis: String },
    #[error("unknown label `{label}` on axis `{axis}`")]
    UnknownLabel { axis: String, label: String },
    #[error("membership vector for `{axis}` has {got} degrees, expected {expected}")]
    DegreeCount {
        axis: String,
        expected: usize,
        got: usize,
    },
    #[error("membership degree {value} on axis `{axis}` is outside [0, 1]")]
    DegreeRange { axis: String, value: f64 },
    #[error("rule table expects {expected} inputs, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("input {index} is on axis `{got}`, rule table expects `{expected}`")]
    PartitionMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("rule table: input tuple ({tuple}) has more than one rule")]
    DuplicateRule { tuple: String },
    #[error("rule table: input tuple ({tuple}) has no rule")]
    MissingRule { tuple: String },
    #[error("all output degrees are zero on `{axis}`; rule coverage is broken")]
    EmptyOutput { axis: String },
}

pub type Result<T> = std::result::Result<T, FuzzyError>;

/// Trapezoid rising a→b, flat b→c, falling c→d. `c = d = ∞` is a plateau
/// without end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Trapezoid {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        debug_assert!(a <= b && b <= c && c <= d, "trapezoid out of order");
        Self { a, b, c, d }
    }

    pub fn membership(&self, x: f64) -> f64 {
        if x >= self.b && x <= self.c {
            1.0
        } else if x > self.a && x < self.b {
            (x - self.a) / (self.b - self.a)
        } else if x > self.c && x < self.d {
            (self.d - x) / (self.d - self.c)
        } else {
            0.0
        }
    }

    /// Closed interval where the membership can be positive.
    pub fn support(&self) -> (f64, f64) {
        (self.a, self.d)
    }
}

/// One crisp range of a label, in the form the published tables use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRange {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

impl LabelRange {
    pub fn new(label: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            lo,
            hi,
        }
    }
}

/// Converts a `&[(label, lo, hi)]` table into owned ranges.
pub fn ranges(table: &[(&str, f64, f64)]) -> Vec<LabelRange> {
    table
        .iter()
        .map(|&(label, lo, hi)| LabelRange::new(label, lo, hi))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyPartition {
    axis: Arc<str>,
    labels: Vec<String>,
    shapes: Vec<Trapezoid>,
    domain_min: f64,
    domain_max: f64,
}

impl FuzzyPartition {
    /// Builds a Ruspini partition from label ranges given in label order.
    ///
    /// The overlap `[lo_{k+1}, hi_k]` of two adjacent ranges becomes a linear
    /// crossover. Abutting ranges get a synthetic crossover centred on the
    /// shared endpoint. With `unbounded_top` the last label's plateau runs to
    /// infinity.
    pub fn from_ranges(
        axis: impl Into<String>,
        label_ranges: &[LabelRange],
        unbounded_top: bool,
    ) -> Result<Self> {
        let axis: String = axis.into();
        let n = label_ranges.len();
        if n == 0 {
            return Err(FuzzyError::EmptyPartition { axis });
        }

        for (i, r) in label_ranges.iter().enumerate() {
            let last = i + 1 == n;
            let hi_ok = r.hi > r.lo || (last && unbounded_top && r.hi >= r.lo);
            if r.lo.is_nan() || r.hi.is_nan() || !r.lo.is_finite() || !hi_ok {
                return Err(FuzzyError::InvalidRange {
                    axis,
                    label: r.label.clone(),
                    lo: r.lo,
                    hi: r.hi,
                });
            }
            if !r.hi.is_finite() && !(last && unbounded_top) {
                return Err(FuzzyError::InvalidRange {
                    axis,
                    label: r.label.clone(),
                    lo: r.lo,
                    hi: r.hi,
                });
            }
            if label_ranges[..i].iter().any(|p| p.label == r.label) {
                return Err(FuzzyError::DuplicateLabel {
                    axis,
                    label: r.label.clone(),
                });
            }
        }

        // Crossover interval between label k and k+1.
        let mut crossovers = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n.saturating_sub(1) {
            let (lower, upper) = (&label_ranges[k], &label_ranges[k + 1]);
            let names = || (axis.clone(), lower.label.clone(), upper.label.clone());
            if upper.lo <= lower.lo || upper.hi <= lower.hi {
                let (axis, lower, upper) = names();
                return Err(FuzzyError::NonMonotone { axis, lower, upper });
            }
            if upper.lo > lower.hi + ABUT_TOLERANCE {
                let (axis, lower, upper) = names();
                return Err(FuzzyError::Gap { axis, lower, upper });
            }
            if let Some(next) = label_ranges.get(k + 2) {
                if next.lo < lower.hi - ABUT_TOLERANCE {
                    return Err(FuzzyError::NonPairwiseOverlap {
                        axis: axis.clone(),
                        lower: lower.label.clone(),
                        upper: next.label.clone(),
                    });
                }
            }
            let crossover = if (upper.lo - lower.hi).abs() <= ABUT_TOLERANCE {
                let half = 0.5 * ABUTTING_CROSSOVER_FRACTION * (lower.hi - lower.lo);
                (lower.hi - half, lower.hi + half)
            } else {
                (upper.lo, lower.hi)
            };
            crossovers.push(crossover);
        }

        let domain_min = label_ranges[0].lo;
        let domain_max = if unbounded_top {
            f64::INFINITY
        } else {
            label_ranges[n - 1].hi
        };

        let mut shapes = Vec::with_capacity(n);
        for k in 0..n {
            let (a, b) = if k == 0 {
                (domain_min, domain_min)
            } else {
                crossovers[k - 1]
            };
            let (c, d) = if k + 1 == n {
                (domain_max, domain_max)
            } else {
                crossovers[k]
            };
            if !(a <= b && b <= c && c <= d) {
                // Synthetic crossovers wider than a neighbouring plateau.
                return Err(FuzzyError::NonPairwiseOverlap {
                    axis,
                    lower: label_ranges[k.saturating_sub(1)].label.clone(),
                    upper: label_ranges[(k + 1).min(n - 1)].label.clone(),
                });
            }
            shapes.push(Trapezoid { a, b, c, d });
        }

        Ok(Self {
            axis: axis.into(),
            labels: label_ranges.iter().map(|r| r.label.clone()).collect(),
            shapes,
            domain_min,
            domain_max,
        })
    }

    pub fn axis(&self) -> &str {
        &self.axis
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn shapes(&self) -> &[Trapezoid] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn domain_min(&self) -> f64 {
        self.domain_min
    }

    /// `f64::INFINITY` for an unbounded axis.
    pub fn domain_max(&self) -> f64 {
        self.domain_max
    }

    pub fn is_unbounded(&self) -> bool {
        self.domain_max.is_infinite()
    }

    /// Finite upper end used for clamping and integration.
    pub fn effective_max(&self) -> f64 {
        if self.is_unbounded() {
            UNBOUNDED_AXIS_TRUNCATION.max(self.shapes[self.len() - 1].b)
        } else {
            self.domain_max
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub(crate) fn require_label(&self, label: &str) -> Result<usize> {
        self.label_index(label)
            .ok_or_else(|| FuzzyError::UnknownLabel {
                axis: self.axis.to_string(),
                label: label.to_string(),
            })
    }

    pub fn shape(&self, label: &str) -> Option<&Trapezoid> {
        self.label_index(label).map(|i| &self.shapes[i])
    }

    /// Membership degree of every label at `x`, after clamping `x` into the
    /// axis domain.
    pub fn fuzzify(&self, x: f64) -> Result<MembershipVector> {
        if x.is_nan() {
            return Err(FuzzyError::NanInput {
                axis: self.axis.to_string(),
            });
        }
        let x = x.clamp(self.domain_min, self.effective_max());
        Ok(MembershipVector {
            axis: Arc::clone(&self.axis),
            degrees: self.shapes.iter().map(|t| t.membership(x)).collect(),
        })
    }

    /// A vector with all mass on `label`.
    pub fn singleton(&self, label: &str) -> Result<MembershipVector> {
        let idx = self.require_label(label)?;
        let mut degrees = vec![0.0; self.len()];
        degrees[idx] = 1.0;
        Ok(MembershipVector {
            axis: Arc::clone(&self.axis),
            degrees,
        })
    }

    /// Wraps raw degrees (one per label, each in [0, 1]) as a vector on this axis.
    pub fn membership(&self, degrees: Vec<f64>) -> Result<MembershipVector> {
        if degrees.len() != self.len() {
            return Err(FuzzyError::DegreeCount {
                axis: self.axis.to_string(),
                expected: self.len(),
                got: degrees.len(),
            });
        }
        if let Some(&value) = degrees.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(FuzzyError::DegreeRange {
                axis: self.axis.to_string(),
                value,
            });
        }
        Ok(MembershipVector {
            axis: Arc::clone(&self.axis),
            degrees,
        })
    }

    /// Aggregated output membership at `x`: each label clipped at its degree,
    /// combined by pointwise max.
    pub fn aggregated(&self, degrees: &[f64], x: f64) -> f64 {
        self.shapes
            .iter()
            .zip(degrees)
            .filter(|(_, &d)| d > 0.0)
            .map(|(t, &d)| t.membership(x).min(d))
            .fold(0.0, f64::max)
    }

    /// Centroid of the clipped-and-aggregated output set, integrated with the
    /// trapezoidal rule on a fixed grid over the (truncated) domain.
    pub fn defuzzify_centroid(&self, degrees: &MembershipVector) -> Result<f64> {
        self.check_axis(0, degrees)?;
        if degrees.degrees.iter().all(|&d| d <= 0.0) {
            return Err(FuzzyError::EmptyOutput {
                axis: self.axis.to_string(),
            });
        }
        let lo = self.domain_min;
        let hi = self.effective_max();
        let step = (hi - lo) / (CENTROID_GRID_POINTS - 1) as f64;
        let mut area = 0.0;
        let mut moment = 0.0;
        for i in 0..CENTROID_GRID_POINTS {
            let x = if i + 1 == CENTROID_GRID_POINTS {
                hi
            } else {
                lo + step * i as f64
            };
            let mu = self.aggregated(&degrees.degrees, x);
            let w = if i == 0 || i + 1 == CENTROID_GRID_POINTS {
                0.5
            } else {
                1.0
            };
            area += w * mu;
            moment += w * mu * x;
        }
        if area <= 0.0 {
            return Err(FuzzyError::EmptyOutput {
                axis: self.axis.to_string(),
            });
        }
        Ok((moment / area).clamp(lo, hi))
    }

    fn check_axis(&self, index: usize, v: &MembershipVector) -> Result<()> {
        if *v.axis != *self.axis {
            return Err(FuzzyError::PartitionMismatch {
                index,
                expected: self.axis.to_string(),
                got: v.axis.to_string(),
            });
        }
        if v.degrees.len() != self.len() {
            return Err(FuzzyError::DegreeCount {
                axis: self.axis.to_string(),
                expected: self.len(),
                got: v.degrees.len(),
            });
        }
        Ok(())
    }
}

/// Degrees of membership of one crisp value in each label of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipVector {
    axis: Arc<str>,
    degrees: Vec<f64>,
}

impl MembershipVector {
    pub fn axis(&self) -> &str {
        &self.axis
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn degree(&self, index: usize) -> f64 {
        self.degrees[index]
    }

    pub fn sum(&self) -> f64 {
        self.degrees.iter().sum()
    }

    /// Label with the largest degree (first on ties).
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for (i, &d) in self.degrees.iter().enumerate() {
            if d > self.degrees[best] {
                best = i;
            }
        }
        best
    }
}

/// One row of a compact rule table: per input axis a `/`-separated set of
/// labels, and the concluded output label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleRow {
    pub when: Vec<String>,
    pub then: String,
}

impl RuleRow {
    pub fn new(when: &[&str], then: &str) -> Self {
        Self {
            when: when.iter().map(|s| s.to_string()).collect(),
            then: then.to_string(),
        }
    }
}

/// An input axis of a rule table, optionally restricted to a subset of its
/// labels (e.g. only the trusted classes).
#[derive(Debug, Clone)]
pub struct RuleAxis {
    partition: FuzzyPartition,
    admissible: Vec<usize>,
}

impl RuleAxis {
    pub fn full(partition: FuzzyPartition) -> Self {
        let admissible = (0..partition.len()).collect();
        Self {
            partition,
            admissible,
        }
    }

    pub fn restricted(partition: FuzzyPartition, labels: &[&str]) -> Result<Self> {
        let admissible = labels
            .iter()
            .map(|l| partition.require_label(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            partition,
            admissible,
        })
    }

    pub fn partition(&self) -> &FuzzyPartition {
        &self.partition
    }

    fn position(&self, label: &str) -> Result<usize> {
        let idx = self.partition.require_label(label)?;
        self.admissible
            .iter()
            .position(|&a| a == idx)
            .ok_or_else(|| FuzzyError::UnknownLabel {
                axis: self.partition.axis().to_string(),
                label: label.to_string(),
            })
    }
}

/// Complete rule table: exactly one output label per combination of
/// admissible input labels.
#[derive(Debug, Clone)]
pub struct RuleTable {
    axes: Vec<RuleAxis>,
    output: FuzzyPartition,
    // Output label index per tuple, mixed-radix over admissible positions.
    conclusions: Vec<usize>,
    // Rows as written: per axis the partition label indices, then the output.
    rows: Vec<(Vec<Vec<usize>>, usize)>,
}

impl RuleTable {
    pub fn new(axes: Vec<RuleAxis>, output: FuzzyPartition, rows: &[RuleRow]) -> Result<Self> {
        let total: usize = axes.iter().map(|a| a.admissible.len()).product();
        let mut conclusions: Vec<Option<usize>> = vec![None; total];
        let mut compact = Vec::with_capacity(rows.len());

        for row in rows {
            if row.when.len() != axes.len() {
                return Err(FuzzyError::ArityMismatch {
                    expected: axes.len(),
                    got: row.when.len(),
                });
            }
            let out = output.require_label(&row.then)?;
            let choices = row
                .when
                .iter()
                .zip(&axes)
                .map(|(spec, axis)| {
                    spec.split('/')
                        .map(|l| axis.position(l.trim()))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            compact.push((
                choices
                    .iter()
                    .zip(&axes)
                    .map(|(ch, axis)| ch.iter().map(|&p| axis.admissible[p]).collect())
                    .collect(),
                out,
            ));

            let mut cursor = vec![0usize; axes.len()];
            loop {
                let positions: Vec<usize> =
                    cursor.iter().zip(&choices).map(|(&c, ch)| ch[c]).collect();
                let slot = Self::slot_of(&axes, &positions);
                if conclusions[slot].is_some() {
                    return Err(FuzzyError::DuplicateRule {
                        tuple: Self::describe(&axes, &positions),
                    });
                }
                conclusions[slot] = Some(out);
                if !advance(&mut cursor, |i| choices[i].len()) {
                    break;
                }
            }
        }

        let mut filled = Vec::with_capacity(total);
        let mut cursor = vec![0usize; axes.len()];
        for slot in 0..total {
            match conclusions[slot] {
                Some(c) => filled.push(c),
                None => {
                    return Err(FuzzyError::MissingRule {
                        tuple: Self::describe(&axes, &cursor),
                    })
                }
            }
            advance(&mut cursor, |i| axes[i].admissible.len());
        }

        Ok(Self {
            axes,
            output,
            conclusions: filled,
            rows: compact,
        })
    }

    pub fn output(&self) -> &FuzzyPartition {
        &self.output
    }

    pub fn input(&self, index: usize) -> &FuzzyPartition {
        &self.axes[index].partition
    }

    pub fn arity(&self) -> usize {
        self.axes.len()
    }

    /// Number of expanded rules.
    pub fn len(&self) -> usize {
        self.conclusions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conclusions.is_empty()
    }

    /// Output label concluded for the given input labels, if they are admissible.
    pub fn conclusion(&self, labels: &[&str]) -> Option<&str> {
        if labels.len() != self.axes.len() {
            return None;
        }
        let positions = labels
            .iter()
            .zip(&self.axes)
            .map(|(l, a)| a.position(l).ok())
            .collect::<Option<Vec<_>>>()?;
        let out = self.conclusions[Self::slot_of(&self.axes, &positions)];
        Some(&self.output.labels[out])
    }

    /// Every expanded rule as (input labels, output label).
    pub fn rules(&self) -> Vec<(Vec<&str>, &str)> {
        let mut out = Vec::with_capacity(self.len());
        let mut cursor = vec![0usize; self.axes.len()];
        for &c in &self.conclusions {
            let labels = cursor
                .iter()
                .zip(&self.axes)
                .map(|(&p, a)| a.partition.labels[a.admissible[p]].as_str())
                .collect();
            out.push((labels, self.output.labels[c].as_str()));
            advance(&mut cursor, |i| self.axes[i].admissible.len());
        }
        out
    }

    /// Mamdani inference over the rows as written. A row's label set on one
    /// axis (`M/H`) is a single antecedent whose degree is the bounded sum of
    /// the listed labels; on a partition of unity that is the membership of
    /// the merged range. A row fires at the min over its axes and each output
    /// label takes the max firing strength of the rows concluding it.
    pub fn infer(&self, inputs: &[MembershipVector]) -> Result<MembershipVector> {
        if inputs.len() != self.axes.len() {
            return Err(FuzzyError::ArityMismatch {
                expected: self.axes.len(),
                got: inputs.len(),
            });
        }
        for (i, (axis, v)) in self.axes.iter().zip(inputs).enumerate() {
            axis.partition.check_axis(i, v)?;
        }

        let mut out = vec![0.0f64; self.output.len()];
        for (sets, concl) in &self.rows {
            let strength = sets
                .iter()
                .zip(inputs)
                .map(|(set, v)| set.iter().map(|&l| v.degrees[l]).sum::<f64>().min(1.0))
                .fold(1.0, f64::min);
            if strength > out[*concl] {
                out[*concl] = strength;
            }
        }
        Ok(MembershipVector {
            axis: Arc::clone(&self.output.axis),
            degrees: out,
        })
    }

    fn slot_of(axes: &[RuleAxis], positions: &[usize]) -> usize {
        positions
            .iter()
            .zip(axes)
            .fold(0, |acc, (&p, a)| acc * a.admissible.len() + p)
    }

    fn describe(axes: &[RuleAxis], positions: &[usize]) -> String {
        positions
            .iter()
            .zip(axes)
            .map(|(&p, a)| a.partition.labels[a.admissible[p]].as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

// Odometer increment, last axis fastest. Returns false after wrapping.
fn advance(cursor: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for i in (0..cursor.len()).rev() {
        cursor[i] += 1;
        if cursor[i] < radix(i) {
            return true;
        }
        cursor[i] = 0;
    }
    false
}

impl fmt::Display for FuzzyPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.axis)?;
        for (i, (l, t)) in self.labels.iter().zip(&self.shapes).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l}({}, {}, {}, {})", t.a, t.b, t.c, t.d)?;
        }
        write!(f, "]")
    }
}
