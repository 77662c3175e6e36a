//! Information-theoretic quantities behind yes/no label queries.
//!
//! All entropies are measured in bits. A full class label for a `C`-way task
//! carries `log2 C` bits; a yes/no answer about one candidate class carries at
//! most one bit. The functions here compare the two per bit of supervision.

use crate::error::{Error, Result};

/// Tolerance used when checking that a probability vector sums to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance of the bisection behind [`efficiency_threshold`].
pub const THRESHOLD_TOLERANCE: f64 = 1e-6;

const THRESHOLD_LOWER: f64 = 1e-9;
const THRESHOLD_UPPER: f64 = 0.5;

/// Number of classes of a classification task. Always at least two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassCount(usize);

impl ClassCount {
    pub fn new(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Domain(format!(
                "class count must be at least 2, got {classes}"
            )));
        }
        Ok(Self(classes))
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Bits carried by one full label.
    pub fn log2(self) -> f64 {
        (self.0 as f64).log2()
    }
}

impl std::fmt::Display for ClassCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// An entropy in bits.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct EntropyBits(f64);

impl EntropyBits {
    pub fn bits(self) -> f64 {
        self.0
    }
}

/// A categorical distribution over `C >= 2` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_simplex(&values)?;
        Ok(Self(values))
    }

    /// Uniform distribution over `classes` classes.
    pub fn uniform(classes: ClassCount) -> Self {
        let c = classes.get();
        Self(vec![1.0 / c as f64; c])
    }

    /// Puts `top` on class `class` and spreads the rest uniformly.
    pub fn peaked(classes: ClassCount, class: usize, top: f64) -> Result<Self> {
        let c = classes.get();
        if class >= c {
            return Err(Error::Domain(format!("class {class} out of range for {c} classes")));
        }
        let rest = (1.0 - top) / (c - 1) as f64;
        let mut values = vec![rest; c];
        values[class] = top;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> ClassCount {
        ClassCount(self.0.len())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn validate_simplex(values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "probability vector needs at least 2 entries, got {}",
            values.len()
        )));
    }
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Domain(format!("entry {i} = {v} is not a probability")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Domain(format!("entries sum to {sum}, not 1")));
    }
    Ok(())
}

/// `-p log2 p` with the `0 log 0 = 0` convention.
fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Entropy of a yes/no answer whose "yes" probability is `p`.
pub fn binary_entropy(p: f64) -> Result<EntropyBits> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("{p} is not a probability")));
    }
    Ok(EntropyBits(plogp(p) + plogp(1.0 - p)))
}

/// Shannon entropy of the full predictive distribution.
pub fn full_entropy(p: &ProbabilityVector) -> EntropyBits {
    EntropyBits(p.values().iter().map(|&v| plogp(v)).sum())
}

/// Average bits carried by one full label: `log2 C`.
pub fn average_bits_full(classes: ClassCount) -> EntropyBits {
    EntropyBits(classes.log2())
}

/// Whether asking "is it class `class`?" yields at least as much entropy per
/// bit as asking for the full label.
pub fn one_bit_efficiency_condition(
    p: &ProbabilityVector,
    class: usize,
    classes: ClassCount,
) -> Result<bool> {
    check_class(p, class)?;
    if p.classes() != classes {
        return Err(Error::Domain(format!(
            "vector has {} entries but the task has {classes} classes",
            p.values().len()
        )));
    }
    let one_bit = binary_entropy(p.values()[class])?.bits();
    let per_bit_full = full_entropy(p).bits() / classes.log2();
    Ok(one_bit >= per_bit_full)
}

/// `f(p) = -p/(1-p) log2 p - log2(1-p)`, the left-hand side of the threshold
/// condition. Nondecreasing on `(0, 1)` with `f(1/2) = 2`.
pub fn efficiency_curve(p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -p / (1.0 - p) * p.log2() - (1.0 - p).log2()
}

/// Right-hand side of the threshold condition, `log2(C-1) / (log2 C - 1)`.
pub fn efficiency_target(classes: ClassCount) -> f64 {
    let c = classes.get() as f64;
    (c - 1.0).log2() / (c.log2() - 1.0)
}

/// Smallest top-class probability `p*` such that every `p_c >= p*` makes the
/// yes/no query at least as efficient per bit as a full label.
///
/// Found by bisection on `(1e-9, 0.5]`. The upper end of the final bracket is
/// returned, so `efficiency_curve(p*) >= efficiency_target(C)` always holds.
pub fn efficiency_threshold(classes: usize) -> Result<f64> {
    let classes = ClassCount::new(classes)?;
    if classes.get() == 2 {
        return Ok(0.0);
    }
    let target = efficiency_target(classes);
    Ok(bisect_increasing(efficiency_curve, target, THRESHOLD_LOWER, THRESHOLD_UPPER, THRESHOLD_TOLERANCE))
}

/// Bisection for a nondecreasing `f`: returns `hi` with `f(hi) >= target` and
/// `hi - lo <= tol`, where `lo` is the last point with `f(lo) < target`.
fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    if f(lo) >= target {
        return lo;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Ratio of the yes/no entropy for class `class` to the full entropy.
pub fn entropy_ratio(p: &ProbabilityVector, class: usize) -> Result<f64> {
    check_class(p, class)?;
    let full = full_entropy(p).bits();
    if full <= 0.0 {
        return Err(Error::UndefinedRatio(
            "full entropy is zero for a point-mass distribution".into(),
        ));
    }
    Ok(binary_entropy(p.values()[class])?.bits() / full)
}

/// The class to guess for a yes/no query: the most probable one, lowest index
/// on ties. This also maximizes the binary entropy of the answer.
pub fn argmax_query_class(p: &ProbabilityVector) -> usize {
    argmax(p.values())
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_class(p: &ProbabilityVector, class: usize) -> Result<()> {
    if class >= p.values().len() {
        return Err(Error::Domain(format!(
            "class {class} out of range for {} classes",
            p.values().len()
        )));
    }
    Ok(())
}
