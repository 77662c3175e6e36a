//! Choosing which pool samples to query in a stage.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softmax, ClassifierState, Which};
use crate::theory::argmax;

/// Configured either by its name (`"hard"`) or as an object with a `kind`
/// field and, for `uncertainty_std`, optional `repeats` and `noise_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", try_from = "StrategyRepr")]
pub enum Strategy {
    Random,
    /// Highest top-class probability first.
    Easy,
    /// Smallest gap between the two largest probabilities first.
    Hard,
    /// Equal numbers per predicted class, random within a class.
    ClassBalance,
    /// Equal numbers per predicted class, smallest margin first within a class.
    HardClassBalance,
    /// Largest prediction spread under input perturbation first.
    UncertaintyStd {
        #[serde(default = "default_repeats")]
        repeats: usize,
        #[serde(default = "default_noise_scale")]
        noise_scale: f64,
    },
}

fn default_repeats() -> usize {
    8
}

fn default_noise_scale() -> f64 {
    0.1
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Easy => "easy",
            Strategy::Hard => "hard",
            Strategy::ClassBalance => "class_balance",
            Strategy::HardClassBalance => "hard_class_balance",
            Strategy::UncertaintyStd { .. } => "uncertainty_std",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Strategy::Random,
            "easy" => Strategy::Easy,
            "hard" => Strategy::Hard,
            "class_balance" => Strategy::ClassBalance,
            "hard_class_balance" => Strategy::HardClassBalance,
            "uncertainty_std" => Strategy::UncertaintyStd {
                repeats: default_repeats(),
                noise_scale: default_noise_scale(),
            },
            other => return Err(Error::Domain(format!("unknown sampling strategy `{other}`"))),
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum StrategyRepr {
    Name(String),
    Tagged {
        kind: String,
        repeats: Option<usize>,
        noise_scale: Option<f64>,
    },
}

impl TryFrom<StrategyRepr> for Strategy {
    type Error = Error;

    fn try_from(repr: StrategyRepr) -> Result<Self> {
        match repr {
            StrategyRepr::Name(name) => name.parse(),
            StrategyRepr::Tagged { kind, repeats, noise_scale } => match kind.parse()? {
                Strategy::UncertaintyStd { .. } => Ok(Strategy::UncertaintyStd {
                    repeats: repeats.unwrap_or_else(default_repeats),
                    noise_scale: noise_scale.unwrap_or_else(default_noise_scale),
                }),
                _ if repeats.is_some() || noise_scale.is_some() => Err(Error::Domain(format!(
                    "strategy `{kind}` takes no parameters"
                ))),
                other => Ok(other),
            },
        }
    }
}

/// Model predictions for the candidate samples, one row per candidate.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    indices: Vec<usize>,
    probs: Array2<f64>,
    uncertainty: Option<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(indices: Vec<usize>, probs: Array2<f64>) -> Result<Self> {
        if indices.len() != probs.nrows() {
            return Err(Error::Shape(format!(
                "{} candidates but {} score rows",
                indices.len(),
                probs.nrows()
            )));
        }
        for (row, &i) in probs.outer_iter().zip(&indices) {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Domain(format!("scores of sample {i} are not a distribution")));
            }
        }
        Ok(Self {
            indices,
            probs,
            uncertainty: None,
        })
    }

    /// Attaches per-candidate spreads from [`uncertainty_scores`].
    pub fn with_uncertainty(mut self, stds: Vec<f64>) -> Result<Self> {
        if stds.len() != self.indices.len() {
            return Err(Error::Shape("one spread per candidate expected".into()));
        }
        self.uncertainty = Some(stds);
        Ok(self)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_prob(&self, row: usize) -> f64 {
        self.probs.row(row).iter().copied().fold(0.0, f64::max)
    }

    /// Gap between the largest and second-largest probability.
    pub fn margin(&self, row: usize) -> f64 {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &p in self.probs.row(row) {
            if p > first {
                second = first;
                first = p;
            } else if p > second {
                second = p;
            }
        }
        first - second
    }

    pub fn predicted(&self, row: usize) -> usize {
        argmax(self.probs.row(row).as_slice().expect("standard layout"))
    }
}

/// Picks `k` distinct candidates. Ties are broken by lowest sample index.
pub fn select(strategy: &Strategy, scores: &ScoreTable, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = scores.len();
    if k > n {
        return Err(Error::Domain(format!("cannot select {k} of {n} candidates")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rows ordered by sample index so the result does not depend on input order.
    let mut rows: Vec<usize> = (0..n).collect();
    rows.sort_unstable_by_key(|&r| scores.indices[r]);

    let picked_rows: Vec<usize> = match strategy {
        Strategy::Random => {
            rows.shuffle(&mut rng);
            rows.truncate(k);
            rows
        }
        Strategy::Easy => top_k(&rows, k, |a, b| scores.max_prob(b).total_cmp(&scores.max_prob(a))),
        Strategy::Hard => top_k(&rows, k, |a, b| scores.margin(a).total_cmp(&scores.margin(b))),
        Strategy::ClassBalance => {
            let mut groups = group_by_prediction(scores, &rows);
            for g in &mut groups {
                g.shuffle(&mut rng);
            }
            round_robin(groups, k, &mut rng)
        }
        Strategy::HardClassBalance => {
            let mut groups = group_by_prediction(scores, &rows);
            for g in &mut groups {
                g.sort_by(|&a, &b| scores.margin(a).total_cmp(&scores.margin(b)));
            }
            round_robin(groups, k, &mut rng)
        }
        Strategy::UncertaintyStd { .. } => {
            let stds = scores
                .uncertainty
                .as_ref()
                .ok_or_else(|| Error::Domain("uncertainty_std needs spreads attached to the score table".into()))?;
            top_k(&rows, k, |a, b| stds[b].total_cmp(&stds[a]))
        }
    };
    Ok(picked_rows.into_iter().map(|r| scores.indices[r]).collect())
}

/// Stable sort of index-ordered rows, then the first `k`.
fn top_k(rows: &[usize], k: usize, cmp: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|&a, &b| cmp(a, b));
    sorted.truncate(k);
    sorted
}

fn group_by_prediction(scores: &ScoreTable, rows: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); scores.probs.ncols()];
    for &r in rows {
        groups[scores.predicted(r)].push(r);
    }
    groups
}

/// Takes one row per class in turn, visiting classes in a seeded order, until
/// `k` rows are taken. Exhausted classes drop out.
fn round_robin(groups: Vec<Vec<usize>>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(rng);
    let mut cursors = vec![0usize; groups.len()];
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        let before = picked.len();
        for &c in &order {
            if picked.len() == k {
                break;
            }
            if let Some(&r) = groups[c].get(cursors[c]) {
                picked.push(r);
                cursors[c] += 1;
            }
        }
        if picked.len() == before {
            break;
        }
    }
    picked
}

/// Spread of the teacher's class probabilities under additive Gaussian input
/// noise: for each candidate, the largest per-class standard deviation over
/// `repeats` perturbed passes.
pub fn uncertainty_scores(
    model: &ClassifierState,
    features: ArrayView2<f64>,
    candidates: &[usize],
    repeats: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if repeats < 2 {
        return Err(Error::Domain(format!("need at least 2 repeats, got {repeats}")));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::Domain(format!("noise scale {noise_scale} must be finite and >= 0")));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let dim = features.ncols();
    let base = Array2::from_shape_fn((candidates.len(), dim), |(r, j)| features[[candidates[r], j]]);
    let normal = Normal::new(0.0, noise_scale).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Moments of the deviation from the first pass, so identical passes give exactly zero.
    let mut first: Option<Array2<f64>> = None;
    let classes = model.architecture().classes;
    let mut sum = Array2::<f64>::zeros((candidates.len(), classes));
    let mut sum_sq = Array2::<f64>::zeros((candidates.len(), classes));
    for _ in 0..repeats {
        let mut x = base.clone();
        if noise_scale > 0.0 {
            x.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
        let p = softmax(model.forward(x.view(), Which::Teacher)?.view());
        let reference = first.get_or_insert_with(|| p.clone());
        let d = &p - &*reference;
        sum += &d;
        sum_sq += &(&d * &d);
    }
    let r = repeats as f64;
    Ok((0..candidates.len())
        .map(|i| {
            (0..classes)
                .map(|c| {
                    let mean = sum[[i, c]] / r;
                    (sum_sq[[i, c]] / r - mean * mean).max(0.0).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect())
}
