//! Loss terms and their gradients with respect to the student weights.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward, forward_cached, ClassifierState, Params};
use crate::error::{Error, Result};

pub const DEFAULT_SUPPRESSION: f64 = -1e4;

/// What is known about one row of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowTarget {
    Positive(usize),
    /// Rejected classes of a wrong guess.
    Negative(Vec<u16>),
    Unlabeled,
}

impl RowTarget {
    /// `1` iff the row carries an accurate label.
    pub fn binary_flag(&self) -> u8 {
        u8::from(matches!(self, RowTarget::Positive(_)))
    }

    pub fn negatives(&self) -> &[u16] {
        match self {
            RowTarget::Negative(v) => v,
            _ => &[],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Array2<f64>,
    pub targets: Vec<RowTarget>,
}

impl Batch {
    pub fn new(features: Array2<f64>, targets: Vec<RowTarget>) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the student/teacher consistency term.
    pub lambda_consistency: f64,
    /// Weight of the negative-label term in fine-tuning.
    pub mu_negative: f64,
    /// Per-class weights of the fine-tuning cross-entropy. `None` means uniform.
    pub class_weights: Option<Vec<f64>>,
    pub nls_enabled: bool,
    pub suppression_constant: f64,
    pub ema_decay: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_consistency: 1.0,
            mu_negative: 0.1,
            class_weights: None,
            nls_enabled: true,
            suppression_constant: DEFAULT_SUPPRESSION,
            ema_decay: 0.99,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(format!("loss config: {what}")));
        if !(self.lambda_consistency >= 0.0 && self.lambda_consistency.is_finite()) {
            return bad("lambda_consistency must be finite and >= 0");
        }
        if !(self.mu_negative >= 0.0 && self.mu_negative.is_finite()) {
            return bad("mu_negative must be finite and >= 0");
        }
        if self.suppression_constant > DEFAULT_SUPPRESSION {
            return bad("suppression_constant must be <= -1e4");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("class weights must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Softmax of one row of logits.
pub fn softmax_row(logits: ArrayView1<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.outer_iter().enumerate() {
        for (j, p) in softmax_row(row).into_iter().enumerate() {
            out[[i, j]] = p;
        }
    }
    out
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// `-log(1 - sigmoid(z))`, computed without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Replaces the logit of every rejected class by `constant`, so that class
/// gets (numerically) zero probability while the row still normalizes.
pub fn nls_suppress(logits: &mut Array2<f64>, negatives: &[&[u16]], constant: f64) {
    for (mut row, negs) in logits.outer_iter_mut().zip(negatives) {
        for &c in negs.iter() {
            row[c as usize] = constant;
        }
    }
}

/// Per-class weights `m_c / max(m)`: the largest class gets weight one.
///
/// With `inverse`, the usual imbalance correction `min(m) / m_c` over the
/// non-empty classes is returned instead, with empty classes at weight one.
pub fn class_weights(counts: &[usize], inverse: bool) -> Result<Vec<f64>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::Domain("class counts are all zero".into()));
    }
    if inverse {
        let min = counts.iter().copied().filter(|&m| m > 0).min().unwrap_or(1);
        return Ok(counts
            .iter()
            .map(|&m| if m == 0 { 1.0 } else { min as f64 / m as f64 })
            .collect());
    }
    Ok(counts.iter().map(|&m| m as f64 / max as f64).collect())
}

pub struct LossOutput {
    pub loss: f64,
    pub grads: Params,
    /// Consistency targets the teacher produced for the batch, when used.
    pub teacher_probs: Option<Array2<f64>>,
}

/// Teacher predictions for the consistency target, with rejected classes
/// suppressed when NLS is on.
pub fn teacher_targets(
    state: &ClassifierState,
    teacher_features: ArrayView2<f64>,
    targets: &[RowTarget],
    cfg: &LossConfig,
) -> Result<Array2<f64>> {
    let mut logits = forward(&state.teacher, teacher_features)?;
    if cfg.nls_enabled {
        let negs: Vec<&[u16]> = targets.iter().map(RowTarget::negatives).collect();
        nls_suppress(&mut logits, &negs, cfg.suppression_constant);
    }
    Ok(softmax(logits.view()))
}

/// Cross-entropy on labeled rows plus `lambda` times the mean squared
/// distance between student and teacher class probabilities over all rows.
///
/// The teacher sees `teacher_features` (a separately perturbed copy of the
/// batch, or the batch itself) and receives no gradient.
pub fn mean_teacher_loss(
    state: &ClassifierState,
    batch: &Batch,
    teacher_features: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if teacher_features.dim() != batch.features.dim() {
        return Err(Error::Shape("teacher input differs in shape from the batch".into()));
    }
    let target_probs = teacher_targets(state, teacher_features, &batch.targets, cfg)?;
    let (logits, cache) = forward_cached(&state.student, batch.features.view())?;
    let probs = softmax(logits.view());
    let rows = batch.len();
    let classes = logits.ncols();
    let labeled = batch
        .targets
        .iter()
        .filter(|t| matches!(t, RowTarget::Positive(_)))
        .count();

    let mut loss = 0.0;
    let mut dlogits = Array2::zeros((rows, classes));
    for (i, target) in batch.targets.iter().enumerate() {
        let p = probs.row(i);
        if let RowTarget::Positive(y) = *target {
            let scale = 1.0 / labeled as f64;
            loss += scale * (log_sum_exp(logits.row(i)) - logits[[i, y]]);
            for c in 0..classes {
                dlogits[[i, c]] += scale * (p[c] - f64::from(u8::from(c == y)));
            }
        }
        if cfg.lambda_consistency > 0.0 {
            let scale = cfg.lambda_consistency / rows as f64;
            let diff: Vec<f64> = (0..classes).map(|c| p[c] - target_probs[[i, c]]).collect();
            loss += scale * diff.iter().map(|d| d * d).sum::<f64>();
            // Back through softmax: dz = p * (g - <p, g>) with g = 2 * scale * diff.
            let dot: f64 = (0..classes).map(|c| p[c] * diff[c]).sum();
            for c in 0..classes {
                dlogits[[i, c]] += 2.0 * scale * p[c] * (diff[c] - dot);
            }
        }
    }
    Ok(LossOutput {
        loss,
        grads: backward(&state.student, &cache, dlogits),
        teacher_probs: Some(target_probs),
    })
}

/// Class-weighted cross-entropy on confirmed rows plus `mu` times a binary
/// cross-entropy pushing the logit of each rejected class down.
///
/// Every row must carry a positive or negative label.
pub fn finetune_loss(state: &ClassifierState, batch: &Batch, cfg: &LossConfig) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if let Some(i) = batch.targets.iter().position(|t| matches!(t, RowTarget::Unlabeled)) {
        return Err(Error::Domain(format!("fine-tuning row {i} carries no label")));
    }
    let (logits, cache) = forward_cached(&state.student, batch.features.view())?;
    let rows = batch.len();
    let classes = logits.ncols();
    let n_pos = batch.targets.iter().filter(|t| t.binary_flag() == 1).count();
    let n_neg = rows - n_pos;
    let weight = |c: usize| cfg.class_weights.as_ref().map_or(1.0, |w| w[c]);

    let mut loss = 0.0;
    let mut dlogits = Array2::zeros((rows, classes));
    for (i, target) in batch.targets.iter().enumerate() {
        match target {
            RowTarget::Positive(y) => {
                let scale = weight(*y) / n_pos as f64;
                loss += scale * (log_sum_exp(logits.row(i)) - logits[[i, *y]]);
                let p = softmax_row(logits.row(i));
                for c in 0..classes {
                    dlogits[[i, c]] += scale * (p[c] - f64::from(u8::from(c == *y)));
                }
            }
            RowTarget::Negative(negs) => {
                let scale = cfg.mu_negative / n_neg as f64;
                for &c in negs {
                    let z = logits[[i, c as usize]];
                    loss += scale * softplus(z);
                    dlogits[[i, c as usize]] += scale * sigmoid(z);
                }
            }
            RowTarget::Unlabeled => unreachable!(),
        }
    }
    Ok(LossOutput {
        loss,
        grads: backward(&state.student, &cache, dlogits),
        teacher_probs: None,
    })
}
