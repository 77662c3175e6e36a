//! Minibatch training loops for the two training modes.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ema_update, finetune_loss, mean_teacher_loss, Batch, ClassifierState, LossConfig, RowTarget, Sgd};

/// What happened during one training call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub steps: usize,
    pub last_loss: f64,
    /// Largest teacher probability seen on any rejected class of any batch row.
    pub max_suppressed_prob: f64,
    /// Largest deviation of a teacher probability row sum from one.
    pub max_normalization_error: f64,
}

struct Noise {
    normal: Option<Normal<f64>>,
}

impl Noise {
    fn new(scale: f64) -> Result<Self> {
        let normal = if scale > 0.0 {
            Some(Normal::new(0.0, scale).map_err(|e| Error::Domain(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { normal })
    }

    fn gather(&self, features: ArrayView2<f64>, rows: &[usize], rng: &mut ChaCha8Rng) -> Array2<f64> {
        let dim = features.ncols();
        let mut out = Array2::from_shape_fn((rows.len(), dim), |(r, j)| features[[rows[r], j]]);
        if let Some(n) = &self.normal {
            out.mapv_inplace(|v| v + n.sample(rng));
        }
        out
    }
}

fn check_rows(features: ArrayView2<f64>, targets: &[RowTarget]) -> Result<()> {
    if features.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    Ok(())
}

/// Semi-supervised training over every sample.
///
/// Each step takes `batch_size` rows from a shuffled pass over all samples
/// plus `labeled_batch` rows cycling through the labeled ones. Student and
/// teacher see independently perturbed inputs, the consistency weight ramps
/// up linearly, and the teacher follows the student by moving average.
pub fn train_mean_teacher(
    state: &mut ClassifierState,
    features: ArrayView2<f64>,
    targets: &[RowTarget],
    epochs: usize,
    train: &TrainConfig,
    loss: &LossConfig,
    seed: u64,
) -> Result<TrainStats> {
    check_rows(features, targets)?;
    let mut stats = TrainStats::default();
    let n = targets.len();
    if n == 0 || epochs == 0 {
        return Ok(stats);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Noise::new(train.input_noise)?;
    let mut sgd = Sgd::new(train.lr, train.momentum, train.weight_decay);
    let labeled: Vec<usize> = (0..n).filter(|&i| targets[i].binary_flag() == 1).collect();
    let mut labeled_order = labeled.clone();
    let mut labeled_at = labeled_order.len();

    let steps_per_epoch = n.div_ceil(train.batch_size);
    let total_steps = epochs * steps_per_epoch;
    let ramp_steps = (train.ramp_up * total_steps as f64).ceil();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size) {
            let mut rows = chunk.to_vec();
            for _ in 0..train.labeled_batch.min(labeled.len()) {
                if labeled_at == labeled_order.len() {
                    labeled_order.shuffle(&mut rng);
                    labeled_at = 0;
                }
                rows.push(labeled_order[labeled_at]);
                labeled_at += 1;
            }
            let student_x = noise.gather(features, &rows, &mut rng);
            let teacher_x = noise.gather(features, &rows, &mut rng);
            let batch = Batch::new(student_x, rows.iter().map(|&i| targets[i].clone()).collect())?;

            let ramp = if ramp_steps > 0.0 {
                ((stats.steps + 1) as f64 / ramp_steps).min(1.0)
            } else {
                1.0
            };
            let cfg = LossConfig {
                lambda_consistency: loss.lambda_consistency * ramp,
                ..loss.clone()
            };
            let out = mean_teacher_loss(state, &batch, teacher_x.view(), &cfg)?;
            if let Some(p) = &out.teacher_probs {
                record_teacher(&mut stats, p, &batch.targets);
            }
            sgd.step(&mut state.student, &out.grads, stats.steps)?;
            ema_update(state, loss.ema_decay);
            stats.steps += 1;
            stats.last_loss = out.loss;
        }
    }
    Ok(stats)
}

fn record_teacher(stats: &mut TrainStats, probs: &Array2<f64>, targets: &[RowTarget]) {
    for (row, target) in probs.outer_iter().zip(targets) {
        let err = (row.sum() - 1.0).abs();
        stats.max_normalization_error = stats.max_normalization_error.max(err);
        for &c in target.negatives() {
            stats.max_suppressed_prob = stats.max_suppressed_prob.max(row[c as usize]);
        }
    }
}

/// Supervised training on labeled rows only: confirmed rows through the
/// class-weighted cross-entropy, rejected rows through the negative term.
/// Unlabeled rows are skipped.
pub fn train_finetune(
    state: &mut ClassifierState,
    features: ArrayView2<f64>,
    targets: &[RowTarget],
    epochs: usize,
    train: &TrainConfig,
    loss: &LossConfig,
    seed: u64,
) -> Result<TrainStats> {
    check_rows(features, targets)?;
    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..targets.len())
        .filter(|&i| !matches!(targets[i], RowTarget::Unlabeled))
        .collect();
    if order.is_empty() || epochs == 0 {
        return Ok(stats);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Noise::new(train.input_noise)?;
    let mut sgd = Sgd::new(train.lr, train.momentum, train.weight_decay);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size) {
            let x = noise.gather(features, chunk, &mut rng);
            let batch = Batch::new(x, chunk.iter().map(|&i| targets[i].clone()).collect())?;
            let out = finetune_loss(state, &batch, loss)?;
            sgd.step(&mut state.student, &out.grads, stats.steps)?;
            ema_update(state, loss.ema_decay);
            stats.steps += 1;
            stats.last_loss = out.loss;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::Architecture;
    use crate::report::evaluate;

    fn task() -> (Array2<f64>, Vec<u16>) {
        let d = generate_synthetic(3, 60, 4, 4.0, 5).unwrap();
        (d.feature_matrix(), d.labels().to_vec())
    }

    fn fresh(seed: u64) -> ClassifierState {
        let arch = Architecture::new(4, vec![16], 3).unwrap();
        ClassifierState::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn supervised_mean_teacher_fits() {
        let (x, y) = task();
        let targets: Vec<RowTarget> = y.iter().map(|&c| RowTarget::Positive(c as usize)).collect();
        let mut state = fresh(1);
        let stats =
            train_mean_teacher(&mut state, x.view(), &targets, 20, &TrainConfig::default(), &LossConfig::default(), 3)
                .unwrap();
        assert_eq!(stats.steps, 20 * 3);
        assert!(evaluate(&state, x.view(), &y).unwrap() > 0.9);
        assert!(stats.max_normalization_error < 1e-9);
    }

    #[test]
    fn suppressed_classes_stay_below_threshold() {
        let (x, y) = task();
        let targets: Vec<RowTarget> = y
            .iter()
            .enumerate()
            .map(|(i, &c)| match i % 3 {
                0 => RowTarget::Positive(c as usize),
                1 => RowTarget::Negative(vec![((c + 1) % 3) as u16]),
                _ => RowTarget::Unlabeled,
            })
            .collect();
        let mut state = fresh(2);
        let stats =
            train_mean_teacher(&mut state, x.view(), &targets, 5, &TrainConfig::default(), &LossConfig::default(), 4)
                .unwrap();
        assert!(stats.max_suppressed_prob < 1e-6, "{}", stats.max_suppressed_prob);
        assert!(stats.max_normalization_error < 1e-9);
    }

    #[test]
    fn finetune_skips_unlabeled_and_is_deterministic() {
        let (x, y) = task();
        let targets: Vec<RowTarget> = y
            .iter()
            .enumerate()
            .map(|(i, &c)| if i % 2 == 0 { RowTarget::Positive(c as usize) } else { RowTarget::Unlabeled })
            .collect();
        let run = || {
            let mut state = fresh(3);
            let stats =
                train_finetune(&mut state, x.view(), &targets, 100, &TrainConfig::default(), &LossConfig::default(), 9)
                    .unwrap();
            (state, stats)
        };
        let (a, stats) = run();
        assert_eq!(stats.steps, 100 * 2);
        assert_eq!(a, run().0);
        assert!(evaluate(&a, x.view(), &y).unwrap() > 0.85);
    }

    #[test]
    fn zero_epochs_leave_the_model_alone() {
        let (x, y) = task();
        let targets: Vec<RowTarget> = y.iter().map(|&c| RowTarget::Positive(c as usize)).collect();
        let mut state = fresh(4);
        let before = state.clone();
        train_mean_teacher(&mut state, x.view(), &targets, 0, &TrainConfig::default(), &LossConfig::default(), 0)
            .unwrap();
        assert_eq!(state, before);
    }
}
