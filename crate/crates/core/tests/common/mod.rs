#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use onebit::model::{finetune_loss, mean_teacher_loss, Architecture, Batch, ClassifierState, LossConfig, Params, RowTarget};
use onebit::orchestrator::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(config_path(name)).unwrap();
    c.seed = seed;
    c
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    MeanTeacher,
    Finetune,
}

/// A small random network, batch and loss settings for gradient checks.
pub struct GradInstance {
    pub state: ClassifierState,
    pub batch: Batch,
    pub teacher_x: Array2<f64>,
    pub cfg: LossConfig,
}

pub fn grad_instance(kind: LossKind, seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(2..6);
    let classes = rng.random_range(3..6);
    let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(3..8)).collect();
    let arch = Architecture::new(input, hidden, classes).unwrap();
    // Nonzero biases keep pre-activations off the ReLU kink, where central
    // differences are meaningless.
    let init = |rng: &mut ChaCha8Rng| {
        let mut p = Params::he_init(&arch, rng);
        for layer in &mut p.layers {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        p
    };
    let student = init(&mut rng);
    let teacher = init(&mut rng);
    let state = ClassifierState::from_parts(student, teacher).unwrap();

    let rows = 7;
    let x = Array2::from_shape_fn((rows, input), |_| rng.random_range(-2.0..2.0));
    let teacher_x = &x + &Array2::from_shape_fn((rows, input), |_| rng.random_range(-0.1..0.1));
    let targets: Vec<RowTarget> = (0..rows)
        .map(|i| match (kind, i % 3) {
            (_, 0) => RowTarget::Positive(rng.random_range(0..classes)),
            (_, 1) => {
                let a = rng.random_range(0..classes) as u16;
                let b = ((a as usize + 1) % classes) as u16;
                RowTarget::Negative(if i % 2 == 0 { vec![a] } else { vec![a, b] })
            }
            (LossKind::MeanTeacher, _) => RowTarget::Unlabeled,
            (LossKind::Finetune, _) => RowTarget::Positive(rng.random_range(0..classes)),
        })
        .collect();
    let cfg = LossConfig {
        lambda_consistency: rng.random_range(0.5..5.0),
        mu_negative: rng.random_range(0.05..1.0),
        class_weights: (kind == LossKind::Finetune).then(|| (0..classes).map(|_| rng.random_range(0.2..1.0)).collect()),
        ..LossConfig::default()
    };
    GradInstance {
        state,
        batch: Batch::new(x, targets).unwrap(),
        teacher_x,
        cfg,
    }
}

fn loss_value(kind: LossKind, inst: &GradInstance, state: &ClassifierState) -> f64 {
    match kind {
        LossKind::MeanTeacher => mean_teacher_loss(state, &inst.batch, inst.teacher_x.view(), &inst.cfg).unwrap().loss,
        LossKind::Finetune => finetune_loss(state, &inst.batch, &inst.cfg).unwrap().loss,
    }
}

/// Largest relative error between analytic gradients and central
/// differences with step `1e-5`, over every student parameter.
pub fn max_gradient_error(kind: LossKind, seed: u64) -> f64 {
    let inst = grad_instance(kind, seed);
    let analytic = match kind {
        LossKind::MeanTeacher => mean_teacher_loss(&inst.state, &inst.batch, inst.teacher_x.view(), &inst.cfg).unwrap().grads,
        LossKind::Finetune => finetune_loss(&inst.state, &inst.batch, &inst.cfg).unwrap().grads,
    };
    let h = 1e-5;
    let analytic: Vec<f64> = analytic.iter().copied().collect();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = inst.state.clone();
        *plus.student.iter_mut().nth(k).unwrap() += h;
        let mut minus = inst.state.clone();
        *minus.student.iter_mut().nth(k).unwrap() -= h;
        let numeric = (loss_value(kind, &inst, &plus) - loss_value(kind, &inst, &minus)) / (2.0 * h);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        if err > 1e-4 && std::env::var("GRAD_DEBUG").is_ok() {
            eprintln!("param {k}/{}: analytic {a:e} numeric {numeric:e}", analytic.len());
        }
        worst = worst.max(err);
    }
    worst
}
