//! The staged query-and-retrain loop, pure one-bit mode, and the
//! full-label baseline arm.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{BudgetSpec, ClassWeighting, DatasetSource, ExperimentConfig, Init, TrainingMode};
use super::trainer::{train_finetune, train_mean_teacher, TrainStats};
use crate::annotation::{AnnotationSession, Oracle};
use crate::data::{generate_synthetic_task, load_dataset, make_initial_split, Dataset, SampleState, SplitState};
use crate::error::{Error, Result};
use crate::model::{class_weights, load_checkpoint_for, save_checkpoint, nls_suppress, softmax, Architecture, ClassifierState, LossConfig, RowTarget, Which};
use crate::report::{accuracy, class_group_histogram, default_band, predict, ClassGroups, Ledger, Report, StageResult};
use crate::sampling::{select, uncertainty_scores, ScoreTable, Strategy};
use crate::theory::{argmax, ClassCount};

/// Which protocol produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    OneBit,
    PureOneBit,
    Baseline,
}

/// Train and held-out sets with their feature matrices.
#[derive(Clone, Debug)]
pub struct Task {
    pub train: Dataset,
    pub test: Dataset,
    train_x: Array2<f64>,
    test_x: Array2<f64>,
}

impl Task {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.dim() != test.dim() || train.classes() != test.classes() {
            return Err(Error::Shape(format!(
                "train set has {} features and {} classes, test set {} and {}",
                train.dim(),
                train.classes(),
                test.dim(),
                test.classes()
            )));
        }
        if test.is_empty() {
            return Err(Error::Domain("empty test set".into()));
        }
        let train_x = train.feature_matrix();
        let test_x = test.feature_matrix();
        Ok(Self { train, test, train_x, test_x })
    }

    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        match &config.dataset {
            DatasetSource::Synthetic(s) => {
                let seed = s.seed.unwrap_or(config.seed);
                let (train, test) =
                    generate_synthetic_task(s.classes, s.per_class, s.test_per_class, s.dim, s.separation, seed)?;
                Self::new(train, test)
            }
            DatasetSource::Files { train, test } => Self::new(load_dataset(train)?, load_dataset(test)?),
        }
    }

    pub fn classes(&self) -> ClassCount {
        self.train.classes()
    }

    pub fn train_features(&self) -> ArrayView2<'_, f64> {
        self.train_x.view()
    }

    pub fn test_features(&self) -> ArrayView2<'_, f64> {
        self.test_x.view()
    }

    pub fn architecture(&self, hidden: &[usize]) -> Result<Architecture> {
        Architecture::new(self.train.dim(), hidden.to_vec(), self.classes().get())
    }
}

/// Independent streams derived from the master seed.
#[derive(Clone, Copy, Debug)]
struct Seeds(u64);

impl Seeds {
    fn derive(self, stream: u64, index: u64) -> u64 {
        // SplitMix64 finalizer over the combined words.
        let mut z = self.0 ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn split(self) -> u64 {
        self.derive(1, 0)
    }
    fn init(self, stage: usize) -> u64 {
        self.derive(2, stage as u64)
    }
    fn train(self, stage: usize) -> u64 {
        self.derive(3, stage as u64)
    }
    fn oracle(self) -> u64 {
        self.derive(4, 0)
    }
    fn select(self, stage: usize) -> u64 {
        self.derive(5, stage as u64)
    }
    fn uncertainty(self, stage: usize) -> u64 {
        self.derive(6, stage as u64)
    }
}

/// Total bits for the experiment. Without an explicit budget it is exactly
/// what the full labels and the quotas cost.
pub fn total_budget(config: &ExperimentConfig, classes: ClassCount) -> Result<f64> {
    let needed = config.n_full as f64 * classes.log2() + config.stage_quotas.iter().sum::<usize>() as f64;
    let total = match config.budget {
        None => return Ok(needed),
        Some(BudgetSpec::TotalBits(t)) => t,
        Some(BudgetSpec::FullEquivalent(n)) => n as f64 * classes.log2(),
    };
    if !(total.is_finite() && total >= 0.0) {
        return Err(Error::config("/budget", "total bits must be finite and >= 0"));
    }
    if needed > total * (1.0 + 1e-12) {
        if config.allow_overshoot {
            return Ok(needed);
        }
        return Err(Error::config(
            "/stage_quotas",
            format!("full labels and quotas need {needed} bits, the budget is {total}"),
        ));
    }
    Ok(total)
}

/// Training targets for every sample from what the split knows.
pub fn row_targets(split: &SplitState) -> Vec<RowTarget> {
    split
        .states()
        .iter()
        .map(|s| match s {
            SampleState::Full(c) | SampleState::Positive(c) => RowTarget::Positive(*c as usize),
            SampleState::Negative(negs) => RowTarget::Negative(negs.clone()),
            SampleState::Unlabeled => RowTarget::Unlabeled,
        })
        .collect()
}

/// Training mode in pure one-bit mode: semi-supervised until the confirmed
/// share of the pool reaches the threshold.
pub fn pure_mode(confirmed: usize, pool: usize, threshold: f64) -> TrainingMode {
    if pool > 0 && confirmed as f64 / pool as f64 >= threshold {
        TrainingMode::Finetune
    } else {
        TrainingMode::MeanTeacher
    }
}

/// Live state of one experiment arm.
#[derive(Clone, Debug)]
pub struct RunState {
    pub model: ClassifierState,
    pub split: SplitState,
    pub session: AnnotationSession,
    pub stages: Vec<StageResult>,
    pub groups: Vec<ClassGroups>,
    /// Teacher statistics accumulated over every training call.
    pub train_stats: TrainStats,
}

impl RunState {
    fn absorb(&mut self, stats: TrainStats) {
        let acc = &mut self.train_stats;
        acc.steps += stats.steps;
        acc.last_loss = stats.last_loss;
        acc.max_suppressed_prob = acc.max_suppressed_prob.max(stats.max_suppressed_prob);
        acc.max_normalization_error = acc.max_normalization_error.max(stats.max_normalization_error);
    }

    fn record(&mut self, config: &ExperimentConfig, task: &Task, stage: usize, n_pos: usize, n_neg: usize) -> Result<()> {
        let pred = predict(&self.model, task.test_features())?;
        let classes = task.classes().get();
        let band = config.band.unwrap_or_else(|| default_band(pred.len(), classes));
        self.groups.push(class_group_histogram(&pred, classes, band));
        self.stages.push(StageResult {
            stage,
            accuracy: accuracy(&pred, task.test.labels())?,
            n_pos,
            n_neg,
            bits: self.session.budget.spent_bits(),
        });
        Ok(())
    }

    /// Saves the model if the config asks for it, then assembles the report.
    pub fn finish(self, config: &ExperimentConfig, arm: Arm) -> Result<Report> {
        if let Some(path) = &config.save_checkpoint {
            save_checkpoint(&self.model, path)?;
        }
        Ok(self.into_report(config, arm))
    }

    pub fn into_report(self, config: &ExperimentConfig, arm: Arm) -> Report {
        let b = &self.session.budget;
        Report {
            ledger: Ledger {
                arm: arm_name(arm).into(),
                total_bits: b.total_bits(),
                spent_bits: b.spent_bits(),
                cost_full: b.cost_full(),
                n_full: b.n_full(),
                n_queries: b.n_queries(),
            },
            stages: self.stages,
            groups: self.groups,
            query_log: self.session.log,
            config: config.to_json(),
        }
    }
}

fn arm_name(arm: Arm) -> &'static str {
    match arm {
        Arm::OneBit => "one_bit",
        Arm::PureOneBit => "pure_one_bit",
        Arm::Baseline => "baseline",
    }
}

/// A fresh model: random weights or the configured checkpoint.
fn initial_model(config: &ExperimentConfig, task: &Task, seed: u64) -> Result<ClassifierState> {
    match &config.init {
        Init::Scratch => {
            let arch = task.architecture(&config.model.hidden)?;
            Ok(ClassifierState::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed)))
        }
        Init::Checkpoint(path) => load_checkpoint_for(
            path,
            task.train.dim(),
            task.classes().get(),
            Some(&config.model.hidden),
        ),
    }
}

fn finetune_config(config: &ExperimentConfig, split: &SplitState) -> Result<LossConfig> {
    let mut loss = config.loss.clone();
    if loss.class_weights.is_none() && config.class_weighting != ClassWeighting::None {
        let counts = split.positive_class_counts();
        if counts.iter().any(|&m| m > 0) {
            loss.class_weights = Some(class_weights(&counts, config.class_weighting == ClassWeighting::Inverse)?);
        }
    }
    Ok(loss)
}

fn retrain(
    model: &mut ClassifierState,
    mode: TrainingMode,
    config: &ExperimentConfig,
    task: &Task,
    split: &SplitState,
    epochs: usize,
    seed: u64,
) -> Result<TrainStats> {
    let targets = row_targets(split);
    match mode {
        TrainingMode::MeanTeacher => {
            train_mean_teacher(model, task.train_features(), &targets, epochs, &config.train, &config.loss, seed)
        }
        TrainingMode::Finetune => {
            let loss = finetune_config(config, split)?;
            train_finetune(model, task.train_features(), &targets, epochs, &config.train, &loss, seed)
        }
    }
}

/// Builds the stage-0 state: the initial split and budget, the oracle, and
/// the initial model `M_0`.
///
/// From scratch the model is trained semi-supervised with the full labels as
/// the labeled set. A checkpoint is loaded as is, or fine-tuned on the full
/// labels when `finetune_initial` is set and there are any.
pub fn train_initial(config: &ExperimentConfig, task: &Task) -> Result<RunState> {
    let seeds = Seeds(config.seed);
    let total = total_budget(config, task.classes())?;
    let (split, budget) = make_initial_split(&task.train, config.n_full, total, seeds.split())?;
    let requery = config.pure_one_bit;
    let oracle = Oracle::new(task.train.labels().to_vec(), config.oracle_noise, seeds.oracle())?;
    let mut state = RunState {
        model: initial_model(config, task, seeds.init(0))?,
        split: split.with_requery(requery),
        session: AnnotationSession::new(oracle, budget).with_requery(requery),
        stages: Vec::new(),
        groups: Vec::new(),
        train_stats: TrainStats::default(),
    };
    let epochs = config.train.epochs_initial;
    let stats = match config.init {
        Init::Scratch => retrain(&mut state.model, TrainingMode::MeanTeacher, config, task, &state.split, epochs, seeds.train(0))?,
        Init::Checkpoint(_) if config.finetune_initial && config.n_full > 0 => {
            retrain(&mut state.model, TrainingMode::Finetune, config, task, &state.split, epochs, seeds.train(0))?
        }
        Init::Checkpoint(_) => TrainStats::default(),
    };
    state.absorb(stats);
    state.record(config, task, 0, 0, 0)?;
    Ok(state)
}

/// Teacher class probabilities for `rows`, rejected classes suppressed so a
/// guess is never repeated.
fn candidate_probs(model: &ClassifierState, task: &Task, split: &SplitState, rows: &[usize], constant: f64) -> Result<Array2<f64>> {
    let x = task.train_features();
    let batch = Array2::from_shape_fn((rows.len(), x.ncols()), |(r, j)| x[[rows[r], j]]);
    let mut logits = model.forward(batch.view(), Which::Teacher)?;
    let negs: Vec<&[u16]> = rows.iter().map(|&i| split.state(i).negatives()).collect();
    nls_suppress(&mut logits, &negs, constant);
    Ok(softmax(logits.view()))
}

/// Answers gathered in one stage, before retraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageAnswers {
    pub stage: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// The query half of a stage.
///
/// Scores the queryable pool with the teacher, selects `quota` samples,
/// guesses each one's argmax class and applies the answers. Quota and budget
/// are checked before anything changes.
pub fn query_stage(state: &mut RunState, config: &ExperimentConfig, task: &Task, quota: usize) -> Result<StageAnswers> {
    let seeds = Seeds(config.seed);
    let stage = state.split.stage() + 1;
    let candidates = state.split.queryable();
    if quota > candidates.len() {
        return Err(Error::Quota(format!(
            "stage {stage} asks for {quota} queries but only {} samples can be queried",
            candidates.len()
        )));
    }
    if quota > state.session.budget.remaining_queries() {
        return Err(Error::Quota(format!(
            "stage {stage} asks for {quota} queries, the budget has {} left",
            state.session.budget.remaining_queries()
        )));
    }

    let mut pairs = Vec::with_capacity(quota);
    if quota > 0 {
        let probs = candidate_probs(&state.model, task, &state.split, &candidates, config.loss.suppression_constant)?;
        let mut scores = ScoreTable::new(candidates.clone(), probs.clone())?;
        if let Strategy::UncertaintyStd { repeats, noise_scale } = config.strategy {
            let spread = uncertainty_scores(
                &state.model,
                task.train_features(),
                &candidates,
                repeats,
                noise_scale,
                seeds.uncertainty(stage),
            )?;
            scores = scores.with_uncertainty(spread)?;
        }
        let chosen = select(&config.strategy, &scores, quota, seeds.select(stage))?;
        let row_of: std::collections::HashMap<usize, usize> =
            candidates.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        for sample in chosen {
            let row = probs.row(row_of[&sample]);
            pairs.push((sample, argmax(row.as_slice().expect("standard layout"))));
        }
    }

    let records = state.session.batch_query(&pairs, stage)?;
    state.split.advance_stage();
    let mut n_pos = 0;
    for r in &records {
        state.split.apply_answer(r.sample, r.guess, r.answer)?;
        n_pos += usize::from(r.answer);
    }
    Ok(StageAnswers {
        stage,
        n_pos,
        n_neg: records.len() - n_pos,
    })
}

/// The retraining half of a stage, then evaluation.
pub fn finish_stage(
    state: &mut RunState,
    config: &ExperimentConfig,
    task: &Task,
    answers: StageAnswers,
    mode: TrainingMode,
) -> Result<()> {
    let seeds = Seeds(config.seed);
    let stage = answers.stage;
    let epochs = if config.cold_start {
        state.model = initial_model(config, task, seeds.init(stage))?;
        config.train.epochs_initial
    } else {
        config.train.epochs_per_stage
    };
    let stats = retrain(&mut state.model, mode, config, task, &state.split, epochs, seeds.train(stage))?;
    state.absorb(stats);
    state.record(config, task, stage, answers.n_pos, answers.n_neg)
}

/// One query-and-retrain stage.
pub fn run_stage(
    state: &mut RunState,
    config: &ExperimentConfig,
    task: &Task,
    quota: usize,
    mode: TrainingMode,
) -> Result<()> {
    let answers = query_stage(state, config, task, quota)?;
    finish_stage(state, config, task, answers, mode)
}

/// Initial model followed by one stage per quota.
pub fn run_experiment_on(config: &ExperimentConfig, task: &Task) -> Result<Report> {
    if config.pure_one_bit {
        return run_pure_one_bit_on(config, task);
    }
    let mut state = train_initial(config, task)?;
    for &quota in &config.stage_quotas {
        run_stage(&mut state, config, task, quota, config.training_mode)?;
    }
    state.finish(config, Arm::OneBit)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    run_experiment_on(config, &Task::from_config(config)?)
}

/// One-bit supervision with no full labels, starting from a checkpoint.
///
/// Each stage queries up to its quota from every sample without a confirmed
/// label; rejected samples may be asked again with a new class. Training is
/// semi-supervised until the confirmed share reaches `switch_threshold`, then
/// supervised. Stops when the quotas run out, nothing is left to ask, or a
/// stage gains less than `plateau_delta` accuracy.
pub fn run_pure_one_bit_on(config: &ExperimentConfig, task: &Task) -> Result<Report> {
    if config.n_full != 0 || !matches!(config.init, Init::Checkpoint(_)) {
        return Err(Error::config("/pure_one_bit", "needs a checkpoint and no full labels"));
    }
    let mut config = config.clone();
    config.pure_one_bit = true;
    let mut state = train_initial(&config, task)?;
    for &quota in &config.stage_quotas {
        let candidates = state.split.queryable().len();
        if candidates == 0 {
            break;
        }
        let quota = quota.min(candidates).min(state.session.budget.remaining_queries());
        let before = state.stages.last().map_or(0.0, |s| s.accuracy);
        let answers = query_stage(&mut state, &config, task, quota)?;
        let mode = pure_mode(state.split.labeled().len(), state.split.len(), config.switch_threshold);
        finish_stage(&mut state, &config, task, answers, mode)?;
        let after = state.stages.last().map_or(0.0, |s| s.accuracy);
        if after - before < config.plateau_delta {
            break;
        }
    }
    state.finish(&config, Arm::PureOneBit)
}

pub fn run_pure_one_bit(config: &ExperimentConfig) -> Result<Report> {
    run_pure_one_bit_on(config, &Task::from_config(config)?)
}

/// The equal-bits comparison arm: every bit spent on full labels, trained
/// semi-supervised for as many epochs as the one-bit arm trains in total.
pub fn run_baseline_on(config: &ExperimentConfig, task: &Task) -> Result<Report> {
    let classes = task.classes();
    let total = total_budget(config, classes)?;
    let n_full = (((total / classes.log2()) * (1.0 + 1e-12)).floor() as usize).min(task.train.len());
    let stages = config.stage_quotas.len();
    let baseline = ExperimentConfig {
        n_full,
        budget: Some(BudgetSpec::TotalBits(total)),
        allow_overshoot: false,
        stage_quotas: vec![0],
        init: Init::Scratch,
        pure_one_bit: false,
        train: super::config::TrainConfig {
            epochs_initial: config.train.epochs_initial + stages * config.train.epochs_per_stage,
            ..config.train.clone()
        },
        ..config.clone()
    };
    let state = train_initial(&baseline, task)?;
    // The baseline never overwrites the one-bit arm's checkpoint.
    Ok(state.into_report(config, Arm::Baseline))
}

pub fn run_baseline(config: &ExperimentConfig) -> Result<Report> {
    run_baseline_on(config, &Task::from_config(config)?)
}
