//! Experiment configuration, read from JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossConfig;
use crate::sampling::Strategy;

/// Where the train and test sets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Two OBS1 files.
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Data seed; the experiment seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_classes() -> usize {
    10
}
fn default_per_class() -> usize {
    200
}
fn default_test_per_class() -> usize {
    100
}
fn default_dim() -> usize {
    16
}
fn default_separation() -> f64 {
    4.0
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            per_class: default_per_class(),
            test_per_class: default_test_per_class(),
            dim: default_dim(),
            separation: default_separation(),
            seed: None,
        }
    }
}

/// Total bit budget, given directly or as a number of full labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetSpec {
    TotalBits(f64),
    FullEquivalent(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    MeanTeacher,
    Finetune,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    #[default]
    Scratch,
    Checkpoint(PathBuf),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    None,
    /// `m_c / max m`.
    Proportional,
    /// `min m / m_c`.
    Inverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_initial: usize,
    pub epochs_per_stage: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rows per step drawn from the whole training set.
    pub batch_size: usize,
    /// Extra labeled rows per step in mean-teacher training.
    pub labeled_batch: usize,
    /// Standard deviation of the additive Gaussian input noise.
    pub input_noise: f64,
    /// Fraction of a training call over which the consistency weight ramps up.
    pub ramp_up: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_initial: 30,
            epochs_per_stage: 15,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            labeled_batch: 16,
            input_noise: 0.3,
            ramp_up: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub n_full: usize,
    /// Defaults to exactly what `n_full` and the quotas need.
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    /// Lets the quotas exceed the budget (the ledger then records the overshoot).
    #[serde(default)]
    pub allow_overshoot: bool,
    pub stage_quotas: Vec<usize>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub training_mode: TrainingMode,
    #[serde(default)]
    pub init: Init,
    /// Fine-tune a loaded checkpoint on the full labels before the first stage.
    #[serde(default)]
    pub finetune_initial: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub class_weighting: ClassWeighting,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub oracle_noise: f64,
    /// Re-initialize the model before each stage instead of resuming.
    #[serde(default)]
    pub cold_start: bool,
    #[serde(default)]
    pub pure_one_bit: bool,
    #[serde(default = "default_switch_threshold")]
    pub switch_threshold: f64,
    /// Minimum accuracy gain (as a fraction) to keep going in pure one-bit mode.
    #[serde(default = "default_plateau_delta")]
    pub plateau_delta: f64,
    /// Half-width of the middle class group; defaults to a tenth of `N / C`.
    #[serde(default)]
    pub band: Option<f64>,
    /// Where to write the final model, if anywhere.
    #[serde(default)]
    pub save_checkpoint: Option<PathBuf>,
}

fn default_dataset() -> DatasetSource {
    DatasetSource::Synthetic(SyntheticSpec::default())
}
fn default_strategy() -> Strategy {
    Strategy::Random
}
fn default_switch_threshold() -> f64 {
    0.8
}
fn default_plateau_delta() -> f64 {
    0.001
}

impl ExperimentConfig {
    /// A config with every default and the given quotas.
    pub fn with_quotas(stage_quotas: Vec<usize>) -> Self {
        Self {
            dataset: default_dataset(),
            n_full: 0,
            budget: None,
            allow_overshoot: false,
            stage_quotas,
            strategy: default_strategy(),
            training_mode: TrainingMode::default(),
            init: Init::default(),
            finetune_initial: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            class_weighting: ClassWeighting::default(),
            seed: 0,
            oracle_noise: 0.0,
            cold_start: false,
            pure_one_bit: false,
            switch_threshold: default_switch_threshold(),
            plateau_delta: default_plateau_delta(),
            band: None,
            save_checkpoint: None,
        }
    }

    /// Parses a JSON document. Errors name the offending key as a JSON pointer.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            Error::config(pointer, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Semantic checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.stage_quotas.is_empty() {
            return Err(Error::config("/stage_quotas", "needs at least one stage"));
        }
        if !(self.switch_threshold > 0.0 && self.switch_threshold <= 1.0) {
            return Err(Error::config("/switch_threshold", "must lie in (0, 1]"));
        }
        if !(self.plateau_delta >= 0.0 && self.plateau_delta.is_finite()) {
            return Err(Error::config("/plateau_delta", "must be finite and >= 0"));
        }
        if !(0.0..0.5).contains(&self.oracle_noise) {
            return Err(Error::config("/oracle_noise", "must lie in [0, 0.5)"));
        }
        if let Some(band) = self.band {
            if !(band >= 0.0) {
                return Err(Error::config("/band", "must be >= 0"));
            }
        }
        if self.model.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("/model/hidden", "widths must be positive"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("/train/batch_size", "must be positive"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::config("/train/lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::config("/train/momentum", "must lie in [0, 1)"));
        }
        if !(t.weight_decay >= 0.0 && t.input_noise >= 0.0) {
            return Err(Error::config("/train", "weight_decay and input_noise must be >= 0"));
        }
        if !(0.0..=1.0).contains(&t.ramp_up) {
            return Err(Error::config("/train/ramp_up", "must lie in [0, 1]"));
        }
        self.loss
            .validate()
            .map_err(|e| Error::config("/loss", e.to_string()))?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            if s.classes < 2 || s.per_class == 0 || s.test_per_class == 0 || s.dim == 0 {
                return Err(Error::config("/dataset/synthetic", "needs >= 2 classes and nonzero sizes"));
            }
        }
        if self.pure_one_bit {
            if self.n_full != 0 {
                return Err(Error::config("/n_full", "pure one-bit mode takes no full labels"));
            }
            if !matches!(self.init, Init::Checkpoint(_)) {
                return Err(Error::config("/init", "pure one-bit mode starts from a checkpoint"));
            }
        }
        Ok(())
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"stage_quotas": [100, 80]}"#).unwrap();
        assert_eq!(c, ExperimentConfig::with_quotas(vec![100, 80]));
        assert_eq!(c.switch_threshold, 0.8);
        assert_eq!(c.model.hidden, vec![64]);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ExperimentConfig::with_quotas(vec![5]);
        c.init = Init::Checkpoint("m.obck".into());
        c.budget = Some(BudgetSpec::FullEquivalent(40));
        c.strategy = Strategy::UncertaintyStd { repeats: 3, noise_scale: 0.2 };
        let text = serde_json::to_string(&c.to_json()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_json(r#"{"stage_quotas": [1], "train": {"lr": 0.1, "epoch": 3}}"#).unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/train/epoch"),
            other => panic!("{other:?}"),
        }
        let err = ExperimentConfig::from_json(r#"{"stage_quotas": [1], "colour": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref pointer, .. } if pointer == "/colour"), "{err:?}");
    }

    #[test]
    fn type_errors_point_at_the_value() {
        let err = ExperimentConfig::from_json(r#"{"stage_quotas": [1, "x"]}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref pointer, .. } if pointer == "/stage_quotas/1"), "{err:?}");
    }

    #[test]
    fn semantic_errors() {
        for (text, pointer) in [
            (r#"{"stage_quotas": []}"#, "/stage_quotas"),
            (r#"{"stage_quotas": [1], "switch_threshold": 1.5}"#, "/switch_threshold"),
            (r#"{"stage_quotas": [1], "pure_one_bit": true}"#, "/init"),
            (r#"{"stage_quotas": [1], "train": {"batch_size": 0}}"#, "/train/batch_size"),
        ] {
            let err = ExperimentConfig::from_json(text).unwrap_err();
            assert!(matches!(err, Error::Config { pointer: ref p, .. } if p == pointer), "{text}: {err:?}");
        }
        assert!(ExperimentConfig::from_json(r#"{"stage_quotas": [1]"#).is_err());
    }

    #[test]
    fn dataset_and_init_forms() {
        let c = ExperimentConfig::from_json(
            r#"{"stage_quotas": [1],
                "dataset": {"files": {"train": "a.obs", "test": "b.obs"}},
                "init": {"checkpoint": "m.obck"},
                "budget": {"total_bits": 120.5},
                "strategy": "hard"}"#,
        )
        .unwrap();
        assert_eq!(c.dataset, DatasetSource::Files { train: "a.obs".into(), test: "b.obs".into() });
        assert_eq!(c.init, Init::Checkpoint("m.obck".into()));
        assert_eq!(c.budget, Some(BudgetSpec::TotalBits(120.5)));
        assert_eq!(c.strategy, Strategy::Hard);
    }
}
