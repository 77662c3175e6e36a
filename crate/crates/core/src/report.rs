//! Evaluation, class-distribution diagnostics, and experiment output files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::annotation::{QueryLog, QueryRecord};
use crate::error::{Error, Result};
use crate::model::{ClassifierState, Which};
use crate::theory::argmax;

pub const METRICS_HEADER: [&str; 5] = ["stage", "accuracy", "n_pos", "n_neg", "bits"];
pub const GROUPS_HEADER: [&str; 4] = ["stage", "g0", "g1", "g2"];

/// Outcome of one stage. Stage 0 is the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: usize,
    pub accuracy: f64,
    /// Confirmed guesses in this stage.
    pub n_pos: usize,
    /// Rejected guesses in this stage.
    pub n_neg: usize,
    /// Cumulative bits spent after this stage.
    pub bits: f64,
}

impl StageResult {
    pub fn n_queried(&self) -> usize {
        self.n_pos + self.n_neg
    }

    /// Fraction of this stage's queries answered "yes"; `None` if none were asked.
    pub fn guess_accuracy(&self) -> Option<f64> {
        (self.n_queried() > 0).then(|| self.n_pos as f64 / self.n_queried() as f64)
    }
}

/// Samples per group of predicted classes: below, within, and above the
/// balanced count `N / C` plus or minus a band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassGroups {
    pub g0: usize,
    pub g1: usize,
    pub g2: usize,
}

impl ClassGroups {
    pub fn total(&self) -> usize {
        self.g0 + self.g1 + self.g2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    /// `one_bit`, `pure_one_bit` or `baseline`.
    pub arm: String,
    pub total_bits: f64,
    pub spent_bits: f64,
    pub cost_full: f64,
    pub n_full: usize,
    pub n_queries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub stages: Vec<StageResult>,
    pub groups: Vec<ClassGroups>,
    pub ledger: Ledger,
    pub query_log: QueryLog,
    pub config: serde_json::Value,
}

impl Report {
    pub fn final_accuracy(&self) -> f64 {
        self.stages.last().map_or(0.0, |s| s.accuracy)
    }

    pub fn initial_accuracy(&self) -> f64 {
        self.stages.first().map_or(0.0, |s| s.accuracy)
    }

    pub fn total_positive(&self) -> usize {
        self.stages.iter().map(|s| s.n_pos).sum()
    }

    pub fn total_negative(&self) -> usize {
        self.stages.iter().map(|s| s.n_neg).sum()
    }

    pub fn records(&self) -> &[QueryRecord] {
        self.query_log.records()
    }

    /// Stage accuracies in percent joined by arrows, e.g. `51.47→67.82→73.76`.
    pub fn arrow_line(&self) -> String {
        arrow_line(self.stages.iter().map(|s| s.accuracy))
    }
}

pub fn arrow_line(accuracies: impl IntoIterator<Item = f64>) -> String {
    accuracies
        .into_iter()
        .map(|a| format!("{:.2}", 100.0 * a))
        .collect::<Vec<_>>()
        .join("→")
}

/// Teacher predictions, lowest class index on ties.
pub fn predict(model: &ClassifierState, features: ArrayView2<f64>) -> Result<Vec<usize>> {
    let logits = model.forward(features, Which::Teacher)?;
    Ok(logits
        .outer_iter()
        .map(|row| argmax(row.as_slice().expect("standard layout")))
        .collect())
}

/// Top-1 accuracy of predicted against true labels.
pub fn accuracy(predicted: &[usize], truth: &[u16]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Domain("empty test set".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let correct = predicted.iter().zip(truth).filter(|(&p, &t)| p == t as usize).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Top-1 accuracy of the teacher on a held-out set.
pub fn evaluate(model: &ClassifierState, features: ArrayView2<f64>, labels: &[u16]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Domain("empty test set".into()));
    }
    accuracy(&predict(model, features)?, labels)
}

/// Band used when none is given: a tenth of the balanced count, at least one.
pub fn default_band(n: usize, classes: usize) -> f64 {
    (0.1 * n as f64 / classes as f64).round().max(1.0)
}

/// Groups predicted classes by how far their count lies from `N / C`.
///
/// The lower edge is clamped at zero, so an empty class with `N/C - band < 0`
/// falls in the middle group (contributing no samples).
pub fn class_group_histogram(predicted: &[usize], classes: usize, band: f64) -> ClassGroups {
    let mut counts = vec![0usize; classes];
    for &p in predicted {
        counts[p] += 1;
    }
    let mu = predicted.len() as f64 / classes as f64;
    let lower = (mu - band).max(0.0);
    let upper = mu + band;
    let mut groups = ClassGroups::default();
    for m in counts {
        let mf = m as f64;
        if mf < lower {
            groups.g0 += m;
        } else if mf > upper {
            groups.g2 += m;
        } else {
            groups.g1 += m;
        }
    }
    groups
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `metrics.csv`, `groups.csv`, `querylog.csv`, `ledger.json` and
/// `config.json` into `dir`, creating it if needed.
///
/// Floats are written in shortest round-trip form, so parsing the files gives
/// back the exact in-memory values.
pub fn write_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let metrics = dir.join("metrics.csv");
    write_csv(
        &metrics,
        &METRICS_HEADER,
        report.stages.iter().map(|s| {
            vec![
                s.stage.to_string(),
                s.accuracy.to_string(),
                s.n_pos.to_string(),
                s.n_neg.to_string(),
                s.bits.to_string(),
            ]
        }),
    )?;

    let groups = dir.join("groups.csv");
    write_csv(
        &groups,
        &GROUPS_HEADER,
        report.groups.iter().enumerate().map(|(stage, g)| {
            vec![stage.to_string(), g.g0.to_string(), g.g1.to_string(), g.g2.to_string()]
        }),
    )?;

    let querylog = dir.join("querylog.csv");
    report.query_log.save_csv(&querylog)?;

    let ledger = dir.join("ledger.json");
    write_json(&ledger, &report.ledger)?;
    let config = dir.join("config.json");
    write_json(&config, &report.config)?;
    Ok(vec![metrics, groups, querylog, ledger, config])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Report files read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedReport {
    pub stages: Vec<StageResult>,
    pub groups: Vec<ClassGroups>,
    pub ledger: Ledger,
    pub config: serde_json::Value,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let found = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::format(0, format!("{}: unexpected header {:?}", path.display(), found)));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StageResult>> {
    read_rows(path.as_ref(), &METRICS_HEADER)
}

pub fn load_report(dir: impl AsRef<Path>) -> Result<SavedReport> {
    #[derive(Deserialize)]
    struct GroupRow {
        #[allow(dead_code)]
        stage: usize,
        g0: usize,
        g1: usize,
        g2: usize,
    }
    let dir = dir.as_ref();
    let groups: Vec<GroupRow> = read_rows(&dir.join("groups.csv"), &GROUPS_HEADER)?;
    Ok(SavedReport {
        stages: read_metrics(dir.join("metrics.csv"))?,
        groups: groups
            .into_iter()
            .map(|g| ClassGroups { g0: g.g0, g1: g.g1, g2: g.g2 })
            .collect(),
        ledger: read_json(&dir.join("ledger.json"))?,
        config: read_json(&dir.join("config.json"))?,
    })
}
