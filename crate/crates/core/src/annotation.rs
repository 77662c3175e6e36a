//! Simulated yes/no labeler with budget enforcement and an append-only log.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BitBudget;
use crate::error::{Error, Result};

/// Answer flip rate matching a labeler with 92.3% precision.
pub const HUMAN_NOISE_RATE: f64 = 0.077;

/// Answers "is sample `i` of class `c`?" from the ground truth, flipping the
/// answer with probability `noise_rate`.
#[derive(Clone, Debug)]
pub struct Oracle {
    truth: Vec<u16>,
    noise_rate: f64,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn new(truth: Vec<u16>, noise_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&noise_rate) {
            return Err(Error::Domain(format!("noise rate {noise_rate} outside [0, 0.5)")));
        }
        Ok(Self {
            truth,
            noise_rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    /// One uniform draw per answer keeps the stream aligned whatever the rate.
    fn answer(&mut self, sample: usize, guess: usize) -> bool {
        let truthful = self.truth[sample] as usize == guess;
        let flip = self.rng.random::<f64>() < self.noise_rate;
        truthful != flip
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub stage: usize,
    pub sample: usize,
    pub guess: usize,
    pub answer: bool,
}

impl QueryRecord {
    pub const BIT_COST: f64 = 1.0;
}

/// Every query issued in an experiment, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryLog {
    records: Vec<QueryRecord>,
    asked: std::collections::HashSet<(usize, usize)>,
    touched: std::collections::HashSet<usize>,
}

impl QueryLog {
    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains_sample(&self, sample: usize) -> bool {
        self.touched.contains(&sample)
    }

    pub fn stage_records(&self, stage: usize) -> impl Iterator<Item = &QueryRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    fn push(&mut self, record: QueryRecord) {
        self.asked.insert((record.sample, record.guess));
        self.touched.insert(record.sample);
        self.records.push(record);
    }

    /// Writes `stage,sample,guess,answer` rows, answers as `yes`/`no`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::io("querylog.csv", std::io::Error::other(e));
        w.write_record(["stage", "sample", "guess", "answer"]).map_err(wrap)?;
        for r in &self.records {
            w.write_record([
                r.stage.to_string(),
                r.sample.to_string(),
                r.guess.to_string(),
                if r.answer { "yes" } else { "no" }.to_string(),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("querylog.csv", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

/// Oracle, budget and log, owned together by one experiment.
#[derive(Clone, Debug)]
pub struct AnnotationSession {
    pub oracle: Oracle,
    pub budget: BitBudget,
    pub log: QueryLog,
    allow_requery: bool,
}

impl AnnotationSession {
    pub fn new(oracle: Oracle, budget: BitBudget) -> Self {
        Self {
            oracle,
            budget,
            log: QueryLog::default(),
            allow_requery: false,
        }
    }

    /// Permits asking about a sample again, always with a new class.
    pub fn with_requery(mut self, allow: bool) -> Self {
        self.allow_requery = allow;
        self
    }

    fn check(&self, sample: usize, guess: usize) -> Result<()> {
        if sample >= self.oracle.truth.len() {
            return Err(Error::Protocol(format!("sample {sample} is out of range")));
        }
        if self.allow_requery {
            if self.log.asked.contains(&(sample, guess)) {
                return Err(Error::Protocol(format!("class {guess} was already asked for sample {sample}")));
            }
        } else if self.log.contains_sample(sample) {
            return Err(Error::Protocol(format!("sample {sample} was already queried")));
        }
        Ok(())
    }

    pub fn answer_query(&mut self, sample: usize, guess: usize, stage: usize) -> Result<QueryRecord> {
        self.check(sample, guess)?;
        self.budget.charge_queries(1)?;
        let record = QueryRecord {
            stage,
            sample,
            guess,
            answer: self.oracle.answer(sample, guess),
        };
        self.log.push(record.clone());
        Ok(record)
    }

    /// Issues all queries in order, or none: every pair is validated and the
    /// quota checked before the first bit is spent.
    pub fn batch_query(&mut self, pairs: &[(usize, usize)], stage: usize) -> Result<Vec<QueryRecord>> {
        if pairs.len() > self.budget.remaining_queries() {
            return Err(Error::Quota(format!(
                "{} queries requested, {} remain",
                pairs.len(),
                self.budget.remaining_queries()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &(sample, guess) in pairs {
            self.check(sample, guess)?;
            let key = if self.allow_requery { (sample, guess) } else { (sample, 0) };
            if !seen.insert(key) {
                return Err(Error::Protocol(format!("sample {sample} appears twice in one batch")));
            }
        }
        pairs
            .iter()
            .map(|&(sample, guess)| self.answer_query(sample, guess, stage))
            .collect()
    }
}
