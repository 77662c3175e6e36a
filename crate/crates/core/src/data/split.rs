use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::budget::BitBudget;
use super::dataset::{class_members, Dataset};
use crate::error::{Error, Result};

/// What the learner knows about one training sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampleState {
    /// Member of the initial fully labeled set.
    Full(u16),
    /// A guess was confirmed by the labeler.
    Positive(u16),
    /// Classes the labeler rejected, oldest first. Holds exactly one class
    /// unless re-querying is enabled.
    Negative(Vec<u16>),
    Unlabeled,
}

impl SampleState {
    /// Class label known for this sample, if any.
    pub fn positive_label(&self) -> Option<u16> {
        match self {
            SampleState::Full(c) | SampleState::Positive(c) => Some(*c),
            _ => None,
        }
    }

    pub fn negatives(&self) -> &[u16] {
        match self {
            SampleState::Negative(v) => v,
            _ => &[],
        }
    }
}

/// Partition of the training set into the initial labeled set, confirmed and
/// rejected guesses, and the untouched remainder.
///
/// Keeping one state per sample makes the four sets disjoint and exhaustive
/// by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitState {
    states: Vec<SampleState>,
    classes: usize,
    stage: usize,
    allow_requery: bool,
}

impl SplitState {
    pub fn all_unlabeled(n: usize, classes: usize) -> Self {
        Self {
            states: vec![SampleState::Unlabeled; n],
            classes,
            stage: 0,
            allow_requery: false,
        }
    }

    /// Lets rejected samples be queried again with a different guess.
    pub fn with_requery(mut self, allow: bool) -> Self {
        self.allow_requery = allow;
        self
    }

    pub fn allows_requery(&self) -> bool {
        self.allow_requery
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn advance_stage(&mut self) {
        self.stage += 1;
    }

    pub fn state(&self, i: usize) -> &SampleState {
        &self.states[i]
    }

    pub fn states(&self) -> &[SampleState] {
        &self.states
    }

    fn indices_where(&self, pred: impl Fn(&SampleState) -> bool) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| pred(s))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn full(&self) -> Vec<usize> {
        self.indices_where(|s| matches!(s, SampleState::Full(_)))
    }

    pub fn positive(&self) -> Vec<usize> {
        self.indices_where(|s| matches!(s, SampleState::Positive(_)))
    }

    pub fn negative(&self) -> Vec<usize> {
        self.indices_where(|s| matches!(s, SampleState::Negative(_)))
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        self.indices_where(|s| matches!(s, SampleState::Unlabeled))
    }

    /// Samples without a known class: rejected guesses plus the unlabeled.
    pub fn remaining_pool(&self) -> Vec<usize> {
        self.indices_where(|s| s.positive_label().is_none())
    }

    /// Samples that may be queried now.
    pub fn queryable(&self) -> Vec<usize> {
        if self.allow_requery {
            self.remaining_pool()
        } else {
            self.unlabeled()
        }
    }

    /// Samples with a known class, the initial set included.
    pub fn labeled(&self) -> Vec<usize> {
        self.indices_where(|s| s.positive_label().is_some())
    }

    pub fn count_full(&self) -> usize {
        self.states.iter().filter(|s| matches!(s, SampleState::Full(_))).count()
    }

    pub fn count_positive(&self) -> usize {
        self.states.iter().filter(|s| matches!(s, SampleState::Positive(_))).count()
    }

    pub fn count_negative(&self) -> usize {
        self.states.iter().filter(|s| matches!(s, SampleState::Negative(_))).count()
    }

    pub fn count_unlabeled(&self) -> usize {
        self.states.iter().filter(|s| matches!(s, SampleState::Unlabeled)).count()
    }

    /// Per-class counts of known labels (initial set plus confirmed guesses).
    pub fn positive_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for c in self.states.iter().filter_map(SampleState::positive_label) {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Records the labeler's answer to "is `sample` of class `guess`?".
    pub fn apply_answer(&mut self, sample: usize, guess: usize, yes: bool) -> Result<()> {
        if guess >= self.classes {
            return Err(Error::Domain(format!("guess {guess} is not a class below {}", self.classes)));
        }
        let allow_requery = self.allow_requery;
        let state = self
            .states
            .get_mut(sample)
            .ok_or_else(|| Error::Protocol(format!("sample {sample} is out of range")))?;
        let guess = guess as u16;
        match state {
            SampleState::Full(_) => {
                return Err(Error::Protocol(format!("sample {sample} already carries a full label")));
            }
            SampleState::Positive(_) => {
                return Err(Error::Protocol(format!("sample {sample} was already confirmed")));
            }
            SampleState::Negative(negs) => {
                if !allow_requery {
                    return Err(Error::Protocol(format!("sample {sample} can only be guessed once")));
                }
                if negs.contains(&guess) {
                    return Err(Error::Protocol(format!("class {guess} was already rejected for sample {sample}")));
                }
                if yes {
                    *state = SampleState::Positive(guess);
                } else {
                    negs.push(guess);
                }
            }
            SampleState::Unlabeled => {
                *state = if yes {
                    SampleState::Positive(guess)
                } else {
                    SampleState::Negative(vec![guess])
                };
            }
        }
        Ok(())
    }
}

/// Draws the initial fully labeled set and charges it to a fresh budget.
///
/// Sampling is class-stratified: `n_full / C` per class, with the remainder
/// drawn at random from what is left.
pub fn make_initial_split(dataset: &Dataset, n_full: usize, total_bits: f64, seed: u64) -> Result<(SplitState, BitBudget)> {
    let n = dataset.len();
    if n_full > n {
        return Err(Error::Domain(format!("{n_full} full labels requested from {n} samples")));
    }
    let mut budget = BitBudget::new(total_bits, dataset.classes())?;
    budget.charge_full(n_full)?;

    let c = dataset.classes().get();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut leftover = Vec::new();
    let per_class = n_full / c;
    for mut members in class_members(dataset.labels(), c) {
        members.shuffle(&mut rng);
        let take = per_class.min(members.len());
        for &i in &members[..take] {
            chosen[i] = true;
        }
        leftover.extend_from_slice(&members[take..]);
    }
    let missing = n_full - chosen.iter().filter(|&&b| b).count();
    leftover.sort_unstable();
    leftover.shuffle(&mut rng);
    for &i in &leftover[..missing] {
        chosen[i] = true;
    }

    let mut split = SplitState::all_unlabeled(n, c);
    for (i, _) in chosen.iter().enumerate().filter(|(_, &b)| b) {
        split.states[i] = SampleState::Full(dataset.labels()[i]);
    }
    Ok((split, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn assert_partition(s: &SplitState) {
        let mut seen = vec![0u8; s.len()];
        for set in [s.full(), s.positive(), s.negative(), s.unlabeled()] {
            for i in set {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&k| k == 1));
    }

    #[test]
    fn pure_one_bit_entry_has_no_full_labels() {
        let d = generate_synthetic(10, 5, 2, 1.0, 0).unwrap();
        let (s, b) = make_initial_split(&d, 0, 0.0, 1).unwrap();
        assert!(s.full().is_empty());
        assert_eq!(b.spent_bits(), 0.0);
        assert_eq!(s.count_unlabeled(), 50);
    }

    #[test]
    fn stratified_draw() {
        let d = generate_synthetic(10, 20, 2, 1.0, 0).unwrap();
        let (s, b) = make_initial_split(&d, 30, 1e4, 5).unwrap();
        let mut per_class = vec![0; 10];
        for i in s.full() {
            per_class[d.label(i)] += 1;
        }
        assert_eq!(per_class, vec![3; 10]);
        assert!((b.spent_bits() - 30.0 * 10f64.log2()).abs() < 1e-12);
        assert_partition(&s);

        let (s, _) = make_initial_split(&d, 37, 1e4, 5).unwrap();
        assert_eq!(s.count_full(), 37);
        assert_partition(&s);
    }

    #[test]
    fn split_is_deterministic() {
        let d = generate_synthetic(5, 20, 2, 1.0, 0).unwrap();
        assert_eq!(make_initial_split(&d, 13, 1e3, 9).unwrap(), make_initial_split(&d, 13, 1e3, 9).unwrap());
    }

    #[test]
    fn initial_split_errors() {
        let d = generate_synthetic(4, 5, 2, 1.0, 0).unwrap();
        assert!(matches!(make_initial_split(&d, 21, 1e6, 0), Err(Error::Domain(_))));
        assert!(matches!(make_initial_split(&d, 10, 19.0, 0), Err(Error::Budget(_))));
    }

    #[test]
    fn answers_move_samples() {
        let mut s = SplitState::all_unlabeled(4, 5);
        s.apply_answer(0, 3, true).unwrap();
        s.apply_answer(1, 3, false).unwrap();
        assert_eq!(s.state(0), &SampleState::Positive(3));
        assert_eq!(s.state(1), &SampleState::Negative(vec![3]));
        assert_eq!(s.remaining_pool(), vec![1, 2, 3]);
        assert_eq!(s.queryable(), vec![2, 3]);
        assert!(matches!(s.apply_answer(1, 2, true), Err(Error::Protocol(_))));
        assert!(matches!(s.apply_answer(0, 3, true), Err(Error::Protocol(_))));
        assert!(matches!(s.apply_answer(2, 5, true), Err(Error::Domain(_))));
        assert_partition(&s);
    }

    #[test]
    fn full_samples_cannot_be_queried() {
        let d = generate_synthetic(2, 3, 2, 1.0, 0).unwrap();
        let (mut s, _) = make_initial_split(&d, 2, 10.0, 0).unwrap();
        let i = s.full()[0];
        assert!(matches!(s.apply_answer(i, 0, true), Err(Error::Protocol(_))));
    }

    #[test]
    fn requery_accumulates_negatives() {
        let mut s = SplitState::all_unlabeled(2, 4).with_requery(true);
        s.apply_answer(0, 1, false).unwrap();
        assert_eq!(s.queryable(), vec![0, 1]);
        assert!(matches!(s.apply_answer(0, 1, false), Err(Error::Protocol(_))));
        s.apply_answer(0, 2, false).unwrap();
        assert_eq!(s.state(0).negatives(), &[1, 2]);
        s.apply_answer(0, 3, true).unwrap();
        assert_eq!(s.state(0), &SampleState::Positive(3));
    }

    proptest::proptest! {
        #[test]
        fn partition_survives_any_answer_sequence(ops in proptest::collection::vec((0usize..30, 0usize..4, proptest::bool::ANY), 0..80), requery in proptest::bool::ANY) {
            let mut s = SplitState::all_unlabeled(30, 4).with_requery(requery);
            let mut known = 0;
            for (i, g, yes) in ops {
                let _ = s.apply_answer(i, g, yes);
                let now = s.count_full() + s.count_positive();
                proptest::prop_assert!(now >= known);
                known = now;
                proptest::prop_assert_eq!(
                    s.count_full() + s.count_positive() + s.count_negative() + s.count_unlabeled(),
                    30
                );
                if !requery {
                    proptest::prop_assert!(s.negative().iter().all(|&i| s.state(i).negatives().len() == 1));
                }
            }
        }
    }
}
