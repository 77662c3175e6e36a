use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::theory::ClassCount;

const MAGIC: &[u8; 4] = b"OBS1";
const HEADER_LEN: usize = 16;

/// Feature matrix plus ground-truth labels.
///
/// Features are stored as `f32`, matching the on-disk format, and widened to
/// `f64` when handed to a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    features: Vec<f32>,
    dim: usize,
    labels: Vec<u16>,
    classes: ClassCount,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f32>,
        dim: usize,
        labels: Vec<u16>,
        classes: ClassCount,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} features do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if classes.get() > u16::MAX as usize + 1 {
            return Err(Error::Domain(format!("{classes} classes do not fit u16 labels")));
        }
        if let Some((i, l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= classes.get())
        {
            return Err(Error::Domain(format!("label {l} of sample {i} is not below {classes}")));
        }
        Ok(Self {
            name: name.into(),
            features,
            dim,
            labels,
            classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> ClassCount {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw_features(&self) -> &[f32] {
        &self.features
    }

    /// Features as an `N x d` matrix of `f64`.
    pub fn feature_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), self.dim), |(i, j)| self.features[i * self.dim + j] as f64)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.get()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * 4 + self.labels.len() * 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes.get() as u32).to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"OBS1\""));
        }
        let n = read_u32(bytes, 4) as usize;
        let dim = read_u32(bytes, 8) as usize;
        let classes = read_u32(bytes, 12) as usize;
        if dim == 0 {
            return Err(Error::format(8, "feature dimension is zero"));
        }
        let classes = ClassCount::new(classes)
            .map_err(|_| Error::format(12, format!("class count {classes} is below 2")))?;

        let row_bytes = dim * 4;
        let features_end = HEADER_LEN + n * row_bytes;
        if bytes.len() < features_end {
            let rows = (bytes.len() - HEADER_LEN) / row_bytes;
            return Err(Error::format(
                HEADER_LEN + rows * row_bytes,
                format!("header declares N={n} but the payload holds {rows} complete rows"),
            ));
        }
        let labels_end = features_end + n * 2;
        if bytes.len() < labels_end {
            let have = (bytes.len() - features_end) / 2;
            return Err(Error::format(
                features_end + have * 2,
                format!("header declares N={n} but the payload holds {have} labels"),
            ));
        }
        if bytes.len() > labels_end {
            return Err(Error::format(labels_end, "trailing bytes after labels"));
        }

        let features = bytes[HEADER_LEN..features_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut labels = Vec::with_capacity(n);
        for (i, c) in bytes[features_end..labels_end].chunks_exact(2).enumerate() {
            let l = u16::from_le_bytes([c[0], c[1]]);
            if l as usize >= classes.get() {
                return Err(Error::format(
                    features_end + 2 * i,
                    format!("label {l} is not below C={classes}"),
                ));
            }
            labels.push(l);
        }
        Self::new(name, features, dim, labels, classes)
    }

    /// Splits off `per_class` samples of every class as a held-out set.
    pub fn stratified_holdout(&self, per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held = vec![false; self.len()];
        for members in class_members(&self.labels, self.classes.get()) {
            if members.len() <= per_class {
                return Err(Error::Domain(format!(
                    "cannot hold out {per_class} of a class with {} samples",
                    members.len()
                )));
            }
            for &i in rand::seq::index::sample(&mut rng, members.len(), per_class)
                .iter()
                .map(|k| &members[k])
            {
                held[i] = true;
            }
        }
        let pick = |keep: bool| -> Result<Dataset> {
            let idx: Vec<usize> = (0..self.len()).filter(|&i| held[i] == keep).collect();
            let features = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
            let labels = idx.iter().map(|&i| self.labels[i]).collect();
            let suffix = if keep { "test" } else { "train" };
            Dataset::new(format!("{}-{suffix}", self.name), features, self.dim, labels, self.classes)
        };
        Ok((pick(false)?, pick(true)?))
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub(crate) fn class_members(labels: &[u16], classes: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    members
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a dataset file. The dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_bytes(name, &bytes)
}

/// Isotropic Gaussian mixture with one component per class.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    classes: ClassCount,
    dim: usize,
    means: Array2<f64>,
}

impl GaussianMixture {
    /// Draws class means from a standard normal scaled by `separation`.
    pub fn new<R: Rng>(classes: ClassCount, dim: usize, separation: f64, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Domain(format!("dim must be at least 2, got {dim}")));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(Error::Domain(format!("separation must be positive, got {separation}")));
        }
        let means = Array2::from_shape_fn((classes.get(), dim), |_| {
            separation * rng.sample::<f64, _>(StandardNormal)
        });
        Ok(Self { classes, dim, means })
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    /// Draws exactly `n_per_class` samples of each class, class-major order.
    pub fn sample<R: Rng>(&self, name: &str, n_per_class: usize, rng: &mut R) -> Result<Dataset> {
        let c = self.classes.get();
        let mut features = Vec::with_capacity(c * n_per_class * self.dim);
        let mut labels = Vec::with_capacity(c * n_per_class);
        for class in 0..c {
            for _ in 0..n_per_class {
                for j in 0..self.dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push((self.means[[class, j]] + noise) as f32);
                }
                labels.push(class as u16);
            }
        }
        Dataset::new(name, features, self.dim, labels, self.classes)
    }
}

/// Seeded Gaussian-mixture dataset with `n_per_class` samples per class.
pub fn generate_synthetic(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    Ok(generate_synthetic_task(classes, n_per_class, 0, dim, separation, seed)?.0)
}

/// Training set plus a held-out set drawn from the same mixture.
///
/// The training part is identical to `generate_synthetic` with the same
/// arguments; the held-out draws continue the same random stream.
pub fn generate_synthetic_task(
    classes: usize,
    n_per_class: usize,
    test_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let classes = ClassCount::new(classes)?;
    if n_per_class < 2 {
        return Err(Error::Domain(format!("n_per_class must be at least 2, got {n_per_class}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = GaussianMixture::new(classes, dim, separation, &mut rng)?;
    let name = format!("gmm-c{classes}-d{dim}-s{separation}-seed{seed}");
    let train = mixture.sample(&name, n_per_class, &mut rng)?;
    let test = mixture.sample(&format!("{name}-test"), test_per_class, &mut rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate_synthetic(10, 200, 16, 3.0, 7).unwrap();
        let b = generate_synthetic(10, 200, 16, 3.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.len(), 2_000);
        assert_eq!(a.class_counts(), vec![200; 10]);
        let c = generate_synthetic(10, 200, 16, 3.0, 8).unwrap();
        assert_ne!(a.raw_features(), c.raw_features());
    }

    #[test]
    fn task_train_part_matches_plain_generation() {
        let (train, test) = generate_synthetic_task(4, 20, 5, 3, 2.0, 9).unwrap();
        assert_eq!(train.raw_features(), generate_synthetic(4, 20, 3, 2.0, 9).unwrap().raw_features());
        assert_eq!(test.len(), 20);
        assert_eq!(test.class_counts(), vec![5; 4]);
    }

    #[test]
    fn generation_preconditions() {
        assert!(generate_synthetic(1, 10, 2, 1.0, 0).is_err());
        assert!(generate_synthetic(3, 1, 2, 1.0, 0).is_err());
        assert!(generate_synthetic(3, 10, 1, 1.0, 0).is_err());
        assert!(generate_synthetic(3, 10, 2, 0.0, 0).is_err());
    }

    #[test]
    fn nearest_mean_classifies_fresh_draws() {
        let (train, test) = generate_synthetic_task(10, 500, 200, 16, 4.0, 1).unwrap();
        // Oracle: class means estimated from the training draws.
        let mut means = vec![vec![0.0f64; 16]; 10];
        for i in 0..train.len() {
            for (m, &x) in means[train.label(i)].iter_mut().zip(train.row(i)) {
                *m += x as f64 / 500.0;
            }
        }
        let correct = (0..test.len())
            .filter(|&i| {
                let dist = |m: &Vec<f64>| -> f64 {
                    m.iter().zip(test.row(i)).map(|(a, &b)| (a - b as f64).powi(2)).sum()
                };
                let best = (0..10).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap();
                best == test.label(i)
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.9, "nearest-mean accuracy {acc}");
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = generate_synthetic(3, 4, 2, 1.0, 0).unwrap().to_bytes();
        bytes[1] = b'X';
        let err = Dataset::from_bytes("x", &bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_rows_are_reported() {
        let d = Dataset::new("t", vec![0.5; 5 * 3], 3, vec![0, 1, 2, 0, 1], ClassCount::new(3).unwrap()).unwrap();
        let mut bytes = d.to_bytes();
        // Keep the header claiming N=5 but drop the fifth row and the labels.
        bytes.truncate(HEADER_LEN + 4 * 3 * 4);
        let err = Dataset::from_bytes("t", &bytes).unwrap_err();
        match err {
            Error::Format { offset, message } => {
                assert_eq!(offset, HEADER_LEN + 4 * 12);
                assert!(message.contains("N=5"), "{message}");
                assert!(message.contains("4 complete rows"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_label_names_offset() {
        let d = Dataset::new("t", vec![0.0; 6], 2, vec![0, 1, 1], ClassCount::new(2).unwrap()).unwrap();
        let mut bytes = d.to_bytes();
        let at = HEADER_LEN + 6 * 4 + 2;
        bytes[at] = 7;
        let err = Dataset::from_bytes("t", &bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset == at), "{err}");
    }

    #[test]
    fn short_header_and_trailing_bytes() {
        assert!(matches!(Dataset::from_bytes("t", b"OBS1\0\0"), Err(Error::Format { offset: 6, .. })));
        let mut bytes = generate_synthetic(2, 2, 2, 1.0, 0).unwrap().to_bytes();
        let end = bytes.len();
        bytes.push(0);
        assert!(matches!(Dataset::from_bytes("t", &bytes), Err(Error::Format { offset, .. }) if offset == end));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gmm.obs");
        let d = generate_synthetic(5, 7, 3, 2.0, 4).unwrap();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.name(), "gmm");
        assert_eq!(back.raw_features(), d.raw_features());
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.classes(), d.classes());
        assert_eq!(back.dim(), d.dim());
        assert!(matches!(load_dataset(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let d = generate_synthetic(4, 10, 2, 1.0, 3).unwrap();
        let (train, test) = d.stratified_holdout(3, 1).unwrap();
        assert_eq!(test.class_counts(), vec![3; 4]);
        assert_eq!(train.class_counts(), vec![7; 4]);
        assert!(d.stratified_holdout(10, 1).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]
        #[test]
        fn bytes_round_trip(c in 2usize..6, n in 2usize..6, dim in 2usize..5, seed in 0u64..1000) {
            let d = generate_synthetic(c, n, dim, 1.5, seed).unwrap();
            let back = Dataset::from_bytes(d.name(), &d.to_bytes()).unwrap();
            proptest::prop_assert_eq!(back, d);
        }
    }
}
