use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub cluster_spread: f64,
    pub seed: u64,
    /// Fraction of training labels to corrupt; see [`flip_labels`].
    pub label_flip_ratio: f64,
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidParameter("num_classes must be at least 2".into()));
        }
        if self.samples_per_class < 2 {
            return Err(Error::InvalidParameter("samples_per_class must be at least 2".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidParameter("input_dim must be positive".into()));
        }
        if !(self.cluster_spread >= 0.0) || !self.cluster_spread.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cluster_spread must be finite and nonnegative, got {}",
                self.cluster_spread
            )));
        }
        check_flip_ratio(self.label_flip_ratio)
    }
}

fn check_flip_ratio(ratio: f64) -> Result<()> {
    if (0.0..=0.5).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "label flip ratio must lie in [0, 0.5], got {ratio}"
        )))
    }
}

/// Input rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    fn classes(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }
}

/// Gaussian clusters around unit-norm class centers. Rows are grouped by
/// class: class `c` occupies rows `c·m .. (c+1)·m`. Labels are clean; the
/// flip ratio is applied by [`zero_shot_split`].
pub fn generate_synthetic(spec: &SyntheticDatasetSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let centers: Vec<Array1<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let c: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = c.dot(&c).sqrt();
            if norm > 1e-6 {
                break c / norm;
            }
        })
        .collect();
    let n = spec.num_classes * spec.samples_per_class;
    let mut inputs = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let mut row = inputs.row_mut(class * spec.samples_per_class + s);
            for (x, &c) in row.iter_mut().zip(center.iter()) {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *x = c + spec.cluster_spread * noise;
            }
            labels.push(class);
        }
    }
    Ok(LabeledDataset { inputs, labels })
}

/// Symmetric label noise: exactly `⌊ratio·n⌋` samples move to a uniformly
/// chosen different class.
pub fn flip_labels(dataset: &LabeledDataset, ratio: f64, seed: u64) -> Result<LabeledDataset> {
    check_flip_ratio(ratio)?;
    let n = dataset.len();
    let count = (ratio * n as f64).floor() as usize;
    let mut out = dataset.clone();
    if count == 0 {
        return Ok(out);
    }
    let classes: Vec<usize> = dataset.classes().into_keys().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidParameter(
            "label flipping needs at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, n, count).into_iter() {
        let original = dataset.labels[i];
        let others: Vec<usize> = classes.iter().copied().filter(|&c| c != original).collect();
        out.labels[i] = others[rng.random_range(0..others.len())];
    }
    Ok(out)
}

/// Train and test sets over disjoint classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Generates `spec.num_classes` classes; the first `num_train_classes` form
/// the training set (with label noise applied), the rest the test set.
pub fn zero_shot_split(spec: &SyntheticDatasetSpec, num_train_classes: usize) -> Result<ZeroShotSplit> {
    if num_train_classes < 2 || num_train_classes >= spec.num_classes {
        return Err(Error::InvalidParameter(format!(
            "num_train_classes must lie in [2, {}), got {num_train_classes}",
            spec.num_classes
        )));
    }
    let all = generate_synthetic(spec)?;
    let boundary = num_train_classes * spec.samples_per_class;
    let train_rows: Vec<usize> = (0..boundary).collect();
    let test_rows: Vec<usize> = (boundary..all.len()).collect();
    let train = flip_labels(
        &all.select(&train_rows),
        spec.label_flip_ratio,
        spec.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    Ok(ZeroShotSplit {
        train,
        test: all.select(&test_rows),
    })
}

/// Picks `batch_size/2` distinct classes and two distinct samples of each.
pub fn sample_batch<R: Rng + ?Sized>(labels: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "batch_size must be even and >= 2, got {batch_size}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let eligible: Vec<&Vec<usize>> = by_class.values().filter(|m| m.len() >= 2).collect();
    let needed = batch_size / 2;
    if eligible.len() < needed {
        return Err(Error::InsufficientClasses {
            needed,
            available: eligible.len(),
        });
    }
    let mut batch = Vec::with_capacity(batch_size);
    for c in sample(rng, eligible.len(), needed).into_iter() {
        let members = eligible[c];
        let pair = sample(rng, members.len(), 2);
        batch.extend(pair.into_iter().map(|k| members[k]));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            num_classes: 4,
            samples_per_class: 10,
            input_dim: 16,
            cluster_spread: 0.1,
            seed: 5,
            label_flip_ratio: 0.0,
        }
    }

    #[test]
    fn zero_spread_collapses_classes() {
        let data = generate_synthetic(&SyntheticDatasetSpec {
            cluster_spread: 0.0,
            ..spec()
        })
        .unwrap();
        for c in 0..4 {
            let first = data.inputs.row(c * 10);
            for s in 1..10 {
                assert_eq!(data.inputs.row(c * 10 + s), first);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_synthetic(&spec()).unwrap(),
            generate_synthetic(&spec()).unwrap()
        );
        let other = generate_synthetic(&SyntheticDatasetSpec { seed: 6, ..spec() }).unwrap();
        assert_ne!(generate_synthetic(&spec()).unwrap(), other);
    }

    #[test]
    fn flip_zero_is_identity() {
        let data = generate_synthetic(&spec()).unwrap();
        assert_eq!(flip_labels(&data, 0.0, 1).unwrap(), data);
    }

    #[test]
    fn flip_ratio_validated() {
        let data = generate_synthetic(&spec()).unwrap();
        assert!(flip_labels(&data, 0.6, 1).is_err());
        assert!(flip_labels(&data, -0.1, 1).is_err());
    }

    #[test]
    fn batch_exact_fit() {
        let labels: Vec<usize> = (0..16).flat_map(|c| std::iter::repeat_n(c, 4)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_batch(&labels, 32, &mut rng).unwrap();
        let mut counts = BTreeMap::new();
        for &i in &batch {
            *counts.entry(labels[i]).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 16);
        assert!(counts.values().all(|&c| c == 2));
        let mut unique = batch.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 32);
    }

    #[test]
    fn batch_needs_enough_classes() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch(&labels, 8, &mut rng),
            Err(Error::InsufficientClasses {
                needed: 4,
                available: 3
            })
        ));
        assert!(sample_batch(&labels, 3, &mut rng).is_err());
    }

    #[test]
    fn split_is_class_disjoint() {
        let split = zero_shot_split(
            &SyntheticDatasetSpec {
                num_classes: 6,
                ..spec()
            },
            4,
        )
        .unwrap();
        assert!(split.train.labels.iter().all(|&l| l < 4));
        assert!(split.test.labels.iter().all(|&l| l >= 4));
        assert_eq!(split.train.len(), 40);
        assert_eq!(split.test.len(), 20);
    }
}
