use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Distance used inside the density ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityDistance {
    /// `‖a − b‖₂`.
    #[default]
    Euclidean,
    /// `1 − a·b`.
    CosineDistance,
    /// `a·b`. Kept for comparison; as a similarity it inverts the meaning
    /// of the ratio.
    CosineSimilarity,
}

impl DensityDistance {
    pub fn eval<T: Real>(self, a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
        match self {
            DensityDistance::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
                .sqrt(),
            DensityDistance::CosineDistance => T::one() - a.dot(&b),
            DensityDistance::CosineSimilarity => a.dot(&b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density<T> {
    pub intra: T,
    pub inter: T,
    pub ratio: T,
}

/// Mean within-class pairwise distance over mean distance between class
/// means. Both averages run over ordered distinct pairs.
pub fn embedding_density<T: Real>(batch: &EmbeddingBatch<T>, distance: DensityDistance) -> Result<Density<T>> {
    let z = batch.vectors();
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in batch.labels().iter().enumerate() {
        classes.entry(label).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::UndefinedDensity(format!(
            "need at least two classes, found {}",
            classes.len()
        )));
    }
    if classes.values().all(|m| m.len() < 2) {
        return Err(Error::UndefinedDensity("no class has two or more samples".into()));
    }

    let means: Vec<Array1<T>> = classes
        .values()
        .map(|members| {
            let inv = T::one() / T::from_usize_lossy(members.len());
            members
                .iter()
                .fold(Array1::<T>::zeros(z.ncols()), |acc, &i| acc + z.row(i))
                .mapv(|x| x * inv)
        })
        .collect();

    let mut inter = T::zero();
    let mut inter_pairs = 0usize;
    for (l, ml) in means.iter().enumerate() {
        for (k, mk) in means.iter().enumerate() {
            if l != k {
                inter += distance.eval(ml.view(), mk.view());
                inter_pairs += 1;
            }
        }
    }
    let inter = inter / T::from_usize_lossy(inter_pairs);

    let mut intra = T::zero();
    let mut intra_pairs = 0usize;
    for members in classes.values() {
        for &i in members {
            for &j in members {
                if i != j {
                    intra += distance.eval(z.row(i), z.row(j));
                    intra_pairs += 1;
                }
            }
        }
    }
    let intra = intra / T::from_usize_lossy(intra_pairs);

    if inter == T::zero() {
        return Err(Error::UndefinedDensity("inter-class distance is zero".into()));
    }
    Ok(Density {
        intra,
        inter,
        ratio: intra / inter,
    })
}
