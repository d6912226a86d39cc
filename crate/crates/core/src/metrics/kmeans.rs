use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iter: 300,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub assignments: Vec<usize>,
    pub centroids: Array2<T>,
    pub inertia: T,
    pub iterations: usize,
}

fn sq_dist<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
fn nearest<T: Real>(point: ArrayView1<'_, T>, centroids: &Array2<T>) -> (usize, T) {
    centroids
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(c, row)| (c, sq_dist(point, row)))
        .fold(
            (0, T::infinity()),
            |best, cand| if cand.1 < best.1 { cand } else { best },
        )
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance. Falls back to a uniform pick among unchosen points when every
/// remaining point coincides with a center.
fn seed_centroids<T: Real>(points: ArrayView2<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<T> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: T = dist.iter().copied().sum();
        let next = if total > T::zero() {
            let target = T::lit(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > T::zero() {
                    acc += d;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

fn lloyd<T: Real>(points: ArrayView2<'_, T>, mut centroids: Array2<T>, max_iter: usize) -> KMeansResult<T> {
    let (n, d) = points.dim();
    let k = centroids.nrows();
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for (i, slot) in assignments.iter_mut().enumerate() {
            let (c, _) = nearest(points.row(i), &centroids);
            if *slot != c {
                *slot = c;
                changed = true;
            }
        }
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Array2::<T>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &points.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = T::one() / T::from_usize_lossy(count);
                centroids.row_mut(c).assign(&sums.row(c).mapv(|x| x * inv));
            } else {
                // Empty cluster: move it onto the point farthest from its centroid.
                let far = (0..n)
                    .map(|i| (i, sq_dist(points.row(i), centroids.row(assignments[i]))))
                    .fold((0, -T::one()), |best, cand| if cand.1 > best.1 { cand } else { best })
                    .0;
                centroids.row_mut(c).assign(&points.row(far));
                assignments[far] = c;
            }
        }
    }
    let inertia = assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points.row(i), centroids.row(c)))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        inertia,
        iterations,
    }
}

/// Lloyd's algorithm with k-means++ seeding; keeps the lowest-inertia run
/// over `restarts`. Deterministic for a fixed seed.
pub fn kmeans<T: Real>(points: ArrayView2<'_, T>, config: &KMeansConfig) -> Result<KMeansResult<T>> {
    let n = points.nrows();
    if config.k == 0 || config.k > n {
        return Err(Error::InvalidParameter(format!(
            "k-means needs 1 <= k <= n = {n}, got {}",
            config.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..config.restarts.max(1) {
        let init = seed_centroids(points, config.k, &mut rng);
        let run = lloyd(points, init, config.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_cluster_per_point_has_zero_inertia() {
        let p = array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [2.0, 2.0]];
        let r = kmeans(p.view(), &KMeansConfig::new(4, 7)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn separated_blobs_and_determinism() {
        let p = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let cfg = KMeansConfig::new(2, 3);
        let r = kmeans(p.view(), &cfg).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[0], r.assignments[2]);
        assert_eq!(r.assignments[3], r.assignments[5]);
        assert_ne!(r.assignments[0], r.assignments[3]);
        assert_eq!(r, kmeans(p.view(), &cfg).unwrap());
    }

    #[test]
    fn rejects_bad_k() {
        let p = array![[0.0], [1.0]];
        assert!(kmeans(p.view(), &KMeansConfig::new(0, 0)).is_err());
        assert!(kmeans(p.view(), &KMeansConfig::new(3, 0)).is_err());
    }
}
