//! Affinity graphs, symmetric normalization, and the diffusion fixed point
//! `A = (1−ω)(I−ωS)⁻¹D` on batch manifolds and mutual-kNN global manifolds.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity_matrix, gram, EmbeddingBatch, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    ClosedForm,
    Iterative,
}

/// How negative cosine similarities enter the affinity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityClamp {
    #[default]
    ClampNegativeToZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionParams<T> {
    /// Transition probability of the random walk, in (0, 1).
    pub omega: T,
    pub mode: SolverMode,
    pub max_iter: usize,
    /// Entrywise max-abs update below which the iteration stops.
    pub tol: T,
    pub affinity_clamp: AffinityClamp,
    /// Floor applied to node degrees before `V^{-1/2}`.
    pub degree_epsilon: T,
}

impl<T: Real> DiffusionParams<T> {
    pub fn new(omega: T) -> Result<Self> {
        let params = Self {
            omega,
            mode: SolverMode::ClosedForm,
            max_iter: 500,
            tol: T::lit(1e-10),
            affinity_clamp: AffinityClamp::ClampNegativeToZero,
            degree_epsilon: T::lit(1e-8),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_mode(mut self, mode: SolverMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_omega(self.omega)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.degree_epsilon > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "degree_epsilon must be positive, got {}",
                self.degree_epsilon
            )));
        }
        Ok(())
    }
}

fn validate_omega<T: Real>(omega: T) -> Result<()> {
    if omega > T::zero() && omega < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "omega must lie in (0, 1), got {omega}"
        )))
    }
}

/// Loop-free nonnegative affinity `W` with degrees `V_ii = Σ_j W_ij`
/// (floored at `degree_epsilon`).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph<T> {
    weights: Array2<T>,
    degrees: Array1<T>,
    degenerate_nodes: Vec<usize>,
    degree_epsilon: T,
}

impl<T: Real> AffinityGraph<T> {
    /// Builds a graph from a symmetric nonnegative weight matrix; the diagonal
    /// is zeroed.
    pub fn from_weights(mut weights: Array2<T>, degree_epsilon: T) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "affinity must be square, got {:?}",
                weights.dim()
            )));
        }
        if weights.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "affinity weights must be finite and nonnegative".into(),
            ));
        }
        weights.diag_mut().fill(T::zero());
        let raw = weights.sum_axis(Axis(1));
        let degenerate_nodes = raw
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < degree_epsilon)
            .map(|(i, _)| i)
            .collect();
        let degrees = raw.mapv(|d| d.max(degree_epsilon));
        Ok(Self {
            weights,
            degrees,
            degenerate_nodes,
            degree_epsilon,
        })
    }

    pub fn weights(&self) -> ArrayView2<'_, T> {
        self.weights.view()
    }

    /// Diagonal of `V` after flooring.
    pub fn degrees(&self) -> &Array1<T> {
        &self.degrees
    }

    /// Nodes whose raw degree fell below `degree_epsilon` and were floored.
    pub fn degenerate_nodes(&self) -> &[usize] {
        &self.degenerate_nodes
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Surfaces the degeneracy diagnostic as an error.
    pub fn check(&self) -> Result<()> {
        if self.degenerate_nodes.is_empty() {
            Ok(())
        } else {
            Err(Error::DegenerateGraph {
                nodes: self.degenerate_nodes.clone(),
                epsilon: self.degree_epsilon.as_f64(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T>(Array2<T>);

impl<T: Real> TransitionMatrix<T> {
    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    /// Wraps an arbitrary square matrix, e.g. to diffuse with `S = 0`.
    pub fn from_matrix(s: Array2<T>) -> Result<Self> {
        if s.nrows() != s.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "transition matrix must be square, got {:?}",
                s.dim()
            )));
        }
        Ok(Self(s))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Diffusion output `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSimilarity<T>(Array2<T>);

impl<T: Real> RefinedSimilarity<T> {
    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }

    pub fn from_matrix(a: Array2<T>) -> Self {
        Self(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeDiffusion<T> {
    pub refined: RefinedSimilarity<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs change of the final update.
    pub last_update: T,
}

fn clamp_affinity<T: Real>(s: T, clamp: AffinityClamp) -> T {
    match clamp {
        AffinityClamp::ClampNegativeToZero => s.max(T::zero()),
    }
}

/// Dense batch affinity `W_ij = max(z_i·z_j, 0)`, `W_ii = 0`.
///
/// Degenerate nodes do not fail the call: they are floored and listed in
/// [`AffinityGraph::degenerate_nodes`].
pub fn build_affinity_batch<T: Real>(
    batch: &EmbeddingBatch<T>,
    params: &DiffusionParams<T>,
) -> Result<AffinityGraph<T>> {
    if batch.len() < 2 {
        return Err(Error::InvalidParameter(
            "affinity graph needs at least two samples".into(),
        ));
    }
    let sims = gram(batch.vectors());
    affinity_from_similarity(sims.view(), params)
}

/// Batch affinity from a precomputed similarity matrix.
pub fn affinity_from_similarity<T: Real>(
    sims: ArrayView2<'_, T>,
    params: &DiffusionParams<T>,
) -> Result<AffinityGraph<T>> {
    let weights = sims.mapv(|s| clamp_affinity(s, params.affinity_clamp));
    AffinityGraph::from_weights(weights, params.degree_epsilon)
}

/// Indices of the `k` most similar other rows, most similar first; ties go
/// to the lower index.
pub fn top_k_neighbors<T: Real>(sims: ArrayView2<'_, T>, k: usize) -> Vec<Vec<usize>> {
    let n = sims.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                sims[[i, b]]
                    .partial_cmp(&sims[[i, a]])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            others.truncate(k);
            others
        })
        .collect()
}

/// Mutual-kNN sparsified affinity: `W_ij = d(z_i, z_j)` only when each of
/// `i, j` is among the other's `k` nearest neighbors.
pub fn build_affinity_knn<T: Real>(
    batch: &EmbeddingBatch<T>,
    k: usize,
    params: &DiffusionParams<T>,
) -> Result<AffinityGraph<T>> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "affinity graph needs at least two samples".into(),
        ));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "knn k must satisfy 1 <= k < n = {n}, got {k}"
        )));
    }
    let sims = gram(batch.vectors());
    let neighbors = top_k_neighbors(sims.view(), k);
    let mut membership = Array2::from_elem((n, n), false);
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            membership[[i, j]] = true;
        }
    }
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && membership[[i, j]] && membership[[j, i]] {
                weights[[i, j]] = clamp_affinity(sims[[i, j]], params.affinity_clamp);
            }
        }
    }
    AffinityGraph::from_weights(weights, params.degree_epsilon)
}

/// `S = V^{-1/2} W V^{-1/2}`.
pub fn transition_matrix<T: Real>(graph: &AffinityGraph<T>) -> Result<TransitionMatrix<T>> {
    if let Some(i) = graph.degrees.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::DegenerateGraph {
            nodes: vec![i],
            epsilon: graph.degree_epsilon.as_f64(),
        });
    }
    let d = &graph.degrees;
    let n = graph.len();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = graph.weights[[i, j]] / (d[i] * d[j]).sqrt();
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    Ok(TransitionMatrix(s))
}

fn check_square_pair<T>(s: &TransitionMatrix<T>, rows: usize) -> Result<()> {
    if s.0.nrows() != rows {
        return Err(Error::ShapeMismatch(format!(
            "transition matrix is {}x{}, initial state has {} rows",
            s.0.nrows(),
            s.0.ncols(),
            rows
        )));
    }
    Ok(())
}

/// Fixed point `(1−ω)(I−ωS)⁻¹F0` by an LU solve per column of `F0`.
pub fn diffuse_closed_form<T: Real>(
    s: &TransitionMatrix<T>,
    initial: ArrayView2<'_, T>,
    omega: T,
) -> Result<RefinedSimilarity<T>> {
    validate_omega(omega)?;
    check_square_pair(s, initial.nrows())?;
    let n = s.len();
    let mut system = s.0.mapv(|x| -omega * x);
    for i in 0..n {
        system[[i, i]] += T::one();
    }
    let lu = Lu::factor(system.view())?;
    let mut a = lu.solve_columns(initial)?;
    let scale = T::one() - omega;
    a.mapv_inplace(|x| x * scale);
    Ok(RefinedSimilarity(a))
}

/// Iterates `F ← ωSF + (1−ω)F0` until the max-abs update drops below `tol`.
pub fn diffuse_iterative<T: Real>(
    s: &TransitionMatrix<T>,
    initial: ArrayView2<'_, T>,
    params: &DiffusionParams<T>,
) -> Result<IterativeDiffusion<T>> {
    params.validate()?;
    check_square_pair(s, initial.nrows())?;
    let omega = params.omega;
    let restart = initial.mapv(|x| (T::one() - omega) * x);
    let mut current = initial.to_owned();
    let mut last_update = T::infinity();
    for iteration in 1..=params.max_iter {
        let mut next = s.0.dot(&current);
        next.zip_mut_with(&restart, |x, &r| *x = omega * *x + r);
        last_update = next
            .iter()
            .zip(current.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        current = next;
        if last_update < params.tol {
            return Ok(IterativeDiffusion {
                refined: RefinedSimilarity(current),
                iterations: iteration,
                converged: true,
                last_update,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: params.max_iter,
        residual: last_update.as_f64(),
        best: Box::new(current.mapv(|x| x.as_f64())),
    })
}

/// Diffuses with whichever solver `params.mode` names.
pub fn diffuse<T: Real>(
    s: &TransitionMatrix<T>,
    initial: ArrayView2<'_, T>,
    params: &DiffusionParams<T>,
) -> Result<RefinedSimilarity<T>> {
    match params.mode {
        SolverMode::ClosedForm => diffuse_closed_form(s, initial, params.omega),
        SolverMode::Iterative => diffuse_iterative(s, initial, params).map(|r| r.refined),
    }
}

/// Objective whose minimizer is the diffusion fixed point:
///
/// `½ Σ_c Σ_{j,k} W_jk (A_jc/√V_jj − A_kc/√V_kk)² + ((1−ω)/ω) Σ_{i,j} (A_ij − D_ij)²`
///
/// The smoothness term runs down each column of `A`, which is the direction
/// `S` acts on in `(I−ωS)A = (1−ω)D`; for symmetric `A` it coincides with
/// the row-wise reading. Stationarity holds when every degree equals its raw
/// row sum (no flooring).
pub fn obdp_objective<T: Real>(
    a: ArrayView2<'_, T>,
    weights: ArrayView2<'_, T>,
    degrees: &Array1<T>,
    initial: ArrayView2<'_, T>,
    omega: T,
) -> Result<T> {
    validate_omega(omega)?;
    let n = weights.nrows();
    if weights.ncols() != n || a.dim() != (n, n) || initial.dim() != (n, n) || degrees.len() != n {
        return Err(Error::ShapeMismatch(
            "objective operands must all be n x n with n degrees".into(),
        ));
    }
    if let Some(i) = degrees.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::DegenerateGraph {
            nodes: vec![i],
            epsilon: 0.0,
        });
    }
    let inv_sqrt = degrees.mapv(|d| T::one() / d.sqrt());
    let mut smooth = T::zero();
    for c in 0..n {
        for j in 0..n {
            let aj = a[[j, c]] * inv_sqrt[j];
            for k in 0..n {
                let w = weights[[j, k]];
                if w != T::zero() {
                    let diff = aj - a[[k, c]] * inv_sqrt[k];
                    smooth += w * diff * diff;
                }
            }
        }
    }
    let fidelity: T = a.iter().zip(initial.iter()).map(|(&x, &d)| (x - d) * (x - d)).sum();
    Ok(T::lit(0.5) * smooth + (T::one() - omega) / omega * fidelity)
}

/// Result of refining one batch of embeddings.
#[derive(Debug, Clone)]
pub struct BatchRefinement<T> {
    /// Row indices (into the full embedding table) covered by this batch.
    pub rows: Vec<usize>,
    pub similarity: SimilarityMatrix<T>,
    pub refined: RefinedSimilarity<T>,
    pub degenerate_nodes: Vec<usize>,
}

/// Full online-batch pipeline on one batch: `D`, `W`, `S`, then `A`.
pub fn refine_batch<T: Real>(batch: &EmbeddingBatch<T>, params: &DiffusionParams<T>) -> Result<BatchRefinement<T>> {
    params.validate()?;
    let similarity = cosine_similarity_matrix(batch);
    let graph = affinity_from_similarity(similarity.view(), params)?;
    let s = transition_matrix(&graph)?;
    let refined = diffuse(&s, similarity.view(), params)?;
    Ok(BatchRefinement {
        rows: (0..batch.len()).collect(),
        similarity,
        refined,
        degenerate_nodes: graph.degenerate_nodes,
    })
}

/// Splits rows into consecutive batches of `batch_size` and refines each
/// independently. A trailing batch of one row is merged into its
/// predecessor since a single node has no graph.
pub fn refine_in_batches<T: Real>(
    batch: &EmbeddingBatch<T>,
    batch_size: usize,
    params: &DiffusionParams<T>,
) -> Result<Vec<BatchRefinement<T>>> {
    if batch_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two rows to diffuse".into()));
    }
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if bounds.len() > 1 && bounds.last().is_some_and(|&(s, e)| e - s == 1) {
        let last = bounds.pop().unwrap();
        bounds.last_mut().unwrap().1 = last.1;
    }
    bounds
        .into_iter()
        .map(|(start, end)| {
            let rows: Vec<usize> = (start..end).collect();
            let mut out = refine_batch(&batch.select(&rows), params)?;
            out.degenerate_nodes.iter_mut().for_each(|i| *i += start);
            out.rows = rows;
            Ok(out)
        })
        .collect()
}

/// Diffusion over all rows with a mutual-kNN affinity (offline global
/// manifold).
pub fn refine_global<T: Real>(
    batch: &EmbeddingBatch<T>,
    k: usize,
    params: &DiffusionParams<T>,
) -> Result<BatchRefinement<T>> {
    params.validate()?;
    let similarity = cosine_similarity_matrix(batch);
    let graph = build_affinity_knn(batch, k, params)?;
    let s = transition_matrix(&graph)?;
    let refined = diffuse(&s, similarity.view(), params)?;
    Ok(BatchRefinement {
        rows: (0..batch.len()).collect(),
        similarity,
        refined,
        degenerate_nodes: graph.degenerate_nodes,
    })
}
