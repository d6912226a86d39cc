//! Embedding normalization, cosine similarity geometry, and the
//! normalization Jacobian used when chaining gradients back to raw outputs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Norms below this are treated as zero by [`l2_normalize`].
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Pre-normalization encoder outputs `v_i` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddingBatch<T> {
    vectors: Array2<T>,
    labels: Vec<usize>,
}

impl<T: Real> RawEmbeddingBatch<T> {
    pub fn new(vectors: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        check_shape(&vectors, &labels)?;
        Ok(Self { vectors, labels })
    }

    /// Batch without meaningful labels (every sample in class 0).
    pub fn unlabeled(vectors: Array2<T>) -> Result<Self> {
        let n = vectors.nrows();
        Self::new(vectors, vec![0; n])
    }

    pub fn vectors(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Row-wise unit-norm embeddings `z_i` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    vectors: Array2<T>,
    labels: Vec<usize>,
}

impl<T: Real> EmbeddingBatch<T> {
    /// Wraps rows that are already unit norm; fails if any row is not.
    pub fn from_unit_rows(vectors: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        check_shape(&vectors, &labels)?;
        let tol = T::unit_norm_tolerance();
        for (i, row) in vectors.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - T::one()).abs() > tol {
                return Err(Error::InvalidParameter(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self { vectors, labels })
    }

    pub fn vectors(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Sub-batch holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            vectors: self.vectors.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn into_parts(self) -> (Array2<T>, Vec<usize>) {
        (self.vectors, self.labels)
    }
}

fn check_shape<T>(vectors: &Array2<T>, labels: &[usize]) -> Result<()> {
    let (n, d) = vectors.dim();
    if n == 0 || d == 0 {
        return Err(Error::ShapeMismatch(format!(
            "embedding batch must be non-empty, got {n}x{d}"
        )));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    Ok(())
}

/// Pairwise cosine similarities `D_ij = z_i · z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T>(Array2<T>);

impl<T: Real> SimilarityMatrix<T> {
    /// Wraps an arbitrary square matrix (used for teacher targets and tests).
    pub fn from_matrix(values: Array2<T>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix must be square, got {:?}",
                values.dim()
            )));
        }
        Ok(Self(values))
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }
}

/// Normalizes each row with the default zero-norm threshold.
pub fn l2_normalize<T: Real>(batch: &RawEmbeddingBatch<T>) -> Result<EmbeddingBatch<T>> {
    l2_normalize_with_threshold(batch, T::lit(ZERO_NORM_THRESHOLD))
}

pub fn l2_normalize_with_threshold<T: Real>(batch: &RawEmbeddingBatch<T>, threshold: T) -> Result<EmbeddingBatch<T>> {
    let mut vectors = batch.vectors.clone();
    for (i, mut row) in vectors.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= threshold) {
            return Err(Error::ZeroNormRow(i));
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(EmbeddingBatch {
        vectors,
        labels: batch.labels.clone(),
    })
}

/// Symmetric matrix of row dot products; each pair is computed once and
/// mirrored so the result is exactly symmetric.
pub fn cosine_similarity_matrix<T: Real>(batch: &EmbeddingBatch<T>) -> SimilarityMatrix<T> {
    SimilarityMatrix(gram(batch.vectors.view()))
}

pub(crate) fn gram<T: Real>(rows: ArrayView2<'_, T>) -> Array2<T> {
    let n = rows.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let zi = rows.row(i);
        for j in i..n {
            let s = zi.dot(&rows.row(j));
            out[[i, j]] = s;
            out[[j, i]] = s;
        }
    }
    out
}

/// Applies `∂z/∂v` for `z = v/‖v‖` to an upstream gradient:
/// `(1/‖v‖)(I − z zᵀ)·upstream`.
pub fn normalization_jacobian_apply<T: Real>(v: ArrayView1<'_, T>, upstream: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if v.len() != upstream.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector has {} entries, upstream gradient {}",
            v.len(),
            upstream.len()
        )));
    }
    let norm = v.dot(&v).sqrt();
    if !(norm >= T::lit(ZERO_NORM_THRESHOLD)) {
        return Err(Error::ZeroNormRow(0));
    }
    Ok(project_tangent(v, upstream, norm))
}

/// Same as [`normalization_jacobian_apply`] with the norm already known.
pub(crate) fn project_tangent<T: Real>(v: ArrayView1<'_, T>, upstream: ArrayView1<'_, T>, norm: T) -> Array1<T> {
    let z = v.mapv(|x| x / norm);
    let along = z.dot(&upstream);
    let mut out = upstream.to_owned();
    out.zip_mut_with(&z, |g, &zk| *g = (*g - along * zk) / norm);
    out
}
