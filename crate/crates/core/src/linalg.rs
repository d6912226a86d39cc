//! Small dense kernels: LU factorization with partial pivoting and
//! singular values by one-sided Jacobi rotations.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-pivoted LU factorization `P·M = L·U` of a square matrix, stored packed.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    packed: Array2<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(matrix: ArrayView2<'_, T>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                n,
                matrix.ncols()
            )));
        }
        let mut a = matrix.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        let tiny = T::epsilon() * T::from_usize_lossy(n.max(1)) * scale.max(T::min_positive_value());

        for col in 0..n {
            let (pivot_row, pivot_abs) = (col..n)
                .map(|r| (r, a[[r, col]].abs()))
                .fold((col, -T::one()), |best, cand| if cand.1 > best.1 { cand } else { best });
            if !(pivot_abs > tiny) {
                return Err(Error::SingularSystem {
                    column: col,
                    pivot: pivot_abs.as_f64(),
                });
            }
            if pivot_row != col {
                for c in 0..n {
                    a.swap([col, c], [pivot_row, c]);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = a[[col, col]];
            for r in (col + 1)..n {
                let factor = a[[r, col]] / pivot;
                a[[r, col]] = factor;
                if factor != T::zero() {
                    for c in (col + 1)..n {
                        let u = a[[col, c]];
                        a[[r, c]] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { packed: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `M x = rhs` for one right-hand side.
    pub fn solve_vec(&self, rhs: &[T]) -> Array1<T> {
        let n = self.dim();
        debug_assert_eq!(rhs.len(), n);
        let mut x: Array1<T> = self.perm.iter().map(|&p| rhs[p]).collect();
        for r in 0..n {
            let mut acc = x[r];
            for c in 0..r {
                acc -= self.packed[[r, c]] * x[c];
            }
            x[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in (r + 1)..n {
                acc -= self.packed[[r, c]] * x[c];
            }
            x[r] = acc / self.packed[[r, r]];
        }
        x
    }

    /// Solves `M X = rhs` column by column; assembly order is fixed so the
    /// result does not depend on how columns are scheduled.
    pub fn solve_columns(&self, rhs: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "right-hand side has {} rows, system has {}",
                rhs.nrows(),
                self.dim()
            )));
        }
        let mut out = Array2::zeros(rhs.raw_dim());
        let mut column = vec![T::zero(); self.dim()];
        for (j, rhs_col) in rhs.axis_iter(Axis(1)).enumerate() {
            column.iter_mut().zip(rhs_col.iter()).for_each(|(d, &s)| *d = s);
            let x = self.solve_vec(&column);
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    }
}

/// Singular values of an arbitrary `m×n` matrix, sorted descending.
///
/// Uses Hestenes one-sided Jacobi on the columns (on the transpose when the
/// matrix is wide), which keeps full relative accuracy for small values.
/// Returns `min(m, n)` values.
pub fn singular_values<T: Real>(matrix: ArrayView2<'_, T>) -> Vec<T> {
    let work = if matrix.nrows() >= matrix.ncols() {
        matrix.to_owned()
    } else {
        matrix.t().to_owned()
    };
    let (rows, cols) = work.dim();
    let mut a = work;
    let tol = T::epsilon() * T::lit(4.0);

    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for r in 0..rows {
                    let (x, y) = (a[[r, p]], a[[r, q]]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (x, y) = (a[[r, p]], a[[r, q]]);
                    a[[r, p]] = c * x - s * y;
                    a[[r, q]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut values: Vec<T> = (0..cols)
        .map(|c| a.column(c).iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    values.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    values
}
