//! Small dense linear-algebra kernels: Cholesky factorization and solves for
//! the SPD systems of the Newton solver and the influence computations, and a
//! cyclic Jacobi eigensolver for the DPP kernel.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factorizes `a + shift·I`. Returns `None` when a pivot is not strictly
    /// positive (the shifted matrix is not positive definite).
    pub fn factor_shifted(a: ArrayView2<'_, f64>, shift: f64) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j: Vec<f64> = l[j * n..j * n + j].to_vec();
            let d = a[(j, j)] + shift - dot(&row_j, &row_j);
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            let pivot = d.sqrt();
            l[j * n + j] = pivot;
            for i in (j + 1)..n {
                let s = dot(&l[i * n..i * n + j], &row_j);
                l[i * n + j] = (a[(i, j)] - s) / pivot;
            }
        }
        Some(Cholesky { dim: n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(b.len(), n);
        let l = &self.lower;
        // forward: L y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            y[i] = (b[i] - dot(row, &y[..i])) / l[i * n + i];
        }
        // backward: Lᵀ x = y
        let mut x = y;
        for i in (0..n).rev() {
            x[i] /= l[i * n + i];
            let xi = x[i];
            let row = &l[i * n..i * n + i];
            for (xk, lik) in x[..i].iter_mut().zip(row) {
                *xk -= lik * xi;
            }
        }
        x
    }

    /// Smallest diagonal entry of the factor.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Eigendecomposition of a symmetric matrix: eigenvalues in nonincreasing
/// order, eigenvectors as the matching columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `tol` times the Frobenius norm of the input.
pub fn jacobi_eigen(a: ArrayView2<'_, f64>, tol: f64) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Parameter(
            "eigendecomposition needs a square matrix".into(),
        ));
    }
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let total = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if total == 0.0 {
        return Ok(SymmetricEigen {
            values: Array1::zeros(n),
            vectors: v,
        });
    }
    let threshold = tol * total;

    let off_norm = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += 2.0 * m[(p, q)] * m[(p, q)];
            }
        }
        s.sqrt()
    };

    let mut converged = off_norm(&m) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J the (p, q) plane rotation
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_norm(&m) <= threshold;
    }
    if !converged {
        return Err(Error::Conditioning(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let ch = Cholesky::factor_shifted(a.view(), 0.0).unwrap();
        assert!(ch
            .solve(&[2.0, 4.0])
            .iter()
            .all(|x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(Cholesky::factor_shifted(a.view(), 0.0).is_none());
        assert!(Cholesky::factor_shifted(a.view(), 1.5).is_some());
    }

    #[test]
    fn jacobi_two_by_two() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let eig = jacobi_eigen(a.view(), 1e-14).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
        let v0 = eig.vectors.column(0);
        let r = a.dot(&v0) - &(&v0 * 3.0);
        assert!(r.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), 91.0);
    }
}
