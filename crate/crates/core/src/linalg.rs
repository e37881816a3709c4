//! Small dense linear-algebra kernels used by the oracles.

use nalgebra::{DMatrix, DVector};

use crate::error::{FamrError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance `‖a − b‖₂`.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Eigendecomposition of a symmetric matrix: `a = vectors · diag(values) · vectorsᵀ`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

impl SymmetricEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(self.values.clone()));
        &self.vectors * lambda * self.vectors.transpose()
    }
}

pub const JACOBI_TOLERANCE: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over all `(p, q)` pairs, annihilating each off-diagonal entry
/// with a plane rotation, until the off-diagonal Frobenius norm drops
/// below `1e-10 · max(1, ‖A‖_F)`.
pub fn jacobi_eigen(matrix: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(FamrError::InvalidArgument(format!(
            "eigendecomposition needs a non-empty square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(FamrError::NonFinite("matrix entry".into()));
    }

    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = JACOBI_TOLERANCE * matrix.norm().max(1.0);

    let mut sweeps = 0;
    while off_diagonal_norm(&a) >= tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(FamrError::NoConvergence(format!(
                "Jacobi eigensolver after {JACOBI_MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
                off_diagonal_norm(&a)
            )));
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Solves `a · x = b` for symmetric positive-definite `a` by Cholesky
/// factorization with one round of iterative refinement.
///
/// Fails if the factorization breaks down or the relative residual
/// exceeds `1e-8`.
pub fn solve_spd(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(FamrError::DimensionMismatch {
            context: "linear system",
            expected: n,
            actual: b.len(),
        });
    }
    let rhs = DVector::from_column_slice(b);
    let chol = a.clone().cholesky().ok_or_else(|| FamrError::Singular {
        lambda_min: jacobi_eigen(a).map(|e| e.min()).unwrap_or(f64::NAN),
    })?;
    let mut x = chol.solve(&rhs);
    let r = &rhs - a * &x;
    x += chol.solve(&r);

    let residual = (&rhs - a * &x).norm();
    let scale = rhs.norm();
    if scale > 0.0 && residual > 1e-8 * scale {
        return Err(FamrError::NoConvergence(format!(
            "linear solve (relative residual {:e})",
            residual / scale
        )));
    }
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn diagonal_and_identity() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let e = jacobi_eigen(&d).unwrap();
        assert_eq!(e.min(), 1.0);
        assert_eq!(e.max(), 3.0);
        for n in [1, 4, 9] {
            let e = jacobi_eigen(&DMatrix::identity(n, n)).unwrap();
            assert!(e.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn matches_reference_eigensolver() {
        for seed in 0..5 {
            let a = random_symmetric(20, seed);
            let ours = jacobi_eigen(&a).unwrap();
            let mut reference: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            for (x, y) in ours.values.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
            let recon = ours.reconstruct();
            assert!((recon - &a).amax() < 1e-8);
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = jacobi_eigen(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spd_solve_residual() {
        let m = random_symmetric(12, 9);
        let a = &m * m.transpose() + DMatrix::identity(12, 12);
        let b: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let x = solve_spd(&a, &b).unwrap();
        let lu = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for (p, q) in x.iter().zip(lu.iter()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match solve_spd(&a, &[1.0, 1.0]) {
            Err(FamrError::Singular { lambda_min }) => assert_eq!(lambda_min, -1.0),
            other => panic!("expected singular error, got {other:?}"),
        }
    }
}
