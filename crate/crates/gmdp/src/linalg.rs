//! Small dense complex matrix routines (LU with partial pivoting).
//!
//! The matrices handled here are per-frequency demixing/covariance matrices,
//! so the dimension is the channel count (typically 2-4). A hand-rolled LU
//! keeps the crate free of external BLAS/LAPACK linkage.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// LU factorization of a square complex matrix with partial pivoting.
pub(crate) struct Lu {
    lu: Array2<Complex64>,
    pivots: Vec<usize>,
    swaps: usize,
    /// Largest entry magnitude of the input, used for relative singularity checks.
    scale: f64,
    singular: bool,
}

/// Pivots smaller than `scale * SINGULAR_REL_TOL` are treated as zero. Kept
/// near machine epsilon: rank-deficient inputs (zero rows/columns) produce
/// exactly zero pivots, while merely ill-conditioned systems stay solvable
/// and are judged by the caller via the condition estimate.
const SINGULAR_REL_TOL: f64 = 1e-15;

impl Lu {
    pub fn factor(a: &Array2<Complex64>) -> Self {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut lu = a.clone();
        let mut pivots = Vec::with_capacity(n);
        let mut swaps = 0;
        let scale = a.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let mut singular = scale == 0.0;

        for col in 0..n {
            // Select the largest remaining pivot in this column.
            let mut best = col;
            let mut best_mag = lu[[col, col]].norm();
            for row in col + 1..n {
                let mag = lu[[row, col]].norm();
                if mag > best_mag {
                    best = row;
                    best_mag = mag;
                }
            }
            if best != col {
                for j in 0..n {
                    lu.swap([col, j], [best, j]);
                }
                swaps += 1;
            }
            pivots.push(best);
            if best_mag <= scale * SINGULAR_REL_TOL {
                singular = true;
                continue;
            }
            let pivot = lu[[col, col]];
            for row in col + 1..n {
                let factor = lu[[row, col]] / pivot;
                lu[[row, col]] = factor;
                for j in col + 1..n {
                    let sub = factor * lu[[col, j]];
                    lu[[row, j]] -= sub;
                }
            }
        }

        Lu { lu, pivots, swaps, scale, singular }
    }

    /// Solve `A x = b`. Returns `None` when the factorization is singular.
    pub fn solve(&self, b: &Array1<Complex64>) -> Option<Array1<Complex64>> {
        if self.singular {
            return None;
        }
        let n = self.lu.nrows();
        let mut x = b.clone();
        for col in 0..n {
            let p = self.pivots[col];
            if p != col {
                x.swap(col, p);
            }
        }
        // Forward substitution with unit lower triangle.
        for row in 1..n {
            for col in 0..row {
                let sub = self.lu[[row, col]] * x[col];
                x[row] -= sub;
            }
        }
        // Back substitution.
        for row in (0..n).rev() {
            for col in row + 1..n {
                let sub = self.lu[[row, col]] * x[col];
                x[row] -= sub;
            }
            x[row] /= self.lu[[row, row]];
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Array2<Complex64>> {
        if self.singular {
            return None;
        }
        let n = self.lu.nrows();
        let mut inv = Array2::zeros((n, n));
        for col in 0..n {
            let mut e = Array1::zeros(n);
            e[col] = Complex64::new(1.0, 0.0);
            let x = self.solve(&e)?;
            for row in 0..n {
                inv[[row, col]] = x[row];
            }
        }
        Some(inv)
    }

    pub fn det(&self) -> Complex64 {
        if self.singular && self.scale == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let n = self.lu.nrows();
        let mut det = Complex64::new(if self.swaps % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
        for i in 0..n {
            det *= self.lu[[i, i]];
        }
        det
    }
}

pub(crate) fn frobenius_norm(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Frobenius condition estimate `‖A‖_F · ‖A⁻¹‖_F`.
///
/// Upper-bounds the 2-norm condition number, so a matrix passing a bound
/// check here is guaranteed well-conditioned in the 2-norm sense. Returns
/// `f64::INFINITY` for singular input.
pub(crate) fn condition_estimate(a: &Array2<Complex64>) -> f64 {
    let lu = Lu::factor(a);
    match lu.inverse() {
        Some(inv) => frobenius_norm(a) * frobenius_norm(&inv),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = array![[c(2.0, 1.0), c(0.5, -0.3)], [c(-1.0, 0.0), c(3.0, 2.0)]];
        let x_true = Array1::from(vec![c(1.5, -0.5), c(0.25, 2.0)]);
        let b = a.dot(&x_true);
        let x = Lu::factor(&a).solve(&b).unwrap();
        for i in 0..2 {
            assert!((x[i] - x_true[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = array![
            [c(1.0, 0.2), c(0.1, -0.4), c(0.3, 0.0)],
            [c(0.0, 1.1), c(2.0, 0.0), c(-0.2, 0.5)],
            [c(0.7, 0.0), c(0.4, 0.4), c(1.5, -1.0)]
        ];
        let inv = Lu::factor(&a).inverse().unwrap();
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn det_of_triangular_is_diagonal_product() {
        let a = array![[c(2.0, 0.0), c(5.0, 1.0)], [c(0.0, 0.0), c(3.0, 0.0)]];
        let det = Lu::factor(&a).det();
        assert!((det - c(6.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_detected() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(2.0, 0.0), c(4.0, 0.0)]];
        let lu = Lu::factor(&a);
        assert!(lu.solve(&Array1::from(vec![c(1.0, 0.0), c(0.0, 0.0)])).is_none());
        assert!(condition_estimate(&a).is_infinite());
    }

    #[test]
    fn condition_of_identity_is_dimension() {
        let eye = Array2::from_diag(&Array1::from(vec![c(1.0, 0.0); 4]));
        assert!((condition_estimate(&eye) - 4.0).abs() < 1e-12);
    }
}
