//! Small dense symmetric factorizations shared by the least-squares and
//! log-determinant code paths.

use nalgebra::{DMatrix, DVector};

/// `A = L D Lᵀ` with unit lower-triangular `L`, no pivoting.
///
/// Factorization always runs to completion; callers inspect [`Ldl::pivots`]
/// and decide whether the matrix was acceptable.
#[derive(Debug, Clone)]
pub struct Ldl {
    lower: DMatrix<f64>,
    pivots: Vec<f64>,
}

impl Ldl {
    pub fn factor(a: &DMatrix<f64>) -> Ldl {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut lower = DMatrix::<f64>::identity(n, n);
        let mut pivots = vec![0.0; n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                d -= lower[(j, p)] * lower[(j, p)] * pivots[p];
            }
            pivots[j] = d;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for p in 0..j {
                    v -= lower[(i, p)] * lower[(j, p)] * pivots[p];
                }
                lower[(i, j)] = v / d;
            }
        }
        Ldl { lower, pivots }
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    /// True when some pivot is non-finite or below `rel` times the largest pivot.
    pub fn is_singular(&self, rel: f64) -> bool {
        let max = self.pivots.iter().cloned().fold(0.0_f64, f64::max);
        self.pivots.iter().any(|&d| !d.is_finite() || d <= rel * max || d <= 0.0)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in 0..n {
            for p in 0..i {
                x[i] -= self.lower[(i, p)] * x[p];
            }
        }
        for i in 0..n {
            x[i] /= self.pivots[i];
        }
        for i in (0..n).rev() {
            for p in (i + 1)..n {
                x[i] -= self.lower[(p, i)] * x[p];
            }
        }
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let ldl = Ldl::factor(&a);
        let x = ldl.solve(&b);
        assert!((&a * &x - &b).norm() < 1e-12);
        let det: f64 = ldl.pivots().iter().product();
        assert!((det - a.determinant()).abs() < 1e-12);
        assert!((&a * ldl.inverse() - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn flags_rank_deficiency() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Ldl::factor(&a).is_singular(1e-12));
    }
}
