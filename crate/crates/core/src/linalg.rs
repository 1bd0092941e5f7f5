//! Small dense linear algebra used by the lift matrix and the vortex-lattice solver.

use ndarray::{Array2, ArrayView2};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Pivot threshold below which a Cholesky factorization is declared rank deficient.
pub const CHOLESKY_PIVOT_MIN: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > CHOLESKY_PIVOT_MIN) {
            return Err(Error::RankDeficient { pivot: d });
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` in place given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * b[[k, c]];
            }
            b[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * b[[k, c]];
            }
            b[[i, c]] = s / l[[i, i]];
        }
    }
}

/// Moore-Penrose pseudo-inverse `(AᵀA)⁻¹Aᵀ` of a full-column-rank matrix via
/// the normal equations.
pub fn pseudo_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let gram = a.t().dot(&a);
    let l = cholesky(gram.view())?;
    let mut x = a.t().to_owned();
    cholesky_solve(&l, &mut x);
    Ok(x)
}

/// Smallest singular value of a tall matrix, from the eigenvalues of `AᵀA`
/// (cyclic Jacobi; intended for the small `n` of a lift matrix).
pub fn min_singular_value(a: ArrayView2<f64>) -> f64 {
    let mut g = a.t().dot(&a);
    let n = g.nrows();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += g[[p, q]] * g[[p, q]];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = g[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (g[[q, q]] - g[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let gkp = g[[k, p]];
                    let gkq = g[[k, q]];
                    g[[k, p]] = c * gkp - s * gkq;
                    g[[k, q]] = s * gkp + c * gkq;
                }
                for k in 0..n {
                    let gpk = g[[p, k]];
                    let gqk = g[[q, k]];
                    g[[p, k]] = c * gpk - s * gqk;
                    g[[q, k]] = s * gpk + c * gqk;
                }
            }
        }
    }
    (0..n).map(|i| g[[i, i]]).fold(f64::INFINITY, f64::min).max(0.0).sqrt()
}

/// Solves the dense square system `M x = b` by Gaussian elimination with
/// partial pivoting (pivoting on the real part). `m` is row-major `n×n`.
pub fn lu_solve<T: Scalar>(mut m: Vec<T>, mut b: Vec<T>, pivot_min: f64) -> Result<Vec<T>> {
    let n = b.len();
    debug_assert_eq!(m.len(), n * n);
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, m[r * n + col].real().abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(best > pivot_min) {
            return Err(Error::Singular { pivot: best });
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let inv = m[col * n + col].recip();
        for r in col + 1..n {
            let factor = m[r * n + col] * inv;
            for c in col + 1..n {
                let v = m[col * n + c];
                m[r * n + c] -= factor * v;
            }
            let bc = b[col];
            b[r] -= factor * bc;
        }
    }
    let mut x = b;
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= m[r * n + c] * x[c];
        }
        x[r] = s / m[r * n + r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use ndarray::array;

    #[test]
    fn pinv_of_scaled_identity_lift() {
        let a = array![[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
        let p = pseudo_inverse(a.view()).unwrap();
        assert_eq!(p, array![[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]]);
    }

    #[test]
    fn rank_deficient_detected() {
        let a = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        assert!(matches!(pseudo_inverse(a.view()), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn min_singular_value_of_diagonal() {
        let a = array![[3.0, 0.0], [0.0, 0.5], [0.0, 0.0]];
        assert!((min_singular_value(a.view()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lu_solves_dual_system() {
        // M(s) = [[2+s, 1], [1, 3]], b = [1, 2]; check x and dx/ds at s = 0
        let m = vec![Dual::new(2.0, 1.0), Dual::constant(1.0), Dual::constant(1.0), Dual::constant(3.0)];
        let b = vec![Dual::constant(1.0), Dual::constant(2.0)];
        let x = lu_solve(m, b, 1e-14).unwrap();
        assert!((x[0].value - 0.2).abs() < 1e-14);
        assert!((x[1].value - 0.6).abs() < 1e-14);
        // dx = -M⁻¹ dM x, dM = e11 → dx = -M⁻¹ [x0, 0]
        assert!((x[0].deriv + 0.6 * 0.2).abs() < 1e-14);
        assert!((x[1].deriv - 0.2 * 0.2).abs() < 1e-14);
    }
}
