//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Used only by the pooling diagnostics (never on a training path), where
//! matrices are small (f <= 64) and robustness matters more than speed.
//! Follows the classic Numerical Recipes formulation with the stable
//! rotation parameterization t = sign(theta)/(|theta| + sqrt(1+theta^2)).

use alloc::vec::Vec;

use crate::linalg::Mat;

/// Jacobi sweeps did not push the off-diagonal mass below tolerance.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("Jacobi eigensolver did not converge in {sweeps} sweeps (off-diagonal {offdiag:.3e})")]
pub struct JacobiError {
    pub sweeps: usize,
    pub offdiag: f64,
}

/// Eigendecomposition `a = U diag(lambda) U^T` of a symmetric matrix.
///
/// Returns eigenvalues in descending order with matching eigenvector
/// columns in `u`. The input is only read; asymmetry beyond round-off is
/// a programming error and is asserted against.
pub fn eigh(a: &Mat) -> Result<(Vec<f64>, Mat), JacobiError> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "eigh needs a square matrix");
    for i in 0..n {
        for j in i + 1..n {
            debug_assert!(
                libm::fabs(a[(i, j)] - a[(j, i)]) <= 1e-9 * (1.0 + a.max_abs()),
                "eigh input must be symmetric"
            );
        }
    }
    const MAX_SWEEPS: usize = 60;
    let scale = a.max_abs().max(1.0);
    let tol = 1e-15 * scale;

    let mut m = a.clone();
    let mut u = Mat::identity(n);
    let mut lambda: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();

    if n <= 1 {
        return Ok((lambda, u));
    }

    let mut sweeps = 0;
    loop {
        let mut offdiag = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                offdiag += libm::fabs(m[(p, q)]);
            }
        }
        if offdiag <= tol {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(JacobiError { sweeps, offdiag });
        }
        sweeps += 1;

        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if libm::fabs(apq) <= tol / (n * n) as f64 {
                    continue;
                }
                let diff = m[(q, q)] - m[(p, p)];
                // theta = cot(2*phi); the parameterization below never
                // overflows: theta -> +-inf collapses to a no-op rotation.
                let theta = 0.5 * diff / apq;
                let t = {
                    let tt = 1.0 / (libm::fabs(theta) + libm::sqrt(1.0 + theta * theta));
                    if theta < 0.0 {
                        -tt
                    } else {
                        tt
                    }
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                let tau = s / (1.0 + c);

                let h = t * apq;
                m[(p, p)] -= h;
                m[(q, q)] += h;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;

                // rotate remaining entries, keeping m symmetric
                for j in 0..n {
                    if j == p || j == q {
                        continue;
                    }
                    let g = m[(j, p)];
                    let hh = m[(j, q)];
                    m[(j, p)] = g - s * (hh + g * tau);
                    m[(p, j)] = m[(j, p)];
                    m[(j, q)] = hh + s * (g - hh * tau);
                    m[(q, j)] = m[(j, q)];
                }
                for j in 0..n {
                    let g = u[(j, p)];
                    let hh = u[(j, q)];
                    u[(j, p)] = g - s * (hh + g * tau);
                    u[(j, q)] = hh + s * (g - hh * tau);
                }
            }
        }
    }

    for i in 0..n {
        lambda[i] = m[(i, i)];
    }

    // sort descending, carrying eigenvector columns along
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lambda[j].total_cmp(&lambda[i]));
    let sorted: Vec<f64> = order.iter().map(|&i| lambda[i]).collect();
    let mut usorted = Mat::zeros(n, n);
    for (newc, &oldc) in order.iter().enumerate() {
        for r in 0..n {
            usorted[(r, newc)] = u[(r, oldc)];
        }
    }
    Ok((sorted, usorted))
}
