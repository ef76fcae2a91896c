//! Dense linear-algebra helpers shared by the solvers.
//!
//! Everything works on `nalgebra::DMatrix<f64>`; the problem sizes here are
//! small (state dimension a handful, stacked systems at most a few thousand).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Inputs whose asymmetry is at most this are symmetrized, larger is an error.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted as "psd".
pub const PSD_TOL: f64 = 1e-10;
/// Stopping tolerance on `||P_{k+1} - P_k||_F` for fixed-point iterations.
pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 100_000;
/// Each doubling squares the contraction factor; 64 covers any factor below 1 - 1e-18.
pub const LYAPUNOV_MAX_DOUBLINGS: usize = 64;

pub fn max_asymmetry(m: &Mat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Returns `(m + m^T) / 2` if `m` is square and symmetric to [`SYMMETRY_TOL`].
pub fn symmetrize_checked(name: &'static str, m: &Mat) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asymmetry = max_asymmetry(m);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NonSymmetric { name, asymmetry });
    }
    Ok(symmetrize(m))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty matrix).
pub fn min_eigenvalue(sym: &Mat) -> f64 {
    if sym.is_empty() {
        return f64::INFINITY;
    }
    sym.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Operator 2-norm (largest singular value).
pub fn op_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest eigenvalue modulus. Falls back to Gelfand's formula on repeated
/// squares when the Schur iteration does not converge.
pub fn spectral_radius(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if let Some(schur) = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        return schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    gelfand_radius(m)
}

const SCHUR_MAX_ITER: usize = 10_000;

fn gelfand_radius(m: &Mat) -> f64 {
    let n0 = m.norm();
    if n0 == 0.0 {
        return 0.0;
    }
    let mut x = m / n0;
    let mut log_scale = n0.ln();
    let mut power = 1.0f64;
    for _ in 0..40 {
        let sq = &x * &x;
        let n = sq.norm();
        if n == 0.0 {
            return 0.0;
        }
        x = sq / n;
        log_scale = 2.0 * log_scale + n.ln();
        power *= 2.0;
    }
    (log_scale / power).exp()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// `n x n` matrix of ones.
pub fn ones(n: usize) -> Mat {
    Mat::from_element(n, n, 1.0)
}

pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// Outer product `v v^T` of a column vector.
pub fn outer(v: &Mat) -> Mat {
    v * v.transpose()
}

/// Which side the closed-loop matrix multiplies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovForm {
    /// `X = W + gamma * F^T X F` (value / cost-to-go matrices).
    Value,
    /// `X = W + gamma * F X F^T` (discounted state covariances).
    Covariance,
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub x: Mat,
    pub iterations: usize,
    pub residual: f64,
}

fn lyapunov_map(form: LyapunovForm, closed: &Mat, weight: &Mat, gamma: f64, x: &Mat) -> Mat {
    match form {
        LyapunovForm::Value => weight + (closed.transpose() * x * closed) * gamma,
        LyapunovForm::Covariance => weight + (closed * x * closed.transpose()) * gamma,
    }
}

/// Solves the discounted Stein equation by squaring (Smith doubling): with
/// `G = sqrt(gamma) F`, `X_{j+1} = X_j + G_j' X_j G_j` and `G_{j+1} = G_j^2`,
/// so `X_j` sums the first `2^j` terms of the series.
///
/// Converges whenever `gamma * rho(closed)^2 < 1`. Stops once the added term
/// satisfies `||dX||_F <= FIXED_POINT_TOL * (1 + ||X||_F)`.
pub fn solve_discounted_lyapunov(
    form: LyapunovForm,
    closed: &Mat,
    weight: &Mat,
    gamma: f64,
    what: &str,
) -> Result<LyapunovSolution> {
    let n = weight.nrows();
    if closed.nrows() != n || closed.ncols() != n || weight.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what}: closed loop {}x{} vs weight {}x{}",
            closed.nrows(),
            closed.ncols(),
            weight.nrows(),
            weight.ncols()
        )));
    }
    let mut g = closed * gamma.sqrt();
    let mut x = weight.clone();
    for it in 1..=LYAPUNOV_MAX_DOUBLINGS {
        let added = match form {
            LyapunovForm::Value => g.transpose() * &x * &g,
            LyapunovForm::Covariance => &g * &x * g.transpose(),
        };
        let delta = added.norm();
        x += added;
        if !delta.is_finite() || !x.norm().is_finite() {
            return Err(Error::numerics(format!("{what}: series diverges"), delta));
        }
        if delta <= FIXED_POINT_TOL * (1.0 + x.norm()) {
            let x = symmetrize(&x);
            let residual = (lyapunov_map(form, closed, weight, gamma, &x) - &x).norm();
            return Ok(LyapunovSolution {
                x,
                iterations: it,
                residual,
            });
        }
        g = &g * &g;
    }
    let residual = (lyapunov_map(form, closed, weight, gamma, &x) - &x).norm();
    Err(Error::numerics(
        format!("{what}: no convergence in {LYAPUNOV_MAX_DOUBLINGS} doublings"),
        residual,
    ))
}

#[derive(Debug, Clone)]
pub struct RiccatiFixedPoint {
    pub p: Mat,
    /// Greedy gain `K = gamma (R + gamma B^T P B)^{-1} B^T P A`, so `u = -K x`.
    pub gain: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// Value iteration for the discounted algebraic Riccati equation
/// `P = Q + gamma A^T P A - gamma^2 A^T P B (R + gamma B^T P B)^{-1} B^T P A`,
/// started at `P = 0`.
pub fn solve_discounted_riccati(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    gamma: f64,
    what: &str,
) -> Result<RiccatiFixedPoint> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!("{what}: inconsistent Riccati data")));
    }
    let step = |p: &Mat| -> Result<(Mat, Mat)> {
        let inner = r + (b.transpose() * p * b) * gamma;
        let rhs = (b.transpose() * p * a) * gamma;
        let gain = inner
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerics(format!("{what}: singular R + gamma B^T P B"), f64::NAN))?;
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerics(
                format!("{what}: singular R + gamma B^T P B"),
                f64::NAN,
            ));
        }
        // P = Q + gamma A^T P A - (gamma A^T P B) K
        let next = q + (a.transpose() * p * a) * gamma - (rhs.transpose() * &gain);
        Ok((symmetrize(&next), gain))
    };
    let mut p = Mat::zeros(n, n);
    for it in 1..=FIXED_POINT_MAX_ITER {
        let (next, _) = step(&p)?;
        let delta = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        if !delta.is_finite() {
            return Err(Error::numerics(what, delta));
        }
        if delta <= FIXED_POINT_TOL * (1.0 + scale) {
            let (again, gain) = step(&p)?;
            let residual = (again - &p).norm();
            return Ok(RiccatiFixedPoint {
                p,
                gain,
                iterations: it,
                residual,
            });
        }
    }
    let (again, _) = step(&p)?;
    Err(Error::numerics(
        format!("{what}: no convergence in {FIXED_POINT_MAX_ITER} iterations"),
        (again - &p).norm(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_rejects_large_asymmetry() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            symmetrize_checked("Q", &m),
            Err(Error::NonSymmetric { name: "Q", .. })
        ));
        let tiny = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-12, 1.0]);
        let s = symmetrize_checked("Q", &tiny).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn op_norm_of_rotation_is_one() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let m = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((op_norm(&m) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gelfand_matches_eigenvalues() {
        let m = Mat::from_row_slice(3, 3, &[0.5, 2.0, 0.0, 0.0, -0.7, 1.0, 0.0, 0.0, 0.2]);
        assert!((spectral_radius(&m) - 0.7).abs() < 1e-12);
        assert!((gelfand_radius(&m) - 0.7).abs() < 1e-6);
        let nil = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(gelfand_radius(&nil), 0.0);
    }

    #[test]
    fn scalar_lyapunov_is_geometric_series() {
        let f = Mat::from_element(1, 1, 0.5);
        let w = Mat::from_element(1, 1, 1.0);
        let sol = solve_discounted_lyapunov(LyapunovForm::Value, &f, &w, 0.9, "test").unwrap();
        assert!((sol.x[(0, 0)] - 1.0 / (1.0 - 0.225)).abs() < 1e-10);
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn block_diag_layout() {
        let a = Mat::from_element(1, 2, 1.0);
        let b = Mat::from_element(2, 1, 2.0);
        let d = block_diag(&a, &b);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 2)], 0.0);
        assert_eq!(d[(2, 2)], 2.0);
        assert_eq!(d[(1, 0)], 0.0);
    }
}
