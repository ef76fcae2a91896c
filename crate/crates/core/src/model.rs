//! The mean-field LQ problem: coefficients, noise laws, standing-assumption
//! checks, admissibility of linear feedbacks and the augmented `(y, z)` system.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, min_eigenvalue, op_norm, outer, symmetrize_checked, Mat, PSD_TOL};

/// Law of one noise source.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// `N(mean, cov)`; `factor` satisfies `factor * factor^T = cov`.
    Gaussian { mean: Vec<f64>, cov: Mat, factor: Mat },
    /// Independent coordinates, coordinate `i` uniform on `[lower[i], upper[i]]`.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    /// Constant vector.
    Degenerate { value: Vec<f64> },
}

impl NoiseSpec {
    pub fn gaussian(mean: Vec<f64>, cov: Mat) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "gaussian covariance is {}x{}, mean has length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let cov = symmetrize_checked("noise covariance", &cov)?;
        let eig = cov.clone().symmetric_eigen();
        let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if d > 0 && lmin < -PSD_TOL {
            return Err(Error::Validation(format!(
                "gaussian covariance is not psd (min eigenvalue {lmin:.3e})"
            )));
        }
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = &eig.eigenvectors * Mat::from_diagonal(&sqrt_vals);
        Ok(NoiseSpec::Gaussian { mean, cov, factor })
    }

    /// Gaussian parametrised by a square-root factor `F` (covariance `F F^T`).
    /// For a scalar this is the standard deviation.
    pub fn gaussian_from_factor(mean: Vec<f64>, factor: Mat) -> Result<Self> {
        let cov = &factor * factor.transpose();
        Self::gaussian(mean, cov)
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("uniform bounds of different lengths".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Validation(format!(
                "uniform bounds require lower <= upper (coordinate {i}: {} > {})",
                lower[i], upper[i]
            )));
        }
        Ok(NoiseSpec::Uniform { lower, upper })
    }

    pub fn degenerate(value: Vec<f64>) -> Self {
        NoiseSpec::Degenerate { value }
    }

    pub fn zero(dim: usize) -> Self {
        NoiseSpec::Degenerate {
            value: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseSpec::Gaussian { mean, .. } => mean.len(),
            NoiseSpec::Uniform { lower, .. } => lower.len(),
            NoiseSpec::Degenerate { value } => value.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::Uniform { .. } => "uniform",
            NoiseSpec::Degenerate { .. } => "degenerate",
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            NoiseSpec::Gaussian { mean, .. } => mean.clone(),
            NoiseSpec::Uniform { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
            NoiseSpec::Degenerate { value } => value.clone(),
        }
    }

    /// Mean as a `d x 1` matrix.
    pub fn mean_col(&self) -> Mat {
        let m = self.mean();
        Mat::from_column_slice(m.len(), 1, &m)
    }

    pub fn covariance(&self) -> Mat {
        match self {
            NoiseSpec::Gaussian { cov, .. } => cov.clone(),
            NoiseSpec::Uniform { lower, upper } => {
                let d = lower.len();
                let mut c = Mat::zeros(d, d);
                for i in 0..d {
                    let w = upper[i] - lower[i];
                    c[(i, i)] = w * w / 12.0;
                }
                c
            }
            NoiseSpec::Degenerate { value } => Mat::zeros(value.len(), value.len()),
        }
    }

    /// `E[e e^T] = Cov + mean mean^T`.
    pub fn second_moment(&self) -> Mat {
        self.covariance() + outer(&self.mean_col())
    }

    /// Writes one draw into `out` (length must equal `dim()`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            NoiseSpec::Gaussian { mean, factor, .. } => {
                let d = mean.len();
                if d == 1 {
                    let z: f64 = rng.sample(StandardNormal);
                    out[0] = mean[0] + factor[(0, 0)] * z;
                    return;
                }
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..d {
                    let mut acc = mean[i];
                    for (j, zj) in z.iter().enumerate() {
                        acc += factor[(i, j)] * zj;
                    }
                    out[i] = acc;
                }
            }
            NoiseSpec::Uniform { lower, upper } => {
                for i in 0..lower.len() {
                    let u: f64 = rng.random();
                    out[i] = lower[i] + (upper[i] - lower[i]) * u;
                }
            }
            NoiseSpec::Degenerate { value } => out.copy_from_slice(value),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// The four noise sources: initial common/idiosyncratic and per-step
/// common/idiosyncratic.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSuite {
    pub eps0_init: NoiseSpec,
    pub eps1_init: NoiseSpec,
    pub eps0_step: NoiseSpec,
    pub eps1_step: NoiseSpec,
}

impl NoiseSuite {
    pub fn new(
        eps0_init: NoiseSpec,
        eps1_init: NoiseSpec,
        eps0_step: NoiseSpec,
        eps1_step: NoiseSpec,
    ) -> Result<Self> {
        let d = eps0_init.dim();
        for (name, s) in [
            ("eps1_init", &eps1_init),
            ("eps0_step", &eps0_step),
            ("eps1_step", &eps1_step),
        ] {
            if s.dim() != d {
                return Err(Error::Dimension(format!(
                    "{name} has dimension {}, eps0_init has {d}",
                    s.dim()
                )));
            }
        }
        for (name, s) in [("eps0_step", &eps0_step), ("eps1_step", &eps1_step)] {
            if s.mean().iter().any(|&m| m != 0.0) {
                return Err(Error::Validation(format!(
                    "step noise {name} must have mean exactly zero"
                )));
            }
        }
        Ok(NoiseSuite {
            eps0_init,
            eps1_init,
            eps0_step,
            eps1_step,
        })
    }

    pub fn dim(&self) -> usize {
        self.eps0_init.dim()
    }

    /// `Cov(y_0) = Cov(eps1_0)`.
    pub fn sigma_y0(&self) -> Mat {
        self.eps1_init.covariance()
    }

    /// `Cov(z_0) = Cov(eps0_0)`.
    pub fn sigma_z0(&self) -> Mat {
        self.eps0_init.covariance()
    }

    /// `E[z_0 z_0^T]` with `z_0 = eps0_0 + E[eps1_0]`.
    pub fn z0_second_moment(&self) -> Mat {
        let m = self.eps0_init.mean_col() + self.eps1_init.mean_col();
        self.eps0_init.covariance() + outer(&m)
    }

    /// `E[eps1_t eps1_t^T]` for `t >= 1`.
    pub fn sigma1(&self) -> Mat {
        self.eps1_step.covariance()
    }

    /// `E[eps0_t eps0_t^T]` for `t >= 1`.
    pub fn sigma0(&self) -> Mat {
        self.eps0_step.covariance()
    }

    /// Bound on the operator norms of the four second-moment matrices.
    pub fn c0_var(&self) -> f64 {
        [
            self.sigma_y0(),
            self.z0_second_moment(),
            self.sigma1(),
            self.sigma0(),
        ]
        .iter()
        .map(op_norm)
        .fold(0.0, f64::max)
    }
}

/// Dynamics and cost matrices. `A, A_bar: d x d`, `B, B_bar: d x l`,
/// `Q, Q_bar: d x d`, `R, R_bar: l x l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: Mat,
    pub a_bar: Mat,
    pub b: Mat,
    pub b_bar: Mat,
    pub q: Mat,
    pub q_bar: Mat,
    pub r: Mat,
    pub r_bar: Mat,
}

impl Coefficients {
    /// One-dimensional state and control.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(a: f64, a_bar: f64, b: f64, b_bar: f64, q: f64, q_bar: f64, r: f64, r_bar: f64) -> Self {
        let s = |v| Mat::from_element(1, 1, v);
        Coefficients {
            a: s(a),
            a_bar: s(a_bar),
            b: s(b),
            b_bar: s(b_bar),
            q: s(q),
            q_bar: s(q_bar),
            r: s(r),
            r_bar: s(r_bar),
        }
    }
}

/// How a scalar Gaussian parameter in the experiment table is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianReading {
    /// `N(0, 0.01)` means variance 0.01.
    Variance,
    /// `N(0, 0.01)` means standard deviation 0.01.
    StdDev,
}

/// A validated mean-field LQ model. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MfcModel {
    pub a: Mat,
    pub a_bar: Mat,
    pub b: Mat,
    pub b_bar: Mat,
    pub q: Mat,
    pub q_bar: Mat,
    pub r: Mat,
    pub r_bar: Mat,
    pub gamma: f64,
    pub noise: NoiseSuite,
}

impl MfcModel {
    /// Checks dimensions and `0 <= gamma < 1`, and symmetrizes `Q, Q_bar, R,
    /// R_bar` (error if their asymmetry exceeds the tolerance). Positivity is
    /// reported by [`validate_model`], not enforced here.
    pub fn new(c: Coefficients, gamma: f64, noise: NoiseSuite) -> Result<Self> {
        let d = c.a.nrows();
        let l = c.b.ncols();
        let shape_ok = c.a.shape() == (d, d)
            && c.a_bar.shape() == (d, d)
            && c.b.shape() == (d, l)
            && c.b_bar.shape() == (d, l)
            && c.q.shape() == (d, d)
            && c.q_bar.shape() == (d, d)
            && c.r.shape() == (l, l)
            && c.r_bar.shape() == (l, l);
        if !shape_ok || d == 0 || l == 0 {
            return Err(Error::Dimension(format!(
                "inconsistent coefficient shapes for d={d}, l={l}"
            )));
        }
        if noise.dim() != d {
            return Err(Error::Dimension(format!(
                "noise dimension {} does not match state dimension {d}",
                noise.dim()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Validation(format!("discount {gamma} not in [0, 1)")));
        }
        Ok(MfcModel {
            q: symmetrize_checked("Q", &c.q)?,
            q_bar: symmetrize_checked("Q_bar", &c.q_bar)?,
            r: symmetrize_checked("R", &c.r)?,
            r_bar: symmetrize_checked("R_bar", &c.r_bar)?,
            a: c.a,
            a_bar: c.a_bar,
            b: c.b,
            b_bar: c.b_bar,
            gamma,
            noise,
        })
    }

    /// The one-dimensional experiment: all coefficients 0.5, `gamma = 0.9`,
    /// `U([-1,1])` initial noises and `N(0, 0.01)` step noises.
    pub fn scalar_reference(reading: GaussianReading) -> Self {
        let step = match reading {
            GaussianReading::Variance => {
                NoiseSpec::gaussian(vec![0.0], Mat::from_element(1, 1, 0.01))
            }
            GaussianReading::StdDev => {
                NoiseSpec::gaussian_from_factor(vec![0.0], Mat::from_element(1, 1, 0.01))
            }
        }
        .expect("valid gaussian");
        let init = NoiseSpec::uniform(vec![-1.0], vec![1.0]).expect("valid bounds");
        let noise = NoiseSuite::new(init.clone(), init, step.clone(), step).expect("valid suite");
        MfcModel::new(
            Coefficients::scalar(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5),
            0.9,
            noise,
        )
        .expect("valid model")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Shape `(l, d)` of each gain block.
    pub fn k_shape(&self) -> (usize, usize) {
        (self.control_dim(), self.state_dim())
    }

    pub fn a_sum(&self) -> Mat {
        &self.a + &self.a_bar
    }

    pub fn b_sum(&self) -> Mat {
        &self.b + &self.b_bar
    }

    pub fn q_sum(&self) -> Mat {
        &self.q + &self.q_bar
    }

    pub fn r_sum(&self) -> Mat {
        &self.r + &self.r_bar
    }

    /// `A - B K`.
    pub fn closed_loop_y(&self, k: &Mat) -> Mat {
        &self.a - &self.b * k
    }

    /// `A + A_bar - (B + B_bar) L`.
    pub fn closed_loop_z(&self, l: &Mat) -> Mat {
        self.a_sum() - self.b_sum() * l
    }

    /// `max{gamma, gamma ||A-BK||^2, gamma ||A+A_bar-(B+B_bar)L||^2}`.
    pub fn gamma_theta(&self, theta: &ControlParams) -> f64 {
        let gy = self.gamma * op_norm(&self.closed_loop_y(&theta.k)).powi(2);
        let gz = self.gamma * op_norm(&self.closed_loop_z(&theta.l)).powi(2);
        self.gamma.max(gy).max(gz)
    }
}

/// Linear feedback `u = -K (x - x_bar) - L x_bar`; both blocks are `l x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub k: Mat,
    pub l: Mat,
}

impl ControlParams {
    pub fn new(k: Mat, l: Mat) -> Self {
        ControlParams { k, l }
    }

    pub fn zeros(model: &MfcModel) -> Self {
        let (l, d) = (model.control_dim(), model.state_dim());
        ControlParams {
            k: Mat::zeros(l, d),
            l: Mat::zeros(l, d),
        }
    }

    pub fn scalar(k: f64, l: f64) -> Self {
        ControlParams {
            k: Mat::from_element(1, 1, k),
            l: Mat::from_element(1, 1, l),
        }
    }

    pub fn check_dims(&self, model: &MfcModel) -> Result<()> {
        let want = (model.control_dim(), model.state_dim());
        if self.k.shape() != want || self.l.shape() != want {
            return Err(Error::Dimension(format!(
                "control blocks must be {}x{}, got K {:?} and L {:?}",
                want.0,
                want.1,
                self.k.shape(),
                self.l.shape()
            )));
        }
        Ok(())
    }

    /// `||K||_F^2 + ||L||_F^2` under the square root.
    pub fn norm(&self) -> f64 {
        (self.k.norm_squared() + self.l.norm_squared()).sqrt()
    }
}

/// Block-diagonal description of the `(y, z)` system for a given `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    pub k: Mat,
    pub gamma_theta: Mat,
}

/// Builds `diag(A, A+A_bar)`, `diag(B, B+B_bar)`, `diag(Q, Q+Q_bar)`,
/// `diag(R, R+R_bar)`, `diag(K, L)` and `Gamma = Q + K^T R K` (all block
/// matrices). The second input block carries `B + B_bar` so that
/// `A - B K` reproduces the `z` closed loop.
pub fn augment(model: &MfcModel, theta: &ControlParams) -> Result<AugmentedSystem> {
    theta.check_dims(model)?;
    let a = block_diag(&model.a, &model.a_sum());
    let b = block_diag(&model.b, &model.b_sum());
    let q = block_diag(&model.q, &model.q_sum());
    let r = block_diag(&model.r, &model.r_sum());
    let k = block_diag(&theta.k, &theta.l);
    // Block products keep the off-diagonal blocks at exact zeros.
    let gy = &model.q + theta.k.transpose() * &model.r * &theta.k;
    let gz = model.q_sum() + theta.l.transpose() * model.r_sum() * &theta.l;
    let gamma_theta = block_diag(&gy, &gz);
    Ok(AugmentedSystem {
        a,
        b,
        q,
        r,
        k,
        gamma_theta,
    })
}

/// Whether `gamma ||A-BK||^2 < 1` and `gamma ||A+A_bar-(B+B_bar)L||^2 < 1`.
/// Boundary points count as inadmissible.
pub fn is_admissible(model: &MfcModel, theta: &ControlParams) -> bool {
    if theta.check_dims(model).is_err() {
        return false;
    }
    k_admissible(model, &theta.k) && l_admissible(model, &theta.l)
}

pub(crate) fn k_admissible(model: &MfcModel, k: &Mat) -> bool {
    model.gamma * op_norm(&model.closed_loop_y(k)).powi(2) < 1.0
}

pub(crate) fn l_admissible(model: &MfcModel, l: &Mat) -> bool {
    model.gamma * op_norm(&model.closed_loop_z(l)).powi(2) < 1.0
}

pub(crate) fn require_admissible(model: &MfcModel, theta: &ControlParams) -> Result<()> {
    theta.check_dims(model)?;
    let gy = model.gamma * op_norm(&model.closed_loop_y(&theta.k)).powi(2);
    let gz = model.gamma * op_norm(&model.closed_loop_z(&theta.l)).powi(2);
    if gy < 1.0 && gz < 1.0 {
        Ok(())
    } else {
        Err(Error::Admissibility(format!(
            "gamma*||A-BK||^2 = {gy:.6}, gamma*||A+A_bar-(B+B_bar)L||^2 = {gz:.6}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenCheck {
    pub name: &'static str,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Positivity of `Q`, `Q+Q_bar`, `R`, `R+R_bar`.
    pub positivity: Vec<EigenCheck>,
    /// `max{lambda_min(Sigma_y0), lambda_min(Sigma^1)}`.
    pub nondegeneracy_y: f64,
    /// `max{lambda_min(Sigma_z0), lambda_min(Sigma^0)}`.
    pub nondegeneracy_z: f64,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn positivity_ok(&self) -> bool {
        self.positivity.iter().all(|c| c.pass)
    }

    pub fn nondegenerate(&self) -> bool {
        self.nondegeneracy_y > PSD_TOL && self.nondegeneracy_z > PSD_TOL
    }

    /// The model may be solved only if the positivity assumption holds.
    pub fn usable(&self) -> bool {
        self.positivity_ok()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "cost positivity (Q, Q+Q_bar, R, R+R_bar psd): {}",
            if self.positivity_ok() { "pass" } else { "FAIL" }
        )?;
        for c in &self.positivity {
            writeln!(
                f,
                "  {:<8} lambda_min = {:+.6e}  {}",
                c.name,
                c.min_eigenvalue,
                if c.pass { "ok" } else { "FAIL" }
            )?;
        }
        writeln!(
            f,
            "noise non-degeneracy: {}",
            if self.nondegenerate() { "pass" } else { "warning" }
        )?;
        writeln!(f, "  y side max lambda_min = {:.6e}", self.nondegeneracy_y)?;
        writeln!(f, "  z side max lambda_min = {:.6e}", self.nondegeneracy_z)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Checks the standing assumptions. Positivity failures make the model
/// unusable; noise degeneracy only produces a warning.
pub fn validate_model(model: &MfcModel) -> Result<ValidationReport> {
    let mut positivity = Vec::with_capacity(4);
    for (name, m) in [
        ("Q", model.q.clone()),
        ("Q+Q_bar", model.q_sum()),
        ("R", model.r.clone()),
        ("R+R_bar", model.r_sum()),
    ] {
        let sym = symmetrize_checked(name, &m)?;
        let lmin = min_eigenvalue(&sym);
        positivity.push(EigenCheck {
            name,
            min_eigenvalue: lmin,
            pass: lmin >= -PSD_TOL,
        });
    }
    let noise = &model.noise;
    let nondegeneracy_y = min_eigenvalue(&noise.sigma_y0()).max(min_eigenvalue(&noise.sigma1()));
    let nondegeneracy_z = min_eigenvalue(&noise.sigma_z0()).max(min_eigenvalue(&noise.sigma0()));
    let mut warnings = Vec::new();
    if nondegeneracy_y <= PSD_TOL {
        warnings.push(
            "idiosyncratic noise is degenerate: convergence guarantees for K do not apply".into(),
        );
    }
    if nondegeneracy_z <= PSD_TOL {
        warnings.push(
            "common noise is degenerate: convergence guarantees for L do not apply".into(),
        );
    }
    Ok(ValidationReport {
        positivity,
        nondegeneracy_y,
        nondegeneracy_z,
        warnings,
    })
}

#[cfg(test)]
pub(crate) fn zero_noise(d: usize) -> NoiseSuite {
    NoiseSuite::new(
        NoiseSpec::zero(d),
        NoiseSpec::zero(d),
        NoiseSpec::zero(d),
        NoiseSpec::zero(d),
    )
    .expect("zero noise is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model(q: f64) -> MfcModel {
        MfcModel::new(
            Coefficients::scalar(1.0, 0.0, 1.0, 0.0, q, 0.0, 1.0, 0.0),
            0.9,
            zero_noise(1),
        )
        .unwrap()
    }

    #[test]
    fn unit_costs_pass() {
        let rep = validate_model(&unit_model(1.0)).unwrap();
        assert!(rep.positivity_ok());
        assert!(rep.usable());
    }

    #[test]
    fn negative_q_fails_with_eigenvalue() {
        let rep = validate_model(&unit_model(-1.0)).unwrap();
        assert!(!rep.usable());
        let q = &rep.positivity[0];
        assert_eq!(q.name, "Q");
        assert!(!q.pass);
        assert!((q.min_eigenvalue + 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_reference_validates() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let rep = validate_model(&m).unwrap();
        assert!(rep.positivity_ok());
        assert!(rep.nondegenerate());
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn degenerate_noise_is_a_warning_only() {
        let rep = validate_model(&unit_model(1.0)).unwrap();
        assert!(!rep.nondegenerate());
        assert_eq!(rep.warnings.len(), 2);
        assert!(rep.usable());
    }

    #[test]
    fn asymmetric_q_is_hard_error() {
        let mut c = Coefficients::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0);
        c.a = Mat::identity(2, 2);
        c.a_bar = Mat::zeros(2, 2);
        c.b = Mat::from_element(2, 1, 1.0);
        c.b_bar = Mat::zeros(2, 1);
        c.q = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        c.q_bar = Mat::zeros(2, 2);
        let err = MfcModel::new(c, 0.5, zero_noise(2)).unwrap_err();
        assert!(matches!(err, Error::NonSymmetric { name: "Q", .. }));
    }

    #[test]
    fn nonzero_step_mean_rejected() {
        let bad = NoiseSpec::degenerate(vec![0.1]);
        let err = NoiseSuite::new(NoiseSpec::zero(1), NoiseSpec::zero(1), bad, NoiseSpec::zero(1));
        assert!(err.is_err());
    }

    #[test]
    fn admissibility_examples() {
        let m = unit_model(1.0);
        assert!(is_admissible(&m, &ControlParams::scalar(1.0, 1.0)));

        let no_control = |a: f64| {
            MfcModel::new(
                Coefficients::scalar(a, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0),
                0.9,
                zero_noise(1),
            )
            .unwrap()
        };
        assert!(is_admissible(&no_control(1.0), &ControlParams::scalar(3.0, -2.0)));
        assert!(!is_admissible(&no_control(1.1), &ControlParams::scalar(3.0, -2.0)));

        let t1 = MfcModel::scalar_reference(GaussianReading::Variance);
        assert!(is_admissible(&t1, &ControlParams::zeros(&t1)));
    }

    #[test]
    fn boundary_is_inadmissible() {
        // gamma * a^2 = 0.25 * 4 = 1 exactly.
        let m = MfcModel::new(
            Coefficients::scalar(2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            0.25,
            zero_noise(1),
        )
        .unwrap();
        assert!(!is_admissible(&m, &ControlParams::scalar(0.0, 0.0)));
    }

    #[test]
    fn augment_reference_model() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let aug = augment(&m, &ControlParams::zeros(&m)).unwrap();
        assert_eq!(aug.a, Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]));
        assert_eq!(aug.gamma_theta, aug.q);
    }

    #[test]
    fn uniform_moments() {
        let u = NoiseSpec::uniform(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(u.mean(), vec![0.0, 1.0]);
        let c = u.covariance();
        assert!((c[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[(0, 1)], 0.0);
        assert!(NoiseSpec::uniform(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn variance_reading_is_configurable() {
        let var = MfcModel::scalar_reference(GaussianReading::Variance);
        let std = MfcModel::scalar_reference(GaussianReading::StdDev);
        assert!((var.noise.sigma1()[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((std.noise.sigma1()[(0, 0)] - 1e-4).abs() < 1e-15);
    }
}
