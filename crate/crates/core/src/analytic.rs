//! Model-based quantities: value matrices, discounted state covariances,
//! exact cost and policy gradient, optimal gains and exact gradient descent.
//!
//! Everything is computed separately for the `y` block (driven by `K`) and
//! the `z` block (driven by `L`); the two never interact.

use crate::error::{Error, Result};
use crate::linalg::{solve_discounted_lyapunov, solve_discounted_riccati, LyapunovForm, Mat};
use crate::model::{is_admissible, require_admissible, ControlParams, MfcModel};
use crate::trace::{ConvergenceTrace, TraceMeta, TraceRecord};

/// Value matrices of the two Lyapunov equations
/// `P_y = Q + K'RK + gamma (A-BK)' P_y (A-BK)` and its `z` analogue,
/// plus the noise constants `alpha = gamma/(1-gamma) Tr(P Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p_y: Mat,
    pub p_z: Mat,
    pub alpha_y: f64,
    pub alpha_z: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Discounted state second moments `E sum gamma^t y_t y_t'` and
/// `E sum gamma^t z_t z_t'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub sigma_y: Mat,
    pub sigma_z: Mat,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub c_y: f64,
    pub c_z: f64,
}

impl CostBreakdown {
    fn from_parts(c_y: f64, c_z: f64) -> Self {
        CostBreakdown {
            total: c_y + c_z,
            c_y,
            c_z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    Exact,
    FiniteDifference,
    Mkv,
    Pop,
}

impl GradientSource {
    pub fn as_str(self) -> &'static str {
        match self {
            GradientSource::Exact => "exact",
            GradientSource::FiniteDifference => "fd",
            GradientSource::Mkv => "mkv",
            GradientSource::Pop => "pop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientMeta {
    pub perturbations: Option<usize>,
    pub horizon: Option<usize>,
    pub tau: Option<f64>,
    pub agents: Option<usize>,
    pub step: Option<f64>,
}

/// Gradient with respect to `(K, L)`, kept as the two blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad_k: Mat,
    pub grad_l: Mat,
    pub source: GradientSource,
    pub meta: GradientMeta,
}

impl GradientEstimate {
    /// `diag(grad_K, grad_L)` as a `2l x 2d` matrix.
    pub fn block_diag(&self) -> Mat {
        crate::linalg::block_diag(&self.grad_k, &self.grad_l)
    }

    pub fn norm(&self) -> f64 {
        (self.grad_k.norm_squared() + self.grad_l.norm_squared()).sqrt()
    }
}

fn value_weights(model: &MfcModel, theta: &ControlParams) -> (Mat, Mat) {
    let wy = &model.q + theta.k.transpose() * &model.r * &theta.k;
    let wz = model.q_sum() + theta.l.transpose() * model.r_sum() * &theta.l;
    (wy, wz)
}

pub fn solve_lyapunov_value(model: &MfcModel, theta: &ControlParams) -> Result<RiccatiSolution> {
    require_admissible(model, theta)?;
    let g = model.gamma;
    let (wy, wz) = value_weights(model, theta);
    let y = solve_discounted_lyapunov(
        LyapunovForm::Value,
        &model.closed_loop_y(&theta.k),
        &wy,
        g,
        "P_y Lyapunov",
    )?;
    let z = solve_discounted_lyapunov(
        LyapunovForm::Value,
        &model.closed_loop_z(&theta.l),
        &wz,
        g,
        "P_z Lyapunov",
    )?;
    let noise_factor = if g == 0.0 { 0.0 } else { g / (1.0 - g) };
    let alpha_y = noise_factor * (&y.x * model.noise.sigma1()).trace();
    let alpha_z = noise_factor * (&z.x * model.noise.sigma0()).trace();
    Ok(RiccatiSolution {
        alpha_y,
        alpha_z,
        iterations: y.iterations.max(z.iterations),
        residual: y.residual.max(z.residual),
        p_y: y.x,
        p_z: z.x,
    })
}

/// Source terms `Sigma_y0 + gamma/(1-gamma) Sigma^1` and
/// `E[z0 z0'] + gamma/(1-gamma) Sigma^0`.
pub(crate) fn covariance_sources(model: &MfcModel) -> (Mat, Mat) {
    let g = model.gamma;
    let f = if g == 0.0 { 0.0 } else { g / (1.0 - g) };
    let n = &model.noise;
    (
        n.sigma_y0() + n.sigma1() * f,
        n.z0_second_moment() + n.sigma0() * f,
    )
}

pub fn state_covariances(model: &MfcModel, theta: &ControlParams) -> Result<CovariancePair> {
    require_admissible(model, theta)?;
    let (sy, sz) = covariance_sources(model);
    let y = solve_discounted_lyapunov(
        LyapunovForm::Covariance,
        &model.closed_loop_y(&theta.k),
        &sy,
        model.gamma,
        "Sigma_y Lyapunov",
    )?;
    let z = solve_discounted_lyapunov(
        LyapunovForm::Covariance,
        &model.closed_loop_z(&theta.l),
        &sz,
        model.gamma,
        "Sigma_z Lyapunov",
    )?;
    Ok(CovariancePair {
        iterations: y.iterations.max(z.iterations),
        residual: y.residual.max(z.residual),
        sigma_y: y.x,
        sigma_z: z.x,
    })
}

/// `C(theta) = Tr(P_y Sigma_y0) + alpha_y + Tr(P_z E[z0 z0']) + alpha_z`.
pub fn exact_cost(model: &MfcModel, theta: &ControlParams) -> Result<CostBreakdown> {
    let sol = solve_lyapunov_value(model, theta)?;
    Ok(cost_from_solution(model, &sol))
}

pub(crate) fn cost_from_solution(model: &MfcModel, sol: &RiccatiSolution) -> CostBreakdown {
    let c_y = (&sol.p_y * model.noise.sigma_y0()).trace() + sol.alpha_y;
    let c_z = (&sol.p_z * model.noise.z0_second_moment()).trace() + sol.alpha_z;
    CostBreakdown::from_parts(c_y, c_z)
}

/// Truncated discounted second moments `sum_{t<T} gamma^t E[y_t y_t']` and the
/// `z` analogue.
pub fn truncated_covariances(
    model: &MfcModel,
    theta: &ControlParams,
    horizon: usize,
) -> Result<(Mat, Mat)> {
    theta.check_dims(model)?;
    let n = &model.noise;
    let run = |closed: Mat, init: Mat, step: Mat| {
        let mut second = init;
        let mut acc = Mat::zeros(second.nrows(), second.ncols());
        let mut disc = 1.0;
        for _ in 0..horizon {
            acc += &second * disc;
            second = &closed * &second * closed.transpose() + &step;
            disc *= model.gamma;
        }
        acc
    };
    let sy = run(model.closed_loop_y(&theta.k), n.sigma_y0(), n.sigma1());
    let sz = run(model.closed_loop_z(&theta.l), n.z0_second_moment(), n.sigma0());
    Ok((sy, sz))
}

/// `C^T(theta)`: expected cost of the first `T` steps.
pub fn truncated_cost(model: &MfcModel, theta: &ControlParams, horizon: usize) -> Result<CostBreakdown> {
    let (sy, sz) = truncated_covariances(model, theta, horizon)?;
    let (wy, wz) = value_weights(model, theta);
    Ok(CostBreakdown::from_parts(
        (wy * sy).trace(),
        (wz * sz).trace(),
    ))
}

/// `grad_K = 2[(R + gamma B'P_y B)K - gamma B'P_y A] Sigma_y` and the `L`
/// analogue with `A+A_bar, B+B_bar, R+R_bar`.
pub fn exact_gradient(model: &MfcModel, theta: &ControlParams) -> Result<GradientEstimate> {
    let sol = solve_lyapunov_value(model, theta)?;
    let cov = state_covariances(model, theta)?;
    Ok(gradient_from_parts(model, theta, &sol, &cov))
}

fn gradient_from_parts(
    model: &MfcModel,
    theta: &ControlParams,
    sol: &RiccatiSolution,
    cov: &CovariancePair,
) -> GradientEstimate {
    let g = model.gamma;
    let block = |r: &Mat, b: &Mat, a: &Mat, p: &Mat, gain: &Mat, sigma: &Mat| {
        let e = (r + (b.transpose() * p * b) * g) * gain - (b.transpose() * p * a) * g;
        e * sigma * 2.0
    };
    let grad_k = block(&model.r, &model.b, &model.a, &sol.p_y, &theta.k, &cov.sigma_y);
    let grad_l = block(
        &model.r_sum(),
        &model.b_sum(),
        &model.a_sum(),
        &sol.p_z,
        &theta.l,
        &cov.sigma_z,
    );
    GradientEstimate {
        grad_k,
        grad_l,
        source: GradientSource::Exact,
        meta: GradientMeta::default(),
    }
}

/// Central finite differences of [`exact_cost`] in every entry of `K` and `L`.
pub fn fd_gradient(model: &MfcModel, theta: &ControlParams, h: f64) -> Result<GradientEstimate> {
    require_admissible(model, theta)?;
    let (rows, cols) = theta.k.shape();
    let mut grad_k = Mat::zeros(rows, cols);
    let mut grad_l = Mat::zeros(rows, cols);
    for block in 0..2 {
        for i in 0..rows {
            for j in 0..cols {
                let eval = |sign: f64| -> Result<f64> {
                    let mut t = theta.clone();
                    let m = if block == 0 { &mut t.k } else { &mut t.l };
                    m[(i, j)] += sign * h;
                    if !is_admissible(model, &t) {
                        let name = if block == 0 { "K" } else { "L" };
                        return Err(Error::Admissibility(format!(
                            "finite-difference perturbation {name}[{i},{j}] {} h leaves the admissible set",
                            if sign > 0.0 { "+" } else { "-" }
                        )));
                    }
                    Ok(exact_cost(model, &t)?.total)
                };
                let d = (eval(1.0)? - eval(-1.0)?) / (2.0 * h);
                if block == 0 {
                    grad_k[(i, j)] = d;
                } else {
                    grad_l[(i, j)] = d;
                }
            }
        }
    }
    Ok(GradientEstimate {
        grad_k,
        grad_l,
        source: GradientSource::FiniteDifference,
        meta: GradientMeta {
            step: Some(h),
            ..GradientMeta::default()
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub theta: ControlParams,
    pub cost: CostBreakdown,
    /// Riccati solutions for the `y` and `z` problems.
    pub p_y: Mat,
    pub p_z: Mat,
    pub residual: f64,
    /// `||grad C(theta*)||_F`.
    pub gradient_norm: f64,
}

/// `(K*, L*)` from value iteration on the two discounted Riccati equations.
pub fn optimal_gains(model: &MfcModel) -> Result<OptimalSolution> {
    let g = model.gamma;
    let y = solve_discounted_riccati(&model.a, &model.b, &model.q, &model.r, g, "Riccati (K*)")?;
    let z = solve_discounted_riccati(
        &model.a_sum(),
        &model.b_sum(),
        &model.q_sum(),
        &model.r_sum(),
        g,
        "Riccati (L*)",
    )?;
    let theta = ControlParams::new(y.gain, z.gain);
    if !is_admissible(model, &theta) {
        return Err(Error::numerics(
            "optimal gains are outside the admissible set (model violates the standing assumptions)",
            y.residual.max(z.residual),
        ));
    }
    let sol = solve_lyapunov_value(model, &theta)?;
    let cov = state_covariances(model, &theta)?;
    let grad = gradient_from_parts(model, &theta, &sol, &cov);
    Ok(OptimalSolution {
        cost: cost_from_solution(model, &sol),
        theta,
        p_y: y.p,
        p_z: z.p,
        residual: y.residual.max(z.residual),
        gradient_norm: grad.norm(),
    })
}

pub const MAX_HALVINGS: usize = 30;

/// Exact gradient descent `theta <- theta - eta * grad C(theta)`.
///
/// The step is halved (at most [`MAX_HALVINGS`] times) when the candidate is
/// inadmissible or increases the cost. If every halving is admissible but none
/// decreases the cost, the run stops: the iterate is at working precision.
/// Stops early once the relative error drops to `eps_stop` (or, if the optimum
/// cannot be computed, once the gradient norm does).
pub fn exact_pg_run(
    model: &MfcModel,
    theta0: &ControlParams,
    eta: f64,
    k_max: usize,
    eps_stop: f64,
) -> Result<ConvergenceTrace> {
    require_admissible(model, theta0)?;
    if !(eta > 0.0) {
        return Err(Error::Validation(format!("learning rate must be positive, got {eta}")));
    }
    let reference = optimal_gains(model).ok().map(|o| o.cost.total);
    let mut trace = ConvergenceTrace::new(TraceMeta {
        method: "exact".into(),
        optimizer: "gd".into(),
        reference_cost: reference,
        notes: vec![("eta".into(), format!("{eta}"))],
        ..TraceMeta::default()
    });
    let rel = |c: f64| reference.map_or(f64::NAN, |s| (c - s) / s);

    let mut theta = theta0.clone();
    let mut cost = exact_cost(model, &theta)?.total;
    let mut grad = exact_gradient(model, &theta)?;
    let mut record = TraceRecord {
        k: 0,
        theta: theta.clone(),
        cost,
        rel_error_mf: rel(cost),
        population: Vec::new(),
        grad_norm: grad.norm(),
    };
    for k in 1..=k_max {
        let converged = match reference {
            Some(_) => record.rel_error_mf <= eps_stop,
            None => record.grad_norm <= eps_stop,
        };
        if converged {
            break;
        }
        let mut step = eta;
        let mut accepted = None;
        let mut stalled = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = ControlParams::new(
                &theta.k - &grad.grad_k * step,
                &theta.l - &grad.grad_l * step,
            );
            if is_admissible(model, &cand) {
                let c = exact_cost(model, &cand)?.total;
                if c <= cost {
                    accepted = Some((cand, c));
                    break;
                }
                stalled = true;
            }
            step *= 0.5;
        }
        let Some((next, next_cost)) = accepted else {
            if stalled {
                break;
            }
            trace.records.push(record);
            return Err(Error::Step {
                iteration: k,
                trace: Box::new(trace),
            });
        };
        trace.records.push(record);
        theta = next;
        cost = next_cost;
        grad = exact_gradient(model, &theta)?;
        record = TraceRecord {
            k,
            theta: theta.clone(),
            cost,
            rel_error_mf: rel(cost),
            population: Vec::new(),
            grad_norm: grad.norm(),
        };
    }
    trace.records.push(record);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zero_noise, Coefficients, GaussianReading, NoiseSpec, NoiseSuite};

    fn scalar(c: Coefficients, gamma: f64, noise: NoiseSuite) -> MfcModel {
        MfcModel::new(c, gamma, noise).unwrap()
    }

    fn unit_noise() -> NoiseSuite {
        let u = NoiseSpec::uniform(vec![-1.0], vec![1.0]).unwrap();
        let g = NoiseSpec::gaussian(vec![0.0], Mat::from_element(1, 1, 0.01)).unwrap();
        NoiseSuite::new(u.clone(), u, g.clone(), g).unwrap()
    }

    #[test]
    fn lyapunov_zero_closed_loop() {
        let m = scalar(
            Coefficients::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            0.5,
            zero_noise(1),
        );
        let sol = solve_lyapunov_value(&m, &ControlParams::scalar(1.0, 1.0)).unwrap();
        assert!((sol.p_y[(0, 0)] - 2.0).abs() < 1e-14);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn lyapunov_geometric_series() {
        let m = scalar(
            Coefficients::scalar(0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            0.9,
            zero_noise(1),
        );
        let sol = solve_lyapunov_value(&m, &ControlParams::scalar(0.0, 0.0)).unwrap();
        assert!((sol.p_y[(0, 0)] - 1.0 / 0.775).abs() < 1e-10);
    }

    #[test]
    fn inadmissible_theta_is_rejected() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let err = solve_lyapunov_value(&m, &ControlParams::scalar(-10.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Admissibility(_)));
    }

    #[test]
    fn covariance_zero_closed_loop() {
        // Sigma_y0 = 1/3, Sigma^1 = 0.01, a - bK = 0.
        let m = scalar(
            Coefficients::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            0.9,
            unit_noise(),
        );
        let cov = state_covariances(&m, &ControlParams::scalar(1.0, 1.0)).unwrap();
        assert!((cov.sigma_y[(0, 0)] - (1.0 / 3.0 + 0.09)).abs() < 1e-12);
    }

    #[test]
    fn covariance_degenerate_is_zero() {
        let m = scalar(
            Coefficients::scalar(0.5, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            0.9,
            zero_noise(1),
        );
        let cov = state_covariances(&m, &ControlParams::scalar(0.2, 0.2)).unwrap();
        assert_eq!(cov.sigma_y[(0, 0)], 0.0);
    }

    #[test]
    fn whitened_cost() {
        // A = A_bar = 0 and K = L = 0: every y_t, z_t is fresh noise.
        let q = 0.7;
        let m = scalar(
            Coefficients::scalar(0.0, 0.0, 1.0, 0.0, q, 0.0, 2.0, 0.0),
            0.9,
            unit_noise(),
        );
        let c = exact_cost(&m, &ControlParams::scalar(0.0, 0.0)).unwrap();
        let expected = q / 3.0 + q / 3.0 + 9.0 * (q * 0.01 + q * 0.01);
        assert!((c.total - expected).abs() < 1e-12);
    }

    #[test]
    fn cost_split_is_exact() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let c = exact_cost(&m, &ControlParams::scalar(0.3, 0.2)).unwrap();
        assert_eq!(c.total, c.c_y + c.c_z);
    }

    #[test]
    fn nonzero_initial_mean_enters_z_second_moment() {
        let init0 = NoiseSpec::degenerate(vec![1.0]);
        let init1 = NoiseSpec::degenerate(vec![2.0]);
        let noise = NoiseSuite::new(init0, init1, NoiseSpec::zero(1), NoiseSpec::zero(1)).unwrap();
        let m = scalar(
            Coefficients::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            0.5,
            noise,
        );
        let c = exact_cost(&m, &ControlParams::scalar(0.0, 0.0)).unwrap();
        // y_0 = 0, z_0 = 3, then everything is zero.
        assert!((c.c_y).abs() < 1e-15);
        assert!((c.c_z - 9.0).abs() < 1e-12);
    }

    #[test]
    fn no_control_authority_gives_zero_gains() {
        let m = scalar(
            Coefficients::scalar(0.5, 0.2, 0.0, 0.0, 1.0, 0.5, 1.0, 1.0),
            0.9,
            unit_noise(),
        );
        let opt = optimal_gains(&m).unwrap();
        assert_eq!(opt.theta.k[(0, 0)], 0.0);
        assert_eq!(opt.theta.l[(0, 0)], 0.0);
    }

    #[test]
    fn pure_penalty_gradient_points_home() {
        let m = scalar(
            Coefficients::scalar(0.5, 0.2, 0.0, 0.0, 1.0, 0.5, 1.0, 1.0),
            0.9,
            unit_noise(),
        );
        let theta = ControlParams::scalar(0.4, -0.3);
        let g = exact_gradient(&m, &theta).unwrap();
        let cov = state_covariances(&m, &theta).unwrap();
        let expect_k = 2.0 * 1.0 * 0.4 * cov.sigma_y[(0, 0)];
        assert!((g.grad_k[(0, 0)] - expect_k).abs() < 1e-12);
        assert!(g.grad_k[(0, 0)] > 0.0 && g.grad_l[(0, 0)] < 0.0);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let opt = optimal_gains(&m).unwrap();
        let g = exact_gradient(&m, &opt.theta).unwrap();
        assert!(g.grad_k.amax() < 1e-8 && g.grad_l.amax() < 1e-8);
        assert!(opt.gradient_norm <= 1e-7 * (1.0 + opt.cost.total));
        let fd = fd_gradient(&m, &opt.theta, 1e-6).unwrap();
        assert!(fd.grad_k.amax() <= 1e-6 && fd.grad_l.amax() <= 1e-6);
    }

    #[test]
    fn fd_matches_closed_form_at_zero_discount() {
        // gamma = 0, A = 0: C = (q + r k^2) Sy0 + (q + qb + (r + rb) l^2) Mz0.
        let (q, qb, r, rb) = (0.8, 0.3, 1.5, 0.5);
        let m = scalar(
            Coefficients::scalar(0.0, 0.0, 1.0, 0.4, q, qb, r, rb),
            0.0,
            unit_noise(),
        );
        let (k, l) = (0.7, -0.4);
        let fd = fd_gradient(&m, &ControlParams::scalar(k, l), 1e-6).unwrap();
        let dk = 2.0 * r * k / 3.0;
        let dl = 2.0 * (r + rb) * l / 3.0;
        assert!((fd.grad_k[(0, 0)] - dk).abs() < 1e-8);
        assert!((fd.grad_l[(0, 0)] - dl).abs() < 1e-8);
    }

    #[test]
    fn fd_reports_inadmissible_coordinate() {
        // gamma * (a - b k)^2 just below one at k = 0.
        let m = scalar(
            Coefficients::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            0.999_999,
            zero_noise(1),
        );
        let err = fd_gradient(&m, &ControlParams::scalar(0.0, 0.5), 1e-3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("K[0,0]"), "{msg}");
    }

    #[test]
    fn exact_pg_from_optimum_takes_no_steps() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let opt = optimal_gains(&m).unwrap();
        let trace = exact_pg_run(&m, &opt.theta, 0.01, 100, 1e-9).unwrap();
        assert_eq!(trace.steps(), 0);
        assert!((trace.records[0].cost - opt.cost.total).abs() < 1e-12);
    }

    #[test]
    fn exact_pg_keeps_blocks_separate() {
        // One step from diag(K, L) must land on diag(K', L').
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let theta = ControlParams::scalar(0.0, 0.0);
        let g = exact_gradient(&m, &theta).unwrap();
        let bk = crate::linalg::block_diag(&theta.k, &theta.l) - g.block_diag() * 0.01;
        assert_eq!(bk[(0, 1)], 0.0);
        assert_eq!(bk[(1, 0)], 0.0);
    }
}
