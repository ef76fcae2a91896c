//! Exact finite-population machinery.
//!
//! The `N` agents are stacked into one `dN`-dimensional LQ problem
//! `X' = A_N X + B_N U + E`, with social cost `X'Q_N X + U'R_N U`. Feedbacks
//! act as `U = Phi X`.
//!
//! Writing `Pi = I - 11'/N`, the per-agent cost expands to
//!
//! ```text
//! Q_N = (1/N) (Pi (x) I) diag(Q^n) (Pi (x) I) + (1/N^2) 11' (x) (Q_avg + Q_bar)
//! R_N = (1/N) Pi (x) R + (1/N^2) 11' (x) (R + R_bar)
//! ```
//!
//! where `Q_avg` is the mean of the `Q^n`.

use rayon::prelude::*;

use crate::analytic::optimal_gains;
use crate::error::{Error, Result};
use crate::linalg::{kron, ones, solve_discounted_lyapunov, solve_discounted_riccati, spectral_radius, symmetrize, LyapunovForm, Mat};
use crate::model::{ControlParams, MfcModel};
use crate::rng::{Role, StreamId};
use crate::simulate::PopulationConfig;
use crate::trace::{ConvergenceTrace, PopulationEval};

/// Largest stacked state dimension accepted.
pub const MAX_STACKED_DIM: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    /// Per-step noise covariance `11' (x) Sigma^0 + I (x) Sigma^1`.
    pub noise_cov: Mat,
    /// `E[X_0 X_0']`.
    pub x0_second_moment: Mat,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackLabel {
    OptimalN,
    MkvTransplant,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeedback {
    pub phi: Mat,
    pub label: FeedbackLabel,
}

pub fn build_stacked(model: &MfcModel, pop: &PopulationConfig) -> Result<StackedSystem> {
    let (n, d, l) = (pop.n, model.state_dim(), model.control_dim());
    if n == 0 {
        return Err(Error::Validation("population needs at least one agent".into()));
    }
    if n * d > MAX_STACKED_DIM || n * l > MAX_STACKED_DIM {
        return Err(Error::Validation(format!(
            "stacked system of size N*d = {} exceeds the limit {MAX_STACKED_DIM}",
            n * d.max(l)
        )));
    }
    if pop.q_variations.len() != n {
        return Err(Error::Dimension(format!(
            "{} state-cost variations for {n} agents",
            pop.q_variations.len()
        )));
    }
    let nf = n as f64;
    let eye = Mat::identity(n, n);
    let all = ones(n);
    let pi = &eye - &all / nf;

    let a = kron(&eye, &model.a) + kron(&all, &model.a_bar) / nf;
    let b = kron(&eye, &model.b) + kron(&all, &model.b_bar) / nf;

    let mut qdiag = Mat::zeros(n * d, n * d);
    let mut q_avg = Mat::zeros(d, d);
    for i in 0..n {
        let qi = pop.agent_q(model, i);
        qdiag.view_mut((i * d, i * d), (d, d)).copy_from(&qi);
        q_avg += qi / nf;
    }
    let proj = kron(&pi, &Mat::identity(d, d));
    let q = symmetrize(&((&proj * qdiag * &proj) / nf + kron(&all, &(q_avg + &model.q_bar)) / (nf * nf)));
    let r = symmetrize(&(kron(&pi, &model.r) / nf + kron(&all, &model.r_sum()) / (nf * nf)));

    let noise = &model.noise;
    let noise_cov = kron(&all, &noise.sigma0()) + kron(&eye, &noise.sigma1());
    let mean = noise.eps0_init.mean_col() + noise.eps1_init.mean_col();
    let common = noise.eps0_init.covariance() + &mean * mean.transpose();
    let x0_second_moment = kron(&all, &common) + kron(&eye, &noise.eps1_init.covariance());

    Ok(StackedSystem {
        n,
        d,
        l,
        a,
        b,
        q,
        r,
        noise_cov,
        x0_second_moment,
        gamma: model.gamma,
    })
}

/// `(1/N) sum_n c^(n)(X, U)` evaluated agent by agent.
pub fn social_stage_cost(model: &MfcModel, pop: &PopulationConfig, x: &Mat, u: &Mat) -> f64 {
    let (n, d, l) = (pop.n, model.state_dim(), model.control_dim());
    let nf = n as f64;
    let mut xbar = Mat::zeros(d, 1);
    let mut ubar = Mat::zeros(l, 1);
    for i in 0..n {
        xbar += x.rows(i * d, d) / nf;
        ubar += u.rows(i * l, l) / nf;
    }
    let mut total = 0.0;
    for i in 0..n {
        let qi = pop.agent_q(model, i);
        let dx = x.rows(i * d, d) - &xbar;
        let du = u.rows(i * l, l) - &ubar;
        total += (dx.transpose() * &qi * &dx)[(0, 0)]
            + (xbar.transpose() * (&qi + &model.q_bar) * &xbar)[(0, 0)]
            + (du.transpose() * &model.r * &du)[(0, 0)]
            + (ubar.transpose() * model.r_sum() * &ubar)[(0, 0)];
    }
    total / nf
}

fn check_phi(stacked: &StackedSystem, phi: &Mat) -> Result<()> {
    let want = (stacked.n * stacked.l, stacked.n * stacked.d);
    if phi.shape() != want {
        return Err(Error::Dimension(format!(
            "stacked feedback must be {}x{}, got {:?}",
            want.0,
            want.1,
            phi.shape()
        )));
    }
    Ok(())
}

/// `J^N(Phi) = Tr(P E[X_0 X_0']) + gamma/(1-gamma) Tr(P Sigma_E)` with `P`
/// the value matrix of the closed loop `A_N + B_N Phi`.
///
/// The closed loop must satisfy `gamma * rho(A_N + B_N Phi)^2 < 1`.
pub fn eval_social_cost(stacked: &StackedSystem, phi: &StackedFeedback) -> Result<f64> {
    check_phi(stacked, &phi.phi)?;
    let g = stacked.gamma;
    let closed = &stacked.a + &stacked.b * &phi.phi;
    let rho = spectral_radius(&closed);
    if !(g * rho * rho < 1.0) {
        return Err(Error::Admissibility(format!(
            "stacked closed loop has gamma * rho^2 = {} >= 1",
            g * rho * rho
        )));
    }
    let w = &stacked.q + phi.phi.transpose() * &stacked.r * &phi.phi;
    let p = solve_discounted_lyapunov(LyapunovForm::Value, &closed, &w, g, "stacked Lyapunov")?.x;
    let f = if g == 0.0 { 0.0 } else { g / (1.0 - g) };
    Ok((&p * &stacked.x0_second_moment).trace() + f * (&p * &stacked.noise_cov).trace())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NAgentOptimum {
    pub phi: StackedFeedback,
    pub cost: f64,
    pub p: Mat,
    pub residual: f64,
}

/// Optimal stacked feedback from the `dN`-dimensional discounted Riccati
/// equation, `Phi = -gamma (R_N + gamma B_N'PB_N)^{-1} B_N'PA_N`.
pub fn solve_n_agent_optimal(stacked: &StackedSystem) -> Result<NAgentOptimum> {
    let sol = solve_discounted_riccati(
        &stacked.a,
        &stacked.b,
        &stacked.q,
        &stacked.r,
        stacked.gamma,
        "stacked Riccati",
    )?;
    let phi = StackedFeedback {
        phi: -sol.gain,
        label: FeedbackLabel::OptimalN,
    };
    let cost = eval_social_cost(stacked, &phi)?;
    Ok(NAgentOptimum {
        phi,
        cost,
        p: sol.p,
        residual: sol.residual,
    })
}

/// `-I_N (x) K - (1/N) 11' (x) (L - K)`.
pub fn phi_for_theta(theta: &ControlParams, n: usize) -> StackedFeedback {
    let nf = n as f64;
    let phi = -kron(&Mat::identity(n, n), &theta.k) - kron(&ones(n), &(&theta.l - &theta.k)) / nf;
    StackedFeedback {
        phi,
        label: FeedbackLabel::Custom,
    }
}

/// The mean-field optimum `(K*, L*)` transplanted into `N` agents.
pub fn phi_mkv(model: &MfcModel, n: usize) -> Result<StackedFeedback> {
    let opt = optimal_gains(model)?;
    let mut f = phi_for_theta(&opt.theta, n);
    f.label = FeedbackLabel::MkvTransplant;
    Ok(f)
}

/// `max_n max_ij |Phi_nn[i,j] + K[i,j]|` over the diagonal `l x d` blocks.
pub fn max_diagonal_deviation(phi: &Mat, k: &Mat) -> f64 {
    let (l, d) = k.shape();
    let n = phi.nrows() / l;
    let mut worst: f64 = 0.0;
    for a in 0..n {
        let block = phi.view((a * l, a * d), (l, d));
        for i in 0..l {
            for j in 0..d {
                worst = worst.max((block[(i, j)] + k[(i, j)]).abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub h_tilde: f64,
    /// `|J^N(Phi*,N) - J^N(Phi_MKV)|` per seed.
    pub gaps: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); zero for a single seed.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each radius and seed, draws the variations from
/// `root(seed).child(Variations, 0)` and compares the two feedbacks on the
/// resulting population.
pub fn heterogeneity_sweep(model: &MfcModel, n: usize, h_grid: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let transplant = phi_mkv(model, n)?;
    let cells: Vec<(usize, u64)> = (0..h_grid.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let gaps: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(i, seed)| {
            let pop = PopulationConfig::drawn(model, n, h_grid[i], StreamId::root(seed).child(Role::Variations, 0))?;
            let stacked = build_stacked(model, &pop)?;
            let opt = solve_n_agent_optimal(&stacked)?;
            Ok((opt.cost - eval_social_cost(&stacked, &transplant)?).abs())
        })
        .collect();
    let mut rows = Vec::with_capacity(h_grid.len());
    let mut it = gaps.into_iter();
    for &h in h_grid {
        let mut g = Vec::with_capacity(seeds.len());
        for _ in seeds {
            g.push(it.next().expect("one result per cell")?);
        }
        let (mean, std) = mean_std(&g);
        rows.push(SweepRow {
            h_tilde: h,
            gaps: g,
            mean,
            std,
        });
    }
    Ok(rows)
}

/// Adds the exact `N`-agent cost of every evaluated iterate (records whose
/// mean-field cost is NaN are skipped) for each population.
pub fn attach_population_costs(trace: &mut ConvergenceTrace, model: &MfcModel, pops: &[PopulationConfig]) -> Result<()> {
    for pop in pops {
        let stacked = build_stacked(model, pop)?;
        let best = solve_n_agent_optimal(&stacked)?.cost;
        for rec in trace.records.iter_mut().filter(|r| r.cost.is_finite()) {
            let cost = eval_social_cost(&stacked, &phi_for_theta(&rec.theta, pop.n))?;
            rec.population.push(PopulationEval {
                n: pop.n,
                cost,
                rel_error: (cost - best) / best,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zero_noise, Coefficients, GaussianReading};
    use rand::Rng;

    fn reference_model() -> MfcModel {
        MfcModel::scalar_reference(GaussianReading::Variance)
    }

    #[test]
    fn single_agent_collapses() {
        let m = reference_model();
        let pop = PopulationConfig::homogeneous(&m, 1).unwrap();
        let s = build_stacked(&m, &pop).unwrap();
        assert!((s.a[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.b[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.q[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.r[(0, 0)] - 1.0).abs() < 1e-15);
        let opt = solve_n_agent_optimal(&s).unwrap();
        let l_star = optimal_gains(&m).unwrap().theta.l[(0, 0)];
        assert!((opt.phi.phi[(0, 0)] + l_star).abs() < 1e-8);
    }

    #[test]
    fn quadratic_form_fidelity() {
        let m = reference_model();
        let pop = PopulationConfig::drawn(&m, 10, 0.1, StreamId::root(3)).unwrap();
        let s = build_stacked(&m, &pop).unwrap();
        let mut rng = StreamId::root(8).rng();
        for _ in 0..100 {
            let x = Mat::from_fn(10, 1, |_, _| rng.random_range(-2.0..2.0));
            let u = Mat::from_fn(10, 1, |_, _| rng.random_range(-2.0..2.0));
            let stacked = (x.transpose() * &s.q * &x + u.transpose() * &s.r * &u)[(0, 0)];
            let direct = social_stage_cost(&m, &pop, &x, &u);
            assert!((stacked - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn phi_mkv_small_cases() {
        let m = reference_model();
        let opt = optimal_gains(&m).unwrap();
        let (k, l) = (opt.theta.k[(0, 0)], opt.theta.l[(0, 0)]);
        let one = phi_mkv(&m, 1).unwrap().phi;
        assert!((one[(0, 0)] + l).abs() < 1e-14);
        let two = phi_mkv(&m, 2).unwrap().phi;
        assert!((two[(0, 0)] - (-k - (l - k) / 2.0)).abs() < 1e-14);
        assert!((two[(0, 1)] + (l - k) / 2.0).abs() < 1e-14);
        assert_eq!(two[(0, 1)], two[(1, 0)]);
        assert_eq!(two[(0, 0)], two[(1, 1)]);
        let same = phi_for_theta(&ControlParams::scalar(0.3, 0.3), 3).phi;
        assert!((same - Mat::identity(3, 3) * -0.3).norm() < 1e-15);
    }

    #[test]
    fn zero_noise_zero_cost() {
        let c = Coefficients::scalar(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5);
        let m = MfcModel::new(c, 0.9, zero_noise(1)).unwrap();
        let pop = PopulationConfig::homogeneous(&m, 4).unwrap();
        let s = build_stacked(&m, &pop).unwrap();
        let j = eval_social_cost(&s, &phi_for_theta(&ControlParams::zeros(&m), 4)).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn optimum_beats_random_feedbacks() {
        let m = reference_model();
        let pop = PopulationConfig::drawn(&m, 4, 0.1, StreamId::root(1)).unwrap();
        let s = build_stacked(&m, &pop).unwrap();
        let best = solve_n_agent_optimal(&s).unwrap();
        let mut rng = StreamId::root(2).rng();
        let mut tried = 0;
        while tried < 20 {
            let phi = &best.phi.phi + Mat::from_fn(4, 4, |_, _| rng.random_range(-0.3..0.3));
            let f = StackedFeedback { phi, label: FeedbackLabel::Custom };
            if let Ok(j) = eval_social_cost(&s, &f) {
                assert!(j >= best.cost - 1e-8);
                tried += 1;
            }
        }
    }

    #[test]
    fn exchangeability() {
        let m = reference_model();
        let pop = PopulationConfig::drawn(&m, 3, 0.2, StreamId::root(6)).unwrap();
        let perm = [2usize, 0, 1];
        let permuted = PopulationConfig::new(
            &m,
            3,
            0.2,
            perm.iter().map(|&i| pop.q_variations[i].clone()).collect(),
        )
        .unwrap();
        let a = solve_n_agent_optimal(&build_stacked(&m, &pop).unwrap()).unwrap().phi.phi;
        let b = solve_n_agent_optimal(&build_stacked(&m, &permuted).unwrap()).unwrap().phi.phi;
        for i in 0..3 {
            for j in 0..3 {
                assert!((b[(i, j)] - a[(perm[i], perm[j])]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sweep_zero_radius_has_zero_gap() {
        let m = reference_model();
        let rows = heterogeneity_sweep(&m, 5, &[0.0, 0.2], &[1, 2]).unwrap();
        assert!(rows[0].gaps.iter().all(|g| *g < 1e-9));
        assert!(rows[1].mean > rows[0].mean);
    }

    #[test]
    fn size_guard() {
        let m = reference_model();
        let pop = PopulationConfig::homogeneous(&m, 2001).unwrap();
        assert!(build_stacked(&m, &pop).is_err());
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
