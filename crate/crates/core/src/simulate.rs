//! Stochastic rollout engines.
//!
//! * The MKV simulator samples the reparametrised `(y, z)` dynamics and
//!   returns the realised discounted mean-field cost over `T` steps.
//! * The population simulator samples `N` interacting agents that share one
//!   common-noise stream, use the empirical mean in place of the conditional
//!   mean, and may carry heterogeneous state costs `Q + Q~^n`.
//!
//! Both sum exactly `T` terms, `t = 0, ..., T-1`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, op_norm, symmetrize_checked, Mat};
use crate::model::{ControlParams, MfcModel};
use crate::rng::{Role, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulatorKind {
    Mkv,
    Pop,
}

/// One realised discounted cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSample {
    pub value: f64,
    pub horizon: usize,
    pub kind: SimulatorKind,
    pub stream: StreamId,
}

/// A frozen population: size and per-agent state-cost variations.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub n: usize,
    pub h_tilde: f64,
    pub q_variations: Vec<Mat>,
}

/// Largest admissible heterogeneity radius: `min{lambda_min(Q), lambda_min(Q+Q_bar)}`.
pub fn max_heterogeneity(model: &MfcModel) -> f64 {
    min_eigenvalue(&model.q).min(min_eigenvalue(&model.q_sum()))
}

fn check_radius(model: &MfcModel, h_tilde: f64) -> Result<()> {
    if !(h_tilde >= 0.0) {
        return Err(Error::Validation(format!("heterogeneity radius {h_tilde} must be >= 0")));
    }
    let lq = min_eigenvalue(&model.q);
    let lqq = min_eigenvalue(&model.q_sum());
    if h_tilde > lq.min(lqq) {
        return Err(Error::Validation(format!(
            "heterogeneity radius {h_tilde} exceeds min(lambda_min(Q) = {lq}, lambda_min(Q+Q_bar) = {lqq})"
        )));
    }
    Ok(())
}

impl PopulationConfig {
    pub fn new(model: &MfcModel, n: usize, h_tilde: f64, q_variations: Vec<Mat>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("population needs at least one agent".into()));
        }
        check_radius(model, h_tilde)?;
        if q_variations.len() != n {
            return Err(Error::Dimension(format!(
                "{} state-cost variations for {n} agents",
                q_variations.len()
            )));
        }
        let d = model.state_dim();
        let mut checked = Vec::with_capacity(n);
        for (i, q) in q_variations.iter().enumerate() {
            if q.shape() != (d, d) {
                return Err(Error::Dimension(format!("variation {i} is not {d}x{d}")));
            }
            let q = symmetrize_checked("Q variation", q)?;
            let norm = op_norm(&q);
            if norm > h_tilde * (1.0 + 1e-12) {
                return Err(Error::Validation(format!(
                    "variation {i} has norm {norm} > h_tilde = {h_tilde}"
                )));
            }
            checked.push(q);
        }
        Ok(PopulationConfig {
            n,
            h_tilde,
            q_variations: checked,
        })
    }

    /// `N` identical agents.
    pub fn homogeneous(model: &MfcModel, n: usize) -> Result<Self> {
        let d = model.state_dim();
        Self::new(model, n, 0.0, vec![Mat::zeros(d, d); n])
    }

    /// Draws the variations once; the result is the population's identity.
    pub fn drawn(model: &MfcModel, n: usize, h_tilde: f64, stream: StreamId) -> Result<Self> {
        let q = draw_q_variations(model, n, h_tilde, stream)?;
        Self::new(model, n, h_tilde, q)
    }

    /// `Q^n = Q + Q~^n`.
    pub fn agent_q(&self, model: &MfcModel, agent: usize) -> Mat {
        &model.q + &self.q_variations[agent]
    }
}

/// `N` symmetric variations with operator norm at most `h_tilde`. In one
/// dimension they are uniform on `(-h, h)`; otherwise a symmetric matrix with
/// i.i.d. `U(-1, 1)` entries is rescaled to norm `h * U(0, 1)`.
pub fn draw_q_variations(model: &MfcModel, n: usize, h_tilde: f64, stream: StreamId) -> Result<Vec<Mat>> {
    check_radius(model, h_tilde)?;
    let d = model.state_dim();
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if h_tilde == 0.0 {
            out.push(Mat::zeros(d, d));
            continue;
        }
        if d == 1 {
            let v: f64 = rng.random_range(-h_tilde..h_tilde);
            out.push(Mat::from_element(1, 1, v));
            continue;
        }
        let mut s = Mat::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v: f64 = rng.random_range(-1.0..1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let norm = op_norm(&s);
        let radius: f64 = h_tilde * rng.random::<f64>();
        if norm > 0.0 {
            s *= radius / norm;
        }
        out.push(s);
    }
    Ok(out)
}

/// Row-major copy of a small matrix for allocation-free inner loops.
fn flat(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

#[inline]
fn mat_vec(m: &[f64], rows: usize, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for i in 0..rows {
        let row = &m[i * cols..(i + 1) * cols];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[inline]
fn quad(m: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        let r: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        acc += x[i] * r;
    }
    acc
}

/// Per-`theta` data of the `(y, z)` rollout.
struct MkvPlan {
    d: usize,
    fy: Vec<f64>,
    fz: Vec<f64>,
    wy: Vec<f64>,
    wz: Vec<f64>,
    mean1: Vec<f64>,
}

impl MkvPlan {
    fn new(model: &MfcModel, theta: &ControlParams) -> Self {
        let wy = &model.q + theta.k.transpose() * &model.r * &theta.k;
        let wz = model.q_sum() + theta.l.transpose() * model.r_sum() * &theta.l;
        MkvPlan {
            d: model.state_dim(),
            fy: flat(&model.closed_loop_y(&theta.k)),
            fz: flat(&model.closed_loop_z(&theta.l)),
            wy: flat(&wy),
            wz: flat(&wz),
            mean1: model.noise.eps1_init.mean(),
        }
    }

    fn run<R: Rng + ?Sized>(&self, model: &MfcModel, horizon: usize, rng: &mut R) -> f64 {
        let d = self.d;
        let noise = &model.noise;
        let mut y = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        let mut e = vec![0.0; d];
        noise.eps1_init.sample_into(rng, &mut y);
        noise.eps0_init.sample_into(rng, &mut z);
        for i in 0..d {
            y[i] -= self.mean1[i];
            z[i] += self.mean1[i];
        }
        let mut disc = 1.0;
        let mut total = 0.0;
        for t in 0..horizon {
            total += disc * (quad(&self.wy, &y) + quad(&self.wz, &z));
            if t + 1 == horizon {
                break;
            }
            mat_vec(&self.fy, d, &y, &mut tmp);
            noise.eps1_step.sample_into(rng, &mut e);
            for i in 0..d {
                y[i] = tmp[i] + e[i];
            }
            mat_vec(&self.fz, d, &z, &mut tmp);
            noise.eps0_step.sample_into(rng, &mut e);
            for i in 0..d {
                z[i] = tmp[i] + e[i];
            }
            disc *= model.gamma;
        }
        total
    }
}

/// One realisation of `sum_{t<T} gamma^t [y_t'(Q+K'RK)y_t + z_t'(Q+Q_bar+L'(R+R_bar)L)z_t]`
/// with `y_0 = eps1_0 - E[eps1_0]` and `z_0 = eps0_0 + E[eps1_0]`.
///
/// Admissibility is not required for a finite horizon; callers that need it
/// check it themselves.
pub fn mkv_rollout(
    model: &MfcModel,
    theta: &ControlParams,
    horizon: usize,
    stream: StreamId,
) -> Result<CostSample> {
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    theta.check_dims(model)?;
    let plan = MkvPlan::new(model, theta);
    let mut rng = stream.rng();
    Ok(CostSample {
        value: plan.run(model, horizon, &mut rng),
        horizon,
        kind: SimulatorKind::Mkv,
        stream,
    })
}

fn population_rngs(stream: StreamId, n: usize) -> (ChaCha8Rng, Vec<ChaCha8Rng>) {
    let common = stream.child(Role::Common, 0).rng();
    let agents = (0..n).map(|i| stream.child(Role::Agent, i as u64).rng()).collect();
    (common, agents)
}

struct PopPlan {
    d: usize,
    l: usize,
    a: Vec<f64>,
    a_bar: Vec<f64>,
    b: Vec<f64>,
    b_bar: Vec<f64>,
    k: Vec<f64>,
    l_gain: Vec<f64>,
    q_agent: Vec<Vec<f64>>,
    q_bar: Vec<f64>,
    r: Vec<f64>,
    r_sum: Vec<f64>,
}

impl PopPlan {
    fn new(model: &MfcModel, pop: &PopulationConfig, theta: &ControlParams) -> Self {
        PopPlan {
            d: model.state_dim(),
            l: model.control_dim(),
            a: flat(&model.a),
            a_bar: flat(&model.a_bar),
            b: flat(&model.b),
            b_bar: flat(&model.b_bar),
            k: flat(&theta.k),
            l_gain: flat(&theta.l),
            q_agent: (0..pop.n).map(|i| flat(&pop.agent_q(model, i))).collect(),
            q_bar: flat(&model.q_bar),
            r: flat(&model.r),
            r_sum: flat(&model.r_sum()),
        }
    }
}

/// One realisation of `sum_{t<T} gamma^t cbar^N(X_t, U_t)` where every agent
/// plays `u^n = -K (x^n - xbar^N) - L xbar^N`.
pub fn pop_rollout(
    model: &MfcModel,
    pop: &PopulationConfig,
    theta: &ControlParams,
    horizon: usize,
    stream: StreamId,
) -> Result<CostSample> {
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    theta.check_dims(model)?;
    if pop.q_variations.len() != pop.n {
        return Err(Error::Dimension(format!(
            "{} state-cost variations for {} agents",
            pop.q_variations.len(),
            pop.n
        )));
    }
    let plan = PopPlan::new(model, pop, theta);
    let (n, d, l) = (pop.n, plan.d, plan.l);
    let inv_n = 1.0 / n as f64;
    let noise = &model.noise;
    let (mut common, mut agents) = population_rngs(stream, n);

    let mut x = vec![0.0; n * d];
    let mut u = vec![0.0; n * l];
    let mut e0 = vec![0.0; d];
    let mut e1 = vec![0.0; d];
    noise.eps0_init.sample_into(&mut common, &mut e0);
    for (i, rng) in agents.iter_mut().enumerate() {
        noise.eps1_init.sample_into(rng, &mut e1);
        for j in 0..d {
            x[i * d + j] = e0[j] + e1[j];
        }
    }

    let mut xbar = vec![0.0; d];
    let mut ubar = vec![0.0; l];
    let mut dev = vec![0.0; d];
    let mut udev = vec![0.0; l];
    let mut tmp_l = vec![0.0; l];
    let mut tmp_l2 = vec![0.0; l];
    let mut tmp_d = vec![0.0; d];
    let mut drift = vec![0.0; d];

    let mut disc = 1.0;
    let mut total = 0.0;
    for t in 0..horizon {
        xbar.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for j in 0..d {
                xbar[j] += x[i * d + j] * inv_n;
            }
        }
        // controls
        mat_vec(&plan.l_gain, l, &xbar, &mut tmp_l2);
        ubar.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for j in 0..d {
                dev[j] = x[i * d + j] - xbar[j];
            }
            mat_vec(&plan.k, l, &dev, &mut tmp_l);
            for j in 0..l {
                let v = -tmp_l[j] - tmp_l2[j];
                u[i * l + j] = v;
                ubar[j] += v * inv_n;
            }
        }
        // social cost
        let mut stage = 0.0;
        let ubar_cost = quad(&plan.r_sum, &ubar);
        for i in 0..n {
            for j in 0..d {
                dev[j] = x[i * d + j] - xbar[j];
            }
            for j in 0..l {
                udev[j] = u[i * l + j] - ubar[j];
            }
            let qn = &plan.q_agent[i];
            let mut qq = 0.0;
            for a in 0..d {
                for b in 0..d {
                    qq += xbar[a] * (qn[a * d + b] + plan.q_bar[a * d + b]) * xbar[b];
                }
            }
            stage += quad(qn, &dev) + qq + quad(&plan.r, &udev) + ubar_cost;
        }
        total += disc * stage * inv_n;
        if t + 1 == horizon {
            break;
        }
        // dynamics: x^n <- A x^n + A_bar xbar + B u^n + B_bar ubar + eps0 + eps1^n
        mat_vec(&plan.a_bar, d, &xbar, &mut drift);
        mat_vec(&plan.b_bar, d, &ubar, &mut tmp_d);
        for j in 0..d {
            drift[j] += tmp_d[j];
        }
        noise.eps0_step.sample_into(&mut common, &mut e0);
        for (i, rng) in agents.iter_mut().enumerate() {
            noise.eps1_step.sample_into(rng, &mut e1);
            let xi: Vec<f64> = x[i * d..(i + 1) * d].to_vec();
            mat_vec(&plan.a, d, &xi, &mut dev);
            mat_vec(&plan.b, d, &u[i * l..(i + 1) * l], &mut tmp_d);
            for j in 0..d {
                x[i * d + j] = dev[j] + tmp_d[j] + drift[j] + e0[j] + e1[j];
            }
        }
        disc *= model.gamma;
    }
    Ok(CostSample {
        value: total,
        horizon,
        kind: SimulatorKind::Pop,
        stream,
    })
}

/// Population-level noise statistics at `t = 0` and `t = 1`, drawn with the
/// same stream layout as [`pop_rollout`].
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDraw {
    /// `eps1_0^(1) - mean_n eps1_0^(n)`.
    pub y0_first: Vec<f64>,
    /// `eps0_0 + mean_n eps1_0^(n)`.
    pub mu0: Vec<f64>,
    /// `eps1_1^(1) - mean_n eps1_1^(n)`.
    pub idio_dev_first: Vec<f64>,
    /// `eps0_1 + mean_n eps1_1^(n)`.
    pub mean_noise: Vec<f64>,
}

pub fn sample_population_noise(model: &MfcModel, n: usize, stream: StreamId) -> PopulationDraw {
    let d = model.state_dim();
    let noise = &model.noise;
    let inv_n = 1.0 / n as f64;
    let (mut common, mut agents) = population_rngs(stream, n);
    let e00 = noise.eps0_init.sample(&mut common);
    let mut init: Vec<Vec<f64>> = agents.iter_mut().map(|r| noise.eps1_init.sample(r)).collect();
    let e01 = noise.eps0_step.sample(&mut common);
    let step: Vec<Vec<f64>> = agents.iter_mut().map(|r| noise.eps1_step.sample(r)).collect();
    let mean = |v: &[Vec<f64>]| -> Vec<f64> {
        (0..d).map(|j| v.iter().map(|x| x[j]).sum::<f64>() * inv_n).collect()
    };
    let m0 = mean(&init);
    let m1 = mean(&step);
    let first0 = std::mem::take(&mut init[0]);
    PopulationDraw {
        y0_first: (0..d).map(|j| first0[j] - m0[j]).collect(),
        mu0: (0..d).map(|j| e00[j] + m0[j]).collect(),
        idio_dev_first: (0..d).map(|j| step[0][j] - m1[j]).collect(),
        mean_noise: (0..d).map(|j| e01[j] + m1[j]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zero_noise, Coefficients, GaussianReading, NoiseSpec, NoiseSuite};

    fn const_z0_model(c: f64) -> MfcModel {
        let noise = NoiseSuite::new(
            NoiseSpec::degenerate(vec![c]),
            NoiseSpec::zero(1),
            NoiseSpec::zero(1),
            NoiseSpec::zero(1),
        )
        .unwrap();
        MfcModel::new(
            Coefficients::scalar(0.6, 0.3, 0.5, 0.2, 1.0, 0.5, 0.4, 0.1),
            0.9,
            noise,
        )
        .unwrap()
    }

    fn z_closed_form(m: &MfcModel, l: f64, c: f64, horizon: usize) -> f64 {
        let f = m.closed_loop_z(&Mat::from_element(1, 1, l))[(0, 0)];
        let w = 1.5 + l * l * 0.5;
        (0..horizon)
            .map(|t| m.gamma.powi(t as i32) * w * (f.powi(t as i32) * c).powi(2))
            .sum()
    }

    #[test]
    fn deterministic_mkv_matches_closed_form() {
        let m = const_z0_model(2.0);
        let theta = ControlParams::scalar(0.3, 0.4);
        let s = mkv_rollout(&m, &theta, 40, StreamId::root(1)).unwrap();
        let expect = z_closed_form(&m, 0.4, 2.0, 40);
        assert!((s.value - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn single_step_horizon() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let theta = ControlParams::scalar(0.2, 0.1);
        let stream = StreamId::root(3);
        let s = mkv_rollout(&m, &theta, 1, stream).unwrap();
        let mut rng = stream.rng();
        let y0 = m.noise.eps1_init.sample(&mut rng)[0];
        let z0 = m.noise.eps0_init.sample(&mut rng)[0];
        let expect = y0 * y0 * (0.5 + 0.2 * 0.2 * 0.5) + z0 * z0 * (1.0 + 0.1 * 0.1 * 1.0);
        assert!((s.value - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_is_error() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        assert!(matches!(
            mkv_rollout(&m, &ControlParams::zeros(&m), 0, StreamId::root(0)),
            Err(Error::EmptyHorizon)
        ));
    }

    #[test]
    fn single_agent_ignores_k() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let pop = PopulationConfig::homogeneous(&m, 1).unwrap();
        let s = StreamId::root(11);
        let a = pop_rollout(&m, &pop, &ControlParams::scalar(0.0, 0.3), 50, s).unwrap();
        let b = pop_rollout(&m, &pop, &ControlParams::scalar(1.7, 0.3), 50, s).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn homogeneous_noiseless_population_matches_z_cost() {
        let c = 1.5;
        let m = const_z0_model(c);
        let theta = ControlParams::scalar(0.3, 0.4);
        let expect = z_closed_form(&m, 0.4, c, 30);
        for n in [1, 3, 8] {
            let pop = PopulationConfig::homogeneous(&m, n).unwrap();
            let s = pop_rollout(&m, &pop, &theta, 30, StreamId::root(n as u64)).unwrap();
            assert!((s.value - expect).abs() < 1e-12 * expect, "N={n}");
        }
    }

    #[test]
    fn variation_count_mismatch() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let mut pop = PopulationConfig::homogeneous(&m, 3).unwrap();
        pop.q_variations.pop();
        assert!(matches!(
            pop_rollout(&m, &pop, &ControlParams::zeros(&m), 5, StreamId::root(0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn variations_respect_radius() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let v = draw_q_variations(&m, 200, 0.1, StreamId::root(5)).unwrap();
        assert!(v.iter().all(|q| q[(0, 0)].abs() < 0.1));
        let zero = draw_q_variations(&m, 4, 0.0, StreamId::root(5)).unwrap();
        assert!(zero.iter().all(|q| q[(0, 0)] == 0.0));
        let err = draw_q_variations(&m, 4, 0.6, StreamId::root(5)).unwrap_err();
        assert!(err.to_string().contains("lambda_min(Q)"));
    }

    #[test]
    fn matrix_variations_respect_radius() {
        let c = Coefficients {
            a: Mat::identity(2, 2) * 0.5,
            a_bar: Mat::zeros(2, 2),
            b: Mat::identity(2, 2),
            b_bar: Mat::zeros(2, 2),
            q: Mat::identity(2, 2),
            q_bar: Mat::zeros(2, 2),
            r: Mat::identity(2, 2),
            r_bar: Mat::zeros(2, 2),
        };
        let m = MfcModel::new(c, 0.9, zero_noise(2)).unwrap();
        let v = draw_q_variations(&m, 50, 0.8, StreamId::root(9)).unwrap();
        for q in &v {
            assert!(op_norm(q) <= 0.8 + 1e-12);
            assert_eq!(q[(0, 1)], q[(1, 0)]);
        }
        PopulationConfig::new(&m, 50, 0.8, v).unwrap();
    }

    #[test]
    fn rollouts_are_nonnegative() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let pop = PopulationConfig::drawn(&m, 5, 0.1, StreamId::root(2)).unwrap();
        for s in 0..200 {
            let theta = ControlParams::scalar(0.5, -0.2);
            let id = StreamId::root(100 + s);
            assert!(mkv_rollout(&m, &theta, 20, id).unwrap().value >= 0.0);
            assert!(pop_rollout(&m, &pop, &theta, 20, id).unwrap().value >= 0.0);
        }
    }
}
