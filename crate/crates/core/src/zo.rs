//! Zeroth-order gradient estimation and the policy-gradient driver.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::analytic::{exact_cost, exact_gradient, exact_pg_run, optimal_gains, GradientEstimate, GradientMeta, GradientSource, MAX_HALVINGS};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{is_admissible, k_admissible, l_admissible, require_admissible, ControlParams, MfcModel};
use crate::rng::{Role, StreamId};
use crate::simulate::{mkv_rollout, pop_rollout, PopulationConfig};
use crate::trace::{ConvergenceTrace, TraceMeta, TraceRecord};

/// Redraws allowed for a perturbation direction that leaves the admissible set.
pub const MAX_DIRECTION_ATTEMPTS: usize = 20;

/// Uniform draw on the Frobenius sphere of radius `tau` in `R^{rows x cols}`.
pub fn sample_sphere<R: Rng + ?Sized>(rows: usize, cols: usize, tau: f64, rng: &mut R) -> Result<Mat> {
    if !(tau > 0.0) {
        return Err(Error::Validation(format!("sphere radius must be positive, got {tau}")));
    }
    loop {
        let v = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return Ok(v * (tau / n));
        }
    }
}

/// Which dimension multiplies `1/tau^2` in the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// `l * d`, the number of entries in each block.
    #[default]
    Parameter,
    /// `d`, the state dimension.
    State,
}

/// What to do with a perturbed `theta_i` outside the admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbationPolicy {
    /// Keep it: the `T`-step rollout cost is finite for any parameters.
    #[default]
    Accept,
    /// Redraw the offending block's direction, up to
    /// [`MAX_DIRECTION_ATTEMPTS`] times.
    Resample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoConfig {
    pub m: usize,
    pub horizon: usize,
    pub tau: f64,
    pub smoothing: Smoothing,
    pub perturbation: PerturbationPolicy,
}

impl ZoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Validation("number of perturbations must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::EmptyHorizon);
        }
        if !(self.tau > 0.0) {
            return Err(Error::Validation(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn smoothing_dim(&self, model: &MfcModel) -> usize {
        match self.smoothing {
            Smoothing::Parameter => model.state_dim() * model.control_dim(),
            Smoothing::State => model.state_dim(),
        }
    }
}

fn admissible_direction(
    stream: StreamId,
    role: Role,
    tau: f64,
    base: &Mat,
    policy: PerturbationPolicy,
    ok: impl Fn(&Mat) -> bool,
) -> Result<Mat> {
    if policy == PerturbationPolicy::Accept {
        return sample_sphere(base.nrows(), base.ncols(), tau, &mut stream.child(role, 0).rng());
    }
    for attempt in 0..MAX_DIRECTION_ATTEMPTS {
        let mut rng = stream.child(role, attempt as u64).rng();
        let v = sample_sphere(base.nrows(), base.ncols(), tau, &mut rng)?;
        if ok(&(base + &v)) {
            return Ok(v);
        }
    }
    let block = if role == Role::DirectionK { "K" } else { "L" };
    Err(Error::Admissibility(format!(
        "no admissible perturbation of {block} at radius {tau} after {MAX_DIRECTION_ATTEMPTS} draws"
    )))
}

/// One perturbation `i`: its directions and realised cost.
struct Probe {
    cost: f64,
    vk: Mat,
    vl: Mat,
}

fn estimate_with<F>(
    model: &MfcModel,
    theta: &ControlParams,
    cfg: &ZoConfig,
    stream: StreamId,
    source: GradientSource,
    agents: Option<usize>,
    rollout: F,
) -> Result<GradientEstimate>
where
    F: Fn(&ControlParams, StreamId) -> Result<f64> + Sync,
{
    cfg.validate()?;
    theta.check_dims(model)?;
    require_admissible(model, theta)?;
    let probes: Vec<Result<Probe>> = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let s = stream.child(Role::Perturbation, i as u64);
            let vk = admissible_direction(s, Role::DirectionK, cfg.tau, &theta.k, cfg.perturbation, |k| {
                k_admissible(model, k)
            })?;
            let vl = admissible_direction(s, Role::DirectionL, cfg.tau, &theta.l, cfg.perturbation, |l| {
                l_admissible(model, l)
            })?;
            let perturbed = ControlParams::new(&theta.k + &vk, &theta.l + &vl);
            let cost = rollout(&perturbed, s.child(Role::Rollout, 0))?;
            if !cost.is_finite() {
                return Err(Error::numerics(format!("rollout {i} overflowed"), cost));
            }
            Ok(Probe { cost, vk, vl })
        })
        .collect();
    let mut gk = Mat::zeros(theta.k.nrows(), theta.k.ncols());
    let mut gl = Mat::zeros(theta.l.nrows(), theta.l.ncols());
    for p in probes {
        let p = p?;
        gk += &p.vk * p.cost;
        gl += &p.vl * p.cost;
    }
    let scale = cfg.smoothing_dim(model) as f64 / (cfg.tau * cfg.tau) / cfg.m as f64;
    Ok(GradientEstimate {
        grad_k: gk * scale,
        grad_l: gl * scale,
        source,
        meta: GradientMeta {
            perturbations: Some(cfg.m),
            horizon: Some(cfg.horizon),
            tau: Some(cfg.tau),
            agents,
            step: None,
        },
    })
}

/// Estimator driven by the MKV simulator.
pub fn estimate_gradient_mkv(
    model: &MfcModel,
    theta: &ControlParams,
    cfg: &ZoConfig,
    stream: StreamId,
) -> Result<GradientEstimate> {
    estimate_with(model, theta, cfg, stream, GradientSource::Mkv, None, |th, s| {
        Ok(mkv_rollout(model, th, cfg.horizon, s)?.value)
    })
}

/// Estimator driven by the population simulator; every agent plays the same
/// perturbed parameters.
pub fn estimate_gradient_pop(
    model: &MfcModel,
    pop: &PopulationConfig,
    theta: &ControlParams,
    cfg: &ZoConfig,
    stream: StreamId,
) -> Result<GradientEstimate> {
    estimate_with(model, theta, cfg, stream, GradientSource::Pop, Some(pop.n), |th, s| {
        Ok(pop_rollout(model, pop, th, cfg.horizon, s)?.value)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Gd { eta: f64 },
    Adam { eta: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(eta: f64, beta1: f64, beta2: f64) -> Self {
        Optimizer::Adam { eta, beta1, beta2, eps: 1e-8 }
    }

    pub fn eta(&self) -> f64 {
        match *self {
            Optimizer::Gd { eta } | Optimizer::Adam { eta, .. } => eta,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Gd { .. } => "gd",
            Optimizer::Adam { .. } => "adam",
        }
    }

    fn validate(&self) -> Result<()> {
        let eta = self.eta();
        if !(eta > 0.0) {
            return Err(Error::Validation(format!("learning rate must be positive, got {eta}")));
        }
        if let Optimizer::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Validation(format!(
                    "Adam needs beta1, beta2 in [0, 1) and eps > 0 (got {beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Exact,
    Mkv,
    Pop(PopulationConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Mkv => "mkv",
            Method::Pop(_) => "pop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgOptions {
    pub seed: u64,
    /// Exact cost is recorded every `eval_stride` iterations (and at the last).
    pub eval_stride: usize,
    /// Early stop on relative error for the exact method.
    pub eps_stop: f64,
}

impl Default for PgOptions {
    fn default() -> Self {
        PgOptions { seed: 0, eval_stride: 1, eps_stop: 0.0 }
    }
}

/// Blockwise Adam moments.
struct AdamState {
    mk: Mat,
    vk: Mat,
    ml: Mat,
    vl: Mat,
    t: i32,
}

impl AdamState {
    fn new(theta: &ControlParams) -> Self {
        let z = |m: &Mat| Mat::zeros(m.nrows(), m.ncols());
        AdamState { mk: z(&theta.k), vk: z(&theta.k), ml: z(&theta.l), vl: z(&theta.l), t: 0 }
    }

    fn direction(&mut self, g: &GradientEstimate, beta1: f64, beta2: f64, eps: f64) -> (Mat, Mat) {
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let block = |m: &mut Mat, v: &mut Mat, grad: &Mat| -> Mat {
            *m = &*m * beta1 + grad * (1.0 - beta1);
            *v = &*v * beta2 + grad.component_mul(grad) * (1.0 - beta2);
            Mat::from_fn(grad.nrows(), grad.ncols(), |i, j| {
                (m[(i, j)] / c1) / ((v[(i, j)] / c2).sqrt() + eps)
            })
        };
        let dk = block(&mut self.mk, &mut self.vk, &g.grad_k);
        let dl = block(&mut self.ml, &mut self.vl, &g.grad_l);
        (dk, dl)
    }
}

/// Policy-gradient loop. Exact gradient descent delegates to
/// [`exact_pg_run`]; every other combination uses the loop below, which
/// halves the step only to stay admissible (the model-free update never sees
/// the cost). The recorded cost is the exact one and is evaluation-only.
pub fn pg_run(
    model: &MfcModel,
    theta0: &ControlParams,
    method: &Method,
    optimizer: &Optimizer,
    k_max: usize,
    cfg: Option<&ZoConfig>,
    opts: &PgOptions,
) -> Result<ConvergenceTrace> {
    optimizer.validate()?;
    theta0.check_dims(model)?;
    require_admissible(model, theta0)?;
    if let (Method::Exact, Optimizer::Gd { eta }) = (method, optimizer) {
        let mut trace = exact_pg_run(model, theta0, *eta, k_max, opts.eps_stop)?;
        trace.meta.seed = opts.seed;
        return Ok(trace);
    }
    let zo = match method {
        Method::Exact => None,
        _ => Some(cfg.ok_or_else(|| Error::Validation("model-free methods need a ZoConfig".into()))?),
    };
    if let Some(c) = zo {
        c.validate()?;
    }
    if let Method::Pop(pop) = method {
        if pop.q_variations.len() != pop.n {
            return Err(Error::Dimension("population variations do not match N".into()));
        }
    }
    let stride = opts.eval_stride.max(1);
    let reference = optimal_gains(model).ok().map(|o| o.cost.total);
    let mut notes = vec![("eta".to_string(), format!("{}", optimizer.eta()))];
    if let Optimizer::Adam { beta1, beta2, eps, .. } = optimizer {
        notes.push(("beta1".into(), format!("{beta1}")));
        notes.push(("beta2".into(), format!("{beta2}")));
        notes.push(("adam_eps".into(), format!("{eps}")));
    }
    if let Some(c) = zo {
        notes.push(("M".into(), c.m.to_string()));
        notes.push(("T".into(), c.horizon.to_string()));
        notes.push(("tau".into(), format!("{}", c.tau)));
    }
    if let Method::Pop(p) = method {
        notes.push(("N".into(), p.n.to_string()));
        notes.push(("h_tilde".into(), format!("{}", p.h_tilde)));
    }
    let mut trace = ConvergenceTrace::new(TraceMeta {
        method: method.name().into(),
        optimizer: optimizer.name().into(),
        seed: opts.seed,
        reference_cost: reference,
        notes,
    });
    let root = StreamId::root(opts.seed);
    let evaluate = |theta: &ControlParams, k: usize| -> Result<(f64, f64)> {
        if !k.is_multiple_of(stride) && k != k_max {
            return Ok((f64::NAN, f64::NAN));
        }
        let c = exact_cost(model, theta)?.total;
        Ok((c, reference.map_or(f64::NAN, |s| (c - s) / s)))
    };

    let mut theta = theta0.clone();
    let mut adam = AdamState::new(&theta);
    for k in 0..k_max {
        let (cost, rel) = evaluate(&theta, k)?;
        let stream = root.child(Role::Iteration, k as u64);
        let grad = match method {
            Method::Exact => exact_gradient(model, &theta)?,
            Method::Mkv => estimate_gradient_mkv(model, &theta, zo.expect("checked"), stream)?,
            Method::Pop(pop) => estimate_gradient_pop(model, pop, &theta, zo.expect("checked"), stream)?,
        };
        trace.records.push(TraceRecord {
            k,
            theta: theta.clone(),
            cost,
            rel_error_mf: rel,
            population: Vec::new(),
            grad_norm: grad.norm(),
        });
        let (dk, dl) = match *optimizer {
            Optimizer::Gd { .. } => (grad.grad_k.clone(), grad.grad_l.clone()),
            Optimizer::Adam { beta1, beta2, eps, .. } => adam.direction(&grad, beta1, beta2, eps),
        };
        let mut step = optimizer.eta();
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = ControlParams::new(&theta.k - &dk * step, &theta.l - &dl * step);
            if is_admissible(model, &cand) {
                next = Some(cand);
                break;
            }
            step *= 0.5;
        }
        match next {
            Some(t) => theta = t,
            None => {
                return Err(Error::Step { iteration: k + 1, trace: Box::new(trace) });
            }
        }
    }
    let (cost, rel) = evaluate(&theta, k_max)?;
    trace.records.push(TraceRecord {
        k: k_max,
        theta,
        cost,
        rel_error_mf: rel,
        population: Vec::new(),
        grad_norm: f64::NAN,
    });
    Ok(trace)
}

/// Smallest horizon `T >= 2` whose truncated covariance is within `eps` of
/// the infinite-horizon one:
/// `T = ceil((1/ln(1/g) * (ln(c0 / (eps (1-g)^2)) + 1))^2)`.
pub fn truncation_horizon(eps: f64, gamma_theta: f64, c0_var: f64) -> Result<usize> {
    if !(gamma_theta < 1.0) {
        return Err(Error::Admissibility(format!("gamma_theta = {gamma_theta} is not below 1")));
    }
    if !(gamma_theta > 0.0) || !(eps > 0.0) || !(c0_var > 0.0) {
        return Err(Error::Validation(format!(
            "truncation horizon needs gamma_theta in (0, 1), eps > 0 and C0 > 0 (got {gamma_theta}, {eps}, {c0_var})"
        )));
    }
    let inner = (c0_var / (eps * (1.0 - gamma_theta).powi(2))).ln() + 1.0;
    if inner <= 0.0 {
        return Ok(2);
    }
    let h = (inner / (1.0 / gamma_theta).ln()).powi(2);
    Ok((h.ceil() as usize).max(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zero_noise, Coefficients, GaussianReading};

    #[test]
    fn sphere_has_radius_tau() {
        let mut rng = StreamId::root(1).rng();
        for (r, c) in [(1, 1), (2, 3), (3, 3)] {
            let v = sample_sphere(r, c, 0.3, &mut rng).unwrap();
            assert!((v.norm() - 0.3).abs() < 1e-12);
        }
        let v = sample_sphere(1, 1, 0.1, &mut rng).unwrap();
        assert!((v[(0, 0)].abs() - 0.1).abs() < 1e-15);
        assert!(sample_sphere(1, 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn zero_cost_gives_zero_estimate() {
        let c = Coefficients::scalar(0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0);
        let m = MfcModel::new(c, 0.9, zero_noise(1)).unwrap();
        let cfg = ZoConfig { m: 1, horizon: 10, tau: 0.1, smoothing: Smoothing::Parameter, perturbation: PerturbationPolicy::Accept };
        let g = estimate_gradient_mkv(&m, &ControlParams::zeros(&m), &cfg, StreamId::root(0)).unwrap();
        assert_eq!(g.grad_k[(0, 0)], 0.0);
        assert_eq!(g.grad_l[(0, 0)], 0.0);
        assert_eq!(g.source, GradientSource::Mkv);
    }

    #[test]
    fn estimates_are_reproducible() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let cfg = ZoConfig { m: 64, horizon: 20, tau: 0.1, smoothing: Smoothing::Parameter, perturbation: PerturbationPolicy::Accept };
        let th = ControlParams::scalar(0.1, 0.2);
        let a = estimate_gradient_mkv(&m, &th, &cfg, StreamId::root(4)).unwrap();
        let b = estimate_gradient_mkv(&m, &th, &cfg, StreamId::root(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn horizon_formula() {
        let g: f64 = 0.9;
        let expect = ((1.0 / (1.0 / g).ln()) * ((1e5f64).ln() + 1.0)).powi(2).ceil() as usize;
        assert_eq!(truncation_horizon(1e-3, 0.9, 1.0).unwrap(), expect);
        assert_eq!(truncation_horizon(1e6, 0.5, 1.0).unwrap(), 2);
        assert!(truncation_horizon(1e-4, 0.9, 1.0).unwrap() > truncation_horizon(1e-2, 0.9, 1.0).unwrap());
        assert!(matches!(truncation_horizon(1e-3, 1.0, 1.0), Err(Error::Admissibility(_))));
    }

    #[test]
    fn exact_gd_delegates() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let th = ControlParams::zeros(&m);
        let a = pg_run(&m, &th, &Method::Exact, &Optimizer::Gd { eta: 0.01 }, 50, None, &PgOptions::default()).unwrap();
        let b = exact_pg_run(&m, &th, 0.01, 50, 0.0).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn model_free_needs_config() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let r = pg_run(&m, &ControlParams::zeros(&m), &Method::Mkv, &Optimizer::Gd { eta: 0.01 }, 5, None, &PgOptions::default());
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn adam_trace_has_increasing_k() {
        let m = MfcModel::scalar_reference(GaussianReading::Variance);
        let cfg = ZoConfig { m: 20, horizon: 20, tau: 0.1, smoothing: Smoothing::Parameter, perturbation: PerturbationPolicy::Accept };
        let t = pg_run(
            &m,
            &ControlParams::zeros(&m),
            &Method::Mkv,
            &Optimizer::adam(0.01, 0.9, 0.999),
            10,
            Some(&cfg),
            &PgOptions { seed: 3, eval_stride: 4, eps_stop: 0.0 },
        )
        .unwrap();
        assert_eq!(t.records.len(), 11);
        assert!(t.records.windows(2).all(|w| w[0].k < w[1].k));
        assert!(t.records[0].cost.is_finite());
        assert!(t.records[1].cost.is_nan());
        assert!(t.records[10].cost.is_finite());
    }
}
