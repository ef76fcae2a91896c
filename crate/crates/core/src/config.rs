//! Experiment configuration files.
//!
//! INI-style: `[section]` headers, `key = value` lines, `#` comments.
//! Matrices are written row by row, rows separated by `;` and entries by
//! `,` (`A = 0.5, 0; 0, 0.5`). Lists use `,`. Unknown sections and keys are
//! rejected. [`ExperimentConfig::to_ini`] emits every key, and parsing its
//! output gives back the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Coefficients, ControlParams, MfcModel, NoiseSpec, NoiseSuite};
use crate::rng::{Role, StreamId};
use crate::simulate::PopulationConfig;
use crate::zo::{Method, Optimizer, PerturbationPolicy, Smoothing, ZoConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub a: Mat,
    pub a_bar: Mat,
    pub b: Mat,
    pub b_bar: Mat,
    pub q: Mat,
    pub q_bar: Mat,
    pub r: Mat,
    pub r_bar: Mat,
    pub gamma: f64,
}

/// How the spread of a Gaussian entry is given.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianParam {
    Cov(Mat),
    /// A factor `F` with `cov = F F'`; a scalar is the standard deviation.
    Std(Mat),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseEntry {
    Gaussian { mean: Vec<f64>, param: GaussianParam },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    Degenerate { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSection {
    pub eps0_init: NoiseEntry,
    pub eps1_init: NoiseEntry,
    pub eps0_step: NoiseEntry,
    pub eps1_step: NoiseEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSection {
    /// Population sizes evaluated (and trained on, for the `pop` method).
    pub n: Vec<usize>,
    pub h_tilde: f64,
    pub variation_seed: u64,
    /// Sizes compared by `compare-n`.
    pub compare_n: Vec<usize>,
    pub sweep_n: usize,
    pub h_grid: Vec<f64>,
    pub sweep_seeds: usize,
}

impl Default for PopulationSection {
    fn default() -> Self {
        PopulationSection {
            n: vec![1, 2, 10],
            h_tilde: 0.0,
            variation_seed: 0,
            compare_n: vec![2, 5, 10, 50],
            sweep_n: 100,
            h_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sweep_seeds: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Exact,
    Mkv,
    Pop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnSection {
    pub method: MethodKind,
    pub optimizer: OptimizerKind,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub m: usize,
    pub horizon: usize,
    pub tau: f64,
    pub smoothing: Smoothing,
    pub perturbation: PerturbationPolicy,
    pub k_max: usize,
    pub k0: Option<Mat>,
    pub l0: Option<Mat>,
    pub seed: u64,
    pub replicates: usize,
    pub eval_stride: usize,
}

impl Default for LearnSection {
    fn default() -> Self {
        LearnSection {
            method: MethodKind::Mkv,
            optimizer: OptimizerKind::Adam,
            eta: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            m: 1000,
            horizon: 50,
            tau: 0.1,
            smoothing: Smoothing::Parameter,
            perturbation: PerturbationPolicy::Accept,
            k_max: 5000,
            k0: None,
            l0: None,
            seed: 0,
            replicates: 3,
            eval_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: String,
    pub csv: bool,
    pub svg: bool,
    pub log_scale: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            csv: true,
            svg: true,
            log_scale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub population: Option<PopulationSection>,
    pub learn: Option<LearnSection>,
    pub output: Option<OutputSection>,
}

// ---------------------------------------------------------------- values

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn format_matrix(m: &Mat) -> String {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| fmt_f64(m[(i, j)]))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn format_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ")
}

fn parse_f64(s: &str, line: usize, key: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::config(line, format!("`{key}`: `{}` is not a number", s.trim())))
}

pub fn parse_matrix(s: &str, line: usize, key: &str) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| parse_f64(x, line, key))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config(line, format!("`{key}`: rows have different lengths")));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn parse_vec(s: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| parse_f64(x, line, key)).collect()
}

fn parse_usize_list(s: &str, line: usize, key: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(line, format!("`{key}`: `{}` is not a non-negative integer", x.trim())))
        })
        .collect()
}

fn parse_bool(s: &str, line: usize, key: &str) -> Result<bool> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::config(line, format!("`{key}`: expected true or false, got `{other}`"))),
    }
}

// ---------------------------------------------------------------- reader

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn req(&mut self, name: &str, key: &str) -> Result<Entry> {
        self.take(key)
            .ok_or_else(|| Error::config(self.line, format!("[{name}] is missing `{key}`")))
    }

    fn finish(self, name: &str) -> Result<()> {
        if let Some((k, e)) = self.entries.into_iter().next() {
            return Err(Error::config(e.line, format!("unknown key `{k}` in [{name}]")));
        }
        Ok(())
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            Some(e) => parse_f64(&e.value, e.line, key),
            None => Ok(default),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            Some(e) => e
                .value
                .parse()
                .map_err(|_| Error::config(e.line, format!("`{key}`: `{}` is not a non-negative integer", e.value))),
            None => Ok(default),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            Some(e) => e
                .value
                .parse()
                .map_err(|_| Error::config(e.line, format!("`{key}`: `{}` is not an unsigned integer", e.value))),
            None => Ok(default),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            Some(e) => parse_bool(&e.value, e.line, key),
            None => Ok(default),
        }
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(line, "unterminated section header"))?
                .trim()
                .to_string();
            if !matches!(name.as_str(), "model" | "noise" | "population" | "learn" | "output") {
                return Err(Error::config(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(&name) {
                return Err(Error::config(line, format!("duplicate section [{name}]")));
            }
            sections.insert(
                name.clone(),
                Section {
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let name = current
            .as_ref()
            .ok_or_else(|| Error::config(line, format!("key `{key}` outside of any section")))?;
        let section = sections.get_mut(name).expect("current section exists");
        if section.entries.contains_key(&key) {
            return Err(Error::config(line, format!("duplicate key `{key}` in [{name}]")));
        }
        if value.is_empty() {
            return Err(Error::config(line, format!("`{key}` has no value")));
        }
        section.entries.insert(key, Entry { value, line });
    }
    Ok(sections)
}

fn parse_noise_entry(sec: &mut Section, prefix: &str) -> Result<NoiseEntry> {
    let kind_key = format!("{prefix}.kind");
    let kind = sec.req("noise", &kind_key)?;
    let mut get = |field: &str| -> Result<Entry> { sec.req("noise", &format!("{prefix}.{field}")) };
    match kind.value.as_str() {
        "gaussian" => {
            let mean = get("mean")?;
            let mean = parse_vec(&mean.value, mean.line, "mean")?;
            let cov = sec.take(&format!("{prefix}.cov"));
            let std = sec.take(&format!("{prefix}.std"));
            let param = match (cov, std) {
                (Some(c), None) => GaussianParam::Cov(parse_matrix(&c.value, c.line, "cov")?),
                (None, Some(s)) => GaussianParam::Std(parse_matrix(&s.value, s.line, "std")?),
                _ => {
                    return Err(Error::config(
                        kind.line,
                        format!("`{prefix}` needs exactly one of `{prefix}.cov` or `{prefix}.std`"),
                    ))
                }
            };
            Ok(NoiseEntry::Gaussian { mean, param })
        }
        "uniform" => {
            let lo = get("lower")?;
            let hi = get("upper")?;
            Ok(NoiseEntry::Uniform {
                lower: parse_vec(&lo.value, lo.line, "lower")?,
                upper: parse_vec(&hi.value, hi.line, "upper")?,
            })
        }
        "degenerate" => {
            let v = get("value")?;
            Ok(NoiseEntry::Degenerate {
                value: parse_vec(&v.value, v.line, "value")?,
            })
        }
        other => Err(Error::config(
            kind.line,
            format!("`{kind_key}`: unknown noise kind `{other}` (gaussian, uniform, degenerate)"),
        )),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut model = sections
            .remove("model")
            .ok_or_else(|| Error::config(0, "missing [model] section"))?;
        let mut mat = |key: &str| -> Result<Mat> {
            let e = model.req("model", key)?;
            parse_matrix(&e.value, e.line, key)
        };
        let model_sec = ModelSection {
            a: mat("A")?,
            a_bar: mat("A_bar")?,
            b: mat("B")?,
            b_bar: mat("B_bar")?,
            q: mat("Q")?,
            q_bar: mat("Q_bar")?,
            r: mat("R")?,
            r_bar: mat("R_bar")?,
            gamma: {
                let e = model.req("model", "gamma")?;
                parse_f64(&e.value, e.line, "gamma")?
            },
        };
        model.finish("model")?;

        let mut noise = sections
            .remove("noise")
            .ok_or_else(|| Error::config(0, "missing [noise] section"))?;
        let noise_sec = NoiseSection {
            eps0_init: parse_noise_entry(&mut noise, "eps0_init")?,
            eps1_init: parse_noise_entry(&mut noise, "eps1_init")?,
            eps0_step: parse_noise_entry(&mut noise, "eps0_step")?,
            eps1_step: parse_noise_entry(&mut noise, "eps1_step")?,
        };
        noise.finish("noise")?;

        let population = match sections.remove("population") {
            None => None,
            Some(mut s) => {
                let d = PopulationSection::default();
                let list = |s: &mut Section, key: &str, default: Vec<usize>| -> Result<Vec<usize>> {
                    match s.take(key) {
                        Some(e) => parse_usize_list(&e.value, e.line, key),
                        None => Ok(default),
                    }
                };
                let n = list(&mut s, "n", d.n)?;
                let compare_n = list(&mut s, "compare_n", d.compare_n)?;
                let h_grid = match s.take("h_grid") {
                    Some(e) => parse_vec(&e.value, e.line, "h_grid")?,
                    None => d.h_grid,
                };
                let sec = PopulationSection {
                    n,
                    h_tilde: s.f64_or("h_tilde", d.h_tilde)?,
                    variation_seed: s.u64_or("variation_seed", d.variation_seed)?,
                    compare_n,
                    sweep_n: s.usize_or("sweep_n", d.sweep_n)?,
                    h_grid,
                    sweep_seeds: s.usize_or("sweep_seeds", d.sweep_seeds)?,
                };
                if sec.n.iter().chain(&sec.compare_n).any(|&n| n == 0) || sec.sweep_n == 0 {
                    return Err(Error::config(s.line, "population sizes must be >= 1"));
                }
                s.finish("population")?;
                Some(sec)
            }
        };

        let learn = match sections.remove("learn") {
            None => None,
            Some(mut s) => {
                let d = LearnSection::default();
                let method = match s.take("method") {
                    None => d.method,
                    Some(e) => match e.value.as_str() {
                        "exact" => MethodKind::Exact,
                        "mkv" => MethodKind::Mkv,
                        "pop" => MethodKind::Pop,
                        o => return Err(Error::config(e.line, format!("`method`: unknown `{o}` (exact, mkv, pop)"))),
                    },
                };
                let optimizer = match s.take("optimizer") {
                    None => d.optimizer,
                    Some(e) => match e.value.as_str() {
                        "gd" => OptimizerKind::Gd,
                        "adam" => OptimizerKind::Adam,
                        o => return Err(Error::config(e.line, format!("`optimizer`: unknown `{o}` (gd, adam)"))),
                    },
                };
                let smoothing = match s.take("smoothing") {
                    None => d.smoothing,
                    Some(e) => match e.value.as_str() {
                        "parameter" => Smoothing::Parameter,
                        "state" => Smoothing::State,
                        o => {
                            return Err(Error::config(
                                e.line,
                                format!("`smoothing`: unknown `{o}` (parameter, state)"),
                            ))
                        }
                    },
                };
                let perturbation = match s.take("perturbation") {
                    None => d.perturbation,
                    Some(e) => match e.value.as_str() {
                        "accept" => PerturbationPolicy::Accept,
                        "resample" => PerturbationPolicy::Resample,
                        o => {
                            return Err(Error::config(
                                e.line,
                                format!("`perturbation`: unknown `{o}` (accept, resample)"),
                            ))
                        }
                    },
                };
                let gain = |s: &mut Section, key: &str| -> Result<Option<Mat>> {
                    match s.take(key) {
                        Some(e) => Ok(Some(parse_matrix(&e.value, e.line, key)?)),
                        None => Ok(None),
                    }
                };
                let sec = LearnSection {
                    method,
                    optimizer,
                    eta: s.f64_or("eta", d.eta)?,
                    beta1: s.f64_or("beta1", d.beta1)?,
                    beta2: s.f64_or("beta2", d.beta2)?,
                    adam_eps: s.f64_or("adam_eps", d.adam_eps)?,
                    m: s.usize_or("M", d.m)?,
                    horizon: s.usize_or("T", d.horizon)?,
                    tau: s.f64_or("tau", d.tau)?,
                    smoothing,
                    perturbation,
                    k_max: s.usize_or("k_max", d.k_max)?,
                    k0: gain(&mut s, "K0")?,
                    l0: gain(&mut s, "L0")?,
                    seed: s.u64_or("seed", d.seed)?,
                    replicates: s.usize_or("replicates", d.replicates)?,
                    eval_stride: s.usize_or("eval_stride", d.eval_stride)?,
                };
                if sec.replicates == 0 || sec.eval_stride == 0 {
                    return Err(Error::config(s.line, "`replicates` and `eval_stride` must be >= 1"));
                }
                s.finish("learn")?;
                Some(sec)
            }
        };

        let output = match sections.remove("output") {
            None => None,
            Some(mut s) => {
                let d = OutputSection::default();
                let dir = s.take("dir").map_or(d.dir, |e| e.value);
                let sec = OutputSection {
                    dir,
                    csv: s.bool_or("csv", d.csv)?,
                    svg: s.bool_or("svg", d.svg)?,
                    log_scale: s.bool_or("log_scale", d.log_scale)?,
                };
                s.finish("output")?;
                Some(sec)
            }
        };

        Ok(ExperimentConfig {
            model: model_sec,
            noise: noise_sec,
            population,
            learn,
            output,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form: every key, fixed order, shortest round-trip floats.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        s.push_str("[model]\n");
        for (k, v) in [
            ("A", &m.a),
            ("A_bar", &m.a_bar),
            ("B", &m.b),
            ("B_bar", &m.b_bar),
            ("Q", &m.q),
            ("Q_bar", &m.q_bar),
            ("R", &m.r),
            ("R_bar", &m.r_bar),
        ] {
            let _ = writeln!(s, "{k} = {}", format_matrix(v));
        }
        let _ = writeln!(s, "gamma = {}", fmt_f64(m.gamma));

        s.push_str("\n[noise]\n");
        for (name, e) in [
            ("eps0_init", &self.noise.eps0_init),
            ("eps1_init", &self.noise.eps1_init),
            ("eps0_step", &self.noise.eps0_step),
            ("eps1_step", &self.noise.eps1_step),
        ] {
            match e {
                NoiseEntry::Gaussian { mean, param } => {
                    let _ = writeln!(s, "{name}.kind = gaussian");
                    let _ = writeln!(s, "{name}.mean = {}", format_vec(mean));
                    match param {
                        GaussianParam::Cov(c) => {
                            let _ = writeln!(s, "{name}.cov = {}", format_matrix(c));
                        }
                        GaussianParam::Std(f) => {
                            let _ = writeln!(s, "{name}.std = {}", format_matrix(f));
                        }
                    }
                }
                NoiseEntry::Uniform { lower, upper } => {
                    let _ = writeln!(s, "{name}.kind = uniform");
                    let _ = writeln!(s, "{name}.lower = {}", format_vec(lower));
                    let _ = writeln!(s, "{name}.upper = {}", format_vec(upper));
                }
                NoiseEntry::Degenerate { value } => {
                    let _ = writeln!(s, "{name}.kind = degenerate");
                    let _ = writeln!(s, "{name}.value = {}", format_vec(value));
                }
            }
        }

        if let Some(p) = &self.population {
            s.push_str("\n[population]\n");
            let _ = writeln!(s, "n = {}", format_list(&p.n));
            let _ = writeln!(s, "h_tilde = {}", fmt_f64(p.h_tilde));
            let _ = writeln!(s, "variation_seed = {}", p.variation_seed);
            let _ = writeln!(s, "compare_n = {}", format_list(&p.compare_n));
            let _ = writeln!(s, "sweep_n = {}", p.sweep_n);
            let _ = writeln!(s, "h_grid = {}", format_vec(&p.h_grid));
            let _ = writeln!(s, "sweep_seeds = {}", p.sweep_seeds);
        }

        if let Some(l) = &self.learn {
            s.push_str("\n[learn]\n");
            let method = match l.method {
                MethodKind::Exact => "exact",
                MethodKind::Mkv => "mkv",
                MethodKind::Pop => "pop",
            };
            let optimizer = match l.optimizer {
                OptimizerKind::Gd => "gd",
                OptimizerKind::Adam => "adam",
            };
            let smoothing = match l.smoothing {
                Smoothing::Parameter => "parameter",
                Smoothing::State => "state",
            };
            let _ = writeln!(s, "method = {method}");
            let _ = writeln!(s, "optimizer = {optimizer}");
            let _ = writeln!(s, "eta = {}", fmt_f64(l.eta));
            let _ = writeln!(s, "beta1 = {}", fmt_f64(l.beta1));
            let _ = writeln!(s, "beta2 = {}", fmt_f64(l.beta2));
            let _ = writeln!(s, "adam_eps = {}", fmt_f64(l.adam_eps));
            let _ = writeln!(s, "M = {}", l.m);
            let _ = writeln!(s, "T = {}", l.horizon);
            let _ = writeln!(s, "tau = {}", fmt_f64(l.tau));
            let _ = writeln!(s, "smoothing = {smoothing}");
            let perturbation = match l.perturbation {
                PerturbationPolicy::Accept => "accept",
                PerturbationPolicy::Resample => "resample",
            };
            let _ = writeln!(s, "perturbation = {perturbation}");
            let _ = writeln!(s, "k_max = {}", l.k_max);
            if let Some(k) = &l.k0 {
                let _ = writeln!(s, "K0 = {}", format_matrix(k));
            }
            if let Some(k) = &l.l0 {
                let _ = writeln!(s, "L0 = {}", format_matrix(k));
            }
            let _ = writeln!(s, "seed = {}", l.seed);
            let _ = writeln!(s, "replicates = {}", l.replicates);
            let _ = writeln!(s, "eval_stride = {}", l.eval_stride);
        }

        if let Some(o) = &self.output {
            s.push_str("\n[output]\n");
            let _ = writeln!(s, "dir = {}", o.dir);
            let _ = writeln!(s, "csv = {}", o.csv);
            let _ = writeln!(s, "svg = {}", o.svg);
            let _ = writeln!(s, "log_scale = {}", o.log_scale);
        }
        s
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_ini().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_model(&self) -> Result<MfcModel> {
        let m = &self.model;
        let noise = NoiseSuite::new(
            build_noise(&self.noise.eps0_init)?,
            build_noise(&self.noise.eps1_init)?,
            build_noise(&self.noise.eps0_step)?,
            build_noise(&self.noise.eps1_step)?,
        )?;
        MfcModel::new(
            Coefficients {
                a: m.a.clone(),
                a_bar: m.a_bar.clone(),
                b: m.b.clone(),
                b_bar: m.b_bar.clone(),
                q: m.q.clone(),
                q_bar: m.q_bar.clone(),
                r: m.r.clone(),
                r_bar: m.r_bar.clone(),
            },
            m.gamma,
            noise,
        )
    }

    pub fn learn_or_default(&self) -> LearnSection {
        self.learn.clone().unwrap_or_default()
    }

    pub fn population_or_default(&self) -> PopulationSection {
        self.population.clone().unwrap_or_default()
    }

    pub fn output_or_default(&self) -> OutputSection {
        self.output.clone().unwrap_or_default()
    }
}

pub fn build_noise(e: &NoiseEntry) -> Result<NoiseSpec> {
    match e {
        NoiseEntry::Gaussian { mean, param } => match param {
            GaussianParam::Cov(c) => NoiseSpec::gaussian(mean.clone(), c.clone()),
            GaussianParam::Std(f) => NoiseSpec::gaussian_from_factor(mean.clone(), f.clone()),
        },
        NoiseEntry::Uniform { lower, upper } => NoiseSpec::uniform(lower.clone(), upper.clone()),
        NoiseEntry::Degenerate { value } => Ok(NoiseSpec::degenerate(value.clone())),
    }
}

impl LearnSection {
    pub fn initial_theta(&self, model: &MfcModel) -> Result<ControlParams> {
        let z = ControlParams::zeros(model);
        let theta = ControlParams::new(
            self.k0.clone().unwrap_or(z.k),
            self.l0.clone().unwrap_or(z.l),
        );
        theta.check_dims(model)?;
        Ok(theta)
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Gd => Optimizer::Gd { eta: self.eta },
            OptimizerKind::Adam => Optimizer::Adam {
                eta: self.eta,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
        }
    }

    pub fn zo(&self) -> ZoConfig {
        ZoConfig {
            m: self.m,
            horizon: self.horizon,
            tau: self.tau,
            smoothing: self.smoothing,
            perturbation: self.perturbation,
        }
    }
}

impl PopulationSection {
    /// Frozen population of size `n` drawn from `variation_seed`.
    pub fn population(&self, model: &MfcModel, n: usize) -> Result<PopulationConfig> {
        PopulationConfig::drawn(
            model,
            n,
            self.h_tilde,
            StreamId::root(self.variation_seed).child(Role::Variations, n as u64),
        )
    }
}

impl MethodKind {
    pub fn method(self, pop: Option<PopulationConfig>) -> Result<Method> {
        Ok(match self {
            MethodKind::Exact => Method::Exact,
            MethodKind::Mkv => Method::Mkv,
            MethodKind::Pop => Method::Pop(
                pop.ok_or_else(|| Error::Validation("the pop method needs a population".into()))?,
            ),
        })
    }
}
