use std::fmt::Write as _;
use std::path::PathBuf;

use super::output::{num, table_csv, trace_csv, write_atomic, write_svg};
use super::CommonArgs;
use crate::analytic::{optimal_gains, OptimalSolution};
use crate::config::{ExperimentConfig, MethodKind};
use crate::error::{Error, Result};
use crate::finite::{attach_population_costs, build_stacked, eval_social_cost, heterogeneity_sweep, max_diagonal_deviation, mean_std, phi_mkv, solve_n_agent_optimal, MAX_STACKED_DIM};
use crate::model::{validate_model, MfcModel};
use crate::simulate::PopulationConfig;
use crate::svg::{Chart, Series};
use crate::trace::ConvergenceTrace;
use crate::zo::{pg_run, PgOptions};

/// Everything a command needs, resolved from the config and flags.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub model: MfcModel,
    pub out_dir: PathBuf,
    pub hash: String,
}

impl RunContext {
    pub fn load(args: &CommonArgs) -> Result<Self> {
        let mut config = ExperimentConfig::load(&args.config).map_err(|e| match e {
            Error::Io(io) => Error::Validation(format!("cannot read {}: {io}", args.config.display())),
            other => other,
        })?;
        if let Some(seed) = args.seed {
            if let Some(l) = config.learn.as_mut() {
                l.seed = seed;
            }
            if let Some(p) = config.population.as_mut() {
                p.variation_seed = seed;
            }
        }
        let model = config.build_model()?;
        let report = validate_model(&model)?;
        if !report.usable() {
            return Err(Error::Validation(format!("model rejected\n{report}")));
        }
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        let out_dir = args
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(config.output_or_default().dir));
        let hash = config.hash();
        Ok(RunContext {
            config,
            model,
            out_dir,
            hash,
        })
    }

    fn populations(&self, sizes: &[usize]) -> Result<Vec<PopulationConfig>> {
        let p = self.config.population_or_default();
        sizes.iter().map(|&n| p.population(&self.model, n)).collect()
    }

    fn stackable(&self, n: usize) -> bool {
        n * self.model.state_dim().max(self.model.control_dim()) <= MAX_STACKED_DIM
    }
}

fn fmt_mat(m: &crate::linalg::Mat) -> String {
    crate::config::format_matrix(m)
}

pub fn cmd_solve(ctx: &RunContext) -> Result<()> {
    let opt = optimal_gains(&ctx.model)?;
    let mut rep = String::new();
    let _ = writeln!(rep, "config {}", ctx.hash);
    let _ = write!(rep, "{}", validate_model(&ctx.model)?);
    let _ = writeln!(rep, "K* = {}", fmt_mat(&opt.theta.k));
    let _ = writeln!(rep, "L* = {}", fmt_mat(&opt.theta.l));
    let _ = writeln!(rep, "C* = {}", num(opt.cost.total));
    let _ = writeln!(rep, "C*_y = {}", num(opt.cost.c_y));
    let _ = writeln!(rep, "C*_z = {}", num(opt.cost.c_z));
    let _ = writeln!(rep, "riccati residual = {:.3e}", opt.residual);
    if ctx.config.population.is_some() {
        let sizes = ctx.config.population_or_default().n;
        for pop in ctx.populations(&sizes)? {
            if !ctx.stackable(pop.n) {
                let _ = writeln!(rep, "N = {}: skipped (stacked system too large)", pop.n);
                continue;
            }
            let stacked = build_stacked(&ctx.model, &pop)?;
            let best = solve_n_agent_optimal(&stacked)?;
            let _ = writeln!(rep, "N = {}: C*,N = {}", pop.n, num(best.cost));
            let _ = writeln!(rep, "  Phi*,N = {}", fmt_mat(&best.phi.phi));
        }
    }
    print!("{rep}");
    write_atomic(&ctx.out_dir.join("solution.txt"), rep.as_bytes())
}

/// Runs one group of replicates; a failed run flushes its partial trace.
fn run_group(
    ctx: &RunContext,
    label: &str,
    train_pop: Option<PopulationConfig>,
    eval_pops: &[PopulationConfig],
) -> Result<Vec<ConvergenceTrace>> {
    let learn = ctx.config.learn_or_default();
    let theta0 = learn.initial_theta(&ctx.model)?;
    let method = learn.method.method(train_pop)?;
    let zo = learn.zo();
    let out = ctx.config.output_or_default();
    let mut traces = Vec::with_capacity(learn.replicates);
    for r in 0..learn.replicates {
        let seed = learn.seed.wrapping_add(r as u64);
        let opts = PgOptions {
            seed,
            eval_stride: learn.eval_stride,
            eps_stop: 0.0,
        };
        let path = ctx.out_dir.join(format!("trace_{label}_seed{seed}.csv"));
        let mut trace = match pg_run(&ctx.model, &theta0, &method, &learn.optimizer(), learn.k_max, Some(&zo), &opts) {
            Ok(t) => t,
            Err(Error::Step { iteration, trace }) => {
                if out.csv {
                    write_atomic(&path, trace_csv(&trace, &ctx.hash).as_bytes())?;
                }
                return Err(Error::Step { iteration, trace });
            }
            Err(e) => return Err(e),
        };
        attach_population_costs(&mut trace, &ctx.model, eval_pops)?;
        if out.csv {
            write_atomic(&path, trace_csv(&trace, &ctx.hash).as_bytes())?;
        }
        let last = trace.last().expect("non-empty trace");
        eprintln!(
            "{label} seed {seed}: {} steps, final C = {}, rel err = {:.3e}",
            trace.steps(),
            num(last.cost),
            last.rel_error_mf
        );
        traces.push(trace);
    }
    Ok(traces)
}

/// Per-record mean and sample std across replicates of `f(record)`.
fn band(traces: &[ConvergenceTrace], f: impl Fn(&crate::trace::TraceRecord) -> f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let mut ks = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for i in 0..len {
        let vals: Vec<f64> = traces.iter().map(|t| f(&t.records[i])).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let (m, s) = mean_std(&vals);
        ks.push(traces[0].records[i].k as f64);
        mean.push(m);
        std.push(s);
    }
    (ks, mean, std)
}

fn band_series(label: String, ks: Vec<f64>, mean: Vec<f64>, std: Vec<f64>) -> Series {
    let lo = mean.iter().zip(&std).map(|(m, s)| m - s).collect();
    let hi = mean.iter().zip(&std).map(|(m, s)| m + s).collect();
    Series {
        label,
        x: ks,
        y: mean,
        band: Some((lo, hi)),
        dashed: false,
    }
}

fn summary_csv(ctx: &RunContext, label: &str, traces: &[ConvergenceTrace]) -> Result<()> {
    let (l, d) = ctx.model.k_shape();
    let mut cols: Vec<String> = vec!["k".into(), "C_mf_mean".into(), "C_mf_std".into(), "rel_err_mf_mean".into(), "rel_err_mf_std".into()];
    let mut getters: Vec<Box<dyn Fn(&crate::trace::TraceRecord) -> f64>> = vec![
        Box::new(|r| r.cost),
        Box::new(|r| r.rel_error_mf),
    ];
    let pops: Vec<usize> = traces[0].records[0].population.iter().map(|p| p.n).collect();
    for (idx, n) in pops.iter().enumerate() {
        cols.push(format!("C_pop{n}_mean"));
        cols.push(format!("C_pop{n}_std"));
        getters.push(Box::new(move |r| r.population.get(idx).map_or(f64::NAN, |p| p.cost)));
    }
    for block in 0..2 {
        for i in 0..l {
            for j in 0..d {
                let name = if block == 0 { "K" } else { "L" };
                cols.push(format!("{name}_{i}_{j}_mean"));
                cols.push(format!("{name}_{i}_{j}_std"));
                getters.push(Box::new(move |r| if block == 0 { r.theta.k[(i, j)] } else { r.theta.l[(i, j)] }));
            }
        }
    }
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let mut rows = Vec::new();
    for i in 0..len {
        let mut row = vec![traces[0].records[i].k as f64];
        for g in &getters {
            let vals: Vec<f64> = traces.iter().map(|t| g(&t.records[i])).collect();
            let (m, s) = mean_std(&vals);
            row.push(m);
            row.push(s);
        }
        rows.push(row);
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let text = table_csv(&format!("summary-{label}"), &ctx.hash, &col_refs, &rows);
    write_atomic(&ctx.out_dir.join(format!("summary_{label}.csv")), text.as_bytes())
}

pub fn cmd_pg(ctx: &RunContext) -> Result<()> {
    let learn = ctx
        .config
        .learn
        .clone()
        .ok_or_else(|| Error::config(0, "the pg command needs a [learn] section"))?;
    let opt = optimal_gains(&ctx.model)?;
    let out = ctx.config.output_or_default();
    let sizes: Vec<usize> = ctx
        .config
        .population
        .as_ref()
        .map(|p| p.n.clone())
        .unwrap_or_default();
    let eval_sizes: Vec<usize> = sizes.iter().copied().filter(|&n| ctx.stackable(n)).collect();
    let eval_pops = ctx.populations(&eval_sizes)?;

    let mut groups: Vec<(String, Vec<ConvergenceTrace>)> = Vec::new();
    match learn.method {
        MethodKind::Pop => {
            if sizes.is_empty() {
                return Err(Error::config(0, "the pop method needs a [population] section with n"));
            }
            for pop in ctx.populations(&sizes)? {
                let label = format!("pop_N{}", pop.n);
                let traces = run_group(ctx, &label, Some(pop), &eval_pops)?;
                groups.push((label, traces));
            }
        }
        kind => {
            let label = if kind == MethodKind::Exact { "exact" } else { "mkv" }.to_string();
            let traces = run_group(ctx, &label, None, &eval_pops)?;
            groups.push((label, traces));
        }
    }

    if out.csv {
        for (label, traces) in &groups {
            summary_csv(ctx, label, traces)?;
        }
    }
    if out.svg {
        pg_charts(ctx, &groups, &opt, out.log_scale)?;
    }
    Ok(())
}

fn pg_charts(ctx: &RunContext, groups: &[(String, Vec<ConvergenceTrace>)], opt: &OptimalSolution, log_scale: bool) -> Result<()> {
    let k_end = groups
        .iter()
        .flat_map(|(_, t)| t.iter().filter_map(|t| t.last().map(|r| r.k)))
        .max()
        .unwrap_or(1) as f64;
    let chart = |title: &str, y: &str, log: bool, series: Vec<Series>| Chart {
        title: title.into(),
        x_label: "iteration k".into(),
        y_label: y.into(),
        log_y: log,
        series,
        config_hash: ctx.hash.clone(),
    };

    let mut cost = Vec::new();
    let mut rel = Vec::new();
    for (label, traces) in groups {
        let (ks, m, s) = band(traces, |r| r.cost);
        cost.push(band_series(format!("{label} C"), ks, m, s));
        let (ks, m, s) = band(traces, |r| r.rel_error_mf);
        rel.push(band_series(label.clone(), ks, m, s));
        let npops = traces[0].records.first().map_or(0, |r| r.population.len());
        for idx in 0..npops {
            let n = traces[0].records[0].population[idx].n;
            let (ks, m, s) = band(traces, |r| r.population.get(idx).map_or(f64::NAN, |p| p.cost));
            cost.push(band_series(format!("{label} C^N, N={n}"), ks, m, s));
        }
    }
    cost.push(Series::reference("C*", 0.0, k_end, opt.cost.total));
    write_svg(&ctx.out_dir, "pg_cost.svg", &chart("Mean-field and N-agent cost", "cost", false, cost))?;
    write_svg(
        &ctx.out_dir,
        "pg_rel_error.svg",
        &chart("Relative error (C - C*) / C*", "relative error", log_scale, rel),
    )?;

    let (l, d) = ctx.model.k_shape();
    for (name, star) in [("K", &opt.theta.k), ("L", &opt.theta.l)] {
        let mut series = Vec::new();
        for i in 0..l {
            for j in 0..d {
                for (label, traces) in groups {
                    let (ks, m, s) = band(traces, |r| if name == "K" { r.theta.k[(i, j)] } else { r.theta.l[(i, j)] });
                    series.push(band_series(format!("{label} {name}[{i},{j}]"), ks, m, s));
                }
                series.push(Series::reference(format!("{name}*[{i},{j}]"), 0.0, k_end, star[(i, j)]));
            }
        }
        write_svg(
            &ctx.out_dir,
            &format!("pg_{name}.svg"),
            &chart(&format!("Entries of {name}"), name, false, series),
        )?;
    }
    Ok(())
}

pub fn cmd_compare_n(ctx: &RunContext) -> Result<()> {
    let popsec = ctx
        .config
        .population
        .clone()
        .ok_or_else(|| Error::config(0, "compare-n needs a [population] section"))?;
    let opt = optimal_gains(&ctx.model)?;
    let out = ctx.config.output_or_default();
    let mut diag_rows = Vec::new();
    let mut cost_rows = Vec::new();
    for &n in &popsec.compare_n {
        if !ctx.stackable(n) {
            return Err(Error::Validation(format!("N = {n} exceeds the stacked-size limit")));
        }
        let pop = popsec.population(&ctx.model, n)?;
        let stacked = build_stacked(&ctx.model, &pop)?;
        let best = solve_n_agent_optimal(&stacked)?;
        let transplant = phi_mkv(&ctx.model, n)?;
        let j_mkv = eval_social_cost(&stacked, &transplant)?;
        diag_rows.push(vec![
            n as f64,
            max_diagonal_deviation(&best.phi.phi, &opt.theta.k),
            max_diagonal_deviation(&transplant.phi, &opt.theta.k),
        ]);
        cost_rows.push(vec![n as f64, best.cost, j_mkv, opt.cost.total]);
        eprintln!("N = {n}: J(Phi*,N) = {}, J(Phi_MKV) = {}", num(best.cost), num(j_mkv));
    }
    let seeds: Vec<u64> = (0..popsec.sweep_seeds as u64)
        .map(|s| popsec.variation_seed.wrapping_add(s))
        .collect();
    if !ctx.stackable(popsec.sweep_n) {
        return Err(Error::Validation(format!(
            "sweep_n = {} exceeds the stacked-size limit",
            popsec.sweep_n
        )));
    }
    let sweep = heterogeneity_sweep(&ctx.model, popsec.sweep_n, &popsec.h_grid, &seeds)?;
    let sweep_rows: Vec<Vec<f64>> = sweep
        .iter()
        .map(|r| vec![r.h_tilde, r.mean, r.std, r.gaps.len() as f64])
        .collect();

    if out.csv {
        let dir = &ctx.out_dir;
        write_atomic(
            &dir.join("compare_diag.csv"),
            table_csv("compare-diag", &ctx.hash, &["N", "maxdev_opt_N", "maxdev_mkv"], &diag_rows).as_bytes(),
        )?;
        write_atomic(
            &dir.join("compare_cost.csv"),
            table_csv("compare-cost", &ctx.hash, &["N", "J_opt_N", "J_mkv", "C_star"], &cost_rows).as_bytes(),
        )?;
        write_atomic(
            &dir.join("hetero_sweep.csv"),
            table_csv("hetero-sweep", &ctx.hash, &["h_tilde", "gap_mean", "gap_std", "seeds"], &sweep_rows).as_bytes(),
        )?;
    }
    if out.svg {
        let ns: Vec<f64> = diag_rows.iter().map(|r| r[0]).collect();
        let col = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
        let chart = |title: &str, x: &str, y: &str, log: bool, series: Vec<Series>| Chart {
            title: title.into(),
            x_label: x.into(),
            y_label: y.into(),
            log_y: log,
            series,
            config_hash: ctx.hash.clone(),
        };
        write_svg(
            &ctx.out_dir,
            "compare_diag.svg",
            &chart(
                "Diagonal blocks versus -K*",
                "N",
                "max |Phi_nn + K*|",
                out.log_scale,
                vec![
                    Series::line("Phi*,N", ns.clone(), col(&diag_rows, 1)),
                    Series::line("Phi_MKV", ns.clone(), col(&diag_rows, 2)),
                ],
            ),
        )?;
        let (lo, hi) = (ns.first().copied().unwrap_or(0.0), ns.last().copied().unwrap_or(1.0));
        write_svg(
            &ctx.out_dir,
            "compare_cost.svg",
            &chart(
                "N-agent social cost",
                "N",
                "cost",
                false,
                vec![
                    Series::line("J^N(Phi*,N)", ns.clone(), col(&cost_rows, 1)),
                    Series::line("J^N(Phi_MKV)", ns.clone(), col(&cost_rows, 2)),
                    Series::reference("C*", lo, hi, opt.cost.total),
                ],
            ),
        )?;
        let hs: Vec<f64> = sweep.iter().map(|r| r.h_tilde).collect();
        write_svg(
            &ctx.out_dir,
            "hetero_sweep.svg",
            &chart(
                &format!("Cost gap versus heterogeneity, N = {}", popsec.sweep_n),
                "h_tilde",
                "|J(Phi*,N) - J(Phi_MKV)|",
                false,
                vec![band_series(
                    "mean +- std".into(),
                    hs,
                    sweep.iter().map(|r| r.mean).collect(),
                    sweep.iter().map(|r| r.std).collect(),
                )],
            ),
        )?;
    }
    Ok(())
}
