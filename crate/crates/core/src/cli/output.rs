use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::svg::Chart;
use crate::trace::ConvergenceTrace;

pub const CSV_SCHEMA: &str = "lqmfpg-csv v1";

/// Writes to a sibling temporary file, syncs it, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn header(kind: &str, config_hash: &str, extra: &[(String, String)]) -> String {
    let mut s = format!("# {CSV_SCHEMA} kind={kind} config={config_hash} std=sample(n-1)");
    for (k, v) in extra {
        let _ = write!(s, " {k}={v}");
    }
    s.push('\n');
    s
}

/// One row per record: cost, relative errors, population costs, gains.
pub fn trace_csv(trace: &ConvergenceTrace, config_hash: &str) -> String {
    let mut extra = vec![
        ("method".to_string(), trace.meta.method.clone()),
        ("optimizer".to_string(), trace.meta.optimizer.clone()),
        ("seed".to_string(), trace.meta.seed.to_string()),
        (
            "C_star".to_string(),
            trace.meta.reference_cost.map_or("NaN".into(), num),
        ),
    ];
    extra.extend(trace.meta.notes.iter().cloned());
    let mut s = header("trace", config_hash, &extra);
    let Some(first) = trace.records.first() else {
        s.push_str("k,C_mf,rel_err_mf\n");
        return s;
    };
    let (l, d) = first.theta.k.shape();
    let pops: Vec<usize> = trace
        .records
        .iter()
        .find(|r| !r.population.is_empty())
        .map(|r| r.population.iter().map(|p| p.n).collect())
        .unwrap_or_default();
    let mut cols = vec!["k".to_string(), "C_mf".into(), "rel_err_mf".into()];
    for n in &pops {
        cols.push(format!("C_pop{n}"));
        cols.push(format!("rel_err_pop{n}"));
    }
    for b in ["K", "L"] {
        for i in 0..l {
            for j in 0..d {
                cols.push(format!("{b}_{i}_{j}"));
            }
        }
    }
    cols.push("grad_norm".into());
    s.push_str(&cols.join(","));
    s.push('\n');
    for r in &trace.records {
        let mut row = vec![r.k.to_string(), num(r.cost), num(r.rel_error_mf)];
        for n in &pops {
            match r.population.iter().find(|p| p.n == *n) {
                Some(p) => {
                    row.push(num(p.cost));
                    row.push(num(p.rel_error));
                }
                None => {
                    row.push(num(f64::NAN));
                    row.push(num(f64::NAN));
                }
            }
        }
        for m in [&r.theta.k, &r.theta.l] {
            for i in 0..l {
                for j in 0..d {
                    row.push(num(m[(i, j)]));
                }
            }
        }
        row.push(num(r.grad_norm));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn table_csv(kind: &str, config_hash: &str, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header(kind, config_hash, &[]);
    s.push_str(&columns.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| num(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

pub fn write_svg(dir: &Path, name: &str, chart: &Chart) -> Result<()> {
    write_atomic(&dir.join(name), chart.render().as_bytes())
}
