use std::collections::BTreeMap;

use anyhow::{bail, Result};
use jointdiag::jacobi::{run_jacobi, JacobiConfig};
use jointdiag::metrics::bound_report;
use jointdiag::randgen::{derive_seed, generate, GenConfig};
use jointdiag::vjd::{run_vjd, VjdConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{orthogonality_defect, ORTHO_TOL};
use crate::output::Run;
use crate::{BenchArgs, MethodArg};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub method: MethodArg,
    pub n: usize,
    pub sigma: f64,
    pub sample: usize,
    pub seed: u64,
    pub wall_time: f64,
    pub j_operator: f64,
    pub j_frobenius: f64,
    pub comm_norm: f64,
    pub lower_bound: f64,
    pub bound_ok: bool,
    pub orthogonality_defect: f64,
    pub error: String,
}

#[derive(Serialize)]
struct BenchSummary {
    rows: usize,
    failures: usize,
    violations: usize,
    /// Least-squares slope of log J against log ‖[A,B]‖, per method.
    slopes: BTreeMap<String, Option<f64>>,
    /// Median wall time per method and dimension.
    median_wall_time: BTreeMap<String, BTreeMap<usize, f64>>,
    threads: usize,
}

fn worker_threads() -> Result<usize> {
    match std::env::var("JOINTDIAG_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => bail!("JOINTDIAG_THREADS must be a positive integer, got {s:?}"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run_sample(a: &BenchArgs, n: usize, sigma: f64, sample: usize, seed: u64) -> Vec<BenchRow> {
    let blank = |method| BenchRow {
        method,
        n,
        sigma,
        sample,
        seed,
        wall_time: f64::NAN,
        j_operator: f64::NAN,
        j_frobenius: f64::NAN,
        comm_norm: f64::NAN,
        lower_bound: f64::NAN,
        bound_ok: false,
        orthogonality_defect: f64::NAN,
        error: String::new(),
    };
    let pair = match generate(&GenConfig::new(n, sigma, seed)) {
        Ok(s) => s.perturbed,
        Err(e) => {
            return a.methods.iter().map(|&m| BenchRow { error: format!("generate: {e}"), ..blank(m) }).collect();
        }
    };
    a.methods
        .iter()
        .map(|&method| {
            let res = match method {
                MethodArg::Vjd => {
                    let mut cfg = VjdConfig { seed, ..VjdConfig::default() };
                    cfg.solver.eps_stop = a.eps_stop;
                    run_vjd(&pair, &cfg)
                }
                MethodArg::Jacobi => run_jacobi(&pair, &JacobiConfig { eps: a.jacobi_eps, ..JacobiConfig::default() }),
            };
            let res = match res {
                Ok(r) => r,
                Err(e) => return BenchRow { error: e.to_string(), ..blank(method) },
            };
            match bound_report(&pair, &res.u, &res.lambdas) {
                Ok(b) => BenchRow {
                    wall_time: res.wall_time,
                    j_operator: b.j,
                    j_frobenius: b.j_frobenius,
                    comm_norm: b.comm_norm,
                    lower_bound: b.lower_bound,
                    bound_ok: b.satisfied,
                    orthogonality_defect: orthogonality_defect(&res.u),
                    ..blank(method)
                },
                Err(e) => BenchRow { error: e.to_string(), ..blank(method) },
            }
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    // All x equal: no spread to fit against.
    if sxx <= 1e-12 * k {
        return None;
    }
    Some(sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

pub fn bench(run: &mut Run, a: &BenchArgs, seed: u64) -> Result<bool> {
    if a.dims.is_empty() || a.sigmas.is_empty() || a.methods.is_empty() || a.samples == 0 {
        bail!("bench needs at least one dimension, sigma, method and sample");
    }
    if let Some(&n) = a.dims.iter().find(|&&n| n < 2) {
        bail!("dimensions must be at least 2, got {n}");
    }
    let threads = worker_threads()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;

    let mut tasks = Vec::new();
    for &n in &a.dims {
        for &sigma in &a.sigmas {
            for sample in 0..a.samples {
                let stream = tasks.len() as u64;
                tasks.push((n, sigma, sample, derive_seed(seed, stream)));
            }
        }
    }
    let rows: Vec<BenchRow> = run.timed("bench", || {
        pool.install(|| {
            tasks.par_iter().flat_map_iter(|&(n, sigma, sample, s)| run_sample(a, n, sigma, sample, s)).collect()
        })
    });
    run.write_table("bench", &rows)?;

    let failures = rows.iter().filter(|r| !r.error.is_empty()).count();
    let violations = rows.iter().filter(|r| r.error.is_empty() && !r.bound_ok).count();
    let ortho_bad = rows.iter().filter(|r| r.error.is_empty() && r.orthogonality_defect > ORTHO_TOL).count();
    let mut slopes = BTreeMap::new();
    let mut median_wall_time = BTreeMap::new();
    for &m in &a.methods {
        let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m && r.error.is_empty()).collect();
        let name = serde_json::to_value(m)?.as_str().unwrap_or_default().to_string();
        slopes
            .insert(name.clone(), loglog_slope(&mine.iter().map(|r| (r.comm_norm, r.j_frobenius)).collect::<Vec<_>>()));
        let mut per_n = BTreeMap::new();
        for &n in &a.dims {
            let times: Vec<f64> = mine.iter().filter(|r| r.n == n).map(|r| r.wall_time).collect();
            if !times.is_empty() {
                per_n.insert(n, median(times));
            }
        }
        median_wall_time.insert(name, per_n);
    }
    let summary = BenchSummary { rows: rows.len(), failures, violations, slopes, median_wall_time, threads };
    run.write_json("bench_summary.json", &summary)?;

    println!("{} rows, {failures} failed, {violations} bound violations", rows.len());
    for (m, s) in &summary.slopes {
        match s {
            Some(s) => println!("{m}: log-log slope of J vs ‖[A,B]‖ = {s:.3}"),
            None => println!("{m}: log-log slope undefined (needs a spread of commutator norms)"),
        }
    }
    for (m, per_n) in &summary.median_wall_time {
        for (n, t) in per_n {
            println!("{m}: n = {n}, median wall time {t:.4} s");
        }
    }
    Ok(failures == 0 && violations == 0 && ortho_bad == 0)
}
