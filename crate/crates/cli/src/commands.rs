use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use jointdiag::ica::{benchmark_signals, ica_separate, matched_correlation, read_signal_csv, Backend, IcaConfig};
use jointdiag::jacobi::{run_jacobi, JacobiConfig};
use jointdiag::matcore::read_sym_csv;
use jointdiag::metrics::{bound_report, BoundReport};
use jointdiag::randgen::{generate, generate_with_commutator, GenConfig};
use jointdiag::solver::SolverConfig;
use jointdiag::vjd::{run_vjd, DiagResult, DiagSummary, VjdConfig};
use jointdiag::MatrixTuple;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::output::Run;
use crate::{CheckArgs, DiagArgs, GenArgs, IcaArgs, MethodArg, SolverArgs};

/// Largest accepted `‖UᵀU − I‖_F`.
pub const ORTHO_TOL: f64 = 1e-10;

pub fn load_tuple(paths: &[PathBuf]) -> Result<MatrixTuple> {
    let mats = paths
        .iter()
        .map(|p| read_sym_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatrixTuple::new(mats)?)
}

pub fn orthogonality_defect(u: &DMatrix<f64>) -> f64 {
    (u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

pub fn vjd_config(a: &SolverArgs, seed: u64, trace: bool) -> VjdConfig {
    VjdConfig {
        solver: SolverConfig {
            eps_stop: a.eps_stop,
            max_iters: a.max_iters,
            hessian_kind: a.hessian,
            ..SolverConfig::default()
        },
        eps: a.relax,
        seed,
        post_procrustes_eigs: a.post_procrustes,
        keep_traces: trace,
    }
}

pub fn jacobi_config(a: &SolverArgs) -> JacobiConfig {
    JacobiConfig { eps: a.eps, max_sweeps: a.max_sweeps }
}

pub fn run_method(mats: &MatrixTuple, a: &SolverArgs, seed: u64, trace: bool) -> Result<DiagResult> {
    Ok(match a.method {
        MethodArg::Vjd => run_vjd(mats, &vjd_config(a, seed, trace))?,
        MethodArg::Jacobi => run_jacobi(mats, &jacobi_config(a))?,
    })
}

#[derive(Serialize)]
struct GenSidecar<'a> {
    config: &'a GenConfig,
    target_comm: Option<f64>,
    comm_norm: f64,
    scale: f64,
    files: Vec<String>,
}

pub fn gen(run: &mut Run, a: &GenArgs, seed: u64) -> Result<bool> {
    let cfg = GenConfig { n: a.n, m: a.m, sigma: a.sigma, seed, normalize: !a.no_normalize };
    let sample = run.timed("generate", || match a.target_comm {
        Some(target) => generate_with_commutator(&cfg, target),
        None => generate(&cfg),
    })?;
    let names: Vec<String> =
        if a.m == 2 { vec!["A.csv".into(), "B.csv".into()] } else { (1..=a.m).map(|k| format!("M{k}.csv")).collect() };
    for (name, x) in names.iter().zip(sample.perturbed.iter()) {
        run.write_matrix(name, x.as_matrix())?;
    }
    if a.commuting {
        for (name, x) in names.iter().zip(sample.commuting.iter()) {
            run.write_matrix(&format!("commuting_{name}"), x.as_matrix())?;
        }
    }
    let sidecar = GenSidecar {
        config: &cfg,
        target_comm: a.target_comm,
        comm_norm: sample.comm_norm,
        scale: sample.perturbed.max_op_norm(),
        files: names,
    };
    run.write_json("gen.json", &sidecar)?;
    println!("wrote {} matrices of size {}, ‖[A,B]‖ = {:.3e}", a.m, a.n, sample.comm_norm);
    Ok(true)
}

#[derive(Serialize)]
struct DiagReport {
    summary: DiagSummary,
    /// Only defined for pairs.
    bound: Option<BoundReport>,
    orthogonality_defect: f64,
    /// Final off-diagonal mass over `Σ‖A_k‖_F` (Jacobi only).
    off_ratio: Option<f64>,
    scale: f64,
}

#[derive(Serialize)]
struct IterRow {
    column: usize,
    iter: usize,
    grad_norm: f64,
    value: f64,
    step: Option<f64>,
}

#[derive(Serialize)]
struct SweepRow {
    sweep: usize,
    off: f64,
    off_ratio: f64,
}

fn diag_report(mats: &MatrixTuple, res: &DiagResult) -> Result<DiagReport> {
    let total: f64 = mats.iter().map(|a| a.as_matrix().norm()).sum();
    let bound = if mats.len() == 2 { Some(bound_report(mats, &res.u, &res.lambdas)?) } else { None };
    Ok(DiagReport {
        summary: res.summary(),
        bound,
        orthogonality_defect: orthogonality_defect(&res.u),
        off_ratio: res.sweep_offs.last().map(|o| o / total),
        scale: mats.frob_sq_sum(),
    })
}

pub fn diag(run: &mut Run, a: &DiagArgs, seed: u64) -> Result<bool> {
    let mats = load_tuple(&a.matrices)?;
    let res = run_method(&mats, &a.solver, seed, a.trace)?;
    run.record_time("solve", res.wall_time);
    let report = diag_report(&mats, &res)?;
    run.write_matrix("U.csv", &res.u)?;
    run.write_json("diag.json", &report)?;
    if a.trace {
        match &res.column_traces {
            Some(traces) => {
                let rows: Vec<IterRow> = traces
                    .iter()
                    .enumerate()
                    .flat_map(|(column, t)| {
                        t.iterates.iter().map(move |r| IterRow {
                            column,
                            iter: r.iter,
                            grad_norm: r.grad_norm,
                            value: r.value,
                            step: r.step,
                        })
                    })
                    .collect();
                run.write_table("trace", &rows)?;
            }
            None => {
                let total: f64 = mats.iter().map(|a| a.as_matrix().norm()).sum();
                let rows: Vec<SweepRow> = res
                    .sweep_offs
                    .iter()
                    .enumerate()
                    .map(|(i, &off)| SweepRow { sweep: i + 1, off, off_ratio: off / total })
                    .collect();
                run.write_table("trace", &rows)?;
            }
        }
    }
    println!(
        "{:?}: n = {}, J_F = {:.3e}, ‖UᵀU − I‖ = {:.1e}, {:.3} s",
        res.method,
        mats.dim(),
        res.j_objective,
        report.orthogonality_defect,
        res.wall_time
    );
    let mut ok = report.orthogonality_defect <= ORTHO_TOL;
    if let Some(b) = &report.bound {
        println!("lower bound: J = {:.3e} ≥ {:.3e}: {}", b.j, b.lower_bound, b.satisfied);
        ok &= b.satisfied;
    }
    Ok(ok)
}

#[derive(Deserialize)]
struct StoredDiag {
    summary: StoredSummary,
}

#[derive(Deserialize)]
struct StoredSummary {
    lambdas: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BoundOutput {
    #[serde(flatten)]
    report: BoundReport,
    orthogonality_defect: f64,
}

pub fn check_bound(run: &mut Run, a: &CheckArgs, seed: u64) -> Result<bool> {
    let mats = load_tuple(&a.matrices)?;
    let (u, lambdas) = match &a.result_dir {
        Some(dir) => {
            let u = jointdiag::matcore::read_matrix_csv(dir.join("U.csv"))
                .with_context(|| format!("reading {}", dir.join("U.csv").display()))?;
            let p = dir.join("diag.json");
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let stored: StoredDiag = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            (u, stored.summary.lambdas)
        }
        None => {
            let res = run_method(&mats, &a.solver, seed, false)?;
            run.record_time("solve", res.wall_time);
            (res.u, res.lambdas)
        }
    };
    let report = bound_report(&mats, &u, &lambdas)?;
    let out = BoundOutput { orthogonality_defect: orthogonality_defect(&u), report };
    run.write_json("bound.json", &out)?;
    println!(
        "J = {:.6e}, ‖[A,B]‖²/8 = {:.6e}, satisfied: {}",
        out.report.j, out.report.lower_bound, out.report.satisfied
    );
    Ok(out.report.satisfied && out.orthogonality_defect <= ORTHO_TOL)
}

#[derive(Serialize)]
struct MatchRow {
    source: usize,
    estimate: usize,
    sign: f64,
    correlation: f64,
}

#[derive(Serialize)]
struct IcaReport {
    backend: MethodArg,
    channels: usize,
    samples: usize,
    sources: usize,
    diag: DiagSummary,
    orthogonality_defect: f64,
    /// Only known for the demo.
    matching: Option<Vec<MatchRow>>,
    min_correlation: Option<f64>,
}

pub fn ica(run: &mut Run, a: &IcaArgs, seed: u64) -> Result<bool> {
    let (signals, truth) = match &a.input {
        Some(p) => (read_signal_csv(p).with_context(|| format!("reading {}", p.display()))?, None),
        None => {
            let b = benchmark_signals(a.t, a.snr, seed)?;
            run.write_signal("true_sources.csv", &b.sources)?;
            (jointdiag::ica::SignalMatrix::new(b.observed)?, Some(b.sources))
        }
    };
    let n = a.sources.unwrap_or(signals.channels());
    if n == 0 || n > signals.channels() {
        bail!("--sources must lie in 1..={}, got {n}", signals.channels());
    }
    let backend = match a.backend {
        MethodArg::Vjd => Backend::Vjd,
        MethodArg::Jacobi => Backend::Jacobi,
    };
    let cfg = IcaConfig { backend, vjd: VjdConfig { seed, ..VjdConfig::default() }, ..IcaConfig::default() };
    let out = run.timed("separate", || ica_separate(&signals, n, &cfg))?;
    run.write_signal("sources.csv", &out.sources)?;
    run.write_signal("mixing.csv", &out.mixing)?;

    let matching = match &truth {
        Some(s) => Some(matched_correlation(s, &out.sources)?),
        None => None,
    };
    let rows = matching.as_ref().map(|m| {
        (0..m.perm.len())
            .map(|i| MatchRow { source: i, estimate: m.perm[i], sign: m.signs[i], correlation: m.correlations[i] })
            .collect::<Vec<_>>()
    });
    let defect = orthogonality_defect(&out.diag.u);
    let report = IcaReport {
        backend: a.backend,
        channels: signals.channels(),
        samples: signals.samples(),
        sources: n,
        diag: out.diag.summary(),
        orthogonality_defect: defect,
        min_correlation: matching.as_ref().map(|m| m.min_correlation()),
        matching: rows,
    };
    run.write_json("report.json", &report)?;

    println!("{:?} backend: {n} sources from {} channels", a.backend, signals.channels());
    if let Some(rows) = &report.matching {
        println!("{:>6} {:>8} {:>5} {:>11}", "source", "estimate", "sign", "correlation");
        for r in rows {
            println!(
                "{:>6} {:>8} {:>5} {:>11.4}",
                r.source,
                r.estimate,
                if r.sign < 0.0 { "-" } else { "+" },
                r.correlation
            );
        }
    }
    Ok(defect <= ORTHO_TOL)
}
