//! Experiment harness: declarative configuration in, CSV/JSON results
//! out, fully seed-deterministic.
//!
//! Every work item (point, replication, path) owns a key derived from the
//! seed and its indices, and every reduction uses a fixed pairwise tree,
//! so output bytes do not depend on the worker count. The wall_ms column
//! is the single exception and is kept last.
//!
//! The error metric approximates a supremum over time-space boxes by the
//! measured sup over the configured point set; the true supremum is not
//! observable. Likewise "smallest depth below a target error" anywhere in
//! reports means smallest depth whose measured sup falls below it.

pub mod config;
pub mod records;

pub use config::{load_config, EvalPoint, ExperimentConfig, Mode, PointsSpec};
pub use records::{
    read_csv, write_csv, write_sidecar, EnvFingerprint, ResultRecord, RunSidecar,
    CSV_SCHEMA_VERSION,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::cost::{cost_upper_bound, reconcile, theoretical_cost, CostLedger, CostModelParams};
use crate::error::{Error, Result};
use crate::mlp::{mlp_batch, mlp_estimate, schedule, MlpParams, Rounding};
use crate::oracle::{config_hash, coupled_fine_reference, least_squares_slope, sfpe_residual, ReferenceSolution};
use crate::par::map_reduce;
use crate::problem::{builtin_problem, lambda_weights, PdeProblem};
use crate::rng::RandomKey;

use self::records as rec;
use self::records::stamp_group;

type Problem = PdeProblem<f64>;

/// Weighted replication RMS against a reference, with a jackknife
/// standard error, one entry per component nu.
#[derive(Clone, Debug)]
pub struct WeightedError {
    pub weighted_rms: Vec<f64>,
    pub jackknife_se: Vec<f64>,
}

/// For each component nu: Lambda_nu(T - t) * sqrt(mean over replications
/// of (U_i[nu] - exact[nu])^2), plus the jackknife standard error of that
/// statistic. Needs at least two replications.
pub fn estimate_weighted_error(
    estimates: &[Vec<f64>],
    exact: &[f64],
    t: f64,
    horizon: f64,
) -> Result<WeightedError> {
    let r = estimates.len();
    if r < 2 {
        return Err(Error::domain("weighted error needs at least two replications"));
    }
    let width = exact.len();
    if width == 0 || estimates.iter().any(|e| e.len() != width) {
        return Err(Error::domain("estimates and reference must share a positive width"));
    }
    if !(t >= 0.0 && t < horizon) {
        return Err(Error::domain(format!("evaluation time {t} outside [0, {horizon})")));
    }
    let lambda = lambda_weights(horizon - t, width - 1)?;
    let rf = r as f64;
    let mut weighted_rms = vec![0.0; width];
    let mut jackknife_se = vec![0.0; width];
    for nu in 0..width {
        let sq: Vec<f64> = estimates.iter().map(|e| (e[nu] - exact[nu]).powi(2)).collect();
        let total: f64 = sq.iter().sum();
        weighted_rms[nu] = lambda[nu] * (total / rf).sqrt();
        // Leave-one-out values of the same statistic.
        let loo: Vec<f64> =
            sq.iter().map(|s| lambda[nu] * (((total - s) / (rf - 1.0)).max(0.0)).sqrt()).collect();
        let loo_mean = loo.iter().sum::<f64>() / rf;
        let ss: f64 = loo.iter().map(|v| (v - loo_mean).powi(2)).sum();
        jackknife_se[nu] = ((rf - 1.0) / rf * ss).sqrt();
    }
    Ok(WeightedError { weighted_rms, jackknife_se })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Depth 0 runs as the identically-zero estimator instead of failing, so
/// degenerate configs stay crash-free.
fn params_for_level(n: u32) -> Result<MlpParams> {
    if n == 0 {
        Ok(MlpParams { n: 0, m: 1.0, k: 1, rounding: Rounding::Ceil })
    } else {
        schedule(n)
    }
}

fn build_problem(config: &ExperimentConfig, dim: usize) -> Result<Problem> {
    builtin_problem(&config.problem, dim, config.horizon, config.kappa)
}

/// Deterministic key for a candidate evaluation at (t, x): the
/// coordinates are hashed into a child index, so concurrent evaluations
/// at the same point always see the same stream.
fn point_child(base: &RandomKey, t: f64, x: &[f64]) -> RandomKey {
    let mut h = Sha256::new();
    h.update(b"mlp-pde/point-key/v1");
    h.update(t.to_bits().to_le_bytes());
    for v in x {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    base.child(i64::from_le_bytes(eight))
}

/// Everything `run` produced and where it was written.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub csv_path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// Executes the configured experiment and writes results.csv plus the
/// run.json sidecar into `out_dir`. `threads` pins a private worker pool;
/// the numeric output is byte-identical either way.
pub fn run(config: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunOutput> {
    let started = Instant::now();
    let records = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("could not build a {n}-thread pool: {e}")))?;
            pool.install(|| run_records(config))?
        }
        None => run_records(config)?,
    };
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("results.csv");
    rec::write_csv(&csv_path, &records)?;
    let sidecar = RunSidecar {
        csv_schema: CSV_SCHEMA_VERSION,
        config_hash: config_hash(config)?,
        config: config.clone(),
        environment: EnvFingerprint::current(threads.unwrap_or_else(rayon::current_num_threads)),
        records: records.len(),
        wall_ms: started.elapsed().as_millis() as u64,
    };
    let sidecar_path = out_dir.join("run.json");
    rec::write_sidecar(&sidecar_path, &sidecar)?;
    Ok(RunOutput { records, csv_path, sidecar_path })
}

/// [`run`] without the file output.
pub fn run_records(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let hash = config_hash(config)?;
    let key = RandomKey::new(config.seed);
    match config.mode {
        Mode::Convergence => {
            let problem = build_problem(config, config.dim)?;
            let points = config.expand_points(config.dim)?;
            sweep_levels(config, &hash, Mode::Convergence.tag(), &problem, &points, &key)
        }
        Mode::DimensionScan => {
            let mut out = Vec::new();
            for (di, &d) in config.dimensions.iter().enumerate() {
                let problem = build_problem(config, d)?;
                let points = config.expand_points(d)?;
                out.extend(sweep_levels(
                    config,
                    &hash,
                    Mode::DimensionScan.tag(),
                    &problem,
                    &points,
                    &key.child(di as i64),
                )?);
            }
            Ok(out)
        }
        Mode::EmRate => run_em_rate(config, &hash, &key),
        Mode::CostAudit => run_cost_audit(config, &hash, &key),
        Mode::Residual => run_residual(config, &hash, &key),
    }
}

/// One full depth sweep on one problem instance; shared by convergence
/// and dimension-scan. Level n draws its keys from base_key ++ (n).
fn sweep_levels(
    config: &ExperimentConfig,
    hash: &str,
    mode_tag: &str,
    problem: &Problem,
    points: &[(f64, Vec<f64>)],
    base_key: &RandomKey,
) -> Result<Vec<ResultRecord>> {
    let reference = ReferenceSolution::from_closed_form(problem);
    let d = problem.dim;
    let reps = config.replications;
    let mut out = Vec::new();
    for &n in &config.levels {
        let tick = Instant::now();
        let params = params_for_level(n)?;
        let batch = mlp_batch(problem, &params, points, reps, &base_key.child(n as i64))?;
        let mut rows: Vec<ResultRecord> = Vec::new();
        let mut ledger = CostLedger::new();
        let mut sup_w: Option<f64> = None;
        for (pi, point_reps) in batch.iter().enumerate() {
            let (t, x) = &points[pi];
            let mut values: Vec<Vec<f64>> = Vec::with_capacity(point_reps.len());
            for (ri, rep) in point_reps.iter().enumerate() {
                match rep {
                    Ok(est) => {
                        ledger.merge(&est.ledger);
                        values.push(est.value.clone());
                    }
                    Err(e) => {
                        return Err(Error::Output(format!(
                            "estimator failed at level {n}, point {pi}, replication {ri}: {e}"
                        )))
                    }
                }
            }
            for nu in 0..=d {
                let comp: Vec<f64> = values.iter().map(|v| v[nu]).collect();
                let (mean, se) = mean_and_se(&comp);
                let mut row = ResultRecord::bare(hash, mode_tag, &problem.name, d, "mean", mean);
                row.level = n as i64;
                row.grid = params.k;
                row.point = pi as i64;
                row.t = Some(*t);
                row.nu = nu as i64;
                row.std_err = Some(se);
                row.replications = reps as u64;
                rows.push(row);
            }
            if let Some(reference) = &reference {
                let exact = reference.evaluate(*t, x);
                let we = estimate_weighted_error(&values, &exact, *t, problem.horizon)?;
                for nu in 0..=d {
                    let mut row = ResultRecord::bare(
                        hash,
                        mode_tag,
                        &problem.name,
                        d,
                        "weighted_rms",
                        we.weighted_rms[nu],
                    );
                    row.level = n as i64;
                    row.grid = params.k;
                    row.point = pi as i64;
                    row.t = Some(*t);
                    row.nu = nu as i64;
                    row.std_err = Some(we.jackknife_se[nu]);
                    row.replications = reps as u64;
                    rows.push(row);
                    sup_w = Some(sup_w.unwrap_or(0.0).max(we.weighted_rms[nu]));
                }
            }
        }
        if let Some(sup) = sup_w {
            let mut row = ResultRecord::bare(hash, mode_tag, &problem.name, d, "sup_weighted_rms", sup);
            row.level = n as i64;
            row.grid = params.k;
            row.replications = reps as u64;
            rows.push(row);
        }
        let calls = points.len() as f64 * reps as f64;
        let theo =
            theoretical_cost(params.n, params.m, params.k, &CostModelParams::UNIT, params.rounding)?
                * calls;
        let upper = if n == 0 {
            None
        } else {
            Some(cost_upper_bound(n, params.m, params.k, &CostModelParams::UNIT)? * calls)
        };
        stamp_group(&mut rows, &ledger, Some(theo), upper, tick.elapsed().as_millis() as u64);
        out.extend(rows);
    }
    Ok(out)
}

fn start_point(config: &ExperimentConfig, dim: usize) -> (f64, Vec<f64>) {
    match &config.points {
        PointsSpec::Explicit(list) if !list.is_empty() => (list[0].t, list[0].x.clone()),
        _ => (0.0, vec![0.0; dim]),
    }
}

fn run_em_rate(
    config: &ExperimentConfig,
    hash: &str,
    key: &RandomKey,
) -> Result<Vec<ResultRecord>> {
    struct EmAcc {
        sx2: f64,
        sx4: f64,
        sv2: f64,
        sv4: f64,
    }
    let problem = build_problem(config, config.dim)?;
    let d = problem.dim;
    let k_ref = config.reference_grid.unwrap_or(1024);
    let n_paths = config.paths.unwrap_or(10_000);
    let (s0, x0) = start_point(config, d);
    let t_q = problem.horizon;
    let tag = Mode::EmRate.tag();

    let mut out = Vec::new();
    let mut lnk = Vec::new();
    let mut ln_x = Vec::new();
    let mut ln_v = Vec::new();
    for &k in &config.grids {
        let tick = Instant::now();
        // One key per path, shared across the K sweep: common random
        // numbers stabilize the fitted slope.
        let leaf = |p: usize| -> Result<EmAcc> {
            let pair =
                coupled_fine_reference(&problem, s0, &x0, t_q, k, k_ref, &key.child(p as i64))?;
            let dx2: f64 =
                pair.x_coarse.iter().zip(&pair.x_fine).map(|(a, b)| (a - b) * (a - b)).sum();
            let dv2: f64 =
                pair.v_coarse.iter().zip(&pair.v_fine).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(EmAcc { sx2: dx2, sx4: dx2 * dx2, sv2: dv2, sv4: dv2 * dv2 })
        };
        let combine = |a: Result<EmAcc>, b: Result<EmAcc>| -> Result<EmAcc> {
            let (a, b) = (a?, b?);
            Ok(EmAcc {
                sx2: a.sx2 + b.sx2,
                sx4: a.sx4 + b.sx4,
                sv2: a.sv2 + b.sv2,
                sv4: a.sv4 + b.sv4,
            })
        };
        let acc = map_reduce(0, n_paths as usize, 64, &leaf, &combine).expect("paths >= 1")?;
        let nf = n_paths as f64;
        let mut push = |metric: &str, ms: f64, ms4: f64, tick: &Instant| {
            let rms = (ms / nf).sqrt();
            let se_ms = (((ms4 / nf - (ms / nf) * (ms / nf)).max(0.0)) / nf).sqrt();
            let se_rms = if rms > 0.0 { se_ms / (2.0 * rms) } else { 0.0 };
            let mut row = ResultRecord::bare(hash, tag, &problem.name, d, metric, rms);
            row.grid = k;
            row.t = Some(t_q);
            row.std_err = Some(se_rms);
            row.replications = n_paths;
            row.wall_ms = tick.elapsed().as_millis() as u64;
            out.push(row);
            rms
        };
        let rms_x = push("em_rms_x", acc.sx2, acc.sx4, &tick);
        let rms_v = push("em_rms_v", acc.sv2, acc.sv4, &tick);
        lnk.push((k as f64).ln());
        ln_x.push(rms_x.ln());
        ln_v.push(rms_v.ln());
    }
    if config.grids.len() >= 2 {
        for (metric, lns) in [("em_slope_x", &ln_x), ("em_slope_v", &ln_v)] {
            let mut row = ResultRecord::bare(
                hash,
                tag,
                &problem.name,
                d,
                metric,
                least_squares_slope(&lnk, lns),
            );
            row.replications = n_paths;
            out.push(row);
        }
    }
    Ok(out)
}

fn run_cost_audit(
    config: &ExperimentConfig,
    hash: &str,
    key: &RandomKey,
) -> Result<Vec<ResultRecord>> {
    let problem = build_problem(config, config.dim)?;
    let d = problem.dim;
    let (t0, x0) = start_point(config, d);
    let tag = Mode::CostAudit.tag();
    let reps = config.replications;
    let mut out = Vec::new();
    for &n in &config.levels {
        let tick = Instant::now();
        let params = params_for_level(n)?;
        let batch =
            mlp_batch(&problem, &params, &[(t0, x0.clone())], reps, &key.child(n as i64))?;
        let mut ledger = CostLedger::new();
        let mut weighted_total = 0.0;
        let mut ratio_max = 0.0f64;
        for (ri, rep) in batch[0].iter().enumerate() {
            let est = rep.as_ref().map_err(|e| {
                Error::Output(format!("estimator failed at level {n}, replication {ri}: {e}"))
            })?;
            // Per-call reconciliation enforces the cost bounds outright.
            let report = reconcile(&est.ledger, &params, &CostModelParams::UNIT)?;
            weighted_total += report.weighted_instrumented;
            ratio_max = ratio_max.max(report.ratio_to_upper);
            ledger.merge(&est.ledger);
        }
        let calls = reps as f64;
        let theo =
            theoretical_cost(params.n, params.m, params.k, &CostModelParams::UNIT, params.rounding)?
                * calls;
        let upper = if n == 0 {
            0.0
        } else {
            cost_upper_bound(n, params.m, params.k, &CostModelParams::UNIT)? * calls
        };
        let mut rows = Vec::new();
        for (metric, value) in [
            ("cost_weighted_total", weighted_total),
            ("cost_theoretical_total", theo),
            ("cost_upper_bound_total", upper),
            ("cost_ratio_max", ratio_max),
        ] {
            let mut row = ResultRecord::bare(hash, tag, &problem.name, d, metric, value);
            row.level = n as i64;
            row.grid = params.k;
            row.replications = reps as u64;
            rows.push(row);
        }
        stamp_group(
            &mut rows,
            &ledger,
            Some(theo),
            (n > 0).then_some(upper),
            tick.elapsed().as_millis() as u64,
        );
        out.extend(rows);
    }
    Ok(out)
}

fn run_residual(
    config: &ExperimentConfig,
    hash: &str,
    key: &RandomKey,
) -> Result<Vec<ResultRecord>> {
    let problem = build_problem(config, config.dim)?;
    let d = problem.dim;
    let points = config.expand_points(d)?;
    let m_res = config.residual_samples.unwrap_or(20_000);
    let k_res = config.residual_grid.unwrap_or(128);
    let tag = Mode::Residual.tag();
    let mut out = Vec::new();
    for &n in &config.levels {
        let tick = Instant::now();
        let params = params_for_level(n)?;
        let mut rows = Vec::new();
        for (pi, (t, x)) in points.iter().enumerate() {
            let res_key = key.child(n as i64).child(pi as i64);
            // Candidate streams live under (-1); residual draws use the
            // nonnegative children, so they never collide.
            let cand_base = res_key.child(-1);
            let problem_ref = &problem;
            let candidate = move |s: f64, y: &[f64]| -> Vec<f64> {
                let mut scratch = CostLedger::new();
                match mlp_estimate(problem_ref, &params, s, y, &point_child(&cand_base, s, y), &mut scratch)
                {
                    Ok(est) => est.value,
                    Err(_) => vec![f64::NAN; problem_ref.dim + 1],
                }
            };
            let res = sfpe_residual(&problem, &candidate, *t, x, m_res, k_res, &res_key)?;
            if res.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::Output(format!(
                    "candidate evaluation failed inside the residual estimate at level {n}, point {pi}"
                )));
            }
            for nu in 0..=d {
                let mut row = ResultRecord::bare(hash, tag, &problem.name, d, "residual", res.mean[nu]);
                row.level = n as i64;
                row.grid = k_res;
                row.point = pi as i64;
                row.t = Some(*t);
                row.nu = nu as i64;
                row.std_err = Some(res.std_err[nu]);
                row.replications = m_res;
                rows.push(row);
            }
            let norm = res.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut row = ResultRecord::bare(hash, tag, &problem.name, d, "residual_norm", norm);
            row.level = n as i64;
            row.grid = k_res;
            row.point = pi as i64;
            row.t = Some(*t);
            row.replications = m_res;
            rows.push(row);
        }
        // Candidate work happens inside throwaway ledgers; the cost
        // columns stay zero for residual rows.
        stamp_group(&mut rows, &CostLedger::new(), None, None, tick.elapsed().as_millis() as u64);
        out.extend(rows);
    }
    Ok(out)
}

/// Post-run assertions behind the CLI `--assert` flag. Each mode checks
/// the property its records are meant to demonstrate; a violation is an
/// error.
pub fn assert_results(config: &ExperimentConfig, records: &[ResultRecord]) -> Result<()> {
    match config.mode {
        Mode::Convergence | Mode::DimensionScan => {
            let mut by_dim: BTreeMap<u64, Vec<(i64, f64)>> = BTreeMap::new();
            for r in records.iter().filter(|r| r.metric == "sup_weighted_rms") {
                by_dim.entry(r.dim).or_default().push((r.level, r.value));
            }
            for (dim, mut sups) in by_dim {
                sups.sort_by_key(|&(level, _)| level);
                for w in sups.windows(2) {
                    if !(w[1].1 < w[0].1) {
                        return Err(Error::Output(format!(
                            "weighted error did not decrease in depth at d = {dim}: n = {} gives {}, n = {} gives {}",
                            w[0].0, w[0].1, w[1].0, w[1].1
                        )));
                    }
                }
            }
            if config.mode == Mode::DimensionScan {
                assert_dimension_scaling(records)?;
            }
            Ok(())
        }
        Mode::EmRate => {
            let slope = |metric: &str| -> Option<f64> {
                records.iter().find(|r| r.metric == metric).map(|r| r.value)
            };
            let sx = slope("em_slope_x")
                .ok_or_else(|| Error::Output("no fitted X slope; need at least two grids".into()))?;
            let sv = slope("em_slope_v")
                .ok_or_else(|| Error::Output("no fitted V slope; need at least two grids".into()))?;
            if (sx + 0.5).abs() > 0.15 {
                return Err(Error::Output(format!("strong X rate {sx} outside -0.5 +- 0.15")));
            }
            if (sv + 0.5).abs() > 0.2 {
                return Err(Error::Output(format!("strong V rate {sv} outside -0.5 +- 0.2")));
            }
            Ok(())
        }
        Mode::CostAudit => {
            for r in records.iter().filter(|r| r.metric == "cost_ratio_max") {
                if r.value > 1.0 {
                    return Err(Error::Output(format!(
                        "instrumented cost exceeded the bound at level {}: ratio {}",
                        r.level, r.value
                    )));
                }
            }
            Ok(())
        }
        Mode::Residual => {
            let mut by_point: BTreeMap<i64, Vec<(i64, f64)>> = BTreeMap::new();
            for r in records.iter().filter(|r| r.metric == "residual_norm") {
                by_point.entry(r.point).or_default().push((r.level, r.value));
            }
            for (point, mut norms) in by_point {
                norms.sort_by_key(|&(level, _)| level);
                if norms.len() >= 2 {
                    let (first, last) = (norms[0], norms[norms.len() - 1]);
                    if !(last.1 < first.1) {
                        return Err(Error::Output(format!(
                            "residual norm did not shrink at point {point}: n = {} gives {}, n = {} gives {}",
                            first.0, first.1, last.0, last.1
                        )));
                    }
                }
            }
            Ok(())
        }
    }
}

/// Per-call draw counts must grow linearly in d and coefficient
/// evaluations at most quadratically; fitted on the group ledger totals.
fn assert_dimension_scaling(records: &[ResultRecord]) -> Result<()> {
    let mut per_dim: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == "mean" && r.euler_substeps > 0) {
        per_dim.entry(r.dim).or_insert((r.gaussian_draws, r.coeff_evals));
    }
    if per_dim.len() < 2 {
        return Ok(());
    }
    let lnd: Vec<f64> = per_dim.keys().map(|&d| (d as f64).ln()).collect();
    let ln_draws: Vec<f64> = per_dim.values().map(|&(g, _)| (g as f64).ln()).collect();
    let ln_coeff: Vec<f64> = per_dim.values().map(|&(_, c)| (c as f64).ln()).collect();
    let s_draws = least_squares_slope(&lnd, &ln_draws);
    let s_coeff = least_squares_slope(&lnd, &ln_coeff);
    if (s_draws - 1.0).abs() > 0.1 {
        return Err(Error::Output(format!("draw count exponent {s_draws} outside 1 +- 0.1")));
    }
    if s_coeff > 2.1 {
        return Err(Error::Output(format!("coefficient evaluation exponent {s_coeff} above 2")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn manufactured_config() -> ExperimentConfig {
        ExperimentConfig {
            problem: "manufactured-grad".into(),
            dim: 1,
            horizon: 1.0,
            kappa: Some(0.5),
            mode: Mode::Convergence,
            levels: vec![1, 2],
            dimensions: vec![],
            grids: vec![],
            reference_grid: None,
            paths: None,
            residual_samples: None,
            residual_grid: None,
            replications: 4,
            points: PointsSpec::Explicit(vec![EvalPoint { t: 0.5, x: vec![0.3] }]),
            seed: 11,
        }
    }

    #[test]
    fn weighted_error_matches_hand_statistics() {
        // All estimates equal the reference: zero error, zero spread.
        let exact = vec![1.0, -2.0];
        let est = vec![exact.clone(), exact.clone(), exact.clone()];
        let we = estimate_weighted_error(&est, &exact, 0.75, 1.0).unwrap();
        assert_eq!(we.weighted_rms, vec![0.0, 0.0]);
        assert_eq!(we.jackknife_se, vec![0.0, 0.0]);

        // Gradient components carry the sqrt(T - t) weight.
        let off = vec![vec![1.0, -1.0], vec![1.0, -3.0]];
        let we = estimate_weighted_error(&off, &exact, 0.75, 1.0).unwrap();
        assert!((we.weighted_rms[0] - 0.0).abs() < 1e-15);
        assert!((we.weighted_rms[1] - 0.25f64.sqrt() * 1.0).abs() < 1e-12);

        assert!(estimate_weighted_error(&est[..1], &exact, 0.5, 1.0).is_err());
    }

    #[test]
    fn weighted_error_recovers_noise_scale() {
        // Synthetic replications exact + N(0, sigma^2) on the value
        // component: the RMS estimates sigma.
        let sigma = 0.37;
        let mut stream = derive_stream(&RandomKey::new(5));
        let est: Vec<Vec<f64>> = (0..10_000).map(|_| vec![2.0 + sigma * stream.gaussian()]).collect();
        let we = estimate_weighted_error(&est, &[2.0], 0.0, 1.0).unwrap();
        assert!(
            (we.weighted_rms[0] - sigma).abs() < 0.03 * sigma,
            "rms {} vs sigma {sigma}",
            we.weighted_rms[0]
        );
        // The jackknife spread should sit near sigma / sqrt(2 R).
        let expect = sigma / (2.0f64 * 10_000.0).sqrt();
        assert!(
            (we.jackknife_se[0] - expect).abs() < 0.3 * expect,
            "jackknife {} vs {expect}",
            we.jackknife_se[0]
        );
    }

    #[test]
    fn convergence_mode_emits_the_expected_rows() {
        let config = manufactured_config();
        let records = run_records(&config).unwrap();
        // Per level: 2 mean rows, 2 weighted rows, 1 sup row.
        assert_eq!(records.len(), 10);
        for level in [1i64, 2] {
            let sup: Vec<_> = records
                .iter()
                .filter(|r| r.level == level && r.metric == "sup_weighted_rms")
                .collect();
            assert_eq!(sup.len(), 1);
            assert!(sup[0].value > 0.0);
            assert!(sup[0].euler_substeps > 0);
            assert!(sup[0].theoretical_cost.unwrap() > 0.0);
            assert!(sup[0].upper_bound.unwrap() >= sup[0].theoretical_cost.unwrap());
        }
        assert!(records.iter().all(|r| !r.config_hash.is_empty()));
    }

    #[test]
    fn depth_zero_runs_clean_with_zero_cost() {
        let mut config = manufactured_config();
        config.levels = vec![0];
        let records = run_records(&config).unwrap();
        for r in records.iter().filter(|r| r.metric == "mean") {
            assert_eq!(r.value, 0.0);
            assert_eq!(r.std_err, Some(0.0));
            assert_eq!(r.euler_substeps, 0);
            assert_eq!(r.gaussian_draws, 0);
            assert_eq!(r.theoretical_cost, Some(0.0));
        }
    }

    #[test]
    fn run_writes_files_and_the_sidecar_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let config = manufactured_config();
        let output = run(&config, dir.path(), Some(2)).unwrap();
        assert!(output.csv_path.exists());
        let text = std::fs::read_to_string(output.sidecar_path).unwrap();
        let sidecar: RunSidecar = serde_json::from_str(&text).unwrap();
        assert_eq!(sidecar.config, config);
        assert_eq!(sidecar.csv_schema, CSV_SCHEMA_VERSION);
        assert_eq!(sidecar.records, output.records.len());
        let back = read_csv(&output.csv_path).unwrap();
        assert_eq!(back, output.records);
    }

    fn strip_wall(text: &str) -> String {
        text.lines().map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l)).collect::<Vec<_>>().join("\n")
    }

    #[test]
    fn numeric_output_is_identical_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let config = manufactured_config();
        let a = run(&config, &dir.path().join("one"), Some(1)).unwrap();
        let b = run(&config, &dir.path().join("four"), Some(4)).unwrap();
        let ta = std::fs::read_to_string(a.csv_path).unwrap();
        let tb = std::fs::read_to_string(b.csv_path).unwrap();
        assert_eq!(strip_wall(&ta), strip_wall(&tb));
    }

    #[test]
    fn cost_audit_reconciles_each_call() {
        let config = ExperimentConfig {
            problem: "heat-quadratic".into(),
            dim: 1,
            kappa: None,
            mode: Mode::CostAudit,
            levels: vec![0, 1, 2],
            replications: 3,
            points: PointsSpec::Explicit(vec![EvalPoint { t: 0.0, x: vec![0.4] }]),
            seed: 3,
            ..manufactured_config()
        };
        let records = run_records(&config).unwrap();
        for r in records.iter().filter(|r| r.metric == "cost_ratio_max") {
            assert!(r.value <= 1.0, "level {} ratio {}", r.level, r.value);
        }
        assert_results(&config, &records).unwrap();
    }

    #[test]
    fn em_rate_mode_fits_a_negative_slope() {
        let config = ExperimentConfig {
            problem: "heat-nlsigma".into(),
            dim: 1,
            kappa: None,
            mode: Mode::EmRate,
            levels: vec![],
            grids: vec![8, 32],
            reference_grid: Some(256),
            paths: Some(400),
            points: PointsSpec::Explicit(vec![]),
            seed: 9,
            ..manufactured_config()
        };
        let records = run_records(&config).unwrap();
        let slope = records.iter().find(|r| r.metric == "em_slope_x").unwrap();
        assert!(slope.value < 0.0, "slope {}", slope.value);
        let rms: Vec<_> = records.iter().filter(|r| r.metric == "em_rms_x").collect();
        assert_eq!(rms.len(), 2);
        assert!(rms[0].value > rms[1].value);
    }

    #[test]
    fn residual_mode_produces_finite_components() {
        let config = ExperimentConfig {
            problem: "heat-cosine".into(),
            dim: 1,
            kappa: None,
            mode: Mode::Residual,
            levels: vec![1],
            replications: 2,
            residual_samples: Some(400),
            residual_grid: Some(8),
            points: PointsSpec::Explicit(vec![EvalPoint { t: 0.1, x: vec![0.2] }]),
            seed: 13,
            ..manufactured_config()
        };
        let records = run_records(&config).unwrap();
        let norm: Vec<_> = records.iter().filter(|r| r.metric == "residual_norm").collect();
        assert_eq!(norm.len(), 1);
        assert!(norm[0].value.is_finite());
        assert_eq!(records.iter().filter(|r| r.metric == "residual").count(), 2);
    }

    #[test]
    fn assertions_flag_violations_and_pass_clean_records() {
        let config = manufactured_config();
        let mk = |level: i64, value: f64| {
            let mut r = ResultRecord::bare("h", "convergence", "manufactured-grad", 1, "sup_weighted_rms", value);
            r.level = level;
            r
        };
        assert_results(&config, &[mk(1, 0.5), mk(2, 0.2)]).unwrap();
        assert!(assert_results(&config, &[mk(1, 0.2), mk(2, 0.5)]).is_err());

        let mut em = manufactured_config();
        em.mode = Mode::EmRate;
        let mks = |metric: &str, value: f64| {
            ResultRecord::bare("h", "em-rate", "heat-nlsigma", 1, metric, value)
        };
        assert_results(&em, &[mks("em_slope_x", -0.52), mks("em_slope_v", -0.62)]).unwrap();
        assert!(assert_results(&em, &[mks("em_slope_x", -0.9), mks("em_slope_v", -0.5)]).is_err());
        assert!(assert_results(&em, &[mks("em_slope_x", -0.5)]).is_err());
    }
}
