//! Nested-simulation Picard iteration.
//!
//! The iterates u_0 = 0, u_{j+1} = Phi(u_j) are evaluated by brute force:
//! each outer draw simulates one path carrying a terminal term and one
//! proxy-time interior term (the terminal term keeps the same g(x)
//! baseline as the main estimator), and every inner evaluation of the
//! previous iterate re-simulates from scratch with fresh streams. Nothing
//! is shared with the multilevel recursion, which makes this slow oracle
//! an independent check on it. The projected work is bounded up front;
//! past desk scale the call refuses.

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::forward::{simulate_forward_with, GridMap};
use crate::par::map_reduce;
use crate::problem::PdeProblem;
use crate::rng::{derive_stream, rho, sample_proxy_time, RandomKey};
use crate::scalar::Real;

const MAX_DEPTH: u32 = 3;
const MAX_PROJECTED_SUBSTEPS: f64 = 1e9;

/// Evaluates the depth-th Picard iterate at (t, x) on the K-point grid.
/// `samples_per_level[0]` is the outermost sample count,
/// `samples_per_level[depth - 1]` the innermost. Returns the estimated
/// (value, gradient), length d + 1.
pub fn nested_picard<T: Real>(
    problem: &PdeProblem<T>,
    depth: u32,
    samples_per_level: &[u64],
    k: u64,
    t: T,
    x: &[T],
    key: &RandomKey,
) -> Result<Vec<T>> {
    let d = problem.dim;
    if d > 2 {
        return Err(Error::domain(format!(
            "nested iteration is a tiny-instance oracle; d = {d} is past d = 2"
        )));
    }
    if depth > MAX_DEPTH {
        return Err(Error::domain(format!("nested iteration supports depth <= {MAX_DEPTH}, got {depth}")));
    }
    if samples_per_level.len() != depth as usize {
        return Err(Error::domain(format!(
            "need one sample count per level: depth {depth}, got {}",
            samples_per_level.len()
        )));
    }
    if samples_per_level.iter().any(|&m| m == 0) {
        return Err(Error::domain("sample counts must be >= 1"));
    }
    if x.len() != d {
        return Err(Error::domain(format!("state has length {}, problem dimension is {d}", x.len())));
    }
    let horizon = problem.horizon;
    if !(t >= T::zero() && t < horizon) {
        return Err(Error::domain(format!("start time {t} outside [0, {horizon})")));
    }
    let grid = GridMap::new(horizon, k)?;

    // A path touches at most K grid cells plus the two query boundaries.
    let per_path = (k + 2) as f64;
    let projected = samples_per_level
        .iter()
        .rev()
        .fold(0.0f64, |inner, &m| m as f64 * (per_path + inner));
    if projected > MAX_PROJECTED_SUBSTEPS {
        return Err(Error::Refused(format!(
            "nested iteration projects {projected:.3e} forward substeps, past the {MAX_PROJECTED_SUBSTEPS:.0e} desk limit; reduce the sample counts"
        )));
    }

    eval(problem, &grid, samples_per_level, t, x, key, true)
}

fn eval<T: Real>(
    problem: &PdeProblem<T>,
    grid: &GridMap<T>,
    levels: &[u64],
    t: T,
    x: &[T],
    key: &RandomKey,
    parallel: bool,
) -> Result<Vec<T>> {
    let d = problem.dim;
    if levels.is_empty() {
        return Ok(vec![T::zero(); d + 1]);
    }
    let m = levels[0];
    let horizon = grid.horizon();
    let g_x = (problem.g)(x);
    // The interior integral over (t, T) is O(T - t); once no representable
    // time is left inside the interval it sits below double resolution and
    // only the terminal term survives.
    let terminal_only = t.next_up_() >= horizon;

    let draw = |i: usize| -> Result<Vec<T>> {
        let sample_key = key.child(i as i64);
        let mut stream = derive_stream(&sample_key);
        let mut ledger = CostLedger::new();
        if terminal_only {
            let sample =
                simulate_forward_with(problem, grid, t, x, &[horizon], &mut stream, &mut ledger)?;
            let g_term = (problem.g)(sample.x_at(0)) - g_x;
            let z_t = sample.z_at(0);
            return Ok((0..=d).map(|j| g_term * z_t[j]).collect());
        }
        let s = sample_proxy_time(&mut stream, t, horizon)?;
        let sample =
            simulate_forward_with(problem, grid, t, x, &[s, horizon], &mut stream, &mut ledger)?;
        let g_term = (problem.g)(sample.x_at(1)) - g_x;
        // Fresh inner run; its streams are children of the sample key and
        // never collide with the sample's own stream.
        let w_inner = eval(problem, grid, &levels[1..], s, sample.x_at(0), &sample_key, false)?;
        let f_term = (problem.f)(s, sample.x_at(0), &w_inner) / rho(t, s, horizon)?;
        let z_t = sample.z_at(1);
        let z_s = sample.z_at(0);
        Ok((0..=d).map(|j| g_term * z_t[j] + f_term * z_s[j]).collect())
    };
    let combine = |a: Result<Vec<T>>, b: Result<Vec<T>>| -> Result<Vec<T>> {
        let (mut a, b) = (a?, b?);
        for j in 0..a.len() {
            a[j] += b[j];
        }
        Ok(a)
    };
    // Only the outermost level fans out to worker threads; the reduction
    // tree is fixed either way.
    let leaf = if parallel { 16 } else { m as usize };
    let sum = map_reduce(0, m as usize, leaf.max(1), &draw, &combine).expect("m >= 1")?;

    let mf = T::of(m as f64);
    let mut out: Vec<T> = sum.into_iter().map(|v| v / mf).collect();
    out[0] += g_x;
    Ok(out)
}
