//! Recursive multilevel Picard estimator of (value, gradient).
//!
//! A call at depth n combines a terminal block of plain-average samples
//! with one block per level l < n whose summands difference the
//! nonlinearity across two estimates of adjacent depth evaluated at the
//! SAME proxy point (s, X_s) and multiplied by the SAME weight Z_s. Every
//! Monte Carlo object is addressed by a key path, so the whole tree is a
//! pure function of (inputs, key) and any subtree can be replayed in
//! isolation.
//!
//! Key layout below a call at path P, with samples indexed i = 1..M:
//! terminal block streams at P ++ (0, -i); level-l sample streams at
//! P ++ (l, i), which is also the key of the depth-l inner call; the
//! depth-(l-1) inner call sits at P ++ (l, -i).

use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::forward::{simulate_forward_with, GridMap};
use crate::problem::PdeProblem;
use crate::rng::{derive_stream, sample_proxy_time, RandomKey};
use crate::scalar::Real;

/// How per-level sample counts are rounded from the real number m^(n-l).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Ceil,
    Round,
}

/// Power values within 1e-9 relative of an integer are snapped to it
/// before rounding, so m = n^(1/3) reproduces the exact integer counts the
/// schedule intends (6^(1/3) to the 6th power must give 36, not ceil of
/// 36 + float drift).
fn round_count(raw: f64, rounding: Rounding) -> u64 {
    let nearest = raw.round();
    let snapped = if (raw - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) { nearest } else { raw };
    let v = match rounding {
        Rounding::Ceil => snapped.ceil(),
        Rounding::Round => snapped.round(),
    };
    if v < 1.0 {
        1
    } else {
        v as u64
    }
}

/// Sample count rounding(m^p), at least 1.
pub fn level_count(m: f64, p: u32, rounding: Rounding) -> u64 {
    round_count(m.powi(p as i32), rounding)
}

/// Estimator parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Picard depth; n <= 0 makes the estimator identically zero.
    pub n: i32,
    /// Branching base; level l of a depth-n call draws rounding(m^(n-l))
    /// samples.
    pub m: f64,
    /// Euler grid count.
    pub k: u64,
    /// Sample-count rounding policy.
    pub rounding: Rounding,
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < -1 {
            return Err(Error::domain(format!("depth must be >= -1, got {}", self.n)));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::domain(format!("branching base must be positive, got {}", self.m)));
        }
        if self.k == 0 {
            return Err(Error::domain("grid count must be >= 1"));
        }
        Ok(())
    }
}

/// The canonical parameter schedule indexed by depth n: m = n^(1/3) and
/// K = ceil(n^(n/3)), everything rounded with ceil.
///
/// Refuses n >= 20: the sample tree grows like (3m)^n and passes desk
/// scale long before that. [`schedule_unlimited`] skips the guard.
pub fn schedule(n: u32) -> Result<MlpParams> {
    if n >= 20 {
        return Err(Error::Refused(format!(
            "depth {n} is beyond desk scale; use the unlimited variant to force it"
        )));
    }
    schedule_unlimited(n)
}

/// [`schedule`] without the desk-scale guard.
pub fn schedule_unlimited(n: u32) -> Result<MlpParams> {
    if n == 0 {
        return Err(Error::domain("schedule needs n >= 1"));
    }
    let nf = n as f64;
    let m = nf.cbrt();
    let raw_k = if n % 3 == 0 { nf.powi((n / 3) as i32) } else { nf.powf(nf / 3.0) };
    Ok(MlpParams { n: n as i32, m, k: round_count(raw_k, Rounding::Ceil), rounding: Rounding::Ceil })
}

/// One estimator realization.
#[derive(Clone, Debug)]
pub struct Estimate<T> {
    /// Estimated (value, gradient), length d+1.
    pub value: Vec<T>,
    /// Work performed by this call alone.
    pub ledger: CostLedger,
}

/// Test seam: replaces inner recursive evaluations by a fixed function of
/// the depth, leaving every stream untouched.
type Stub<'a, T> = &'a dyn Fn(i32) -> Vec<T>;

fn recurse<T: Real>(
    problem: &PdeProblem<T>,
    params: &MlpParams,
    grid: &GridMap<T>,
    depth: i32,
    t: T,
    x: &[T],
    key: &RandomKey,
    ledger: &mut CostLedger,
    stub: Option<Stub<'_, T>>,
) -> Result<Vec<T>> {
    let d = problem.dim;
    let horizon = problem.horizon;
    let mut u = vec![T::zero(); d + 1];
    if depth <= 0 {
        return Ok(u);
    }
    let pi = T::of(std::f64::consts::PI);

    // terminal block: (g(x), 0) + mean of (g(X_T) - g(x)) Z_T
    let g_x = (problem.g)(x);
    ledger.g_evals += 1;
    u[0] = g_x;
    let m0 = level_count(params.m, depth as u32, params.rounding);
    let inv_m0 = T::one() / T::of_usize(m0 as usize);
    for i in 1..=m0 {
        let skey = key.child(0).child(-(i as i64));
        let mut stream = derive_stream(&skey);
        let fwd = simulate_forward_with(problem, grid, t, x, &[horizon], &mut stream, ledger)?;
        let diff = ((problem.g)(fwd.x_at(0)) - g_x) * inv_m0;
        ledger.g_evals += 1;
        let z = fwd.z_at(0);
        for nu in 0..=d {
            u[nu] += diff * z[nu];
        }
    }

    // Level blocks: differenced nonlinearity at the proxy time. The
    // nonlinearity integral over (t, T) is O(T - t); once that interval
    // holds no representable interior point the integral sits below double
    // resolution and only the terminal block remains.
    let levels = if t.next_up_() >= horizon { 0 } else { depth };
    for level in 0..levels {
        let m_l = level_count(params.m, (depth - level) as u32, params.rounding);
        let inv_ml = T::one() / T::of_usize(m_l as usize);
        for i in 1..=m_l {
            let skey = key.child(level as i64).child(i as i64);
            let mut stream = derive_stream(&skey);
            ledger.uniform_draws += 1;
            let s = sample_proxy_time(&mut stream, t, horizon)?;
            let fwd = simulate_forward_with(problem, grid, t, x, &[s], &mut stream, ledger)?;
            let x_s = fwd.x_at(0);
            let z_s = fwd.z_at(0);
            let w_plus = match stub {
                Some(f) => f(level),
                None => recurse(problem, params, grid, level, s, x_s, &skey, ledger, stub)?,
            };
            let mut df = (problem.f)(s, x_s, &w_plus);
            ledger.f_evals += 1;
            if level >= 1 {
                let mkey = key.child(level as i64).child(-(i as i64));
                let w_minus = match stub {
                    Some(f) => f(level - 1),
                    None => recurse(problem, params, grid, level - 1, s, x_s, &mkey, ledger, stub)?,
                };
                df -= (problem.f)(s, x_s, &w_minus);
                ledger.f_evals += 1;
            }
            // 1/rho(t,s) = pi sqrt((T-s)(s-t)); multiplied, not divided,
            // so near-endpoint samples cannot blow up the weight
            let inv_rho = pi * ((horizon - s) * (s - t)).sqrt();
            let scale = df * inv_rho * inv_ml;
            for nu in 0..=d {
                u[nu] += scale * z_s[nu];
            }
        }
    }

    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "estimator value", path: key.path().to_vec() });
    }
    Ok(u)
}

fn validate_inputs<T: Real>(problem: &PdeProblem<T>, params: &MlpParams, t: T, x: &[T]) -> Result<()> {
    params.validate()?;
    if x.len() != problem.dim {
        return Err(Error::domain(format!(
            "point has length {}, problem dimension is {}",
            x.len(),
            problem.dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("evaluation point must be finite"));
    }
    if !(t >= T::zero() && t < problem.horizon) {
        return Err(Error::domain(format!("time {t} outside [0, {})", problem.horizon)));
    }
    Ok(())
}

/// One realization of the depth-n estimator at (t, x), addressed by `key`.
/// The work is added to `ledger`; the returned estimate carries its own
/// copy of the per-call counts.
pub fn mlp_estimate<T: Real>(
    problem: &PdeProblem<T>,
    params: &MlpParams,
    t: T,
    x: &[T],
    key: &RandomKey,
    ledger: &mut CostLedger,
) -> Result<Estimate<T>> {
    validate_inputs(problem, params, t, x)?;
    let grid = GridMap::new(problem.horizon, params.k)?;
    let mut local = CostLedger::new();
    let value = recurse(problem, params, &grid, params.n, t, x, key, &mut local, None)?;
    ledger.merge(&local);
    Ok(Estimate { value, ledger: local })
}

/// [`mlp_estimate`] with inner recursive evaluations replaced by `stub`;
/// sample streams are untouched, so blocks can be reproduced in isolation.
#[cfg(test)]
pub(crate) fn mlp_estimate_stubbed<T: Real>(
    problem: &PdeProblem<T>,
    params: &MlpParams,
    t: T,
    x: &[T],
    key: &RandomKey,
    ledger: &mut CostLedger,
    stub: Stub<'_, T>,
) -> Result<Estimate<T>> {
    validate_inputs(problem, params, t, x)?;
    let grid = GridMap::new(problem.horizon, params.k)?;
    let mut local = CostLedger::new();
    let value = recurse(problem, params, &grid, params.n, t, x, key, &mut local, Some(stub))?;
    ledger.merge(&local);
    Ok(Estimate { value, ledger: local })
}

/// R independent realizations at each point. Realization r of point p uses
/// key base_key ++ (p, r), so results are independent across points and
/// replications, deterministic, and safe to compute concurrently; failures
/// stay local to their realization.
pub fn mlp_batch<T: Real>(
    problem: &PdeProblem<T>,
    params: &MlpParams,
    points: &[(T, Vec<T>)],
    replications: u32,
    base_key: &RandomKey,
) -> Result<Vec<Vec<Result<Estimate<T>>>>> {
    use rayon::prelude::*;
    if replications == 0 {
        return Err(Error::domain("replication count must be >= 1"));
    }
    params.validate()?;
    let r = replications as usize;
    let flat: Vec<Result<Estimate<T>>> = (0..points.len() * r)
        .into_par_iter()
        .map(|idx| {
            let (pi, ri) = (idx / r, idx % r);
            let (t, x) = &points[pi];
            let key = base_key.child(pi as i64).child(ri as i64);
            let mut ledger = CostLedger::new();
            mlp_estimate(problem, params, *t, x, &key, &mut ledger)
        })
        .collect();
    let mut out = Vec::with_capacity(points.len());
    let mut it = flat.into_iter();
    for _ in 0..points.len() {
        out.push(it.by_ref().take(r).collect());
    }
    Ok(out)
}
