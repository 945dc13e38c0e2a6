//! Cost accounting: instrumented runtime counters, the closed-form cost
//! recurrence of the estimator, and the reconciliation between them.
//!
//! Conventions. One e-unit is one Euler substep: a bundle of one mu, one
//! sigma, one inverse-sigma application, the directional-derivative
//! applications for the d columns of the first-variation matrix, and d
//! Gaussian draws. The uniform draw behind each proxy-time sample is
//! ledgered but carries no e-weight. Counts of f and g are literal call
//! counts, with g(x) cached once per estimator call, so a call at depth n
//! performs 1 + (terminal sample count) evaluations of g.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{level_count, MlpParams, Rounding};

/// Instrumented work counters. Counters only increase; two ledgers merge by
/// componentwise sum, so totals are exact under any work partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Terminal-condition evaluations.
    pub g_evals: u64,
    /// Nonlinearity evaluations.
    pub f_evals: u64,
    /// mu-like coefficient applications: one mu plus d directional
    /// derivative applications per substep.
    pub mu_like_evals: u64,
    /// sigma-like applications: sigma, inverse sigma, and d directional
    /// derivative applications per substep.
    pub sigma_like_evals: u64,
    /// Scalar Gaussian draws (d per substep).
    pub gaussian_draws: u64,
    /// Scalar uniform draws (one per proxy-time sample).
    pub uniform_draws: u64,
    /// Euler substeps (cells of the event partition).
    pub euler_substeps: u64,
    /// Weight queries on intervals shorter than the degeneracy cutoff,
    /// answered with V = 0.
    pub degenerate_intervals: u64,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    /// Componentwise sum.
    pub fn merge(&mut self, other: &CostLedger) {
        self.g_evals += other.g_evals;
        self.f_evals += other.f_evals;
        self.mu_like_evals += other.mu_like_evals;
        self.sigma_like_evals += other.sigma_like_evals;
        self.gaussian_draws += other.gaussian_draws;
        self.uniform_draws += other.uniform_draws;
        self.euler_substeps += other.euler_substeps;
        self.degenerate_intervals += other.degenerate_intervals;
    }

    /// All scalar random draws.
    pub fn scalar_draws(&self) -> u64 {
        self.gaussian_draws + self.uniform_draws
    }

    /// All coefficient applications.
    pub fn coeff_evals(&self) -> u64 {
        self.mu_like_evals + self.sigma_like_evals
    }

    /// Records one Euler substep in dimension d.
    pub(crate) fn record_substep(&mut self, d: usize) {
        self.euler_substeps += 1;
        self.mu_like_evals += 1 + d as u64;
        self.sigma_like_evals += 2 + d as u64;
        self.gaussian_draws += d as u64;
    }
}

/// Per-sample unit costs used to weigh ledger entries.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CostModelParams {
    /// Cost of one Euler substep bundle.
    pub e: f64,
    /// Cost of one nonlinearity evaluation.
    pub f: f64,
    /// Cost of one terminal-condition evaluation.
    pub g: f64,
}

impl CostModelParams {
    pub const UNIT: CostModelParams = CostModelParams { e: 1.0, f: 1.0, g: 1.0 };

    /// Whether the unit costs fit the polynomial budget c * d^c.
    pub fn within_polynomial_budget(&self, c: f64, d: usize) -> bool {
        self.e + self.f + self.g <= c * (d as f64).powf(c)
    }
}

/// Closed-form cost of one estimator call at depth n, evaluated as an
/// equality with the same per-level rounding as the estimator itself:
///
/// C_n = M_n (K e + g) + sum_{l=0}^{n-1} M_{n-l} (K e + f + C_l + C_{l-1}),
///
/// with M_j = rounding(m^j) and C_{-1} = C_0 = 0.
pub fn theoretical_cost(
    n: i32,
    m: f64,
    k: u64,
    units: &CostModelParams,
    rounding: Rounding,
) -> Result<f64> {
    if n < -1 {
        return Err(Error::domain(format!("cost recurrence needs n >= -1, got {n}")));
    }
    if !(m > 0.0) {
        return Err(Error::domain(format!("cost recurrence needs m > 0, got {m}")));
    }
    if k == 0 {
        return Err(Error::domain("cost recurrence needs K >= 1"));
    }
    if n <= 0 {
        return Ok(0.0);
    }
    let n = n as usize;
    let ke = k as f64 * units.e;
    // c[j] holds C_{j-1} so the C_{-1} base case sits at index 0.
    let mut c = vec![0.0f64; n + 2];
    for depth in 1..=n {
        let mut total = level_count(m, depth as u32, rounding) as f64 * (ke + units.g);
        for l in 0..depth {
            let samples = level_count(m, (depth - l) as u32, rounding) as f64;
            total += samples * (ke + units.f + c[l + 1] + c[l]);
        }
        c[depth + 1] = total;
    }
    Ok(c[n + 1])
}

/// Closed-form dominating bound K (e + f + g) (3m)^n.
pub fn cost_upper_bound(n: u32, m: f64, k: u64, units: &CostModelParams) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("cost upper bound needs n >= 1"));
    }
    if !(m > 0.0) || k == 0 {
        return Err(Error::domain("cost upper bound needs m > 0 and K >= 1"));
    }
    Ok(k as f64 * (units.e + units.f + units.g) * (3.0 * m).powi(n as i32))
}

/// Reconciliation of an instrumented ledger against the cost model.
#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    /// e * substeps + f * f_evals + g * g_evals.
    pub weighted_instrumented: f64,
    /// Recurrence value at the same (n, m, K, rounding).
    pub theoretical: f64,
    /// K (e + f + g) (3m)^n, or 0 at n = 0.
    pub upper_bound: f64,
    /// e-weighted substep total.
    pub e_part_instrumented: f64,
    /// e-part of the recurrence (units f = g = 0).
    pub e_part_theoretical: f64,
    /// weighted_instrumented / upper_bound, 0 at n = 0.
    pub ratio_to_upper: f64,
    pub ledger: CostLedger,
}

/// Checks a ledger produced by exactly one estimator call against the cost
/// model: the weighted total must not exceed the dominating bound, and the
/// substep total must not exceed the e-part of the recurrence (the
/// recurrence charges exactly K substeps per sample path; the event
/// partition never has more than K cells).
///
/// The full weighted total can exceed the recurrence value itself by a
/// bounded margin: the recurrence charges one f per sample where levels
/// l >= 1 evaluate two (the difference term), and omits the g(x) evaluation
/// of the base term. Both overshoots are covered by the dominating bound.
pub fn reconcile(ledger: &CostLedger, params: &MlpParams, units: &CostModelParams) -> Result<CostReport> {
    let weighted = units.e * ledger.euler_substeps as f64
        + units.f * ledger.f_evals as f64
        + units.g * ledger.g_evals as f64;
    let theoretical = theoretical_cost(params.n, params.m, params.k, units, params.rounding)?;
    let e_only = CostModelParams { e: units.e, f: 0.0, g: 0.0 };
    let e_part_theoretical = theoretical_cost(params.n, params.m, params.k, &e_only, params.rounding)?;
    let e_part_instrumented = units.e * ledger.euler_substeps as f64;
    let upper_bound = if params.n <= 0 {
        0.0
    } else {
        cost_upper_bound(params.n as u32, params.m, params.k, units)?
    };
    let report = CostReport {
        weighted_instrumented: weighted,
        theoretical,
        upper_bound,
        e_part_instrumented,
        e_part_theoretical,
        ratio_to_upper: if upper_bound > 0.0 { weighted / upper_bound } else { 0.0 },
        ledger: ledger.clone(),
    };
    if params.n <= 0 {
        if *ledger != CostLedger::default() {
            return Err(Error::domain(format!("depth-0 call must not perform work: {report:?}")));
        }
        return Ok(report);
    }
    if weighted > upper_bound {
        return Err(Error::domain(format!(
            "instrumented cost {weighted} exceeds upper bound {upper_bound}: {report:?}"
        )));
    }
    if e_part_instrumented > e_part_theoretical {
        return Err(Error::domain(format!(
            "substep cost {e_part_instrumented} exceeds recurrence e-part {e_part_theoretical}: {report:?}"
        )));
    }
    Ok(report)
}
