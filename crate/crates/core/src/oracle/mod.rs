//! Independent reference machinery used to validate the estimator.
//!
//! Everything here deliberately avoids the code paths it checks: the
//! finite-difference solver never touches the forward simulation, the
//! nested Picard oracle never calls the multilevel recursion, and the
//! residual check treats a candidate solution as an opaque function. The
//! pieces triangulate each other: closed forms validate the
//! finite-difference solver, which validates the nested oracle on problems
//! without a closed form, and all three bound the estimator.

mod coupled;
mod fd;
mod golden;
mod nested;
mod quadrature;
mod residual;

pub use coupled::{coupled_fine_reference, CoupledPair};
pub use fd::fd_solve_1d;
pub use golden::{check_golden, check_or_regen, config_hash, write_golden, GoldenRecord, GoldenStatus, REGEN_ENV};
pub use nested::nested_picard;
pub use quadrature::{tanh_sinh, tanh_sinh_offsets};
pub use residual::{sfpe_residual, ResidualEstimate};

use serde::{Deserialize, Serialize};

use crate::problem::{PdeProblem, SolutionFn};
use crate::scalar::Real;

/// Where a reference solution came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    FiniteDifference,
    NestedPicard,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::ClosedForm => "closed-form",
            Provenance::FiniteDifference => "finite-difference",
            Provenance::NestedPicard => "nested-picard",
        }
    }
}

/// A (value, gradient) map usable as ground truth, tagged with how it was
/// obtained.
#[derive(Clone)]
pub struct ReferenceSolution<T: Real> {
    pub provenance: Provenance,
    pub dim: usize,
    eval: SolutionFn<T>,
}

impl<T: Real> std::fmt::Debug for ReferenceSolution<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceSolution")
            .field("provenance", &self.provenance)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ReferenceSolution<T> {
    pub fn new(provenance: Provenance, dim: usize, eval: SolutionFn<T>) -> Self {
        ReferenceSolution { provenance, dim, eval }
    }

    /// Wraps the problem's closed form, when it has one.
    pub fn from_closed_form(problem: &PdeProblem<T>) -> Option<Self> {
        problem.known_solution.clone().map(|eval| ReferenceSolution {
            provenance: Provenance::ClosedForm,
            dim: problem.dim,
            eval,
        })
    }

    /// (value, gradient) at (t, x), length d + 1.
    pub fn evaluate(&self, t: T, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim + 1];
        (self.eval)(t, x, &mut out);
        out
    }
}

/// Kolmogorov-Smirnov statistic sup_b |F_n(b) - F(b)| of an ascending
/// sample against a reference CDF. Panics if the sample is empty or out of
/// order.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!sorted.is_empty(), "KS statistic needs at least one sample");
    assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "KS statistic needs a sorted sample");
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let c = cdf(v);
        d = d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Critical value sqrt(ln(2/alpha) / 2) / sqrt(n): the sample KS statistic
/// exceeds this with probability at most alpha when the sample really has
/// the reference distribution (Dvoretzky-Kiefer-Wolfowitz bound).
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    assert!(n > 0, "KS critical value needs n >= 1");
    assert!(alpha > 0.0 && alpha < 1.0, "significance must be in (0, 1)");
    ((2.0 / alpha).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Least-squares slope of y against x; used for log-log rate fits.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(xs.len() == ys.len() && xs.len() >= 2, "slope fit needs matched samples, two or more");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
