//! Monte Carlo residual of the semilinear fixed-point equation.
//!
//! A candidate solution w is plugged into the right-hand side
//!
//!   E[ g(X_T) Z_T ] + E[ f(S, X_S, w(S, X_S)) Z_S / rho(S) ],
//!
//! with S a proxy-time draw, and the candidate's own value at (t, x) is
//! subtracted. Each draw uses one shared path for the terminal and the
//! interior term. For the true solution the mean residual is the
//! frozen-coefficient bias alone, which vanishes as K grows and is zero
//! outright when the coefficients are constant.

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::forward::{simulate_forward_with, GridMap};
use crate::par::map_reduce;
use crate::problem::PdeProblem;
use crate::rng::{derive_stream, rho, sample_proxy_time, RandomKey};
use crate::scalar::Real;

/// Componentwise residual mean with its standard error, length d + 1.
#[derive(Clone, Debug)]
pub struct ResidualEstimate<T> {
    pub mean: Vec<T>,
    pub std_err: Vec<T>,
    pub samples: u64,
}

struct Acc<T> {
    sum: Vec<T>,
    sum_sq: Vec<T>,
}

/// Estimates the fixed-point residual of `candidate` at (t, x) from m
/// paths on the K-point grid. Draw i uses the stream at key ++ (i); the
/// reduction tree is fixed, so results do not depend on thread count.
pub fn sfpe_residual<T, W>(
    problem: &PdeProblem<T>,
    candidate: &W,
    t: T,
    x: &[T],
    m: u64,
    k: u64,
    key: &RandomKey,
) -> Result<ResidualEstimate<T>>
where
    T: Real,
    W: Fn(T, &[T]) -> Vec<T> + Sync,
{
    if m == 0 {
        return Err(Error::domain("residual estimate needs at least one draw"));
    }
    let d = problem.dim;
    let horizon = problem.horizon;
    if x.len() != d {
        return Err(Error::domain(format!("state has length {}, problem dimension is {d}", x.len())));
    }
    if !(t >= T::zero() && t < horizon) {
        return Err(Error::domain(format!("start time {t} outside [0, {horizon})")));
    }
    let grid = GridMap::new(horizon, k)?;
    let w_here = candidate(t, x);
    if w_here.len() != d + 1 {
        return Err(Error::domain(format!(
            "candidate returned {} components, expected {}",
            w_here.len(),
            d + 1
        )));
    }

    let leaf = |i: usize| -> Result<Acc<T>> {
        let mut ledger = CostLedger::new();
        let mut stream = derive_stream(&key.child(i as i64));
        let s = sample_proxy_time(&mut stream, t, horizon)?;
        let sample = simulate_forward_with(problem, &grid, t, x, &[s, horizon], &mut stream, &mut ledger)?;
        let g_term = (problem.g)(sample.x_at(1));
        let w_s = candidate(s, sample.x_at(0));
        if w_s.len() != d + 1 {
            return Err(Error::domain("candidate returned the wrong number of components"));
        }
        let f_term = (problem.f)(s, sample.x_at(0), &w_s) / rho(t, s, horizon)?;
        let z_t = sample.z_at(1);
        let z_s = sample.z_at(0);
        let mut sum = vec![T::zero(); d + 1];
        let mut sum_sq = vec![T::zero(); d + 1];
        for j in 0..=d {
            let v = g_term * z_t[j] + f_term * z_s[j];
            sum[j] = v;
            sum_sq[j] = v * v;
        }
        Ok(Acc { sum, sum_sq })
    };
    let combine = |a: Result<Acc<T>>, b: Result<Acc<T>>| -> Result<Acc<T>> {
        let (mut a, b) = (a?, b?);
        for j in 0..a.sum.len() {
            a.sum[j] += b.sum[j];
            a.sum_sq[j] += b.sum_sq[j];
        }
        Ok(a)
    };
    let acc = map_reduce(0, m as usize, 64, &leaf, &combine).expect("m >= 1")?;

    let mf = T::of(m as f64);
    let mut mean = vec![T::zero(); d + 1];
    let mut std_err = vec![T::zero(); d + 1];
    for j in 0..=d {
        let avg = acc.sum[j] / mf;
        mean[j] = avg - w_here[j];
        if m > 1 {
            let var = ((acc.sum_sq[j] - acc.sum[j] * avg) / (mf - T::one())).max(T::zero());
            std_err[j] = (var / mf).sqrt();
        }
    }
    Ok(ResidualEstimate { mean, std_err, samples: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ReferenceSolution;
    use crate::problem::{make_heat_problem, make_manufactured_gradient_problem, HeatVariant};

    fn closed_form_candidate(
        problem: &PdeProblem<f64>,
    ) -> impl Fn(f64, &[f64]) -> Vec<f64> + Sync + '_ {
        let r = ReferenceSolution::from_closed_form(problem).unwrap();
        move |t, x| r.evaluate(t, x)
    }

    #[test]
    fn exact_solution_has_zero_residual_within_noise() {
        // Constant diffusion: the simulated path is exact, so the
        // residual is unbiased and only sampling noise remains.
        let problem = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        let candidate = closed_form_candidate(&problem);
        let r = sfpe_residual(&problem, &candidate, 0.1, &[0.4], 20_000, 64, &RandomKey::new(11))
            .unwrap();
        for j in 0..2 {
            assert!(
                r.mean[j].abs() <= 4.0 * r.std_err[j],
                "component {j}: residual {} vs se {}",
                r.mean[j],
                r.std_err[j]
            );
            assert!(r.std_err[j] > 0.0);
        }
    }

    #[test]
    fn zero_candidate_recovers_the_value_when_f_vanishes() {
        let problem = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        let exact = ReferenceSolution::from_closed_form(&problem).unwrap();
        let zero = |_: f64, _: &[f64]| vec![0.0, 0.0];
        let (t, x) = (0.2, [0.3]);
        let r = sfpe_residual(&problem, &zero, t, &x, 20_000, 16, &RandomKey::new(5)).unwrap();
        let w = exact.evaluate(t, &x);
        for j in 0..2 {
            assert!(
                (r.mean[j] - w[j]).abs() <= 4.0 * r.std_err[j],
                "component {j}: {} vs {}",
                r.mean[j],
                w[j]
            );
        }
    }

    #[test]
    fn gradient_nonlinearity_keeps_zero_residual_across_grids() {
        let problem = make_manufactured_gradient_problem::<f64>(1, 1.0, 0.5).unwrap();
        let candidate = closed_form_candidate(&problem);
        for (seed, k) in [(21u64, 16u64), (22, 64)] {
            let r =
                sfpe_residual(&problem, &candidate, 0.25, &[0.3], 20_000, k, &RandomKey::new(seed))
                    .unwrap();
            for j in 0..2 {
                assert!(
                    r.mean[j].abs() <= 4.0 * r.std_err[j],
                    "K = {k}, component {j}: residual {} vs se {}",
                    r.mean[j],
                    r.std_err[j]
                );
            }
        }
    }

    #[test]
    fn rejects_malformed_candidates_and_empty_sampling() {
        let problem = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        let bad = |_: f64, _: &[f64]| vec![0.0];
        assert!(sfpe_residual(&problem, &bad, 0.1, &[0.0], 10, 4, &RandomKey::new(0)).is_err());
        let zero = |_: f64, _: &[f64]| vec![0.0, 0.0];
        assert!(sfpe_residual(&problem, &zero, 0.1, &[0.0], 0, 4, &RandomKey::new(0)).is_err());
    }
}
