//! Coupled simulations of two grid resolutions on one Brownian path.
//!
//! Both runs integrate the same event partition (the fine grid's) with
//! the same increments; they differ only in where the coefficient
//! snapshot is refreshed. Because the fine grid contains every coarse
//! point bit-for-bit when K_fine is a multiple of K_coarse, refreshing
//! only at coarse points reproduces the coarse-grid scheme exactly: the
//! update is linear in the increments while frozen, so splitting a cell
//! at non-refresh boundaries changes nothing but summation order.

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::forward::{integrate_events, EulerCell, GridMap};
use crate::problem::PdeProblem;
use crate::rng::{derive_stream, gaussian_increments, RandomKey};
use crate::scalar::Real;

/// States and weights of the two resolutions at the query time.
#[derive(Clone, Debug)]
pub struct CoupledPair<T> {
    pub t: T,
    pub x_coarse: Vec<T>,
    pub v_coarse: Vec<T>,
    pub x_fine: Vec<T>,
    pub v_fine: Vec<T>,
}

/// Simulates from (s, x) to t at resolutions K_coarse and K_fine on one
/// Brownian path. K_fine must be a positive multiple of K_coarse.
pub fn coupled_fine_reference<T: Real>(
    problem: &PdeProblem<T>,
    s: T,
    x: &[T],
    t: T,
    k_coarse: u64,
    k_fine: u64,
    key: &RandomKey,
) -> Result<CoupledPair<T>> {
    if k_coarse == 0 || k_fine == 0 || k_fine % k_coarse != 0 {
        return Err(Error::domain(format!(
            "fine grid must refine the coarse grid: K_fine = {k_fine}, K_coarse = {k_coarse}"
        )));
    }
    let horizon = problem.horizon;
    if !(s >= T::zero() && s < horizon) {
        return Err(Error::domain(format!("start time {s} outside [0, {horizon})")));
    }
    if !(t > s && t <= horizon) {
        return Err(Error::domain(format!("query time {t} outside ({s}, {horizon}]")));
    }
    let ratio = k_fine / k_coarse;
    let grid = GridMap::new(horizon, k_fine)?;

    // Event times: fine grid points in (s, t], plus t itself if it is not
    // a grid point. A grid index divisible by `ratio` is a coarse point.
    let j_lo = grid.first_index_above(s);
    let j_hi = grid.last_index_at_or_below(t);
    let mut events: Vec<(T, Option<u64>)> = (j_lo..=j_hi).map(|j| (grid.point(j), Some(j))).collect();
    if events.last().map(|e| e.0) != Some(t) {
        events.push((t, None));
    }

    let d = problem.dim;
    let mut cells_fine = Vec::with_capacity(events.len());
    let mut cells_coarse = Vec::with_capacity(events.len());
    let mut prev_fine = true;
    let mut prev_coarse = true;
    for (idx, &(time, jopt)) in events.iter().enumerate() {
        let record_end = idx == events.len() - 1;
        cells_fine.push(EulerCell { t_end: time, freeze_start: prev_fine, record_end });
        cells_coarse.push(EulerCell { t_end: time, freeze_start: prev_coarse, record_end });
        prev_fine = jopt.is_some();
        prev_coarse = matches!(jopt, Some(j) if j % ratio == 0);
    }

    let mut stream = derive_stream(key);
    let mut increments = vec![T::zero(); events.len() * d];
    let mut t_prev = s;
    for (ci, cell) in cells_fine.iter().enumerate() {
        gaussian_increments(&mut stream, cell.t_end - t_prev, &mut increments[ci * d..(ci + 1) * d])?;
        t_prev = cell.t_end;
    }

    let mut scratch = CostLedger::new();
    let fine = integrate_events(problem, s, x, &cells_fine, &increments, &mut scratch, key.path())?;
    let coarse =
        integrate_events(problem, s, x, &cells_coarse, &increments, &mut scratch, key.path())?;
    let (fine, coarse) = (&fine[0], &coarse[0]);
    Ok(CoupledPair {
        t,
        x_coarse: coarse.x.clone(),
        v_coarse: coarse.z[1..].to_vec(),
        x_fine: fine.x.clone(),
        v_fine: fine.z[1..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::least_squares_slope;
    use crate::problem::{make_heat_problem, make_nonlinear_sigma_problem, HeatVariant};

    fn bits<T: Real>(v: &[T]) -> Vec<u64> {
        v.iter().map(|x| x.lossy_f64().to_bits()).collect()
    }

    #[test]
    fn equal_resolutions_coincide_bitwise() {
        let problem = make_nonlinear_sigma_problem::<f64>(2, 1.0).unwrap();
        let pair =
            coupled_fine_reference(&problem, 0.1, &[0.3, -0.2], 0.9, 16, 16, &RandomKey::new(7))
                .unwrap();
        assert_eq!(bits(&pair.x_coarse), bits(&pair.x_fine));
        assert_eq!(bits(&pair.v_coarse), bits(&pair.v_fine));
    }

    #[test]
    fn constant_coefficients_make_resolution_irrelevant_bitwise() {
        // With mu and sigma constant the frozen snapshot never matters,
        // so the two resolutions perform identical arithmetic.
        let problem = make_heat_problem::<f64>(2, 1.0, HeatVariant::Quadratic).unwrap();
        for (kc, kf) in [(1, 64), (4, 64), (16, 64)] {
            let pair =
                coupled_fine_reference(&problem, 0.0, &[0.5, 0.1], 0.7, kc, kf, &RandomKey::new(3))
                    .unwrap();
            assert_eq!(bits(&pair.x_coarse), bits(&pair.x_fine), "K = {kc} vs {kf}");
            assert_eq!(bits(&pair.v_coarse), bits(&pair.v_fine), "K = {kc} vs {kf}");
        }
    }

    #[test]
    fn state_dependent_sigma_shows_strong_convergence_in_k() {
        let problem = make_nonlinear_sigma_problem::<f64>(1, 1.0).unwrap();
        let key = RandomKey::new(2024);
        let paths = 1500usize;
        let ks = [4u64, 16, 64];
        let mut lnk = Vec::new();
        let mut lnerr = Vec::new();
        for (ki, &k) in ks.iter().enumerate() {
            let mut sum_sq = 0.0f64;
            for i in 0..paths {
                let pair = coupled_fine_reference(
                    &problem,
                    0.0,
                    &[0.2],
                    1.0,
                    k,
                    256,
                    &key.child(ki as i64).child(i as i64),
                )
                .unwrap();
                let dx = pair.x_coarse[0] - pair.x_fine[0];
                sum_sq += dx * dx;
            }
            lnk.push((k as f64).ln());
            lnerr.push((sum_sq / paths as f64).sqrt().ln());
        }
        let slope = least_squares_slope(&lnk, &lnerr);
        assert!(
            (-0.8..=-0.2).contains(&slope),
            "strong rate in K off: slope {slope}, errors {lnerr:?}"
        );
    }

    #[test]
    fn rejects_non_nested_resolutions() {
        let problem = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        let e = coupled_fine_reference(&problem, 0.0, &[0.0], 1.0, 3, 8, &RandomKey::new(0));
        assert!(e.is_err());
        let e = coupled_fine_reference(&problem, 0.0, &[0.0], 1.0, 0, 8, &RandomKey::new(0));
        assert!(e.is_err());
    }
}
