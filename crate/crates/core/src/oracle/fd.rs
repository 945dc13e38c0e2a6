//! One-dimensional finite-difference reference solver.
//!
//! Crank-Nicolson in time on the truncated interval [-radius, radius],
//! central differences in space. The nonlinearity is handled by two lagged
//! sweeps per step: solve with f frozen at the old level, then re-solve
//! with f at the average of old level and first sweep, which restores
//! second order in time. Boundary values come from the known solution when
//! the problem has one, otherwise from linear extrapolation of the
//! interior; in the latter case queries should stay in the inner half of
//! the interval.
//!
//! The solve produces a dense (nt + 1) x nx table. Queries interpolate the
//! value bilinearly in (t, x) and the gradient bilinearly from centered
//! differences of the table.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::oracle::{Provenance, ReferenceSolution};
use crate::problem::PdeProblem;
use crate::scalar::Real;

struct Table<T> {
    values: Vec<T>,
    nt: usize,
    nx: usize,
    dt: T,
    h: T,
    x_lo: T,
}

impl<T: Real> Table<T> {
    fn v(&self, k: usize, i: usize) -> T {
        self.values[k * self.nx + i]
    }

    // Centered-difference gradient at node (k, i), 1 <= i <= nx - 2.
    fn grad(&self, k: usize, i: usize) -> T {
        (self.v(k, i + 1) - self.v(k, i - 1)) / (T::of(2.0) * self.h)
    }

    fn evaluate(&self, t: T, x: T, out: &mut [T]) {
        let kf = (t / self.dt).lossy_f64().clamp(0.0, self.nt as f64);
        let k0 = (kf.floor() as usize).min(self.nt - 1);
        let tau = T::of(kf - k0 as f64);
        // Gradient queries need neighbors on both sides, hence the clamp
        // to [1, nx - 3].
        let xif = ((x - self.x_lo) / self.h).lossy_f64().clamp(1.0, (self.nx - 3) as f64);
        let i0 = (xif.floor() as usize).min(self.nx - 3).max(1);
        let xi = T::of((xif - i0 as f64).clamp(0.0, 1.0));

        let one = T::one();
        let blend = |f00: T, f01: T, f10: T, f11: T| {
            (one - tau) * ((one - xi) * f00 + xi * f01) + tau * ((one - xi) * f10 + xi * f11)
        };
        out[0] = blend(self.v(k0, i0), self.v(k0, i0 + 1), self.v(k0 + 1, i0), self.v(k0 + 1, i0 + 1));
        out[1] =
            blend(self.grad(k0, i0), self.grad(k0, i0 + 1), self.grad(k0 + 1, i0), self.grad(k0 + 1, i0 + 1));
    }
}

// Tridiagonal solve; sub/diag/sup are the three bands, rhs is overwritten
// with scratch and the solution lands in `out`.
fn thomas<T: Real>(sub: &[T], diag: &[T], sup: &[T], rhs: &mut [T], out: &mut [T]) {
    let n = diag.len();
    let mut cp = vec![T::zero(); n];
    cp[0] = sup[0] / diag[0];
    rhs[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * cp[i - 1];
        cp[i] = sup[i] / den;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / den;
    }
    out[n - 1] = rhs[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = rhs[i] - cp[i] * out[i + 1];
    }
}

/// Solves the terminal-value problem on [-radius, radius] with nt time
/// steps and nx space nodes and returns the table as a queryable
/// reference. Fails if the march loses stability; the error suggests a
/// finer time grid.
pub fn fd_solve_1d<T: Real>(
    problem: &PdeProblem<T>,
    nt: usize,
    nx: usize,
    radius: f64,
) -> Result<ReferenceSolution<T>> {
    if problem.dim != 1 {
        return Err(Error::domain(format!(
            "finite-difference reference is one-dimensional, problem has d = {}",
            problem.dim
        )));
    }
    if nt < 2 || nx < 5 {
        return Err(Error::domain("finite-difference grid needs nt >= 2 and nx >= 5"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::domain(format!("radius must be positive, got {radius}")));
    }
    let horizon = problem.horizon;
    let dt = horizon / T::of(nt as f64);
    let h = T::of(2.0 * radius / (nx - 1) as f64);
    let x_lo = T::of(-radius);
    let half = T::of(0.5);
    let quarter = T::of(0.25);

    let xs: Vec<T> = (0..nx).map(|i| x_lo + T::of(i as f64) * h).collect();
    let mut mu = vec![T::zero(); nx];
    let mut s2 = vec![T::zero(); nx];
    let mut buf = [T::zero()];
    for i in 0..nx {
        let xi = std::slice::from_ref(&xs[i]);
        (problem.mu)(xi, &mut buf);
        mu[i] = buf[0];
        (problem.sigma)(xi, &mut buf);
        s2[i] = buf[0] * buf[0];
    }

    // Implicit bands of (I - dt/2 L) over interior nodes 1..nx-1; the
    // coefficients are time independent. The explicit half-step satisfies
    // (I + dt/2 L) = 2 I - (I - dt/2 L), reused below.
    let ni = nx - 2;
    let mut sub = vec![T::zero(); ni];
    let mut diag = vec![T::zero(); ni];
    let mut sup = vec![T::zero(); ni];
    for r in 0..ni {
        let i = r + 1;
        let adv = quarter * dt * mu[i] / h;
        let dif = quarter * dt * s2[i] / (h * h);
        sub[r] = adv - dif;
        diag[r] = T::one() + T::of(2.0) * dif;
        sup[r] = -adv - dif;
    }

    let mut values = vec![T::zero(); (nt + 1) * nx];
    let mut g_max = T::zero();
    for i in 0..nx {
        let gi = (problem.g)(std::slice::from_ref(&xs[i]));
        values[nt * nx + i] = gi;
        g_max = g_max.max(gi.abs());
    }
    let blow_limit = T::of(1e6) * (T::one() + g_max);

    let mut rhs_base = vec![T::zero(); ni];
    let mut rhs = vec![T::zero(); ni];
    let mut v_new = vec![T::zero(); nx];
    let mut w_bar = vec![T::zero(); nx];

    for k in (0..nt).rev() {
        let v_old: Vec<T> = values[(k + 1) * nx..(k + 2) * nx].to_vec();
        let t_new = dt * T::of(k as f64);
        let t_mid = dt * (T::of(k as f64) + half);

        // Boundary values at the new level; extrapolation uses the old
        // level as a predictor and is replaced after the solve.
        let (mut bl, mut br) = match &problem.known_solution {
            Some(sol) => {
                let mut w = [T::zero(), T::zero()];
                sol(t_new, std::slice::from_ref(&xs[0]), &mut w);
                let bl = w[0];
                sol(t_new, std::slice::from_ref(&xs[nx - 1]), &mut w);
                (bl, w[0])
            }
            None => (
                T::of(2.0) * v_old[1] - v_old[2],
                T::of(2.0) * v_old[nx - 2] - v_old[nx - 3],
            ),
        };

        for r in 0..ni {
            let i = r + 1;
            rhs_base[r] = T::of(2.0) * v_old[i]
                - (sub[r] * v_old[i - 1] + diag[r] * v_old[i] + sup[r] * v_old[i + 1]);
        }
        rhs_base[0] -= sub[0] * bl;
        rhs_base[ni - 1] -= sup[ni - 1] * br;

        v_new.copy_from_slice(&v_old);
        for _sweep in 0..2 {
            for i in 0..nx {
                w_bar[i] = half * (v_old[i] + v_new[i]);
            }
            for r in 0..ni {
                let i = r + 1;
                let grad = (w_bar[i + 1] - w_bar[i - 1]) / (T::of(2.0) * h);
                let fv = (problem.f)(t_mid, std::slice::from_ref(&xs[i]), &[w_bar[i], grad]);
                rhs[r] = rhs_base[r] + dt * fv;
            }
            thomas(&sub, &diag, &sup, &mut rhs, &mut v_new[1..nx - 1]);
            v_new[0] = bl;
            v_new[nx - 1] = br;
        }
        if problem.known_solution.is_none() {
            bl = T::of(2.0) * v_new[1] - v_new[2];
            br = T::of(2.0) * v_new[nx - 2] - v_new[nx - 3];
            v_new[0] = bl;
            v_new[nx - 1] = br;
        }

        let mut vmax = T::zero();
        for &v in v_new.iter() {
            if !v.is_finite() {
                vmax = blow_limit + blow_limit;
                break;
            }
            vmax = vmax.max(v.abs());
        }
        if vmax > blow_limit {
            return Err(Error::Refused(format!(
                "finite-difference march diverged at step {} of {nt}; increase nt (for example {})",
                nt - k,
                2 * nt
            )));
        }
        values[k * nx..(k + 1) * nx].copy_from_slice(&v_new);
    }

    let table = Arc::new(Table { values, nt, nx, dt, h, x_lo });
    let eval = Arc::new(move |t: T, x: &[T], out: &mut [T]| {
        table.evaluate(t, x[0], out);
    });
    Ok(ReferenceSolution::new(Provenance::FiniteDifference, 1, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        make_heat_problem, make_manufactured_gradient_problem, make_nonlinear_sigma_problem,
        HeatVariant,
    };
    use crate::oracle::ReferenceSolution;

    fn max_errors<T: Real>(
        reference: &ReferenceSolution<T>,
        exact: &ReferenceSolution<T>,
        probes: &[(f64, f64)],
    ) -> (f64, f64) {
        let mut ev = 0.0f64;
        let mut eg = 0.0f64;
        for &(t, x) in probes {
            let w_ref = reference.evaluate(T::of(t), &[T::of(x)]);
            let w_true = exact.evaluate(T::of(t), &[T::of(x)]);
            ev = ev.max((w_ref[0] - w_true[0]).lossy_f64().abs());
            eg = eg.max((w_ref[1] - w_true[1]).lossy_f64().abs());
        }
        (ev, eg)
    }

    fn probe_grid() -> Vec<(f64, f64)> {
        let mut probes = Vec::new();
        for ti in 0..6 {
            for xi in -4..=4 {
                probes.push((0.19 * ti as f64, 0.97 * xi as f64));
            }
        }
        probes
    }

    #[test]
    fn heat_cosine_table_matches_closed_form() {
        let problem = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        let fd = fd_solve_1d(&problem, 2000, 801, 8.0).unwrap();
        assert_eq!(fd.provenance, Provenance::FiniteDifference);
        let exact = ReferenceSolution::from_closed_form(&problem).unwrap();
        let (ev, eg) = max_errors(&fd, &exact, &probe_grid());
        assert!(ev < 1e-4, "value error {ev}");
        assert!(eg < 1e-3, "gradient error {eg}");
    }

    #[test]
    fn gradient_nonlinearity_table_matches_closed_form() {
        let problem = make_manufactured_gradient_problem::<f64>(1, 1.0, 0.5).unwrap();
        let fd = fd_solve_1d(&problem, 2000, 801, 8.0).unwrap();
        let exact = ReferenceSolution::from_closed_form(&problem).unwrap();
        let (ev, eg) = max_errors(&fd, &exact, &probe_grid());
        assert!(ev < 1e-3, "value error {ev}");
        assert!(eg < 1e-2, "gradient error {eg}");
    }

    #[test]
    fn refinement_cuts_the_error_by_at_least_three() {
        // Probes sit on nodes of both grids (x multiples of 2 h_coarse, t
        // multiples of 2 dt_coarse), so the measurement sees the scheme's
        // own truncation error and not the interpolation offsets, which
        // differ between the grids.
        let mut probes = Vec::new();
        for ti in 0..5 {
            for xi in -9i32..=9 {
                probes.push((0.2 * ti as f64, 0.32 * xi as f64));
            }
        }
        let sup = |fd: &ReferenceSolution<f64>, exact: &ReferenceSolution<f64>| -> f64 {
            probes
                .iter()
                .map(|&(t, x)| (fd.evaluate(t, &[x])[0] - exact.evaluate(t, &[x])[0]).abs())
                .fold(0.0f64, f64::max)
        };
        let problem = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        let exact = ReferenceSolution::from_closed_form(&problem).unwrap();
        let e_coarse = sup(&fd_solve_1d(&problem, 250, 101, 8.0).unwrap(), &exact);
        let e_fine = sup(&fd_solve_1d(&problem, 500, 201, 8.0).unwrap(), &exact);
        assert!(
            e_coarse >= 3.0 * e_fine,
            "second-order refinement too weak: {e_coarse} vs {e_fine}"
        );
    }

    #[test]
    fn extrapolated_boundaries_stay_sane_without_a_closed_form() {
        let problem = make_nonlinear_sigma_problem::<f64>(1, 1.0).unwrap();
        let fd = fd_solve_1d(&problem, 400, 201, 8.0).unwrap();
        let w = fd.evaluate(0.5, &[0.2]);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!(w[0].abs() < 10.0, "value {} out of scale", w[0]);
    }

    #[test]
    fn rejects_bad_grids_and_dimensions() {
        let p1 = make_heat_problem::<f64>(2, 1.0, HeatVariant::Cosine).unwrap();
        assert!(fd_solve_1d(&p1, 100, 101, 8.0).is_err());
        let p2 = make_heat_problem::<f64>(1, 1.0, HeatVariant::Cosine).unwrap();
        assert!(fd_solve_1d(&p2, 1, 101, 8.0).is_err());
        assert!(fd_solve_1d(&p2, 100, 3, 8.0).is_err());
        assert!(fd_solve_1d(&p2, 100, 101, 0.0).is_err());
    }

    #[test]
    fn stiff_explicit_nonlinearity_reports_divergence_with_a_remedy() {
        use std::sync::Arc;
        let problem = PdeProblem::<f64> {
            name: "stiff-test".into(),
            dim: 1,
            horizon: 1.0,
            mu: Arc::new(|_, out| out[0] = 0.0),
            sigma: Arc::new(|_, out| out[0] = 1.0),
            sigma_inv: Arc::new(|_, out| out[0] = 1.0),
            d_mu: Arc::new(|_, _, out| out[0] = 0.0),
            d_sigma: Arc::new(|_, _, out| out[0] = 0.0),
            f: Arc::new(|_, _, w| 1.0e6 * w[0]),
            g: Arc::new(|_| 1.0),
            c: 1.0,
            lipschitz: vec![1.0e6, 0.0],
            known_solution: None,
        };
        let err = fd_solve_1d(&problem, 50, 101, 4.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("increase nt"), "unhelpful message: {msg}");
        assert!(msg.contains("100"), "no suggested grid in: {msg}");
    }
}
