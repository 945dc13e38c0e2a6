//! Problem instances: coefficients, nonlinearity, terminal condition and
//! the weight vector used by the error metric.
//!
//! All coefficient callables write into caller-supplied buffers and must be
//! pure: instances are shared across worker threads without synchronization.
//! Matrices are column-major throughout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// x -> vector of length d.
pub type VecFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
/// x -> d*d matrix, column-major.
pub type MatFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
/// (x, h) -> directional derivative vector of length d.
pub type DirVecFn<T> = Arc<dyn Fn(&[T], &[T], &mut [T]) + Send + Sync>;
/// (x, h) -> directional derivative matrix, d*d column-major.
pub type DirMatFn<T> = Arc<dyn Fn(&[T], &[T], &mut [T]) + Send + Sync>;
/// (t, x, w) -> scalar, where w = (value, gradient) has length d+1.
pub type NonlinFn<T> = Arc<dyn Fn(T, &[T], &[T]) -> T + Send + Sync>;
/// x -> scalar terminal value.
pub type TerminalFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
/// (t, x) -> exact (value, gradient), length d+1.
pub type SolutionFn<T> = Arc<dyn Fn(T, &[T], &mut [T]) + Send + Sync>;

/// A terminal-value problem for a semilinear PDE
/// dv/dt + (1/2) tr(sigma sigma^T Hess v) + mu . grad v + f(t, x, v, grad v) = 0,
/// v(T, .) = g, posed on [0, T] x R^d.
pub struct PdeProblem<T: Real> {
    /// Identifier used in configs and output records.
    pub name: String,
    /// Spatial dimension d.
    pub dim: usize,
    /// Time horizon T.
    pub horizon: T,
    /// Drift mu(x).
    pub mu: VecFn<T>,
    /// Diffusion sigma(x), invertible at every x.
    pub sigma: MatFn<T>,
    /// Inverse diffusion sigma(x)^-1.
    pub sigma_inv: MatFn<T>,
    /// Directional derivative (D mu)(x)(h).
    pub d_mu: DirVecFn<T>,
    /// Directional derivative (D sigma)(x)(h).
    pub d_sigma: DirMatFn<T>,
    /// Nonlinearity f(t, x, w) with w = (value, gradient).
    pub f: NonlinFn<T>,
    /// Terminal condition g(x).
    pub g: TerminalFn<T>,
    /// Global constant of the convergence estimate; metadata only, >= 1.
    pub c: T,
    /// Lipschitz weights of f across the d+1 components of w; metadata only.
    pub lipschitz: Vec<T>,
    /// Exact (value, gradient) when the problem has a closed form.
    pub known_solution: Option<SolutionFn<T>>,
}

impl<T: Real> PdeProblem<T> {
    fn check(dim: usize, horizon: T) -> Result<()> {
        if dim == 0 {
            return Err(Error::domain("problem dimension must be >= 1"));
        }
        if !(horizon > T::zero()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(())
    }
}

/// Weight vector (1, sqrt(t), ..., sqrt(t)) of length d+1; component 0
/// weighs the value, the rest weigh gradient components.
pub fn lambda_weights<T: Real>(t: T, d: usize) -> Result<Vec<T>> {
    if !(t >= T::zero()) {
        return Err(Error::domain(format!("lambda_weights needs t >= 0, got {t}")));
    }
    let root = t.sqrt();
    let mut w = vec![root; d + 1];
    w[0] = T::one();
    Ok(w)
}

/// Component nu of a packed (value, gradient) vector.
pub fn project<T: Real>(w: &[T], nu: usize) -> Result<T> {
    w.get(nu)
        .copied()
        .ok_or_else(|| Error::domain(format!("component {nu} out of range for length {}", w.len())))
}

fn zero_vec<T: Real>() -> VecFn<T> {
    Arc::new(|_x, out| out.fill(T::zero()))
}

fn identity_mat<T: Real>(d: usize) -> MatFn<T> {
    Arc::new(move |_x, out| crate::linalg::identity(out, d))
}

fn zero_dir_vec<T: Real>() -> DirVecFn<T> {
    Arc::new(|_x, _h, out| out.fill(T::zero()))
}

fn zero_dir_mat<T: Real>() -> DirMatFn<T> {
    Arc::new(|_x, _h, out| out.fill(T::zero()))
}

/// Variants of the heat-equation benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatVariant {
    /// g(x) = |x|^2, solution |x|^2 + d (T - t).
    Quadratic,
    /// g(x) = cos(sum x_k), solution exp(-d (T-t)/2) cos(sum x_k).
    Cosine,
}

/// Heat equation benchmark: mu = 0, sigma = identity, f = 0, with a closed
/// form for (value, gradient).
pub fn make_heat_problem<T: Real>(d: usize, horizon: T, variant: HeatVariant) -> Result<PdeProblem<T>> {
    PdeProblem::check(d, horizon)?;
    let (name, g, known): (&str, TerminalFn<T>, SolutionFn<T>) = match variant {
        HeatVariant::Quadratic => {
            let g: TerminalFn<T> = Arc::new(|x: &[T]| x.iter().map(|&v| v * v).sum());
            let dd = T::of_usize(d);
            let known: SolutionFn<T> = Arc::new(move |t, x: &[T], out: &mut [T]| {
                out[0] = x.iter().map(|&v| v * v).sum::<T>() + dd * (horizon - t);
                for (o, &v) in out[1..].iter_mut().zip(x) {
                    *o = T::of(2.0) * v;
                }
            });
            ("heat-quadratic", g, known)
        }
        HeatVariant::Cosine => {
            let g: TerminalFn<T> = Arc::new(|x: &[T]| x.iter().copied().sum::<T>().cos());
            let dd = T::of_usize(d);
            let known: SolutionFn<T> = Arc::new(move |t, x: &[T], out: &mut [T]| {
                let s = x.iter().copied().sum::<T>();
                let decay = (-(dd * (horizon - t)) / T::of(2.0)).exp();
                out[0] = decay * s.cos();
                out[1..].fill(-decay * s.sin());
            });
            ("heat-cosine", g, known)
        }
    };
    Ok(PdeProblem {
        name: name.to_string(),
        dim: d,
        horizon,
        mu: zero_vec(),
        sigma: identity_mat(d),
        sigma_inv: identity_mat(d),
        d_mu: zero_dir_vec(),
        d_sigma: zero_dir_mat(),
        f: Arc::new(|_t, _x, _w| T::zero()),
        g,
        c: T::one(),
        lipschitz: vec![T::zero(); d + 1],
        known_solution: Some(known),
    })
}

/// Gradient-dependent benchmark with a manufactured solution
/// v(t,x) = exp(kappa (T-t)) cos(sum x_k).
///
/// The nonlinearity is f(t,x,y,z) = y + (1/d) sum z_k + c0(t,x) with the
/// source c0 chosen so that v solves the PDE exactly:
/// c0 = (kappa + d/2 - 1) exp(kappa (T-t)) cos(sum x_k)
///      + exp(kappa (T-t)) sin(sum x_k).
/// Tests verify the residual numerically at random points.
pub fn make_manufactured_gradient_problem<T: Real>(d: usize, horizon: T, kappa: T) -> Result<PdeProblem<T>> {
    PdeProblem::check(d, horizon)?;
    let dd = T::of_usize(d);
    let f: NonlinFn<T> = Arc::new(move |t, x: &[T], w: &[T]| {
        let s = x.iter().copied().sum::<T>();
        let e = (kappa * (horizon - t)).exp();
        let c0 = (kappa + dd / T::of(2.0) - T::one()) * e * s.cos() + e * s.sin();
        let grad_avg = w[1..].iter().copied().sum::<T>() / dd;
        w[0] + grad_avg + c0
    });
    let known: SolutionFn<T> = Arc::new(move |t, x: &[T], out: &mut [T]| {
        let s = x.iter().copied().sum::<T>();
        let e = (kappa * (horizon - t)).exp();
        out[0] = e * s.cos();
        out[1..].fill(-e * s.sin());
    });
    // |f(t,x,w1) - f(t,x,w2)| <= |pr0 dw| + (1/d) sum |pr_k dw|, so with the
    // metric's terminal weights (1, sqrt(T), ...) the per-component Lipschitz
    // weights are L0 = 1 and L_k = 1/(d sqrt(T)).
    let mut lipschitz = vec![T::one() / (dd * horizon.sqrt()); d + 1];
    lipschitz[0] = T::one();
    let c = T::one() + T::one() / horizon.sqrt();
    Ok(PdeProblem {
        name: "manufactured-grad".to_string(),
        dim: d,
        horizon,
        mu: zero_vec(),
        sigma: identity_mat(d),
        sigma_inv: identity_mat(d),
        d_mu: zero_dir_vec(),
        d_sigma: zero_dir_mat(),
        f,
        g: Arc::new(|x: &[T]| x.iter().copied().sum::<T>().cos()),
        c,
        lipschitz,
        known_solution: Some(known),
    })
}

/// Heat-cosine terminal data with a state-dependent diagonal diffusion
/// sigma(x) = diag(1 + 0.1 sin x_k). No closed form; used for measuring the
/// strong discretization rate of the forward scheme.
pub fn make_nonlinear_sigma_problem<T: Real>(d: usize, horizon: T) -> Result<PdeProblem<T>> {
    PdeProblem::check(d, horizon)?;
    let tenth = T::of(0.1);
    let sigma: MatFn<T> = Arc::new(move |x: &[T], out: &mut [T]| {
        let d = x.len();
        out.fill(T::zero());
        for (k, &v) in x.iter().enumerate() {
            out[k * d + k] = T::one() + tenth * v.sin();
        }
    });
    let sigma_inv: MatFn<T> = Arc::new(move |x: &[T], out: &mut [T]| {
        let d = x.len();
        out.fill(T::zero());
        for (k, &v) in x.iter().enumerate() {
            out[k * d + k] = T::one() / (T::one() + tenth * v.sin());
        }
    });
    let d_sigma: DirMatFn<T> = Arc::new(move |x: &[T], h: &[T], out: &mut [T]| {
        let d = x.len();
        out.fill(T::zero());
        for (k, &v) in x.iter().enumerate() {
            out[k * d + k] = tenth * v.cos() * h[k];
        }
    });
    Ok(PdeProblem {
        name: "heat-nlsigma".to_string(),
        dim: d,
        horizon,
        mu: zero_vec(),
        sigma,
        sigma_inv,
        d_mu: zero_dir_vec(),
        d_sigma,
        f: Arc::new(|_t, _x, _w| T::zero()),
        g: Arc::new(|x: &[T]| x.iter().copied().sum::<T>().cos()),
        c: T::one(),
        lipschitz: vec![T::zero(); d + 1],
        known_solution: None,
    })
}

/// Looks up a built-in problem by its config id.
pub fn builtin_problem<T: Real>(id: &str, d: usize, horizon: T, kappa: Option<T>) -> Result<PdeProblem<T>> {
    match id {
        "heat-quadratic" => make_heat_problem(d, horizon, HeatVariant::Quadratic),
        "heat-cosine" => make_heat_problem(d, horizon, HeatVariant::Cosine),
        "heat-nlsigma" => make_nonlinear_sigma_problem(d, horizon),
        "manufactured-grad" => {
            let kappa = kappa.ok_or_else(|| Error::Config("manufactured-grad needs kappa".into()))?;
            make_manufactured_gradient_problem(d, horizon, kappa)
        }
        other => Err(Error::Config(format!("unknown problem id {other:?}"))),
    }
}

/// Ids accepted by [`builtin_problem`].
pub const BUILTIN_IDS: [&str; 4] = ["heat-quadratic", "heat-cosine", "heat-nlsigma", "manufactured-grad"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, RandomKey};

    fn eval_solution(p: &PdeProblem<f64>, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.dim + 1];
        (p.known_solution.as_ref().unwrap())(t, x, &mut out);
        out
    }

    #[test]
    fn lambda_weights_values() {
        assert_eq!(lambda_weights(0.0, 3).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(lambda_weights(1.0, 2).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(lambda_weights(0.25, 1).unwrap(), vec![1.0, 0.5]);
        assert!(lambda_weights(-0.1f64, 1).is_err());
    }

    #[test]
    fn project_reads_components() {
        let w = [5.0, 1.0, 2.0];
        assert_eq!(project(&w, 0).unwrap(), 5.0);
        assert_eq!(project(&w, 2).unwrap(), 2.0);
        assert!(project(&w, 3).is_err());
    }

    #[test]
    fn heat_quadratic_closed_form() {
        let p = make_heat_problem(2, 1.0, HeatVariant::Quadratic).unwrap();
        let sol = eval_solution(&p, 0.0, &[0.0, 0.0]);
        assert!((sol[0] - 2.0).abs() < 1e-15);
        assert_eq!(&sol[1..], &[0.0, 0.0]);
        let sol = eval_solution(&p, 0.3, &[1.0, -2.0]);
        assert!((sol[0] - (5.0 + 2.0 * 0.7)).abs() < 1e-12);
        assert_eq!(&sol[1..], &[2.0, -4.0]);
    }

    #[test]
    fn heat_cosine_terminal_matches_g() {
        for d in [1usize, 2, 3] {
            let p = make_heat_problem(d, 1.0, HeatVariant::Cosine).unwrap();
            let x: Vec<f64> = (0..d).map(|k| 0.3 * k as f64 - 0.2).collect();
            let sol = eval_solution(&p, 1.0 - 1e-9, &x);
            assert!((sol[0] - (p.g)(&x)).abs() < 1e-8);
        }
    }

    #[test]
    fn bad_construction_is_rejected() {
        assert!(make_heat_problem::<f64>(0, 1.0, HeatVariant::Cosine).is_err());
        assert!(make_heat_problem::<f64>(1, 0.0, HeatVariant::Cosine).is_err());
        assert!(make_manufactured_gradient_problem::<f64>(1, -1.0, 0.5).is_err());
        assert!(builtin_problem::<f64>("nope", 1, 1.0, None).is_err());
        assert!(builtin_problem::<f64>("manufactured-grad", 1, 1.0, None).is_err());
    }

    fn all_builtins(d: usize) -> Vec<PdeProblem<f64>> {
        vec![
            make_heat_problem(d, 1.0, HeatVariant::Quadratic).unwrap(),
            make_heat_problem(d, 1.0, HeatVariant::Cosine).unwrap(),
            make_manufactured_gradient_problem(d, 1.0, 0.5).unwrap(),
            make_nonlinear_sigma_problem(d, 1.0).unwrap(),
        ]
    }

    #[test]
    fn sigma_times_inverse_is_identity() {
        let mut stream = derive_stream(&RandomKey::new(101));
        for d in [1usize, 3] {
            for p in all_builtins(d) {
                let mut s = vec![0.0; d * d];
                let mut si = vec![0.0; d * d];
                for _ in 0..100 {
                    let x: Vec<f64> = (0..d).map(|_| 4.0 * stream.uniform() - 2.0).collect();
                    (p.sigma)(&x, &mut s);
                    (p.sigma_inv)(&x, &mut si);
                    // column-major product s * si, checked entrywise
                    for col in 0..d {
                        for row in 0..d {
                            let mut acc = 0.0;
                            for k in 0..d {
                                acc += s[k * d + row] * si[col * d + k];
                            }
                            let want = if row == col { 1.0 } else { 0.0 };
                            assert!((acc - want).abs() < 1e-10, "{} d={d}", p.name);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lipschitz_weights_bound_f_and_sum_below_c() {
        let mut stream = derive_stream(&RandomKey::new(102));
        for d in [1usize, 2, 4] {
            for p in all_builtins(d) {
                let lam = lambda_weights(p.horizon, d).unwrap();
                let total: f64 = p.lipschitz.iter().sum();
                assert!(total <= p.c + 1e-12, "{}", p.name);
                for _ in 0..200 {
                    let t = 0.99 * stream.uniform();
                    let x: Vec<f64> = (0..d).map(|_| 4.0 * stream.uniform() - 2.0).collect();
                    let w1: Vec<f64> = (0..=d).map(|_| 6.0 * stream.uniform() - 3.0).collect();
                    let w2: Vec<f64> = (0..=d).map(|_| 6.0 * stream.uniform() - 3.0).collect();
                    let lhs = ((p.f)(t, &x, &w1) - (p.f)(t, &x, &w2)).abs();
                    let rhs: f64 = (0..=d)
                        .map(|nu| p.lipschitz[nu] * lam[nu] * (w1[nu] - w2[nu]).abs())
                        .sum();
                    assert!(lhs <= rhs + 1e-9, "{} lhs={lhs} rhs={rhs}", p.name);
                }
            }
        }
    }

    /// 4th-order central difference residual of dv/dt + (1/2) Lap v + f.
    fn pde_residual(p: &PdeProblem<f64>, t: f64, x: &[f64]) -> f64 {
        let d = p.dim;
        let h = 1e-3;
        let value = |t: f64, x: &[f64]| eval_solution(p, t, x)[0];
        let dt = (value(t - 2.0 * h, x) - 8.0 * value(t - h, x) + 8.0 * value(t + h, x)
            - value(t + 2.0 * h, x))
            / (12.0 * h);
        let mut lap = 0.0;
        let mut y = x.to_vec();
        for k in 0..d {
            let x0 = x[k];
            let mut probe = |off: f64| {
                y[k] = x0 + off;
                let v = value(t, &y);
                y[k] = x0;
                v
            };
            lap += (-probe(2.0 * h) + 16.0 * probe(h) - 30.0 * probe(0.0) + 16.0 * probe(-h)
                - probe(-2.0 * h))
                / (12.0 * h * h);
        }
        let w = eval_solution(p, t, x);
        dt + 0.5 * lap + (p.f)(t, x, &w)
    }

    #[test]
    fn known_solutions_satisfy_the_pde() {
        let mut stream = derive_stream(&RandomKey::new(103));
        for d in [1usize, 2, 3] {
            let problems = vec![
                make_heat_problem(d, 1.0, HeatVariant::Quadratic).unwrap(),
                make_heat_problem(d, 1.0, HeatVariant::Cosine).unwrap(),
                make_manufactured_gradient_problem(d, 1.0, 0.5).unwrap(),
                make_manufactured_gradient_problem(d, 1.0, -0.3).unwrap(),
            ];
            for p in problems {
                for _ in 0..100 {
                    let t = 0.01 + 0.93 * stream.uniform();
                    let x: Vec<f64> = (0..d).map(|_| 4.0 * stream.uniform() - 2.0).collect();
                    let r = pde_residual(&p, t, &x);
                    assert!(r.abs() < 1e-7, "{} d={d} residual {r} at t={t}", p.name);
                }
            }
        }
    }

    #[test]
    fn manufactured_residual_at_origin() {
        let p = make_manufactured_gradient_problem(1, 1.0, 0.5).unwrap();
        let r = pde_residual(&p, 0.5, &[0.0]);
        assert!(r.abs() < 1e-9, "residual {r}");
        // At d=1, kappa=1/2 the cosine source term vanishes and
        // c0(t,x) = exp((T-t)/2) sin(x).
        let s = 0.3f64;
        let e = (0.5f64 * 0.6).exp();
        let f_at = (p.f)(0.4, &[s], &[0.0, 0.0]);
        assert!((f_at - e * s.sin()).abs() < 1e-12);
    }

    #[test]
    fn builtin_lookup_covers_all_ids() {
        for id in BUILTIN_IDS {
            let p = builtin_problem::<f64>(id, 2, 1.0, Some(0.5)).unwrap();
            assert_eq!(p.name, id);
            assert_eq!(p.dim, 2);
        }
    }
}
