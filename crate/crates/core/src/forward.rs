//! Frozen-coefficient Euler simulation of the forward state X, its
//! first-variation matrix D, and the accumulated weight V on the K-point
//! grid, all driven by one shared Brownian path.
//!
//! Coefficients are frozen at max{s, floor_K(r)} along the path, which
//! turns every integral into an exact piecewise sum. The integrator
//! therefore walks an event partition: the ordered union of the start
//! time, the grid points, and the caller's query times. Query times are
//! inserted as exact cell boundaries, never interpolated.
//!
//! Increments are drawn time-major, coordinate-minor, so outputs at early
//! query times are unchanged by appending later ones.

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::linalg::{col_major_t_vec_add, col_major_vec_add, identity};
use crate::problem::PdeProblem;
use crate::rng::{derive_stream, gaussian_increments, RandomKey, RandomStream};
use crate::scalar::Real;

/// Spans shorter than this get V = 0 instead of the 1/(t-s) weight; each
/// occurrence is counted in the ledger.
pub const DEGENERATE_INTERVAL: f64 = 1e-12;

/// The uniform K-point grid {0, T/K, ..., T} on [0, T].
#[derive(Clone, Copy, Debug)]
pub struct GridMap<T: Real> {
    horizon: T,
    k: u64,
}

impl<T: Real> GridMap<T> {
    pub fn new(horizon: T, k: u64) -> Result<Self> {
        if !(horizon > T::zero()) {
            return Err(Error::domain(format!("grid horizon must be positive, got {horizon}")));
        }
        if k == 0 {
            return Err(Error::domain("grid needs K >= 1"));
        }
        Ok(GridMap { horizon, k })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Grid point j; point(0) = 0 and point(K) = T exactly.
    #[inline]
    pub fn point(&self, j: u64) -> T {
        debug_assert!(j <= self.k);
        self.horizon * T::of(j as f64 / self.k as f64)
    }

    /// Number of grid indices j with point(j) < t.
    fn count_below(&self, t: T) -> u64 {
        let (mut lo, mut hi) = (0u64, self.k + 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.point(mid) < t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Smallest j with point(j) > t; may be K + 1.
    pub(crate) fn first_index_above(&self, t: T) -> u64 {
        let (mut lo, mut hi) = (0u64, self.k + 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.point(mid) <= t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Largest j with point(j) <= t (well defined for t >= 0).
    pub(crate) fn last_index_at_or_below(&self, t: T) -> u64 {
        self.first_index_above(t) - 1
    }

    /// Largest grid point strictly below t, or 0; exact grid points map to
    /// the previous point.
    pub fn floor_k(&self, t: T) -> Result<T> {
        if !(t >= T::zero() && t <= self.horizon) {
            return Err(Error::domain(format!("floor_K needs t in [0, {}], got {t}", self.horizon)));
        }
        let below = self.count_below(t);
        if below == 0 {
            Ok(T::zero())
        } else {
            Ok(self.point(below - 1))
        }
    }
}

/// One cell of an event partition: the state advances from the previous
/// boundary to `t_end` in a single update. When `freeze_start` is set the
/// coefficient snapshot is refreshed at the cell's start (the integrator
/// always freezes at the very first cell).
#[derive(Clone, Copy, Debug)]
pub struct EulerCell<T> {
    pub t_end: T,
    pub freeze_start: bool,
    pub record_end: bool,
}

/// State recorded at the end of a cell with `record_end` set.
#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    /// Index of the producing cell.
    pub cell: usize,
    pub t: T,
    pub x: Vec<T>,
    /// (1, V); the leading component is 1 exactly.
    pub z: Vec<T>,
}

/// Walks an explicit event partition with caller-supplied increments.
/// `increments` holds cells.len() * d scalars, cell-major. This is the
/// deterministic core behind [`simulate_forward`]; it is public so tests
/// and reference oracles can couple several resolutions on one set of
/// increments.
pub fn integrate_events<T: Real>(
    problem: &PdeProblem<T>,
    s: T,
    x: &[T],
    cells: &[EulerCell<T>],
    increments: &[T],
    ledger: &mut CostLedger,
    key_path: &[i64],
) -> Result<Vec<Snapshot<T>>> {
    let d = problem.dim;
    if x.len() != d {
        return Err(Error::domain(format!("state has length {}, problem dimension is {d}", x.len())));
    }
    if increments.len() != cells.len() * d {
        return Err(Error::domain("increment buffer does not match cell count"));
    }
    let mut x_cur = x.to_vec();
    let mut d_cur = vec![T::zero(); d * d];
    identity(&mut d_cur, d);
    let mut a_acc = vec![T::zero(); d];
    let mut x_frz = x_cur.clone();
    let mut d_frz = d_cur.clone();

    let mut mu_b = vec![T::zero(); d];
    let mut sig_b = vec![T::zero(); d * d];
    let mut sinv_b = vec![T::zero(); d * d];
    let mut dmu_b = vec![T::zero(); d];
    let mut dsig_b = vec![T::zero(); d * d];
    let mut y_b = vec![T::zero(); d];

    let mut out = Vec::new();
    let mut t_prev = s;
    for (ci, cell) in cells.iter().enumerate() {
        if !(cell.t_end > t_prev) {
            return Err(Error::domain(format!(
                "event times must increase strictly: cell {ci} ends at {} after {t_prev}",
                cell.t_end
            )));
        }
        if ci == 0 || cell.freeze_start {
            x_frz.copy_from_slice(&x_cur);
            d_frz.copy_from_slice(&d_cur);
        }
        let dt = cell.t_end - t_prev;
        let dw = &increments[ci * d..(ci + 1) * d];
        ledger.record_substep(d);

        (problem.mu)(&x_frz, &mut mu_b);
        (problem.sigma)(&x_frz, &mut sig_b);
        (problem.sigma_inv)(&x_frz, &mut sinv_b);

        // A += (sigma_inv(X_frz) D_frz)^T dW = D_frz^T (sigma_inv^T dW)
        y_b.fill(T::zero());
        col_major_t_vec_add(&sinv_b, dw, &mut y_b);
        col_major_t_vec_add(&d_frz, &y_b, &mut a_acc);

        for i in 0..d {
            x_cur[i] += mu_b[i] * dt;
        }
        col_major_vec_add(&sig_b, dw, &mut x_cur);

        for k in 0..d {
            let col_frz = &d_frz[k * d..(k + 1) * d];
            (problem.d_mu)(&x_frz, col_frz, &mut dmu_b);
            (problem.d_sigma)(&x_frz, col_frz, &mut dsig_b);
            let col = &mut d_cur[k * d..(k + 1) * d];
            for i in 0..d {
                col[i] += dmu_b[i] * dt;
            }
            col_major_vec_add(&dsig_b, dw, col);
        }

        if cell.record_end {
            let span = cell.t_end - s;
            let mut z = vec![T::zero(); d + 1];
            z[0] = T::one();
            if span < T::of(DEGENERATE_INTERVAL) {
                ledger.degenerate_intervals += 1;
            } else {
                for i in 0..d {
                    z[1 + i] = a_acc[i] / span;
                }
            }
            if x_cur.iter().chain(z.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "forward state", path: key_path.to_vec() });
            }
            out.push(Snapshot { cell: ci, t: cell.t_end, x: x_cur.clone(), z });
        }
        t_prev = cell.t_end;
    }
    Ok(out)
}

/// Simulated state and weight at each query time.
#[derive(Clone, Debug)]
pub struct ForwardSample<T> {
    pub s: T,
    pub x: Vec<T>,
    /// Query times in the caller's original order.
    pub query_times: Vec<T>,
    /// Scalar Gaussian draws consumed.
    pub draws_used: u64,
    dim: usize,
    xs: Vec<T>,
    zs: Vec<T>,
}

impl<T: Real> ForwardSample<T> {
    /// State X at query i (original order).
    pub fn x_at(&self, i: usize) -> &[T] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    /// Weight Z = (1, V) at query i (original order).
    pub fn z_at(&self, i: usize) -> &[T] {
        &self.zs[i * (self.dim + 1)..(i + 1) * (self.dim + 1)]
    }
}

/// Event partition plus the map from cells back to the caller's queries.
pub(crate) struct Partition<T> {
    pub(crate) cells: Vec<EulerCell<T>>,
    // (cell index, original query index), ordered by cell
    pub(crate) records: Vec<(usize, usize)>,
}

pub(crate) fn build_partition<T: Real>(
    grid: &GridMap<T>,
    s: T,
    query_times: &[T],
) -> Result<Partition<T>> {
    let horizon = grid.horizon();
    for &q in query_times {
        if !(q > s && q <= horizon) {
            return Err(Error::domain(format!("query time {q} outside ({s}, {horizon}]")));
        }
    }
    let mut order: Vec<usize> = (0..query_times.len()).collect();
    order.sort_by(|&a, &b| query_times[a].partial_cmp(&query_times[b]).expect("finite query times"));

    let mut cells = Vec::new();
    let mut records = Vec::new();
    if order.is_empty() {
        return Ok(Partition { cells, records });
    }
    let t_max = query_times[order[order.len() - 1]];
    let mut j = grid.first_index_above(s);
    let j_hi = grid.last_index_at_or_below(t_max);
    let mut qi = 0usize;
    let mut prev_was_grid = true;
    while j <= j_hi || qi < order.len() {
        let gp = if j <= j_hi { Some(grid.point(j)) } else { None };
        let qv = if qi < order.len() { Some(query_times[order[qi]]) } else { None };
        let (time, is_grid) = match (gp, qv) {
            (Some(g), Some(q)) if g < q => (g, true),
            (Some(g), Some(q)) if g > q => (q, false),
            (Some(g), Some(_)) => (g, true),
            (Some(g), None) => (g, true),
            (None, Some(q)) => (q, false),
            (None, None) => unreachable!(),
        };
        if is_grid {
            j += 1;
        }
        let cell_idx = cells.len();
        let mut record_end = false;
        while qi < order.len() && query_times[order[qi]] == time {
            records.push((cell_idx, order[qi]));
            record_end = true;
            qi += 1;
        }
        cells.push(EulerCell { t_end: time, freeze_start: prev_was_grid, record_end });
        prev_was_grid = is_grid;
    }
    Ok(Partition { cells, records })
}

/// Simulates X and Z at the query times, drawing the Brownian increments
/// from `stream` (time-major, coordinate-minor) and charging the ledger.
pub fn simulate_forward_with<T: Real>(
    problem: &PdeProblem<T>,
    grid: &GridMap<T>,
    s: T,
    x: &[T],
    query_times: &[T],
    stream: &mut RandomStream,
    ledger: &mut CostLedger,
) -> Result<ForwardSample<T>> {
    let d = problem.dim;
    if x.len() != d {
        return Err(Error::domain(format!("state has length {}, problem dimension is {d}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("start state must be finite"));
    }
    if !(s >= T::zero() && s < grid.horizon()) {
        return Err(Error::domain(format!("start time {s} outside [0, {})", grid.horizon())));
    }
    let part = build_partition(grid, s, query_times)?;
    let mut increments = vec![T::zero(); part.cells.len() * d];
    let mut t_prev = s;
    for (ci, cell) in part.cells.iter().enumerate() {
        gaussian_increments(stream, cell.t_end - t_prev, &mut increments[ci * d..(ci + 1) * d])?;
        t_prev = cell.t_end;
    }
    let snaps = integrate_events(problem, s, x, &part.cells, &increments, ledger, stream.key_path())?;

    let q = query_times.len();
    let mut xs = vec![T::zero(); q * d];
    let mut zs = vec![T::zero(); q * (d + 1)];
    let mut si = 0usize;
    for &(cell_idx, orig) in &part.records {
        while snaps[si].cell != cell_idx {
            si += 1;
        }
        xs[orig * d..(orig + 1) * d].copy_from_slice(&snaps[si].x);
        zs[orig * (d + 1)..(orig + 1) * (d + 1)].copy_from_slice(&snaps[si].z);
    }
    Ok(ForwardSample {
        s,
        x: x.to_vec(),
        query_times: query_times.to_vec(),
        draws_used: (part.cells.len() * d) as u64,
        dim: d,
        xs,
        zs,
    })
}

/// Key-addressed convenience wrapper around [`simulate_forward_with`].
pub fn simulate_forward<T: Real>(
    problem: &PdeProblem<T>,
    grid: &GridMap<T>,
    s: T,
    x: &[T],
    query_times: &[T],
    key: &RandomKey,
) -> Result<ForwardSample<T>> {
    let mut stream = derive_stream(key);
    let mut ledger = CostLedger::new();
    simulate_forward_with(problem, grid, s, x, query_times, &mut stream, &mut ledger)
}

/// Monte Carlo mean with a per-component standard error.
#[derive(Clone, Debug)]
pub struct BelEstimate<T> {
    /// Estimated (value, gradient), length d+1.
    pub mean: Vec<T>,
    /// Standard error of each component.
    pub std_err: Vec<T>,
    pub samples: u64,
}

/// Plain-average estimator of (value, gradient) for problems with f = 0:
/// (g(x), 0) + mean over M paths of (g(X_T) - g(x)) Z_T. Sample i uses the
/// stream at key.child(i); the summation tree is fixed, so the result is
/// independent of the number of worker threads.
pub fn bel_value_and_gradient<T: Real>(
    problem: &PdeProblem<T>,
    grid: &GridMap<T>,
    t: T,
    x: &[T],
    m: u64,
    key: &RandomKey,
) -> Result<(BelEstimate<T>, CostLedger)> {
    if m == 0 {
        return Err(Error::domain("sample count must be >= 1"));
    }
    let d = problem.dim;
    let horizon = grid.horizon();
    if !(t >= T::zero() && t < horizon) {
        return Err(Error::domain(format!("start time {t} outside [0, {horizon})")));
    }
    let g_x = (problem.g)(x);

    struct Acc<T> {
        sum: Vec<T>,
        sum_sq: Vec<T>,
        ledger: CostLedger,
    }
    let leaf = |i: usize| -> Result<Acc<T>> {
        let mut ledger = CostLedger::new();
        let mut stream = derive_stream(&key.child(i as i64));
        let sample =
            simulate_forward_with(problem, grid, t, x, &[horizon], &mut stream, &mut ledger)?;
        let diff = (problem.g)(sample.x_at(0)) - g_x;
        ledger.g_evals += 1;
        let z = sample.z_at(0);
        let mut sum = vec![T::zero(); d + 1];
        let mut sum_sq = vec![T::zero(); d + 1];
        for nu in 0..=d {
            let v = diff * z[nu];
            sum[nu] = v;
            sum_sq[nu] = v * v;
        }
        Ok(Acc { sum, sum_sq, ledger })
    };
    let combine = |a: Result<Acc<T>>, b: Result<Acc<T>>| -> Result<Acc<T>> {
        let (mut a, b) = (a?, b?);
        for nu in 0..a.sum.len() {
            a.sum[nu] += b.sum[nu];
            a.sum_sq[nu] += b.sum_sq[nu];
        }
        a.ledger.merge(&b.ledger);
        Ok(a)
    };
    let acc = crate::par::map_reduce(0, m as usize, 512, &leaf, &combine)
        .expect("m >= 1 checked above")?;

    let mm = T::of_usize(m as usize);
    let mut mean = vec![T::zero(); d + 1];
    let mut std_err = vec![T::zero(); d + 1];
    for nu in 0..=d {
        let avg = acc.sum[nu] / mm;
        mean[nu] = avg;
        let var = if m > 1 {
            ((acc.sum_sq[nu] - acc.sum[nu] * avg) / (mm - T::one())).max(T::zero())
        } else {
            T::zero()
        };
        std_err[nu] = (var / mm).sqrt();
    }
    mean[0] += g_x;
    let mut ledger = acc.ledger;
    ledger.g_evals += 1;
    Ok((BelEstimate { mean, std_err, samples: m }, ledger))
}
