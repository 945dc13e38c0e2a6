//! Deterministic hierarchical randomness.
//!
//! Monte Carlo objects are addressed by a [`RandomKey`]: a global seed plus
//! a path of signed integers in the index tree. Hashing (seed, path) into
//! the key of a counter-based stream cipher yields a [`RandomStream`] that
//! is a pure function of the key, so any branch of the estimator recursion
//! can re-derive its randomness in isolation and siblings never share a
//! stream.
//!
//! Draw-order contract per stream (frozen, golden tests depend on it):
//! first the single uniform behind the proxy-time draw when one is needed,
//! then Brownian increments in time-major, coordinate-minor order.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Proxy-time draws are clamped into `[EPS_R, 1 - EPS_R]`; the excluded
/// events have probability below 1e-11 and would otherwise divide by zero
/// in the density and in the weight's 1/(s-t) factor.
pub const ARCSINE_CLAMP: f64 = 1e-12;

const STREAM_TAG: &[u8] = b"mlp-pde/stream/v1";

/// Address of one independent random stream: a seed and a path in the
/// index tree of signed integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RandomKey {
    seed: u64,
    path: Vec<i64>,
}

impl RandomKey {
    /// Root key for a run.
    pub fn new(seed: u64) -> Self {
        RandomKey { seed, path: Vec::new() }
    }

    /// Key of the `index`-th child. Distinct indices give distinct keys.
    pub fn child(&self, index: i64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        RandomKey { seed: self.seed, path }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[i64] {
        &self.path
    }
}

/// One independent stream of scalar draws, derived from a [`RandomKey`].
pub struct RandomStream {
    rng: ChaCha8Rng,
    path: Vec<i64>,
}

impl RandomStream {
    /// Uniform draw on the open interval (0,1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    /// Standard normal draw.
    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Key path this stream was derived from, for failure diagnostics.
    pub fn key_path(&self) -> &[i64] {
        &self.path
    }
}

/// Derives the stream addressed by `key`.
///
/// The (seed, path) pair is hashed into the 256-bit key of a counter-based
/// stream cipher generator, so derivation needs no coordination between
/// concurrent consumers and the output is identical on every replay.
pub fn derive_stream(key: &RandomKey) -> RandomStream {
    let mut h = Sha256::new();
    h.update(STREAM_TAG);
    h.update(key.seed.to_le_bytes());
    h.update((key.path.len() as u64).to_le_bytes());
    for part in &key.path {
        h.update(part.to_le_bytes());
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    RandomStream { rng: ChaCha8Rng::from_seed(seed), path: key.path.clone() }
}

/// Fills `out` with i.i.d. N(0, dt) increments, in the order of the slice.
pub fn gaussian_increments<T: Real>(stream: &mut RandomStream, dt: T, out: &mut [T]) -> Result<()> {
    if !(dt > T::zero()) {
        return Err(Error::domain(format!("gaussian_increments needs dt > 0, got {dt}")));
    }
    let scale = dt.sqrt();
    for v in out.iter_mut() {
        *v = scale * T::of(stream.gaussian());
    }
    Ok(())
}

/// The inverse-CDF transform behind the arcsine sampler, exposed for tests.
#[inline]
pub fn arcsine_from_uniform(u: f64) -> f64 {
    let s = (std::f64::consts::FRAC_PI_2 * u).sin();
    (s * s).clamp(ARCSINE_CLAMP, 1.0 - ARCSINE_CLAMP)
}

/// Draws r on (0,1) with the arcsine (Beta(1/2,1/2)) law.
#[inline]
pub fn sample_arcsine(stream: &mut RandomStream) -> f64 {
    arcsine_from_uniform(stream.uniform())
}

/// CDF of the arcsine law, (2/pi) arcsin(sqrt b).
pub fn arcsine_cdf(b: f64) -> f64 {
    (2.0 / std::f64::consts::PI) * b.sqrt().asin()
}

/// Density of the proxy evaluation time s on (t, T):
/// rho(t,s) = 1 / (pi * sqrt((T-s)(s-t))).
pub fn rho<T: Real>(t: T, s: T, horizon: T) -> Result<T> {
    if !(t >= T::zero() && t < s && s < horizon) {
        return Err(Error::domain(format!("rho needs 0 <= t < s < T, got t={t}, s={s}, T={horizon}")));
    }
    rho_from_gaps(s - t, horizon - s)
}

/// [`rho`] parameterized by the two gaps s - t and T - s directly. Near
/// the endpoints the gaps carry more precision than the subtraction in
/// [`rho`] can recover, which matters when integrating the density.
pub fn rho_from_gaps<T: Real>(from_t: T, to_horizon: T) -> Result<T> {
    if !(from_t > T::zero() && to_horizon > T::zero()) {
        return Err(Error::domain(format!(
            "rho needs positive gaps, got {from_t} and {to_horizon}"
        )));
    }
    let pi = T::of(std::f64::consts::PI);
    Ok(T::one() / (pi * (from_t * to_horizon).sqrt()))
}

/// Draws the proxy evaluation time s = t + (T-t) r with r arcsine
/// distributed; s is strictly inside (t, T).
pub fn sample_proxy_time<T: Real>(stream: &mut RandomStream, t: T, horizon: T) -> Result<T> {
    if !(t >= T::zero() && t < horizon) {
        return Err(Error::domain(format!("sample_proxy_time needs 0 <= t < T, got t={t}, T={horizon}")));
    }
    let r = sample_arcsine(stream);
    let mut s = t + (horizon - t) * T::of(r);
    // Clamping keeps s off the endpoints even when the narrowing above
    // rounds onto them.
    if s <= t {
        s = t.next_up_();
    }
    if s >= horizon {
        s = horizon.next_down_();
    }
    if !(s > t && s < horizon) {
        return Err(Error::domain(format!("interval ({t}, {horizon}) has no interior point")));
    }
    Ok(s)
}
