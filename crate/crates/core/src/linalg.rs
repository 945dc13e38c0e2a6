//! Minimal dense kernels for d-vectors and d x d matrices.
//!
//! Every matrix in the crate is a column-major slice of length d*d: the
//! coefficient callables fill them that way, and the Jacobian of the
//! forward flow is kept column-major so each column is a contiguous slice
//! that can be fed to directional-derivative callables. Nothing here
//! allocates.

use crate::scalar::Real;

/// acc += M x for column-major M.
#[inline]
pub(crate) fn col_major_vec_add<T: Real>(cols: &[T], x: &[T], acc: &mut [T]) {
    let d = x.len();
    debug_assert_eq!(cols.len(), d * d);
    debug_assert_eq!(acc.len(), d);
    for (j, &xj) in x.iter().enumerate() {
        let col = &cols[j * d..(j + 1) * d];
        for i in 0..d {
            acc[i] += col[i] * xj;
        }
    }
}

/// acc[k] += dot(cols[k], x), i.e. acc += M^T x for column-major M.
#[inline]
pub(crate) fn col_major_t_vec_add<T: Real>(cols: &[T], x: &[T], acc: &mut [T]) {
    let d = x.len();
    debug_assert_eq!(cols.len(), d * d);
    for k in 0..d {
        let col = &cols[k * d..(k + 1) * d];
        let mut dot = T::zero();
        for i in 0..d {
            dot += col[i] * x[i];
        }
        acc[k] += dot;
    }
}

/// Writes the identity into a d x d buffer.
#[inline]
pub(crate) fn identity<T: Real>(out: &mut [T], d: usize) {
    debug_assert_eq!(out.len(), d * d);
    out.iter_mut().for_each(|v| *v = T::zero());
    for k in 0..d {
        out[k * d + k] = T::one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_hand_results() {
        // column-major m with columns (1,2) and (3,4), x = (5,7):
        // m x = (5+21, 10+28) = (26, 38); m^T x = (5+14, 15+28) = (19, 43)
        let cols = [1.0, 2.0, 3.0, 4.0];
        let x = [5.0, 7.0];
        let mut acc = [1.0, 1.0];
        col_major_vec_add(&cols, &x, &mut acc);
        assert_eq!(acc, [27.0, 39.0]);
        let mut acc = [1.0, 1.0];
        col_major_t_vec_add(&cols, &x, &mut acc);
        assert_eq!(acc, [20.0, 44.0]);

        let mut id = [0.0; 4];
        identity(&mut id, 2);
        assert_eq!(id, [1.0, 0.0, 0.0, 1.0]);
    }
}
