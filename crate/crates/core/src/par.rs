//! Scheduling-independent parallel reduction.
//!
//! Floating-point sums depend on association order, so Monte Carlo
//! reductions here always use a fixed pairwise tree over the index range:
//! the range splits at its midpoint regardless of worker count, leaves
//! below a threshold fold sequentially in index order. The result is
//! byte-identical for 1 thread and N threads.

/// Maps `f` over `lo..hi` and combines results along a fixed binary tree.
///
/// `combine(left, right)` must keep the argument order; it is always called
/// with `left` covering smaller indices.
pub(crate) fn map_reduce<V, F, C>(lo: usize, hi: usize, leaf: usize, f: &F, combine: &C) -> Option<V>
where
    V: Send,
    F: Fn(usize) -> V + Sync,
    C: Fn(V, V) -> V + Sync,
{
    debug_assert!(leaf >= 1);
    if lo >= hi {
        return None;
    }
    if hi - lo <= leaf {
        let mut acc = f(lo);
        for i in lo + 1..hi {
            acc = combine(acc, f(i));
        }
        return Some(acc);
    }
    let mid = lo + (hi - lo) / 2;
    let (l, r) = rayon::join(
        || map_reduce(lo, mid, leaf, f, combine),
        || map_reduce(mid, hi, leaf, f, combine),
    );
    match (l, r) {
        (Some(a), Some(b)) => Some(combine(a, b)),
        (a, b) => a.or(b),
    }
}
