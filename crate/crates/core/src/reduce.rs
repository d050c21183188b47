//! Deterministic chunked reductions over observations.
//!
//! Observations are split into fixed chunks of [`CHUNK`] rows. Each chunk is
//! reduced sequentially, possibly on different threads, and the per-chunk
//! partials are then merged pairwise in index order. The result is therefore
//! bit-identical regardless of the number of worker threads.

use rayon::prelude::*;
use std::ops::Range;

pub(crate) const CHUNK: usize = 1024;

pub(crate) fn chunked_reduce<T, F, M>(n: usize, chunk_fn: F, merge: M) -> Option<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
    M: Fn(T, T) -> T,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| chunk_fn(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect();
    pairwise(partials, &merge)
}

fn pairwise<T, M: Fn(T, T) -> T>(mut items: Vec<T>, merge: &M) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.into_iter().next()
}

/// Chunked sum of a per-row scalar.
pub(crate) fn sum_rows<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunked_reduce(n, |r| r.map(&f).sum::<f64>(), |a, b| a + b).unwrap_or(0.0)
}

/// Chunked sum of per-row vectors of length `k`; `f` adds row `i` into the
/// accumulator. Errors short-circuit to the first failing chunk in index order.
pub(crate) fn sum_vec_rows<F, E>(n: usize, k: usize, f: F) -> Result<Vec<f64>, E>
where
    F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
    E: Send,
{
    chunked_reduce(
        n,
        |range| {
            let mut acc = vec![0.0; k];
            for i in range {
                f(i, &mut acc)?;
            }
            Ok(acc)
        },
        |a: Result<Vec<f64>, E>, b: Result<Vec<f64>, E>| match (a, b) {
            (Ok(mut a), Ok(b)) => {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            }
            (Err(e), _) | (_, Err(e)) => Err(e),
        },
    )
    .unwrap_or_else(|| Ok(vec![0.0; k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_naive_for_exact_values() {
        let n = 5000;
        let s = sum_rows(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }

    #[test]
    fn empty_input() {
        assert_eq!(sum_rows(0, |_| 1.0), 0.0);
        let v: Result<Vec<f64>, ()> = sum_vec_rows(0, 3, |_, _| Ok(()));
        assert_eq!(v.unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn deterministic_across_pool_sizes() {
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e3;
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sum_rows(100_000, f));
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| sum_rows(100_000, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
