//! Ordered parallel map with a sequential fallback.
//!
//! All data-parallel loops in this crate (dataset generation, multistart,
//! sweep episodes) go through [`map_ordered`] so the `parallel` feature can
//! be disabled without touching call sites. Both paths return results in
//! input order, so outputs are identical regardless of worker count.

/// Sequential reference implementation.
pub fn map_sequential<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
///
/// `workers = Some(1)` forces the sequential path; `Some(n)` uses a scoped
/// pool of `n` threads; `None` uses the global pool.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, U, F>(workers: Option<usize>, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    use rayon::prelude::*;
    match workers {
        Some(1) => map_sequential(items, f),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            pool.install(|| items.par_iter().map(|t| f(t)).collect())
        }
        None => items.par_iter().map(|t| f(t)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, U, F>(_workers: Option<usize>, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    map_sequential(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_order() {
        let items: Vec<u64> = (0..200).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e3779b97f4a7c15);
        assert_eq!(map_ordered(None, &items, f), map_sequential(&items, f));
        assert_eq!(map_ordered(Some(3), &items, f), map_sequential(&items, f));
        assert_eq!(map_ordered(Some(1), &items, f), map_sequential(&items, f));
    }
}
