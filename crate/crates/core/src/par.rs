//! Order-preserving parallel map. Results never depend on the worker count.

/// Applies `f` to every item with up to `workers` threads and returns the
/// results in input order.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}
