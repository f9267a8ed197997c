//! Order-preserving parallel map with a sequential fallback.
//!
//! With the `parallel` feature (the default) the work is spread over rayon;
//! without it the same helpers run sequentially. Output order always matches
//! input order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Run `f` on a pool of `workers` threads (0 = rayon's default). Without the
/// `parallel` feature the worker count is ignored and `f` runs inline.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R>(_workers: usize, f: impl FnOnce() -> R) -> R {
    f()
}
