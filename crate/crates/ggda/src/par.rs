//! Data-parallel helpers. With the default `parallel` feature the heavy
//! per-item workloads (interpolation jobs, scoring, batch solves) fan out
//! over a rayon pool; without it everything runs sequentially with identical
//! results, since jobs are pure and outputs are collected in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps a function over owned items, in parallel when enabled. Output order
/// matches input order either way.
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Caps the worker count. `None` leaves the default. Returns the effective
/// number of workers (always 1 without the `parallel` feature).
pub fn configure_threads(threads: Option<usize>) -> usize {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            let n = n.max(1);
            // Ignore the error when a global pool already exists; the cap is
            // best-effort and only meaningful once per process.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        1
    }
}
