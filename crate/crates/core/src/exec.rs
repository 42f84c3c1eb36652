//! Data-parallel helpers.
//!
//! Every batch job in the crate (sample generation, episode studies, oracle
//! sweeps) goes through [`map_indexed`]. Each item receives its own index and
//! must derive any randomness from it, so output is identical regardless of
//! the execution mode or the number of workers. Results are always returned
//! in index order.
//!
//! With the `parallel` feature disabled every mode runs sequentially.

/// How a batch job is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    /// Run on the global rayon pool (sequential without the `parallel` feature).
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Evaluate `f(i)` for `i in 0..n`, collecting results in index order.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] for fallible jobs; the error with the lowest index wins.
pub fn try_map_indexed<T, E, F>(exec: Exec, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(exec, n, f).into_iter().collect()
}

/// Size the global pool once. Later calls are ignored.
pub fn init_workers(workers: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}

/// Worker count the pool will use.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
