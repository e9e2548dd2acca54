//! Ordered parallel map over independent work items.
//!
//! With the `parallel` feature the items run on a rayon pool; without it, or
//! when [`Parallelism::Sequential`] is requested, they run in index order on
//! the calling thread. Either way the output is ordered by item index, so
//! results never depend on scheduling.

/// How to execute a batch of independent items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Rayon pool with `workers` threads; `0` uses rayon's default.
    Rayon {
        workers: usize,
    },
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon { workers: 0 }
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    /// `0` means default parallelism, `1` sequential, `n` a pool of `n` threads.
    pub fn from_workers(workers: usize) -> Self {
        match workers {
            1 => Parallelism::Sequential,
            n => Parallelism::Rayon { workers: n },
        }
    }

    /// Whether items will actually run on a thread pool in this build.
    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Parallelism::Rayon { .. })
    }
}

/// `(0..n).map(f)` with results in index order.
pub fn map_indexed<T, F>(n: usize, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Rayon { workers } => rayon_map(n, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn rayon_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    if workers == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => (0..n).map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn rayon_map<T, F>(n: usize, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
