//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! every [`Exec`] value runs sequentially. Callers that want to compare both
//! paths (the benches do) pass an explicit [`Exec`].

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over fixed-size chunks of a slice.
pub fn map_chunks<T, U, F>(exec: Exec, items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_chunks(chunk).map(f).collect();
    }
    let _ = exec;
    items.chunks(chunk).map(f).collect()
}

/// Fallible order-preserving map; the first error in input order wins.
pub fn try_map<T, U, E, F>(exec: Exec, items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

/// Runs `f` with at most `limit` worker threads. Sequential without the
/// `parallel` feature or when `limit <= 1`.
pub fn with_limit<R: Send>(limit: usize, f: impl FnOnce(Exec) -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if limit > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
            Ok(pool) => return pool.install(|| f(Exec::Parallel)),
            Err(e) => log::warn!("thread pool unavailable, running sequentially: {e}"),
        }
    }
    let _ = limit;
    f(Exec::Sequential)
}
