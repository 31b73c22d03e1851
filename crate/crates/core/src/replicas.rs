//! Replica-parallel execution with results collected in replica order.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

/// Evaluates `f(0..replicas)` in parallel and returns the results in index order.
///
/// With `workers = Some(k)` a dedicated pool of `k` threads is used; otherwise
/// the global rayon pool. Output never depends on the worker count as long as
/// `f` is a pure function of its index.
pub fn par_map<T, F>(replicas: usize, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..replicas).into_par_iter().map(&f).collect::<Vec<T>>();
    match workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .expect("thread pool")
            .install(run),
        None => run(),
    }
}

/// Like [`par_map`] for fallible work. After the first failure the remaining
/// replicas are skipped; the reported error is the lowest-index one observed.
pub fn try_par_map<T, E, F>(replicas: usize, workers: Option<usize>, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    let failed = AtomicBool::new(false);
    let results = par_map(replicas, workers, |i| {
        if failed.load(Ordering::Relaxed) {
            return None;
        }
        let r = f(i);
        if r.is_err() {
            failed.store(true, Ordering::Relaxed);
        }
        Some(r)
    });
    if failed.into_inner() {
        let err = results
            .into_iter()
            .flatten()
            .find_map(|r| r.err())
            .expect("a failure was recorded");
        return Err(err);
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("no replica skipped").ok().expect("no failure"))
        .collect())
}
