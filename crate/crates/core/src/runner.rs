//! Replicate fan-out.
//!
//! Replicates are embarrassingly parallel: each one owns its engine and a
//! counter-based stream derived from `(seed, replicate)`, so results are
//! identical whatever the thread budget. Collection is in replicate-index
//! order, which makes aggregated statistics (and file output) deterministic
//! too.
//!
//! With the `parallel` feature (default) the fan-out runs on a rayon pool
//! sized by `threads` (`0` = all cores, `1` = stay on the caller thread);
//! without it the crate is dependency-free sequential with the same results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `replicates` independent jobs and collect results in index order.
pub fn run_replicates<T: Send>(
    replicates: u64,
    threads: usize,
    job: impl Fn(u64) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if threads != 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build worker pool");
            return pool.install(|| (0..replicates).into_par_iter().map(job).collect());
        }
    }
    (0..replicates).map(job).collect()
}

/// Collect per-replicate results, stopping at the first simulation error.
pub fn run_replicates_fallible<T: Send, E: Send>(
    replicates: u64,
    threads: usize,
    job: impl Fn(u64) -> Result<T, E> + Sync + Send,
) -> Result<Vec<T>, E> {
    run_replicates(replicates, threads, job)
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_replicate_indexed() {
        let out = run_replicates(100, 0, |r| r * r);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, (i * i) as u64);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let seq = run_replicates(50, 1, |r| r as f64 * 0.5);
        let par = run_replicates(50, 0, |r| r as f64 * 0.5);
        assert_eq!(seq, par);
    }

    #[test]
    fn fallible_propagates_error() {
        let res: Result<Vec<u64>, String> = run_replicates_fallible(10, 1, |r| {
            if r == 7 {
                Err("boom".to_string())
            } else {
                Ok(r)
            }
        });
        assert!(res.is_err());
    }
}
