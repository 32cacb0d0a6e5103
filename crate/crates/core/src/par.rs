//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures sequentially. Every helper writes results by index,
//! so output is bit-identical in both modes regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work below this many scalar operations stays on the calling thread.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 15;

/// Map `f` over `0..n`, collecting in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f(row_index, row)` to every `width`-sized chunk of `data`.
///
/// `work_per_row` is a rough operation count used to skip thread dispatch
/// for tiny inputs.
pub fn for_each_row<F>(data: &mut [f64], width: usize, work_per_row: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    let rows = data.len() / width;
    #[cfg(feature = "parallel")]
    {
        if rows.saturating_mul(work_per_row.max(1)) >= MIN_PARALLEL_WORK && rows > 1 {
            data.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
            return;
        }
    }
    let _ = (rows, work_per_row);
    data.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// Number of worker threads the current pool will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Cap the global worker pool. Returns false if the pool was already built.
pub fn init_thread_pool(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        true
    }
}

/// Run `f` on a dedicated pool of `threads` workers (sequentially without
/// the `parallel` feature). Used by benchmarks and the single-thread checks.
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(threads: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
