//! Order-preserving data parallelism. Results never depend on the number of
//! worker threads; the pool size is taken from rayon's global pool, which
//! the command-line tool configures from `GGAN_THREADS`.

use rayon::prelude::*;

pub fn map_indexed<A, B, F>(items: &[A], f: F) -> Vec<B>
where
    A: Sync,
    B: Send,
    F: Fn(usize, &A) -> B + Sync,
{
    items.par_iter().enumerate().map(|(i, a)| f(i, a)).collect()
}

/// Configures the global pool once; later calls are ignored.
pub fn init_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

/// Runs `f` on a private one-thread pool, the strictly sequential mode.
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
