//! Worker pools for the data-parallel stages.
//!
//! Data-parallel functions in this crate run on whatever rayon pool is current.
//! [`Workers`] pins a fixed-size pool so callers control the worker count, and
//! outputs never depend on it.

use std::sync::Arc;

use rayon::{ThreadPool, ThreadPoolBuilder};

#[derive(Clone)]
pub struct Workers {
    pool: Arc<ThreadPool>,
}

impl Workers {
    /// A pool of exactly `n` threads (at least one).
    pub fn new(n: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .thread_name(|i| format!("quiltrt-worker-{i}"))
            .build()
            .expect("failed to spawn worker pool");
        Workers { pool: Arc::new(pool) }
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn count(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs `f` with this pool as the current rayon pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count()).finish()
    }
}

/// Rows per parallel chunk: `ceil(height / (4 * workers))`.
pub(crate) fn row_chunk(height: usize) -> usize {
    let workers = rayon::current_num_threads().max(1);
    height.div_ceil(4 * workers).max(1)
}
