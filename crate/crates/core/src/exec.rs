//! Thread-count control for per-cell kernels.
//!
//! Work is split into disjoint output chunks; every chunk is computed by one
//! thread in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

pub struct Executor {
    pool: Option<ThreadPool>,
    threads: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self {
            pool: None,
            threads: 1,
        }
    }

    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        if threads == 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        Ok(Self {
            pool: Some(pool),
            threads,
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Calls `f(i, chunk)` for every `chunk_len`-sized chunk of `out`.
    pub fn for_each_chunk<F>(&self, out: &mut [f32], chunk_len: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Send + Sync,
    {
        match &self.pool {
            None => out
                .chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
            Some(pool) => pool.install(|| {
                out.par_chunks_mut(chunk_len)
                    .enumerate()
                    .for_each(|(i, c)| f(i, c))
            }),
        }
    }

    /// Like [`Executor::for_each_chunk`] but groups `cells_per_task` chunks per
    /// task to amortize scheduling.
    pub fn for_each_chunk_batched<F>(&self, out: &mut [f32], chunk_len: usize, cells_per_task: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Send + Sync,
    {
        let task_len = chunk_len * cells_per_task.max(1);
        self.for_each_chunk(out, task_len, |t, block| {
            for (k, c) in block.chunks_mut(chunk_len).enumerate() {
                f(t * cells_per_task.max(1) + k, c);
            }
        });
    }
}
