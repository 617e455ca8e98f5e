//! Order-preserving map over independent work items.
//!
//! Training batches and attack sweeps are embarrassingly parallel across
//! samples. Every caller reduces the mapped results in item order, so the
//! output never depends on which executor ran or how work was scheduled.

#[cfg(feature = "parallel")]
use std::sync::Arc;

use crate::error::Result;

/// Environment variable capping the worker count of [`Executor::from_env`].
pub const THREADS_ENV: &str = "NKE_THREADS";

#[derive(Clone, Default)]
pub enum Executor {
    #[default]
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(Arc<rayon::ThreadPool>),
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Executor::Sequential => f.write_str("Sequential"),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => write!(f, "Parallel({})", pool.current_num_threads()),
        }
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor::Sequential
    }

    /// A dedicated pool with `threads` workers (all cores when `None`).
    /// Falls back to sequential execution when built without `parallel`.
    pub fn parallel(threads: Option<usize>) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                builder = builder.num_threads(n.max(1));
            }
            let pool = builder
                .build()
                .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
            Ok(Executor::Parallel(Arc::new(pool)))
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Ok(Executor::Sequential)
        }
    }

    /// Parallel executor sized by `NKE_THREADS` when set.
    pub fn from_env() -> Result<Self> {
        let threads =
            match std::env::var(THREADS_ENV) {
                Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                    crate::Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
                })?),
                Err(_) => None,
            };
        if threads == Some(1) {
            return Ok(Executor::Sequential);
        }
        Self::parallel(threads)
    }

    pub fn threads(&self) -> usize {
        match self {
            Executor::Sequential => 1,
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => pool.current_num_threads(),
        }
    }

    /// `items.iter().map(f).collect()`, possibly spread over worker threads.
    pub fn map<I, O, F>(&self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        match self {
            Executor::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().map(f).collect())
            }
        }
    }

    /// Like [`map`](Self::map) over `0..n`.
    pub fn map_range<O, F>(&self, n: usize, f: F) -> Vec<O>
    where
        O: Send,
        F: Fn(usize) -> O + Sync + Send,
    {
        match self {
            Executor::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}
