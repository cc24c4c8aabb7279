use pfedpm_core::protocol::{ClientState, Executor};
use rayon::prelude::*;

use crate::error::{Result, SimError};

/// Runs clients on a rayon pool of fixed size. Clients share no mutable
/// state and results come back in client order, so output does not depend
/// on the thread count.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `threads == 0` uses rayon's default.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::config("threads", None, e.to_string()))?;
        Ok(Pool { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map_clients<T, F>(&self, clients: &mut [ClientState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ClientState) -> T + Sync + Send,
    {
        self.pool.install(|| clients.par_iter_mut().map(f).collect())
    }
}
