//! Shot execution across OS threads.

use std::thread;

use cssbo_core::evaluate::{ShotExecutor, ShotTask};
use cssbo_core::Result;

/// Splits the shot range into contiguous blocks, one per worker.
///
/// Every shot draws from its own RNG stream, so the failure count equals the
/// sequential count for any worker number.
#[derive(Clone, Copy, Debug)]
pub struct Threaded {
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Self { workers: workers.max(1) }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl ShotExecutor for Threaded {
    fn count_failures(&self, task: &ShotTask<'_>, shots: u64) -> Result<u64> {
        let w = (self.workers as u64).min(shots).max(1);
        if w == 1 {
            return task.count_failures(0..shots);
        }
        let block = shots.div_ceil(w);
        let results: Vec<Result<u64>> = thread::scope(|s| {
            let handles: Vec<_> = (0..w)
                .map(|i| {
                    let range = i * block..((i + 1) * block).min(shots);
                    s.spawn(move || task.count_failures(range))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("shot worker panicked")).collect()
        });
        // Fixed reduction order: the first failing block reports its error.
        results.into_iter().sum()
    }
}
