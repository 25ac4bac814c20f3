//! Thread-parallel ablation grid. Jobs are pulled from a shared counter and
//! results are keyed by job index, so the table does not depend on the
//! thread count or scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use multiassign_core::harness::{run_cell_seed, summarize, CellResult, ExperimentConfig, GridSpec, RunSummary};

use crate::error::AppResult;

pub const THREADS_ENV: &str = "MULTIASSIGN_THREADS";

/// Worker count: `MULTIASSIGN_THREADS` if set to a positive integer,
/// otherwise the number of logical cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every `(cell, seed)` job on up to `threads` workers. `progress` is
/// called after each finished job with `(done, total)`.
pub fn run_grid(
    base: &ExperimentConfig,
    grid: &GridSpec,
    threads: usize,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> AppResult<Vec<CellResult>> {
    let cells = grid.cells()?;
    let jobs = grid.jobs()?;
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<multiassign_core::Result<RunSummary>>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(cell, seed)) = jobs.get(i) else { break };
                let r = run_cell_seed(base, &cells[cell], seed);
                let failed = r.is_err();
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, jobs.len());
                if failed {
                    // stop handing out work; the error is reported below
                    next.store(jobs.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let results = results.into_inner().expect("workers finished");

    let mut per_cell: Vec<Vec<RunSummary>> = vec![Vec::new(); cells.len()];
    for (&(cell, _), r) in jobs.iter().zip(results) {
        match r {
            Some(r) => per_cell[cell].push(r?),
            None => {}
        }
    }
    Ok(cells
        .into_iter()
        .zip(per_cell)
        .map(|(cell, runs)| summarize(base, cell, runs))
        .collect())
}
