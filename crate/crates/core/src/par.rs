//! Execution policy for data-parallel kernels.
//!
//! With the `parallel` feature, kernels above a small work threshold fan out
//! over rayon. Every kernel partitions work by output rows or by a fixed chunk
//! count, and reduces partial results in chunk order, so parallel and
//! sequential runs produce bit-identical results.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

/// The calling thread's policy. `Parallel` only when rayon is compiled in.
pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get) {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Sets the policy for the calling thread. Work it hands to rayon workers
/// keeps whatever those workers were configured with.
pub fn set_execution(exec: Execution) {
    FORCE_SEQUENTIAL.with(|c| c.set(exec == Execution::Sequential));
}

/// Runs `f` with the given execution policy and restores the previous one.
pub fn with_execution<R>(exec: Execution, f: impl FnOnce() -> R) -> R {
    let prev = execution();
    set_execution(exec);
    let out = f();
    set_execution(prev);
    out
}

pub fn is_parallel(exec: Execution) -> bool {
    cfg!(feature = "parallel") && exec == Execution::Parallel
}

/// Fills `out` row by row. `row_len` must divide `out.len()`.
pub fn for_each_row<T: Send>(
    exec: Execution,
    out: &mut [T],
    row_len: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel(exec) {
        use rayon::prelude::*;
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = exec;
    out.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Maps `f` over `0..n` and collects in index order.
pub fn map_indexed<R: Send>(
    exec: Execution,
    n: usize,
    f: impl Fn(usize) -> R + Sync + Send,
) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if is_parallel(exec) {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Splits `0..n` into `chunks` contiguous ranges whose boundaries depend only on `n`.
pub fn fixed_chunks(n: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = chunks.clamp(1, n.max(1));
    let base = n / chunks;
    let extra = n % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Work threshold (multiply-adds) below which kernels stay sequential.
pub const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;

pub fn pick(exec: Execution, work: usize) -> Execution {
    if work < PARALLEL_WORK_THRESHOLD {
        Execution::Sequential
    } else {
        exec
    }
}
