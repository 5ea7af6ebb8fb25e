//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`ExecutionMode::Parallel`]
//! fans work out over the rayon thread pool. Without it, every mode runs
//! sequentially. Results are always returned in input order, so the choice
//! of mode never changes an experiment's output.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecutionMode {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(mode: ExecutionMode, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecutionMode::Parallel => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
        _ => items.into_iter().map(f).collect(),
    }
}
