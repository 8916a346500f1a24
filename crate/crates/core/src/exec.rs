//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature the [`Execution::Parallel`] mode fans work out
//! over the rayon global pool. Without it both modes run on the calling
//! thread, so callers never need their own `cfg` switches.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode actually runs on more than one thread in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `items`, preserving input order in the output.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Folds `items` into per-worker accumulators and merges them.
    ///
    /// `merge` must be associative; the sequential path folds everything into
    /// a single accumulator.
    pub fn fold_reduce<T, A, Init, Fold, Merge>(self, items: &[T], init: Init, fold: Fold, merge: Merge) -> A
    where
        T: Sync,
        A: Send,
        Init: Fn() -> A + Sync + Send,
        Fold: Fn(A, &T) -> A + Sync + Send,
        Merge: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().fold(&init, &fold).reduce(&init, &merge);
        }
        let _ = &merge;
        items.iter().fold(init(), fold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_on_map() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&items, |x| x * x);
        let par = Execution::Parallel.map(&items, |x| x * x);
        assert_eq!(seq, par);
    }

    #[test]
    fn modes_agree_on_fold_reduce() {
        let items: Vec<u64> = (1..=500).collect();
        let sum = |mode: Execution| mode.fold_reduce(&items, || 0u64, |a, x| a + x, |a, b| a + b);
        assert_eq!(sum(Execution::Sequential), 125_250);
        assert_eq!(sum(Execution::Parallel), 125_250);
    }
}
