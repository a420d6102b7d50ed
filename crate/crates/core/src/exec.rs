//! Data-parallel map over independent work items (frames, loss samples).

/// How independent items are scheduled. `Parallel` falls back to
/// sequential execution when the crate is built without `parallel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Self::Parallel
        } else {
            Self::Sequential
        }
    }
}

impl Execution {
    /// `f(0), …, f(n-1)` in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Self::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_schedules_agree_and_keep_order() {
        let f = |i: usize| (i * i) as u64;
        assert_eq!(Execution::Sequential.map(1000, f), Execution::Parallel.map(1000, f));
        assert_eq!(Execution::Parallel.map(5, f), vec![0, 1, 4, 9, 16]);
    }
}
