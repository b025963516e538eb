//! Execution strategy for the data-parallel loops in this crate.
//!
//! With the `parallel` feature (default) work is spread over rayon's pool;
//! without it every strategy runs sequentially. Results are identical under
//! both strategies: only independent items are distributed, reductions stay
//! in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Parallel over the global rayon pool, or sequential when built without
    /// the `parallel` feature.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Map `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

/// Run `f` with at most `threads` workers. `threads <= 1` runs on the caller's thread.
pub fn with_parallelism<R: Send>(threads: usize, f: impl FnOnce(Exec) -> R + Send) -> R {
    if threads <= 1 {
        return f(Exec::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| f(Exec::Parallel)),
            Err(e) => {
                log::warn!("could not build a {threads}-thread pool ({e}); running sequentially");
                f(Exec::Sequential)
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    f(Exec::Sequential)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(
            Exec::Parallel.map_range(17, |i| i + 1),
            (1..18).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bounded_pool_runs() {
        let n = with_parallelism(3, |exec| exec.map_range(10, |i| i).len());
        assert_eq!(n, 10);
    }
}
