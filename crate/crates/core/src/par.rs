//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! the rayon pool; without it, or with [`Execution::Sequential`], everything
//! runs on the calling thread. Results always come back in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `items.iter().enumerate().map(f).collect()`, possibly in parallel.
pub fn map_indexed_with<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn((usize, &T)) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().enumerate().map(f).collect(),
        _ => items.iter().enumerate().map(f).collect(),
    }
}

pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn((usize, &T)) -> R + Sync + Send,
{
    map_indexed_with(Execution::default(), items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..10_000).collect();
        let seq = map_indexed_with(Execution::Sequential, &items, |(i, v)| i as u64 * v);
        let par = map_indexed_with(Execution::Parallel, &items, |(i, v)| i as u64 * v);
        assert_eq!(seq, par);
    }
}
