//! Element-level data parallelism with a sequential fallback.
//!
//! Results are always collected in index order, so any reduction performed
//! afterwards is independent of the execution mode.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the ambient rayon pool; identical to `Sequential` when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

pub fn map_indexed<T, F>(execution: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

pub fn try_map_indexed<T, E, F>(execution: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(execution, n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_indexed(Execution::Sequential, 1000, f);
        let b = map_indexed(Execution::Parallel, 1000, f);
        assert_eq!(a, b);
        assert_eq!(a[7], f(7));
    }

    #[test]
    fn first_error_in_index_order() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(Execution::Parallel, 50, |i| if i % 10 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}
