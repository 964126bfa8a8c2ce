//! Fan-out of independent work items, parallel or sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How independent work items (cells within an iteration, runs within an
/// experiment) are executed. Results are merged in index order either way,
/// so outputs are identical across modes.
///
/// Without the `parallel` feature, `Parallel` degrades to sequential
/// execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg_attr(feature = "parallel", default)]
    Parallel,
}

/// Applies `f` to every item, returning results in item order.
pub(crate) fn map_mut<T, R, F>(mode: ExecMode, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Applies `f` to every index in `0..n`, returning results in index order.
pub(crate) fn map_range<R, F>(mode: ExecMode, n: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return (0..n).into_par_iter().map(&f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let mut a: Vec<u64> = (0..100).collect();
        let mut b = a.clone();
        let ra = map_mut(ExecMode::Sequential, &mut a, |i, x| {
            *x += 1;
            *x * i as u64
        });
        let rb = map_mut(ExecMode::Parallel, &mut b, |i, x| {
            *x += 1;
            *x * i as u64
        });
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(
            map_range(ExecMode::Sequential, 10, |i| i * i),
            map_range(ExecMode::Parallel, 10, |i| i * i)
        );
    }
}
