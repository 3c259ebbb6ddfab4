//! Data-parallel helpers. With the `parallel` feature (default) the
//! per-item maps run on rayon; the reduction is always a fixed-order
//! sequential sum over the mapped values, so results are bit-identical
//! to the sequential build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items` and sum the results in index order.
#[cfg(feature = "parallel")]
pub fn map_sum<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    if items.len() < 64 {
        return map_sum_seq(items, f);
    }
    let vals: Vec<f64> = items.par_iter().map(|t| f(t)).collect();
    vals.iter().sum()
}

#[cfg(not(feature = "parallel"))]
pub fn map_sum<T, F>(items: &[T], f: F) -> f64
where
    F: Fn(&T) -> f64,
{
    map_sum_seq(items, f)
}

/// Always-sequential variant, kept public so benchmarks can compare the
/// two paths within one build.
pub fn map_sum_seq<T, F>(items: &[T], f: F) -> f64
where
    F: Fn(&T) -> f64,
{
    items.iter().map(f).sum()
}

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if items.len() < 64 {
        return items.iter().map(f).collect();
    }
    items.par_iter().map(|t| f(t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
