//! Execution helper: data-parallel map with the `parallel` feature,
//! plain iteration otherwise. Outputs preserve input order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn try_map_collect<I, R, E, F>(items: Vec<I>, f: F) -> Result<Vec<R>, E>
where
    I: Send,
    R: Send,
    E: Send,
    F: Fn(I) -> Result<R, E> + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_collect<I, R, E, F>(items: Vec<I>, f: F) -> Result<Vec<R>, E>
where
    F: Fn(I) -> Result<R, E>,
{
    items.into_iter().map(f).collect()
}
