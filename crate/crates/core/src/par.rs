//! Order-preserving data-parallel map.
//!
//! With the `parallel` feature (default) independent work items run on the
//! rayon pool; without it every call falls back to a plain iterator. Results
//! always come back in input order, so outputs are identical either way.

/// Maps `f` over `items`, in parallel when the `parallel` feature is enabled.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

pub fn map_sequential<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Whether work is dispatched to the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
