//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps fan out on the rayon global
//! pool; without it they degrade to plain iteration with the same signatures.
//! Results are collected in input order, and every mapped closure is pure, so
//! output is bit-identical across thread counts. `serial_map`/`serial_map_range`
//! are always sequential — benchmarks use them as the comparison baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether this build fans work out on a thread pool.
pub const PARALLEL_ENABLED: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

pub fn serial_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

pub fn serial_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
