//! Black-box property inference against personalized load forecasters.
//!
//! The crate trains per-household LSTM forecasters, extracts model
//! signatures by recursively querying a forecaster as a black box, trains
//! meta-classifiers that map signatures to household properties, and scores
//! the resulting leakage against a raw-data baseline and random guessing.

pub mod attack;
pub mod baseline;
pub mod blackbox;
pub mod classifier;
pub mod dataio;
pub mod experiment;
pub mod forecaster;
pub mod metrics;
pub mod numerics;
pub mod seed;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}
