//! Experiment driver: synthetic data, model assembly from a config file,
//! training, evaluation, checkpoints and reports.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;
pub mod wltest;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

/// Environment variable capping the worker threads used for generation and evaluation.
pub const THREADS_ENV: &str = "DGN_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    if n == 0 {
        return Err(HarnessError::Config(format!("{THREADS_ENV} must be positive")));
    }
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
