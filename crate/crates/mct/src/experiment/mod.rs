//! File-based experiment driver: `convert`, `split`, `pretrain`, `train`,
//! `eval` and `map`, each reading an [`ExperimentConfig`] and writing its
//! artifacts plus a `run_<command>.json` manifest into `out_dir`.

mod commands;
mod config;

pub use commands::*;
pub use config::{ExperimentConfig, PretrainSection, TransferMode};

/// Sizes the global rayon pool from `MCT_THREADS` if set. Results do not
/// depend on the thread count.
pub fn init_threads() -> crate::error::Result<usize> {
    if let Ok(v) = std::env::var("MCT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| crate::error::Error::Config(format!("MCT_THREADS={v:?} is not a number")))?;
        // a pool may already exist (e.g. in tests); keep it in that case
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
