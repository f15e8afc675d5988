//! Experiment harness: configuration files, orchestration and result
//! bundles for the `cvgmm` command-line tool.

pub mod bundle;
pub mod config;
pub mod error;
pub mod experiments;
pub mod plot;

use std::path::{Path, PathBuf};

pub use bundle::{ResultBundle, Table};
pub use config::{Design, ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiments::run_experiment;
pub use plot::emit_plot_data;

/// Environment variable naming the directory that relative `output_dir`
/// values resolve against. Defaults to `results`.
pub const OUTPUT_ROOT_ENV: &str = "CVGMM_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("results"), PathBuf::from)
}

/// Bundle directory for `cfg` under `root`.
pub fn bundle_dir(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    let dir = Path::new(&cfg.output_dir);
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        root.join(dir)
    }
}

/// Parses, runs and writes one experiment; returns the bundle directory.
pub fn run_config_file(path: &Path, root: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(path).map_err(error::HarnessError::io(path))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let bundle = run_experiment(&cfg)?;
    let dir = bundle_dir(&cfg, root);
    bundle.write(&dir)?;
    Ok(dir)
}
