//! Datasets, run configuration and run artifacts.

pub mod config;
pub mod dataset;
pub mod run;
pub mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use config::{RunConfig, TaskKind};
pub use dataset::{load_dataset, save_dataset, DatasetBundle, LinkSplits, Splits};
pub use run::{run, ModelSnapshot, RunSummary, TestReport, TimingReport};
pub use synth::{generate_synthetic, GraphModel, SyntheticSpec};

use crate::error::Result;

/// 17 significant digits: enough to parse back to the identical `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
