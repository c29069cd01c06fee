//! Read-only analysis tools: open-loop video prediction, latent-state
//! probes, planner sweeps with the true simulator, and the ablation harness.
//! Everything is written under `out_dir/diagnostics/`.

mod ablation;
mod open_loop;
mod probe;
mod sweep;

pub use ablation::{ablation_name, ablation_run, AblationResult};
pub use open_loop::{open_loop_predict, write_open_loop, OpenLoopReport};
pub use probe::{probe_states, probe_targets, write_probe, ProbeOptions, ProbeReport, ProbeScore};
pub use sweep::{median, planner_sweep, true_dynamics_episode, write_sweep, SweepGrid, SweepRow};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub fn diagnostics_dir(out_dir: &Path) -> Result<PathBuf> {
    let d = out_dir.join("diagnostics");
    fs::create_dir_all(&d)?;
    Ok(d)
}

/// Binary PPM (P6) of an `height × width × 3` byte image.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3, "ppm buffer size");
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests;
