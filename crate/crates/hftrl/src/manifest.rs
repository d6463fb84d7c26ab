//! Window manifest written by `sample` and read by `train` and `tune`, and
//! the per-command run records.

use std::collections::HashMap;
use std::path::Path;

use hftrl_core::lob::{BookSnapshot, TradingDay};
use hftrl_core::window::Window;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, WindowConfig};
use crate::error::{AppError, AppResult};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowManifest {
    pub format: u32,
    pub selection_seed: u64,
    /// Mean level volume over the selected windows; the observation divisor.
    pub volume_norm: f64,
    pub window: WindowConfig,
    /// Size of the pooled candidate set before subsampling.
    pub candidates: usize,
    /// Days that yielded fewer than `per_day` disjoint windows.
    pub short_days: Vec<String>,
    pub windows: Vec<Window>,
}

impl WindowManifest {
    /// Resolves every window against loaded days.
    pub fn slices<'a>(&self, days: &'a [TradingDay], path: &Path) -> AppResult<Vec<&'a [BookSnapshot]>> {
        let by_id: HashMap<&str, &TradingDay> = days.iter().map(|d| (d.day_id.as_str(), d)).collect();
        self.windows
            .iter()
            .map(|w| {
                let day = by_id
                    .get(w.day_id.as_str())
                    .ok_or_else(|| AppError::format(path, format!("window refers to unknown day {}", w.day_id)))?;
                day.snapshots.get(w.start_tick..w.end_tick()).ok_or_else(|| {
                    AppError::format(
                        path,
                        format!(
                            "window {}..{} exceeds day {} of {} ticks",
                            w.start_tick,
                            w.end_tick(),
                            w.day_id,
                            day.len()
                        ),
                    )
                })
            })
            .collect()
    }
}

/// Written as `run_<command>.json` next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    /// Named seeds derived from the master seed for this run.
    pub seeds: Vec<(String, u64)>,
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

impl RunRecord {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        RunRecord {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            seeds: Vec::new(),
            outputs: Vec::new(),
            config: cfg.clone(),
        }
    }
}
