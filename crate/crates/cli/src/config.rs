//! Run configuration: a JSON file whose fields command-line flags override.

use std::path::{Path, PathBuf};

use anyhow::Context;
use etp_core::ravens::Task;
use etp_core::transporter::PlaceHead;
use serde::{Deserialize, Serialize};

use crate::Usage;

pub const GROUP_ORDERS: [usize; 4] = [4, 6, 8, 36];

/// Every field is optional; unset fields fall back to the command's default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub demos: Option<usize>,
    pub steps: Option<u64>,
    pub episodes: Option<usize>,
    pub lr: Option<f64>,
    pub eval_every: Option<u64>,
    pub val_episodes: Option<usize>,
    pub place_head: Option<PlaceHead>,
    pub stop_at: Option<f64>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
    }

    /// Fields set in `top` win over fields set in `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(base, top, task, seed, n, demos, steps, episodes, lr, eval_every, val_episodes, place_head, stop_at, data, checkpoint, out, log)
    }

    /// Range checks shared by every command; returns warnings to print.
    pub fn validate(&self) -> Result<Vec<String>, Usage> {
        let mut warnings = Vec::new();
        let counts = [
            ("demos", self.demos.map(|v| v as u64)),
            ("steps", self.steps),
            ("episodes", self.episodes.map(|v| v as u64)),
            ("eval_every", self.eval_every),
            ("val_episodes", self.val_episodes.map(|v| v as u64)),
        ];
        for (name, v) in counts {
            if v == Some(0) {
                return Err(Usage(format!("{name} must be positive")));
            }
        }
        if let Some(n) = self.n {
            if !GROUP_ORDERS.contains(&n) {
                return Err(Usage(format!("n must be one of {GROUP_ORDERS:?}, got {n}")));
            }
            if n != 4 {
                warnings.push(format!("n = {n}: rotations other than quarter turns are interpolated, equivariance is approximate"));
            }
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Usage(format!("lr must be positive, got {lr}")));
            }
        }
        if let Some(t) = self.stop_at {
            if !(0.0..=1.0).contains(&t) {
                return Err(Usage(format!("stop_at must lie in [0, 1], got {t}")));
            }
        }
        Ok(warnings)
    }
}
