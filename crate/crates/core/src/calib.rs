//! Sharpening-factor calibration: sweep a grid of gamma values over a small
//! calibration set and keep the best mean score.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::attnops::{sharpen_tensor, AttentionTensor, SharpenConfig, Targets};
use crate::error::{Error, Result};
use crate::format::write_tensor;
use crate::graphtext::TokenAdjacency;
use crate::headscan::SelectionResult;
use crate::synthmodel::downstream_probe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Head,
    #[default]
    Layer,
}

impl Granularity {
    pub fn targets(self, sel: &SelectionResult) -> Targets {
        match self {
            Granularity::Head => Targets::Heads(sel.selected_heads.clone()),
            Granularity::Layer => Targets::Layers(sel.selected_layers.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    AdjacencyF1,
    /// External scorer: `argv[0] argv[1..] <tensor path>`, one float on stdout.
    Custom { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub gamma_grid: Vec<f64>,
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub granularity: Granularity,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            gamma_grid: default_grid(),
            objective: ObjectiveKind::AdjacencyF1,
            granularity: Granularity::Layer,
        }
    }
}

/// `0.1, 0.2, ..., 1.0`.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

pub struct CalibrationItem {
    pub tensor: AttentionTensor,
    pub adjacency: TokenAdjacency,
}

/// Scores one sharpened calibration item; higher is better.
pub trait Objective {
    fn score(
        &self,
        tensor: &AttentionTensor,
        adjacency: &TokenAdjacency,
        sel: &SelectionResult,
    ) -> std::result::Result<f64, String>;
}

impl<F> Objective for F
where
    F: Fn(&AttentionTensor, &TokenAdjacency, &SelectionResult) -> std::result::Result<f64, String>,
{
    fn score(
        &self,
        tensor: &AttentionTensor,
        adjacency: &TokenAdjacency,
        sel: &SelectionResult,
    ) -> std::result::Result<f64, String> {
        self(tensor, adjacency, sel)
    }
}

pub struct AdjacencyF1;

impl Objective for AdjacencyF1 {
    fn score(
        &self,
        tensor: &AttentionTensor,
        adjacency: &TokenAdjacency,
        sel: &SelectionResult,
    ) -> std::result::Result<f64, String> {
        downstream_probe(tensor, adjacency, sel)
            .map(|p| p.f1)
            .map_err(|e| e.to_string())
    }
}

/// Hands each sharpened tensor to a child process as an `SLSH` file.
pub struct CommandObjective {
    pub argv: Vec<String>,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Objective for CommandObjective {
    fn score(
        &self,
        tensor: &AttentionTensor,
        _adjacency: &TokenAdjacency,
        _sel: &SelectionResult,
    ) -> std::result::Result<f64, String> {
        let (program, args) = self.argv.split_first().ok_or("empty scorer command")?;
        let path: PathBuf = std::env::temp_dir().join(format!(
            "slash-calib-{}-{}.slsh",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = (|| {
            let mut f = std::fs::File::create(&path).map_err(|e| e.to_string())?;
            write_tensor(tensor, &mut f).map_err(|e| e.to_string())?;
            f.flush().map_err(|e| e.to_string())?;
            drop(f);
            let out = Command::new(program)
                .args(args)
                .arg(&path)
                .output()
                .map_err(|e| format!("spawn {program}: {e}"))?;
            if !out.status.success() {
                return Err(format!(
                    "scorer exited with {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ));
            }
            let text = String::from_utf8_lossy(&out.stdout);
            text.trim()
                .parse::<f64>()
                .map_err(|e| format!("scorer printed {:?}: {e}", text.trim()))
        })();
        let _ = std::fs::remove_file(&path);
        result
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScore {
    pub gamma: f64,
    pub mean_score: f64,
    pub per_item: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub per_gamma: Vec<GammaScore>,
    pub best_gamma: f64,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("gamma grid"));
    }
    if let Some(&g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::OutOfRange {
            name: "gamma grid value",
            value: g,
            range: "[0, 1]",
        });
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Unsupported("gamma grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Calibrates with the objective named in `spec`.
pub fn calibrate(
    spec: &CalibrationSpec,
    items: &[CalibrationItem],
    sel: &SelectionResult,
) -> Result<CalibrationResult> {
    match &spec.objective {
        ObjectiveKind::AdjacencyF1 => calibrate_with(spec, items, sel, &AdjacencyF1),
        ObjectiveKind::Custom { command } => calibrate_with(
            spec,
            items,
            sel,
            &CommandObjective {
                argv: command.clone(),
            },
        ),
    }
}

/// Sweeps the grid; equal means resolve toward the larger gamma.
pub fn calibrate_with(
    spec: &CalibrationSpec,
    items: &[CalibrationItem],
    sel: &SelectionResult,
    objective: &dyn Objective,
) -> Result<CalibrationResult> {
    check_grid(&spec.gamma_grid)?;
    if items.is_empty() {
        return Err(Error::Empty("calibration items"));
    }
    if sel.selected_heads.is_empty() {
        return Err(Error::Empty("head selection"));
    }
    let targets = spec.granularity.targets(sel);
    let mut per_gamma = Vec::with_capacity(spec.gamma_grid.len());
    for &gamma in &spec.gamma_grid {
        let cfg = SharpenConfig {
            gamma,
            targets: targets.clone(),
        };
        let mut per_item = Vec::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            let sharpened = sharpen_tensor(&item.tensor, &cfg)?.tensor;
            let score = objective
                .score(&sharpened, &item.adjacency, sel)
                .map_err(|reason| Error::Objective { item: idx, reason })?;
            if !score.is_finite() {
                return Err(Error::Objective {
                    item: idx,
                    reason: format!("non-finite score {score}"),
                });
            }
            per_item.push(score);
        }
        let mean_score = per_item.iter().sum::<f64>() / per_item.len() as f64;
        per_gamma.push(GammaScore {
            gamma,
            mean_score,
            per_item,
        });
    }
    let best_gamma = per_gamma
        .iter()
        .fold(None::<&GammaScore>, |best, g| match best {
            Some(b) if b.mean_score > g.mean_score => Some(b),
            _ => Some(g),
        })
        .map(|g| g.gamma)
        .expect("grid is non-empty");
    Ok(CalibrationResult {
        per_gamma,
        best_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_checks() {
        assert!(check_grid(&default_grid()).is_ok());
        assert_eq!(default_grid()[2], 0.3);
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0.2, 0.2]).is_err());
        assert!(check_grid(&[0.5, 1.5]).is_err());
    }
}
