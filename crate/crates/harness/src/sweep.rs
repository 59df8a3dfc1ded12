//! Parameter sweeps: a grid file names scenario config paths and value
//! lists; every point of the cartesian product runs with its own derived
//! seed and writes a metrics directory plus one combined index row.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::metrics::write_report;
use crate::run::{run, RunError, RunReport};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("cannot read grid: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse grid: {0}")]
    Parse(String),
    #[error("grid key '{0}' does not name a scenario config path")]
    BadKey(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub axes: Vec<GridAxis>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GridAxis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| SweepError::Parse(e.to_string()))
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product::<usize>().max(1)
    }

    /// Override set for cartesian point `index`, in axis order.
    fn point(&self, mut index: usize) -> Vec<(&str, &toml::Value)> {
        let mut out = Vec::with_capacity(self.axes.len());
        for axis in &self.axes {
            let n = axis.values.len();
            out.push((axis.path.as_str(), &axis.values[index % n]));
            index /= n;
        }
        out
    }
}

/// Set `path` (dot-separated table keys) to `value` inside a parsed scenario.
fn apply_override(
    root: &mut toml::Value,
    path: &str,
    value: &toml::Value,
) -> Result<(), SweepError> {
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    let Some((last, walk)) = segments.split_last() else {
        return Err(SweepError::BadKey(path.to_string()));
    };
    for segment in walk {
        cursor = cursor
            .get_mut(segment)
            .ok_or_else(|| SweepError::BadKey(path.to_string()))?;
    }
    match cursor.as_table_mut() {
        Some(table) => {
            table.insert(last.to_string(), value.clone());
            Ok(())
        }
        None => Err(SweepError::BadKey(path.to_string())),
    }
}

pub struct SweepOutcome {
    pub points: Vec<(usize, u64, String, RunReport)>,
}

/// Run the whole grid. Point seeds derive from the scenario's master seed
/// and the point index, so extending an axis never perturbs earlier points'
/// components.
pub fn run_sweep(
    scenario_text: &str,
    grid: &SweepGrid,
    out_dir: &Path,
    trace: bool,
) -> Result<SweepOutcome, SweepError> {
    let base: toml::Value =
        toml::from_str(scenario_text).map_err(|e| SweepError::Parse(e.to_string()))?;
    let master = base
        .get("seeds")
        .and_then(|s| s.get("master"))
        .and_then(toml::Value::as_integer)
        .unwrap_or(0) as u64;

    let mut outcome = SweepOutcome { points: Vec::new() };
    let mut index = String::from("point,seed,overrides,avg_failure_rate,worst_failure_rate\n");
    for point_idx in 0..grid.point_count() {
        let overrides = grid.point(point_idx);
        let mut value = base.clone();
        let mut labels = Vec::new();
        for (path, v) in &overrides {
            apply_override(&mut value, path, v)?;
            labels.push(format!("{path}={v}"));
        }
        let text = toml::to_string(&value).map_err(|e| SweepError::Parse(e.to_string()))?;
        let config = ScenarioConfig::from_toml(&text)?;
        let seed = derive_seed(master, "sweep", &[point_idx as u64]);
        let report = run(&config, seed, trace)?;
        let point_dir = out_dir.join(format!("point_{point_idx:03}"));
        write_report(&report, &point_dir)?;
        let label = labels.join(";");
        let _ = writeln!(
            index,
            "{point_idx},{seed},{label},{:.6},{:.6}",
            report.avg_failure_rate, report.worst_failure_rate
        );
        outcome.points.push((point_idx, seed, label, report));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("index.csv"), index)?;
    Ok(outcome)
}
