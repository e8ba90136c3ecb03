//! Merging training curves onto a shared environment-step axis.

use std::io::Write;

use crate::error::{Error, Result};
use crate::gps::TrainingLog;

/// Mean cost against cumulative environment steps for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(u64, f64)>,
}

impl Curve {
    pub fn from_log(label: impl Into<String>, log: &TrainingLog) -> Self {
        Self {
            label: label.into(),
            points: log
                .rows
                .iter()
                .map(|r| (r.env_steps, r.mean_cost))
                .collect(),
        }
    }

    /// Value of the latest point at or before `steps`.
    pub fn value_at(&self, steps: u64) -> Option<f64> {
        self.points
            .iter()
            .take_while(|p| p.0 <= steps)
            .last()
            .map(|p| p.1)
    }

    /// Steps of the first point whose value is at or below `level`.
    pub fn steps_to_reach(&self, level: f64) -> Option<u64> {
        self.points.iter().find(|p| p.1 <= level).map(|p| p.0)
    }
}

/// Curves sampled on the union of their step counts, forward-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub env_steps: Vec<u64>,
    /// `values[i][j]` is curve `j` at `env_steps[i]`; `None` before its first point.
    pub values: Vec<Vec<Option<f64>>>,
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["env_steps".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (steps, row) in self.env_steps.iter().zip(&self.values) {
            let mut rec = vec![steps.to_string()];
            rec.extend(
                row.iter()
                    .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Merge at least two curves. Labels must be distinct and steps nondecreasing.
pub fn merge_curves(curves: &[Curve]) -> Result<Comparison> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least 2 runs, got {}",
            curves.len()
        )));
    }
    for (i, c) in curves.iter().enumerate() {
        if c.label.is_empty()
            || c.label == "env_steps"
            || curves[..i].iter().any(|d| d.label == c.label)
        {
            return Err(Error::InvalidArgument(format!(
                "curve label {:?} is empty, reserved or repeated",
                c.label
            )));
        }
        if c.points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::InvalidArgument(format!(
                "curve {:?} has decreasing env_steps",
                c.label
            )));
        }
    }
    let mut env_steps: Vec<u64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .collect();
    env_steps.sort_unstable();
    env_steps.dedup();
    let values = env_steps
        .iter()
        .map(|&s| curves.iter().map(|c| c.value_at(s)).collect())
        .collect();
    Ok(Comparison {
        labels: curves.iter().map(|c| c.label.clone()).collect(),
        env_steps,
        values,
    })
}
