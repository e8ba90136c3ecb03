//! Per-iteration training log shared by GPS and CEM.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::simenv::ScenarioKind;
use crate::trajopt::DualTrace;

/// Header of `train_log.csv`.
pub const LOG_COLUMNS: [&str; 7] = [
    "iteration",
    "env_steps",
    "mean_cost",
    "kl",
    "lambda",
    "fit_residual",
    "wall_time_s",
];
/// Header of `dgd_trace.csv`.
pub const TRACE_COLUMNS: [&str; 6] = [
    "iteration",
    "scenario",
    "inner",
    "lambda",
    "kl",
    "expected_cost",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    /// Cumulative environment steps after this iteration's rollouts.
    pub env_steps: u64,
    /// Mean total cost of the rollouts collected this iteration.
    pub mean_cost: f64,
    pub kl: Option<f64>,
    pub lambda: Option<f64>,
    pub fit_residual: Option<f64>,
    pub wall_time_s: f64,
}

/// One inner dual iteration, tagged with its outer iteration and scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub scenario: ScenarioKind,
    pub inner: usize,
    pub trace: DualTrace,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub traces: Vec<TraceRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("column {name}: cannot parse {field:?}")))
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LOG_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.env_steps.to_string(),
                r.mean_cost.to_string(),
                opt(r.kl),
                opt(r.lambda),
                opt(r.fit_residual),
                r.wall_time_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_COLUMNS)?;
        for r in &self.traces {
            w.write_record([
                r.iteration.to_string(),
                r.scenario.to_string(),
                r.inner.to_string(),
                r.trace.lambda.to_string(),
                r.trace.kl.to_string(),
                r.trace.expected_cost.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the rows of a `train_log.csv`; traces are not part of that file.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != LOG_COLUMNS {
            return Err(Error::Format(format!(
                "train log header {header:?} differs from {LOG_COLUMNS:?}"
            )));
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let rec = record?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| {
                    Error::Format(format!(
                        "column {}: cannot parse {:?}",
                        LOG_COLUMNS[i], &rec[i]
                    ))
                })
            };
            rows.push(LogRow {
                iteration: rec[0]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad iteration {:?}", &rec[0])))?,
                env_steps: rec[1]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad env_steps {:?}", &rec[1])))?,
                mean_cost: num(2)?,
                kl: parse_opt(&rec[3], LOG_COLUMNS[3])?,
                lambda: parse_opt(&rec[4], LOG_COLUMNS[4])?,
                fit_residual: parse_opt(&rec[5], LOG_COLUMNS[5])?,
                wall_time_s: num(6)?,
            });
        }
        Ok(Self {
            rows,
            traces: Vec::new(),
        })
    }
}
