use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// One step of a linear-Gaussian controller, `a ~ N(K s + k, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PolicyStep {
    pub fn mean(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.gain * s + &self.offset
    }
}

/// Time-varying linear-Gaussian policy over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianPolicy {
    pub steps: Vec<PolicyStep>,
}

impl LinearGaussianPolicy {
    pub fn new(steps: Vec<PolicyStep>) -> Result<Self> {
        let policy = Self { steps };
        policy.check_shapes()?;
        Ok(policy)
    }

    /// The same step replicated over `horizon`.
    pub fn time_invariant(step: PolicyStep, horizon: usize) -> Result<Self> {
        Self::new(vec![step; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn state_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.gain.ncols())
    }

    pub fn action_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.gain.nrows())
    }

    fn check_shapes(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Dimension("policy needs at least one step".into()));
        }
        let (da, ds) = (self.action_dim(), self.state_dim());
        for (t, s) in self.steps.iter().enumerate() {
            if s.gain.shape() != (da, ds)
                || s.offset.len() != da
                || s.covariance.shape() != (da, da)
            {
                return Err(Error::Dimension(format!(
                    "policy step {t} has inconsistent shapes"
                )));
            }
        }
        Ok(())
    }

    /// Check covariance symmetry and the eigenvalue floor.
    pub fn validate(&self, min_eigenvalue: f64) -> Result<()> {
        self.check_shapes()?;
        for (t, s) in self.steps.iter().enumerate() {
            let asym = linalg::max_abs(&(&s.covariance - s.covariance.transpose()));
            if asym > 1e-12 * linalg::max_abs(&s.covariance).max(1.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "policy covariance {t} is not symmetric"
                )));
            }
            if linalg::min_eigenvalue(&s.covariance) < min_eigenvalue {
                return Err(Error::NotPositiveDefinite(format!(
                    "policy covariance {t} below floor"
                )));
            }
        }
        Ok(())
    }

    /// Same gains with every covariance replaced by `covariance`.
    pub fn with_covariance(&self, covariance: &DMatrix<f64>) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|s| PolicyStep {
                covariance: covariance.clone(),
                ..s.clone()
            })
            .collect();
        Self { steps }
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            state_dim: self.state_dim(),
            action_dim: self.action_dim(),
            horizon: self.horizon(),
            steps: self
                .steps
                .iter()
                .map(|s| StepRecord {
                    gain: rows(&s.gain),
                    offset: s.offset.iter().copied().collect(),
                    covariance: rows(&s.covariance),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &PolicyCheckpoint) -> Result<Self> {
        if c.format != POLICY_FORMAT || c.version != POLICY_VERSION {
            return Err(Error::Format(format!(
                "expected {POLICY_FORMAT} v{POLICY_VERSION}, found {} v{}",
                c.format, c.version
            )));
        }
        if c.steps.len() != c.horizon {
            return Err(Error::Format(format!(
                "horizon {} but {} steps",
                c.horizon,
                c.steps.len()
            )));
        }
        let steps = c
            .steps
            .iter()
            .map(|s| {
                Ok(PolicyStep {
                    gain: from_rows(&s.gain, c.action_dim, c.state_dim)?,
                    offset: DVector::from_vec(s.offset.clone()),
                    covariance: from_rows(&s.covariance, c.action_dim, c.action_dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

pub const POLICY_FORMAT: &str = "gpsdrive.policy";
pub const POLICY_VERSION: u32 = 1;

/// On-disk policy layout: JSON, matrices stored row-major as nested arrays.
/// Floats are written in shortest round-trip form, so save/load is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub gain: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("expected a {nrows}x{ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
