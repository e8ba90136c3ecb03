use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One step of `s' ~ N(A s + B a + f, F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DynamicsStep {
    pub fn mean(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        &self.a * s + &self.b * a + &self.f
    }
}

/// Time-varying linear-Gaussian dynamics over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDynamics {
    pub steps: Vec<DynamicsStep>,
}

impl LinearGaussianDynamics {
    pub fn new(steps: Vec<DynamicsStep>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::Dimension("dynamics need at least one step".into()));
        };
        let (ds, da) = (first.a.nrows(), first.b.ncols());
        for (t, s) in steps.iter().enumerate() {
            if s.a.shape() != (ds, ds)
                || s.b.shape() != (ds, da)
                || s.f.len() != ds
                || s.cov.shape() != (ds, ds)
            {
                return Err(Error::Dimension(format!(
                    "dynamics step {t} has inconsistent shapes"
                )));
            }
        }
        Ok(Self { steps })
    }

    /// The same step replicated over `horizon`.
    pub fn time_invariant(step: DynamicsStep, horizon: usize) -> Result<Self> {
        Self::new(vec![step; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn state_dim(&self) -> usize {
        self.steps[0].a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.steps[0].b.ncols()
    }
}

/// Gaussian over the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}
