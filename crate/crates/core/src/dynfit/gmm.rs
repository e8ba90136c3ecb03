//! Gaussian mixture over stacked transition tuples `(s_t, a_t, s_{t+1})`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default eigenvalue floor on component covariances.
pub const COVARIANCE_FLOOR: f64 = 1e-6;
/// Components whose total responsibility falls below this are re-seeded.
pub const EMPTY_COMPONENT: f64 = 1e-12;

pub const GMM_FORMAT: &str = "gpsdrive.gmm";
pub const GMM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Eigenvalue floor applied to every covariance in the M-step.
    pub floor: f64,
}

/// Diagnostics of one EM step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmStep {
    /// Total log-likelihood of the samples under the mixture before the step.
    pub log_likelihood_before: f64,
    /// Components re-seeded because they received no responsibility.
    pub reseeded: Vec<usize>,
}

struct Factored {
    log_weights: Vec<f64>,
    chol: Vec<Cholesky<f64, Dyn>>,
    log_norm: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        floor: f64,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::Dimension(
                "mixture needs matching nonempty weights, means and covariances".into(),
            ));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || covariances.iter().any(|c| c.shape() != (d, d)) {
            return Err(Error::Dimension(
                "mixture components differ in dimension".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "mixture weights must lie on the simplex".into(),
            ));
        }
        for (i, c) in covariances.iter().enumerate() {
            linalg::cholesky(c, &format!("mixture covariance {i}"))?;
        }
        Ok(Self {
            weights,
            means,
            covariances,
            floor,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn factor(&self) -> Result<Factored> {
        let d = self.dim() as f64;
        let mut chol = Vec::with_capacity(self.components());
        let mut log_norm = Vec::with_capacity(self.components());
        for (i, c) in self.covariances.iter().enumerate() {
            let ch = linalg::cholesky(c, &format!("mixture covariance {i}"))?;
            log_norm.push(
                -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + linalg::log_det_from_cholesky(&ch)),
            );
            chol.push(ch);
        }
        let log_weights = self.weights.iter().map(|w| w.ln()).collect();
        Ok(Factored {
            log_weights,
            chol,
            log_norm,
        })
    }

    /// `log w_k + log N(x; μ_k, Σ_k)` for every component.
    fn joint_log_densities(&self, f: &Factored, x: &DVector<f64>) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let diff = x - &self.means[k];
                let z = f.chol[k]
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .expect("nonsingular factor");
                f.log_weights[k] + f.log_norm[k] - 0.5 * z.norm_squared()
            })
            .collect()
    }

    /// Per-sample log-likelihoods.
    pub fn log_likelihoods(&self, samples: &[DVector<f64>]) -> Result<Vec<f64>> {
        let f = self.factor()?;
        Ok(samples
            .iter()
            .map(|x| log_sum_exp(&self.joint_log_densities(&f, x)))
            .collect())
    }

    pub fn log_likelihood(&self, samples: &[DVector<f64>]) -> Result<f64> {
        Ok(self.log_likelihoods(samples)?.iter().sum())
    }

    /// Posterior component probabilities, one row per sample.
    pub fn responsibilities(&self, samples: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        Ok(self.e_step(samples)?.0)
    }

    fn e_step(&self, samples: &[DVector<f64>]) -> Result<(DMatrix<f64>, f64)> {
        let f = self.factor()?;
        let k = self.components();
        let mut r = DMatrix::zeros(samples.len(), k);
        let mut total = 0.0;
        for (i, x) in samples.iter().enumerate() {
            let logs = self.joint_log_densities(&f, x);
            let lse = log_sum_exp(&logs);
            total += lse;
            for j in 0..k {
                r[(i, j)] = (logs[j] - lse).exp();
            }
        }
        Ok((r, total))
    }

    /// One E-step and M-step. Components with no responsibility are re-seeded
    /// at a random sample with the pooled sample covariance.
    pub fn em_update<R: Rng + ?Sized>(
        &self,
        samples: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<(Self, EmStep)> {
        self.check_samples(samples)?;
        let (r, log_likelihood_before) = self.e_step(samples)?;
        let n = samples.len();
        let d = self.dim();
        let mut weights = Vec::with_capacity(self.components());
        let mut means = Vec::with_capacity(self.components());
        let mut covariances = Vec::with_capacity(self.components());
        let mut reseeded = Vec::new();
        let mut pooled: Option<DMatrix<f64>> = None;
        for k in 0..self.components() {
            let nk: f64 = r.column(k).sum();
            if nk < EMPTY_COMPONENT {
                let cov = pooled
                    .get_or_insert_with(|| {
                        linalg::floor_eigenvalues(
                            &linalg::mean_and_covariance(samples).1,
                            self.floor,
                        )
                    })
                    .clone();
                means.push(samples[rng.random_range(0..n)].clone());
                covariances.push(cov);
                weights.push(1.0 / n as f64);
                reseeded.push(k);
                continue;
            }
            let mut mean = DVector::zeros(d);
            for (i, x) in samples.iter().enumerate() {
                mean.axpy(r[(i, k)] / nk, x, 1.0);
            }
            let mut cov = DMatrix::zeros(d, d);
            for (i, x) in samples.iter().enumerate() {
                let diff = x - &mean;
                cov.ger(r[(i, k)] / nk, &diff, &diff, 1.0);
            }
            weights.push(nk / n as f64);
            means.push(mean);
            covariances.push(linalg::floor_eigenvalues(&cov, self.floor));
        }
        if !reseeded.is_empty() {
            log::warn!("re-seeded empty mixture components {reseeded:?}");
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let updated = Self {
            weights,
            means,
            covariances,
            floor: self.floor,
        };
        Ok((
            updated,
            EmStep {
                log_likelihood_before,
                reseeded,
            },
        ))
    }

    /// Run EM from `self` until the log-likelihood gain per sample drops
    /// below `tolerance` or `max_iterations` steps were taken.
    pub fn em_fit<R: Rng + ?Sized>(
        &self,
        samples: &[DVector<f64>],
        max_iterations: usize,
        tolerance: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut current = self.clone();
        let mut previous = f64::NEG_INFINITY;
        for _ in 0..max_iterations {
            let (next, step) = current.em_update(samples, rng)?;
            let gain = (step.log_likelihood_before - previous) / samples.len() as f64;
            previous = step.log_likelihood_before;
            current = next;
            if step.reseeded.is_empty() && gain.abs() < tolerance {
                break;
            }
        }
        Ok(current)
    }

    /// k-means++ seeding followed by hard assignment to the seeds.
    pub fn kmeans_plus_plus<R: Rng + ?Sized>(
        samples: &[DVector<f64>],
        k: usize,
        floor: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        if samples.len() < k {
            return Err(Error::InsufficientData(format!(
                "{} samples for {k} mixture components",
                samples.len()
            )));
        }
        let mut centers = vec![samples[rng.random_range(0..samples.len())].clone()];
        let mut dist: Vec<f64> = samples
            .iter()
            .map(|x| (x - &centers[0]).norm_squared())
            .collect();
        while centers.len() < k {
            let total: f64 = dist.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = samples.len() - 1;
                for (i, d) in dist.iter().enumerate() {
                    if u < *d {
                        chosen = i;
                        break;
                    }
                    u -= d;
                }
                chosen
            } else {
                rng.random_range(0..samples.len())
            };
            let c = samples[pick].clone();
            for (d, x) in dist.iter_mut().zip(samples) {
                *d = d.min((x - &c).norm_squared());
            }
            centers.push(c);
        }
        let pooled = linalg::floor_eigenvalues(&linalg::mean_and_covariance(samples).1, floor);
        let mut members: Vec<Vec<DVector<f64>>> = vec![Vec::new(); k];
        for x in samples {
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    (x - &centers[a])
                        .norm_squared()
                        .total_cmp(&(x - &centers[b]).norm_squared())
                })
                .expect("k > 0");
            members[nearest].push(x.clone());
        }
        let n = samples.len() as f64;
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covariances = Vec::with_capacity(k);
        for (c, m) in centers.into_iter().zip(members) {
            if m.len() < 2 {
                weights.push(m.len().max(1) as f64 / n);
                means.push(c);
                covariances.push(pooled.clone());
            } else {
                let (mean, cov) = linalg::mean_and_covariance(&m);
                weights.push(m.len() as f64 / n);
                means.push(mean);
                covariances.push(linalg::floor_eigenvalues(&cov, floor));
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            weights,
            means,
            covariances,
            floor,
        })
    }

    fn check_samples(&self, samples: &[DVector<f64>]) -> Result<()> {
        if samples.len() < self.components() {
            return Err(Error::InsufficientData(format!(
                "{} samples for {} mixture components",
                samples.len(),
                self.components()
            )));
        }
        if samples.iter().any(|x| x.len() != self.dim()) {
            return Err(Error::Dimension(format!(
                "samples must have dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> GmmCheckpoint {
        GmmCheckpoint {
            format: GMM_FORMAT.to_string(),
            version: GMM_VERSION,
            dim: self.dim(),
            floor: self.floor,
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| m.iter().copied().collect())
                .collect(),
            covariances: self
                .covariances
                .iter()
                .map(crate::trajopt::policy::rows)
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &GmmCheckpoint) -> Result<Self> {
        if c.format != GMM_FORMAT || c.version != GMM_VERSION {
            return Err(Error::Format(format!(
                "expected {GMM_FORMAT} version {GMM_VERSION}, found {} version {}",
                c.format, c.version
            )));
        }
        let means = c
            .means
            .iter()
            .map(|m| DVector::from_vec(m.clone()))
            .collect::<Vec<_>>();
        let covariances = c
            .covariances
            .iter()
            .map(|rows| crate::trajopt::policy::from_rows(rows, c.dim, c.dim))
            .collect::<Result<Vec<_>>>()?;
        if means.iter().any(|m| m.len() != c.dim) {
            return Err(Error::Format("mixture mean has the wrong length".into()));
        }
        Self::new(c.weights.clone(), means, covariances, c.floor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: GmmCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&c)
    }
}

/// Serialized mixture: JSON with row-major covariance matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmCheckpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub floor: f64,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Responsibility-weighted mixture moments over `samples`, used as the NIW
/// prior mean and covariance.
pub fn moment_prior(
    gmm: &GaussianMixture,
    samples: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "moment prior needs at least one sample".into(),
        ));
    }
    let r = gmm.responsibilities(samples)?;
    let n = samples.len() as f64;
    let w: Vec<f64> = (0..gmm.components())
        .map(|k| r.column(k).sum() / n)
        .collect();
    let d = gmm.dim();
    let mut mu = DVector::zeros(d);
    for (wk, m) in w.iter().zip(&gmm.means) {
        mu.axpy(*wk, m, 1.0);
    }
    let mut sigma = DMatrix::zeros(d, d);
    for ((wk, m), c) in w.iter().zip(&gmm.means).zip(&gmm.covariances) {
        let diff = m - &mu;
        sigma += c * *wk;
        sigma.ger(*wk, &diff, &diff, 1.0);
    }
    Ok((mu, linalg::floor_eigenvalues(&sigma, gmm.floor)))
}
