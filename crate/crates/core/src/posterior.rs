//! Bayesian linear-regression posterior over the outlier-head weights.
//!
//! A fixed-capacity FIFO queue stores recent `(feature, target logit)`
//! pairs. The posterior over the head weights `w` is the standard conjugate
//! Gaussian: with prior `w ~ N(0, S)` and noise variance `s2`, the posterior
//! precision is `P = s2^{-1} F F^T + S^{-1}` (`F` stacking the queued
//! features column-wise) and the posterior mean is `s2^{-1} P^{-1} F y`.
//! Everything is computed through Cholesky solves; no matrix is inverted on
//! the solve path.

use std::collections::VecDeque;

use rand_distr::{Distribution, Normal};

use crate::linalg::{cholesky, sample_mvn, CholeskyFactor, LinalgError, Matrix};
use crate::rng::RngStream;

/// Target logits assigned to queued features.
///
/// Outliers regress on a fixed positive logit and ID samples on its
/// negative, each corrupted with i.i.d. Gaussian noise. The defaults
/// (+3 / -3) correspond to outlier probabilities 0.95 / 0.05 through the
/// sigmoid; regressing on hard 0/1 labels would require infinite logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScheme {
    pub outlier_logit: f64,
    pub id_logit: f64,
    pub noise_sd: f64,
}

impl TargetScheme {
    pub fn new(outlier_logit: f64, id_logit: f64, noise_sd: f64) -> Self {
        assert!(
            outlier_logit > 0.0 && id_logit < 0.0,
            "target logits must straddle zero (outlier > 0 > id)"
        );
        assert!(noise_sd >= 0.0 && noise_sd.is_finite());
        TargetScheme { outlier_logit, id_logit, noise_sd }
    }

    pub fn target_for(&self, is_outlier: bool) -> f64 {
        if is_outlier {
            self.outlier_logit
        } else {
            self.id_logit
        }
    }
}

impl Default for TargetScheme {
    fn default() -> Self {
        TargetScheme { outlier_logit: 3.0, id_logit: -3.0, noise_sd: 1.0 }
    }
}

/// One queued observation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub phi: Vec<f64>,
    pub target: f64,
}

/// Fixed-capacity FIFO of `(feature, noisy target logit)` pairs.
#[derive(Debug, Clone)]
pub struct FeatureQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl FeatureQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be at least 1");
        FeatureQueue { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// Append `(phi, target + noise)`, evicting the oldest entry when full.
    ///
    /// The target is the scheme's outlier or ID logit; the noise is
    /// `N(0, noise_sd^2)` (exactly the target when `noise_sd == 0`).
    pub fn enqueue(
        &mut self,
        phi: Vec<f64>,
        is_outlier: bool,
        scheme: &TargetScheme,
        rng: &mut RngStream,
    ) {
        assert!(phi.iter().all(|v| v.is_finite()), "queued features must be finite");
        if let Some(front) = self.entries.front() {
            assert_eq!(front.phi.len(), phi.len(), "queued features must share one dimension");
        }
        let noise = if scheme.noise_sd > 0.0 {
            Normal::new(0.0, scheme.noise_sd).expect("valid noise sd").sample(rng)
        } else {
            0.0
        };
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(QueueEntry { phi, target: scheme.target_for(is_outlier) + noise });
    }

    /// Flat snapshot `(dim, features row-major, targets)` for checkpointing.
    pub fn snapshot(&self) -> (usize, Vec<f64>, Vec<f64>) {
        let dim = self.entries.front().map_or(0, |e| e.phi.len());
        let mut feats = Vec::with_capacity(dim * self.entries.len());
        let mut targets = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            feats.extend_from_slice(&e.phi);
            targets.push(e.target);
        }
        (dim, feats, targets)
    }
}

/// Closed-form Gaussian posterior over the head weights.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    prior_cov: Matrix,
    noise_var: f64,
    precision: Matrix,
    precision_chol: CholeskyFactor,
    mean: Vec<f64>,
}

impl PosteriorState {
    /// Posterior precision `P = s2^{-1} F F^T + S^{-1}`.
    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn prior_cov(&self) -> &Matrix {
        &self.prior_cov
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draw `w ~ N(mean, P^{-1})`.
    pub fn sample_weights(&self, rng: &mut RngStream) -> Vec<f64> {
        sample_mvn(&self.mean, &self.precision_chol, rng)
    }
}

/// Recompute the posterior from the full queue contents.
///
/// On an empty queue this recovers the prior exactly (`P = S^{-1}`,
/// mean 0). The prior precision is obtained by Cholesky-solving against
/// identity columns, and the mean by a Cholesky solve with `P`; the routine
/// never forms `P^{-1}`.
pub fn posterior_update(
    queue: &FeatureQueue,
    prior_cov: &Matrix,
    noise_var: f64,
) -> Result<PosteriorState, LinalgError> {
    assert!(noise_var > 0.0 && noise_var.is_finite(), "noise variance must be positive");
    let dim = prior_cov.dim();
    let prior_chol = cholesky(prior_cov)?;
    let mut precision = prior_chol.inverse();
    // Symmetrize: the column-wise inverse can pick up ulp-level asymmetry.
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = 0.5 * (precision.get(i, j) + precision.get(j, i));
            precision.set(i, j, v);
            precision.set(j, i, v);
        }
    }

    let inv_noise = 1.0 / noise_var;
    let mut target_proj = vec![0.0; dim];
    for entry in queue.entries() {
        assert_eq!(entry.phi.len(), dim, "queue feature dimension must match the prior");
        precision.add_scaled_outer(&entry.phi, inv_noise);
        for (acc, &p) in target_proj.iter_mut().zip(&entry.phi) {
            *acc += p * entry.target * inv_noise;
        }
    }

    let precision_chol = cholesky(&precision)?;
    let mean = if queue.is_empty() {
        vec![0.0; dim]
    } else {
        precision_chol.solve(&target_proj)
    };
    Ok(PosteriorState {
        prior_cov: prior_cov.clone(),
        noise_var,
        precision,
        precision_chol,
        mean,
    })
}
