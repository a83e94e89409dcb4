//! Probe augmentation for feature vectors.
//!
//! Image-space flip, rescaling and cropping have no meaning for a feature
//! vector, so each (variant, crop) pair is a fixed Gaussian displacement drawn
//! once from `seed`. The count structure matches the image pipeline:
//! `variants * (m - n + 1)^2`, with one variant per scale plus one for the flip.

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("crop size {n} exceeds source size {m}")]
    CropTooLarge { m: usize, n: usize },
    #[error("scale factors must lie in (0, 1]")]
    BadScale,
    #[error("perturbation sigma must be finite and non-negative")]
    BadSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub m: usize,
    pub n: usize,
    pub scales: Vec<f64>,
    pub flip: bool,
    /// Displacement scale of each perturbation; 0 yields exact copies.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { m: 224, n: 221, scales: vec![0.6, 0.7, 0.8, 0.9], flip: true, sigma: 0.1, seed: 0xa11ce }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.n > self.m {
            return Err(AugmentError::CropTooLarge { m: self.m, n: self.n });
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(AugmentError::BadScale);
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(AugmentError::BadSigma);
        }
        Ok(())
    }

    /// Flip plus one per scale; a single identity variant when both are absent.
    pub fn variant_count(&self) -> usize {
        (usize::from(self.flip) + self.scales.len()).max(1)
    }

    pub fn crop_count(&self) -> usize {
        let side = self.m.saturating_sub(self.n) + 1;
        side * side
    }

    pub fn count(&self) -> usize {
        self.variant_count() * self.crop_count()
    }
}

/// Every augmented copy of `sample`, variant-major.
pub fn augment(sample: ArrayView1<f64>, cfg: &AugmentConfig) -> Vec<Array1<f64>> {
    let d = sample.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (d as u64).rotate_left(32));
    let mut direction = || Array1::from_shape_simple_fn(d, || StandardNormal.sample(&mut rng));
    let variants: Vec<Array1<f64>> = (0..cfg.variant_count()).map(|_| direction()).collect();
    let crops: Vec<Array1<f64>> = (0..cfg.crop_count()).map(|_| direction()).collect();
    let scale = cfg.sigma / std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(cfg.count());
    for v in &variants {
        for c in &crops {
            out.push(&sample + &((v + c) * scale));
        }
    }
    out
}
