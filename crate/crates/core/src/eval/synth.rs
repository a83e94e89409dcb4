//! Synthetic subjects: Gaussian clouds around well-separated prototypes.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
/// Prototype draws allowed per subject before giving up.
pub const MAX_PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place subject {subject} at distance {min_dist} from the others")]
    Infeasible { subject: usize, min_dist: f64 },
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("dataset document: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDatasetSpec {
    pub subjects: usize,
    pub samples_per_subject: usize,
    pub d_in: usize,
    pub intra_sigma: f64,
    pub inter_min_dist: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self { subjects: 20, samples_per_subject: 50, d_in: 32, intra_sigma: 0.35, inter_min_dist: 4.0, seed: 2024 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplits {
    pub dh_train: Vec<usize>,
    pub nnd_train: Vec<usize>,
    pub zero_shot_test: Vec<usize>,
}

impl SubjectSplits {
    /// Contiguous ~70/20/10 split; every part gets at least one subject.
    pub fn proportional(subjects: usize) -> Result<Self, SynthError> {
        if subjects < 3 {
            return Err(SynthError::Spec("at least 3 subjects are needed for three splits".into()));
        }
        let nnd = ((subjects as f64 * 0.2).round() as usize).max(1);
        let zero = ((subjects as f64 * 0.1).round() as usize).max(1);
        let dh = subjects.saturating_sub(nnd + zero).max(1);
        let nnd = subjects - dh - zero;
        Ok(Self {
            dh_train: (0..dh).collect(),
            nnd_train: (dh..dh + nnd).collect(),
            zero_shot_test: (dh + nnd..subjects).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub prototype: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl Subject {
    /// First half of the samples: enrollment and training material.
    pub fn gallery(&self) -> &[Vec<f64>] {
        &self.samples[..self.samples.len().div_ceil(2)]
    }

    /// Second half of the samples: held-out probes.
    pub fn probes(&self) -> &[Vec<f64>] {
        &self.samples[self.samples.len().div_ceil(2)..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format_version: u32,
    pub spec: SyntheticDatasetSpec,
    pub splits: SubjectSplits,
    pub subjects: Vec<Subject>,
}

pub fn subject_id(index: usize) -> String {
    format!("subject-{index:03}")
}

pub fn to_arrays(samples: &[Vec<f64>]) -> Vec<Array1<f64>> {
    samples.iter().map(|s| Array1::from(s.clone())).collect()
}

impl Dataset {
    pub fn subject(&self, index: usize) -> &Subject {
        &self.subjects[index]
    }

    pub fn to_json(&self) -> Result<String, SynthError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SynthError> {
        let d: Self = serde_json::from_str(s)?;
        if d.format_version != FORMAT_VERSION {
            return Err(SynthError::Format(format!("unsupported format_version {}", d.format_version)));
        }
        let ok = d.subjects.iter().all(|s| s.samples.iter().all(|x| x.len() == d.spec.d_in));
        if !ok {
            return Err(SynthError::Format("sample dimension does not match d_in".into()));
        }
        Ok(d)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Prototypes are standard normal vectors redrawn until every pair is at
/// least `inter_min_dist` apart; samples add `intra_sigma`-scaled noise.
pub fn synth_generate(spec: &SyntheticDatasetSpec) -> Result<Dataset, SynthError> {
    if spec.d_in == 0 || spec.samples_per_subject < 2 {
        return Err(SynthError::Spec("d_in must be positive and each subject needs at least 2 samples".into()));
    }
    if !(spec.intra_sigma.is_finite() && spec.intra_sigma >= 0.0 && spec.inter_min_dist.is_finite()) {
        return Err(SynthError::Spec("noise scale and distance must be finite".into()));
    }
    let splits = SubjectSplits::proportional(spec.subjects)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..spec.d_in).map(|_| StandardNormal.sample(rng)).collect() };
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(spec.subjects);
    for subject in 0..spec.subjects {
        let mut placed = false;
        for _ in 0..MAX_PROTOTYPE_ATTEMPTS {
            let p = normal(&mut rng);
            if prototypes.iter().all(|q| distance(&p, q) >= spec.inter_min_dist) {
                prototypes.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::Infeasible { subject, min_dist: spec.inter_min_dist });
        }
    }
    let subjects = prototypes
        .into_iter()
        .enumerate()
        .map(|(i, prototype)| {
            let samples = (0..spec.samples_per_subject)
                .map(|_| normal(&mut rng).iter().zip(&prototype).map(|(z, p)| p + spec.intra_sigma * z).collect())
                .collect();
            Subject { id: subject_id(i), prototype, samples }
        })
        .collect();
    Ok(Dataset { format_version: FORMAT_VERSION, spec: spec.clone(), splits, subjects })
}
