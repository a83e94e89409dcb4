//! Synthetic benchmark, Stage-2 ground truth, verification and attack runs.

pub mod augment;
pub mod metrics;
pub mod synth;

use std::collections::BTreeMap;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bch::{BchCode, BinaryCode, CodeRole};
use crate::hashnet::{HashNetModel, JointModel};
use crate::protocol::{
    make_template, majority_code, match_score, probe_codes, probe_templates, CodeGenerator, DecoderGenerator,
    EnrollOptions, ProtocolError, RawHashGenerator, Template, TemplateStore,
};
use augment::AugmentConfig;
use metrics::{eer_from_roc, gar_at_far, roc, GarAtFar, RocPoint};
use synth::{to_arrays, Dataset, Subject};

/// Code length below which a configuration is not considered secure.
pub const SECURE_MIN_K: usize = 255;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("subject {0} has no samples")]
    NoSamples(String),
    #[error("no {0} available for evaluation")]
    Insufficient(&'static str),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Bch(#[from] crate::bch::BchError),
    #[error(transparent)]
    Model(#[from] crate::hashnet::HashNetError),
}

/// Stage-2 result for one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_id: String,
    pub codeword: Vec<bool>,
    pub samples: usize,
    pub successful_decodes: usize,
    pub low_confidence: bool,
}

/// Decodes every sample's intermediate code and keeps the most common
/// successful codeword. Subjects without any successful decode fall back to
/// the majority intermediate code re-encoded from its message positions.
pub fn stage2_ground_truth(
    dh: &HashNetModel,
    code: &BchCode,
    subjects: &[(String, Vec<Array1<f64>>)],
) -> Result<Vec<GroundTruth>, EvalError> {
    subjects
        .iter()
        .map(|(id, samples)| {
            if samples.is_empty() {
                return Err(EvalError::NoSamples(id.clone()));
            }
            let raw: Vec<BinaryCode> = samples.iter().map(|x| dh.intermediate_code(x.view())).collect::<Result<_, _>>()?;
            let mut decoded = Vec::new();
            for r in &raw {
                let d = code.decode(r.bits())?;
                if d.success {
                    decoded.push(BinaryCode::new(d.codeword, CodeRole::Final));
                }
            }
            let (codeword, low_confidence) = match majority_code(&decoded) {
                Some(c) => (c.into_bits(), false),
                None => {
                    let raw_major = majority_code(&raw).expect("samples are nonempty");
                    (code.encode(code.message_part(raw_major.bits()))?.into_bits(), true)
                }
            };
            Ok(GroundTruth {
                subject_id: id.clone(),
                codeword,
                samples: samples.len(),
                successful_decodes: decoded.len(),
                low_confidence,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnrollmentMode {
    ZeroShot,
    OneShot,
    MultiShot,
}

impl EnrollmentMode {
    pub const ALL: [Self; 3] = [Self::MultiShot, Self::OneShot, Self::ZeroShot];

    pub fn name(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero-shot",
            Self::OneShot => "one-shot",
            Self::MultiShot => "multi-shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub far_targets: Vec<f64>,
    /// Gallery samples used for multi-shot enrollment.
    pub multi_shot_samples: usize,
    /// Accept threshold used by authentication and attack runs.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { far_targets: vec![1e-2, 1e-3, 1e-4], multi_shot_samples: 10, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub enrollment_mode: EnrollmentMode,
    pub codec_id: String,
    pub enrolled_subjects: usize,
    pub eer: f64,
    pub gar_at_far: Vec<GarAtFar>,
    /// GAR at the strictest sweep point with no false accepts.
    pub zero_far_gar: f64,
    pub roc: Vec<RocPoint>,
    pub genuine_scores: Vec<f64>,
    pub impostor_scores: Vec<f64>,
}

/// Enrolled subjects and their enrollment samples for a mode.
pub fn enrollment_plan(dataset: &Dataset, mode: EnrollmentMode, cfg: &EvalConfig) -> Vec<(usize, Vec<Array1<f64>>)> {
    let pick = |ids: &[usize], count: usize| {
        ids.iter()
            .map(|&i| {
                let g = dataset.subject(i).gallery();
                (i, to_arrays(&g[..count.clamp(1, g.len())]))
            })
            .collect()
    };
    match mode {
        EnrollmentMode::OneShot => pick(&dataset.splits.dh_train, 1),
        EnrollmentMode::MultiShot => pick(&dataset.splits.dh_train, cfg.multi_shot_samples),
        EnrollmentMode::ZeroShot => pick(&dataset.splits.zero_shot_test, 1),
    }
}

/// Augmented final codes of every probe sample, grouped by subject.
pub fn probe_code_table<G: CodeGenerator + ?Sized>(
    generator: &G,
    subjects: &[Subject],
    aug: &AugmentConfig,
) -> Result<Vec<Vec<Vec<BinaryCode>>>, EvalError> {
    subjects
        .iter()
        .map(|s| {
            s.probes()
                .par_iter()
                .map(|p| probe_codes(Array1::from(p.clone()).view(), aug, generator))
                .collect::<Result<Vec<_>, _>>()
                .map_err(EvalError::from)
        })
        .collect()
}

/// Genuine trials pair each enrolled subject with its own probes; impostor
/// trials pair it with the probes of every other subject in the dataset.
pub fn evaluate<G: CodeGenerator + ?Sized>(
    generator: &G,
    variant: &str,
    dataset: &Dataset,
    mode: EnrollmentMode,
    cfg: &EvalConfig,
    aug: &AugmentConfig,
) -> Result<EvalReport, EvalError> {
    let table = probe_code_table(generator, &dataset.subjects, aug)?;
    evaluate_with_table(generator, variant, dataset, mode, cfg, &table)
}

fn evaluate_with_table<G: CodeGenerator + ?Sized>(
    generator: &G,
    variant: &str,
    dataset: &Dataset,
    mode: EnrollmentMode,
    cfg: &EvalConfig,
    table: &[Vec<Vec<BinaryCode>>],
) -> Result<EvalReport, EvalError> {
    let plan = enrollment_plan(dataset, mode, cfg);
    if plan.is_empty() {
        return Err(EvalError::Insufficient("enrolled subjects"));
    }
    let opts = EnrollOptions::default();
    let templates: Vec<(usize, Template)> = plan
        .iter()
        .map(|(i, samples)| Ok((*i, make_template(samples, generator, &dataset.subject(*i).id, &opts)?)))
        .collect::<Result<_, ProtocolError>>()?;

    let probe_sets: Vec<Vec<_>> = table
        .iter()
        .map(|subject| subject.iter().map(|codes| probe_templates(codes, None)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (owner, template) in &templates {
        for (subject, sets) in probe_sets.iter().enumerate() {
            for set in sets {
                let score = match_score(set, template, cfg.threshold).score;
                if subject == *owner {
                    genuine.push(score);
                } else {
                    impostor.push(score);
                }
            }
        }
    }
    if genuine.is_empty() {
        return Err(EvalError::Insufficient("genuine probes"));
    }
    if impostor.is_empty() {
        return Err(EvalError::Insufficient("impostor probes"));
    }
    let points = roc(&genuine, &impostor);
    Ok(EvalReport {
        variant: variant.to_string(),
        enrollment_mode: mode,
        codec_id: generator.codec_id(),
        enrolled_subjects: templates.len(),
        eer: eer_from_roc(&points),
        gar_at_far: cfg.far_targets.iter().map(|&far| GarAtFar { far, gar: gar_at_far(&points, far) }).collect(),
        zero_far_gar: gar_at_far(&points, 0.0),
        roc: points,
        genuine_scores: genuine,
        impostor_scores: impostor,
    })
}

/// Evaluates all enrollment modes with one shared probe table.
pub fn evaluate_modes<G: CodeGenerator + ?Sized>(
    generator: &G,
    variant: &str,
    dataset: &Dataset,
    modes: &[EnrollmentMode],
    cfg: &EvalConfig,
    aug: &AugmentConfig,
) -> Result<Vec<EvalReport>, EvalError> {
    let table = probe_code_table(generator, &dataset.subjects, aug)?;
    modes.iter().map(|&m| evaluate_with_table(generator, variant, dataset, m, cfg, &table)).collect()
}

pub const VARIANT_RAW: &str = "DH-";
pub const VARIANT_DECODER: &str = "DH+Decoder";
pub const VARIANT_NND: &str = "DH+NND";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEer {
    pub variant: String,
    pub eer: f64,
}

/// EERs of the raw hash, hash plus conventional decoder, and joint model,
/// under the same dataset, mode and augmentation.
pub fn variant_compare(
    dh: &HashNetModel,
    code: &BchCode,
    joint: &JointModel,
    dataset: &Dataset,
    mode: EnrollmentMode,
    cfg: &EvalConfig,
    aug: &AugmentConfig,
) -> Result<Vec<EvalReport>, EvalError> {
    Ok(vec![
        evaluate(&RawHashGenerator { dh }, VARIANT_RAW, dataset, mode, cfg, aug)?,
        evaluate(&DecoderGenerator { dh, code }, VARIANT_DECODER, dataset, mode, cfg, aug)?,
        evaluate(joint, VARIANT_NND, dataset, mode, cfg, aug)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attacker_samples: usize,
    pub enrolled_templates: usize,
    pub attempts: usize,
    /// Scores of exactly zero.
    pub zero_scores: usize,
    /// Scores strictly above zero.
    pub nonzero_scores: usize,
    pub false_accepts: usize,
    pub max_score: f64,
    /// Counts of nonzero scores in ten equal bins over (0, 1].
    pub histogram: Vec<usize>,
    pub threshold: f64,
}

/// Authenticates every attacker sample against every stored template.
pub fn dictionary_attack<G: CodeGenerator + ?Sized>(
    generator: &G,
    store: &TemplateStore,
    attacker: &[Array1<f64>],
    aug: &AugmentConfig,
    threshold: f64,
) -> Result<AttackReport, EvalError> {
    let codes: Vec<Vec<BinaryCode>> =
        attacker.par_iter().map(|x| probe_codes(x.view(), aug, generator)).collect::<Result<_, _>>()?;
    let templates: Vec<&Template> = store.templates().collect();
    let mut salted: BTreeMap<Option<&[u8]>, Vec<_>> = BTreeMap::new();
    for t in &templates {
        if let std::collections::btree_map::Entry::Vacant(e) = salted.entry(t.salt.as_deref()) {
            let sets = codes.iter().map(|c| probe_templates(c, t.salt.as_deref())).collect::<Result<Vec<_>, _>>()?;
            e.insert(sets);
        }
    }
    let mut report = AttackReport {
        attacker_samples: attacker.len(),
        enrolled_templates: templates.len(),
        attempts: 0,
        zero_scores: 0,
        nonzero_scores: 0,
        false_accepts: 0,
        max_score: 0.0,
        histogram: vec![0; 10],
        threshold,
    };
    for t in &templates {
        for set in &salted[&t.salt.as_deref()] {
            let r = match_score(set, t, threshold);
            report.attempts += 1;
            if r.score > 0.0 {
                report.nonzero_scores += 1;
                report.histogram[((r.score * 10.0).ceil() as usize).clamp(1, 10) - 1] += 1;
                report.false_accepts += usize::from(r.accept);
            } else {
                report.zero_scores += 1;
            }
            report.max_score = report.max_score.max(r.score);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BruteForce {
    /// Search space is `2^exponent`.
    pub exponent: usize,
    pub secure: bool,
}

pub fn brute_force_accounting(k: usize) -> BruteForce {
    BruteForce { exponent: k, secure: k >= SECURE_MIN_K }
}
