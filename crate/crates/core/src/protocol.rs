//! Enrollment and authentication over SHA3-512 digests of final codes.
//!
//! Only digests are persisted. A [`CodeGenerator`] turns a feature vector
//! into the code that gets hashed; the three implementations here are the
//! raw hashing layer, hashing plus conventional BCH decoding, and the joint
//! hashing/NND model.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha3::{Digest as _, Sha3_512};
use thiserror::Error;

use crate::bch::{BchCode, BchError, BinaryCode, CodeRole};
use crate::eval::augment::{augment, AugmentConfig};
use crate::hashnet::{HashNetError, HashNetModel, JointModel};

pub const DIGEST_LEN: usize = 64;
pub const TEMPLATE_CODE_LENGTHS: [usize; 4] = [15, 63, 255, 1023];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("no samples supplied for enrollment")]
    NoSamples,
    #[error("probe template set is empty")]
    EmptyProbeSet,
    #[error("subject {0:?} is already enrolled")]
    Conflict(String),
    #[error("subject {0:?} is not enrolled")]
    UnknownSubject(String),
    #[error("unsupported template code length {0}")]
    CodeLength(usize),
    #[error("template store {path}: {source}")]
    Storage { path: PathBuf, source: std::io::Error },
    #[error("template store line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] HashNetError),
    #[error(transparent)]
    Bch(#[from] BchError),
}

/// Packs bits most-significant-first; the last byte is zero-padded.
pub fn pack_bits(code: &BinaryCode) -> Vec<u8> {
    code.bits()
        .chunks(8)
        .map(|chunk| chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))))
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateDigest(pub [u8; DIGEST_LEN]);

impl TemplateDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }

    /// Number of differing bits.
    pub fn bit_distance(&self, other: &Self) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

impl fmt::Debug for TemplateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TemplateDigest({})", self.to_hex())
    }
}

/// SHA3-512 over `salt || pack_bits(code)`.
pub fn hash_template(code: &BinaryCode, salt: Option<&[u8]>) -> TemplateDigest {
    let mut h = Sha3_512::new();
    if let Some(salt) = salt {
        h.update(salt);
    }
    h.update(pack_bits(code));
    TemplateDigest(h.finalize().into())
}

/// Most frequent code; ties go to the lexicographically smallest.
pub fn majority_code(codes: &[BinaryCode]) -> Option<BinaryCode> {
    let mut counts: BTreeMap<&[bool], usize> = BTreeMap::new();
    for c in codes {
        *counts.entry(c.bits()).or_default() += 1;
    }
    let role = codes.first()?.role();
    let best = counts.iter().fold(None::<(&[bool], usize)>, |best, (&bits, &n)| match best {
        Some((_, m)) if m >= n => best,
        _ => Some((bits, n)),
    })?;
    Some(BinaryCode::new(best.0.to_vec(), role))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub subject_id: String,
    pub digest: TemplateDigest,
    pub code_length: usize,
    pub codec_id: String,
    pub created_at: String,
    pub salt: Option<Vec<u8>>,
}

/// One line of the template store file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub subject_id: String,
    pub digest_hex: String,
    pub code_length: usize,
    pub codec_id: String,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salt_hex: Option<String>,
}

impl Template {
    pub fn to_record(&self) -> TemplateRecord {
        TemplateRecord {
            subject_id: self.subject_id.clone(),
            digest_hex: self.digest.to_hex(),
            code_length: self.code_length,
            codec_id: self.codec_id.clone(),
            created_at: self.created_at.clone(),
            salt_hex: self.salt.as_ref().map(hex::encode),
        }
    }

    pub fn from_record(r: TemplateRecord) -> Result<Self, String> {
        if r.digest_hex.len() != 2 * DIGEST_LEN || r.digest_hex.chars().any(|c| c.is_ascii_uppercase()) {
            return Err("digest_hex must be 128 lowercase hex characters".into());
        }
        let digest = TemplateDigest::from_hex(&r.digest_hex).ok_or("digest_hex is not hex")?;
        if !TEMPLATE_CODE_LENGTHS.contains(&r.code_length) {
            return Err(format!("unsupported code_length {}", r.code_length));
        }
        chrono::DateTime::parse_from_rfc3339(&r.created_at).map_err(|e| format!("created_at: {e}"))?;
        let salt = r
            .salt_hex
            .map(|s| hex::decode(s).map_err(|e| format!("salt_hex: {e}")))
            .transpose()?;
        Ok(Self { subject_id: r.subject_id, digest, code_length: r.code_length, codec_id: r.codec_id, created_at: r.created_at, salt })
    }
}

/// Newline-delimited JSON template store, kept in subject order.
/// A store without a path lives only in memory.
#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    path: Option<PathBuf>,
    templates: BTreeMap<String, Template>,
}

impl TemplateStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists, otherwise starts empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProtocolError> {
        let path = path.as_ref().to_path_buf();
        let mut templates = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|source| ProtocolError::Storage { path: path.clone(), source })?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let malformed = |reason: String| ProtocolError::Malformed { line: i + 1, reason };
                let record: TemplateRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
                let t = Template::from_record(record).map_err(malformed)?;
                if templates.insert(t.subject_id.clone(), t).is_some() {
                    return Err(malformed("duplicate subject_id".into()));
                }
            }
        }
        Ok(Self { path: Some(path), templates })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, subject_id: &str) -> Option<&Template> {
        self.templates.get(subject_id)
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.templates.values()
    }

    /// Adds a template; an existing subject is replaced only with `reenroll`.
    pub fn insert(&mut self, template: Template, reenroll: bool) -> Result<(), ProtocolError> {
        if !reenroll && self.templates.contains_key(&template.subject_id) {
            return Err(ProtocolError::Conflict(template.subject_id));
        }
        self.templates.insert(template.subject_id.clone(), template);
        self.flush()
    }

    pub fn to_ndjson(&self) -> String {
        self.templates
            .values()
            .map(|t| serde_json::to_string(&t.to_record()).expect("record serializes") + "\n")
            .collect()
    }

    fn flush(&self) -> Result<(), ProtocolError> {
        let Some(path) = &self.path else { return Ok(()) };
        let io = |source| ProtocolError::Storage { path: path.clone(), source };
        let tmp = path.with_extension("ndjson.tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(self.to_ndjson().as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

/// Maps a feature vector to the code that gets hashed.
pub trait CodeGenerator: Sync {
    fn code_length(&self) -> usize;
    fn codec_id(&self) -> String;
    fn final_code(&self, x: ArrayView1<f64>) -> Result<BinaryCode, ProtocolError>;
}

/// Thresholded hashing layer with no error correction.
pub struct RawHashGenerator<'a> {
    pub dh: &'a HashNetModel,
}

/// Hashing layer followed by BCH decoding and re-encoding of the message.
pub struct DecoderGenerator<'a> {
    pub dh: &'a HashNetModel,
    pub code: &'a BchCode,
}

impl CodeGenerator for RawHashGenerator<'_> {
    fn code_length(&self) -> usize {
        self.dh.dims().k
    }

    fn codec_id(&self) -> String {
        format!("dh-raw/k{}/seed{}", self.dh.dims().k, self.dh.seed())
    }

    fn final_code(&self, x: ArrayView1<f64>) -> Result<BinaryCode, ProtocolError> {
        Ok(self.dh.intermediate_code(x)?.with_role(CodeRole::Final))
    }
}

impl CodeGenerator for DecoderGenerator<'_> {
    fn code_length(&self) -> usize {
        self.code.n()
    }

    fn codec_id(&self) -> String {
        format!("dh-bch/{}/seed{}", self.code.label(), self.dh.seed())
    }

    fn final_code(&self, x: ArrayView1<f64>) -> Result<BinaryCode, ProtocolError> {
        let raw = self.dh.intermediate_code(x)?;
        Ok(self.code.decode_reencode(raw.bits())?.0)
    }
}

impl CodeGenerator for JointModel {
    fn code_length(&self) -> usize {
        self.code_length()
    }

    fn codec_id(&self) -> String {
        let code = self
            .nnd
            .code_params()
            .map_or_else(|| format!("n{}", self.code_length()), |c| format!("bch{}_{}", c.n, c.k));
        format!("dh-nnd/{code}/T{}/seed{}", self.nnd.iterations(), self.dh.seed())
    }

    fn final_code(&self, x: ArrayView1<f64>) -> Result<BinaryCode, ProtocolError> {
        Ok(JointModel::final_code(self, x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeTemplateSet {
    templates: Vec<TemplateDigest>,
}

impl ProbeTemplateSet {
    pub fn new(templates: Vec<TemplateDigest>) -> Result<Self, ProtocolError> {
        if templates.is_empty() {
            return Err(ProtocolError::EmptyProbeSet);
        }
        Ok(Self { templates })
    }

    pub fn templates(&self) -> &[TemplateDigest] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub score: f64,
    pub threshold: f64,
    pub accept: bool,
}

impl MatchResult {
    pub fn new(score: f64, threshold: f64) -> Self {
        Self { score, threshold, accept: score >= threshold }
    }
}

/// Fraction of probe digests equal to the enrolled digest.
pub fn match_score(probes: &ProbeTemplateSet, enrolled: &Template, threshold: f64) -> MatchResult {
    let hits = probes.templates.iter().filter(|d| **d == enrolled.digest).count();
    MatchResult::new(hits as f64 / probes.len() as f64, threshold)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollOptions {
    pub salt: Option<Vec<u8>>,
    pub reenroll: bool,
    pub created_at: String,
}

impl Default for EnrollOptions {
    fn default() -> Self {
        Self { salt: None, reenroll: false, created_at: "1970-01-01T00:00:00+00:00".into() }
    }
}

/// Final codes for many inputs, computed in parallel and returned in input order.
pub fn final_codes<G: CodeGenerator + ?Sized>(generator: &G, xs: &[Array1<f64>]) -> Result<Vec<BinaryCode>, ProtocolError> {
    xs.par_iter().map(|x| generator.final_code(x.view())).collect()
}

/// Builds a template from the majority final code of `samples` without storing it.
pub fn make_template<G: CodeGenerator + ?Sized>(
    samples: &[Array1<f64>],
    generator: &G,
    subject_id: &str,
    opts: &EnrollOptions,
) -> Result<Template, ProtocolError> {
    let codes = final_codes(generator, samples)?;
    let code = majority_code(&codes).ok_or(ProtocolError::NoSamples)?;
    if !TEMPLATE_CODE_LENGTHS.contains(&code.len()) {
        return Err(ProtocolError::CodeLength(code.len()));
    }
    Ok(Template {
        subject_id: subject_id.to_string(),
        digest: hash_template(&code, opts.salt.as_deref()),
        code_length: code.len(),
        codec_id: generator.codec_id(),
        created_at: opts.created_at.clone(),
        salt: opts.salt.clone(),
    })
}

/// Enrolls a subject and persists its template.
pub fn enroll<G: CodeGenerator + ?Sized>(
    samples: &[Array1<f64>],
    generator: &G,
    store: &mut TemplateStore,
    subject_id: &str,
    opts: &EnrollOptions,
) -> Result<Template, ProtocolError> {
    if !opts.reenroll && store.get(subject_id).is_some() {
        return Err(ProtocolError::Conflict(subject_id.to_string()));
    }
    let template = make_template(samples, generator, subject_id, opts)?;
    store.insert(template.clone(), opts.reenroll)?;
    Ok(template)
}

/// Final codes of every augmented copy of `probe`.
pub fn probe_codes<G: CodeGenerator + ?Sized>(
    probe: ArrayView1<f64>,
    aug: &AugmentConfig,
    generator: &G,
) -> Result<Vec<BinaryCode>, ProtocolError> {
    final_codes(generator, &augment(probe, aug))
}

/// Digest set for a probe's augmented codes under a given salt.
pub fn probe_templates(codes: &[BinaryCode], salt: Option<&[u8]>) -> Result<ProbeTemplateSet, ProtocolError> {
    ProbeTemplateSet::new(codes.iter().map(|c| hash_template(c, salt)).collect())
}

pub fn authenticate<G: CodeGenerator + ?Sized>(
    probe: ArrayView1<f64>,
    aug: &AugmentConfig,
    generator: &G,
    enrolled: &Template,
    threshold: f64,
) -> Result<MatchResult, ProtocolError> {
    let codes = probe_codes(probe, aug, generator)?;
    Ok(match_score(&probe_templates(&codes, enrolled.salt.as_deref())?, enrolled, threshold))
}
