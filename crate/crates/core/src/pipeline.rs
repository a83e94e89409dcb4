//! Run configuration and the stage commands that read and write artifacts.
//!
//! Every command takes a [`RunConfig`], checks that its input artifacts exist
//! and writes only its own outputs. All randomness comes from seeds in the
//! config, so replaying a config reproduces every artifact byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bch::{BchCode, CodePreset};
use crate::eval::augment::AugmentConfig;
use crate::eval::metrics::roc_csv;
use crate::eval::synth::{synth_generate, to_arrays, Dataset, SyntheticDatasetSpec};
use crate::eval::{
    brute_force_accounting, dictionary_attack, enrollment_plan, evaluate_modes, stage2_ground_truth, variant_compare,
    AttackReport, BruteForce, EnrollmentMode, EvalConfig, EvalReport, GroundTruth, VariantEer,
};
use crate::hashnet::{
    integrate, train_joint, train_stage1, Dims, HashNetModel, JointModel, JointSample, JointTrainConfig, LossWeights,
    Stage1Config, Stage1History, TrainBatch,
};
use crate::nnd::{self, InputMode, NndModel, NndSample, NndTrainConfig, TrainHistory};
use crate::protocol::{authenticate, enroll, EnrollOptions, MatchResult, TemplateStore};

pub const FORMAT_VERSION: u32 = 1;

pub const DATASET_FILE: &str = "dataset.json";
pub const DH_MODEL_FILE: &str = "dh_model.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const NND_MODEL_FILE: &str = "nnd_model.json";
pub const JOINT_MODEL_FILE: &str = "joint_model.json";
pub const TRAINING_LOG_FILE: &str = "training_log.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const ATTACK_REPORT_FILE: &str = "attack_report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing {what} at {}; run `{hint}` first", path.display())]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Missing { .. } => 2,
            Self::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

/// A named preset or explicit `{m, t}` parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CodeConfig {
    Preset(String),
    Params { m: u32, t: usize },
}

impl CodeConfig {
    pub fn build(&self) -> Result<BchCode, PipelineError> {
        let code = match self {
            Self::Preset(name) => name.parse::<CodePreset>().and_then(CodePreset::build),
            Self::Params { m, t } => BchCode::new(*m, *t),
        };
        code.map_err(|e| PipelineError::Config(format!("code: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashNetConfig {
    /// fc1 width; derived from the code length when absent.
    pub d: Option<usize>,
    /// Hashing width; must equal the code length when given.
    pub k: Option<usize>,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub center_hash_bias: bool,
    pub hash_init_gain: f64,
    pub zero_init_head: bool,
}

impl Default for HashNetConfig {
    fn default() -> Self {
        Self { d: None, k: None, loss_weights: LossWeights::default(), seed: 1, center_hash_bias: true, hash_init_gain: 10.0, zero_init_head: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NndConfig {
    pub iterations: usize,
    pub llr_clamp: f64,
    pub input_mode: InputMode,
}

impl Default for NndConfig {
    fn default() -> Self {
        Self { iterations: nnd::DEFAULT_ITERATIONS, llr_clamp: nnd::DEFAULT_LLR_CLAMP, input_mode: InputMode::Soft }
    }
}

/// Optional decoder pretraining on random codewords over a Gaussian channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelPretrainConfig {
    pub samples: usize,
    pub snr_db: (f64, f64),
    pub seed: u64,
    pub train: NndTrainConfig,
}

impl Default for ChannelPretrainConfig {
    fn default() -> Self {
        Self { samples: 0, snr_db: (2.0, 6.0), seed: 5, train: NndTrainConfig { epochs: 5, ..Default::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainingConfig {
    pub stage1: Stage1Config,
    pub nnd_pretrain: ChannelPretrainConfig,
    pub nnd: NndTrainConfig,
    pub joint: JointTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub subjects: usize,
    pub samples_per_subject: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { subjects: 100, samples_per_subject: 5, seed: 0xbad }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// RFC 3339 timestamp written into templates, or `"now"` for the wall clock.
    pub created_at: String,
    /// Hex salt mixed into every digest; absent in the default mode.
    pub salt_hex: Option<String>,
    pub enroll_mode: EnrollmentMode,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { created_at: EnrollOptions::default().created_at, salt_hex: None, enroll_mode: EnrollmentMode::OneShot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub model_dir: PathBuf,
    pub template_store: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            model_dir: "run/models".into(),
            template_store: "run/templates.ndjson".into(),
            report_dir: "run/reports".into(),
        }
    }
}

impl PathsConfig {
    /// All three locations under one directory.
    pub fn under(root: &Path) -> Self {
        Self {
            model_dir: root.join("models"),
            template_store: root.join("templates.ndjson"),
            report_dir: root.join("reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub code: CodeConfig,
    pub hashnet: HashNetConfig,
    pub nnd: NndConfig,
    pub training: TrainingConfig,
    pub dataset: SyntheticDatasetSpec,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
    pub attack: AttackConfig,
    pub protocol: ProtocolConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            code: CodeConfig::Preset(CodePreset::Bch63_45.name().into()),
            hashnet: HashNetConfig::default(),
            nnd: NndConfig::default(),
            training: TrainingConfig::default(),
            dataset: SyntheticDatasetSpec::default(),
            augment: AugmentConfig::default(),
            eval: EvalConfig::default(),
            attack: AttackConfig::default(),
            protocol: ProtocolConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Sets `dotted.key` in a JSON document. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(PipelineError::Config(format!("override key {key:?} has an empty segment")));
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| PipelineError::Config(format!("override key {key:?} descends into a non-object")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

impl RunConfig {
    /// Parses a config document (or the defaults when `text` is `None`) and
    /// applies `key=value` overrides.
    pub fn load(text: Option<&str>, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut doc: Value = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = path
            .map(|p| fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display()))))
            .transpose()?;
        Self::load(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let code = self.code.build()?;
        if let Some(k) = self.hashnet.k {
            if k != code.n() {
                return Err(PipelineError::Config(format!("hashnet.k = {k} but the code length is {}", code.n())));
            }
        }
        self.hashnet.loss_weights.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.hashnet.hash_init_gain.is_finite() && self.hashnet.hash_init_gain > 0.0) {
            return Err(PipelineError::Config("hashnet.hash_init_gain must be positive and finite".into()));
        }
        self.augment.validate().map_err(|e| PipelineError::Config(format!("augment: {e}")))?;
        if self.nnd.iterations == 0 || !(self.nnd.llr_clamp > 0.0 && self.nnd.llr_clamp.is_finite()) {
            return Err(PipelineError::Config("nnd needs iterations >= 1 and a positive finite llr_clamp".into()));
        }
        if self.protocol.created_at != "now" {
            chrono::DateTime::parse_from_rfc3339(&self.protocol.created_at)
                .map_err(|e| PipelineError::Config(format!("protocol.created_at: {e}")))?;
        }
        if let Some(s) = &self.protocol.salt_hex {
            hex::decode(s).map_err(|e| PipelineError::Config(format!("protocol.salt_hex: {e}")))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn model_path(&self, file: &str) -> PathBuf {
        self.paths.model_dir.join(file)
    }

    fn report_path(&self, file: &str) -> PathBuf {
        self.paths.report_dir.join(file)
    }

    fn dims(&self, code: &BchCode) -> Dims {
        let n = code.n();
        Dims {
            d_in: self.dataset.d_in,
            d: self.hashnet.d.unwrap_or_else(|| Dims::fc1_width_for(n)),
            k: n,
            m: self.splits_dh_count(),
        }
    }

    fn splits_dh_count(&self) -> usize {
        crate::eval::synth::SubjectSplits::proportional(self.dataset.subjects).map_or(0, |s| s.dh_train.len())
    }

    fn enroll_options(&self, reenroll: bool) -> EnrollOptions {
        let created_at = if self.protocol.created_at == "now" {
            chrono::Utc::now().to_rfc3339()
        } else {
            self.protocol.created_at.clone()
        };
        EnrollOptions {
            salt: self.protocol.salt_hex.as_ref().map(|s| hex::decode(s).expect("validated")),
            reenroll,
            created_at,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_file(path, &(serde_json::to_string_pretty(value).map_err(runtime)? + "\n"))
}

fn read_artifact(path: &Path, what: &'static str, hint: &'static str) -> Result<String, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing { what, path: path.to_path_buf(), hint });
    }
    fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Training losses of each stage, accumulated across commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub stage1: Option<Stage1History>,
    pub nnd_pretrain: Option<TrainHistory>,
    pub nnd: Option<TrainHistory>,
    pub joint: Option<TrainHistory>,
}

fn update_log(cfg: &RunConfig, f: impl FnOnce(&mut TrainingLog)) -> Result<(), PipelineError> {
    let path = cfg.report_path(TRAINING_LOG_FILE);
    let mut log: TrainingLog = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(runtime)?,
        Err(_) => TrainingLog::default(),
    };
    f(&mut log);
    write_json(&path, &log)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let text = read_artifact(&cfg.model_path(DATASET_FILE), "dataset", "synth")?;
    let d = Dataset::from_json(&text).map_err(runtime)?;
    if d.spec != cfg.dataset {
        return Err(PipelineError::Config("dataset on disk was generated from a different dataset config".into()));
    }
    Ok(d)
}

pub fn load_dh(cfg: &RunConfig) -> Result<HashNetModel, PipelineError> {
    let text = read_artifact(&cfg.model_path(DH_MODEL_FILE), "Stage-1 hashing model", "train-dh")?;
    Ok(HashNetModel::from_json(&text).map_err(runtime)?.0)
}

pub fn load_ground_truth(cfg: &RunConfig) -> Result<Vec<GroundTruth>, PipelineError> {
    let text = read_artifact(&cfg.model_path(GROUND_TRUTH_FILE), "Stage-2 ground truth", "gen-gt")?;
    serde_json::from_str(&text).map_err(runtime)
}

pub fn load_nnd(cfg: &RunConfig) -> Result<NndModel, PipelineError> {
    let text = read_artifact(&cfg.model_path(NND_MODEL_FILE), "trained decoder", "train-nnd")?;
    NndModel::from_json(&text).map_err(runtime)
}

pub fn load_joint(cfg: &RunConfig) -> Result<JointModel, PipelineError> {
    let text = read_artifact(&cfg.model_path(JOINT_MODEL_FILE), "fine-tuned joint model", "finetune")?;
    JointModel::from_json(&text).map_err(runtime)
}

pub fn load_store(cfg: &RunConfig) -> Result<TemplateStore, PipelineError> {
    if !cfg.paths.template_store.exists() {
        return Err(PipelineError::Missing { what: "template store", path: cfg.paths.template_store.clone(), hint: "enroll" });
    }
    TemplateStore::open(&cfg.paths.template_store).map_err(runtime)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let d = synth_generate(&cfg.dataset).map_err(|e| match e {
        crate::eval::synth::SynthError::Spec(s) => PipelineError::Config(s),
        other => runtime(other),
    })?;
    write_file(&cfg.model_path(DATASET_FILE), &d.to_json().map_err(runtime)?)?;
    Ok(d)
}

/// Gallery samples of the DH-training subjects, labelled by split position.
pub fn stage1_batch(dataset: &Dataset) -> Result<TrainBatch, PipelineError> {
    let ids = &dataset.splits.dh_train;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (label, &i) in ids.iter().enumerate() {
        for x in dataset.subject(i).gallery() {
            rows.extend_from_slice(x);
            labels.push(label);
        }
    }
    let inputs = Array2::from_shape_vec((labels.len(), dataset.spec.d_in), rows).map_err(runtime)?;
    TrainBatch::new(inputs, labels, ids.len()).map_err(runtime)
}

/// Applies the configured hashing-layer gain, bias centring and head reset.
pub fn prepare_stage1(model: &mut HashNetModel, batch: &TrainBatch, cfg: &HashNetConfig) -> Result<(), PipelineError> {
    model.scale_hash_layer(cfg.hash_init_gain);
    if cfg.center_hash_bias {
        model.center_hash_bias(batch).map_err(runtime)?;
    }
    if cfg.zero_init_head {
        model.zero_head();
    }
    Ok(())
}

pub fn cmd_train_dh(cfg: &RunConfig) -> Result<(HashNetModel, Stage1History), PipelineError> {
    let dataset = load_dataset(cfg)?;
    let code = cfg.code.build()?;
    let batch = stage1_batch(&dataset)?;
    let mut model = HashNetModel::new(cfg.dims(&code), cfg.hashnet.seed);
    prepare_stage1(&mut model, &batch, &cfg.hashnet)?;
    let lw = cfg.hashnet.loss_weights;
    let history = train_stage1(&mut model, &batch, &lw, &cfg.training.stage1).map_err(runtime)?;
    write_file(&cfg.model_path(DH_MODEL_FILE), &(model.to_json(lw).map_err(runtime)? + "\n"))?;
    update_log(cfg, |log| log.stage1 = Some(history.clone()))?;
    Ok((model, history))
}

fn nnd_subject_samples(dataset: &Dataset) -> Vec<(String, Vec<Array1<f64>>)> {
    dataset
        .splits
        .nnd_train
        .iter()
        .map(|&i| {
            let s = dataset.subject(i);
            (s.id.clone(), to_arrays(&s.samples))
        })
        .collect()
}

pub fn cmd_gen_gt(cfg: &RunConfig) -> Result<Vec<GroundTruth>, PipelineError> {
    let dataset = load_dataset(cfg)?;
    let dh = load_dh(cfg)?;
    let code = cfg.code.build()?;
    let gt = stage2_ground_truth(&dh, &code, &nnd_subject_samples(&dataset)).map_err(runtime)?;
    write_json(&cfg.model_path(GROUND_TRUTH_FILE), &gt)?;
    Ok(gt)
}

type InputTarget = (Array1<f64>, Vec<bool>);

fn ground_truth_pairs(dataset: &Dataset, gt: &[GroundTruth]) -> Result<Vec<InputTarget>, PipelineError> {
    let mut pairs = Vec::new();
    for (id, samples) in nnd_subject_samples(dataset) {
        let entry = gt
            .iter()
            .find(|g| g.subject_id == id)
            .ok_or_else(|| PipelineError::Config(format!("ground truth has no entry for {id}")))?;
        pairs.extend(samples.into_iter().map(|x| (x, entry.codeword.clone())));
    }
    Ok(pairs)
}

pub fn cmd_train_nnd(cfg: &RunConfig) -> Result<NndModel, PipelineError> {
    let dataset = load_dataset(cfg)?;
    let dh = load_dh(cfg)?;
    let gt = load_ground_truth(cfg)?;
    let code = cfg.code.build()?;
    let mut model = NndModel::for_code(&code, cfg.nnd.iterations, cfg.nnd.llr_clamp).map_err(runtime)?;
    let pre = &cfg.training.nnd_pretrain;
    let mut pretrain_history = None;
    if pre.samples > 0 {
        let data = nnd::awgn_dataset(&code, pre.samples, pre.snr_db, pre.seed).map_err(runtime)?;
        pretrain_history = Some(nnd::train(&mut model, &data, &pre.train).map_err(runtime)?);
    }
    let data: Vec<NndSample> = ground_truth_pairs(&dataset, &gt)?
        .into_iter()
        .map(|(x, target)| Ok(NndSample { soft: dh.hash(x.view()).map_err(runtime)?.to_vec(), target }))
        .collect::<Result<_, PipelineError>>()?;
    let train_cfg = NndTrainConfig { input_mode: cfg.nnd.input_mode, ..cfg.training.nnd };
    let history = nnd::train(&mut model, &data, &train_cfg).map_err(runtime)?;
    write_file(&cfg.model_path(NND_MODEL_FILE), &(model.to_json().map_err(runtime)? + "\n"))?;
    update_log(cfg, |log| {
        log.nnd_pretrain = pretrain_history;
        log.nnd = Some(history);
    })?;
    Ok(model)
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<JointModel, PipelineError> {
    let dataset = load_dataset(cfg)?;
    let dh = load_dh(cfg)?;
    let nnd = load_nnd(cfg)?;
    let gt = load_ground_truth(cfg)?;
    let mut joint = integrate(dh, nnd, cfg.nnd.input_mode).map_err(runtime)?;
    let data: Vec<JointSample> = ground_truth_pairs(&dataset, &gt)?
        .into_iter()
        .map(|(x, target)| JointSample { input: x.to_vec(), target })
        .collect();
    let history = train_joint(&mut joint, &data, &cfg.training.joint).map_err(runtime)?;
    let json = joint.to_json(cfg.hashnet.loss_weights).map_err(runtime)?;
    write_file(&cfg.model_path(JOINT_MODEL_FILE), &(json + "\n"))?;
    update_log(cfg, |log| log.joint = Some(history))?;
    Ok(joint)
}

/// Resolves a subject given by index or id.
pub fn find_subject(dataset: &Dataset, key: &str) -> Result<usize, PipelineError> {
    if let Ok(i) = key.parse::<usize>() {
        if i < dataset.subjects.len() {
            return Ok(i);
        }
    }
    dataset
        .subjects
        .iter()
        .position(|s| s.id == key)
        .ok_or_else(|| PipelineError::Config(format!("unknown subject {key:?}")))
}

/// Enrolls the subjects of the configured mode, or just `subject` when given.
pub fn cmd_enroll(cfg: &RunConfig, subject: Option<&str>, reenroll: bool) -> Result<usize, PipelineError> {
    let dataset = load_dataset(cfg)?;
    let joint = load_joint(cfg)?;
    let mut store = TemplateStore::open(&cfg.paths.template_store).map_err(runtime)?;
    let mut plan = enrollment_plan(&dataset, cfg.protocol.enroll_mode, &cfg.eval);
    if let Some(key) = subject {
        let idx = find_subject(&dataset, key)?;
        plan = vec![(idx, to_arrays(&dataset.subject(idx).gallery()[..1]))];
    }
    let opts = cfg.enroll_options(reenroll);
    for (i, samples) in &plan {
        enroll(samples, &joint, &mut store, &dataset.subject(*i).id, &opts).map_err(|e| match e {
            crate::protocol::ProtocolError::Conflict(_) => PipelineError::Config(format!("{e}; pass --reenroll to replace it")),
            other => runtime(other),
        })?;
    }
    Ok(plan.len())
}

/// Authenticates one sample of `subject` against the template of `claim`.
pub fn cmd_auth(cfg: &RunConfig, subject: &str, sample: usize, claim: Option<&str>) -> Result<MatchResult, PipelineError> {
    let dataset = load_dataset(cfg)?;
    let joint = load_joint(cfg)?;
    let store = load_store(cfg)?;
    let idx = find_subject(&dataset, subject)?;
    let claimed = match claim {
        Some(c) => dataset.subject(find_subject(&dataset, c)?).id.clone(),
        None => dataset.subject(idx).id.clone(),
    };
    let template = store
        .get(&claimed)
        .ok_or_else(|| PipelineError::Config(format!("subject {claimed:?} is not enrolled")))?;
    let x = dataset
        .subject(idx)
        .samples
        .get(sample)
        .ok_or_else(|| PipelineError::Config(format!("sample {sample} out of range")))?;
    authenticate(Array1::from(x.clone()).view(), &cfg.augment, &joint, template, cfg.eval.threshold).map_err(runtime)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullEvalReport {
    pub format_version: u32,
    pub code: String,
    pub augmentations_per_probe: usize,
    pub modes: Vec<EvalReport>,
    pub variants: Vec<EvalReport>,
    pub variant_eers: Vec<VariantEer>,
    pub brute_force: BruteForce,
}

impl FullEvalReport {
    pub fn mode(&self, mode: EnrollmentMode) -> Option<&EvalReport> {
        self.modes.iter().find(|r| r.enrollment_mode == mode)
    }

    pub fn variant_eer(&self, variant: &str) -> Option<f64> {
        self.variant_eers.iter().find(|v| v.variant == variant).map(|v| v.eer)
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<FullEvalReport, PipelineError> {
    let joint = load_joint(cfg)?;
    let dh = load_dh(cfg)?;
    let dataset = load_dataset(cfg)?;
    let code = cfg.code.build()?;
    let modes = evaluate_modes(&joint, crate::eval::VARIANT_NND, &dataset, &EnrollmentMode::ALL, &cfg.eval, &cfg.augment)
        .map_err(runtime)?;
    let variants = variant_compare(&dh, &code, &joint, &dataset, EnrollmentMode::OneShot, &cfg.eval, &cfg.augment)
        .map_err(runtime)?;
    let report = FullEvalReport {
        format_version: FORMAT_VERSION,
        code: code.label(),
        augmentations_per_probe: cfg.augment.count(),
        variant_eers: variants.iter().map(|r| VariantEer { variant: r.variant.clone(), eer: r.eer }).collect(),
        modes,
        variants,
        brute_force: brute_force_accounting(code.n()),
    };
    write_json(&cfg.report_path(EVAL_REPORT_FILE), &report)?;
    for r in report.modes.iter().chain(&report.variants) {
        let name = format!("roc_{}_{}.csv", r.variant.replace('+', "_").replace('-', "minus"), r.enrollment_mode.name());
        write_file(&cfg.report_path(&name), &roc_csv(&r.roc))?;
    }
    Ok(report)
}

/// Attacker feature vectors from an independent synthetic population.
pub fn attacker_samples(cfg: &RunConfig) -> Result<Vec<Array1<f64>>, PipelineError> {
    let spec = SyntheticDatasetSpec {
        subjects: cfg.attack.subjects.max(3),
        samples_per_subject: cfg.attack.samples_per_subject.max(2),
        seed: cfg.attack.seed,
        ..cfg.dataset.clone()
    };
    let d = synth_generate(&spec).map_err(runtime)?;
    Ok(d.subjects.iter().take(cfg.attack.subjects).flat_map(|s| to_arrays(&s.samples[..cfg.attack.samples_per_subject])).collect())
}

pub fn cmd_attack(cfg: &RunConfig) -> Result<AttackReport, PipelineError> {
    let joint = load_joint(cfg)?;
    let store = load_store(cfg)?;
    let attacker = if cfg.attack.subjects == 0 { Vec::new() } else { attacker_samples(cfg)? };
    let report = dictionary_attack(&joint, &store, &attacker, &cfg.augment, cfg.eval.threshold).map_err(runtime)?;
    write_json(&cfg.report_path(ATTACK_REPORT_FILE), &report)?;
    Ok(report)
}

/// Exhaustive BCH(15,7) check over every message and every error pattern of
/// weight at most 2. Returns (patterns, minimum corrected per message, messages).
pub fn cmd_bch_check() -> Result<(usize, usize, usize), PipelineError> {
    let code = CodePreset::Bch15_7.build().map_err(runtime)?;
    let n = code.n();
    let mut patterns: Vec<Vec<bool>> = vec![vec![false; n]];
    for i in 0..n {
        let mut e = vec![false; n];
        e[i] = true;
        patterns.push(e.clone());
        for j in i + 1..n {
            let mut e2 = e.clone();
            e2[j] = true;
            patterns.push(e2);
        }
    }
    let messages = 1usize << code.k();
    let mut worst = patterns.len();
    for m in 0..messages {
        let msg: Vec<bool> = (0..code.k()).map(|b| (m >> b) & 1 == 1).collect();
        let cw = code.encode(&msg).map_err(runtime)?;
        let ok = patterns
            .iter()
            .filter(|e| {
                let word: Vec<bool> = cw.bits().iter().zip(e.iter()).map(|(a, b)| a ^ b).collect();
                code.decode(&word).is_ok_and(|d| d.success && d.message == msg)
            })
            .count();
        worst = worst.min(ok);
    }
    Ok((patterns.len(), worst, messages))
}

/// Outputs of a full replay: synth, three training stages, enrollment,
/// evaluation and the dictionary attack.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub stage1: Stage1History,
    pub ground_truth: Vec<GroundTruth>,
    pub eval: FullEvalReport,
    pub attack: AttackReport,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    cmd_synth(cfg)?;
    let (_, stage1) = cmd_train_dh(cfg)?;
    let ground_truth = cmd_gen_gt(cfg)?;
    cmd_train_nnd(cfg)?;
    cmd_finetune(cfg)?;
    cmd_enroll(cfg, None, true)?;
    let eval = cmd_eval(cfg)?;
    let attack = cmd_attack(cfg)?;
    Ok(PipelineOutcome { stage1, ground_truth, eval, attack })
}

/// Per-bit mean hashing activation over the Stage-1 training inputs.
pub fn hash_bit_means(dh: &HashNetModel, batch: &TrainBatch) -> Result<Vec<f64>, PipelineError> {
    let fwd = dh.forward_batch(&batch.inputs).map_err(runtime)?;
    Ok(fwd.hash.mean_axis(ndarray::Axis(0)).expect("nonempty batch").to_vec())
}

/// Version line printed by the command-line tool.
pub fn version_string() -> String {
    format!(
        "{} (pipeline format {FORMAT_VERSION}, hashnet {}, nnd {}, dataset {})",
        env!("CARGO_PKG_VERSION"),
        crate::hashnet::FORMAT_VERSION,
        nnd::FORMAT_VERSION,
        crate::eval::synth::FORMAT_VERSION
    )
}
