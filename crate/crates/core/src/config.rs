//! Run configuration: one JSON document describing data, model, training
//! and attack, validated against a strict schema (unknown keys rejected,
//! schema version mandatory) with defaults filled in.
//!
//! The fully resolved configuration serializes deterministically, so echoing
//! it into the run log is enough to reproduce a run byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{ApgdParams, AttackKind, AttackSpec};
use crate::data::{load_idx, synth_blobs_split, Dataset};
use crate::error::{Error, Result};
use crate::losses::{DiversityKind, LossKind};
use crate::model::Classifier;
use crate::rng::Rng;
use crate::schedule::{LrSchedule, ScheduleKind};
use crate::training::{TrainMethod, TrainSpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian blobs around fixed per-class centers; train and test share
    /// the centers. `quantize` snaps inputs to the u8 grid the IDX format
    /// can represent.
    SynthBlobs {
        #[serde(default = "d_train_per_class")]
        train_per_class: usize,
        #[serde(default = "d_test_per_class")]
        test_per_class: usize,
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_dim")]
        dim: usize,
        #[serde(default = "d_spread")]
        spread: f64,
        #[serde(default)]
        quantize: bool,
    },
    /// MNIST-layout IDX file pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
}

fn d_train_per_class() -> usize {
    200
}
fn d_test_per_class() -> usize {
    100
}
fn d_classes() -> usize {
    10
}
fn d_dim() -> usize {
    784
}
fn d_spread() -> f64 {
    0.3
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::SynthBlobs {
            train_per_class: d_train_per_class(),
            test_per_class: d_test_per_class(),
            classes: d_classes(),
            dim: d_dim(),
            spread: d_spread(),
            quantize: false,
        }
    }
}

impl DataConfig {
    /// Loads or synthesizes the (train, test) pair.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataConfig::SynthBlobs { train_per_class, test_per_class, classes, dim, spread, quantize } => {
                let (train, test) =
                    synth_blobs_split(seed, *train_per_class, *test_per_class, *classes, *dim, *spread)?;
                if *quantize {
                    Ok((train.quantized_u8(), test.quantized_u8()))
                } else {
                    Ok((train, test))
                }
            }
            DataConfig::Idx { train_images, train_labels, test_images, test_labels, limit_train, limit_test } => {
                let train = load_idx(train_images, train_labels, *limit_train)?;
                let test = load_idx(test_images, test_labels, *limit_test)?;
                Ok((train, test))
            }
        }
    }

    /// Loads only the evaluation split (checkpoint-consuming commands).
    pub fn load_test(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataConfig::SynthBlobs { .. } => Ok(self.load(seed)?.1),
            DataConfig::Idx { test_images, test_labels, limit_test, .. } => {
                load_idx(test_images, test_labels, *limit_test)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    #[default]
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchKind,
    /// MLP hidden widths; the last entry is the feature layer.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Drop every hidden activation instead of only the feature layer.
    pub global_dropout: bool,
    /// CNN: conv filter counts.
    pub filters: (usize, usize),
    pub kernel: usize,
    pub stride: usize,
    /// CNN: dense feature width.
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: ArchKind::Mlp,
            hidden: vec![256, 128],
            dropout: 0.5,
            global_dropout: false,
            filters: (8, 16),
            kernel: 3,
            stride: 2,
            feature_dim: 128,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, input_dim: usize, classes: usize, rng: &mut Rng) -> Result<Classifier> {
        match self.arch {
            ArchKind::Mlp => {
                Classifier::mlp(input_dim, &self.hidden, classes, self.dropout, self.global_dropout, rng)
            }
            ArchKind::Cnn => {
                let side = (input_dim as f64).sqrt().round() as usize;
                if side * side != input_dim {
                    return Err(Error::Config(format!(
                        "cnn arch needs a square input, got dim {input_dim}"
                    )));
                }
                Classifier::small_cnn(
                    side,
                    classes,
                    self.filters,
                    self.kernel,
                    self.stride,
                    self.feature_dim,
                    self.dropout,
                    rng,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub schedule: ScheduleKind,
    /// Multistep initial rate / Cyclic peak.
    pub lr: f64,
    pub min_lr: f64,
    pub milestones: Vec<f64>,
    pub factor: f64,
    pub warmup: bool,
    /// Warmup horizon; `null` means a tenth of the epochs.
    pub warmup_epochs: Option<usize>,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Multistep,
            lr: 0.01,
            min_lr: 0.0,
            milestones: vec![0.5, 0.75],
            factor: 0.1,
            warmup: false,
            warmup_epochs: None,
        }
    }
}

impl LrConfig {
    pub fn build(&self, epochs: usize) -> LrSchedule {
        let mut schedule = match self.schedule {
            ScheduleKind::Multistep => {
                LrSchedule::multistep(self.lr, epochs, self.milestones.clone(), self.factor)
            }
            ScheduleKind::Cyclic => LrSchedule::cyclic(self.min_lr, self.lr, epochs),
        };
        if self.warmup {
            let horizon = self.warmup_epochs.unwrap_or_else(|| (epochs / 10).max(1));
            schedule = schedule.with_warmup(horizon);
        }
        schedule
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub gamma: f64,
    pub beta: f64,
    pub k: usize,
    pub rho: f64,
    pub eta: f64,
    pub diversity: DiversityKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub inner_steps: usize,
    pub inner_alpha: Option<f64>,
    pub inner_random_start: bool,
    pub fast_alpha: Option<f64>,
    pub replays: usize,
    pub free_alpha: Option<f64>,
    pub trades_noise_sigma: f64,
    pub robust_eval_examples: usize,
    pub lr: LrConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let spec = TrainSpec::default();
        Self {
            method: spec.method,
            gamma: spec.gamma,
            beta: spec.beta,
            k: spec.k,
            rho: spec.rho,
            eta: spec.eta,
            diversity: spec.diversity,
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            momentum: spec.momentum,
            weight_decay: spec.weight_decay,
            epsilon: spec.epsilon,
            inner_steps: spec.inner_steps,
            inner_alpha: spec.inner_alpha,
            inner_random_start: spec.inner_random_start,
            fast_alpha: spec.fast_alpha,
            replays: spec.replays,
            free_alpha: spec.free_alpha,
            trades_noise_sigma: spec.trades_noise_sigma,
            robust_eval_examples: spec.robust_eval_examples,
            lr: LrConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn build(&self, seed: u64, log_timing: bool) -> TrainSpec {
        TrainSpec {
            method: self.method,
            gamma: self.gamma,
            beta: self.beta,
            k: self.k,
            rho: self.rho,
            eta: self.eta,
            diversity: self.diversity,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
            schedule: self.lr.build(self.epochs),
            epsilon: self.epsilon,
            inner_steps: self.inner_steps,
            inner_alpha: self.inner_alpha,
            inner_random_start: self.inner_random_start,
            fast_alpha: self.fast_alpha,
            replays: self.replays,
            free_alpha: self.free_alpha,
            trades_noise_sigma: self.trades_noise_sigma,
            log_timing,
            robust_eval_examples: self.robust_eval_examples,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// `null` means ε/4 (FGSM steps by ε regardless).
    pub alpha: Option<f64>,
    pub steps: usize,
    pub loss: LossKind,
    pub gamma: f64,
    pub momentum_decay: f64,
    pub random_start: bool,
    /// Run the full kind × loss grid instead of a single attack.
    pub grid: bool,
    pub apgd: ApgdParams,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon: 0.1,
            alpha: None,
            steps: 20,
            loss: LossKind::Ce,
            gamma: 5.0,
            momentum_decay: 1.0,
            random_start: true,
            grid: false,
            apgd: ApgdParams::default(),
        }
    }
}

impl AttackConfig {
    pub fn build(&self) -> AttackSpec {
        let mut spec = AttackSpec::new(self.kind, self.epsilon);
        spec.alpha = self.alpha.unwrap_or(self.epsilon / 4.0);
        spec.steps = if self.kind == AttackKind::Fgsm { 1 } else { self.steps };
        spec.loss = self.loss;
        spec.gamma = self.gamma;
        spec.momentum_decay = self.momentum_decay;
        spec.random_start = self.random_start;
        spec.apgd = self.apgd;
        spec
    }
}

/// The complete, versioned run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Schema version; mandatory.
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Record real wall-clock in history (costs byte-reproducibility).
    #[serde(default)]
    pub log_timing: bool,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            log_timing: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Semantic checks past the schema: value ranges and combinations.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.train.gamma < 0.0 {
            return Err(Error::Config(format!("train.gamma must be >= 0, got {}", self.train.gamma)));
        }
        if !(self.train.eta > 0.0 && self.train.eta <= 100.0) {
            return Err(Error::Config(format!("train.eta {} outside (0, 100]", self.train.eta)));
        }
        if self.train.rho < 0.0 {
            return Err(Error::Config(format!("train.rho must be >= 0, got {}", self.train.rho)));
        }
        if self.train.beta < 0.0 {
            return Err(Error::Config(format!("train.beta must be >= 0, got {}", self.train.beta)));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!("model.dropout {} outside [0,1)", self.model.dropout)));
        }
        if self.attack.gamma < 0.0 {
            return Err(Error::Config(format!(
                "attack.gamma must be >= 0, got {}",
                self.attack.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.attack.epsilon) {
            return Err(Error::Config(format!(
                "attack.epsilon {} outside [0,1]",
                self.attack.epsilon
            )));
        }
        Ok(())
    }

    /// The fully resolved configuration as deterministic pretty JSON; the
    /// echo written into every run log.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads, override-patches and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_with_overrides(path, &[])
}

/// Same, applying `key.path=value` overrides before the typed parse so they
/// face exactly the same schema validation.
pub fn parse_config_with_overrides(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    let cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("config parse: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `dotted.path=value` override onto the raw JSON document.
/// Values parse as JSON when possible, falling back to a plain string.
pub fn apply_override(doc: &mut serde_json::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{entry}' is not key=value")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::Config(format!("override '{entry}' has an empty key segment")));
        }
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{seg}' is not an object")))?;
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), parsed);
            return Ok(());
        }
        cursor = obj.entry(seg.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.json");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"version": 1}"#);
        let cfg = parse_config(&path).unwrap();
        assert_eq!(cfg.train.k, 4);
        assert_eq!(cfg.train.rho, 1.0);
        assert_eq!(cfg.model.dropout, 0.5);
        assert_eq!(cfg.train.eta, 100.0);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn version_field_is_mandatory() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"seed": 3}"#);
        let err = parse_config(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn negative_gamma_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"version": 1, "train": {"gamma": -1.0}}"#);
        let err = parse_config(&path).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn eta_zero_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"version": 1, "train": {"eta": 0.0}}"#);
        let err = parse_config(&path).unwrap_err();
        assert!(err.to_string().contains("eta"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"version": 1, "train": {"gamme": 2.0}}"#);
        let err = parse_config(&path).unwrap_err();
        assert!(err.to_string().contains("gamme"), "{err}");
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"version": 1}"#);
        let cfg = parse_config_with_overrides(
            &path,
            &["train.gamma=3.0".into(), "seed=9".into(), "train.method=\"madry_at\"".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.gamma, 3.0);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.method, TrainMethod::MadryAt);
    }

    #[test]
    fn overrides_face_schema_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), r#"{"version": 1}"#);
        let err = parse_config_with_overrides(&path, &["train.nope=1".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn resolved_json_is_deterministic_and_reparses() {
        let cfg = RunConfig::default();
        let a = cfg.resolved_json();
        let b = cfg.resolved_json();
        assert_eq!(a, b);
        let back = RunConfig::from_json(&a).unwrap();
        assert_eq!(back.resolved_json(), a);
    }

    #[test]
    fn blob_config_loads_split_with_shared_problem() {
        let cfg = RunConfig {
            data: DataConfig::SynthBlobs {
                train_per_class: 5,
                test_per_class: 3,
                classes: 4,
                dim: 6,
                spread: 0.0,
                quantize: false,
            },
            ..RunConfig::default()
        };
        let (train, test) = cfg.data.load(11).unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 12);
        // spread 0: test points sit exactly on train centers
        assert_eq!(train.input_row(0), test.input_row(0));
    }

    #[test]
    fn lr_config_builds_warmup_default_horizon() {
        let lr = LrConfig { warmup: true, ..LrConfig::default() };
        let schedule = lr.build(50);
        assert_eq!(schedule.warmup_epochs, 5);
        assert_eq!(schedule.warmup_factor(0), 0.001);
    }
}
