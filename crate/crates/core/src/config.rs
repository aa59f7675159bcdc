//! Run configuration: one JSON document with a section per stage.
//!
//! Every field has a default, unknown keys are rejected, and `--set
//! key.path=value` overrides are applied to the JSON tree before parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{DenoiserConfig, DenoiserTraining, FeatureProbe, NoiseSchedule, ENCODER_MID_BLOCK};
use crate::error::{DgirError, Result};
use crate::evaluation::SweepAxis;
use crate::losses::LossConfig;
use crate::registration::{RegNetConfig, RegTraining};
use crate::synth::{CorpusSpec, FieldParams, StructureSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub shape: Vec<usize>,
    pub train: usize,
    pub test: usize,
    pub structure: StructureSpec,
    pub field: FieldParams,
}

impl Default for DataSection {
    fn default() -> Self {
        let c = CorpusSpec::default_2d();
        DataSection { shape: c.shape, train: c.train, test: c.test, structure: c.structure, field: c.field }
    }
}

impl DataSection {
    pub fn corpus_spec(&self, seed: u64) -> CorpusSpec {
        CorpusSpec {
            shape: self.shape.clone(),
            train: self.train,
            test: self.test,
            seed,
            structure: self.structure.clone(),
            field: self.field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub architecture: DenoiserConfig,
    pub schedule: ScheduleSection,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Slice stride used to draw 2D training images from volumes.
    pub slice_stride: usize,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let t = DenoiserTraining::default();
        DiffusionSection {
            architecture: DenoiserConfig::default(),
            schedule: ScheduleSection::default(),
            steps: t.steps,
            lr: t.lr,
            batch: t.batch,
            slice_stride: 4,
        }
    }
}

impl DiffusionSection {
    pub fn training(&self, seed: u64) -> DenoiserTraining {
        DenoiserTraining { steps: self.steps, lr: self.lr, batch: self.batch, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationSection {
    /// Defaults to the layout for the corpus dimensionality.
    pub architecture: Option<RegNetConfig>,
    pub loss: LossConfig,
    pub steps: usize,
    pub lr: f64,
    /// Defaults to 4 pairs for images and 1 for volumes.
    pub batch: Option<usize>,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        let t = RegTraining::default();
        RegistrationSection { architecture: None, loss: LossConfig::default(), steps: t.steps, lr: t.lr, batch: None }
    }
}

impl RegistrationSection {
    pub fn net_config(&self, dims: usize) -> RegNetConfig {
        self.architecture.clone().unwrap_or_else(|| RegNetConfig::for_dims(dims))
    }

    pub fn training(&self, dims: usize, seed: u64) -> RegTraining {
        let batch = self.batch.unwrap_or(if dims == 3 { 1 } else { 4 });
        RegTraining { steps: self.steps, lr: self.lr, batch, seed }
    }

    /// The loss with the 3D default probe applied when the probe was left
    /// at its 2D default.
    pub fn loss_for(&self, dims: usize) -> LossConfig {
        let mut loss = self.loss;
        if dims == 3 && loss.probe == LossConfig::default().probe {
            loss.probe = FeatureProbe { block: ENCODER_MID_BLOCK, ..loss.probe };
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSection {
    /// Test pair used for the rendered heatmaps.
    pub sample: usize,
    /// Test pairs used for keypoint matching.
    pub pairs: usize,
    pub keypoints_per_pair: usize,
    /// Intensity patch extent.
    pub patch: usize,
    /// Feature window of the windowed matching variant.
    pub window: usize,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        HeatmapSection { sample: 0, pairs: 10, keypoints_per_pair: 5, patch: 9, window: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub axis: SweepAxis,
    /// Block for timestep sweeps, timestep for block sweeps.
    pub fixed_value: usize,
    pub values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub steps: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            axis: SweepAxis::Timestep,
            fixed_value: crate::diffusion::DECODER_MID_BLOCK,
            values: vec![1, 50, 500],
            seeds: vec![0, 1],
            steps: 1500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub registration: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub diffusion: DiffusionSection,
    pub registration: RegistrationSection,
    pub heatmap: HeatmapSection,
    pub ablation: AblationSection,
    pub paths: PathsSection,
}

fn config_err(key: impl Into<String>, detail: impl Into<String>) -> DgirError {
    DgirError::Config { key: key.into(), detail: detail.into() }
}

/// Sets `path` (dot separated) in a JSON tree, creating objects as needed.
/// The value is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(assignment, "overrides take the form key.path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(path, "empty key segment"));
    }
    for (i, key) in keys.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(config_err(keys[..i].join("."), "is not an object"));
            }
        }
        let map = node.as_object_mut().expect("object checked above");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

impl RunConfig {
    /// Parses a JSON tree, reporting the dotted path of the first bad key.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            config_err(path, inner)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies overrides and the `DGIR_SEED` environment
    /// variable.
    pub fn load(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        if !path.exists() {
            return Err(DgirError::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| DgirError::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| config_err("<document>", e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if let Some(s) = env_seed {
            let seed: u64 = s.trim().parse().map_err(|_| config_err("DGIR_SEED", format!("not an integer: {s}")))?;
            apply_override(&mut value, &format!("seed={seed}"))?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.data.shape.len();
        if !(2..=3).contains(&dims) || self.data.shape.iter().any(|&n| n < 32 || n % 8 != 0) {
            return Err(config_err("data.shape", "needs 2 or 3 extents, each >= 32 and a multiple of 8"));
        }
        self.diffusion.architecture.validate().map_err(|e| config_err("diffusion.architecture", e.to_string()))?;
        if self.diffusion.architecture.spatial_dims != 2 {
            return Err(config_err("diffusion.architecture.spatial_dims", "the feature denoiser works on 2D images and slices"));
        }
        self.diffusion.schedule.build().map_err(|e| config_err("diffusion.schedule", e.to_string()))?;
        if self.diffusion.batch == 0 || self.diffusion.slice_stride == 0 {
            return Err(config_err("diffusion.batch", "batch and slice_stride must be positive"));
        }
        let loss = self.registration.loss_for(dims);
        loss.validate().map_err(|e| config_err("registration.loss", e.to_string()))?;
        let sched = self.diffusion.schedule.build()?;
        loss.probe.validate(&sched).map_err(|e| config_err("registration.loss.probe", e.to_string()))?;
        if self.registration.net_config(dims).spatial_dims != dims {
            return Err(config_err("registration.architecture.spatial_dims", "must match data.shape"));
        }
        if self.registration.batch == Some(0) {
            return Err(config_err("registration.batch", "must be positive"));
        }
        if self.heatmap.patch.is_multiple_of(2) || self.heatmap.window.is_multiple_of(2) || self.heatmap.window < 3 {
            return Err(config_err("heatmap.patch", "patch and window must be odd, window >= 3"));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}
