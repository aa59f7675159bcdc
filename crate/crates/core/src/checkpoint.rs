//! Checkpoint directories: one tensor file per named parameter under
//! `params/`, plus `manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;

use dgir_tensor::nn::{load_params, named_params};
use dgir_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{BlockInfo, Denoiser, DenoiserConfig, NoiseSchedule};
use crate::error::{DgirError, Result};
use crate::io::{read_json, read_tensor, write_json, write_tensor};
use crate::registration::{HistoryEntry, RegNetConfig, RegistrationNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserManifest {
    pub kind: String,
    pub architecture: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub seed: u64,
    pub layout: Vec<BlockInfo>,
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationManifest {
    pub kind: String,
    pub architecture: RegNetConfig,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<String>,
}

fn save_params(dir: &Path, params: &BTreeMap<String, Tensor<f32>>) -> Result<Vec<String>> {
    for (name, t) in params {
        write_tensor(&dir.join("params").join(name), t)?;
    }
    Ok(params.keys().cloned().collect())
}

fn load_named(dir: &Path, names: &[String]) -> Result<BTreeMap<String, Tensor<f32>>> {
    names.iter().map(|n| Ok((n.clone(), read_tensor::<f32>(&dir.join("params").join(n))?))).collect()
}

fn missing(dir: &Path) -> Result<()> {
    if !dir.join("manifest.json").exists() {
        return Err(DgirError::MissingArtifact(dir.join("manifest.json")));
    }
    Ok(())
}

pub fn save_denoiser(dir: &Path, net: &Denoiser<f32>, schedule: &NoiseSchedule, step: u64, seed: u64) -> Result<()> {
    let params = save_params(dir, &named_params(net))?;
    let manifest = DenoiserManifest {
        kind: "denoiser".into(),
        architecture: net.config().clone(),
        schedule: schedule.clone(),
        step,
        seed,
        layout: net.layout(),
        params,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_denoiser(dir: &Path) -> Result<(Denoiser<f32>, DenoiserManifest)> {
    missing(dir)?;
    let manifest: DenoiserManifest = read_json(&dir.join("manifest.json"))?;
    let mut net = Denoiser::new(manifest.architecture.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(&mut net, &load_named(dir, &manifest.params)?)?;
    Ok((net, manifest))
}

pub fn save_registration(
    dir: &Path,
    net: &RegistrationNet<f32>,
    step: u64,
    seed: u64,
    history: &[HistoryEntry],
) -> Result<()> {
    let params = save_params(dir, &named_params(net))?;
    let manifest =
        RegistrationManifest { kind: "registration".into(), architecture: net.config().clone(), step, seed, params };
    write_json(&dir.join("history.json"), &history)?;
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_registration(dir: &Path) -> Result<(RegistrationNet<f32>, RegistrationManifest, Vec<HistoryEntry>)> {
    missing(dir)?;
    let manifest: RegistrationManifest = read_json(&dir.join("manifest.json"))?;
    let mut net = RegistrationNet::new(manifest.architecture.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(&mut net, &load_named(dir, &manifest.params)?)?;
    let history = read_json(&dir.join("history.json"))?;
    Ok((net, manifest, history))
}
