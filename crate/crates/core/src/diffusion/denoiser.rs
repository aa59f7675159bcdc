use std::collections::BTreeMap;

use dgir_tensor::nn::{join, Conv, GroupNorm, Linear, Module};
use dgir_tensor::{Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DgirError, Result};

/// Number of tapped blocks: six encoder, one middle, six decoder.
pub const BLOCK_COUNT: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub spatial_dims: usize,
    pub in_channels: usize,
    /// Channel width at resolution levels 0, 1 and 2.
    pub widths: [usize; 3],
    pub groups: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { spatial_dims: 2, in_channels: 3, widths: [16, 32, 64], groups: 8, time_dim: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Encoder,
    Middle,
    Decoder,
}

/// One row of the block layout table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub index: usize,
    pub stage: Stage,
    /// Resolution level; spatial extents are the input's divided by `2^level`.
    pub level: usize,
    pub channels: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.spatial_dims) {
            return Err(DgirError::Param(format!("spatial_dims {} not in {{2, 3}}", self.spatial_dims)));
        }
        if self.in_channels == 0 || self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(DgirError::Param("in_channels must be positive and time_dim even".into()));
        }
        if self.widths.iter().any(|&w| w == 0 || w % self.groups != 0) {
            return Err(DgirError::Param(format!("widths {:?} must be multiples of groups {}", self.widths, self.groups)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<BlockInfo> {
        let w = self.widths;
        let rows = [
            (Stage::Encoder, 0),
            (Stage::Encoder, 0),
            (Stage::Encoder, 1),
            (Stage::Encoder, 1),
            (Stage::Encoder, 2),
            (Stage::Encoder, 2),
            (Stage::Middle, 2),
            (Stage::Decoder, 2),
            (Stage::Decoder, 2),
            (Stage::Decoder, 1),
            (Stage::Decoder, 1),
            (Stage::Decoder, 0),
            (Stage::Decoder, 0),
        ];
        rows.iter()
            .enumerate()
            .map(|(i, &(stage, level))| BlockInfo { index: i + 1, stage, level, channels: w[level] })
            .collect()
    }

    /// Input channels of each block, in order. Decoder blocks consume the
    /// previous activation concatenated with the mirrored encoder skip.
    fn block_inputs(&self) -> [usize; BLOCK_COUNT] {
        let [a, b, c] = self.widths;
        let i = self.in_channels;
        [i, a, a, b, b, c, c, 2 * c, 2 * c, c + b, 2 * b, b + a, 2 * a]
    }
}

#[derive(Debug, Clone)]
struct Block<T: Real> {
    conv: Conv<T>,
    norm: GroupNorm<T>,
    time: Linear<T>,
}

impl<T: Real> Block<T> {
    fn forward(&self, x: &Tensor<T>, temb: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm.forward(&self.conv.forward(x)?)?;
        let h = h.add_sample_channels(&self.time.forward(temb)?)?;
        Ok(h.silu())
    }
}

impl<T: Real> Module<T> for Block<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.time.visit_params(&join(prefix, "time"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
        self.norm.visit_params_mut(&join(prefix, "norm"), f);
        self.time.visit_params_mut(&join(prefix, "time"), f);
    }
}

/// Noise-prediction network with per-block output taps.
#[derive(Debug, Clone)]
pub struct Denoiser<T: Real> {
    config: DenoiserConfig,
    time1: Linear<T>,
    time2: Linear<T>,
    blocks: Vec<Block<T>>,
    head: Conv<T>,
}

/// Result of a forward pass: the noise estimate when the pass ran to the
/// end, and the requested block activations.
#[derive(Debug, Clone)]
pub struct DenoiserOutput<T: Real> {
    pub eps_hat: Option<Tensor<T>>,
    pub features: BTreeMap<usize, Tensor<T>>,
}

impl<T: Real> Denoiser<T> {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.spatial_dims;
        let td = config.time_dim;
        let time1 = Linear::new(td, td, rng);
        let time2 = Linear::new(td, td, rng);
        let inputs = config.block_inputs();
        let blocks = config
            .layout()
            .iter()
            .map(|info| {
                let i = info.index - 1;
                let stride = if i == 2 || i == 4 { 2 } else { 1 };
                Block {
                    conv: Conv::new(d, inputs[i], info.channels, 3, stride, rng),
                    norm: GroupNorm::new(info.channels, config.groups),
                    time: Linear::new(td, info.channels, rng),
                }
            })
            .collect();
        let head = Conv::new(d, config.widths[0], config.in_channels, 3, 1, rng);
        Ok(Denoiser { config, time1, time2, blocks, head })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> Vec<BlockInfo> {
        self.config.layout()
    }

    pub fn block_count(&self) -> usize {
        BLOCK_COUNT
    }

    fn check_input(&self, x: &Tensor<T>, ts: &[usize]) -> Result<()> {
        let c = &self.config;
        let ok = x.rank() == c.spatial_dims + 2
            && x.dim(1) == c.in_channels
            && x.shape()[2..].iter().all(|&e| e >= 4 && e % 4 == 0);
        if !ok {
            return Err(DgirError::Shape(format!(
                "denoiser expects [n, {}, spatial x{}] with extents divisible by 4, got {:?}",
                c.in_channels,
                c.spatial_dims,
                x.shape()
            )));
        }
        if ts.len() != x.dim(0) {
            return Err(DgirError::Shape(format!("{} timesteps for batch {}", ts.len(), x.dim(0))));
        }
        Ok(())
    }

    fn time_embedding(&self, ts: &[usize]) -> Result<Tensor<T>> {
        let td = self.config.time_dim;
        let half = td / 2;
        let mut data = Vec::with_capacity(ts.len() * td);
        for &t in ts {
            let freqs: Vec<f64> = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp()).collect();
            data.extend(freqs.iter().map(|f| T::from_f64((t as f64 * f).sin())));
            data.extend(freqs.iter().map(|f| T::from_f64((t as f64 * f).cos())));
        }
        let e = Tensor::from_vec(data, &[ts.len(), td])?;
        let e = self.time2.forward(&self.time1.forward(&e)?.silu())?;
        Ok(e.silu())
    }

    /// Runs the network, recording the activations of `taps` (1-based). The
    /// pass stops after the last requested block unless `full` is set.
    pub fn run(&self, x: &Tensor<T>, ts: &[usize], taps: &[usize], full: bool) -> Result<DenoiserOutput<T>> {
        self.check_input(x, ts)?;
        if let Some(&bad) = taps.iter().find(|&&n| n == 0 || n > BLOCK_COUNT) {
            return Err(DgirError::Param(format!("block {bad} outside [1, {BLOCK_COUNT}]")));
        }
        let last = if full { BLOCK_COUNT } else { taps.iter().copied().max().unwrap_or(0) };
        let temb = self.time_embedding(ts)?;
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(BLOCK_COUNT);
        let mut features = BTreeMap::new();
        for i in 0..last {
            let input = match i {
                0 => x.clone(),
                1..=6 => outs[i - 1].clone(),
                // Decoder: previous output (upsampled when the level rises)
                // joined with the mirrored encoder output.
                _ => {
                    let skip = &outs[12 - i];
                    let mut prev = outs[i - 1].clone();
                    if i == 9 || i == 11 {
                        prev = prev.upsample_nearest2()?;
                    }
                    Tensor::concat(&[prev, skip.clone()], 1)?
                }
            };
            let h = self.blocks[i].forward(&input, &temb)?;
            if taps.contains(&(i + 1)) {
                features.insert(i + 1, h.clone());
            }
            outs.push(h);
        }
        let eps_hat = if last == BLOCK_COUNT { Some(self.head.forward(&outs[BLOCK_COUNT - 1])?) } else { None };
        Ok(DenoiserOutput { eps_hat, features })
    }

    /// Full forward pass with taps.
    pub fn forward(&self, x: &Tensor<T>, ts: &[usize], taps: &[usize]) -> Result<DenoiserOutput<T>> {
        self.run(x, ts, taps, true)
    }

    pub fn predict_noise(&self, x: &Tensor<T>, ts: &[usize]) -> Result<Tensor<T>> {
        Ok(self.run(x, ts, &[], true)?.eps_hat.expect("full pass"))
    }

    /// Activation of a single block, computing nothing beyond it.
    pub fn forward_to(&self, x: &Tensor<T>, ts: &[usize], block: usize) -> Result<Tensor<T>> {
        let mut out = self.run(x, ts, &[block], false)?;
        Ok(out.features.remove(&block).expect("requested tap"))
    }
}

impl<T: Real> Module<T> for Denoiser<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.time1.visit_params(&join(prefix, "time1"), f);
        self.time2.visit_params(&join(prefix, "time2"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{:02}", i + 1)), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.time1.visit_params_mut(&join(prefix, "time1"), f);
        self.time2.visit_params_mut(&join(prefix, "time2"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{:02}", i + 1)), f);
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}
