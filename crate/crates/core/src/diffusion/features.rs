use dgir_tensor::nn::{named_params, set_trainable};
use dgir_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::denoiser::{Denoiser, BLOCK_COUNT};
use super::DECODER_MID_BLOCK;
use super::schedule::{noise_image, NoiseSchedule};
use crate::error::{DgirError, Result};
use crate::geometry::resample;

/// How the forward-process noise is drawn for each extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoisePolicy {
    /// Noise regenerated from `seed` on every call.
    FixedSeed { seed: u64 },
    /// One draw per call, shared by both images of a pair.
    FreshSharedPair,
    /// Separate draws for every image.
    FreshIndependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureProbe {
    pub t: usize,
    pub block: usize,
    pub noise: NoisePolicy,
    pub resize_to_input: bool,
}

impl Default for FeatureProbe {
    fn default() -> Self {
        FeatureProbe::new(50, DECODER_MID_BLOCK)
    }
}

impl FeatureProbe {
    pub fn new(t: usize, block: usize) -> Self {
        FeatureProbe { t, block, noise: NoisePolicy::FreshSharedPair, resize_to_input: false }
    }

    pub fn with_noise(mut self, noise: NoisePolicy) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        sched.check(self.t)?;
        if self.block == 0 || self.block > BLOCK_COUNT {
            return Err(DgirError::Param(format!("block {} outside [1, {BLOCK_COUNT}]", self.block)));
        }
        Ok(())
    }
}

/// A denoiser whose parameters never record gradients.
#[derive(Debug, Clone)]
pub struct FrozenDenoiser<T: Real> {
    net: Denoiser<T>,
    schedule: NoiseSchedule,
}

impl<T: Real> FrozenDenoiser<T> {
    pub fn new(mut net: Denoiser<T>, schedule: NoiseSchedule) -> Self {
        set_trainable(&mut net, false);
        FrozenDenoiser { net, schedule }
    }

    pub fn net(&self) -> &Denoiser<T> {
        &self.net
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn cast<U: Real>(&self) -> Result<FrozenDenoiser<U>> {
        let mut net = Denoiser::<U>::new(self.net.config().clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        dgir_tensor::nn::load_params(&mut net, &named_params(&self.net))?;
        Ok(FrozenDenoiser::new(net, self.schedule.clone()))
    }

    /// SHA-256 over parameter names and values.
    pub fn param_hash(&self) -> String {
        param_hash(&self.net)
    }

    /// Maps `[0, 1]` images to the network's input range and channel count.
    pub fn prepare(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.net.config().in_channels;
        Ok(x.scale(2.0).add_scalar(-1.0).repeat_channels(c)?)
    }

    /// Block activations of noised `x` under `probe`.
    pub fn extract<R: Rng + ?Sized>(&self, x: &Tensor<T>, probe: &FeatureProbe, rng: &mut R) -> Result<Tensor<T>> {
        probe.validate(&self.schedule)?;
        let x0 = self.prepare(x)?;
        let eps = match probe.noise {
            NoisePolicy::FixedSeed { seed } => Tensor::randn(x0.shape(), &mut ChaCha8Rng::seed_from_u64(seed)),
            _ => Tensor::randn(x0.shape(), rng),
        };
        self.features_of(&x0, &eps, probe, x)
    }

    /// Features of both images of a pair in one batched pass, with noise
    /// drawn per the probe's policy.
    pub fn extract_pair<R: Rng + ?Sized>(
        &self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        probe: &FeatureProbe,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        probe.validate(&self.schedule)?;
        if a.shape() != b.shape() {
            return Err(DgirError::Shape(format!("pair {:?} vs {:?}", a.shape(), b.shape())));
        }
        let x0 = self.prepare(&Tensor::concat(&[a.clone(), b.clone()], 0)?)?;
        let n = a.dim(0);
        let mut half = x0.shape().to_vec();
        half[0] = n;
        let eps = match probe.noise {
            NoisePolicy::FixedSeed { seed } => {
                let e = Tensor::randn(&half, &mut ChaCha8Rng::seed_from_u64(seed));
                Tensor::concat(&[e.clone(), e], 0)?
            }
            NoisePolicy::FreshSharedPair => {
                let e = Tensor::randn(&half, rng);
                Tensor::concat(&[e.clone(), e], 0)?
            }
            NoisePolicy::FreshIndependent => Tensor::randn(x0.shape(), rng),
        };
        let f = self.features_of(&x0, &eps, probe, a)?;
        Ok((f.narrow(0, 0, n)?, f.narrow(0, n, n)?))
    }

    fn features_of(&self, x0: &Tensor<T>, eps: &Tensor<T>, probe: &FeatureProbe, like: &Tensor<T>) -> Result<Tensor<T>> {
        let xt = noise_image(x0, probe.t, eps, &self.schedule)?;
        let ts = vec![probe.t; x0.dim(0)];
        let f = self.net.forward_to(&xt, &ts, probe.block)?;
        if probe.resize_to_input && f.shape()[2..] != like.shape()[2..] {
            return resample(&f, &like.shape()[2..]);
        }
        Ok(f)
    }
}

pub fn param_hash<T: Real>(net: &Denoiser<T>) -> String {
    let mut h = Sha256::new();
    for (name, t) in named_params(net) {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Free-function form of [`FrozenDenoiser::extract`].
pub fn extract_features<T: Real, R: Rng + ?Sized>(
    frozen: &FrozenDenoiser<T>,
    x: &Tensor<T>,
    probe: &FeatureProbe,
    rng: &mut R,
) -> Result<Tensor<T>> {
    frozen.extract(x, probe, rng)
}
