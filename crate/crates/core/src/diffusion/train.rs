use dgir_tensor::optim::Adam;
use dgir_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::schedule::{noise_batch, NoiseSchedule};
use crate::error::{DgirError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserTraining {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DenoiserTraining {
    fn default() -> Self {
        DenoiserTraining { steps: 2000, lr: 1e-3, batch: 8, seed: 0 }
    }
}

/// Trains `net` to predict the forward-process noise of images drawn from
/// `dataset` (each `[1, 1, spatial...]` in `[0, 1]`). Returns the per-step
/// batch loss; `on_step` sees every `(step, loss)`.
pub fn train_denoiser<T: Real>(
    net: &mut Denoiser<T>,
    dataset: &[Tensor<T>],
    sched: &NoiseSchedule,
    cfg: &DenoiserTraining,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(DgirError::Data("denoiser training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(DgirError::Param("batch must be positive".into()));
    }
    let shape = dataset[0].shape().to_vec();
    if dataset.iter().any(|x| x.shape() != shape.as_slice()) || shape[0] != 1 || shape[1] != 1 {
        return Err(DgirError::Data(format!("training images must share shape [1, 1, ...], first is {shape:?}")));
    }
    let channels = net.config().in_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<Tensor<T>> = (0..cfg.batch).map(|_| dataset[rng.random_range(0..dataset.len())].clone()).collect();
        let x0 = Tensor::concat(&picks, 0)?.scale(2.0).add_scalar(-1.0).repeat_channels(channels)?;
        let ts: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(1..=sched.steps())).collect();
        let eps = Tensor::randn(x0.shape(), &mut rng);
        let xt = noise_batch(&x0, &ts, &eps, sched)?;
        let loss = net.predict_noise(&xt, &ts)?.sub(&eps)?.sqr().mean_all();
        let value = loss.to_scalar()?.as_f64();
        if !value.is_finite() {
            return Err(DgirError::NonFinite { step: step as u64, detail: "denoiser loss".into() });
        }
        let grads = loss.backward()?;
        opt.step(net, &grads);
        curve.push(value);
        on_step(step, value);
    }
    Ok(curve)
}
