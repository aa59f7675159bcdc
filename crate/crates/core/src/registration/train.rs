use dgir_tensor::optim::Adam;
use dgir_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::RegistrationNet;
use crate::diffusion::FrozenDenoiser;
use crate::error::{DgirError, Result};
use crate::losses::{total_loss, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub total: f64,
    pub sim: f64,
    pub reg: f64,
}

/// Optimiser, step counter, rng and loss history of a training run.
#[derive(Debug, Clone)]
pub struct TrainState<T: Real> {
    pub optimizer: Adam<T>,
    pub step: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<HistoryEntry>,
}

impl<T: Real> TrainState<T> {
    pub fn new(lr: f64, seed: u64) -> Self {
        TrainState { optimizer: Adam::new(lr), step: 0, seed, rng: ChaCha8Rng::seed_from_u64(seed), history: Vec::new() }
    }
}

/// One Adam step on `total_loss(A, B)` with respect to the network only.
pub fn train_step<T: Real>(
    net: &mut RegistrationNet<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &LossConfig,
    frozen: Option<&FrozenDenoiser<T>>,
    state: &mut TrainState<T>,
) -> Result<HistoryEntry> {
    let phi = net.predict(a, b)?;
    let parts = total_loss(a, b, &phi, cfg, frozen, &mut state.rng)?;
    let entry = HistoryEntry {
        step: state.step,
        total: parts.total.to_scalar()?.as_f64(),
        sim: parts.sim.to_scalar()?.as_f64(),
        reg: parts.reg.to_scalar()?.as_f64(),
    };
    if !entry.total.is_finite() {
        return Err(DgirError::NonFinite {
            step: state.step,
            detail: format!("sim {} reg {}", entry.sim, entry.reg),
        });
    }
    let grads = parts.total.backward()?;
    state.optimizer.step(net, &grads);
    state.step += 1;
    state.history.push(entry);
    Ok(entry)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegTraining {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for RegTraining {
    fn default() -> Self {
        RegTraining { steps: 3000, lr: 1e-4, batch: 4, seed: 0 }
    }
}

/// Moving/fixed pairs, each tensor `[1, 1, spatial...]`.
pub type Pair<T> = (Tensor<T>, Tensor<T>);

/// Samples batches with replacement and runs `cfg.steps` updates.
/// `on_step` sees each entry and may persist checkpoints.
pub fn train<T: Real>(
    net: &mut RegistrationNet<T>,
    pairs: &[Pair<T>],
    loss: &LossConfig,
    frozen: Option<&FrozenDenoiser<T>>,
    cfg: &RegTraining,
    mut on_step: impl FnMut(&RegistrationNet<T>, &TrainState<T>) -> Result<()>,
) -> Result<TrainState<T>> {
    if pairs.is_empty() {
        return Err(DgirError::Data("no training pairs".into()));
    }
    if cfg.batch == 0 {
        return Err(DgirError::Param("batch must be positive".into()));
    }
    loss.validate()?;
    let mut state = TrainState::new(cfg.lr, cfg.seed);
    let mut picker = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| picker.random_range(0..pairs.len())).collect();
        let a = Tensor::concat(&idx.iter().map(|&i| pairs[i].0.clone()).collect::<Vec<_>>(), 0)?;
        let b = Tensor::concat(&idx.iter().map(|&i| pairs[i].1.clone()).collect::<Vec<_>>(), 0)?;
        train_step(net, &a, &b, loss, frozen, &mut state)?;
        on_step(net, &state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::registration::RegNetConfig;
    use dgir_tensor::nn::named_params;

    fn pair(seed: u64) -> Pair<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Tensor::uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng), Tensor::uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng))
    }

    fn snapshot(net: &RegistrationNet<f32>) -> Vec<Vec<f32>> {
        named_params(net).values().map(|t| t.to_vec()).collect()
    }

    #[test]
    fn zero_lr_and_zero_steps_keep_parameters() {
        let cfg = LossConfig { image_lncc: crate::losses::LnccConfig { window: 3, epsilon: 1e-5 }, ..LossConfig::default() }
            .with_kind(LossKind::Lncc);
        let mut net = RegistrationNet::<f32>::new(RegNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = snapshot(&net);
        let pairs = vec![pair(1)];
        train(&mut net, &pairs, &cfg, None, &RegTraining { steps: 0, ..Default::default() }, |_, _| Ok(())).unwrap();
        assert_eq!(before, snapshot(&net));
        let mut state = TrainState::new(0.0, 0);
        train_step(&mut net, &pairs[0].0, &pairs[0].1, &cfg, None, &mut state).unwrap();
        assert_eq!(before, snapshot(&net));
        assert_eq!(state.history.len(), 1);
    }

    #[test]
    fn seeded_histories_match() {
        let cfg = LossConfig::default().with_kind(LossKind::Mse);
        let pairs = vec![pair(1), pair(2)];
        let run = || {
            let mut net = RegistrationNet::<f32>::new(RegNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let rc = RegTraining { steps: 3, lr: 1e-3, batch: 2, seed: 5 };
            train(&mut net, &pairs, &cfg, None, &rc, |_, _| Ok(())).unwrap().history
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
        }
    }

    #[test]
    fn empty_pairs_rejected() {
        let mut net = RegistrationNet::<f32>::new(RegNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = train(&mut net, &[], &LossConfig::default(), None, &RegTraining::default(), |_, _| Ok(()));
        assert!(matches!(r, Err(DgirError::Data(_))));
    }
}
