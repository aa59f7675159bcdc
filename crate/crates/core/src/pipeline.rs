//! Stage orchestration shared by the command line and the test harnesses.

use dgir_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diffusion::{train_denoiser, Denoiser, FrozenDenoiser, NoiseSchedule};
use crate::error::{DgirError, Result};
use crate::evaluation::{ablation_sweep, AblationRow, SweepSetup};
use crate::losses::{gather_slices, LossKind, SliceDraw};
use crate::registration::{train, Pair, RegistrationNet, TrainState};
use crate::synth::{pair_from_sample, AnatomySample, Corpus, RegistrationPair};

/// Denoiser training images: both variants of every sample, or for volumes
/// every `stride`-th slice along each axis.
pub fn denoiser_images(samples: &[AnatomySample], stride: usize) -> Result<Vec<Tensor<f32>>> {
    if stride == 0 {
        return Err(DgirError::Param("slice stride must be positive".into()));
    }
    let mut out = Vec::new();
    for s in samples {
        for img in [&s.full, &s.missing] {
            match img.rank() {
                4 => out.push(img.clone()),
                5 => {
                    for axis in 0..3 {
                        let n = img.dim(axis + 2);
                        let draw = SliceDraw { axis, indices: (0..n).step_by(stride).collect() };
                        let slices = gather_slices(img, &draw)?;
                        for i in 0..draw.indices.len() {
                            out.push(slices.narrow(0, i, 1)?);
                        }
                    }
                }
                r => return Err(DgirError::Shape(format!("expected a 2D or 3D image, got rank {r}"))),
            }
        }
    }
    Ok(out)
}

pub fn registration_pairs(samples: &[AnatomySample]) -> Result<Vec<RegistrationPair>> {
    samples.iter().map(pair_from_sample).collect()
}

pub fn training_pairs(pairs: &[RegistrationPair]) -> Vec<Pair<f32>> {
    pairs.iter().map(|p| (p.moving.clone(), p.fixed.clone())).collect()
}

/// Trains a fresh denoiser on `corpus.train`; returns it with its schedule
/// and the per-step loss.
pub fn run_denoiser_training(
    cfg: &RunConfig,
    corpus: &Corpus,
    on_step: impl FnMut(usize, f64),
) -> Result<(Denoiser<f32>, NoiseSchedule, Vec<f64>)> {
    let sched = cfg.diffusion.schedule.build()?;
    let images = denoiser_images(&corpus.train, cfg.diffusion.slice_stride)?;
    let mut net = Denoiser::new(cfg.diffusion.architecture.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let curve = train_denoiser(&mut net, &images, &sched, &cfg.diffusion.training(cfg.seed), on_step)?;
    Ok((net, sched, curve))
}

/// Trains a fresh registration net on `corpus.train` with the configured
/// loss. `frozen` is required for the diffusion loss only.
pub fn run_registration_training(
    cfg: &RunConfig,
    corpus: &Corpus,
    frozen: Option<&FrozenDenoiser<f32>>,
    on_step: impl FnMut(&RegistrationNet<f32>, &TrainState<f32>) -> Result<()>,
) -> Result<(RegistrationNet<f32>, TrainState<f32>)> {
    let dims = corpus.spec.shape.len();
    let loss = cfg.registration.loss_for(dims);
    if loss.kind == LossKind::Dgir && frozen.is_none() {
        return Err(DgirError::Param("the diffusion loss needs a denoiser".into()));
    }
    let pairs = training_pairs(&registration_pairs(&corpus.train)?);
    let mut net = RegistrationNet::new(cfg.registration.net_config(dims), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let state = train(&mut net, &pairs, &loss, frozen, &cfg.registration.training(dims, cfg.seed), on_step)?;
    Ok((net, state))
}

/// The configured probe sweep over `corpus`.
pub fn run_ablation(
    cfg: &RunConfig,
    corpus: &Corpus,
    frozen: &FrozenDenoiser<f32>,
    on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let dims = corpus.spec.shape.len();
    let train_pairs = training_pairs(&registration_pairs(&corpus.train)?);
    let test_pairs = registration_pairs(&corpus.test)?;
    let mut training = cfg.registration.training(dims, cfg.seed);
    training.steps = cfg.ablation.steps;
    let setup = SweepSetup {
        train_pairs: &train_pairs,
        test_pairs: &test_pairs,
        frozen,
        loss: cfg.registration.loss_for(dims),
        net: cfg.registration.net_config(dims),
        training,
    };
    let a = &cfg.ablation;
    ablation_sweep(&setup, a.axis, a.fixed_value, &a.values, &a.seeds, on_row)
}
