//! Forward noising, the block-tapped denoiser and the frozen feature
//! extractor built on it.

mod denoiser;
mod features;
mod schedule;
mod train;

pub use denoiser::{BlockInfo, Denoiser, DenoiserConfig, DenoiserOutput, Stage, BLOCK_COUNT};
pub use features::{extract_features, param_hash, FeatureProbe, FrozenDenoiser, NoisePolicy};
pub use schedule::{make_noise_schedule, noise_batch, noise_image, NoiseSchedule};
pub use train::{train_denoiser, DenoiserTraining};

/// Decoder block at the middle resolution level; the default 2D probe.
pub const DECODER_MID_BLOCK: usize = 10;
/// Encoder block at the middle resolution level; the default 3D probe.
pub const ENCODER_MID_BLOCK: usize = 4;
/// First block at the coarsest level.
pub const COARSEST_BLOCK: usize = 7;
