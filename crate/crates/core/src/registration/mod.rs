//! Multi-step registration network, its training loop and inference.

mod net;
mod train;

pub use net::{predict_deformation, register_pair, RegNetConfig, RegistrationNet};
pub use train::{train, train_step, HistoryEntry, Pair, RegTraining, TrainState};
