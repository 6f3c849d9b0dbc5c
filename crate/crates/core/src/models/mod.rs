//! Audio-only, video-only and audio-visual wake-word classifiers, their
//! loss, training loop and checkpoint format.

mod checkpoint;
mod loss;
mod network;
mod topology;
mod train;
mod wws;

pub use checkpoint::CHECKPOINT_VERSION;
pub use loss::{bce_loss, wws_loss, SCORE_CLAMP};
pub use network::{pool_frames, Backend, LipEncoder};
pub use topology::{BackendConfig, BlockSpec, EncoderConfig, Modality, Topology};
pub use train::{train, Adam, BatchSource, EpochLog, TrainConfig, Trainer};
pub use wws::{decide, fuse, fuse_features, ModelInput, WwsModel, ENCODER_PREFIX};
