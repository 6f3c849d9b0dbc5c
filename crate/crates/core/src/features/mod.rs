//! Front ends: log-mel filterbank features and lip-frame preprocessing.

mod fbank;
mod lip;

pub use fbank::{
    extract_fbank, hz_to_mel, mel_to_hz, normalize_global, AudioClip, FbankConfig, FbankExtractor,
    FbankFeatures, FbankStats, MelFilterbank,
};
pub use lip::{preprocess_lip, resize_bilinear, LipFrames, RawFrame, LIP_SIZE};
