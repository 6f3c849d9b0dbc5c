//! Deterministic synthetic audio-visual corpus.
//!
//! Positive clips hold one two-syllable chirp pattern with a mouth that
//! opens on each syllable. Negative clips hold distractor tones with a still
//! or randomly moving mouth. Noise is mixed into the audio only, so the lip
//! stream keeps its quality at low SNR.

mod dataset;
mod store;
mod synth;

pub use dataset::{FeatureOptions, FeatureSet};
pub use store::{
    build_corpus, manifest_path, record_path, sample_seed, CorpusConfig, GeneratedSplit, Manifest,
    ManifestEntry, RecordSplit, SampleSource, Split, SplitSpec, MANIFEST_HEADER, RECORD_VERSION,
};
pub use synth::{
    babble_noise, clip_samples, mix_noise, noise_gain, pink_noise, plan_sample, render_events,
    render_lip_frame, synth_sample, video_frames, wake_events, wake_span, AudioKind, LipKind,
    Partial, Sample, SamplePlan, Snr, ToneEvent, CLIP_SECONDS, FPS, RAW_LIP_SIZE, SAMPLE_RATE,
    SYLLABLE_GAP, SYLLABLE_SECONDS,
};
