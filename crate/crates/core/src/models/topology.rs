use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
    Av,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Av => "av",
        }
    }

    pub fn uses_audio(self) -> bool {
        matches!(self, Modality::Audio | Modality::Av)
    }

    pub fn uses_video(self) -> bool {
        matches!(self, Modality::Video | Modality::Av)
    }

    /// Registry prefix of the classifier back end.
    pub fn backend_prefix(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Av => "fusion",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            "av" | "audio-visual" => Ok(Modality::Av),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// One inverted-residual block: expansion factor, output channels, stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub expansion: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Fixed average-pool window applied to the 88x88 frame before the stem.
    pub input_pool: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub blocks: Vec<BlockSpec>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // (expansion, channels, repeats, first stride), MobileNetV2's
        // ordering shrunk to an 8 -> 16 -> 24 -> 32 ladder of 13 blocks.
        let groups = [
            (1, 8, 1, 1),
            (2, 16, 2, 2),
            (2, 24, 3, 2),
            (2, 32, 4, 2),
            (2, 32, 3, 1),
        ];
        let mut blocks = Vec::new();
        for (expansion, channels, repeats, stride) in groups {
            for r in 0..repeats {
                blocks.push(BlockSpec {
                    expansion,
                    channels,
                    stride: if r == 0 { stride } else { 1 },
                });
            }
        }
        EncoderConfig {
            input_pool: 4,
            stem_channels: 8,
            stem_stride: 2,
            blocks,
            embed_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub conv_channels: [usize; 2],
    /// Stride of both convolutions along (time, feature).
    pub conv_stride: (usize, usize),
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            conv_channels: [8, 8],
            conv_stride: (2, 2),
            lstm_hidden: 64,
            fc_hidden: 32,
        }
    }
}

/// Full architecture description, stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    pub n_mels: usize,
    pub audio_frames: usize,
    pub video_frames: usize,
    pub backend: BackendConfig,
    pub encoder: EncoderConfig,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            n_mels: 40,
            audio_frames: 128,
            video_frames: 32,
            backend: BackendConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl Topology {
    /// Audio frames per video frame.
    pub fn repeat_factor(&self) -> Result<usize> {
        if self.video_frames == 0 || self.audio_frames % self.video_frames != 0 {
            return Err(Error::contract(format!(
                "audio frames {} are not an integer multiple of video frames {}",
                self.audio_frames, self.video_frames
            )));
        }
        Ok(self.audio_frames / self.video_frames)
    }

    /// Feature width entering the back end for `modality`.
    pub fn backend_width(&self, modality: Modality) -> usize {
        match modality {
            Modality::Audio => self.n_mels,
            Modality::Video => self.encoder.embed_dim,
            Modality::Av => self.n_mels + self.encoder.embed_dim,
        }
    }

    pub fn backend_steps(&self, modality: Modality) -> usize {
        match modality {
            Modality::Video => self.video_frames,
            _ => self.audio_frames,
        }
    }
}
