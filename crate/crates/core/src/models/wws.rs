use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Backend, LipEncoder};
use super::topology::{Modality, Topology};
use crate::error::{Error, Result};
use crate::features::{FbankConfig, FbankStats};
use crate::nn::{Bindings, CostReport, ParamRegistry};
use crate::tensor::{Graph, Tensor, Var};

pub const ENCODER_PREFIX: &str = "lip_encoder";

/// Batched model input. `audio` is normalized FBank `[batch, frames, mels]`;
/// `lips` is `[batch, frames, 1, side, side]` at full or pre-pooled size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelInput {
    pub audio: Option<Tensor>,
    pub lips: Option<Tensor>,
}

impl ModelInput {
    pub fn batch_size(&self) -> Option<usize> {
        self.audio
            .as_ref()
            .or(self.lips.as_ref())
            .map(|t| t.shape()[0])
    }
}

/// One of the three wake-word classifiers together with its parameters and
/// the front-end settings it was trained with.
#[derive(Clone, Debug)]
pub struct WwsModel {
    pub modality: Modality,
    pub topology: Topology,
    pub fbank: FbankConfig,
    pub stats: FbankStats,
    pub registry: ParamRegistry,
    encoder: Option<LipEncoder>,
    backend: Backend,
}

impl WwsModel {
    /// Builds a freshly initialized model. The same seed always yields the
    /// same parameters.
    pub fn new(modality: Modality, topology: Topology, seed: u64) -> Result<Self> {
        let fbank = FbankConfig {
            n_mels: topology.n_mels,
            ..FbankConfig::default()
        };
        Self::with_fbank(modality, topology, fbank, seed)
    }

    pub fn with_fbank(
        modality: Modality,
        topology: Topology,
        fbank: FbankConfig,
        seed: u64,
    ) -> Result<Self> {
        if fbank.n_mels != topology.n_mels {
            return Err(Error::Config(format!(
                "fbank has {} mels but the topology expects {}",
                fbank.n_mels, topology.n_mels
            )));
        }
        if modality == Modality::Av {
            topology.repeat_factor()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut registry = ParamRegistry::new();
        let encoder = if modality.uses_video() {
            Some(LipEncoder::new(
                &mut registry,
                &mut rng,
                ENCODER_PREFIX,
                &topology.encoder,
            )?)
        } else {
            None
        };
        let backend = Backend::new(
            &mut registry,
            &mut rng,
            modality.backend_prefix(),
            topology.backend_steps(modality),
            topology.backend_width(modality),
            &topology.backend,
        )?;
        let stats = FbankStats::identity(topology.n_mels);
        Ok(WwsModel {
            modality,
            topology,
            fbank,
            stats,
            registry,
            encoder,
            backend,
        })
    }

    pub fn encoder(&self) -> Option<&LipEncoder> {
        self.encoder.as_ref()
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn backend_prefix(&self) -> &'static str {
        self.modality.backend_prefix()
    }

    /// Maps lips `[batch, frames, 1, s, s]` to embeddings `[batch, frames, d]`.
    pub fn encode_lips(&self, g: &mut Graph, b: &Bindings, lips: Var) -> Result<Var> {
        let enc = self.encoder.as_ref().ok_or_else(|| {
            Error::contract(format!(
                "{} model has no lip encoder",
                self.modality.as_str()
            ))
        })?;
        let s = g.shape(lips).to_vec();
        if s.len() != 5 || s[1] != self.topology.video_frames {
            return Err(Error::shape(
                "encode_lips",
                format!(
                    "expects [batch, {}, 1, side, side], got {s:?}",
                    self.topology.video_frames
                ),
            ));
        }
        let flat = g.reshape(lips, &[s[0] * s[1], s[2], s[3], s[4]])?;
        let e = enc.forward(g, b, flat)?;
        g.reshape(e, &[s[0], s[1], enc.embed_dim])
    }

    /// Sigmoid scores `[batch, 1]`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, input: &ModelInput) -> Result<Var> {
        let need = |t: &Option<Tensor>, what: &str| {
            t.clone().ok_or_else(|| {
                Error::contract(format!(
                    "{} model needs {what} input",
                    self.modality.as_str()
                ))
            })
        };
        let x = match self.modality {
            Modality::Audio => g.constant(need(&input.audio, "audio")?)?,
            Modality::Video => {
                let lips = g.constant(need(&input.lips, "lip")?)?;
                self.encode_lips(g, b, lips)?
            }
            Modality::Av => {
                let audio = g.constant(need(&input.audio, "audio")?)?;
                let lips = g.constant(need(&input.lips, "lip")?)?;
                let ev = self.encode_lips(g, b, lips)?;
                fuse(g, audio, ev)?
            }
        };
        self.backend.forward(g, b, x)
    }

    /// Scores without gradient tracking.
    pub fn scores(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.registry.bind_with(&mut g, |_| false)?;
        let s = self.forward(&mut g, &b, input)?;
        Ok(g.value(s)?.data().to_vec())
    }

    pub fn cost_report(&self) -> Result<CostReport> {
        let mut layers = Vec::new();
        let mut input = Vec::new();
        if let Some(enc) = &self.encoder {
            layers.extend(enc.costs(&self.registry)?);
            input.push(format!(
                "{} lip frames of 1x{LIP}x{LIP}",
                self.topology.video_frames,
                LIP = crate::features::LIP_SIZE
            ));
        }
        for l in &mut layers {
            l.flops *= self.topology.video_frames;
        }
        layers.extend(self.backend.costs(&self.registry)?);
        input.push(format!(
            "backend [{}, {}]",
            self.topology.backend_steps(self.modality),
            self.topology.backend_width(self.modality)
        ));
        Ok(CostReport {
            input: input.join("; "),
            layers,
        })
    }
}

/// Repeats each lip embedding along time to the audio frame rate and
/// concatenates it after the audio features:
/// `[n, ta, da]` and `[n, tv, dv]` give `[n, ta, da + dv]` with `ta = k * tv`.
pub fn fuse(g: &mut Graph, audio: Var, lips: Var) -> Result<Var> {
    let sa = g.shape(audio).to_vec();
    let sv = g.shape(lips).to_vec();
    if sa.len() != 3 || sv.len() != 3 || sa[0] != sv[0] {
        return Err(Error::shape("fuse", format!("audio {sa:?} vs lips {sv:?}")));
    }
    if sa[1] % sv[1] != 0 {
        return Err(Error::contract(format!(
            "audio frames {} are not an integer multiple of video frames {}",
            sa[1], sv[1]
        )));
    }
    let k = sa[1] / sv[1];
    let v4 = g.reshape(lips, &[sv[0], sv[1], 1, sv[2]])?;
    let reps = vec![v4; k];
    let rep = g.concat(&reps, 2)?;
    let up = g.reshape(rep, &[sv[0], sa[1], sv[2]])?;
    g.concat(&[audio, up], 2)
}

/// Tensor-level [`fuse`] for a single clip: `[ta, da]` and `[tv, dv]`.
pub fn fuse_features(audio: &Tensor, lips: &Tensor) -> Result<Tensor> {
    let (sa, sv) = (audio.shape(), lips.shape());
    if sa.len() != 2 || sv.len() != 2 {
        return Err(Error::shape("fuse", format!("audio {sa:?} vs lips {sv:?}")));
    }
    let mut g = Graph::new();
    let a = g.constant(audio.clone().reshaped(vec![1, sa[0], sa[1]])?)?;
    let v = g.constant(lips.clone().reshaped(vec![1, sv[0], sv[1]])?)?;
    let f = fuse(&mut g, a, v)?;
    let out = g.value(f)?.clone();
    let width = out.shape()[2];
    out.reshaped(vec![sa[0], width])
}

/// Decision rule: 1 when `score >= threshold`.
pub fn decide(score: f64, threshold: f64) -> u8 {
    u8::from(score >= threshold)
}
