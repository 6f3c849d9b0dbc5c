use super::store::{ManifestEntry, SampleSource};
use super::synth::Snr;
use crate::error::{Error, Result};
use crate::features::{normalize_global, FbankExtractor, FbankFeatures, FbankStats};
use crate::models::{pool_frames, BatchSource, ModelInput};
use crate::tensor::Tensor;

/// Which front-end outputs to keep per clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureOptions {
    pub audio: bool,
    pub lips: bool,
    /// Input pool of the lip encoder; lips are cached already pooled.
    pub lip_pool: usize,
}

/// Front-end features of a whole split, held in memory.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub entries: Vec<ManifestEntry>,
    audio: Vec<FbankFeatures>,
    lips: Vec<Tensor>,
    pub labels: Vec<f64>,
}

impl FeatureSet {
    /// Extracts features for every clip of `source`. Audio stays
    /// unnormalized until [`FeatureSet::normalize`].
    pub fn extract(
        source: &dyn SampleSource,
        fbank: &FbankExtractor,
        opts: FeatureOptions,
    ) -> Result<Self> {
        let n = source.len();
        let mut audio = Vec::with_capacity(if opts.audio { n } else { 0 });
        let mut lips = Vec::with_capacity(if opts.lips { n } else { 0 });
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let s = source.sample(i)?;
            if opts.audio {
                audio.push(fbank.extract(&s.clip)?);
            }
            if opts.lips {
                lips.push(pool_frames(&s.lips.frames, opts.lip_pool)?);
            }
            labels.push(f64::from(s.label));
        }
        Ok(FeatureSet {
            entries: source.entries().to_vec(),
            audio,
            lips,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_audio(&self) -> bool {
        !self.audio.is_empty() || self.is_empty()
    }

    pub fn audio(&self) -> &[FbankFeatures] {
        &self.audio
    }

    /// Global mean and standard deviation of this set's raw FBank features.
    pub fn fbank_stats(&self) -> Result<FbankStats> {
        if self.audio.iter().any(|f| f.normalized) {
            return Err(Error::contract(
                "statistics must come from unnormalized features",
            ));
        }
        FbankStats::from_corpus(&self.audio)
    }

    pub fn normalize(&mut self, stats: &FbankStats) -> Result<()> {
        for f in &mut self.audio {
            if f.normalized {
                return Err(Error::contract("features are already normalized"));
            }
            *f = normalize_global(f, stats)?;
        }
        Ok(())
    }

    /// Subset restricted to one SNR condition.
    pub fn stratum(&self, snr: Snr) -> FeatureSet {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.entries[i].snr == snr)
            .collect();
        self.subset(&keep)
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            audio: if self.audio.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.audio[i].clone()).collect()
            },
            lips: if self.lips.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.lips[i].clone()).collect()
            },
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(parts[0].shape());
        let mut data = Vec::with_capacity(parts.len() * parts[0].len());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::new(shape, data)
    }
}

impl BatchSource for FeatureSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<(ModelInput, Vec<f64>)> {
        if indices.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let audio = if self.audio.is_empty() {
            None
        } else {
            if !self.audio[indices[0]].normalized {
                return Err(Error::contract(
                    "audio features must be normalized before batching",
                ));
            }
            let parts: Vec<&Tensor> = indices.iter().map(|&i| &self.audio[i].frames).collect();
            Some(Self::stack(&parts)?)
        };
        let lips = if self.lips.is_empty() {
            None
        } else {
            let parts: Vec<&Tensor> = indices.iter().map(|&i| &self.lips[i]).collect();
            Some(Self::stack(&parts)?)
        };
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((ModelInput { audio, lips }, labels))
    }
}
