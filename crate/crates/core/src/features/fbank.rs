//! Log-mel filterbank features.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A mono waveform in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbankConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            sample_rate: 16_000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 40,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as f64 * self.frame_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.frame_len().next_power_of_two()
    }

    /// Number of frames produced for `samples` input samples.
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_len() {
            0
        } else {
            1 + (samples - self.frame_len()) / self.hop_len()
        }
    }
}

/// `[time, n_mels]` log-mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct FbankFeatures {
    pub frames: Tensor,
    pub normalized: bool,
}

impl FbankFeatures {
    pub fn time(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dims(&self) -> usize {
        self.frames.shape()[1]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` power-spectrum bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// Left edge, centre and right edge of each band in Hz.
    pub edges: Vec<(f64, f64, f64)>,
    weights: Vec<Vec<(usize, f64)>>,
}

impl MelFilterbank {
    pub fn new(cfg: &FbankConfig) -> Result<Self> {
        if cfg.n_mels == 0 || cfg.f_max <= cfg.f_min || cfg.f_max > cfg.sample_rate as f64 / 2.0 {
            return Err(Error::contract(format!(
                "mel range {}..{} Hz with {} bands at {} Hz",
                cfg.f_min, cfg.f_max, cfg.n_mels, cfg.sample_rate
            )));
        }
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + step * i as f64))
            .collect();
        let n_bins = cfg.n_fft() / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft() as f64;
        let mut edges = Vec::with_capacity(cfg.n_mels);
        let mut weights = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            edges.push((l, c, r));
            let band = (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            weights.push(band);
        }
        Ok(MelFilterbank { edges, weights })
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.1).collect()
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, band) in out.iter_mut().zip(&self.weights) {
            *o = band.iter().map(|&(k, w)| w * power[k]).sum();
        }
    }
}

/// Reusable STFT + filterbank state.
pub struct FbankExtractor {
    cfg: FbankConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    mel: MelFilterbank,
}

impl FbankExtractor {
    pub fn new(cfg: FbankConfig) -> Result<Self> {
        let n = cfg.frame_len();
        if n < 2 || cfg.hop_len() == 0 {
            return Err(Error::contract(
                "frame and hop must span at least one sample",
            ));
        }
        if !(cfg.log_floor > 0.0) {
            return Err(Error::contract("log floor must be positive"));
        }
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft());
        let mel = MelFilterbank::new(&cfg)?;
        Ok(FbankExtractor {
            cfg,
            window,
            fft,
            mel,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.mel
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FbankFeatures> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(Error::contract(format!(
                "clip sampled at {} Hz, extractor configured for {} Hz",
                clip.sample_rate, self.cfg.sample_rate
            )));
        }
        let frames = self.cfg.frame_count(clip.samples.len());
        if frames == 0 {
            return Err(Error::contract(format!(
                "clip of {} samples is shorter than one {}-sample frame",
                clip.samples.len(),
                self.cfg.frame_len()
            )));
        }
        let (n, hop, n_fft) = (self.cfg.frame_len(), self.cfg.hop_len(), self.cfg.n_fft());
        let n_mels = self.cfg.n_mels;
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; n_fft / 2 + 1];
        let mut data = vec![0.0; frames * n_mels];
        for t in 0..frames {
            let seg = &clip.samples[t * hop..t * hop + n];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < n {
                    Complex::new(seg[i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = &mut data[t * n_mels..(t + 1) * n_mels];
            self.mel.apply(&power, row);
            for v in row.iter_mut() {
                *v = v.max(self.cfg.log_floor).ln();
            }
        }
        Ok(FbankFeatures {
            frames: Tensor::new(vec![frames, n_mels], data)?,
            normalized: false,
        })
    }
}

/// One-off extraction with a fresh extractor.
pub fn extract_fbank(clip: &AudioClip, cfg: &FbankConfig) -> Result<FbankFeatures> {
    FbankExtractor::new(cfg.clone())?.extract(clip)
}

/// Per-dimension mean and standard deviation of a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbankStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl FbankStats {
    pub fn identity(dims: usize) -> Self {
        FbankStats {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Population statistics over every frame of every clip.
    pub fn from_corpus<'a>(feats: impl IntoIterator<Item = &'a FbankFeatures>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let all: Vec<&FbankFeatures> = feats.into_iter().collect();
        for f in &all {
            if sum.is_empty() {
                sum = vec![0.0; f.dims()];
            }
            if f.dims() != sum.len() {
                return Err(Error::shape(
                    "fbank_stats",
                    format!("{} vs {} dims", f.dims(), sum.len()),
                ));
            }
            for row in f.frames.data().chunks(f.dims()) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            count += f.time();
        }
        if count == 0 {
            return Err(Error::contract(
                "cannot compute statistics of an empty corpus",
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; mean.len()];
        for f in &all {
            for row in f.frames.data().chunks(f.dims()) {
                for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(FbankStats { mean, std })
    }
}

/// `(x - mean) / max(std, 1e-8)` per dimension.
pub fn normalize_global(feats: &FbankFeatures, stats: &FbankStats) -> Result<FbankFeatures> {
    let dims = feats.dims();
    if stats.mean.len() != dims || stats.std.len() != dims {
        return Err(Error::contract(format!(
            "statistics have {} dims, features have {dims}",
            stats.mean.len()
        )));
    }
    let mut data = feats.frames.data().to_vec();
    for row in data.chunks_mut(dims) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s.max(STD_FLOOR);
        }
    }
    Ok(FbankFeatures {
        frames: Tensor::new(feats.frames.shape().to_vec(), data)?,
        normalized: true,
    })
}
