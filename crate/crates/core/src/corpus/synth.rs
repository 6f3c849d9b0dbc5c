//! Seeded generator for labeled audio-visual clips.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{preprocess_lip, AudioClip, LipFrames, RawFrame};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SECONDS: f64 = 1.3;
pub const FPS: f64 = 25.0;
/// Side of the rendered lip crop before preprocessing.
pub const RAW_LIP_SIZE: usize = 96;

pub fn clip_samples() -> usize {
    (SAMPLE_RATE as f64 * CLIP_SECONDS).floor() as usize
}

pub fn video_frames() -> usize {
    (FPS * CLIP_SECONDS + 1e-9).floor() as usize
}

/// Signal-to-noise condition of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Snr {
    Clean,
    Db(i32),
}

impl Snr {
    /// Integer code used in record headers.
    pub fn code(self) -> i32 {
        match self {
            Snr::Clean => i32::MAX,
            Snr::Db(d) => d,
        }
    }

    pub fn from_code(c: i32) -> Self {
        if c == i32::MAX {
            Snr::Clean
        } else {
            Snr::Db(c)
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Clean => f.write_str("clean"),
            Snr::Db(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches("dB");
        if t.eq_ignore_ascii_case("clean") {
            return Ok(Snr::Clean);
        }
        t.parse::<i32>().map(Snr::Db).map_err(|_| {
            Error::Config(format!(
                "bad SNR {s:?}; use \"clean\" or an integer dB value"
            ))
        })
    }
}

impl Serialize for Snr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Clean => s.serialize_str("clean"),
            Snr::Db(d) => s.serialize_i32(*d),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(i32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr::Db(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One linear chirp partial: start and end frequency in Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partial {
    pub f0: f64,
    pub f1: f64,
}

/// A tonal event in the clean signal.
#[derive(Clone, Debug, PartialEq)]
pub struct ToneEvent {
    pub onset: f64,
    pub duration: f64,
    pub amplitude: f64,
    pub partials: Vec<Partial>,
}

/// Kind of audio content in a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AudioKind {
    Wake,
    SteadyTones,
    Reversed,
    WrongBand,
    SingleWord,
    LowPartialOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LipKind {
    Speaking,
    Static,
    Talking,
}

/// Latent description of a clip, fixed by `(label, seed)` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub label: u8,
    pub audio_kind: AudioKind,
    pub events: Vec<ToneEvent>,
    pub lip_kind: LipKind,
    /// Mouth opening per video frame, in `[0, 1]`.
    pub aperture: Vec<f64>,
}

/// One labeled clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip: AudioClip,
    pub lips: LipFrames,
    pub label: u8,
    pub snr: Snr,
    pub seed: u64,
}

pub const SYLLABLE_SECONDS: f64 = 0.2;
pub const SYLLABLE_GAP: f64 = 0.08;
const WAKE_PARTIALS: [Partial; 2] = [
    Partial {
        f0: 500.0,
        f1: 900.0,
    },
    Partial {
        f0: 1500.0,
        f1: 2300.0,
    },
];

fn content_rng(label: u8, seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(label) << 63));
    r.set_stream(1);
    r
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(2);
    r
}

fn syllables(
    onset: f64,
    count: usize,
    dur: f64,
    gap: f64,
    amp: f64,
    partials: &[Partial],
) -> Vec<ToneEvent> {
    (0..count)
        .map(|i| ToneEvent {
            onset: onset + i as f64 * (dur + gap),
            duration: dur,
            amplitude: amp,
            partials: partials.to_vec(),
        })
        .collect()
}

/// The two-syllable wake pattern starting at `onset`.
pub fn wake_events(onset: f64, amplitude: f64) -> Vec<ToneEvent> {
    syllables(
        onset,
        2,
        SYLLABLE_SECONDS,
        SYLLABLE_GAP,
        amplitude,
        &WAKE_PARTIALS,
    )
}

pub fn wake_span() -> f64 {
    2.0 * SYLLABLE_SECONDS + SYLLABLE_GAP
}

fn random_onset(rng: &mut ChaCha8Rng, span: f64) -> f64 {
    rng.random_range(0.08..(CLIP_SECONDS - span - 0.08))
}

fn bump_track(frames: usize, bumps: &[(f64, f64, f64)], rest: f64) -> Vec<f64> {
    (0..frames)
        .map(|i| {
            let t = (i as f64 + 0.5) / FPS;
            let open = bumps
                .iter()
                .filter(|(s, d, _)| t >= *s && t < s + d)
                .map(|(s, d, peak)| peak * (PI * (t - s) / d).sin())
                .fold(0.0, f64::max);
            (rest + open).min(1.0)
        })
        .collect()
}

pub fn plan_sample(label: u8, seed: u64) -> Result<SamplePlan> {
    if label > 1 {
        return Err(Error::contract(format!(
            "label must be 0 or 1, got {label}"
        )));
    }
    let mut rng = content_rng(label, seed);
    let amp = rng.random_range(0.5..0.9);
    let frames = video_frames();
    let rest = rng.random_range(0.03..0.1);
    if label == 1 {
        let onset = random_onset(&mut rng, wake_span());
        let events = wake_events(onset, amp);
        let bumps: Vec<_> = events
            .iter()
            .map(|e| (e.onset, e.duration, rng.random_range(0.7..0.9)))
            .collect();
        return Ok(SamplePlan {
            label,
            audio_kind: AudioKind::Wake,
            events,
            lip_kind: LipKind::Speaking,
            aperture: bump_track(frames, &bumps, rest),
        });
    }
    let audio_kind = match rng.random_range(0..5) {
        0 => AudioKind::SteadyTones,
        1 => AudioKind::Reversed,
        2 => AudioKind::WrongBand,
        3 => AudioKind::SingleWord,
        _ => AudioKind::LowPartialOnly,
    };
    let events = match audio_kind {
        AudioKind::SteadyTones => {
            let n = rng.random_range(1..=2);
            let dur = rng.random_range(0.15..0.35);
            let onset = random_onset(&mut rng, n as f64 * (dur + SYLLABLE_GAP));
            let a = rng.random_range(400.0..1200.0);
            let b = rng.random_range(1300.0..2600.0);
            syllables(
                onset,
                n,
                dur,
                SYLLABLE_GAP,
                amp,
                &[Partial { f0: a, f1: a }, Partial { f0: b, f1: b }],
            )
        }
        AudioKind::Reversed => {
            let parts: Vec<Partial> = WAKE_PARTIALS
                .iter()
                .map(|p| Partial { f0: p.f1, f1: p.f0 })
                .collect();
            let onset = random_onset(&mut rng, wake_span());
            syllables(onset, 2, SYLLABLE_SECONDS, SYLLABLE_GAP, amp, &parts)
        }
        AudioKind::WrongBand => {
            let onset = random_onset(&mut rng, wake_span());
            let parts = [
                Partial {
                    f0: 250.0,
                    f1: 420.0,
                },
                Partial {
                    f0: 2800.0,
                    f1: 3600.0,
                },
            ];
            syllables(onset, 2, SYLLABLE_SECONDS, SYLLABLE_GAP, amp, &parts)
        }
        AudioKind::SingleWord => {
            let onset = random_onset(&mut rng, SYLLABLE_SECONDS);
            syllables(onset, 1, SYLLABLE_SECONDS, 0.0, amp, &WAKE_PARTIALS)
        }
        AudioKind::LowPartialOnly => {
            let onset = random_onset(&mut rng, wake_span());
            syllables(
                onset,
                2,
                SYLLABLE_SECONDS,
                SYLLABLE_GAP,
                amp,
                &WAKE_PARTIALS[..1],
            )
        }
        AudioKind::Wake => unreachable!(),
    };
    let (lip_kind, aperture) = if rng.random_bool(0.5) {
        let jitter = Normal::new(0.0, 0.01).expect("valid sigma");
        let track = (0..frames)
            .map(|_| (rest + jitter.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        (LipKind::Static, track)
    } else {
        let spread = rng.random_range(0.1..0.3);
        let track = (0..frames)
            .map(|_| (rest + spread * rng.random::<f64>()).min(1.0))
            .collect();
        (LipKind::Talking, track)
    };
    Ok(SamplePlan {
        label,
        audio_kind,
        events,
        lip_kind,
        aperture,
    })
}

/// Renders tone events into a waveform of `n` samples.
pub fn render_events(events: &[ToneEvent], n: usize) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0; n];
    for e in events {
        let start = (e.onset * sr).round() as usize;
        let len = (e.duration * sr).round() as usize;
        let per_partial = e.amplitude / e.partials.len() as f64;
        for (i, o) in out.iter_mut().skip(start).take(len).enumerate() {
            let t = i as f64 / sr;
            let env = (PI * t / e.duration).sin();
            let mut v = 0.0;
            for p in &e.partials {
                let phase = 2.0 * PI * (p.f0 * t + 0.5 * (p.f1 - p.f0) * t * t / e.duration);
                v += phase.sin();
            }
            *o += env * per_partial * v;
        }
    }
    out
}

/// Pink-ish noise from a three-pole filter over white Gaussian noise.
pub fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let white = Normal::new(0.0, 1.0).expect("valid sigma");
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w: f64 = white.sample(rng);
            b0 = 0.99765 * b0 + w * 0.099_046;
            b1 = 0.963 * b1 + w * 0.296_516_4;
            b2 = 0.57 * b2 + w * 1.052_691_3;
            (b0 + b1 + b2 + w * 0.1848) * 0.05
        })
        .collect()
}

/// Mixing noise: pink noise plus randomly gated tone bursts.
pub fn babble_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = pink_noise(rng, n);
    let bursts = rng.random_range(2..=5);
    let events: Vec<ToneEvent> = (0..bursts)
        .map(|_| {
            let duration = rng.random_range(0.08..0.3);
            let f0 = rng.random_range(300.0..3000.0);
            let f1 = f0 * rng.random_range(0.7..1.4);
            ToneEvent {
                onset: rng.random_range(0.0..(CLIP_SECONDS - duration)),
                duration,
                amplitude: rng.random_range(0.1..0.4),
                partials: vec![Partial { f0, f1 }],
            }
        })
        .collect();
    for (o, v) in out.iter_mut().zip(render_events(&events, n)) {
        *o += v;
    }
    out
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Gain applied to `noise` so that the clean-to-noise power ratio equals
/// `snr_db`.
pub fn noise_gain(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    let pc = mean_square(clean);
    let pn = mean_square(noise);
    if pc == 0.0 {
        return Err(Error::contract("clean signal has zero power"));
    }
    if pn == 0.0 {
        return Err(Error::contract("noise has zero power"));
    }
    Ok((pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `clean + g * noise` at the requested SNR, scaled down to a peak of 1 if
/// it would clip.
pub fn mix_noise(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if clean.len() != noise.len() {
        return Err(Error::shape(
            "mix_noise",
            format!("{} vs {} samples", clean.len(), noise.len()),
        ));
    }
    let g = noise_gain(clean, noise, snr_db)?;
    let mut out: Vec<f64> = clean.iter().zip(noise).map(|(c, n)| c + g * n).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(out)
}

/// Renders one grayscale mouth crop with the given opening.
pub fn render_lip_frame(aperture: f64, shade: f64, rng: &mut ChaCha8Rng) -> RawFrame {
    let s = RAW_LIP_SIZE;
    let (cx, cy) = (s as f64 / 2.0, s as f64 * 0.55);
    let half_w = s as f64 * 0.24;
    let lip = 5.0;
    let open = 1.5 + aperture * s as f64 * 0.16;
    let grain = Normal::new(0.0, 0.015).expect("valid sigma");
    let mut pixels = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let dx = (x as f64 + 0.5 - cx) / half_w;
            let inner = ((dx * dx) + ((y as f64 + 0.5 - cy) / open).powi(2)).sqrt();
            let outer = ((dx * dx) * 0.85 + ((y as f64 + 0.5 - cy) / (open + lip)).powi(2)).sqrt();
            // Soft edges, about one pixel wide.
            let in_mouth = (1.0 - (inner - 1.0) * half_w.min(open * 4.0)).clamp(0.0, 1.0);
            let on_lip = (1.0 - (outer - 1.0) * half_w).clamp(0.0, 1.0);
            let skin = shade + 0.05 * (y as f64 / s as f64);
            let v = skin * (1.0 - on_lip) + 0.72 * (on_lip - in_mouth).max(0.0) + 0.08 * in_mouth;
            pixels.push((v + grain.sample(rng)).clamp(0.0, 1.0));
        }
    }
    RawFrame {
        height: s,
        width: s,
        pixels,
    }
}

/// Deterministic in `(label, snr, seed)`. The clean content depends only
/// on `(label, seed)`, so the same seed at another SNR yields the same clip
/// under different noise.
pub fn synth_sample(label: u8, snr: Snr, seed: u64) -> Result<Sample> {
    let plan = plan_sample(label, seed)?;
    let n = clip_samples();
    let mut rng = content_rng(label, seed);
    rng.set_stream(3);
    let mut clean = render_events(&plan.events, n);
    for (c, b) in clean.iter_mut().zip(pink_noise(&mut rng, n)) {
        *c += 0.1 * b;
    }
    let mixed = match snr {
        Snr::Clean => {
            let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 1.0 {
                clean.iter_mut().for_each(|v| *v /= peak);
            }
            clean
        }
        Snr::Db(db) => {
            let noise = babble_noise(&mut noise_rng(seed), n);
            mix_noise(&clean, &noise, f64::from(db))?
        }
    };
    let shade = rng.random_range(0.45..0.6);
    let raw: Vec<RawFrame> = plan
        .aperture
        .iter()
        .map(|&a| render_lip_frame(a, shade, &mut rng))
        .collect();
    let mut lips = preprocess_lip(&raw)?;
    // Stored at 32-bit precision, so generated and reloaded clips agree.
    lips.frames
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = f64::from(*v as f32));
    Ok(Sample {
        clip: AudioClip {
            samples: mixed.iter().map(|&v| v as f32).collect(),
            sample_rate: SAMPLE_RATE,
        },
        lips,
        label,
        snr,
        seed,
    })
}
