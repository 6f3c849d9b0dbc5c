mod common;

use proptest::prelude::*;
use rand::Rng;

use avwake::features::{
    extract_fbank, hz_to_mel, mel_to_hz, normalize_global, preprocess_lip, AudioClip, FbankConfig,
    FbankExtractor, FbankStats, RawFrame, LIP_SIZE,
};

use common::rng;

fn noise_clip(seed: u64, n: usize, amp: f32) -> AudioClip {
    let mut r = rng(seed);
    AudioClip {
        samples: (0..n).map(|_| amp * r.random_range(-1.0f32..1.0)).collect(),
        sample_rate: 16_000,
    }
}

#[test]
fn mel_scale_round_trips() {
    for hz in [0.0, 100.0, 1000.0, 4000.0, 8000.0] {
        assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
    }
}

#[test]
fn corpus_frames_are_128_by_40() {
    let f = extract_fbank(&noise_clip(1, 20_800, 0.3), &FbankConfig::default()).unwrap();
    assert_eq!((f.time(), f.dims()), (128, 40));
    assert!(!f.normalized);
}

#[test]
fn normalized_training_corpus_is_standard() {
    let fx = FbankExtractor::new(FbankConfig::default()).unwrap();
    let feats: Vec<_> = (0..12)
        .map(|s| {
            fx.extract(&noise_clip(s, 6400, 0.05 + 0.05 * s as f32))
                .unwrap()
        })
        .collect();
    let stats = FbankStats::from_corpus(&feats).unwrap();
    let normed: Vec<_> = feats
        .iter()
        .map(|f| normalize_global(f, &stats).unwrap())
        .collect();
    let again = FbankStats::from_corpus(&normed).unwrap();
    for (m, s) in again.mean.iter().zip(&again.std) {
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6, "mean {m} std {s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hop_shift_shifts_frames(seed in 0u64..1 << 40) {
        let cfg = FbankConfig::default();
        let hop = cfg.hop_len();
        let clip = noise_clip(seed, 4000 + hop, 0.4);
        let shifted = AudioClip { samples: clip.samples[hop..].to_vec(), sample_rate: 16_000 };
        let a = extract_fbank(&clip, &cfg).unwrap();
        let b = extract_fbank(&shifted, &cfg).unwrap();
        let d = a.dims();
        for t in 0..b.time() {
            for k in 0..d {
                let (x, y) = (a.frames.data()[(t + 1) * d + k], b.frames.data()[t * d + k]);
                prop_assert!((x - y).abs() <= 1e-9, "frame {t} band {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn scaling_up_never_lowers_energies(seed in 0u64..1 << 40, c in 1.0f32..4.0) {
        let cfg = FbankConfig::default();
        let clip = noise_clip(seed, 3200, 0.2);
        let loud = AudioClip { samples: clip.samples.iter().map(|v| v * c).collect(), sample_rate: 16_000 };
        let a = extract_fbank(&clip, &cfg).unwrap();
        let b = extract_fbank(&loud, &cfg).unwrap();
        prop_assert!(a.frames.data().iter().zip(b.frames.data()).all(|(x, y)| y >= x));
    }

    #[test]
    fn resized_lips_stay_within_input_range(seed in 0u64..1 << 40, size in 2usize..130) {
        let mut r = rng(seed);
        let pixels: Vec<f64> = (0..size * size).map(|_| r.random_range(0.2..0.7)).collect();
        let (lo, hi) = pixels.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let out = preprocess_lip(&[RawFrame { height: size, width: size, pixels }]).unwrap();
        prop_assert_eq!(out.frames.shape(), &[1, 1, LIP_SIZE, LIP_SIZE]);
        prop_assert!(out.frames.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
