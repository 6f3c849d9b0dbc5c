mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use avwake::corpus::{
    build_corpus, clip_samples, manifest_path, mix_noise, noise_gain, plan_sample, render_events,
    synth_sample, video_frames, wake_events, wake_span, CorpusConfig, GeneratedSplit, Manifest,
    RecordSplit, SampleSource, Snr, Split, CLIP_SECONDS, FPS, SAMPLE_RATE,
};
use avwake::Error;

use common::{rng, small_corpus};

#[test]
fn same_arguments_give_identical_samples() {
    for (label, snr) in [(1, Snr::Clean), (0, Snr::Db(-5)), (1, Snr::Db(5))] {
        let a = synth_sample(label, snr, 77).unwrap();
        let b = synth_sample(label, snr, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clip.samples.len(), clip_samples());
        assert_eq!(
            a.clip.samples.len(),
            (f64::from(SAMPLE_RATE) * CLIP_SECONDS) as usize
        );
        assert_eq!(a.lips.frames.shape(), &[video_frames(), 1, 88, 88]);
        assert!(a.clip.samples.iter().all(|v| v.abs() <= 1.0));
    }
}

/// Peak normalized cross-correlation of `x` against `template` over all lags.
struct Correlator {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
    len: usize,
    norm: f64,
}

impl Correlator {
    fn new(template: &[f64], n: usize) -> Self {
        let size = (n + template.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        let ifft = planner.plan_fft_inverse(size);
        let mut spectrum: Vec<Complex<f64>> =
            template.iter().map(|&v| Complex::new(v, 0.0)).collect();
        spectrum.resize(size, Complex::new(0.0, 0.0));
        fft.process(&mut spectrum);
        let norm = template.iter().map(|v| v * v).sum::<f64>().sqrt();
        Correlator {
            fft,
            ifft,
            spectrum,
            len: template.len(),
            norm,
        }
    }

    fn peak(&self, x: &[f64]) -> f64 {
        let size = self.spectrum.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        for (b, t) in buf.iter_mut().zip(&self.spectrum) {
            *b *= t.conj();
        }
        self.ifft.process(&mut buf);
        let mut energy = vec![0.0; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            energy[i + 1] = energy[i] + v * v;
        }
        (0..=x.len() - self.len)
            .map(|lag| {
                let window = (energy[lag + self.len] - energy[lag]).max(1e-12).sqrt();
                buf[lag].re / size as f64 / (window * self.norm)
            })
            .fold(f64::MIN, f64::max)
    }
}

#[test]
fn wake_template_separates_clean_positives() {
    let sr = f64::from(SAMPLE_RATE);
    let template = render_events(&wake_events(0.0, 1.0), (wake_span() * sr).ceil() as usize);
    let corr = Correlator::new(&template, clip_samples());
    let peak = |label: u8, seed: u64| {
        let s = synth_sample(label, Snr::Clean, seed).unwrap();
        let x: Vec<f64> = s.clip.samples.iter().map(|&v| f64::from(v)).collect();
        corr.peak(&x)
    };
    let mut neg: Vec<f64> = (0..1000).map(|i| peak(0, 10_000 + i)).collect();
    neg.sort_by(f64::total_cmp);
    let p99 = neg[989];
    let pos: Vec<f64> = (0..1000).map(|i| peak(1, 20_000 + i)).collect();
    let below = pos.iter().filter(|&&p| p <= p99).count();
    assert_eq!(
        below, 0,
        "{below} positives at or under the negative 99th percentile {p99}"
    );
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Mouth opening of a wake word centred in the clip.
fn canonical_aperture() -> Vec<f64> {
    let onset = (CLIP_SECONDS - wake_span()) / 2.0;
    (0..video_frames())
        .map(|i| {
            let t = (i as f64 + 0.5) / FPS;
            wake_events(onset, 1.0)
                .iter()
                .filter(|e| t >= e.onset && t < e.onset + e.duration)
                .map(|e| 0.8 * (std::f64::consts::PI * (t - e.onset) / e.duration).sin())
                .fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn negative_lips_do_not_follow_the_wake_trajectory() {
    let canon = canonical_aperture();
    let n = 1000;
    let mean: f64 = (0..n)
        .map(|s| pearson(&plan_sample(0, s).unwrap().aperture, &canon).abs())
        .sum::<f64>()
        / n as f64;
    assert!(mean < 0.2, "mean |correlation| {mean}");
}

#[test]
fn positive_lips_open_during_the_wake_word() {
    for seed in 0..200 {
        let plan = plan_sample(1, seed).unwrap();
        let peak = plan
            .aperture
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
        let t = (peak.0 as f64 + 0.5) / FPS;
        assert_eq!(plan.events.len(), 2);
        let (start, end) = (
            plan.events[0].onset,
            plan.events[1].onset + plan.events[1].duration,
        );
        assert!(
            t >= start && t <= end,
            "seed {seed}: lips peak at {t}, wake word {start}..{end}"
        );
    }
}

#[test]
fn gain_examples() {
    let clean = vec![0.5, -0.5, 0.5, -0.5];
    assert_eq!(
        noise_gain(&clean, &[0.5, 0.5, -0.5, -0.5], 0.0).unwrap(),
        1.0
    );
    assert_eq!(noise_gain(&[1.0, -1.0], &[0.5, 0.5], 0.0).unwrap(), 2.0);
    let g = noise_gain(&clean, &[0.5, 0.5, -0.5, -0.5], 100.0).unwrap();
    assert!((g - 1e-5).abs() < 1e-18);
    let mixed = mix_noise(&clean, &[0.5, 0.5, -0.5, -0.5], 100.0).unwrap();
    for (m, c) in mixed.iter().zip(&clean) {
        assert!(((m - c) / c).abs() < 1e-4);
    }
    assert!(matches!(
        noise_gain(&clean, &[0.0; 4], 5.0),
        Err(Error::Contract(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn measured_snr_matches_request(seed in 0u64..1 << 40, snr in -10.0f64..20.0) {
        let mut r = rng(seed);
        let clean: Vec<f64> = (0..400).map(|_| r.random_range(-0.2..0.2)).collect();
        let noise: Vec<f64> = (0..400).map(|_| r.random_range(-0.2..0.2)).collect();
        let mixed = mix_noise(&clean, &noise, snr).unwrap();
        prop_assume!(mixed.iter().all(|v| v.abs() < 1.0));
        let pc: f64 = clean.iter().map(|v| v * v).sum();
        let pn: f64 = mixed.iter().zip(&clean).map(|(m, c)| (m - c) * (m - c)).sum();
        prop_assert!((10.0 * (pc / pn).log10() - snr).abs() < 0.01);
    }
}

#[test]
fn empty_config_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_corpus(&small_corpus(1, 0, 0, 0), dir.path(), false).unwrap();
    assert!(m.entries.is_empty());
    let text = std::fs::read_to_string(manifest_path(dir.path())).unwrap();
    assert_eq!(Manifest::from_csv(&text).unwrap(), m);
}

#[test]
fn default_splits_are_balanced() {
    let cfg = CorpusConfig::default();
    for (split, n) in [(Split::Train, 2000), (Split::Dev, 400), (Split::Test, 400)] {
        let e = cfg.entries(split);
        assert_eq!(e.len(), n);
        assert_eq!(e.iter().filter(|x| x.label == 1).count(), n / 2);
    }
}

#[test]
fn test_split_is_stratified_by_snr() {
    let e = CorpusConfig::default().entries(Split::Test);
    for snr in [Snr::Db(-5), Snr::Db(0), Snr::Db(5)] {
        for label in [0, 1] {
            let k = e
                .iter()
                .filter(|x| x.snr == snr && x.label == label)
                .count() as i64;
            assert!((k - 200 / 3).abs() <= 1, "{snr} dB label {label}: {k}");
        }
    }
}

#[test]
fn split_seeds_are_disjoint() {
    let cfg = CorpusConfig::default();
    let seeds: Vec<BTreeSet<u64>> = Split::ALL
        .iter()
        .map(|&s| cfg.entries(s).iter().map(|e| e.seed).collect())
        .collect();
    for i in 0..3 {
        assert_eq!(seeds[i].len(), cfg.split(Split::ALL[i]).count);
        for j in i + 1..3 {
            assert!(seeds[i].is_disjoint(&seeds[j]));
        }
    }
}

#[test]
fn corpus_files_are_reproducible_and_readable() {
    let cfg = small_corpus(5, 6, 4, 4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = build_corpus(&cfg, a.path(), false).unwrap();
    build_corpus(&cfg, b.path(), false).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for n in &names {
        assert_eq!(
            std::fs::read(a.path().join(n)).unwrap(),
            std::fs::read(b.path().join(n)).unwrap(),
            "{n:?}"
        );
    }
    assert!(matches!(
        build_corpus(&cfg, a.path(), false),
        Err(Error::OutputExists(_))
    ));
    assert_eq!(build_corpus(&cfg, a.path(), true).unwrap(), ma);

    for split in Split::ALL {
        let stored = RecordSplit::open(a.path(), split).unwrap();
        let generated = GeneratedSplit::new(&cfg, split);
        assert_eq!(stored.entries().len(), generated.entries().len());
        for i in 0..stored.entries().len() {
            let (s, g) = (stored.sample(i).unwrap(), generated.sample(i).unwrap());
            assert_eq!((s.label, s.snr, s.seed), (g.label, g.snr, g.seed));
            assert_eq!(s.clip, g.clip);
            assert_eq!(s.lips, g.lips);
        }
    }
}
