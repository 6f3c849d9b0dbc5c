//! Log-mel filterbank features of one positive clip, normalized with
//! statistics from a handful of training clips.

use avwake::corpus::{synth_sample, Snr};
use avwake::features::{normalize_global, FbankConfig, FbankExtractor, FbankStats};

fn main() -> avwake::Result<()> {
    let fx = FbankExtractor::new(FbankConfig::default())?;
    let train: Vec<_> = (0..16)
        .map(|seed| fx.extract(&synth_sample((seed % 2) as u8, Snr::Db(0), seed)?.clip))
        .collect::<avwake::Result<_>>()?;
    let stats = FbankStats::from_corpus(&train)?;

    let clip = synth_sample(1, Snr::Clean, 1234)?.clip;
    let feats = normalize_global(&fx.extract(&clip)?, &stats)?;
    println!(
        "{} samples -> {} frames x {} mel bands",
        clip.samples.len(),
        feats.time(),
        feats.dims()
    );

    // Frame energy profile: the wake word shows up as two loud stretches.
    let d = feats.dims();
    let energy: Vec<f64> = feats
        .frames
        .data()
        .chunks(d)
        .map(|f| f.iter().sum::<f64>() / d as f64)
        .collect();
    let (lo, hi) = energy
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    for (t, e) in energy.iter().enumerate().step_by(4) {
        let bar = ((e - lo) / (hi - lo) * 50.0) as usize;
        println!("{:>4} ms {}", t * 10, "#".repeat(bar));
    }
    Ok(())
}
