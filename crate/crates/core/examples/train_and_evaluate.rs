//! Trains the audio-only classifier on a reduced corpus, calibrates its
//! threshold on dev and reports FRR and per-SNR FAR on test.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- [audio|video|av]
//! ```

use avwake::corpus::{CorpusConfig, Split};
use avwake::harness::{
    evaluate_model, normalized, prepare, threshold_for, train_model, Experiment, ExperimentConfig,
    TrainSettings,
};
use avwake::models::Modality;

fn main() -> avwake::Result<()> {
    let modality = match std::env::args().nth(1).as_deref() {
        Some("video") => Modality::Video,
        Some("av") => Modality::Av,
        _ => Modality::Audio,
    };
    let mut cfg = ExperimentConfig::new(modality);
    cfg.corpus = CorpusConfig::with_counts(42, 400, 120, 120);
    cfg.train = TrainSettings {
        epochs: Some(3),
        ..Default::default()
    };
    let exp = Experiment::new(cfg.clone())?;

    let data = prepare(&exp)?;
    let (model, logs) = train_model(&exp, &data.train, data.stats.clone())?;
    for l in &logs {
        println!("epoch {} mean loss {:.4}", l.epoch + 1, l.mean_loss);
    }

    let threshold = threshold_for(&model, &data.dev, cfg.threshold)?;
    let test = normalized(
        &exp.features(Split::Test, exp.feature_options(modality))?,
        &model.stats,
    )?;
    let report = evaluate_model(&model, &test, &exp.strata(Split::Test), threshold)?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
    println!(
        "threshold {threshold:.4}: FRR {} FAR {}",
        pct(report.overall.frr()),
        pct(report.overall.far())
    );
    for (snr, c) in &report.strata {
        println!(
            "  {snr:>3} dB: FAR {} over {} negatives",
            pct(c.far()),
            c.n_non_wake
        );
    }
    Ok(())
}
