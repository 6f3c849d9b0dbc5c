//! The command-line workflow as library calls: corpus, training, pruning,
//! calibration, evaluation, cost tables and the report, all in one run
//! directory.

use std::path::PathBuf;

use avwake::corpus::CorpusConfig;
use avwake::harness::{
    build_report, cmd_calibrate, cmd_eval, cmd_flops, cmd_prune, cmd_synth, cmd_train,
    ExperimentConfig, Regime, RunDir, TrainSettings,
};
use avwake::models::Modality;

fn main() -> avwake::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("avwake-run"), PathBuf::from);
    let corpus_dir = root.join("corpus");
    let run = RunDir::create(&root.join("run"), true)?;

    let mut cfg = ExperimentConfig::new(Modality::Audio);
    cfg.corpus = CorpusConfig::with_counts(11, 240, 60, 60);
    cmd_synth(&cfg, &RunDir::create(&corpus_dir, true)?)?;
    cfg.corpus_dir = Some(corpus_dir);
    cfg.train = TrainSettings {
        batch_size: Some(16),
        ..Default::default()
    };
    cfg.prune.iterations = 6;
    cfg.prune.rate = 0.15;

    cmd_train(&cfg, &run)?;
    for regime in [Regime::LthIf, Regime::OneShot] {
        cfg.prune.regime = regime;
        let o = cmd_prune(&cfg, &run)?;
        println!("pruned {}", o.stem);
    }
    cmd_calibrate(&cfg, &run)?;
    for (stem, r) in cmd_eval(&cfg, &run)? {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
        println!(
            "{stem}: FRR {} FAR {}",
            pct(r.overall.frr()),
            pct(r.overall.far())
        );
    }
    cmd_flops(&cfg, &run)?;
    let report = build_report(&run)?;
    for p in &report.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
