//! Prunes the lip encoder of the audio-visual model first, then freezes it
//! and prunes the fusion back end.

use avwake::corpus::CorpusConfig;
use avwake::harness::{prepare, Experiment, ExperimentConfig, TrainSettings};
use avwake::models::{Modality, ENCODER_PREFIX};
use avwake::pruning::{
    scoped_sparsity, sequential_av_prune, sparsity_report, PruneConfig, PruneHooks, PruneScope,
    SequentialConfig,
};

fn main() -> avwake::Result<()> {
    let mut cfg = ExperimentConfig::new(Modality::Av);
    cfg.corpus = CorpusConfig::with_counts(3, 64, 16, 16);
    cfg.train = TrainSettings {
        batch_size: Some(16),
        ..Default::default()
    };
    let exp = Experiment::new(cfg)?;
    let data = prepare(&exp)?;
    let mut model = exp.init_model()?;
    model.stats = data.stats.clone();

    let backend = PruneScope::prefix(model.backend_prefix());
    let seq = SequentialConfig {
        encoder: PruneConfig {
            iterations: 6,
            rate: 0.25,
            initial_epochs: 2,
            scope: PruneScope::prefix(ENCODER_PREFIX),
            ..PruneConfig::default()
        },
        backend: PruneConfig {
            iterations: 4,
            rate: 0.2,
            initial_epochs: 1,
            scope: backend.clone(),
            ..PruneConfig::default()
        },
    };
    let out = sequential_av_prune(
        &mut model,
        &data.train,
        &seq,
        &exp.config.train_config(),
        &mut PruneHooks::default(),
    )?;

    let enc = PruneScope::prefix(ENCODER_PREFIX);
    println!(
        "encoder phase: {} iterations, {:.1}% of encoder weights pruned",
        out.encoder.iterations,
        100.0 * scoped_sparsity(&model.registry, &enc)
    );
    println!(
        "backend phase: {} iterations, {:.1}% of back-end weights pruned",
        out.backend.iterations,
        100.0 * scoped_sparsity(&model.registry, &backend)
    );
    let r = sparsity_report(&model.registry);
    println!(
        "whole model: {} of {} weights pruned ({:.1}%)",
        r.total().pruned,
        r.total().total,
        r.total().percent()
    );
    Ok(())
}
