//! Iterative magnitude pruning with one fine-tuning epoch per event on the
//! audio model, compared with a one-shot prune-and-rewind baseline at the
//! same sparsity.

use avwake::corpus::{CorpusConfig, Split};
use avwake::harness::{
    dev_evaluator, evaluate_model, normalized, prepare, threshold_for, Experiment,
    ExperimentConfig, ThresholdPolicy, TrainSettings,
};
use avwake::models::Modality;
use avwake::pruning::{
    lth_if_run, lth_oneshot_run, sparsity_report, PruneConfig, PruneHooks, PruneScope,
};

fn main() -> avwake::Result<()> {
    let mut cfg = ExperimentConfig::new(Modality::Audio);
    cfg.corpus = CorpusConfig::with_counts(7, 300, 90, 90);
    cfg.train = TrainSettings {
        batch_size: Some(16),
        ..Default::default()
    };
    let exp = Experiment::new(cfg)?;
    let data = prepare(&exp)?;
    let train_cfg = exp.config.train_config();
    let policy = ThresholdPolicy::Calibrate { target: 0.97 };

    let prune = PruneConfig {
        iterations: 11,
        rate: 0.1,
        initial_epochs: 4,
        ..PruneConfig::default()
    };
    let mut lth = exp.init_model()?;
    lth.stats = data.stats.clone();
    let mut hooks = PruneHooks {
        evaluate: Some(dev_evaluator(&data.dev, exp.strata(Split::Dev), policy)),
        on_step: None,
    };
    let state = lth_if_run(&mut lth, &data.train, &prune, &train_cfg, &mut hooks)?;
    drop(hooks);
    print!("{}", state.history_csv());

    let sparsity = state.final_sparsity();
    let mut one_shot = exp.init_model()?;
    one_shot.stats = data.stats.clone();
    lth_oneshot_run(
        &mut one_shot,
        &data.train,
        sparsity,
        &PruneScope::all(),
        &train_cfg,
    )?;

    let raw_test = exp.features(Split::Test, exp.feature_options(Modality::Audio))?;
    let test = normalized(&raw_test, &data.stats)?;
    for (name, model) in [("lth-if", &lth), ("one-shot", &one_shot)] {
        let t = threshold_for(model, &data.dev, policy)?;
        let r = evaluate_model(model, &test, &exp.strata(Split::Test), t)?;
        let s = sparsity_report(&model.registry);
        println!(
            "{name}: {:.1}% pruned (conv {:.1} / lstm {:.1} / fc {:.1}), test FAR {:.2}%",
            s.total().percent(),
            s.conv.percent(),
            s.lstm.percent(),
            s.fc.percent(),
            100.0 * r.overall.far().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
