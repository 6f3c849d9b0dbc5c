use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::mask::{
    event_removal, install_masks, magnitude_mask, mask_to_count, scoped_counts, PruneScope, Ranking,
};
use crate::corpus::Snr;
use crate::error::{Error, Result};
use crate::models::{BatchSource, TrainConfig, Trainer, WwsModel, ENCODER_PREFIX};
use crate::nn::ParamRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    /// Total iterations T; T - 1 pruning events.
    pub iterations: usize,
    /// Fraction of surviving scoped weights removed per event.
    pub rate: f64,
    /// Epochs in the first iteration; later iterations run one.
    pub initial_epochs: usize,
    pub scope: PruneScope,
    pub ranking: Ranking,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            iterations: 21,
            rate: 0.05,
            initial_epochs: 5,
            scope: PruneScope::all(),
            ranking: Ranking::Global,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(Error::Config(format!(
                "pruning needs T >= 2 iterations, got {}",
                self.iterations
            )));
        }
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "prune rate {} outside [0, 1)",
                self.rate
            )));
        }
        if self.initial_epochs == 0 {
            return Err(Error::Config("initial epoch count must be positive".into()));
        }
        Ok(())
    }
}

/// Dev-set measurements taken after each iteration's training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DevPoint {
    pub frr: Option<f64>,
    pub far: Vec<(Snr, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub t: usize,
    /// Sparsity of the weights trained during iteration `t`.
    pub scoped_sparsity: f64,
    pub global_sparsity: f64,
    /// Mean loss of the iteration's last epoch.
    pub train_loss: f64,
    pub dev: DevPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: usize,
    /// One-based epoch within iteration `t`.
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Bookkeeping of one LTH-IF run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneState {
    pub t: usize,
    pub iterations: usize,
    pub initial_epochs: usize,
    pub rate: f64,
    pub scope: PruneScope,
    /// Scoped pruned count after each pruning event, starting with the
    /// count before the first.
    pub pruned_counts: Vec<usize>,
    pub scoped_total: usize,
    pub epochs: Vec<EpochRecord>,
    pub history: Vec<HistoryRow>,
}

impl PruneState {
    pub fn final_sparsity(&self) -> f64 {
        *self.pruned_counts.last().unwrap_or(&0) as f64 / self.scoped_total.max(1) as f64
    }

    pub fn epochs_in(&self, t: usize) -> usize {
        self.epochs.iter().filter(|e| e.t == t).count()
    }

    /// History CSV: `t, scoped_sparsity, global_sparsity, train_loss,
    /// dev_FRR` and one `dev_FAR_<snr>dB` column per SNR.
    pub fn history_csv(&self) -> String {
        let snrs: Vec<Snr> = self
            .history
            .first()
            .map(|r| r.dev.far.iter().map(|(s, _)| *s).collect())
            .unwrap_or_default();
        let mut out = String::from("t,scoped_sparsity,global_sparsity,train_loss,dev_FRR");
        for s in &snrs {
            let _ = write!(out, ",dev_FAR_{s}dB");
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for r in &self.history {
            let _ = write!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                r.t,
                r.scoped_sparsity,
                r.global_sparsity,
                r.train_loss,
                cell(r.dev.frr)
            );
            for (_, v) in &r.dev.far {
                let _ = write!(out, ",{}", cell(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Pruned fraction over every prunable weight of the model.
pub fn global_sparsity(reg: &ParamRegistry) -> f64 {
    super::mask::scoped_sparsity(reg, &PruneScope::all())
}

/// Optional per-iteration dev evaluation and per-step observation.
#[derive(Default)]
pub struct PruneHooks<'a> {
    pub evaluate: Option<Box<dyn FnMut(&WwsModel) -> Result<DevPoint> + 'a>>,
    pub on_step: Option<Box<dyn FnMut(&ParamRegistry) -> Result<()> + 'a>>,
}

fn run_iterations(
    model: &mut WwsModel,
    train: &dyn BatchSource,
    cfg: &PruneConfig,
    train_cfg: &TrainConfig,
    frozen: Option<&str>,
    hooks: &mut PruneHooks<'_>,
) -> Result<PruneState> {
    cfg.validate()?;
    let (start, total) = scoped_counts(&model.registry, &cfg.scope);
    if total == 0 {
        return Err(Error::contract(format!(
            "pruning scope {} selects no weights",
            cfg.scope
        )));
    }
    let frozen_prefix = frozen.map(|p| format!("{p}."));
    let mut trainer = Trainer::new(train_cfg.clone())?
        .with_trainable(move |n: &str| frozen_prefix.as_deref().is_none_or(|p| !n.starts_with(p)));
    if let Some(hook) = hooks.on_step.as_mut() {
        trainer = trainer.with_step_hook(move |r: &ParamRegistry| hook(r));
    }
    let mut state = PruneState {
        t: 0,
        iterations: cfg.iterations,
        initial_epochs: cfg.initial_epochs,
        rate: cfg.rate,
        scope: cfg.scope.clone(),
        pruned_counts: vec![start],
        scoped_total: total,
        epochs: Vec::new(),
        history: Vec::new(),
    };
    for t in 1..=cfg.iterations {
        state.t = t;
        let epochs = if t == 1 { cfg.initial_epochs } else { 1 };
        let mut last = f64::NAN;
        for e in 1..=epochs {
            let log = trainer.run_epoch(model, train).map_err(|err| match err {
                Error::Divergence { stage } => Error::Divergence {
                    stage: format!("pruning iteration {t}, {stage}"),
                },
                other => other,
            })?;
            last = log.mean_loss;
            state.epochs.push(EpochRecord {
                t,
                epoch: e,
                mean_loss: log.mean_loss,
            });
        }
        let (pruned, _) = scoped_counts(&model.registry, &cfg.scope);
        let dev = match hooks.evaluate.as_mut() {
            Some(f) => f(model)?,
            None => DevPoint::default(),
        };
        state.history.push(HistoryRow {
            t,
            scoped_sparsity: pruned as f64 / total as f64,
            global_sparsity: global_sparsity(&model.registry),
            train_loss: last,
            dev,
        });
        if t < cfg.iterations {
            let target = pruned + event_removal(total - pruned, cfg.rate);
            let masks = mask_to_count(&model.registry, &cfg.scope, target, cfg.ranking)?;
            install_masks(&mut model.registry, &masks)?;
            state
                .pruned_counts
                .push(scoped_counts(&model.registry, &cfg.scope).0);
        }
    }
    Ok(state)
}

/// Iterative pruning with one-epoch fine-tuning: `E` epochs, then for each
/// of the remaining `T - 1` iterations a pruning event followed by one epoch
/// from the surviving weights.
pub fn lth_if_run(
    model: &mut WwsModel,
    train: &dyn BatchSource,
    cfg: &PruneConfig,
    train_cfg: &TrainConfig,
    hooks: &mut PruneHooks<'_>,
) -> Result<PruneState> {
    run_iterations(model, train, cfg, train_cfg, None, hooks)
}

/// One-shot baseline: train `epochs`, prune once to `sparsity`, rewind the
/// survivors to their initial values and retrain `epochs` from scratch.
pub fn lth_oneshot_run(
    model: &mut WwsModel,
    train: &dyn BatchSource,
    sparsity: f64,
    scope: &PruneScope,
    train_cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    let init = model.registry.clone();
    let mut records = Vec::new();
    let mut first = Trainer::new(train_cfg.clone())?;
    for log in first.run(model, train, train_cfg.epochs)? {
        records.push(EpochRecord {
            t: 1,
            epoch: log.epoch + 1,
            mean_loss: log.mean_loss,
        });
    }
    let masks = magnitude_mask(&model.registry, scope, sparsity)?;
    model.registry = init;
    install_masks(&mut model.registry, &masks)?;
    let mut second = Trainer::new(train_cfg.clone())?;
    for log in second.run(model, train, train_cfg.epochs)? {
        records.push(EpochRecord {
            t: 2,
            epoch: log.epoch + 1,
            mean_loss: log.mean_loss,
        });
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequentialConfig {
    pub encoder: PruneConfig,
    pub backend: PruneConfig,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig {
            // 1 - 0.95^31 is about 80% of the encoder.
            encoder: PruneConfig {
                iterations: 32,
                scope: PruneScope::prefix(ENCODER_PREFIX),
                ..PruneConfig::default()
            },
            backend: PruneConfig {
                scope: PruneScope::prefix("fusion"),
                ..PruneConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialOutcome {
    pub encoder: PruneState,
    pub backend: PruneState,
}

/// Prunes the lip encoder of an audio-visual model first, then freezes its
/// weights and masks and prunes the fusion back end.
pub fn sequential_av_prune(
    model: &mut WwsModel,
    train: &dyn BatchSource,
    cfg: &SequentialConfig,
    train_cfg: &TrainConfig,
    hooks: &mut PruneHooks<'_>,
) -> Result<SequentialOutcome> {
    if model.encoder().is_none() {
        return Err(Error::contract(
            "sequential pruning needs a model with a lip encoder",
        ));
    }
    let encoder = run_iterations(model, train, &cfg.encoder, train_cfg, None, hooks)?;
    let backend = run_iterations(
        model,
        train,
        &cfg.backend,
        train_cfg,
        Some(ENCODER_PREFIX),
        hooks,
    )?;
    Ok(SequentialOutcome { encoder, backend })
}
