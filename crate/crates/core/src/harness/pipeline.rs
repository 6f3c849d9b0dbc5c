use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Regime, ThresholdPolicy};
use super::metrics::{calibrate_threshold, evaluate, EvalReport};
use crate::corpus::{
    build_corpus, CorpusConfig, FeatureOptions, FeatureSet, GeneratedSplit, Manifest, RecordSplit,
    SampleSource, Snr, Split,
};
use crate::error::{Error, Result};
use crate::features::{FbankExtractor, FbankStats};
use crate::models::{BatchSource, EpochLog, Modality, Trainer, WwsModel};
use crate::nn::CostReport;
use crate::pruning::{
    lth_if_run, lth_oneshot_run, scoped_counts, sequential_av_prune, sparsity_report, DevPoint,
    EpochRecord, PruneHooks, PruneState,
};

const SCORE_BATCH: usize = 64;

/// Output directory with a single writer. Files are only replaced when
/// `overwrite` is set.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub overwrite: bool,
}

impl RunDir {
    pub fn create(path: &Path, overwrite: bool) -> Result<Self> {
        std::fs::create_dir_all(path)?;
        Ok(RunDir {
            path: path.to_path_buf(),
            overwrite,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Fails with [`Error::OutputExists`] on the first existing file.
    pub fn claim(&self, names: &[String]) -> Result<()> {
        if self.overwrite {
            return Ok(());
        }
        match names.iter().map(|n| self.file(n)).find(|p| p.exists()) {
            Some(p) => Err(Error::OutputExists(p.display().to_string())),
            None => Ok(()),
        }
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        self.claim(&[name.to_string()])?;
        let p = self.file(name);
        std::fs::write(&p, bytes)?;
        Ok(p)
    }

    /// Checkpoint stems in this directory belonging to `name`: `name`
    /// itself and `name-*`, sorted.
    pub fn stems(&self, name: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.path)? {
            let file = entry?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = file.strip_suffix(".ckpt") {
                if stem == name || stem.starts_with(&format!("{name}-")) {
                    out.push(stem.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Data access for one experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub corpus: CorpusConfig,
}

impl Experiment {
    /// Uses the corpus description stored next to `corpus_dir` when set.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = match &config.corpus_dir {
            Some(dir) => {
                let p = dir.join("corpus.json");
                let text = std::fs::read_to_string(&p).map_err(|e| {
                    Error::Config(format!("corpus {} not readable: {e}", p.display()))
                })?;
                serde_json::from_str(&text)?
            }
            None => config.corpus.clone(),
        };
        Ok(Experiment { config, corpus })
    }

    pub fn source(&self, split: Split) -> Result<Box<dyn SampleSource>> {
        Ok(match &self.config.corpus_dir {
            Some(dir) => Box::new(RecordSplit::open(dir, split)?),
            None => Box::new(GeneratedSplit::new(&self.corpus, split)),
        })
    }

    pub fn feature_options(&self, modality: Modality) -> FeatureOptions {
        FeatureOptions {
            audio: modality.uses_audio(),
            lips: modality.uses_video(),
            lip_pool: self.config.topology.encoder.input_pool,
        }
    }

    /// Unnormalized features of one split.
    pub fn features(&self, split: Split, opts: FeatureOptions) -> Result<FeatureSet> {
        let fx = FbankExtractor::new(self.config.fbank_config())?;
        FeatureSet::extract(self.source(split)?.as_ref(), &fx, opts)
    }

    /// SNR conditions of a split, in configuration order.
    pub fn strata(&self, split: Split) -> Vec<Snr> {
        self.corpus.split(split).snrs.clone()
    }

    pub fn init_model(&self) -> Result<WwsModel> {
        let c = &self.config;
        WwsModel::with_fbank(c.modality, c.topology.clone(), c.fbank_config(), c.seed)
    }
}

/// Global FBank statistics of a training split; identity without audio.
pub fn training_stats(train: &FeatureSet, n_mels: usize) -> Result<FbankStats> {
    if train.audio().is_empty() {
        Ok(FbankStats::identity(n_mels))
    } else {
        train.fbank_stats()
    }
}

/// Copy of `raw` normalized with `stats`.
pub fn normalized(raw: &FeatureSet, stats: &FbankStats) -> Result<FeatureSet> {
    let mut fs = raw.clone();
    fs.normalize(stats)?;
    Ok(fs)
}

/// Model scores for every example, in order.
pub fn score_all(model: &WwsModel, data: &FeatureSet) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(SCORE_BATCH) {
        let (input, _) = data.batch(chunk)?;
        out.extend(model.scores(&input)?);
    }
    Ok(out)
}

pub fn labels_of(data: &FeatureSet) -> Vec<u8> {
    data.labels.iter().map(|&y| u8::from(y >= 0.5)).collect()
}

pub fn snrs_of(data: &FeatureSet) -> Vec<Snr> {
    data.entries.iter().map(|e| e.snr).collect()
}

pub fn evaluate_model(
    model: &WwsModel,
    data: &FeatureSet,
    strata: &[Snr],
    threshold: f64,
) -> Result<EvalReport> {
    let scores = score_all(model, data)?;
    evaluate(&scores, &labels_of(data), &snrs_of(data), strata, threshold)
}

pub fn positive_scores(scores: &[f64], labels: &[u8]) -> Vec<f64> {
    scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(s, _)| *s)
        .collect()
}

/// Threshold from the policy, calibrated on `dev` when asked to.
pub fn threshold_for(model: &WwsModel, dev: &FeatureSet, policy: ThresholdPolicy) -> Result<f64> {
    match policy {
        ThresholdPolicy::Fixed { value } => Ok(value),
        ThresholdPolicy::Calibrate { target } => {
            let scores = score_all(model, dev)?;
            calibrate_threshold(&positive_scores(&scores, &labels_of(dev)), target)
        }
    }
}

/// Per-iteration dev measurement for pruning runs: the threshold is set on
/// dev by `policy`, then FRR and per-SNR FAR are measured on dev.
pub fn dev_evaluator<'a>(
    dev: &'a FeatureSet,
    strata: Vec<Snr>,
    policy: ThresholdPolicy,
) -> Box<dyn FnMut(&WwsModel) -> Result<DevPoint> + 'a> {
    Box::new(move |model: &WwsModel| {
        let scores = score_all(model, dev)?;
        let labels = labels_of(dev);
        let threshold = match policy {
            ThresholdPolicy::Fixed { value } => value,
            ThresholdPolicy::Calibrate { target } => {
                calibrate_threshold(&positive_scores(&scores, &labels), target)?
            }
        };
        let r = evaluate(&scores, &labels, &snrs_of(dev), &strata, threshold)?;
        Ok(DevPoint {
            frr: r.overall.frr(),
            far: r.strata.iter().map(|(s, c)| (*s, c.far())).collect(),
        })
    })
}

pub fn train_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,batches\n");
    for l in logs {
        let _ = writeln!(s, "{},{:.9},{}", l.epoch + 1, l.mean_loss, l.batches);
    }
    s
}

pub fn epochs_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("t,epoch,mean_loss\n");
    for r in records {
        let _ = writeln!(s, "{},{},{:.9}", r.t, r.epoch, r.mean_loss);
    }
    s
}

/// Trains a freshly initialised model on normalized `train` features.
pub fn train_model(
    exp: &Experiment,
    train: &FeatureSet,
    stats: FbankStats,
) -> Result<(WwsModel, Vec<EpochLog>)> {
    let mut model = exp.init_model()?;
    model.stats = stats;
    let cfg = exp.config.train_config();
    let logs = Trainer::new(cfg.clone())?.run(&mut model, train, cfg.epochs)?;
    Ok((model, logs))
}

/// Train and normalized dev features plus the statistics behind them.
pub struct PreparedData {
    pub train: FeatureSet,
    pub dev: FeatureSet,
    pub stats: FbankStats,
}

pub fn prepare(exp: &Experiment) -> Result<PreparedData> {
    let opts = exp.feature_options(exp.config.modality);
    let raw = exp.features(Split::Train, opts)?;
    let stats = training_stats(&raw, exp.config.topology.n_mels)?;
    let train = normalized(&raw, &stats)?;
    let dev = normalized(&exp.features(Split::Dev, opts)?, &stats)?;
    Ok(PreparedData { train, dev, stats })
}

/// `synth`: writes the corpus into `out`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &RunDir) -> Result<Manifest> {
    build_corpus(&cfg.corpus, &out.path, out.overwrite)
}

pub struct TrainOutcome {
    pub model: WwsModel,
    pub logs: Vec<EpochLog>,
}

/// `train`: `{name}.ckpt` and `{name}.train.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &RunDir) -> Result<TrainOutcome> {
    let name = cfg.name();
    out.claim(&[format!("{name}.ckpt"), format!("{name}.train.csv")])?;
    let exp = Experiment::new(cfg.clone())?;
    let opts = exp.feature_options(cfg.modality);
    let raw = exp.features(Split::Train, opts)?;
    let stats = training_stats(&raw, cfg.topology.n_mels)?;
    let train = normalized(&raw, &stats)?;
    let (model, logs) = train_model(&exp, &train, stats)?;
    model.save(&out.file(&format!("{name}.ckpt")))?;
    out.write(&format!("{name}.train.csv"), train_csv(&logs))?;
    Ok(TrainOutcome { model, logs })
}

#[derive(Debug)]
pub enum PruneRecord {
    Iterative(PruneState),
    Sequential {
        encoder: PruneState,
        backend: PruneState,
    },
    OneShot {
        sparsity: f64,
        epochs: Vec<EpochRecord>,
    },
}

pub struct PruneOutcome {
    pub stem: String,
    pub model: WwsModel,
    pub record: PruneRecord,
}

/// `prune`: runs the configured regime from initialisation and writes
/// `{name}-{regime}` checkpoint, epoch log, sparsity table and histories.
pub fn cmd_prune(cfg: &ExperimentConfig, out: &RunDir) -> Result<PruneOutcome> {
    let stem = format!("{}-{}", cfg.name(), cfg.prune.regime);
    let mut outputs = vec![
        format!("{stem}.ckpt"),
        format!("{stem}.train.csv"),
        format!("{stem}.sparsity.csv"),
    ];
    match cfg.prune.regime {
        Regime::LthIf => outputs.push(format!("{stem}.history.csv")),
        Regime::Sequential => {
            outputs.push(format!("{stem}.history.csv"));
            outputs.push(format!("{stem}.encoder.history.csv"));
        }
        Regime::OneShot => {}
    }
    out.claim(&outputs)?;
    let exp = Experiment::new(cfg.clone())?;
    let data = prepare(&exp)?;
    let mut model = exp.init_model()?;
    model.stats = data.stats.clone();
    let train_cfg = cfg.train_config();
    let strata = exp.strata(Split::Dev);
    let mut hooks = PruneHooks {
        evaluate: Some(dev_evaluator(&data.dev, strata, cfg.threshold)),
        on_step: None,
    };
    let record = match cfg.prune.regime {
        Regime::LthIf => {
            let state = lth_if_run(
                &mut model,
                &data.train,
                &cfg.prune.lth(),
                &train_cfg,
                &mut hooks,
            )?;
            out.write(&format!("{stem}.history.csv"), state.history_csv())?;
            out.write(&format!("{stem}.train.csv"), epochs_csv(&state.epochs))?;
            PruneRecord::Iterative(state)
        }
        Regime::Sequential => {
            let seq = cfg.prune.sequential(model.backend_prefix());
            let o = sequential_av_prune(&mut model, &data.train, &seq, &train_cfg, &mut hooks)?;
            out.write(
                &format!("{stem}.encoder.history.csv"),
                o.encoder.history_csv(),
            )?;
            out.write(&format!("{stem}.history.csv"), o.backend.history_csv())?;
            let mut epochs = epochs_csv(&o.encoder.epochs);
            for r in &o.backend.epochs {
                let _ = writeln!(
                    epochs,
                    "{},{},{:.9}",
                    o.encoder.iterations + r.t,
                    r.epoch,
                    r.mean_loss
                );
            }
            out.write(&format!("{stem}.train.csv"), epochs)?;
            PruneRecord::Sequential {
                encoder: o.encoder,
                backend: o.backend,
            }
        }
        Regime::OneShot => {
            let scope = &cfg.prune.scope;
            let sparsity = match cfg.prune.oneshot_sparsity {
                Some(s) => s,
                None => cfg
                    .prune
                    .schedule_sparsity(scoped_counts(&model.registry, scope).1),
            };
            let epochs = lth_oneshot_run(&mut model, &data.train, sparsity, scope, &train_cfg)?;
            out.write(&format!("{stem}.train.csv"), epochs_csv(&epochs))?;
            PruneRecord::OneShot { sparsity, epochs }
        }
    };
    model.save(&out.file(&format!("{stem}.ckpt")))?;
    out.write(&format!("{stem}.sparsity.csv"), sparsity_csv(&model, &stem))?;
    Ok(PruneOutcome {
        stem,
        model,
        record,
    })
}

pub fn sparsity_csv(model: &WwsModel, stem: &str) -> String {
    let r = sparsity_report(&model.registry);
    format!(
        "{}\n{}\n",
        crate::pruning::SparsityReport::CSV_HEADER,
        r.csv_row(stem)
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRecord {
    pub threshold: f64,
    pub policy: ThresholdPolicy,
    /// 1 - FRR on dev at `threshold`.
    pub dev_one_minus_frr: Option<f64>,
    pub dev_positives: usize,
}

fn load_checkpoints(cfg: &ExperimentConfig, out: &RunDir) -> Result<Vec<(String, WwsModel)>> {
    let stems = out.stems(cfg.name())?;
    if stems.is_empty() {
        return Err(Error::Config(format!(
            "no {}.ckpt or {}-*.ckpt in {}",
            cfg.name(),
            cfg.name(),
            out.path.display()
        )));
    }
    stems
        .into_iter()
        .map(|s| {
            let m = WwsModel::load(&out.file(&format!("{s}.ckpt")))?;
            if m.modality != cfg.modality {
                return Err(Error::Config(format!(
                    "{s}.ckpt holds a {} model, config says {}",
                    m.modality.as_str(),
                    cfg.modality.as_str()
                )));
            }
            Ok((s, m))
        })
        .collect()
}

/// `calibrate`: `{stem}.threshold.json` for every checkpoint of the config.
pub fn cmd_calibrate(
    cfg: &ExperimentConfig,
    out: &RunDir,
) -> Result<Vec<(String, ThresholdRecord)>> {
    let models = load_checkpoints(cfg, out)?;
    out.claim(
        &models
            .iter()
            .map(|(s, _)| format!("{s}.threshold.json"))
            .collect::<Vec<_>>(),
    )?;
    let exp = Experiment::new(cfg.clone())?;
    let raw = exp.features(Split::Dev, exp.feature_options(cfg.modality))?;
    let mut done = Vec::new();
    for (stem, model) in models {
        let dev = normalized(&raw, &model.stats)?;
        let threshold = threshold_for(&model, &dev, cfg.threshold)?;
        let r = evaluate_model(&model, &dev, &[], threshold)?;
        let rec = ThresholdRecord {
            threshold,
            policy: cfg.threshold,
            dev_one_minus_frr: r.overall.frr().map(|f| 1.0 - f),
            dev_positives: r.overall.n_wake,
        };
        out.write(
            &format!("{stem}.threshold.json"),
            serde_json::to_string_pretty(&rec)? + "\n",
        )?;
        done.push((stem, rec));
    }
    Ok(done)
}

fn stored_threshold(out: &RunDir, stem: &str, policy: ThresholdPolicy) -> Result<f64> {
    match policy {
        ThresholdPolicy::Fixed { value } => Ok(value),
        ThresholdPolicy::Calibrate { .. } => {
            let p = out.file(&format!("{stem}.threshold.json"));
            let text = std::fs::read_to_string(&p).map_err(|_| {
                Error::Calibration(format!("{} missing; run calibrate first", p.display()))
            })?;
            let rec: ThresholdRecord = serde_json::from_str(&text)?;
            Ok(rec.threshold)
        }
    }
}

/// `eval`: `{stem}.eval.csv` and `{stem}.sparsity.csv` on the test split.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &RunDir) -> Result<Vec<(String, EvalReport)>> {
    let models = load_checkpoints(cfg, out)?;
    let outputs: Vec<String> = models
        .iter()
        .flat_map(|(s, _)| [format!("{s}.eval.csv"), format!("{s}.sparsity.csv")])
        .collect();
    let overwrite_own = RunDir {
        overwrite: true,
        ..out.clone()
    };
    // Sparsity files written by `prune` describe the same checkpoint.
    out.claim(
        &outputs
            .iter()
            .filter(|n| n.ends_with(".eval.csv"))
            .cloned()
            .collect::<Vec<_>>(),
    )?;
    let exp = Experiment::new(cfg.clone())?;
    let raw = exp.features(Split::Test, exp.feature_options(cfg.modality))?;
    let strata = exp.strata(Split::Test);
    let mut done = Vec::new();
    for (stem, model) in models {
        let threshold = stored_threshold(out, &stem, cfg.threshold)?;
        let test = normalized(&raw, &model.stats)?;
        let r = evaluate_model(&model, &test, &strata, threshold)?;
        out.write(&format!("{stem}.eval.csv"), r.to_csv())?;
        overwrite_own.write(&format!("{stem}.sparsity.csv"), sparsity_csv(&model, &stem))?;
        done.push((stem, r));
    }
    Ok(done)
}

/// `flops`: `{stem}.flops.csv` per checkpoint, or for a fresh model when
/// none exists yet.
pub fn cmd_flops(cfg: &ExperimentConfig, out: &RunDir) -> Result<Vec<(String, CostReport)>> {
    let exp = Experiment::new(cfg.clone())?;
    let stems = out.stems(cfg.name())?;
    let models = if stems.is_empty() {
        vec![(cfg.name().to_string(), exp.init_model()?)]
    } else {
        load_checkpoints(cfg, out)?
    };
    out.claim(
        &models
            .iter()
            .map(|(s, _)| format!("{s}.flops.csv"))
            .collect::<Vec<_>>(),
    )?;
    let mut done = Vec::new();
    for (stem, model) in models {
        let r = model.cost_report()?;
        out.write(&format!("{stem}.flops.csv"), r.to_csv())?;
        done.push((stem, r));
    }
    Ok(done)
}
