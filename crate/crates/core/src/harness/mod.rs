//! Experiment runner: configuration, evaluation and threshold calibration,
//! the steps behind each CLI subcommand, and report assembly.
//!
//! Every step reads and writes a run directory. Artifacts are keyed by a
//! stem, the experiment name for trained models and `name-regime` for
//! pruned ones:
//!
//! | file | written by |
//! |---|---|
//! | `{stem}.ckpt`, `{stem}.train.csv` | `train`, `prune` |
//! | `{stem}.history.csv`, `{stem}.sparsity.csv` | `prune` |
//! | `{stem}.threshold.json` | `calibrate` |
//! | `{stem}.eval.csv` | `eval` |
//! | `{stem}.flops.csv` | `flops` |
//! | `dense_far.csv`, `sparsity_far.csv`, `layer_sparsity.csv`, `*.far_curve.svg`, `report.csv` | `report` |

mod config;
mod metrics;
mod pipeline;
mod report;

pub use config::{ExperimentConfig, PruneSettings, Regime, ThresholdPolicy, TrainSettings};
pub use metrics::{calibrate_threshold, evaluate, EvalCounts, EvalReport};
pub use pipeline::{
    cmd_calibrate, cmd_eval, cmd_flops, cmd_prune, cmd_synth, cmd_train, dev_evaluator, epochs_csv,
    evaluate_model, labels_of, normalized, positive_scores, prepare, score_all, snrs_of,
    sparsity_csv, threshold_for, train_csv, train_model, training_stats, Experiment, PreparedData,
    PruneOutcome, PruneRecord, RunDir, ThresholdRecord, TrainOutcome,
};
pub use report::{build_report, history_svg, ReportOutcome};
