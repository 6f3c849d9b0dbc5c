//! Magnitude pruning with iterative fine-tuning, its one-shot baseline and
//! the two-phase schedule for audio-visual models.

mod lth;
mod mask;
mod report;

pub use lth::{
    global_sparsity, lth_if_run, lth_oneshot_run, sequential_av_prune, DevPoint, EpochRecord,
    HistoryRow, PruneConfig, PruneHooks, PruneState, SequentialConfig, SequentialOutcome,
};
pub use mask::{
    event_removal, install_masks, magnitude_mask, mask_to_count, schedule, scoped_counts,
    scoped_sparsity, MaskSet, PruneScope, Ranking,
};
pub use report::{sparsity_report, SparsityReport, TypeCount};
