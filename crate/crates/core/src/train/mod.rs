//! Alternating optimization, the self-collaboration outer loop, evaluation and ablations.

mod ablation;
mod adam;
mod checkpoint;
mod phase;
mod records;
mod sc;
mod settings;

pub use ablation::{ablation_table, run_ablation, AblationRecord, REFERENCE_PSNR};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    iteration_dir, load_checkpoint, load_denoiser, save_checkpoint, CheckpointManifest, CHECKPOINTS,
    CORPUS_MANIFEST, HISTORY_LOG, LAST_GOOD, LATEST, METRICS_LOG,
};
pub use phase::{
    init_models, sc_replace, stream_seed, train_phase, Best, Control, Optimizers, PhaseData, PhaseOutput, StepLosses,
    Trainer,
};
pub use records::{
    append_jsonl, denoise_validation, evaluate, read_jsonl, truncate_jsonl, Evaluation, IterationStatus,
    IterationSummary, LossSummary, MetricsRecord, ValidationSet,
};
pub use sc::{dry_run, load_data, prepare_run_dir, run_baseline, run_sc, ScOptions, ScOutcome, StopReason};
pub use settings::{DivergenceGuard, SCSchedule, TrainConfig};
