//! Training, evaluation, ablation and the occlusion stress test.
//!
//! Failure metrics pool every (frame, horizon step) pair whose horizon ends
//! inside the recording; the last `T-1` frames of each episode are skipped.

mod ablation;
mod eval;
mod loss;
mod metrics;
mod stress;
mod train;
mod windows;

pub use ablation::{run_ablation, AblationPlan, AblationRow, MetricsReport, StressPoint, VariantSummary};
pub use eval::{evaluate, predict_episodes, score_predictions, EpisodePredictions, EvalReport, EVAL_CHUNK};
pub use loss::{
    breakdown_of, effective_coefficients, total_loss, window_loss, BatchOutputs, LossBreakdown, LossCoefficients,
    LossVars,
};
pub use metrics::{f1_score, pr_auc, F1Report};
pub use stress::{
    clear_world, inject_total_occlusion, occlusion_stress_test, stress_summary, StressReport, StressSummary,
    ALARM_THRESHOLD,
};
pub use train::{batch_seed, model_for, train, EpochLog, TrainConfig, TrainOutcome};
pub use windows::{
    make_training_sequences, make_trimmed_sequences, rebalance, windows_for_lengths, Window, REBALANCE_TARGET,
};
