//! End-to-end workflows: training, evaluation, labeling, the sampling-count
//! ablation, and the gradient-check report.

pub mod ablate;
pub mod config;
pub mod evaluate;
pub mod gradcheck;
pub mod metrics;
pub mod train;

pub use ablate::{ablate, mean_accuracy_percent, AblationReport, AblationRow, CaseAccuracy};
pub use config::{AblateConfig, DataConfig, EvalConfig, LrSchedule, RunConfig, TrainConfig};
pub use evaluate::{case_seed, evaluate, evaluate_counts, predict, score_case, Prediction};
pub use gradcheck::{run_gradcheck, CheckLine, GradCheckReport};
pub use metrics::{BranchScores, CaseCounts, CaseSummary, ClassScores, MetricsReport};
pub use train::{train, EpochLog};

use crate::error::Result;
use crate::geometry::{mask_to_points, PointCloud};
use crate::synth::LoadedCase;

/// Labeled training clouds (every foreground voxel) of the given cases.
pub fn training_clouds(cases: &[LoadedCase]) -> Result<Vec<PointCloud>> {
    cases.iter().map(|c| mask_to_points(&c.mask)).collect()
}
