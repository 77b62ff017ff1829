//! Voxel accuracy as a function of the number of sampled points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::{ArchConfig, Model};
use crate::synth::LoadedCase;

use super::config::{EvalConfig, TrainConfig};
use super::evaluate::evaluate_counts;
use super::train::train;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseAccuracy {
    pub id: String,
    pub correct: u64,
    pub voxels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sample_count: usize,
    /// Mean over cases of the per-case voxel accuracy, in percent.
    pub mean_accuracy: f64,
    pub cases: Vec<CaseAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Percent mean of per-case `correct / voxels`, summed in case order.
pub fn mean_accuracy_percent(cases: &[(u64, u64)]) -> f64 {
    let sum: f64 = cases.iter().map(|&(c, v)| c as f64 / v as f64).sum();
    100.0 * sum / cases.len() as f64
}

/// Trains one model per sample count, from the same initialization, with
/// that count used for both training and inference, and scores each on
/// `test`. `on_model` sees every trained model (e.g. to save it).
#[allow(clippy::too_many_arguments)]
pub fn ablate<F>(
    arch: &ArchConfig,
    train_config: &TrainConfig,
    eval_config: &EvalConfig,
    counts: &[usize],
    train_cases: &[PointCloud],
    test: &[LoadedCase],
    threads: usize,
    mut on_model: F,
) -> Result<AblationReport>
where
    F: FnMut(usize, &Model<f32>) -> Result<()>,
{
    if counts.is_empty() {
        return Err(Error::ConfigInvalid("no sample counts to ablate".into()));
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        log::info!("ablation: {count} sampled points");
        let mut model = Model::<f32>::new(arch.clone(), train_config.seed)?;
        let tc = TrainConfig {
            sample_count: count,
            ..train_config.clone()
        };
        train(&mut model, train_cases, &tc, |_, _| Ok(()))?;
        on_model(count, &model)?;
        let ec = EvalConfig {
            sample_count: count,
            ..eval_config.clone()
        };
        let counts = evaluate_counts(&model, test, &ec, threads)?;
        let cases: Vec<CaseAccuracy> = counts
            .iter()
            .map(|c| CaseAccuracy {
                id: c.id.clone(),
                correct: c.correct(),
                voxels: c.voxels(),
            })
            .collect();
        let pairs: Vec<(u64, u64)> = cases.iter().map(|c| (c.correct, c.voxels)).collect();
        rows.push(AblationRow {
            sample_count: count,
            mean_accuracy: mean_accuracy_percent(&pairs),
            cases,
        });
    }
    Ok(AblationReport { rows })
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut s = String::from("sampled points   accuracy (%)\n");
        for r in &self.rows {
            s += &format!("{:>14}   {:>12.2}\n", r.sample_count, r.mean_accuracy);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_is_over_cases() {
        assert_eq!(mean_accuracy_percent(&[(1, 2), (3, 3)]), 75.0);
    }

    #[test]
    fn render_has_one_row_per_count() {
        let r = AblationReport {
            rows: vec![AblationRow {
                sample_count: 1024,
                mean_accuracy: 50.0,
                cases: Vec::new(),
            }],
        };
        assert_eq!(r.render().lines().count(), 2);
    }
}
