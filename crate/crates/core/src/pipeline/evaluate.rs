//! Inference on whole masks and scoring against ground truth.

use crate::error::{Error, Result};
use crate::geometry::{
    label_centerlines_with_classes, labels_to_mask, mask_to_points, propagate_labels, sample_points, BranchLabeling,
    CenterlinePolyline, VoxelMask,
};
use crate::model::Model;
use crate::synth::{derive_seed, LoadedCase};

use super::config::EvalConfig;
use super::metrics::{CaseCounts, MetricsReport};

/// Labels of one mask: the voxel-level prediction and, when centerlines were
/// given, their branch-level labels.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mask: VoxelMask,
    pub branches: Option<BranchLabeling>,
}

/// Samples `sample_count` foreground voxels, classifies them, spreads the
/// labels to every foreground voxel by nearest neighbor, and labels the
/// centerlines by overlap rate.
pub fn predict(
    model: &Model<f32>,
    mask: &VoxelMask,
    centerlines: Option<&[CenterlinePolyline]>,
    sample_count: usize,
    seed: u64,
    radius: f64,
) -> Result<Prediction> {
    let mut cloud = mask_to_points(mask)?;
    let (sampled, _) = sample_points(&cloud, sample_count, seed)?;
    let classes = model.classify(&[&sampled])?.pop().expect("one cloud in, one out");
    cloud.labels = Some(propagate_labels(&sampled.positions_raw, &classes, &cloud.positions_raw)?);
    let predicted = labels_to_mask(&cloud)?;
    let k = u8::try_from(model.config.num_classes_k)
        .map_err(|_| Error::ConfigInvalid("more than 255 classes".into()))?;
    let branches = centerlines
        .map(|c| label_centerlines_with_classes(c, &predicted, radius, k))
        .transpose()?;
    Ok(Prediction {
        mask: predicted,
        branches,
    })
}

/// Sampling seed of the `index`-th evaluated case.
pub fn case_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Predicts and counts one case.
pub fn score_case(model: &Model<f32>, case: &LoadedCase, index: usize, config: &EvalConfig) -> Result<CaseCounts> {
    let p = predict(
        model,
        &case.mask,
        Some(&case.centerlines),
        config.sample_count,
        case_seed(config.seed, index),
        config.dilation_radius,
    )?;
    let counts = CaseCounts::new(
        case.id.clone(),
        &case.mask,
        &p.mask,
        model.config.num_classes_k,
        &case.centerlines,
        p.branches.as_ref(),
    )?;
    // Second pass: the confusion rows must reproduce the ground-truth
    // histogram.
    let hist = case.mask.histogram();
    for (c, row) in counts.confusion.iter().enumerate() {
        let expected = hist.get(c + 1).copied().unwrap_or(0) as u64;
        if row.iter().sum::<u64>() != expected {
            return Err(Error::ShapeMismatch(format!(
                "case `{}`: confusion row {} sums to {}, ground truth has {expected}",
                case.id,
                c + 1,
                row.iter().sum::<u64>()
            )));
        }
    }
    Ok(counts)
}

/// Scores every case; with `threads > 1` cases run concurrently and are
/// merged in input order, so the report does not depend on the thread
/// count.
pub fn evaluate_counts(
    model: &Model<f32>,
    cases: &[LoadedCase],
    config: &EvalConfig,
    threads: usize,
) -> Result<Vec<CaseCounts>> {
    if cases.is_empty() {
        return Err(Error::ConfigInvalid("no cases to evaluate".into()));
    }
    let threads = threads.clamp(1, cases.len());
    if threads == 1 {
        return cases
            .iter()
            .enumerate()
            .map(|(i, c)| score_case(model, c, i, config))
            .collect();
    }
    let per = cases.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<CaseCounts>>> = (0..cases.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (t, chunk) in slots.chunks_mut(per).enumerate() {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let i = t * per + k;
                    *slot = Some(score_case(model, &cases[i], i, config));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub fn evaluate(model: &Model<f32>, cases: &[LoadedCase], config: &EvalConfig, threads: usize) -> Result<MetricsReport> {
    let counts = evaluate_counts(model, cases, config, threads)?;
    MetricsReport::from_cases(&counts, model.config.num_classes_k)
}
