//! The training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_points, PointCloud};
use crate::model::{argmax_rows, BatchPlan, Model};
use crate::nn::Mode;
use crate::synth::derive_seed;

use super::config::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Accuracy on the sampled training points.
    pub accuracy: f64,
}

/// Seeds for one case visit: (augmentation, sampling).
fn visit_seeds(seed: u64, epoch: usize, case: usize) -> (u64, u64) {
    let s = derive_seed(derive_seed(seed, epoch as u64), case as u64);
    (derive_seed(s, 0), derive_seed(s, 1))
}

/// Trains `model` in place on labeled clouds (one per case, all foreground
/// voxels). `after_epoch` runs after every epoch, e.g. for logging and
/// checkpoints.
pub fn train<F>(
    model: &mut Model<f32>,
    cases: &[PointCloud],
    config: &TrainConfig,
    mut after_epoch: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&Model<f32>, &EpochLog) -> Result<()>,
{
    config.validate()?;
    if cases.is_empty() {
        return Err(Error::ConfigInvalid("training needs at least one case".into()));
    }
    if cases.iter().any(|c| c.labels.is_none()) {
        return Err(Error::MissingProvenance("labels"));
    }
    let classes = model.config.num_classes_k;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let sgd = config.sgd_at(epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let (mut correct, mut seen) = (0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut samples = Vec::with_capacity(chunk.len());
            for &c in chunk {
                let (aug_seed, sample_seed) = visit_seeds(config.seed, epoch, c);
                let cloud = if config.augment {
                    config.augmentation.apply(&cases[c], aug_seed)
                } else {
                    cases[c].clone()
                };
                samples.push(sample_points(&cloud, config.sample_count, sample_seed)?.0);
            }
            let positions: Vec<&[[f64; 3]]> = samples.iter().map(|s| s.positions_raw.as_slice()).collect();
            let plan = BatchPlan::new(&model.config, &positions)?;
            let features: Vec<[f64; 6]> = samples.iter().flat_map(|s| s.features()).collect();
            let mut targets = Vec::with_capacity(features.len());
            for s in &samples {
                for &l in s.labels.as_ref().expect("checked above") {
                    if l == 0 || l as usize > classes {
                        return Err(Error::BadTarget {
                            target: l as usize,
                            classes,
                        });
                    }
                    targets.push(l as usize - 1);
                }
            }

            let mut fwd = model.forward_checked(&plan, &features, Mode::Train, config.check_finite)?;
            let loss = fwd.graph.cross_entropy(fwd.scores, &targets)?;
            let value = fwd.graph.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value,
                });
            }
            let predicted = argmax_rows(fwd.graph.value(fwd.scores));
            correct += predicted.iter().zip(&targets).filter(|(p, t)| p == t).count();
            seen += targets.len();

            model.params.zero_grads();
            fwd.graph.backward(loss, &mut model.params)?;
            sgd.step(&mut model.params);
            model.commit_bn(&fwd.bn_updates);
            loss_sum += value;
            batches += 1;
        }
        let log = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / seen as f64,
        };
        log::info!(
            "epoch {:>4}  loss {:.5}  point accuracy {:.4}",
            log.epoch + 1,
            log.loss,
            log.accuracy
        );
        after_epoch(model, &log)?;
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::model::ArchConfig;

    fn tiny() -> ArchConfig {
        ArchConfig {
            channels: vec![8, 16],
            rates: vec![1, 2],
            blocks_per_stage: 1,
            neighbors_h: 4,
            num_classes_k: 2,
            stem_channels: 8,
        }
    }

    /// Two short parallel rods, one per class.
    fn rods() -> PointCloud {
        let mut pos: Vec<Point3> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            pos.push([i as f64 * 0.5, 0.0, 0.0]);
            labels.push(1);
            pos.push([i as f64 * 0.5, 6.0, 0.0]);
            labels.push(2);
        }
        let mut c = PointCloud::from_positions(pos);
        c.labels = Some(labels);
        c
    }

    fn config(epochs: usize, lr: f64) -> TrainConfig {
        let mut c = TrainConfig {
            epochs,
            batch_size: 1,
            sample_count: 32,
            ..TrainConfig::default()
        };
        c.sgd.lr = lr;
        c
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut model = Model::<f32>::new(tiny(), 3).unwrap();
        let mut c = config(1, 0.0);
        c.sgd.weight_decay = 0.0;
        let before = model.params.clone();
        train(&mut model, &[rods()], &c, |_, _| Ok(())).unwrap();
        for (a, b) in before.iter().zip(model.params.iter()) {
            let bits = |p: &crate::nn::Parameter<f32>| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{}", a.name);
        }
    }

    #[test]
    fn loss_falls_on_a_separable_toy() {
        let mut model = Model::<f32>::new(tiny(), 3).unwrap();
        let logs = train(&mut model, &[rods(), rods()], &config(30, 0.05), |_, _| Ok(())).unwrap();
        assert!(logs.last().unwrap().loss < 0.5 * logs[0].loss, "{logs:?}");
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let run = || {
            let mut model = Model::<f32>::new(tiny(), 5).unwrap();
            train(&mut model, &[rods()], &config(3, 0.01), |_, _| Ok(())).unwrap();
            model.to_checkpoint().to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn diverging_run_aborts() {
        let mut model = Model::<f32>::new(tiny(), 3).unwrap();
        let c = config(50, 1e30);
        let err = train(&mut model, &[rods()], &c, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. } | Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn unlabeled_cases_are_rejected() {
        let mut model = Model::<f32>::new(tiny(), 3).unwrap();
        let mut c = rods();
        c.labels = None;
        assert!(train(&mut model, &[c], &config(1, 0.01), |_, _| Ok(())).is_err());
    }
}
