//! Finite-difference check of the complete network on a tiny instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{Point3, PointCloud};
use crate::nn::gradcheck::{check_params, CheckEntry, STEP};
use crate::nn::Mode;

use super::config::ArchConfig;
use super::network::Model;
use super::plan::BatchPlan;

pub const END_TO_END_TOLERANCE: f64 = 1e-3;

/// 64 points, two levels of 8 and 16 channels, 4 neighbors, 3 classes.
pub fn tiny_config() -> ArchConfig {
    ArchConfig {
        channels: vec![8, 16],
        rates: vec![1, 2],
        blocks_per_stage: 1,
        neighbors_h: 4,
        num_classes_k: 3,
        stem_channels: 8,
    }
}

/// Cross-entropy of the training-mode network against random targets,
/// differentiated with respect to every parameter.
pub fn end_to_end(seed: u64) -> Result<CheckEntry> {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point3> = (0..64)
        .map(|_| [rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0)])
        .collect();
    let cloud = PointCloud::from_positions(points);
    let targets: Vec<usize> = (0..64).map(|_| rng.gen_range(0..config.num_classes_k)).collect();
    let plan = BatchPlan::new(&config, &[&cloud.positions_raw])?;
    let features = cloud.features();

    let mut model = Model::<f64>::new(config, seed)?;
    let mut out = model.forward(&plan, &features, Mode::Train)?;
    let loss = out.graph.cross_entropy(out.scores, &targets)?;
    out.graph.backward(loss, &mut model.params)?;

    let mut probe = model.clone();
    let result = check_params(&mut model.params, STEP, |p| {
        probe.params.clone_from(p);
        let mut out = probe.forward(&plan, &features, Mode::Train)?;
        let loss = out.graph.cross_entropy(out.scores, &targets)?;
        Ok(out.graph.value(loss).data()[0])
    })?;
    Ok(CheckEntry {
        name: "network_end_to_end".into(),
        result,
        tolerance: END_TO_END_TOLERANCE,
    })
}
