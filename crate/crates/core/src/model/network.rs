//! The full encoder–decoder: stem, downsampling encoder with attention
//! blocks, upsampling decoder with skip connections, and a classifier head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::checkpoint::{Checkpoint, Entry};
use crate::nn::{
    apply_bn_updates, BatchNormState, BnUpdate, Ctx, Graph, Init, Linear, LinearBnRelu, Mode, ParamStore, Real,
    Tensor, Var,
};

use super::attention::Block;
use super::config::{ArchConfig, INPUT_FEATURES};
use super::plan::BatchPlan;
use super::transition::{TransitionDown, TransitionUp};

#[derive(Debug, Clone)]
struct EncoderStage {
    down: Option<TransitionDown>,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: TransitionUp,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Layers {
    stem: [LinearBnRelu; 2],
    encoder: Vec<EncoderStage>,
    /// `decoder[l]` produces level `l` from level `l + 1`.
    decoder: Vec<DecoderStage>,
    head: Linear,
}

impl Layers {
    fn build<T: Real>(config: &ArchConfig, init: &mut Init<'_, T>) -> Result<Self> {
        let c = &config.channels;
        let stem = [
            LinearBnRelu::new(init, "stem.0", INPUT_FEATURES, config.stem_channels)?,
            LinearBnRelu::new(init, "stem.1", config.stem_channels, config.stem_channels)?,
        ];
        let blocks = |init: &mut Init<'_, T>, prefix: &str, dim: usize| -> Result<Vec<Block>> {
            (0..config.blocks_per_stage)
                .map(|b| Block::new(init, &format!("{prefix}.block{b}"), dim))
                .collect()
        };
        let mut encoder = Vec::with_capacity(c.len());
        for l in 0..c.len() {
            let down = if l == 0 {
                None
            } else {
                Some(TransitionDown::new(init, &format!("enc{l}.down"), c[l - 1], c[l])?)
            };
            encoder.push(EncoderStage {
                down,
                blocks: blocks(init, &format!("enc{l}"), c[l])?,
            });
        }
        let mut decoder = Vec::with_capacity(c.len().saturating_sub(1));
        for l in 0..c.len().saturating_sub(1) {
            decoder.push(DecoderStage {
                up: TransitionUp::new(init, &format!("dec{l}.up"), c[l + 1], c[l])?,
                blocks: blocks(init, &format!("dec{l}"), c[l])?,
            });
        }
        let head = Linear::new(init, "head", c[0], config.num_classes_k, true)?;
        Ok(Self {
            stem,
            encoder,
            decoder,
            head,
        })
    }
}

/// Network parameters, normalization statistics, and architecture.
///
/// Output channel `c` scores class `c + 1` (class 0 is background and never
/// predicted).
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ArchConfig,
    pub params: ParamStore<T>,
    pub bn: Vec<BatchNormState<T>>,
    layers: Layers,
}

/// A finished forward pass.
pub struct Forward<T: Real> {
    pub graph: Graph<T>,
    /// `points x K` class scores.
    pub scores: Var,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Layers::build(
            &config,
            &mut Init {
                params: &mut params,
                bn: &mut bn,
                rng: &mut rng,
            },
        )?;
        Ok(Self {
            config,
            params,
            bn,
            layers,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            bn: self.bn.iter().map(|s| s.cast()).collect(),
            layers: self.layers.clone(),
        }
    }

    /// Records the network on `ctx.graph`; returns `points x K` scores.
    pub fn build(&self, ctx: &mut Ctx<'_, T>, plan: &BatchPlan, features: &[[f64; 6]]) -> Result<Var> {
        if features.len() != plan.points() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} planned points",
                features.len(),
                plan.points()
            )));
        }
        let flat: Vec<f64> = features.iter().flatten().copied().collect();
        let x = ctx
            .graph
            .constant(Tensor::from_f64(vec![features.len(), INPUT_FEATURES], &flat)?);
        let mut cur = self.layers.stem[0].forward(ctx, x)?;
        cur = self.layers.stem[1].forward(ctx, cur)?;

        let mut skips = Vec::with_capacity(plan.levels.len());
        for (stage, level) in self.layers.encoder.iter().zip(&plan.levels) {
            if let (Some(down), Some(dp)) = (&stage.down, &level.down) {
                cur = down.forward(ctx, cur, dp)?;
            }
            for block in &stage.blocks {
                cur = block.forward(ctx, cur, &level.attention)?;
            }
            skips.push(cur);
        }
        for l in (0..self.layers.decoder.len()).rev() {
            let stage = &self.layers.decoder[l];
            cur = stage.up.forward(ctx, cur, skips[l], &plan.ups[l])?;
            for block in &stage.blocks {
                cur = block.forward(ctx, cur, &plan.levels[l].attention)?;
            }
        }
        self.layers.head.forward(ctx, cur)
    }

    pub fn forward(&self, plan: &BatchPlan, features: &[[f64; 6]], mode: Mode) -> Result<Forward<T>> {
        self.forward_checked(plan, features, mode, false)
    }

    /// As [`Self::forward`], optionally failing on the first non-finite
    /// intermediate value.
    pub fn forward_checked(
        &self,
        plan: &BatchPlan,
        features: &[[f64; 6]],
        mode: Mode,
        check_finite: bool,
    ) -> Result<Forward<T>> {
        let mut ctx = Ctx::new(&self.params, &self.bn, mode);
        ctx.graph.set_check_finite(check_finite);
        let scores = self.build(&mut ctx, plan, features)?;
        let (graph, bn_updates) = ctx.finish();
        Ok(Forward {
            graph,
            scores,
            bn_updates,
        })
    }

    pub fn commit_bn(&mut self, updates: &[BnUpdate<T>]) {
        apply_bn_updates(&mut self.bn, updates);
    }

    /// Inference on equally sized clouds; returns per-point classes in
    /// `1..=K`, one vector per cloud.
    pub fn classify(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<u8>>> {
        let positions: Vec<&[[f64; 3]]> = clouds.iter().map(|c| c.positions_raw.as_slice()).collect();
        let plan = BatchPlan::new(&self.config, &positions)?;
        let features: Vec<[f64; 6]> = clouds.iter().flat_map(|c| c.features()).collect();
        let out = self.forward(&plan, &features, Mode::Eval)?;
        let classes = argmax_rows(out.graph.value(out.scores));
        Ok(classes
            .chunks(plan.levels[0].size)
            .map(|c| c.iter().map(|&k| (k + 1) as u8).collect())
            .collect())
    }

    /// Checkpoint with parameters first, then normalization statistics.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut entries: Vec<Entry> = self
            .params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        for s in &self.bn {
            for (suffix, values) in [("running_mean", &s.running_mean), ("running_var", &s.running_var)] {
                entries.push(Entry {
                    name: format!("{}.{suffix}", s.name),
                    shape: vec![values.len()],
                    data: values.iter().map(|v| v.as_f64() as f32).collect(),
                });
            }
        }
        Checkpoint {
            config_json: serde_json::to_string(&self.config).expect("config serializes"),
            entries,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ArchConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::Checkpoint(format!("architecture config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        let expected = model.params.len() + 2 * model.bn.len();
        if ckpt.entries.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} entries, architecture needs {expected}",
                ckpt.entries.len()
            )));
        }
        let (param_entries, bn_entries) = ckpt.entries.split_at(model.params.len());
        for (p, e) in model.params.iter_mut().zip(param_entries) {
            if p.name != e.name || p.value.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` {:?} does not match parameter `{}` {:?}",
                    e.name,
                    e.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let data = e.data.iter().map(|&v| T::from_f64(v as f64)).collect();
            p.value = Tensor::new(e.shape.clone(), data)?;
        }
        for (s, pair) in model.bn.iter_mut().zip(bn_entries.chunks_exact(2)) {
            for (e, suffix) in pair.iter().zip(["running_mean", "running_var"]) {
                if e.name != format!("{}.{suffix}", s.name) || e.shape != [s.channels()] {
                    return Err(Error::Checkpoint(format!("unexpected entry `{}`", e.name)));
                }
            }
            s.running_mean = pair[0].data.iter().map(|&v| T::from_f64(v as f64)).collect();
            s.running_var = pair[1].data.iter().map(|&v| T::from_f64(v as f64)).collect();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows<T: Real>(scores: &Tensor<T>) -> Vec<usize> {
    let k = scores.last_dim();
    scores
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
