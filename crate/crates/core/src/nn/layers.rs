//! Parameterized layers assembled from graph primitives.
//!
//! Layers only hold parameter handles; the values live in a [`ParamStore`]
//! and the batch-normalization statistics in a separate list, so a model
//! can be read concurrently by several forward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{BatchNormState, Mode, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Registers parameters with PyTorch-style default initialization.
pub struct Init<'a, T: Real> {
    pub params: &'a mut ParamStore<T>,
    pub bn: &'a mut Vec<BatchNormState<T>>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Init<'_, T> {
    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(self.rng.gen_range(-bound..=bound)))
            .collect();
        self.params.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        self.params.add(name, Tensor::full(shape, T::from_f64(value)))
    }
}

/// One batch-normalization layer's statistics from a training pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub state: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// State of one forward pass: the graph under construction plus read-only
/// access to parameters and normalization statistics.
pub struct Ctx<'a, T: Real> {
    pub graph: Graph<T>,
    params: &'a ParamStore<T>,
    bn: &'a [BatchNormState<T>],
    mode: Mode,
    updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(params: &'a ParamStore<T>, bn: &'a [BatchNormState<T>], mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bn,
            mode,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.params, id)
    }

    /// Ends the pass, returning the graph and pending statistics updates.
    pub fn finish(self) -> (Graph<T>, Vec<BnUpdate<T>>) {
        (self.graph, self.updates)
    }
}

pub fn apply_bn_updates<T: Real>(states: &mut [BatchNormState<T>], updates: &[BnUpdate<T>]) {
    for u in updates {
        states[u.state].update(&u.mean, &u.var);
    }
}

/// Pointwise linear map (a kernel-size-1 convolution over points).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        let weight = init.uniform(format!("{name}.weight"), &[c_out, c_in], bound)?;
        let bias = if bias {
            Some(init.uniform(format!("{name}.bias"), &[c_out], bound)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            c_in,
            c_out,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the model's statistics list.
    pub state: usize,
}

impl BatchNorm {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = init.constant(format!("{name}.weight"), &[channels], 1.0)?;
        let beta = init.constant(format!("{name}.bias"), &[channels], 0.0)?;
        init.bn.push(BatchNormState::new(name, channels));
        Ok(Self {
            gamma,
            beta,
            state: init.bn.len() - 1,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let state = &ctx.bn[self.state];
        match ctx.mode {
            Mode::Train => {
                let (y, mean, var) = ctx.graph.batch_norm_train(x, gamma, beta, state.eps)?;
                ctx.updates.push(BnUpdate {
                    state: self.state,
                    mean,
                    var,
                });
                Ok(y)
            }
            Mode::Eval => ctx.graph.batch_norm_eval(
                x,
                gamma,
                beta,
                &state.running_mean,
                &state.running_var,
                state.eps,
            ),
        }
    }
}

/// `relu(bn(linear(x)))`; the linear map has no bias since BN removes it.
#[derive(Debug, Clone)]
pub struct LinearBnRelu {
    pub linear: Linear,
    pub bn: BatchNorm,
}

impl LinearBnRelu {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(init, &format!("{name}.linear"), c_in, c_out, false)?,
            bn: BatchNorm::new(init, &format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.linear.forward(ctx, x)?;
        self.bn_relu(ctx, y)
    }

    /// The normalization and activation alone, for inputs already mapped
    /// by [`Self::linear`].
    pub fn bn_relu<T: Real>(&self, ctx: &mut Ctx<'_, T>, y: Var) -> Result<Var> {
        let y = self.bn.forward(ctx, y)?;
        ctx.graph.relu(y)
    }
}

/// Two-layer perceptron `linear, relu, linear`.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, hidden: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            first: Linear::new(init, &format!("{name}.0"), c_in, hidden, true)?,
            second: Linear::new(init, &format!("{name}.2"), hidden, c_out, true)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.first.forward(ctx, x)?;
        let h = ctx.graph.relu(h)?;
        self.second.forward(ctx, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_bounds_and_names() {
        let mut params = ParamStore::<f32>::new();
        let mut bn = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init {
            params: &mut params,
            bn: &mut bn,
            rng: &mut rng,
        };
        let lin = Linear::new(&mut init, "l", 16, 4, true).unwrap();
        let unit = LinearBnRelu::new(&mut init, "u", 4, 8).unwrap();
        assert!(params
            .get(lin.weight)
            .value
            .data()
            .iter()
            .all(|v| v.abs() <= 0.25));
        for name in ["l.weight", "l.bias", "u.linear.weight", "u.bn.weight", "u.bn.bias"] {
            assert!(params.id(name).is_some(), "{name}");
        }
        assert!(params.id("u.linear.bias").is_none());
        assert_eq!(bn.len(), 1);
        assert_eq!(bn[unit.bn.state].name, "u.bn");
    }

    #[test]
    fn training_pass_records_statistics() {
        let mut params = ParamStore::<f64>::new();
        let mut bn = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = BatchNorm::new(
            &mut Init {
                params: &mut params,
                bn: &mut bn,
                rng: &mut rng,
            },
            "bn",
            1,
        )
        .unwrap();
        let mut ctx = Ctx::new(&params, &bn, Mode::Train);
        let x = ctx.graph.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        layer.forward(&mut ctx, x).unwrap();
        let (_, updates) = ctx.finish();
        apply_bn_updates(&mut bn, &updates);
        assert!((bn[0].running_mean[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((bn[0].running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
