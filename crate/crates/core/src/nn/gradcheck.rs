//! Central finite-difference verification of analytic gradients (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BackwardRule, Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]. Gradients smaller than this are
/// compared in absolute terms, where central differences are limited by
/// round-off of order `eps * |f| / step`.
pub const REL_FLOOR: f64 = 1e-3;

/// One-sided differences further apart than this mean the step crossed a
/// kink (a ReLU hinge or a max switching winner). A smooth loss separates
/// them only by about `step * f''`.
pub const KINK_GAP: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Comparison {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates whose step straddled a kink; these are compared against
    /// the one-sided difference that stays on the evaluation point's piece.
    pub kinks: usize,
}

impl Comparison {
    fn record(&mut self, analytic: f64, center: f64, plus: f64, minus: f64, step: f64) {
        let forward = (plus - center) / step;
        let backward = (center - minus) / step;
        let numeric = if (forward - backward).abs() > KINK_GAP {
            self.kinks += 1;
            // The piece containing the evaluation point is the side whose
            // slope matches; the other side's slope jumps by the kink.
            if (analytic - forward).abs() < (analytic - backward).abs() {
                forward
            } else {
                backward
            }
        } else {
            (plus - minus) / (2.0 * step)
        };
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.max_abs_error = self.max_abs_error.max((analytic - numeric).abs());
        self.checked += 1;
    }

    pub fn merge(&mut self, other: &Comparison) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
        self.kinks += other.kinks;
    }
}

/// Checks the gradient of the scalar built by `build` with respect to each
/// of `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> Result<Comparison>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root, &mut ParamStore::new())?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.value(root).data()[0])
    };

    let mut values = inputs.to_vec();
    let center = eval(&values)?;
    let mut cmp = Comparison::default();
    for t in 0..values.len() {
        for e in 0..values[t].len() {
            let orig = values[t].data()[e];
            values[t].data_mut()[e] = orig + step;
            let plus = eval(&values)?;
            values[t].data_mut()[e] = orig - step;
            let minus = eval(&values)?;
            values[t].data_mut()[e] = orig;
            cmp.record(analytic[t].data()[e], center, plus, minus, step);
        }
    }
    Ok(cmp)
}

/// Checks gradients already accumulated in `params` (by a backward pass of
/// the same function) against central differences of `loss`.
pub fn check_params<F>(params: &mut ParamStore<f64>, step: f64, mut loss: F) -> Result<Comparison>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut cmp = Comparison::default();
    let center = loss(params)?;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for e in 0..params.get(id).value.len() {
            let orig = params.get(id).value.data()[e];
            params.get_mut(id).value.data_mut()[e] = orig + step;
            let plus = loss(params)?;
            params.get_mut(id).value.data_mut()[e] = orig - step;
            let minus = loss(params)?;
            params.get_mut(id).value.data_mut()[e] = orig;
            cmp.record(params.get(id).grad.data()[e], center, plus, minus, step);
        }
    }
    Ok(cmp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub result: Comparison,
    pub tolerance: f64,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.result.max_rel_error < self.tolerance
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out * r)` for a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every output element.
pub fn readout(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, g.value(out).shape());
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    g.sum_all(p)
}

/// Finite-difference checks of every graph primitive on random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rs = seed ^ 0x5eed;
    let mut out = Vec::new();
    let mut push = |name: &str, tolerance: f64, result: Comparison| {
        out.push(CheckEntry {
            name: name.to_string(),
            result,
            tolerance,
        })
    };

    let inputs = [random(&mut rng, &[7, 4]), random(&mut rng, &[5, 4]), random(&mut rng, &[5])];
    push(
        "linear",
        1e-6,
        check_inputs(&inputs, STEP, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            readout(g, y, rs)
        })?,
    );

    let inputs = [random(&mut rng, &[3, 2, 4]), random(&mut rng, &[6, 4])];
    push(
        "linear_rank3",
        1e-6,
        check_inputs(&inputs, STEP, |g, v| {
            let y = g.linear(v[0], v[1], None)?;
            readout(g, y, rs)
        })?,
    );

    let inputs = [random(&mut rng, &[32, 8]), random(&mut rng, &[8]), random(&mut rng, &[8])];
    push(
        "batch_norm_train",
        1e-5,
        check_inputs(&inputs, STEP, |g, v| {
            let (y, _, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            readout(g, y, rs)
        })?,
    );

    let mean: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..8).map(|_| rng.gen_range(0.5..2.0)).collect();
    push(
        "batch_norm_eval",
        1e-5,
        check_inputs(&inputs, STEP, |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
            readout(g, y, rs)
        })?,
    );

    let mut x = random(&mut rng, &[6, 5]);
    for v in x.data_mut() {
        if v.abs() <= 1e-3 {
            *v = 0.5;
        }
    }
    push(
        "relu",
        1e-6,
        check_inputs(&[x], STEP, |g, v| {
            let y = g.relu(v[0])?;
            readout(g, y, rs)
        })?,
    );

    push(
        "softmax",
        1e-6,
        check_inputs(&[random(&mut rng, &[5])], STEP, |g, v| {
            let y = g.softmax(v[0], 0)?;
            readout(g, y, rs)
        })?,
    );

    push(
        "softmax_middle_axis",
        1e-6,
        check_inputs(&[random(&mut rng, &[3, 4, 5])], STEP, |g, v| {
            let y = g.softmax(v[0], 1)?;
            readout(g, y, rs)
        })?,
    );

    let targets: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
    push(
        "cross_entropy",
        1e-5,
        check_inputs(&[random(&mut rng, &[6, 4])], STEP, |g, v| g.cross_entropy(v[0], &targets))?,
    );

    let pair = [random(&mut rng, &[4, 3]), random(&mut rng, &[4, 3])];
    push(
        "add",
        1e-6,
        check_inputs(&pair, STEP, |g, v| {
            let y = g.add(v[0], v[1])?;
            readout(g, y, rs)
        })?,
    );
    push(
        "sub",
        1e-6,
        check_inputs(&pair, STEP, |g, v| {
            let y = g.sub(v[0], v[1])?;
            readout(g, y, rs)
        })?,
    );
    push(
        "mul",
        1e-6,
        check_inputs(&pair, STEP, |g, v| {
            let y = g.mul(v[0], v[1])?;
            readout(g, y, rs)
        })?,
    );
    push(
        "scale",
        1e-6,
        check_inputs(&pair[..1], STEP, |g, v| {
            let y = g.scale(v[0], -1.7)?;
            readout(g, y, rs)
        })?,
    );

    let index: Vec<usize> = (0..10).map(|_| rng.gen_range(0..6)).collect();
    push(
        "gather_rows",
        1e-6,
        check_inputs(&[random(&mut rng, &[6, 3])], STEP, |g, v| {
            let y = g.gather_rows(v[0], index.clone(), &[5, 2])?;
            readout(g, y, rs)
        })?,
    );

    push(
        "sum_axis",
        1e-6,
        check_inputs(&[random(&mut rng, &[3, 4, 5])], STEP, |g, v| {
            let y = g.sum_axis(v[0], 1)?;
            readout(g, y, rs)
        })?,
    );

    // Well-separated values keep the maxima away from ties.
    let n = 4 * 5 * 3;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    push(
        "max_axis",
        1e-6,
        check_inputs(&[Tensor::new(vec![4, 5, 3], vals)?], STEP, |g, v| {
            let y = g.max_axis(v[0], 1)?;
            readout(g, y, rs)
        })?,
    );

    let index: Vec<usize> = (0..12).map(|_| rng.gen_range(0..5)).collect();
    let weights: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
    push(
        "interpolate",
        1e-6,
        check_inputs(&[random(&mut rng, &[5, 3])], STEP, |g, v| {
            let y = g.interpolate(v[0], index.clone(), weights.clone(), 3)?;
            readout(g, y, rs)
        })?,
    );

    Ok(out)
}

/// `y = 2x` whose backward rule wrongly claims `dy/dx = 3`.
struct CorruptedDouble;

impl BackwardRule<f64> for CorruptedDouble {
    fn backward(&self, _: &[&Tensor<f64>], _: &Tensor<f64>, grad_output: &Tensor<f64>) -> Vec<Option<Tensor<f64>>> {
        let d = grad_output.data().iter().map(|g| 3.0 * g).collect();
        vec![Some(Tensor::new(grad_output.shape().to_vec(), d).unwrap())]
    }
}

/// Negative control: a deliberately wrong backward rule, which the checker
/// must flag.
pub fn corrupted_control(seed: u64) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[4, 3]);
    let result = check_inputs(&[x], STEP, |g, v| {
        let xv = g.value(v[0]);
        let doubled = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|a| 2.0 * a).collect())?;
        let y = g.custom(&[v[0]], doubled, Box::new(CorruptedDouble))?;
        readout(g, y, seed)
    })?;
    Ok(CheckEntry {
        name: "corrupted_backward_control".into(),
        result,
        tolerance: 1e-5,
    })
}
