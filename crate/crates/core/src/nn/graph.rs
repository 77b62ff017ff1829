//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in creation
//! order, which is a valid topological order, so the backward sweep simply
//! walks the tape in reverse. Operations are coarse (a whole linear layer,
//! a whole softmax) to keep the tape short.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Gradient rule for operations defined outside this module.
pub trait BackwardRule<T: Real> {
    /// Gradients with respect to each input, `None` where not needed.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

/// `shape` viewed as `outer x len x inner` around one axis.
#[derive(Debug, Clone, Copy)]
struct Split {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Split {
    fn around(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::ShapeMismatch(format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    #[inline]
    fn at(&self, o: usize, l: usize, i: usize) -> usize {
        (o * self.len + l) * self.inner + i
    }
}

enum Op<T: Real> {
    Constant,
    Variable,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    SumAll(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Softmax {
        x: Var,
        split: Split,
    },
    SumAxis {
        x: Var,
        split: Split,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Interpolate {
        x: Var,
        index: Vec<usize>,
        weights: Vec<T>,
        k: usize,
    },
    CrossEntropy {
        scores: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule<T> + Send + Sync>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    leaf_grads: HashMap<usize, Tensor<T>>,
    param_vars: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: HashMap::new(),
            param_vars: HashMap::new(),
            check_finite: false,
        }
    }

    /// When enabled, every operation fails with [`Error::NonFinite`] if it
    /// produces NaN or infinity.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a [`Graph::variable`] leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(&v.0)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is kept and readable through [`Graph::grad`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Variable,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf bound to a stored parameter; backward accumulates into the
    /// parameter's gradient. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `x W^T + b` applied to the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.shape().len() != 2 || xs.shape().is_empty() || xs.last_dim() != ws.shape()[1] {
            return Err(Error::ShapeMismatch(format!(
                "linear: input {:?} with weight {:?}",
                xs.shape(),
                ws.shape()
            )));
        }
        let c_in = ws.shape()[1];
        let c_out = ws.shape()[0];
        let rows = xs.len() / c_in;
        let mut out = vec![T::zero(); rows * c_out];
        if let Some(b) = b {
            let bs = self.value(b);
            if bs.len() != c_out {
                return Err(Error::ShapeMismatch(format!(
                    "linear: bias {:?} for {c_out} outputs",
                    bs.shape()
                )));
            }
            for row in out.chunks_exact_mut(c_out) {
                row.copy_from_slice(bs.data());
            }
        }
        gemm(
            rows,
            c_in,
            c_out,
            xs.data(),
            (c_in, 1),
            ws.data(),
            (1, c_in),
            &mut out,
            b.is_some(),
        );
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = c_out;
        let req = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, req, "linear")
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let req = self.requires(a) || self.requires(b);
        self.push(out, Op::Add(a, b), req, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let req = self.requires(a) || self.requires(b);
        self.push(out, Op::Sub(a, b), req, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let req = self.requires(a) || self.requires(b);
        self.push(out, Op::Mul(a, b), req, "mul")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * factor).collect())?;
        let req = self.requires(x);
        self.push(out, Op::Scale(x, factor), req, "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let req = self.requires(x);
        self.push(out, Op::Relu(x), req, "relu")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let req = self.requires(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), req, "sum_all")
    }

    /// Rows of a matrix (last axis kept) picked by `index`; the result has
    /// shape `lead ++ [channels]` where `lead` multiplies to `index.len()`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>, lead: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.len() / c.max(1);
        if lead.iter().product::<usize>() != index.len() {
            return Err(Error::ShapeMismatch(format!(
                "gather: {} indices for leading shape {lead:?}",
                index.len()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            if i >= rows {
                return Err(Error::BadNeighborIndex { index: i, count: rows });
            }
            data.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let mut shape = lead.to_vec();
        shape.push(c);
        let req = self.requires(x);
        self.push(Tensor::new(shape, data)?, Op::Gather { x, index }, req, "gather")
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let split = Split::around(xv.shape(), axis)?;
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..split.outer {
            for i in 0..split.inner {
                let mut m = T::neg_infinity();
                for l in 0..split.len {
                    m = m.max(src[split.at(o, l, i)]);
                }
                let mut total = T::zero();
                for l in 0..split.len {
                    let at = split.at(o, l, i);
                    let e = (src[at] - m).exp();
                    out[at] = e;
                    total += e;
                }
                let inv = T::one() / total;
                for l in 0..split.len {
                    out[split.at(o, l, i)] *= inv;
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let req = self.requires(x);
        self.push(out, Op::Softmax { x, split }, req, "softmax")
    }

    /// Sum over `axis`, which is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let split = Split::around(xv.shape(), axis)?;
        let src = xv.data();
        let mut out = vec![T::zero(); split.outer * split.inner];
        for o in 0..split.outer {
            let dst = &mut out[o * split.inner..(o + 1) * split.inner];
            for l in 0..split.len {
                let row = &src[split.at(o, l, 0)..split.at(o, l, 0) + split.inner];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let req = self.requires(x);
        self.push(Tensor::new(shape, out)?, Op::SumAxis { x, split }, req, "sum_axis")
    }

    /// Maximum over `axis` (first maximum on ties), which is removed.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let split = Split::around(xv.shape(), axis)?;
        if split.len == 0 {
            return Err(Error::ShapeMismatch("max over an empty axis".into()));
        }
        let src = xv.data();
        let mut out = Vec::with_capacity(split.outer * split.inner);
        let mut argmax = Vec::with_capacity(split.outer * split.inner);
        for o in 0..split.outer {
            for i in 0..split.inner {
                let mut best = split.at(o, 0, i);
                for l in 1..split.len {
                    let at = split.at(o, l, i);
                    if src[at] > src[best] {
                        best = at;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let req = self.requires(x);
        self.push(Tensor::new(shape, out)?, Op::MaxAxis { x, argmax }, req, "max_axis")
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::ShapeMismatch(format!(
                "batch norm: input {:?} with {} scales and {} shifts",
                xv.shape(),
                self.value(gamma).len(),
                self.value(beta).len()
            )));
        }
        Ok((xv.len() / c, c))
    }

    /// Batch normalization over every axis but the last, using batch
    /// statistics. Returns the output with the batch mean and unbiased
    /// variance per channel.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (rows, c) = self.check_bn(x, gamma, beta)?;
        if rows < 2 {
            return Err(Error::DegenerateBatch(rows));
        }
        let src = self.value(x).data();
        let mut sum = vec![0.0f64; c];
        for row in src.chunks_exact(c) {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += v.as_f64();
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
        let mut sq = vec![0.0f64; c];
        for row in src.chunks_exact(c) {
            for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean_t[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + b[ch]);
            }
        }
        let unbiased: Vec<T> = sq
            .iter()
            .map(|s| T::from_f64(s / (rows as f64 - 1.0)))
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            req,
            "batch_norm",
        )?;
        Ok((v, mean_t, unbiased))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (_, c) = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::ShapeMismatch("batch norm: running statistics size".into()));
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
            .collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks_exact(c) {
            for ch in 0..c {
                out.push(g[ch] * (row[ch] - mean[ch]) * inv_std[ch] + b[ch]);
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            req,
            "batch_norm",
        )
    }

    /// Weighted combination of `k` source rows per output row:
    /// `out[r] = sum_j weights[r*k + j] * x[index[r*k + j]]`.
    pub fn interpolate(&mut self, x: Var, index: Vec<usize>, weights: Vec<T>, k: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.len() / c.max(1);
        if k == 0 || index.len() % k != 0 || weights.len() != index.len() {
            return Err(Error::ShapeMismatch(format!(
                "interpolate: {} indices, {} weights, k = {k}",
                index.len(),
                weights.len()
            )));
        }
        let out_rows = index.len() / k;
        let mut out = vec![T::zero(); out_rows * c];
        for (r, dst) in out.chunks_exact_mut(c).enumerate() {
            for j in 0..k {
                let src = index[r * k + j];
                if src >= rows {
                    return Err(Error::BadNeighborIndex { index: src, count: rows });
                }
                let w = weights[r * k + j];
                for (d, &s) in dst.iter_mut().zip(&xv.data()[src * c..(src + 1) * c]) {
                    *d += w * s;
                }
            }
        }
        let req = self.requires(x);
        self.push(
            Tensor::new(vec![out_rows, c], out)?,
            Op::Interpolate { x, index, weights, k },
            req,
            "interpolate",
        )
    }

    /// Mean cross-entropy of row-wise class scores (`rows x classes`)
    /// against target class indices, via a fused log-softmax.
    pub fn cross_entropy(&mut self, scores: Var, targets: &[usize]) -> Result<Var> {
        let sv = self.value(scores);
        if sv.shape().len() != 2 || sv.shape()[0] != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "cross entropy: scores {:?} for {} targets",
                sv.shape(),
                targets.len()
            )));
        }
        let k = sv.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::BadTarget {
                target: bad,
                classes: k,
            });
        }
        let mut probs = Vec::with_capacity(sv.len());
        let mut total = 0.0f64;
        for (row, &t) in sv.data().chunks_exact(k).zip(targets) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let z: T = row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
            let log_z = m + z.ln();
            total += (log_z - row[t]).as_f64();
            probs.extend(row.iter().map(|&v| (v - log_z).exp()));
        }
        let loss = T::from_f64(total / targets.len() as f64);
        let req = self.requires(scores);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                scores,
                targets: targets.to_vec(),
                probs,
            },
            req,
            "cross_entropy",
        )
    }

    /// Records an operation computed elsewhere together with its gradient
    /// rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        rule: Box<dyn BackwardRule<T> + Send + Sync>,
    ) -> Result<Var> {
        let req = inputs.iter().any(|&v| self.requires(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            req,
            "custom",
        )
    }

    /// Reverse sweep from a scalar `root`. Parameter gradients are added to
    /// `params`, variable gradients to the graph's leaf slots; repeated calls
    /// accumulate.
    pub fn backward(&mut self, root: Var, params: &mut ParamStore<T>) -> Result<()> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));
        let mut leaf_updates: Vec<(usize, Tensor<T>)> = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let need = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Variable => leaf_updates.push((i, g)),
                Op::Param(id) => {
                    let p = params.get_mut(*id);
                    if p.grad.shape() != g.shape() {
                        return Err(Error::ShapeMismatch(format!(
                            "gradient {:?} for parameter `{}` {:?}",
                            g.shape(),
                            p.name,
                            p.grad.shape()
                        )));
                    }
                    p.grad.add_assign(&g);
                }
                Op::Linear { x, w, b } => {
                    let wv = val(*w);
                    let xv = val(*x);
                    let c_out = wv.shape()[0];
                    let c_in = wv.shape()[1];
                    let rows = xv.len() / c_in;
                    if need(*x) {
                        let mut dx = vec![T::zero(); rows * c_in];
                        gemm(rows, c_out, c_in, g.data(), (c_out, 1), wv.data(), (c_in, 1), &mut dx, false);
                        accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                    }
                    if need(*w) {
                        let mut dw = vec![T::zero(); c_out * c_in];
                        gemm(c_out, rows, c_in, g.data(), (1, c_out), xv.data(), (c_in, 1), &mut dw, false);
                        accumulate(&mut grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                    }
                    if let Some(b) = b {
                        if need(*b) {
                            let mut db = vec![T::zero(); c_out];
                            for row in g.data().chunks_exact(c_out) {
                                for (d, &v) in db.iter_mut().zip(row) {
                                    *d += v;
                                }
                            }
                            accumulate(&mut grads, *b, Tensor::new(val(*b).shape().to_vec(), db)?);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if need(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if need(*b) {
                        accumulate(&mut grads, *b, map(&g, |v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads, *a, zip(&g, val(*b), |dy, y| dy * y));
                    }
                    if need(*b) {
                        accumulate(&mut grads, *b, zip(&g, val(*a), |dy, x| dy * x));
                    }
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, map(&g, |v| v * f));
                }
                Op::Relu(x) => {
                    let dx = zip(&g, &node.value, |dy, y| if y > T::zero() { dy } else { T::zero() });
                    accumulate(&mut grads, *x, dx);
                }
                Op::SumAll(x) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(val(*x).shape(), s));
                }
                Op::Gather { x, index } => {
                    let xv = val(*x);
                    let c = xv.last_dim();
                    let mut dx = vec![T::zero(); xv.len()];
                    for (r, &src) in index.iter().enumerate() {
                        let row = &g.data()[r * c..(r + 1) * c];
                        for (d, &v) in dx[src * c..(src + 1) * c].iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::Softmax { x, split } => {
                    let y = node.value.data();
                    let dy = g.data();
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..split.outer {
                        for i in 0..split.inner {
                            let mut dot = T::zero();
                            for l in 0..split.len {
                                let at = split.at(o, l, i);
                                dot += dy[at] * y[at];
                            }
                            for l in 0..split.len {
                                let at = split.at(o, l, i);
                                dx[at] = y[at] * (dy[at] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(node.value.shape().to_vec(), dx)?);
                }
                Op::SumAxis { x, split } => {
                    let xv = val(*x);
                    let mut dx = vec![T::zero(); xv.len()];
                    for o in 0..split.outer {
                        let src = &g.data()[o * split.inner..(o + 1) * split.inner];
                        for l in 0..split.len {
                            let start = split.at(o, l, 0);
                            dx[start..start + split.inner].copy_from_slice(src);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::MaxAxis { x, argmax, .. } => {
                    let xv = val(*x);
                    let mut dx = vec![T::zero(); xv.len()];
                    for (&at, &dy) in argmax.iter().zip(g.data()) {
                        dx[at] += dy;
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let rows = xhat.len() / c;
                    let mut sum_dy = vec![0.0f64; c];
                    let mut sum_dy_xhat = vec![0.0f64; c];
                    for (dy_row, h_row) in g.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            sum_dy[ch] += dy_row[ch].as_f64();
                            sum_dy_xhat[ch] += (dy_row[ch] * h_row[ch]).as_f64();
                        }
                    }
                    if need(*x) {
                        let gv = val(*gamma).data();
                        let n = rows as f64;
                        let coef: Vec<T> = (0..c).map(|ch| gv[ch] * inv_std[ch] / T::from_f64(n)).collect();
                        let mean_dy: Vec<T> = sum_dy.iter().map(|&s| T::from_f64(s)).collect();
                        let mean_dyh: Vec<T> = sum_dy_xhat.iter().map(|&s| T::from_f64(s)).collect();
                        let nt = T::from_f64(n);
                        let mut dx = Vec::with_capacity(xhat.len());
                        for (dy_row, h_row) in g.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for ch in 0..c {
                                dx.push(coef[ch] * (nt * dy_row[ch] - mean_dy[ch] - h_row[ch] * mean_dyh[ch]));
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::new(val(*x).shape().to_vec(), dx)?);
                    }
                    if need(*gamma) {
                        let d = sum_dy_xhat.iter().map(|&s| T::from_f64(s)).collect();
                        accumulate(&mut grads, *gamma, Tensor::new(val(*gamma).shape().to_vec(), d)?);
                    }
                    if need(*beta) {
                        let d = sum_dy.iter().map(|&s| T::from_f64(s)).collect();
                        accumulate(&mut grads, *beta, Tensor::new(val(*beta).shape().to_vec(), d)?);
                    }
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let xv = val(*x);
                    let gv = val(*gamma).data();
                    if need(*x) {
                        let mut dx = Vec::with_capacity(xv.len());
                        for dy_row in g.data().chunks_exact(c) {
                            for ch in 0..c {
                                dx.push(dy_row[ch] * gv[ch] * inv_std[ch]);
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                    }
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for (dy_row, x_row) in g.data().chunks_exact(c).zip(xv.data().chunks_exact(c)) {
                        for ch in 0..c {
                            dg[ch] += dy_row[ch] * (x_row[ch] - mean[ch]) * inv_std[ch];
                            db[ch] += dy_row[ch];
                        }
                    }
                    if need(*gamma) {
                        accumulate(&mut grads, *gamma, Tensor::new(val(*gamma).shape().to_vec(), dg)?);
                    }
                    if need(*beta) {
                        accumulate(&mut grads, *beta, Tensor::new(val(*beta).shape().to_vec(), db)?);
                    }
                }
                Op::Interpolate { x, index, weights, k } => {
                    let xv = val(*x);
                    let c = xv.last_dim();
                    let mut dx = vec![T::zero(); xv.len()];
                    for (r, dy) in g.data().chunks_exact(c).enumerate() {
                        for j in 0..*k {
                            let src = index[r * k + j];
                            let w = weights[r * k + j];
                            for (d, &v) in dx[src * c..(src + 1) * c].iter_mut().zip(dy) {
                                *d += w * v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::CrossEntropy {
                    scores,
                    targets,
                    probs,
                } => {
                    let sv = val(*scores);
                    let k = sv.shape()[1];
                    let scale = g.data()[0] / T::from_f64(targets.len() as f64);
                    let mut ds: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        ds[r * k + t] -= scale;
                    }
                    accumulate(&mut grads, *scores, Tensor::new(sv.shape().to_vec(), ds)?);
                }
                Op::Custom { inputs, rule } => {
                    let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                    let dins = rule.backward(&values, &node.value, &g);
                    for (&v, d) in inputs.iter().zip(dins) {
                        if let (true, Some(d)) = (need(v), d) {
                            if d.shape() != val(v).shape() {
                                return Err(Error::ShapeMismatch(format!(
                                    "custom gradient {:?} for input {:?}",
                                    d.shape(),
                                    val(v).shape()
                                )));
                            }
                            accumulate(&mut grads, v, d);
                        }
                    }
                }
            }
        }
        for (i, g) in leaf_updates {
            match self.leaf_grads.get_mut(&i) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    self.leaf_grads.insert(i, g);
                }
            }
        }
        Ok(())
    }

    /// Clears accumulated gradients of variable leaves.
    pub fn zero_grads(&mut self) {
        self.leaf_grads.clear();
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// `c (m x n, row-major) (+)= a (m x k) * b (k x n)` with explicit
/// `(row, column)` strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert_eq!(c.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: bounds checked above; `c` is a distinct mutable slice.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.variable(Tensor::scalar(4.0));
        let z = g.mul(x, y).unwrap();
        g.backward(z, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0]);
        assert_eq!(g.grad(y).unwrap().data(), &[3.0]);
    }

    #[test]
    fn sum_of_parameter_gives_ones() {
        let mut store = ParamStore::new();
        let id = store.add("p", t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0])).unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let s = g.sum_all(p).unwrap();
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[1.0; 6]);
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[2.0; 6]);
        store.zero_grads();
        assert_eq!(store.get(id).grad.data(), &[0.0; 6]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(
            g.backward(x, &mut ParamStore::new()),
            Err(Error::NonScalarRoot(_))
        ));
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let eye = g.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let zero_b = g.constant(t(&[3], &[0.0; 3]));
        let y = g.linear(x, eye, Some(zero_b)).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let zeros = g.constant(t(&[4, 2], &[0.0; 8]));
        let w = g.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.constant(t(&[3], &[0.5, -1.0, 2.0]));
        let y = g.linear(zeros, w, Some(b)).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 3]);
        for row in g.value(y).data().chunks(3) {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
        assert!(g.linear(zeros, eye, None).is_err());
    }

    #[test]
    fn relu_values_and_dead_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[3], &[-1.0, -0.5, -3.0]));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let s = g.sum_all(y).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_is_stable() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
        let x = g.constant(t(&[2], &[1000.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data()[0], 1.0);
        assert!(g.value(y).data()[1] < 1e-300);
    }

    #[test]
    fn softmax_along_middle_axis() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.constant(t(&[2, 3, 4], &data));
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y).data();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|l| v[(o * 3 + l) * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_limits() {
        let mut g = Graph::<f64>::new();
        let perfect = g.constant(t(&[2, 2], &[50.0, 0.0, 0.0, 50.0]));
        let l = g.cross_entropy(perfect, &[0, 1]).unwrap();
        assert!(g.value(l).data()[0] < 1e-6);
        let uniform = g.constant(t(&[3, 5], &[0.25; 15]));
        let l = g.cross_entropy(uniform, &[0, 4, 2]).unwrap();
        assert!((g.value(l).data()[0] - 5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            g.cross_entropy(uniform, &[0, 5, 1]),
            Err(Error::BadTarget { target: 5, classes: 5 })
        ));
    }

    #[test]
    fn batch_norm_train_standardizes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 1], &[-1.0, 1.0]));
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        let (y, mean, var) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let v = g.value(y).data();
        assert!((v[0] + expect).abs() < 1e-15 && (v[1] - expect).abs() < 1e-15);
        assert_eq!(mean, vec![0.0]);
        assert_eq!(var, vec![2.0]);

        let single = g.constant(t(&[1, 1], &[3.0]));
        assert!(matches!(
            g.batch_norm_train(single, gamma, beta, 1e-5),
            Err(Error::DegenerateBatch(1))
        ));
    }

    #[test]
    fn batch_norm_eval_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 2], &[1.0, -2.0, 0.5, 4.0, 3.0, -1.0]));
        let gamma = g.constant(t(&[2], &[1.0, 1.0]));
        let beta = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.batch_norm_eval(x, gamma, beta, &[0.0, 0.0], &[1.0, 1.0], 1e-5).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn max_axis_routes_gradient_to_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[2, 3, 1], &[1.0, 5.0, 2.0, 7.0, 0.0, 7.0]));
        let m = g.max_axis(x, 1).unwrap();
        assert_eq!(g.value(m).data(), &[5.0, 7.0]);
        let s = g.sum_all(m).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gather_checks_indices() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let y = g.gather_rows(x, vec![2, 0, 2], &[3]).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(
            g.gather_rows(x, vec![3], &[1]),
            Err(Error::BadNeighborIndex { index: 3, count: 3 })
        ));
    }

    #[test]
    fn finite_check_flags_overflow() {
        let mut g = Graph::<f32>::new();
        g.set_check_finite(true);
        let x = g.constant(Tensor::new(vec![1], vec![f32::MAX]).unwrap());
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
