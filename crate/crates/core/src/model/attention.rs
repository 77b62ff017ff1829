//! Vector self-attention over local neighborhoods and the residual block
//! built around it.

use crate::error::Result;
use crate::nn::{Ctx, Init, Linear, Mlp2, Real, Tensor, Var};

use super::plan::Neighborhood;

/// For point `i` with neighbors `j`:
///
/// ```text
/// delta_ij = theta(p_i - p_j)
/// w_ij     = softmax_j(gamma(k(x_i) - q(x_j) + delta_ij))     (per channel)
/// y_i      = sum_j w_ij * (v(x_j) + delta_ij)
/// ```
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub gamma: Mlp2,
    pub theta: Mlp2,
    pub dim: usize,
}

/// Intermediate results of an attention pass that tests inspect.
pub struct AttentionOutput {
    pub y: Var,
    /// `points x h x d` attention weights.
    pub weights: Var,
}

impl AttentionLayer {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(init, &format!("{name}.q"), dim, dim, false)?,
            k: Linear::new(init, &format!("{name}.k"), dim, dim, false)?,
            v: Linear::new(init, &format!("{name}.v"), dim, dim, false)?,
            gamma: Mlp2::new(init, &format!("{name}.gamma"), dim, dim, dim)?,
            theta: Mlp2::new(init, &format!("{name}.theta"), 3, dim, dim)?,
            dim,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, nbr: &Neighborhood) -> Result<Var> {
        Ok(self.forward_detailed(ctx, x, nbr)?.y)
    }

    pub fn forward_detailed<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        nbr: &Neighborhood,
    ) -> Result<AttentionOutput> {
        let n = nbr.points();
        let h = nbr.h;
        let lead = [n, h];

        let offsets: Vec<f64> = nbr.offsets.iter().flatten().copied().collect();
        let rel = ctx.graph.constant(Tensor::from_f64(vec![n, h, 3], &offsets)?);
        let delta = self.theta.forward(ctx, rel)?;

        let q = self.q.forward(ctx, x)?;
        let k = self.k.forward(ctx, x)?;
        let v = self.v.forward(ctx, x)?;
        let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(h)).collect();
        let k_i = ctx.graph.gather_rows(k, centers, &lead)?;
        let q_j = ctx.graph.gather_rows(q, nbr.index.clone(), &lead)?;
        let v_j = ctx.graph.gather_rows(v, nbr.index.clone(), &lead)?;

        let rel_feat = ctx.graph.sub(k_i, q_j)?;
        let rel_feat = ctx.graph.add(rel_feat, delta)?;
        let logits = self.gamma.forward(ctx, rel_feat)?;
        let weights = ctx.graph.softmax(logits, 1)?;

        let values = ctx.graph.add(v_j, delta)?;
        let weighted = ctx.graph.mul(weights, values)?;
        let y = ctx.graph.sum_axis(weighted, 1)?;
        Ok(AttentionOutput { y, weights })
    }
}

/// `x + linear2(attention(linear1(x)))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub linear1: Linear,
    pub attention: AttentionLayer,
    pub linear2: Linear,
}

impl Block {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            linear1: Linear::new(init, &format!("{name}.linear1"), dim, dim, true)?,
            attention: AttentionLayer::new(init, &format!("{name}.attn"), dim)?,
            linear2: Linear::new(init, &format!("{name}.linear2"), dim, dim, true)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, nbr: &Neighborhood) -> Result<Var> {
        let y = self.linear1.forward(ctx, x)?;
        let y = self.attention.forward(ctx, y, nbr)?;
        let y = self.linear2.forward(ctx, y)?;
        ctx.graph.add(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{knn, Point3};
    use crate::nn::{BatchNormState, Mode, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture<T: Real> {
        params: ParamStore<T>,
        bn: Vec<BatchNormState<T>>,
    }

    fn fixture<T: Real, L>(seed: u64, build: impl FnOnce(&mut Init<'_, T>) -> L) -> (Fixture<T>, L) {
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = build(&mut Init {
            params: &mut params,
            bn: &mut bn,
            rng: &mut rng,
        });
        (Fixture { params, bn }, layer)
    }

    fn cloud(n: usize, d: usize, seed: u64) -> (Vec<Point3>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
            .collect();
        let feats = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (pts, feats)
    }

    #[test]
    fn single_self_neighbor_gives_value_plus_encoding() {
        let d = 4;
        let (fx, layer) = fixture::<f64, _>(1, |init| AttentionLayer::new(init, "a", d).unwrap());
        let (pts, feats) = cloud(6, d, 2);
        let nbr = Neighborhood::new(&pts, (0..6).collect(), 1).unwrap();
        let mut ctx = Ctx::new(&fx.params, &fx.bn, Mode::Eval);
        let x = ctx.graph.constant(Tensor::new(vec![6, d], feats).unwrap());
        let y = layer.forward(&mut ctx, x, &nbr).unwrap();
        let v = layer.v.forward(&mut ctx, x).unwrap();
        let zero = ctx.graph.constant(Tensor::zeros(&[1, 3]));
        let theta0 = layer.theta.forward(&mut ctx, zero).unwrap();
        let (y, v, t) = (ctx.graph.value(y), ctx.graph.value(v), ctx.graph.value(theta0));
        for i in 0..6 {
            for c in 0..d {
                assert!((y.data()[i * d + c] - (v.data()[i * d + c] + t.data()[c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_sum_to_one_per_channel() {
        let d = 8;
        let h = 5;
        let (fx, layer) = fixture::<f32, _>(3, |init| AttentionLayer::new(init, "a", d).unwrap());
        let (pts, feats) = cloud(30, d, 4);
        let nbr = Neighborhood::new(&pts, knn(&pts, &pts, h).unwrap(), h).unwrap();
        let mut ctx = Ctx::new(&fx.params, &fx.bn, Mode::Eval);
        let x = ctx.graph.constant(Tensor::from_f64(vec![30, d], &feats).unwrap());
        let out = layer.forward_detailed(&mut ctx, x, &nbr).unwrap();
        let w = ctx.graph.value(out.weights).data();
        for i in 0..30 {
            for c in 0..d {
                let s: f64 = (0..h).map(|j| w[(i * h + j) * d + c] as f64).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let d = 4;
        let (mut fx, block) = fixture::<f32, _>(5, |init| Block::new(init, "b", d).unwrap());
        for p in fx.params.iter_mut() {
            p.value.fill(0.0);
        }
        let (pts, feats) = cloud(12, d, 6);
        let nbr = Neighborhood::new(&pts, knn(&pts, &pts, 3).unwrap(), 3).unwrap();
        let mut ctx = Ctx::new(&fx.params, &fx.bn, Mode::Eval);
        let x = ctx.graph.constant(Tensor::from_f64(vec![12, d], &feats).unwrap());
        let y = block.forward(&mut ctx, x, &nbr).unwrap();
        assert_eq!(ctx.graph.value(y), ctx.graph.value(x));
    }

    #[test]
    fn permuting_points_permutes_outputs() {
        let d = 6;
        let h = 4;
        let n = 25;
        let (fx, layer) = fixture::<f32, _>(7, |init| AttentionLayer::new(init, "a", d).unwrap());
        let (pts, feats) = cloud(n, d, 8);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        // New point `a` is old point `perm[a]`.
        let mut inverse = vec![0; n];
        for (a, &p) in perm.iter().enumerate() {
            inverse[p] = a;
        }
        let index = knn(&pts, &pts, h).unwrap();
        let pts2: Vec<Point3> = perm.iter().map(|&p| pts[p]).collect();
        let feats2: Vec<f64> = perm.iter().flat_map(|&p| feats[p * d..(p + 1) * d].to_vec()).collect();
        let index2: Vec<usize> = perm
            .iter()
            .flat_map(|&p| index[p * h..(p + 1) * h].iter().map(|&j| inverse[j]).collect::<Vec<_>>())
            .collect();

        let run = |pts: &[Point3], feats: &[f64], index: Vec<usize>| {
            let nbr = Neighborhood::new(pts, index, h).unwrap();
            let mut ctx = Ctx::new(&fx.params, &fx.bn, Mode::Eval);
            let x = ctx.graph.constant(Tensor::from_f64(vec![n, d], feats).unwrap());
            let y = layer.forward(&mut ctx, x, &nbr).unwrap();
            ctx.graph.value(y).clone()
        };
        let y1 = run(&pts, &feats, index);
        let y2 = run(&pts2, &feats2, index2);
        for (a, &p) in perm.iter().enumerate() {
            for c in 0..d {
                assert!((y2.data()[a * d + c] - y1.data()[p * d + c]).abs() < 1e-5);
            }
        }
    }
}
