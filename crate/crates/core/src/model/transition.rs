//! Resolution changes between encoder/decoder levels.

use crate::error::Result;
use crate::nn::{Ctx, Init, LinearBnRelu, Real, Var};

use super::plan::{DownPlan, UpPlan};

/// Groups each sampled center with its nearest points of the finer level,
/// transforms the group with a shared linear+BN+ReLU, and max-pools it.
#[derive(Debug, Clone)]
pub struct TransitionDown {
    pub unit: LinearBnRelu,
}

impl TransitionDown {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            unit: LinearBnRelu::new(init, name, c_in, c_out)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, plan: &DownPlan) -> Result<Var> {
        // The pointwise map commutes with gathering, so apply it once per
        // source point instead of once per (center, neighbor) pair.
        let y = self.unit.linear.forward(ctx, x)?;
        let centers = plan.index.len() / plan.h;
        let grouped = ctx.graph.gather_rows(y, plan.index.clone(), &[centers, plan.h])?;
        let grouped = self.unit.bn_relu(ctx, grouped)?;
        ctx.graph.max_axis(grouped, 1)
    }
}

/// Interpolates projected coarse features onto the finer level and adds the
/// projected skip features of that level.
#[derive(Debug, Clone)]
pub struct TransitionUp {
    pub coarse: LinearBnRelu,
    pub skip: LinearBnRelu,
}

impl TransitionUp {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_coarse: usize, c_fine: usize) -> Result<Self> {
        Ok(Self {
            coarse: LinearBnRelu::new(init, &format!("{name}.coarse"), c_coarse, c_fine)?,
            skip: LinearBnRelu::new(init, &format!("{name}.skip"), c_fine, c_fine)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, coarse: Var, skip: Var, plan: &UpPlan) -> Result<Var> {
        let c = self.coarse.forward(ctx, coarse)?;
        let weights = plan.weights.iter().map(|&w| T::from_f64(w)).collect();
        let up = ctx.graph.interpolate(c, plan.index.clone(), weights, plan.k)?;
        let s = self.skip.forward(ctx, skip)?;
        ctx.graph.add(up, s)
    }
}
