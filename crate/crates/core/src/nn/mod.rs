//! Tensors, reverse-mode autodiff, primitive layers, and SGD.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod sgd;
pub mod tensor;

pub use checkpoint::{Checkpoint, Entry};
pub use graph::{BackwardRule, Graph, Var};
pub use layers::{apply_bn_updates, BatchNorm, BnUpdate, Ctx, Init, Linear, LinearBnRelu, Mlp2};
pub use params::{BatchNormState, Mode, ParamId, ParamStore, Parameter};
pub use sgd::Sgd;
pub use tensor::{Real, Tensor};
