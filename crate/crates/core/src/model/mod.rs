//! The point transformer: vector attention, transitions, and the full
//! encoder–decoder network.

pub mod attention;
pub mod augment;
pub mod config;
pub mod gradcheck;
pub mod network;
pub mod plan;
pub mod transition;

pub use attention::{AttentionLayer, Block};
pub use augment::{rigid_transform, Augmentation};
pub use config::ArchConfig;
pub use network::{argmax_rows, Forward, Model};
pub use plan::{BatchPlan, Neighborhood};
pub use transition::{TransitionDown, TransitionUp};
