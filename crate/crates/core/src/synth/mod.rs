//! Procedural synthetic coronary trees standing in for clinical data.

pub mod config;
pub mod dataset;
pub mod taxonomy;
pub mod tree;

pub use config::{BranchShape, SynthConfig};
pub use dataset::{generate_dataset, load_case, write_dataset, LoadedCase, Manifest, SynthCase};
pub use taxonomy::{class_name, Branch, NUM_CLASSES};
pub use tree::{derive_seed, generate_tree, SynthBranch, SynthTree};
