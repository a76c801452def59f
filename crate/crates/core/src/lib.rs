//! Convex-relaxation bound propagation and certified training for
//! feedforward ReLU networks.

pub mod bounds;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod lp;
pub mod network;
pub mod parallel;
pub mod tensor;
pub mod training;

pub use bounds::{InputBox, LayerBounds, RelaxationKind};
pub use error::{Error, Result};
pub use network::{Network, Specification};
