//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Layout convention is NCHW for 2-D and NCDHW for 3-D activations. A
//! [`Graph`] records every op in execution order; [`Graph::backward`] walks
//! it in reverse. Trainable state lives in a [`ParamStore`] and is bound into
//! a graph with [`Graph::param`].

pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, Record};
pub use conv::ConvGeom;
pub use gradcheck::{check_gradients, check_gradients_in, InputDist, InputSpec};
pub use graph::{Graph, Mode, Var};
pub use params::{fan_in_uniform, he_uniform, ParamId, ParamKind, ParamStore};
pub use tensor::{Real, Tensor};

/// Probability clip used before every logarithm in the losses.
pub const LOG_EPS: f64 = 1e-12;

#[cfg(test)]
mod tests;
