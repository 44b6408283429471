//! Small dense-tensor toolkit: `f64` tensors, a define-by-run reverse-mode
//! tape, an Adam optimizer and finite-difference gradient checking.
//!
//! Models build a fresh [`Graph`] per step, pull parameters from a
//! [`ParamStore`] with [`Graph::param`], and push gradients back with
//! [`Graph::backward_into`].

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{compare_gradients, grad_check, grad_check_params, GradCheckReport};
pub use graph::{log_softmax, log_sum_exp, sigmoid, softmax_in_place, tanh, Activation, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
