//! Dense tensors and a reverse-mode tape covering the operations the model
//! needs, plus a central-difference gradient checker.

mod gradcheck;
mod graph;
mod ops;
mod real;
mod tensor;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, numeric_gradients, relative_error,
    select_elements, GradCheckReport, Selection,
};
pub use graph::{Graph, Var};
pub use ops::{gelu, layer_norm, linear, matmul, softmax};
pub use real::Real;
pub use tensor::{ParamSet, Parameter, Tensor};
