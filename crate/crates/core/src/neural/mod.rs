//! Small reverse-mode differentiation core with dense layers, Adam and
//! finite-difference gradient checking.

mod adam;
mod gradcheck;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{
    compare_with_differences, gradient_check, relative_error, GradCheckReport, FD_STEP,
};
pub use mlp::{Activation, LayerSpec, Mlp};
pub use params::{Bound, ParamDocument, ParamEntry, ParameterSet, PARAM_FORMAT_VERSION};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
