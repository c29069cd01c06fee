//! Minimal reverse-mode differentiation over dense row-major arrays.

mod conv;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use conv::ConvGeom;
pub use gradcheck::{finite_diff_check, rel_error, CoordCheck, GradCheckReport, EPS_DEN};
pub use graph::{Gradients, Graph, Unary, Var};
pub use params::{
    checkpoint_paths, clip_global_norm, global_norm, AdamConfig, Bound, ClipReport, NamedArrays, ParamEntry,
    ParamStore,
};
pub use scalar::Real;
pub use tensor::Tensor;
