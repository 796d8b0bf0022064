//! Degradation operators `A` and their pseudoinverse appliers `A†`.

mod degradation;
pub mod dense;
mod kernel;
mod spec;

pub use degradation::{Blur, DegradationKind, LinearDegradation};
pub use dense::{
    materialize, materialize_pinv, svd_pinv, verify_operator, ConditionReport, DenseOperator,
};
pub use kernel::BlurKernel;
pub use spec::{OpSpec, OpTerm, DEFAULT_BLUR_SIGMA, DEFAULT_BLUR_SIZE, DEFAULT_WIENER_GAMMA};
