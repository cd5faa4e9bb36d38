//! Reverse-mode differentiation over the closed operation set the pipeline
//! uses: affine maps, `sin`/`cos`, `sigmoid`, `exp`, `log`, `softplus`,
//! row softmax, elementwise arithmetic, reductions, concatenation, row
//! gather/scatter, strided 2-D convolution, leaky rectifier, and a fused
//! volume-rendering quadrature.
//!
//! Second derivatives are not supported. Penalties on input gradients are
//! built from explicit tangent passes (see `disc::r1_penalty` and
//! `fields::delta_gradient`), which only use first-order ops.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{gradcheck, BlockReport, GradcheckConfig, GradcheckReport};
pub use graph::{ConvSpec, Gradients, Graph, RaySegments, Var};
pub use tensor::Tensor;
