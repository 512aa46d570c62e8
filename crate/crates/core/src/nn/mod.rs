//! Dense feed-forward models: affine layers, SwiGLU, RMSNorm, residual
//! blocks, with exact analytic backward passes.
//!
//! The encoder maps a scaled 64-sample patch to a 128-d embedding through 6
//! residual blocks of width 512; the decoder mirrors it in reverse. Block
//! structure: `y = shortcut(x) + down(swiglu(up(rmsnorm(x))))`, where the
//! shortcut is the identity unless the block changes width, in which case it
//! is a single affine projection.

mod linear;
mod model;
mod ops;

pub use linear::Linear;
pub use model::{Block, BlockCache, BlockGrads, ForwardCache, Mlp, MlpConfig, MlpGrads};
pub use ops::{rmsnorm_backward, rmsnorm_forward, swiglu_backward, swiglu_forward, RmsNorm};

/// Shared RMSNorm epsilon.
pub const RMSNORM_EPS: f64 = 1e-6;
