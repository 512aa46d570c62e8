//! Core algorithms for discrete time-series tokenization and reward-driven
//! policy optimization.
//!
//! The pipeline turns a univariate series into discrete tokens in four steps:
//! split into 64-sample patches, normalize each patch by a power-of-2 scale,
//! embed the scaled patch with an MLP encoder, then quantize the embedding
//! with a 3-level residual vector quantizer. Each patch becomes exactly four
//! tokens: one scale token followed by three codebook indices. A mirrored
//! decoder inverts the process.
//!
//! On top of the codec this crate provides:
//!
//! - [`train`]: end-to-end autoencoder + codebook training (commitment loss,
//!   EMA codebook updates, dead-code expiration, k-means init, and a choice
//!   of straight-through or rotation gradient estimators),
//! - [`rewards`]: verifiable reward functions (tag-format scoring, exact
//!   match, SMAPE-based forecast reward) and forecasting metrics,
//! - [`grpo`] / [`demo`]: group-relative advantage estimation (GRPO and the
//!   DAPO mean-only variant) driving a small categorical policy on tokenized
//!   toy tasks.
//!
//! The crate is `no_std` + `alloc` compatible; all file formats, IO, and the
//! CLI live in the companion `tstok-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod codec;
pub mod corpus;
pub mod demo;
pub mod error;
pub mod grpo;
pub mod nn;
pub mod rewards;
pub mod rvq;
pub mod series;
pub mod stream;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use codec::Tokenizer;
pub use error::CoreError;
pub use series::{Patch, Series, PATCH_LEN, SCALE_EXP_MAX, SCALE_EXP_MIN};
pub use stream::TokenStream;
pub use tensor::Tensor2D;
