//! Multi-layer convolutional sparse coding with l4-norm dictionary learning
//! for unpaired cross-modal image synthesis.
//!
//! The crate is organized around a training pipeline that, per layer,
//! learns orthogonal patch dictionaries for two image modalities by
//! l4-norm maximization (matching/stretching/projection), normalizes the
//! resulting feature maps, aligns the two code distributions with a
//! multilayer maximum-mean-discrepancy penalty and an SPD-manifold data
//! fidelity term, and learns a linear channel associator used to synthesize
//! one modality from the other.
//!
//! Entry points:
//! * [`model::train`] / [`model::synthesize`] — the full pipeline;
//! * [`csc`] — the classic l1-penalized convolutional sparse coding
//!   baseline;
//! * [`l4`] — the orthogonal dictionary solver on its own;
//! * [`data`] — synthetic multi-modal phantom datasets and the `CSL4`
//!   tensor file format;
//! * [`metrics`] — PSNR / SSIM / Dice evaluation;
//! * [`cli`] — the command-line surface used by the `cscl4net` binary.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod csc;
pub mod data;
pub mod error;
pub mod iun;
pub mod l4;
pub mod linalg;
pub mod metrics;
pub mod mmd;
pub mod model;
pub mod spd;
pub mod tensor;

pub mod cli;

pub use error::{Error, Result};
pub use tensor::{FilterBank, Image2, Tensor3};
