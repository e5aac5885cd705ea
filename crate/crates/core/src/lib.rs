//! Joint learning of cross-modal hash codes at several code lengths.
//!
//! Two modalities (for example text and image features of the same items)
//! are mapped through RBF anchor features into a shared latent space, from
//! which binary codes of every requested length are learned in a single
//! alternating-minimization run. Longer codes inform shorter ones through a
//! linear chain term, and labels are reconstructed from the latent space.
//!
//! Module map:
//!
//! - [`model`]: domain types and the training objective
//! - [`diagnostic`]: pairwise distance-preservation bounds
//! - [`kernel`]: anchor selection, kernel width, RBF features
//! - [`solver`]: block updates and the training loop
//! - [`codec`]: out-of-sample encoding, bit packing, Hamming distance
//! - [`eval`]: Hamming ranking, mAP and precision-recall curves
//! - [`synth`]: synthetic data and brute-force oracles
//! - [`io`], [`bundle`], [`config`]: file formats and persistence

pub mod bundle;
pub mod codec;
pub mod config;
pub mod diagnostic;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod model;
pub mod pipeline;
pub mod solver;
pub mod synth;

pub use codec::{Encoder, PackedCodes};
pub use error::{Error, Result};
pub use eval::{DbSource, EvalReport, Task};
pub use kernel::KernelModel;
pub use model::{FeatureMatrix, HyperParams, LabelMatrix, Modality, ModelState, ObjectiveBreakdown};
pub use pipeline::{train_from_raw, TrainedModel};
pub use solver::{train, TrainTrace};
