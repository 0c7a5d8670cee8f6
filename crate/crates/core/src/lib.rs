//! Gaussian-splat language fields with a generalized feature autoencoder.
//!
//! The crate is organized the way data flows through the pipeline:
//! [`scene`] holds splats, cameras and file formats; [`raster`] composites
//! them into color and latent maps; [`codec`] compresses embeddings into
//! latents; [`field`] fits per-splat latents against encoded targets;
//! [`query`] decodes rendered latents and scores them against queries;
//! [`synth`] generates ground-truth worlds; [`harness`] ties everything into
//! sweeps and end-to-end runs.

// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod field;
pub mod harness;
pub mod query;
pub mod raster;
pub mod scene;
pub mod synth;

pub use codec::{Autoencoder, EmbeddingCorpus, LossMode, TrainConfig};
pub use field::{FieldTrainConfig, TargetFeatureMap};
pub use harness::HarnessError;
pub use query::{Query, QueryResult};
pub use raster::{render, render_bruteforce, FeatureMap, RenderOptions, RenderOutput};
pub use scene::{covariance_of, Camera, Gaussian, Scene, SceneMetadata, Tensor};
pub use synth::{ConceptDictionary, SyntheticWorld};
