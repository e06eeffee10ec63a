//! Self-supervised learning recipe for histopathology patches.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! | Module | Contents |
//! |---|---|
//! | [`imagecolor`] | colour-space conversions, Reinhard transfer, RandStainNA, colour jitter |
//! | [`corruptions`] | the PathBlur chain: Gaussian blur, Poisson noise, JPEG quantization |
//! | [`views`] | random resized crops, overlap-constrained crop pairs, multi-crop batches, token masks |
//! | [`rebalance`] | spherical k-means and per-cluster balanced resampling |
//! | [`objectives`] | NT-Xent, hard-negative reweighting, Sinkhorn, MSN and the hybrid loss |
//! | [`embeddings`] | embedding records, centre-token pooling, the `PSEB1` store |
//! | [`probe`] | logistic-regression linear probes, AUC, composite metric, bootstrap |
//! | [`aggregate`] | case-level pooling, weak labels, data titration |
//! | [`synth`] | synthetic histology corpus and a deterministic toy encoder |
//!
//! Every random operation takes an explicit RNG or seed; nothing reads global
//! state, so results are reproducible regardless of thread count.

pub mod aggregate;
pub mod corruptions;
pub mod embeddings;
pub mod error;
pub mod imagecolor;
pub mod objectives;
pub mod patch;
pub mod probe;
pub mod rebalance;
pub mod seed;
pub mod synth;
mod table;
pub mod views;

pub use error::{Error, Result};
pub use patch::{Magnification, Patch};
