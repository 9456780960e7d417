//! Self-supervised rigid alignment of adjacent tomography slices.
//!
//! Adjacent B-scans of the same volume are almost the same picture, shifted
//! and tilted by acquisition motion. This crate corrects that inter-frame
//! misalignment two ways:
//!
//! * a deep Q-network agent that nudges a rigid transform one pixel or one
//!   degree at a time, trained without labels from an intensity-similarity
//!   reward ([`agent`], [`rlenv`], [`neural`]),
//! * a derivative-free multi-start pattern search over the same transform
//!   space ([`baseline`]).
//!
//! Supporting pieces: [`imgcore`] holds the image container, rigid transforms
//! and warping; [`simkit`] the similarity metrics (Pearson, SSIM, their
//! blend, NMI); [`phantom`] a speckled layered-retina generator for synthetic
//! ground truth; [`evalkit`] episode reports and summary statistics;
//! [`dataset`] the pair manifest format read by the training and evaluation
//! commands.
//!
//! Everything that draws random numbers takes an explicit seed and is
//! deterministic for a fixed seed.

pub mod agent;
pub mod baseline;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod imgcore;
pub mod neural;
pub mod phantom;
pub mod rlenv;
pub mod seed;
pub mod simkit;

pub use error::{Error, Result};
pub use imgcore::{Image2D, RigidTransform2D};
