//! Patch-based occlusion-aware detection (POD).
//!
//! The crate bundles everything needed to study adversarial patches against
//! a single-channel (infrared-style) person detector at desk scale:
//!
//! * [`data`]: images, boxes, label-file ingestion, size filtering and a
//!   deterministic synthetic scene generator.
//! * [`augment`]: random erase / invert / noise patch augmentation with
//!   optional patch-class labels.
//! * [`detector`]: a small differentiable grid detector, its loss with the
//!   weighted class term, and the five training modes.
//! * [`attacks`]: noise, universal gradient, 3x3 binary-grid and
//!   shape/location patch attacks.
//! * [`eval`]: IoU, AP@0.5 and the scenario-matrix protocol.
//! * [`cli`]: configuration-file driven runs behind the `pod` binary.

pub mod attacks;
pub mod augment;
pub mod cli;
pub mod data;
pub mod detector;
mod error;
pub mod eval;
pub mod seed;

pub use error::{PodError, Result};
