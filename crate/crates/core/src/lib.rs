//! Desk-scale simulator of robust asymmetric heterogeneous federated learning.
//!
//! Clients own structurally different MLPs and corrupted private data. Each
//! round they train locally with mixed augmentation, a consistency term and a
//! diversity-enhanced supervised contrastive objective, and learn from each
//! other by distilling output distributions on a shared public set, gated by
//! a knowledge-transfer matrix built from held-out accuracy.

pub mod augment;
pub mod datagen;
mod error;
pub mod federation;
pub mod losses;
pub mod numcore;
pub mod rng;

pub use error::{Error, Result};
