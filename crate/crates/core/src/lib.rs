//! Label-noise-robust classifier training with meta-learned soft labels.
//!
//! The core loop keeps one learnable logit vector per training sample.
//! Each train batch first takes a virtual SGD step on the KL loss against
//! the current soft labels, evaluates the cross-entropy of the updated
//! model on a small verified-clean meta batch, and differentiates that
//! meta-loss back through the virtual step to update the soft labels; the
//! real model then trains on the refreshed soft labels with a KL plus
//! entropy objective. Everything is seeded and deterministic to the bit.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mlp;
pub mod numeric;
pub mod rng;
pub mod softlabel;
pub mod train;

pub use error::{Error, Result};
