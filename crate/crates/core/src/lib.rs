//! Perceptual adversarial attacks on skeleton-based action classifiers.

pub mod analysis;
pub mod attack;
pub mod data;
pub mod error;
pub mod losses;
pub mod models;
pub mod motion;
pub mod optim;
pub mod skeleton;
pub mod transfer;

pub use error::{Error, Result};
