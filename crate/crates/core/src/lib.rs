//! Anatomical labeling of coronary artery trees with a conditional
//! partial-residual graph convolutional network.

pub mod cohort;
pub mod condition;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod labels;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use labels::{AnatomicalLabel, NUM_CLASSES};
