//! Augmentation-robustness generalization metric.
//!
//! A classifier is scored by how its predictions move when training inputs are
//! augmented: a changed class costs the augmentation's penalty, an unchanged
//! class costs the drop in confidence. Zoo-level tooling then checks how well
//! such a score tracks the observed generalization gap.

pub mod augment;
pub mod error;
pub mod eval;
pub mod metric;
pub mod nn;
pub mod perturb;
pub mod ppm;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
