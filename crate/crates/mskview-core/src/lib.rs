//! Multi-view knee-MRI abnormality classification pipeline.
//!
//! Per-plane slice-encoder models fine-tuned per task, logistic-regression
//! fusion of the three per-view probabilities, and a metrics/report layer,
//! plus a synthetic dataset generator for desk-scale testing.

pub mod augment;
pub mod exam_store;
pub mod fusion;
pub mod io_util;
pub mod metrics;
pub mod npy;
pub mod preprocess;
pub mod trainer;
pub mod types;

pub mod nn;
pub mod view_net;

pub use types::{PerPlane, PerTask, Plane, Split, Task};
