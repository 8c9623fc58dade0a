//! Isolation networks for out-of-distribution detection.
//!
//! A binary classifier is trained to separate a single target sample from a
//! source training set. The number of optimization steps (centralized) or
//! communication rounds (decentralized) needed to achieve separation is the
//! OOD score: in-distribution targets are harder to isolate and score higher.
//!
//! The crate is organized as:
//! - [`nn`]: minimal MLP with instance normalization, exact backprop, SGD/Adam
//! - [`isolation`]: centralized isolation runs and the convergence criterion
//! - [`protocol`]: the two-node decentralized variant exchanging only parameters
//! - [`transport`]: typed wire messages over in-process channels or TCP
//! - [`data`]: synthetic benchmark generation, augmentation, batch sampling
//! - [`metrics`]: AUROC, FPR95, round quantiles, MSP baseline
//! - [`pretrain`]: training of the primary multiclass model

pub mod data;
pub mod error;
pub mod isolation;
pub mod metrics;
pub mod nn;
pub mod pretrain;
pub mod protocol;
pub mod transport;

pub use error::Error;
pub use nn::{HeadKind, NetworkSpec, ParameterVector};
