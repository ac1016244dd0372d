//! Mean-field kernel theory of trained recurrent and feedforward networks.
//!
//! The crate is `no_std` and needs only an allocator. Kernels live on the joint
//! (time, pattern) index; see [`kernelspace`] for the layout conventions.

#![no_std]
// negated float comparisons are used on purpose so that NaN fails the test
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod inference;
pub mod kernelspace;
pub mod landau;
pub mod linalg;
pub mod linear_mft;
pub mod nngp;
pub mod nonlinear_mft;
pub mod perturbation;
pub mod sgld;
pub mod tasks;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use kernelspace::{ArchMask, HyperParams, Kernel, TimeGrid, TimeRange};
pub use nngp::Activation;
pub use tasks::Task;
