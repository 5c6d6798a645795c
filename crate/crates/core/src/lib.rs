//! Loss-function laboratory for open-set verification on the hypersphere.
//!
//! The crate trains small embedding models on a synthetic speaker universe
//! under interchangeable objectives (plain softmax, margin-softmax variants,
//! prototypical metric losses, and a pair-wise binary-classification loss),
//! then evaluates them on unseen-speaker trials with EER and minDCF. Every
//! loss ships analytic gradients verified against finite differences, and
//! every experiment is a pure function of its configuration and seed.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod par;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
