//! Sample-complexity laboratory for supervised and self-supervised
//! reconstruction: linear subspace denoising with noisy targets, and linear
//! compressive sensing trained on split k-space measurements.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cs_linear;
pub mod cs_masks;
pub mod dft;
pub mod error;
pub mod experiments;
pub mod grad_variance;
pub mod linear_denoise;
pub mod rng;
pub mod scalar;
pub mod signal_model;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SubspaceModel64 = signal_model::SubspaceModel<f64>;
pub type Dataset64 = signal_model::Dataset<f64>;
pub type LinearEstimator64 = linear_denoise::LinearEstimator<f64>;
pub type CsScheme64 = cs_masks::CsScheme<f64>;
pub type MaskSplit64 = cs_masks::MaskSplit<f64>;
pub type CsSignalModel64 = cs_linear::CsSignalModel<f64>;
pub type CsDataset64 = cs_linear::CsDataset<f64>;
pub type GradVarReport64 = grad_variance::GradVarReport<f64>;
