//! Nonlocal neural-network blocks viewed as graph filters on a
//! fully-connected graph built from the input feature map.
//!
//! The numerical core is generic over [`Scalar`] (`f32` / `f64`); the
//! `*64` aliases below are the double-precision instantiations used by the
//! training harness, the CLI and all tolerance-bearing checks.

pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod spectral;
pub mod synth;

pub use blocks::{BlockConfig, BlockParams, Variant};
pub use error::{Error, Result};
pub use graph::{AffinityMatrix, FeatureMap, Kernel, Normalization};
pub use linalg::{Matrix, SpectralDecomposition};
pub use scalar::Scalar;
pub use spectral::{Basis, FilterSpec};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type AffinityMatrix64 = AffinityMatrix<f64>;
pub type SpectralDecomposition64 = SpectralDecomposition<f64>;
pub type FilterSpec64 = FilterSpec<f64>;
pub type BlockParams64 = BlockParams<f64>;
pub type BlockParams32 = BlockParams<f32>;
