//! Tree-structured polynomial chaos surrogates.
//!
//! The input domain is partitioned by a binary tree of axis-aligned splits
//! chosen greedily from a threshold mesh; every leaf carries a local
//! orthonormal polynomial expansion fitted by least squares.

pub mod domain;
pub mod error;
pub mod io;
pub mod linalg;
pub mod models;
pub mod orthobasis;
pub mod pce;
pub mod quadrature;
pub mod sensitivity;
pub mod sse;
pub mod tree;

pub use domain::{
    conditional_mass, filter_samples, DensityMarginal, InputSpace, MarginalDistribution,
    MarginalRecord, Rectangle, Region, SampleSet, ThresholdMesh,
};
pub use error::{Error, Result};
pub use orthobasis::{
    build_univariate_basis, enumerate_linear, evaluate_multivariate, MultiIndex, MultiIndexSet,
    UnivariateBasis,
};
