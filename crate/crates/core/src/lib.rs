//! Gaussian processes over the vertices of hypergraphs.
//!
//! Numerical types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

pub mod error;
pub mod gp;
pub mod gplvm;
pub mod hypergraph;
pub mod inducing;
pub mod io;
pub mod kernel;
pub mod kmeans;
pub mod kpmf;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipelines;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Hypergraph = hypergraph::Hypergraph<f64>;
pub type HypergraphLaplacian = hypergraph::HypergraphLaplacian<f64>;
pub type GramKernel = kernel::GramKernel<f64>;
pub type MaternHyperparams = kernel::MaternHyperparams<f64>;
pub type SpectralMatern = kernel::SpectralMatern<f64>;
pub type SvgpState = gp::SvgpState<f64>;
pub type ImportanceScores = inducing::ImportanceScores<f64>;
pub type LatentConfiguration = gplvm::LatentConfiguration<f64>;
pub type RatingsMatrix = kpmf::RatingsMatrix<f64>;
pub type FactorPair = kpmf::FactorPair<f64>;
pub type SparseKernelApprox = kpmf::SparseKernelApprox<f64>;
