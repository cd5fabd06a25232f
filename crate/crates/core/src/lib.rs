//! Dimension reduction for Gaussian-mixture data that keeps cluster structure
//! distinct without knowing the clusters.
//!
//! The data are first brought to isotropic position (zero mean, identity
//! total scatter) and then every observation is shrunk towards the origin by
//! a weight that decreases with its norm. After that, the leading `k - 1`
//! principal components approximate the Fisher discriminant subspace, while
//! the Fisher-based distinctness coefficient barely moves.
//!
//! Modules, bottom-up:
//!
//! * [`matrixcore`]: symmetric and generalized eigenproblems, norms, the
//!   centering operator and the cluster hat matrix.
//! * [`mixture`]: equal-weight Gaussian mixtures and seeded sampling.
//! * [`transform`]: isotropization and weighting.
//! * [`structure`]: scatter matrices, Fisher distinctness, overlap, and the
//!   perturbation predictor and bound.
//! * [`subspace`]: principal and Fisher subspaces and their similarity.
//! * [`harness`]: experiment configs, seeded sweeps and CSV output.

pub mod error;
pub mod harness;
pub mod matrixcore;
pub mod mixture;
pub mod structure;
pub mod subspace;
pub mod transform;

pub use error::{Error, ErrorKind, Result};
pub use matrixcore::{EigenKind, EigenSolution, SymMatrix};
pub use mixture::{LabeledDataset, MixtureSpec};
pub use structure::{FisherSolution, PerturbationReport, ScatterPair};
pub use subspace::SubspaceBasis;
pub use transform::{IsotropicDataset, PipelineOutput, WeightScheme, WeightVector};
