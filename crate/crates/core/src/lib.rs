//! Morse-theoretic analysis of k-nearest-neighbor distance functions.
//!
//! Given a finite point set in low-dimensional Euclidean space, this crate
//! computes the complete critical-point structure of the k-NN distance
//! function — centers, radii, indices, and homology-change budgets — and
//! verifies it against independent oracles: an exhaustive min-max evaluator,
//! GF(2) simplicial homology of the auxiliary complex, a cubical grid oracle
//! for sub-level-set Betti numbers in the plane, and Monte-Carlo experiments
//! on homogeneous Poisson processes.

pub mod cli;
pub mod critical;
pub mod cubical;
pub mod geometry;
pub mod homology;
pub mod knn;
pub mod poisson;
pub mod report;

pub use geometry::{
    BoundingBox, Circumsphere, GeneralPositionReport, PointCloud, ScaledTolerances, Tolerances,
};
pub use knn::KnnQueryResult;
