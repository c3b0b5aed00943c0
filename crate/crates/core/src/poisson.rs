//! Poisson experiments (in progress).
