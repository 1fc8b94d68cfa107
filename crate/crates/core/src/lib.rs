//! Large-deviation rate functions for the largest eigenvalue of sub-Gaussian
//! Wigner matrices, computed from the entry law's log-Laplace transform, and
//! Monte Carlo checks of the predictions they make.

pub mod annealed;
pub mod cli;
pub mod freeprob;
pub mod laws;
pub mod montecarlo;
pub mod numerics;
pub mod rate;
