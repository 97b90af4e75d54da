//! Shared fixtures for the benchmarks.

use moe_lab_core::{random_density_matrix, DensityMatrix, FockSpace, NoiseParams};

/// Dimensions swept by every size-parameterized benchmark.
pub const DIMS: [usize; 3] = [8, 16, 32];

pub fn full_rank_state(d: usize) -> DensityMatrix {
    random_density_matrix(7, FockSpace::with_dim(d).expect("d >= 2"), d).expect("full-rank sample")
}

pub fn default_params() -> NoiseParams {
    NoiseParams::new(1.0, 1e-3).expect("valid step")
}
