//! Numerical laboratory for the bosonic additive classical noise channel and
//! its thermalizing generator on truncated Fock spaces.
//!
//! The crate is organized bottom-up:
//!
//! - [`fock`]: spaces, states, ladder operators, entropy and energy.
//! - [`channel`]: the generator `N`, first-order and integrated maps, and the
//!   Gaussian displacement channel.
//! - [`variational`]: stationarity residuals, minimality probes, boundary
//!   scaling and kernel closure.
//! - [`optimizer`]: constrained output-entropy minimization and the
//!   counterexample search.
//! - [`config`]: experiment configuration and result records shared with the
//!   command-line driver.
//! - [`experiments`]: the runners behind each command-line experiment.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod linalg;
pub mod optimizer;
pub mod variational;

pub use channel::{
    additive_noise_channel, lindblad_adjoint, lindblad_apply, th_adjoint, th_exact, th_first_order, NoiseParams,
    Propagator, QuadratureGrid,
};
pub use config::{ConfigIssue, Experiment, ExperimentConfig, ResultRecord, TruncationDiagnostics};
pub use error::{LabError, Result};
pub use experiments::{Cell, ExperimentOutput};
pub use fock::{
    annihilation, creation, displacement, energy, entropy_rate, number_operator, random_density_matrix, set_entropy,
    thermal_state, von_neumann_entropy, DensityMatrix, FockOperator, FockSpace, ThermalSpec,
};
pub use num_complex::Complex64;
