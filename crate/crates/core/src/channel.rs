//! The thermalizing generator `N`, the maps built from it, and the additive
//! classical noise channel realized as a Gaussian mixture of displacements.
//!
//! `N(X) = a X a† + a† X a - ½{a†a + a a†, X}`. Within the truncated space it
//! is a five-point stencil on matrix entries, which is how [`lindblad_apply`]
//! evaluates it. [`lindblad_adjoint`] uses dense ladder-operator products
//! instead; the two agree because `N` is self-adjoint.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fock::{DensityMatrix, DisplacementGenerator, FockOperator};
use crate::linalg::{self, real, CMat};

/// Largest `γΔt` accepted for first-order maps without an explicit override.
pub const MAX_FIRST_ORDER_STEP: f64 = 0.1;

pub const POSITIVITY_TOL: f64 = 1e-10;

pub const DEFAULT_QUADRATURE_NODES: usize = 40;

/// Nodes handled by one parallel task in the channel quadrature. Fixed so the
/// floating-point summation order never depends on the worker count.
const QUADRATURE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    gamma: f64,
    dt: f64,
    allow_large_step: bool,
}

impl NoiseParams {
    /// Requires `γ > 0`, `Δt ≥ 0` and `γΔt ≤ 0.1`.
    pub fn new(gamma: f64, dt: f64) -> Result<Self> {
        Self::build(gamma, dt, false)
    }

    /// As [`NoiseParams::new`] without the `γΔt ≤ 0.1` limit.
    pub fn with_large_step(gamma: f64, dt: f64) -> Result<Self> {
        Self::build(gamma, dt, true)
    }

    fn build(gamma: f64, dt: f64, allow_large_step: bool) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(LabError::invalid(
                "gamma",
                format!("must be positive and finite, got {gamma}"),
            ));
        }
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(LabError::invalid(
                "dt",
                format!("must be non-negative and finite, got {dt}"),
            ));
        }
        if !allow_large_step && gamma * dt > MAX_FIRST_ORDER_STEP {
            return Err(LabError::invalid(
                "dt",
                format!(
                    "gamma*dt = {} exceeds {MAX_FIRST_ORDER_STEP}; first-order maps are invalid there (override with allow_large_step)",
                    gamma * dt
                ),
            ));
        }
        Ok(NoiseParams {
            gamma,
            dt,
            allow_large_step,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn allow_large_step(&self) -> bool {
        self.allow_large_step
    }

    /// `γΔt`, which is also the mean energy `ΔE` added by one step.
    pub fn gamma_dt(&self) -> f64 {
        self.gamma * self.dt
    }

    pub fn delta_e(&self) -> f64 {
        self.gamma_dt()
    }

    /// Same rate, new step.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::build(self.gamma, dt, self.allow_large_step)
    }
}

/// `N(X)` by its entrywise stencil.
pub(crate) fn generator(x: &CMat) -> CMat {
    let d = x.nrows();
    let c: Vec<f64> = (0..d)
        .map(|j| j as f64 + if j + 1 < d { (j + 1) as f64 } else { 0.0 })
        .collect();
    CMat::from_fn(d, d, |j, k| {
        let mut v = x[(j, k)] * (-0.5 * (c[j] + c[k]));
        if j + 1 < d && k + 1 < d {
            v += x[(j + 1, k + 1)] * (((j + 1) * (k + 1)) as f64).sqrt();
        }
        if j >= 1 && k >= 1 {
            v += x[(j - 1, k - 1)] * ((j * k) as f64).sqrt();
        }
        v
    })
}

/// `N†(X)` from dense products of the ladder operators.
fn generator_adjoint(x: &CMat) -> CMat {
    let d = x.nrows();
    let mut a = CMat::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = real((n as f64).sqrt());
    }
    let ad = a.adjoint();
    let k = &ad * &a + &a * &ad;
    let jump = &ad * x * &a + &a * x * &ad;
    jump - (&k * x + x * &k) * real(0.5)
}

/// `N(ρ)`, without the rate `γ`.
pub fn lindblad_apply(rho: &DensityMatrix) -> FockOperator {
    FockOperator::new_unchecked(rho.space(), linalg::hermitian_part(&generator(rho.matrix())))
}

/// `N(X)` for an arbitrary operator.
pub fn lindblad_apply_operator(x: &FockOperator) -> FockOperator {
    FockOperator::new_unchecked(x.space(), generator(x.matrix()))
}

/// `N†(X)` under the trace inner product `tr[N(A)B] = tr[A N†(B)]`.
pub fn lindblad_adjoint(x: &FockOperator) -> FockOperator {
    FockOperator::new_unchecked(x.space(), generator_adjoint(x.matrix()))
}

fn check_positive(m: &CMat) -> Result<()> {
    let min = linalg::HermitianEigen::new(m).min();
    if min < -POSITIVITY_TOL {
        return Err(LabError::PositivityLoss { min_eigenvalue: min });
    }
    Ok(())
}

/// `Th(ρ) = ρ + γΔt N(ρ)`. Trace preserving without renormalization.
pub fn th_first_order(rho: &DensityMatrix, p: &NoiseParams) -> Result<DensityMatrix> {
    let out = linalg::hermitian_part(&first_order(rho.matrix(), p.gamma_dt()));
    check_positive(&out)?;
    Ok(DensityMatrix::new_unchecked(rho.space(), out))
}

fn first_order(m: &CMat, gdt: f64) -> CMat {
    m + generator(m) * real(gdt)
}

fn first_order_adjoint(m: &CMat, gdt: f64) -> CMat {
    m + generator(m) * real(gdt)
}

/// One classical Runge-Kutta step of `dX/dτ = f(X)` with step `h`.
fn rk4_step(x: &CMat, h: f64, f: impl Fn(&CMat) -> CMat) -> CMat {
    let k1 = f(x);
    let k2 = f(&(x + &k1 * real(0.5 * h)));
    let k3 = f(&(x + &k2 * real(0.5 * h)));
    let k4 = f(&(x + &k3 * real(h)));
    x + (k1 + (k2 + k3) * real(2.0) + k4) * real(h / 6.0)
}

/// Integrates `dX/dτ = N(X)` over `τ ∈ [0, gdt]` with no renormalization; a
/// linear map, so it composes cleanly with [`evolve_adjoint`].
pub(crate) fn evolve(m: &CMat, gdt: f64, steps: usize) -> CMat {
    let h = gdt / steps as f64;
    (0..steps).fold(m.clone(), |x, _| rk4_step(&x, h, generator))
}

/// Exact adjoint of [`evolve`]: the same polynomial in `N† = N`, evaluated
/// with the stencil.
pub(crate) fn evolve_adjoint(m: &CMat, gdt: f64, steps: usize) -> CMat {
    let h = gdt / steps as f64;
    (0..steps).fold(m.clone(), |x, _| rk4_step(&x, h, generator))
}

/// Integrates the master equation over `Δt` with `steps` fourth-order steps,
/// renormalizing the trace after each one.
pub fn th_exact(rho: &DensityMatrix, p: &NoiseParams, steps: usize) -> Result<DensityMatrix> {
    if steps == 0 {
        return Err(LabError::invalid("steps", "need at least one integrator step"));
    }
    let h = p.gamma_dt() / steps as f64;
    let mut x = rho.matrix().clone();
    let mut worst_drift = 0.0_f64;
    for _ in 0..steps {
        x = rk4_step(&x, h, generator);
        let tr = linalg::trace(&x).re;
        worst_drift = worst_drift.max((tr - 1.0).abs());
        x /= real(tr);
    }
    if worst_drift > 0.0 {
        log::debug!("th_exact: largest per-step trace drift {worst_drift:e}");
    }
    let x = linalg::hermitian_part(&x);
    check_positive(&x)?;
    Ok(DensityMatrix::new_unchecked(rho.space(), x))
}

/// `Th†(X) = X + γΔt N†(X)`.
pub fn th_adjoint(x: &FockOperator, p: &NoiseParams) -> FockOperator {
    FockOperator::new_unchecked(x.space(), first_order_adjoint(x.matrix(), p.gamma_dt()))
}

/// Which map turns an input state into the output whose entropy is studied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Propagator {
    /// `ρ + γΔt N(ρ)`.
    FirstOrder,
    /// Fourth-order integration of the generator over `γΔt`, without
    /// renormalization, so that the map stays linear with an exact adjoint.
    Exact { steps: usize },
}

impl Propagator {
    pub fn apply(&self, m: &CMat, p: &NoiseParams) -> CMat {
        match *self {
            Propagator::FirstOrder => first_order(m, p.gamma_dt()),
            Propagator::Exact { steps } => evolve(m, p.gamma_dt(), steps.max(1)),
        }
    }

    pub fn adjoint(&self, m: &CMat, p: &NoiseParams) -> CMat {
        match *self {
            Propagator::FirstOrder => first_order_adjoint(m, p.gamma_dt()),
            Propagator::Exact { steps } => evolve_adjoint(m, p.gamma_dt(), steps.max(1)),
        }
    }

    pub fn apply_state(&self, rho: &DensityMatrix, p: &NoiseParams) -> DensityMatrix {
        DensityMatrix::new_unchecked(rho.space(), linalg::hermitian_part(&self.apply(rho.matrix(), p)))
    }
}

/// Gauss-Hermite nodes and weights for `∫ e^{-x²} f(x) dx`, nodes ascending.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Orthonormal Hermite recurrence.
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Product Gauss-Hermite rule for the distribution `exp(-|μ|²/ΔE)/(πΔE)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    delta_e: f64,
    nodes_per_axis: usize,
    nodes: Vec<(Complex64, f64)>,
}

impl QuadratureGrid {
    /// `K²` nodes `μ = √ΔE (x_i + i x_j)` with weights `w_i w_j / π`. For
    /// `ΔE = 0` the grid is the single point `μ = 0`.
    pub fn new(delta_e: f64, nodes_per_axis: usize) -> Result<Self> {
        if !(delta_e >= 0.0) || !delta_e.is_finite() {
            return Err(LabError::invalid(
                "delta_e",
                format!("must be non-negative, got {delta_e}"),
            ));
        }
        if nodes_per_axis == 0 {
            return Err(LabError::invalid("quadrature_nodes", "need at least one node per axis"));
        }
        if delta_e == 0.0 {
            return Ok(QuadratureGrid {
                delta_e,
                nodes_per_axis,
                nodes: vec![(Complex64::new(0.0, 0.0), 1.0)],
            });
        }
        let (x, w) = gauss_hermite(nodes_per_axis);
        let scale = delta_e.sqrt();
        let mut nodes = Vec::with_capacity(nodes_per_axis * nodes_per_axis);
        for (xi, wi) in x.iter().zip(&w) {
            for (xj, wj) in x.iter().zip(&w) {
                nodes.push((Complex64::new(scale * xi, scale * xj), wi * wj / std::f64::consts::PI));
            }
        }
        Ok(QuadratureGrid {
            delta_e,
            nodes_per_axis,
            nodes,
        })
    }

    pub fn delta_e(&self) -> f64 {
        self.delta_e
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn nodes(&self) -> &[(Complex64, f64)] {
        &self.nodes
    }

    pub fn weight_sum(&self) -> f64 {
        self.nodes.iter().map(|(_, w)| w).sum()
    }
}

/// Truncation diagnostics of one channel application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDiagnostics {
    /// `|tr - 1|` of the raw quadrature sum, before renormalization.
    pub trace_drift: f64,
    /// Population of level `d - 1` in the output.
    pub tail_population: f64,
    pub nodes: usize,
}

/// `Φ_ΔE(ρ) = Σ_k w_k D(μ_k) ρ D(μ_k)†`, trace renormalized.
pub fn additive_noise_channel(rho: &DensityMatrix, grid: &QuadratureGrid) -> Result<DensityMatrix> {
    Ok(additive_noise_channel_with_diagnostics(rho, grid)?.0)
}

/// As [`additive_noise_channel`], also returning truncation diagnostics.
///
/// Fails with [`LabError::TruncationBreach`] when either the trace drift or
/// the output's top-level population exceeds the space's tail tolerance.
pub fn additive_noise_channel_with_diagnostics(
    rho: &DensityMatrix,
    grid: &QuadratureGrid,
) -> Result<(DensityMatrix, ChannelDiagnostics)> {
    let space = rho.space();
    let d = space.dim();
    if grid.delta_e == 0.0 {
        let diag = ChannelDiagnostics {
            trace_drift: 0.0,
            tail_population: rho.tail_population(),
            nodes: 1,
        };
        return Ok((rho.clone(), diag));
    }

    let gen = DisplacementGenerator::new(space);
    let v = gen.vectors();
    let vd = v.adjoint();
    let partials: Vec<CMat> = grid
        .nodes
        .par_chunks(QUADRATURE_CHUNK)
        .map(|chunk| {
            let mut acc = CMat::zeros(d, d);
            for &(mu, w) in chunk {
                acc += displace(rho.matrix(), &gen, v, &vd, mu) * real(w);
            }
            acc
        })
        .collect();
    let sum = partials.into_iter().fold(CMat::zeros(d, d), |acc, p| acc + p);

    let out = linalg::hermitian_part(&sum);
    let tr = linalg::trace(&out).re;
    let trace_drift = (tr - 1.0).abs();
    let out = DensityMatrix::new_unchecked(space, out / real(tr));
    let diag = ChannelDiagnostics {
        trace_drift,
        tail_population: out.tail_population(),
        nodes: grid.nodes.len(),
    };
    log::debug!(
        "additive channel: trace drift {trace_drift:e}, tail {:e}",
        diag.tail_population
    );
    if trace_drift > space.tail_tol() || diag.tail_population > space.tail_tol() {
        return Err(LabError::TruncationBreach {
            trace_drift,
            tail_population: diag.tail_population,
            tail_tol: space.tail_tol(),
        });
    }
    Ok((out, diag))
}

/// `D(μ) ρ D(μ)†` using the shared eigenvectors of the displacement generator.
fn displace(rho: &CMat, gen: &DisplacementGenerator, v: &CMat, vd: &CMat, mu: Complex64) -> CMat {
    let (phases, eigenphases) = gen.factors(mu);
    let d = rho.nrows();
    // U† ρ U with U = diag(phases).
    let inner = CMat::from_fn(d, d, |j, k| phases[j].conj() * rho[(j, k)] * phases[k]);
    let mut m = vd * inner * v;
    for j in 0..d {
        for k in 0..d {
            m[(j, k)] *= eigenphases[j] * eigenphases[k].conj();
        }
    }
    let outer = v * m * vd;
    CMat::from_fn(d, d, |j, k| phases[j] * outer[(j, k)] * phases[k].conj())
}
