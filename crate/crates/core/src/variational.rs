//! Stationarity residuals, second-order minimality probes, and the boundary
//! behaviour of the entropy production rate.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, NoiseParams, Propagator};
use crate::error::{LabError, Result};
use crate::fock::{
    self, annihilation, entropy_rate, number_operator, random_hermitian, rng_for, set_entropy, von_neumann_entropy,
    DensityMatrix, FockOperator, FockSpace, SpectralLog, ThermalSpec,
};
use crate::linalg::{self, real, CMat};

/// Below this, the fitted `1/μ` is reported as the `μ → ∞` branch.
pub const DEGENERATE_INV_MU: f64 = 1e-10;

/// Component outside the projector's range that counts as a closure breach.
pub const CLOSURE_TOL: f64 = 1e-12;

/// Which solution branch of the energy-constrained stationarity condition a
/// fit landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitBranch {
    /// Finite, nonzero `μ`.
    Regular,
    /// `1/μ` below [`DEGENERATE_INV_MU`]: the energy constraint drops out.
    MuInfinite,
    /// The entropy multiplier vanishes relative to `1/μ`.
    MuZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierFit {
    pub multipliers: BTreeMap<String, f64>,
    pub residual_norm: f64,
    /// `residual_norm / γΔt` where that ratio is the meaningful measure.
    pub scaled_residual: Option<f64>,
    /// Smallest singular value of the fit design matrix.
    pub conditioning: f64,
    pub branch: Option<FitBranch>,
    pub tail_population: f64,
}

impl MultiplierFit {
    pub fn multiplier(&self, name: &str) -> Option<f64> {
        self.multipliers.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub dt_values: Vec<f64>,
    pub quantity: Vec<f64>,
    pub fitted_exponent: f64,
    pub fit_residual: f64,
}

impl ScalingReport {
    /// `max/min - 1` over `quantity`.
    pub fn spread(&self) -> f64 {
        let max = self.quantity.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.quantity.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min - 1.0
    }
}

/// Least-squares line `y ≈ slope·x + intercept`; returns slope, intercept and
/// the root-mean-square residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

fn real_design(columns: &[CMat]) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = columns.iter().map(linalg::realify).collect();
    DMatrix::from_fn(cols[0].len(), cols.len(), |r, c| cols[c][r])
}

/// Stationarity of the entropy-constrained problem for the first-order map.
///
/// With `z = Th(ρ)` the multiplier operator is eliminated in closed form and
/// the remaining condition is `u(ln ρ + I) - cI - Th†(ln z) = 0`. The scalars
/// `(u, c)` are fitted by least squares in the norm `‖R ρ^{1/2}‖_F`, which
/// weights each direction by the population it carries; the returned
/// `residual_norm` is that weighted norm.
///
/// Both `residual_norm` and `scaled_residual = residual_norm / γΔt` are
/// reported. For thermal states the residual is `O((γΔt)²)`. For any other
/// state the residual is `O(γΔt)` with a state-dependent constant, so the
/// scaled residual stays bounded away from zero as `Δt → 0`.
pub fn sigma_residual(rho: &DensityMatrix, p: &NoiseParams) -> Result<MultiplierFit> {
    let spec = SpectralLog::interior(rho.matrix())?;
    let d = rho.dim();
    let z = Propagator::FirstOrder.apply(rho.matrix(), p);
    let z_log = SpectralLog::new(&linalg::hermitian_part(&z))?;
    let t = Propagator::FirstOrder.adjoint(&z_log.log_matrix(), p);

    let id = linalg::identity(d);
    let l = spec.log_matrix() + &id;
    let roots: Vec<f64> = spec.eig.values.iter().map(|v| v.sqrt()).collect();
    let w = spec.eig.compose_real(&roots);

    let lw = &l * &w;
    let tw = &t * &w;
    let design = real_design(&[lw.clone(), -w.clone()]);
    let target = DVector::from_vec(linalg::realify(&tw));
    let svd = design.clone().svd(true, true);
    let conditioning = svd.singular_values.min();
    let coef = svd
        .solve(&target, 0.0)
        .map_err(|e| LabError::invalid("rho", format!("least-squares fit failed: {e}")))?;
    let (u, c) = (coef[0], coef[1]);

    let residual = (&l * real(u) - &id * real(c) - &t) * &w;
    let residual_norm = linalg::frobenius(&residual);
    let gdt = p.gamma_dt();
    let mut multipliers = BTreeMap::new();
    multipliers.insert("u".to_string(), u);
    multipliers.insert("c".to_string(), c);
    Ok(MultiplierFit {
        multipliers,
        residual_norm,
        scaled_residual: (gdt > 0.0).then(|| residual_norm / gdt),
        conditioning,
        branch: None,
        tail_population: rho.tail_population(),
    })
}

/// Stationarity of the energy-constrained problem after eliminating the
/// multiplier operator: `λ̂(ln ρ + I) + (1/μ) n - ĉ I = 0`.
///
/// The residual is the smallest singular value of the column-normalized
/// design `[ln ρ + I, n, I]` divided by the largest; it vanishes exactly when
/// `ln ρ` is affine in `n`. The null vector is scaled to `λ̂ = 1`, so for a
/// thermal state `inv_mu` is its inverse temperature.
pub fn energy_lagrangian_residual(rho: &DensityMatrix, p: &NoiseParams) -> Result<MultiplierFit> {
    let spec = SpectralLog::interior(rho.matrix())?;
    let d = rho.dim();
    let id = linalg::identity(d);
    let columns = [
        spec.log_matrix() + &id,
        number_operator(rho.space()).into_matrix(),
        id.clone(),
    ];
    let norms: Vec<f64> = columns.iter().map(linalg::frobenius).collect();
    let scaled: Vec<CMat> = columns.iter().zip(&norms).map(|(c, n)| c / real(*n)).collect();
    let svd = real_design(&scaled).svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let (imin, smin) = sv.argmin();
    let smax = sv.max();
    let null: Vec<f64> = (0..3).map(|k| v_t[(imin, k)] / norms[k]).collect();

    let mut multipliers = BTreeMap::new();
    let branch = if null[0].abs() <= DEGENERATE_INV_MU * null[1].abs() {
        multipliers.insert("lambda_hat".to_string(), 0.0);
        multipliers.insert("inv_mu".to_string(), 1.0);
        multipliers.insert("c_hat".to_string(), -null[2] / null[1]);
        FitBranch::MuZero
    } else {
        let inv_mu = null[1] / null[0];
        multipliers.insert("lambda_hat".to_string(), 1.0);
        multipliers.insert("inv_mu".to_string(), inv_mu);
        multipliers.insert("c_hat".to_string(), -null[2] / null[0]);
        if inv_mu.abs() < DEGENERATE_INV_MU {
            log::info!("energy Lagrangian fit: 1/mu = {inv_mu:e}, mu -> infinity branch");
            FitBranch::MuInfinite
        } else {
            FitBranch::Regular
        }
    };
    // Th†(n) = n + γΔt I folds γΔt/μ into the constant term.
    let alpha_eta_hat = multipliers["c_hat"] + p.gamma_dt() * multipliers["inv_mu"];
    multipliers.insert("alpha_eta_hat".to_string(), alpha_eta_hat);
    let residual_norm = smin / smax;
    Ok(MultiplierFit {
        multipliers,
        residual_norm,
        scaled_residual: None,
        conditioning: smin,
        branch: Some(branch),
        tail_population: rho.tail_population(),
    })
}

/// Log-log slope of the Σ residual of `rho` against `γΔt` over `dt_list`.
pub fn sigma_scaling(rho: &DensityMatrix, p: &NoiseParams, dt_list: &[f64]) -> Result<ScalingReport> {
    check_decreasing("dt_list", dt_list, 2)?;
    let quantity = dt_list
        .iter()
        .map(|&dt| Ok(sigma_residual(rho, &p.with_dt(dt)?)?.residual_norm))
        .collect::<Result<Vec<f64>>>()?;
    let lx: Vec<f64> = dt_list.iter().map(|dt| (dt * p.gamma()).ln()).collect();
    let ly: Vec<f64> = quantity.iter().map(|q| q.ln()).collect();
    let (slope, _, rms) = linear_fit(&lx, &ly);
    Ok(ScalingReport {
        dt_values: dt_list.to_vec(),
        quantity,
        fitted_exponent: slope,
        fit_residual: rms,
    })
}

fn check_decreasing(name: &'static str, values: &[f64], min_len: usize) -> Result<()> {
    if values.len() < min_len {
        return Err(LabError::invalid(name, format!("need at least {min_len} values")));
    }
    if values.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::invalid(name, "values must be strictly decreasing"));
    }
    Ok(())
}

/// Parameters of [`minimality_perturbation_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalityConfig {
    pub beta: f64,
    pub dim: usize,
    pub trials: usize,
    pub t_step: f64,
    pub seed: u64,
    /// Violation when a change falls below `-tol_second_order · t_step²`.
    pub tol_second_order: f64,
    pub propagator: Propagator,
    /// Displacement direction `ν` of the symmetry probe.
    pub nu: Complex64,
}

impl MinimalityConfig {
    /// Dimension whose top thermal population is about `1e-13`: small enough
    /// that truncation does not bend the entropy landscape at the probed
    /// scale, large enough to stay resolvable by the eigensolver after a
    /// dense perturbation.
    pub fn auto_dim(beta: f64) -> usize {
        let levels = (1e13 * -(-beta).exp_m1()).ln() / beta;
        (levels.round() as usize + 1).max(2)
    }

    pub fn new(beta: f64, dim: usize) -> Self {
        MinimalityConfig {
            beta,
            dim,
            trials: 200,
            t_step: 1e-4,
            seed: 0,
            tol_second_order: 1e-8,
            propagator: Propagator::Exact { steps: 16 },
            nu: Complex64::new(0.1, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTrial {
    pub trial: usize,
    /// Output-entropy change at `+t_step` and `-t_step`.
    pub change_plus: f64,
    pub change_minus: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementProbe {
    pub nu: [f64; 2],
    /// `|f(t) - f(-t)| / 2` for the output entropy `f` along the displacement.
    pub first_order_change: f64,
    /// Output-energy change along the linearized displacement.
    pub linear_energy_change: f64,
    /// Output-energy change under the finite displacement `D(-iν̄t)`.
    pub finite_energy_change: f64,
    /// `|ν|² t²`, the leading behaviour of `finite_energy_change`.
    pub expected_energy_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    pub config: MinimalityConfig,
    pub input_entropy: f64,
    pub output_entropy: f64,
    pub violations: usize,
    /// Smallest `change / t_step²` over all trials and both signs.
    pub min_scaled_change: f64,
    pub trials: Vec<PerturbationTrial>,
    pub displacement: DisplacementProbe,
    pub tail_population: f64,
}

/// Output entropy `S(E(ρ))` for a given propagator.
pub(crate) fn output_entropy(rho: &DensityMatrix, p: &NoiseParams, prop: &Propagator) -> Result<f64> {
    von_neumann_entropy(&prop.apply_state(rho, p))
}

/// Change in output entropy when moving from `rho` to `rho + t·delta` and
/// retracting back onto the input-entropy level of `rho`.
pub fn constrained_change(
    rho: &DensityMatrix,
    delta: &CMat,
    t: f64,
    p: &NoiseParams,
    prop: &Propagator,
) -> Result<f64> {
    let s0 = von_neumann_entropy(rho)?;
    let base = output_entropy(rho, p, prop)?;
    let moved = DensityMatrix::normalized_unchecked(rho.space(), &(rho.matrix() + delta * real(t)));
    let moved = set_entropy(&moved, s0)?;
    Ok(output_entropy(&moved, p, prop)? - base)
}

/// Random direction `ρ^{1/2} H ρ^{1/2}` with `H` Hermitian, orthogonal to `I`
/// and `ln ρ` in `⟨A, B⟩ = Re tr(ρ^{1/2} A ρ^{1/2} B)` and `‖H‖_F = 1`.
///
/// Such a direction is traceless and leaves the entropy unchanged to first
/// order; because it is relative to `ρ`, `ρ + tΔ` stays positive for
/// `|t| < 1` even when `ρ` has eigenvalues far below the step size.
pub fn tangent_direction(rho: &DensityMatrix, h: &FockOperator) -> Result<CMat> {
    let spec = SpectralLog::new(rho.matrix())?;
    let roots: Vec<f64> = spec.eig.values.iter().map(|v| v.sqrt()).collect();
    let w = spec.eig.compose_real(&roots);
    let inner = |a: &CMat, b: &CMat| linalg::trace_of_product(&(&w * a * &w), b).re;

    let basis = [linalg::identity(rho.dim()), spec.log_matrix()];
    let gram = [
        [inner(&basis[0], &basis[0]), inner(&basis[0], &basis[1])],
        [inner(&basis[1], &basis[0]), inner(&basis[1], &basis[1])],
    ];
    let rhs = [inner(&basis[0], h.matrix()), inner(&basis[1], h.matrix())];
    let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
    let scale = gram[0][0] * gram[1][1];
    let mut hp = h.matrix().clone();
    if det.abs() > 1e-14 * scale {
        let c0 = (rhs[0] * gram[1][1] - rhs[1] * gram[0][1]) / det;
        let c1 = (gram[0][0] * rhs[1] - gram[1][0] * rhs[0]) / det;
        hp -= &basis[0] * real(c0) + &basis[1] * real(c1);
    } else {
        // ln ρ ∝ I: a single constraint remains.
        hp -= &basis[0] * real(rhs[0] / gram[0][0]);
    }
    let hp = linalg::hermitian_part(&hp);
    let norm = linalg::frobenius(&hp);
    if norm == 0.0 {
        return Ok(CMat::zeros(rho.dim(), rho.dim()));
    }
    Ok(&w * (hp / real(norm)) * &w)
}

/// Second-order test of thermal minimality with random entropy-preserving
/// perturbations, plus the displacement-symmetry probe.
///
/// Trials are independent and run in parallel, each seeded from
/// `(seed, trial)`.
pub fn minimality_perturbation_check(cfg: &MinimalityConfig, p: &NoiseParams) -> Result<MinimalityReport> {
    if !(cfg.beta > 0.0) {
        return Err(LabError::invalid("beta", "must be positive"));
    }
    if !(cfg.t_step > 0.0 && cfg.t_step < 0.5) {
        return Err(LabError::invalid("t_step", "must lie in (0, 0.5)"));
    }
    let space = FockSpace::with_dim(cfg.dim)?;
    let rho = ThermalSpec::new(cfg.beta, space)?.state();
    let input_entropy = von_neumann_entropy(&rho)?;
    let output_entropy = output_entropy(&rho, p, &cfg.propagator)?;
    let t = cfg.t_step;
    let threshold = -cfg.tol_second_order * t * t;

    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng_for(cfg.seed, trial as u64);
            let h = random_hermitian(&mut rng, space);
            let delta = tangent_direction(&rho, &h)?;
            let change_plus = constrained_change(&rho, &delta, t, p, &cfg.propagator)?;
            let change_minus = constrained_change(&rho, &delta, -t, p, &cfg.propagator)?;
            Ok(PerturbationTrial {
                trial,
                change_plus,
                change_minus,
                violation: change_plus < threshold || change_minus < threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = trials.iter().filter(|t| t.violation).count();
    let min_scaled_change = trials
        .iter()
        .map(|tr| tr.change_plus.min(tr.change_minus) / (t * t))
        .fold(f64::INFINITY, f64::min);

    let displacement = displacement_probe(&rho, cfg.nu, t, p, &cfg.propagator)?;
    Ok(MinimalityReport {
        config: *cfg,
        input_entropy,
        output_entropy,
        violations,
        min_scaled_change,
        trials,
        displacement,
        tail_population: rho.tail_population(),
    })
}

/// Output entropy and energy along the displacement direction
/// `Δρ = -i[νa + ν̄a†, ρ]`.
pub fn displacement_probe(
    rho: &DensityMatrix,
    nu: Complex64,
    t: f64,
    p: &NoiseParams,
    prop: &Propagator,
) -> Result<DisplacementProbe> {
    let space = rho.space();
    let a = annihilation(space).into_matrix();
    let g = (&a * nu + a.adjoint() * nu.conj()) * Complex64::new(0.0, -1.0);
    let delta = &g * rho.matrix() - rho.matrix() * &g;

    let along = |s: f64| {
        let m = DensityMatrix::normalized_unchecked(space, &(rho.matrix() + &delta * real(s)));
        output_entropy(&m, p, prop)
    };
    let first_order_change = (along(t)? - along(-t)?).abs() / 2.0;

    let out = prop.apply_state(rho, p);
    let linear_energy_change = t * fock::energy(&DensityMatrix::new_unchecked(space, prop.apply(&delta, p)));
    let mu = -nu.conj() * t;
    let displaced = rho.conjugate_by(&fock::displacement(mu, space));
    let finite_energy_change = fock::energy(&prop.apply_state(&displaced, p)) - fock::energy(&out);

    Ok(DisplacementProbe {
        nu: [nu.re, nu.im],
        first_order_change,
        linear_energy_change,
        finite_energy_change,
        expected_energy_change: nu.norm_sqr() * t * t,
    })
}

/// Entropy production rate of `(1-ε)ρ + εI/d` for each `ε`, fitted against
/// `ln(1/ε)`. The slope is `fitted_exponent`.
pub fn boundary_rate(rho_pure: &DensityMatrix, gamma: f64, epsilon_list: &[f64]) -> Result<ScalingReport> {
    let eig = rho_pure.eigen();
    if (eig.max() - 1.0).abs() > 1e-10 {
        return Err(LabError::invalid("rho_pure", "input must be a rank-one state"));
    }
    if epsilon_list.is_empty() {
        return Err(LabError::invalid("epsilon_list", "empty"));
    }
    if epsilon_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(LabError::invalid("epsilon_list", "values must lie in (0, 1]"));
    }
    let mixed = DensityMatrix::maximally_mixed(rho_pure.space());
    let quantity = epsilon_list
        .iter()
        .map(|&eps| entropy_rate(&rho_pure.mix(&mixed, eps)?, gamma))
        .collect::<Result<Vec<f64>>>()?;
    let x: Vec<f64> = epsilon_list.iter().map(|e| -e.ln()).collect();
    let (slope, _, rms) = linear_fit(&x, &quantity);
    Ok(ScalingReport {
        dt_values: epsilon_list.to_vec(),
        quantity,
        fitted_exponent: slope,
        fit_residual: rms,
    })
}

/// Entropy gained by the vacuum over one integrated step, as the ratio
/// `ΔS / (-γΔt ln γΔt)` for each `Δt`.
///
/// `fitted_exponent` is the log-log slope of `ΔS` against `γΔt`; it tends to
/// one only logarithmically.
pub fn boundary_delta_s_scaling(gamma: f64, dt_list: &[f64], d: usize, steps: usize) -> Result<ScalingReport> {
    check_decreasing("dt_list", dt_list, 2)?;
    let first = dt_list[0] * gamma;
    let last = dt_list[dt_list.len() - 1] * gamma;
    if first >= 0.1 {
        return Err(LabError::invalid("dt_list", "need gamma*dt < 0.1"));
    }
    if first / last < 100.0 * (1.0 - 1e-12) {
        return Err(LabError::invalid("dt_list", "values must span at least two decades"));
    }
    let space = FockSpace::with_dim(d)?;
    let vacuum = DensityMatrix::vacuum(space);
    let mut delta_s = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let p = NoiseParams::new(gamma, dt)?;
        delta_s.push(von_neumann_entropy(&channel::th_exact(&vacuum, &p, steps)?)?);
    }
    let quantity = dt_list
        .iter()
        .zip(&delta_s)
        .map(|(dt, s)| {
            let x = gamma * dt;
            s / (-x * x.ln())
        })
        .collect();
    let lx: Vec<f64> = dt_list.iter().map(|dt| (gamma * dt).ln()).collect();
    let ly: Vec<f64> = delta_s.iter().map(|s| s.ln()).collect();
    let (slope, _, rms) = linear_fit(&lx, &ly);
    Ok(ScalingReport {
        dt_values: dt_list.to_vec(),
        quantity,
        fitted_exponent: slope,
        fit_residual: rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ladder {
    Annihilation,
    Creation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClosureOutcome {
    Closed,
    /// `operator` maps `witness ∈ range(P)` partly outside `range(P)`.
    Breach {
        operator: Ladder,
        witness: Vec<[f64; 2]>,
        leakage: f64,
    },
}

impl ClosureOutcome {
    pub fn is_breach(&self) -> bool {
        matches!(self, ClosureOutcome::Breach { .. })
    }
}

/// Whether `range(P)` is invariant under `a` and `a†`.
pub fn kernel_closure_check(p_perp: &FockOperator) -> Result<ClosureOutcome> {
    let p = p_perp.matrix();
    let defect = linalg::frobenius(&(p * p - p)).max(linalg::hermiticity_defect(p));
    if defect > 1e-12 {
        return Err(LabError::NotAProjector { defect });
    }
    let d = p.nrows();
    let a = annihilation(p_perp.space()).into_matrix();
    let complement = linalg::identity(d) - p;
    for (ladder, op) in [(Ladder::Annihilation, a.clone()), (Ladder::Creation, a.adjoint())] {
        let leak = &complement * &op * p;
        let (best, norm) = (0..d)
            .map(|k| (k, leak.column(k).norm()))
            .fold((0, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if norm > CLOSURE_TOL {
            let witness = p.column(best).iter().map(|z| [z.re, z.im]).collect();
            return Ok(ClosureOutcome::Breach {
                operator: ladder,
                witness,
                leakage: norm,
            });
        }
    }
    Ok(ClosureOutcome::Closed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureSweep {
    pub dim: usize,
    pub checked: usize,
    pub breaches: usize,
    /// Bit masks of the proper nonzero level subsets whose projector is closed.
    pub closed_masks: Vec<u64>,
}

/// Checks every projector onto a proper nonzero subset of Fock levels.
pub fn diagonal_projector_sweep(dim: usize) -> Result<ClosureSweep> {
    if !(2..=16).contains(&dim) {
        return Err(LabError::invalid("dim", "exhaustive sweep supports 2 <= d <= 16"));
    }
    let space = FockSpace::with_dim(dim)?;
    let full = (1u64 << dim) - 1;
    let outcomes = (1..full)
        .into_par_iter()
        .map(|mask| {
            let pops: Vec<f64> = (0..dim).map(|k| ((mask >> k) & 1) as f64).collect();
            let proj = FockOperator::from_matrix(space, linalg::diagonal(&pops))?;
            Ok((mask, kernel_closure_check(&proj)?.is_breach()))
        })
        .collect::<Result<Vec<_>>>()?;
    let closed_masks: Vec<u64> = outcomes.iter().filter(|(_, b)| !b).map(|(m, _)| *m).collect();
    Ok(ClosureSweep {
        dim,
        checked: outcomes.len(),
        breaches: outcomes.len() - closed_masks.len(),
        closed_masks,
    })
}
