//! Truncated single-mode Fock space: ladder operators, displacements, thermal
//! and random states, and the entropy/energy functionals.
//!
//! Everything lives in one space of dimension `d` (levels `0..d`). Input states
//! are expected to leave the top level essentially empty; [`FockSpace::tail_tol`]
//! is the population allowed there before results are considered
//! truncation-limited.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel;
use crate::error::{LabError, Result};
use crate::linalg::{self, real, CMat, HermitianEigen};

/// Eigenvalues below this are unresolved for operations that take a logarithm.
pub const RANK_FLOOR: f64 = 1e-12;

/// Eigenvalues in `[-EIGEN_CLAMP, 0]` are treated as exact zeros.
pub const EIGEN_CLAMP: f64 = 1e-12;

/// Largest thermalization inflow `⟨v|N(ρ)|v⟩` tolerated into an eigendirection
/// whose eigenvalue is below [`RANK_FLOOR`].
pub const KERNEL_INFLOW_TOL: f64 = 1e-9;

pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

const MAX_RESAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockSpace {
    dim: usize,
    tail_tol: f64,
}

impl FockSpace {
    pub fn new(dim: usize, tail_tol: f64) -> Result<Self> {
        if dim < 2 {
            return Err(LabError::invalid("dim", format!("need at least 2 levels, got {dim}")));
        }
        if !(tail_tol > 0.0) {
            return Err(LabError::invalid(
                "tail_tol",
                format!("must be positive, got {tail_tol}"),
            ));
        }
        Ok(FockSpace { dim, tail_tol })
    }

    pub fn with_dim(dim: usize) -> Result<Self> {
        Self::new(dim, DEFAULT_TAIL_TOL)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// Largest entropy a state on this space can carry.
    pub fn max_entropy(&self) -> f64 {
        (self.dim as f64).ln()
    }

    /// Same tail tolerance, `extra` more levels.
    pub fn enlarged(&self, extra: usize) -> Self {
        FockSpace {
            dim: self.dim + extra,
            tail_tol: self.tail_tol,
        }
    }
}

/// A Hermitian (or general) operator on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    space: FockSpace,
    matrix: CMat,
}

impl FockOperator {
    pub fn from_matrix(space: FockSpace, matrix: CMat) -> Result<Self> {
        check_shape(&space, &matrix)?;
        Ok(FockOperator { space, matrix })
    }

    pub(crate) fn new_unchecked(space: FockSpace, matrix: CMat) -> Self {
        FockOperator { space, matrix }
    }

    pub fn identity(space: FockSpace) -> Self {
        Self::new_unchecked(space, linalg::identity(space.dim))
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self::new_unchecked(self.space, self.matrix.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        linalg::hermiticity_defect(&self.matrix) <= tol
    }

    pub fn trace(&self) -> Complex64 {
        linalg::trace(&self.matrix)
    }
}

/// Hermitian, positive-semidefinite, unit-trace matrix on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: FockSpace,
    matrix: CMat,
}

impl DensityMatrix {
    /// Validates hermiticity, unit trace and positivity, all to `1e-12`.
    pub fn from_matrix(space: FockSpace, matrix: CMat) -> Result<Self> {
        check_shape(&space, &matrix)?;
        let defect = linalg::hermiticity_defect(&matrix);
        if defect > 1e-12 {
            return Err(LabError::invalid("rho", format!("not Hermitian (defect {defect:e})")));
        }
        let tr = linalg::trace(&matrix);
        if (tr - linalg::ONE).norm() > 1e-12 {
            return Err(LabError::invalid("rho", format!("trace {tr} differs from 1")));
        }
        let min = HermitianEigen::new(&matrix).min();
        if min < -EIGEN_CLAMP {
            return Err(LabError::NonPhysicalState { min_eigenvalue: min });
        }
        Ok(DensityMatrix {
            space,
            matrix: linalg::hermitian_part(&matrix),
        })
    }

    /// Hermitizes and divides by the trace; no positivity check.
    pub(crate) fn normalized_unchecked(space: FockSpace, matrix: &CMat) -> Self {
        let h = linalg::hermitian_part(matrix);
        let tr = linalg::trace(&h).re;
        DensityMatrix {
            space,
            matrix: h / real(tr),
        }
    }

    pub(crate) fn new_unchecked(space: FockSpace, matrix: CMat) -> Self {
        DensityMatrix { space, matrix }
    }

    pub fn from_populations(space: FockSpace, populations: &[f64]) -> Result<Self> {
        if populations.len() != space.dim {
            return Err(LabError::invalid("populations", "length must equal the dimension"));
        }
        Self::from_matrix(space, linalg::diagonal(populations))
    }

    /// `|ψ⟩⟨ψ|` for the normalized amplitudes.
    pub fn pure(space: FockSpace, amplitudes: &[Complex64]) -> Result<Self> {
        if amplitudes.len() != space.dim {
            return Err(LabError::invalid("amplitudes", "length must equal the dimension"));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(LabError::invalid("amplitudes", "zero vector"));
        }
        let psi: Vec<Complex64> = amplitudes.iter().map(|a| a / norm).collect();
        let d = space.dim;
        let m = CMat::from_fn(d, d, |j, k| psi[j] * psi[k].conj());
        Ok(DensityMatrix::new_unchecked(space, linalg::hermitian_part(&m)))
    }

    /// Photon-number state `|n⟩⟨n|`.
    pub fn fock(space: FockSpace, n: usize) -> Result<Self> {
        if n >= space.dim {
            return Err(LabError::invalid("n", format!("level {n} outside 0..{}", space.dim)));
        }
        let mut pops = vec![0.0; space.dim];
        pops[n] = 1.0;
        Ok(DensityMatrix::new_unchecked(space, linalg::diagonal(&pops)))
    }

    pub fn vacuum(space: FockSpace) -> Self {
        Self::fock(space, 0).expect("level 0 always exists")
    }

    /// The β = 0 limit, `I/d`.
    pub fn maximally_mixed(space: FockSpace) -> Self {
        let p = 1.0 / space.dim as f64;
        DensityMatrix::new_unchecked(space, linalg::diagonal(&vec![p; space.dim]))
    }

    /// `(1-w) self + w other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Result<Self> {
        if self.space.dim != other.space.dim {
            return Err(LabError::invalid("other", "dimension mismatch"));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(LabError::invalid("w", format!("weight {w} outside [0, 1]")));
        }
        let m = &self.matrix * real(1.0 - w) + &other.matrix * real(w);
        Ok(DensityMatrix::new_unchecked(self.space, m))
    }

    /// Zero-pad into a larger space.
    pub fn embed(&self, space: FockSpace) -> Result<Self> {
        if space.dim < self.space.dim {
            return Err(LabError::invalid("space", "target space is smaller"));
        }
        let mut m = CMat::zeros(space.dim, space.dim);
        m.view_mut((0, 0), (self.space.dim, self.space.dim))
            .copy_from(&self.matrix);
        Ok(DensityMatrix::new_unchecked(space, m))
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn eigen(&self) -> HermitianEigen {
        HermitianEigen::new(&self.matrix)
    }

    pub fn population(&self, n: usize) -> f64 {
        self.matrix[(n, n)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.population(n)).collect()
    }

    /// Population of the top level `d - 1`.
    pub fn tail_population(&self) -> f64 {
        self.population(self.dim() - 1)
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix).re
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        linalg::trace_distance(&self.matrix, &other.matrix)
    }

    pub fn as_operator(&self) -> FockOperator {
        FockOperator::new_unchecked(self.space, self.matrix.clone())
    }

    /// `U ρ U†`.
    pub fn conjugate_by(&self, u: &FockOperator) -> Self {
        let m = u.matrix() * &self.matrix * u.matrix().adjoint();
        DensityMatrix::new_unchecked(self.space, linalg::hermitian_part(&m))
    }

    /// Short hex digest of the matrix entries, stable across runs.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for z in self.matrix.iter() {
            hasher.update(z.re.to_le_bytes());
            hasher.update(z.im.to_le_bytes());
        }
        hex::encode(hasher.finalize())[..16].to_string()
    }

    /// Row-major `[re, im]` entries, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.dim())
            .map(|j| {
                (0..self.dim())
                    .map(|k| [self.matrix[(j, k)].re, self.matrix[(j, k)].im])
                    .collect()
            })
            .collect()
    }
}

fn check_shape(space: &FockSpace, m: &CMat) -> Result<()> {
    if m.nrows() != space.dim || m.ncols() != space.dim {
        return Err(LabError::invalid(
            "matrix",
            format!(
                "shape {}x{} does not match dimension {}",
                m.nrows(),
                m.ncols(),
                space.dim
            ),
        ));
    }
    Ok(())
}

/// Inverse temperature of a thermal state (ħω = 1). `f64::INFINITY` is the
/// vacuum; β = 0 is not representable here, see
/// [`DensityMatrix::maximally_mixed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSpec {
    beta: f64,
    space: FockSpace,
}

impl ThermalSpec {
    pub fn new(beta: f64, space: FockSpace) -> Result<Self> {
        if beta.is_nan() || beta <= 0.0 {
            return Err(LabError::invalid(
                "beta",
                format!("need beta > 0 (use the maximally mixed state for beta = 0), got {beta}"),
            ));
        }
        Ok(ThermalSpec { beta, space })
    }

    /// Thermal state whose untruncated mean occupation is `nbar`.
    pub fn from_mean_occupation(nbar: f64, space: FockSpace) -> Result<Self> {
        if !(nbar >= 0.0) {
            return Err(LabError::invalid("nbar", format!("must be non-negative, got {nbar}")));
        }
        let beta = if nbar == 0.0 {
            f64::INFINITY
        } else {
            (1.0 + 1.0 / nbar).ln()
        };
        Self::new(beta, space)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    /// Populations `e^{-βn} / Z_d`, renormalized on the truncated space.
    pub fn populations(&self) -> Vec<f64> {
        let d = self.space.dim;
        if self.beta.is_infinite() {
            let mut p = vec![0.0; d];
            p[0] = 1.0;
            return p;
        }
        let weights: Vec<f64> = (0..d).map(|n| (-self.beta * n as f64).exp()).collect();
        let z: f64 = weights.iter().rev().sum();
        weights.into_iter().map(|w| w / z).collect()
    }

    /// `1 / (e^β - 1)`, the occupation before truncation.
    pub fn untruncated_mean_occupation(&self) -> f64 {
        1.0 / self.beta.exp_m1()
    }

    pub fn state(&self) -> DensityMatrix {
        DensityMatrix::new_unchecked(self.space, linalg::diagonal(&self.populations()))
    }
}

pub fn thermal_state(spec: &ThermalSpec) -> DensityMatrix {
    spec.state()
}

/// `a` with `a[n-1, n] = sqrt(n)`.
pub fn annihilation(space: FockSpace) -> FockOperator {
    let d = space.dim;
    let mut m = CMat::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = real((n as f64).sqrt());
    }
    FockOperator::new_unchecked(space, m)
}

pub fn creation(space: FockSpace) -> FockOperator {
    annihilation(space).dagger()
}

/// `a†a = diag(0, 1, ..., d-1)`.
pub fn number_operator(space: FockSpace) -> FockOperator {
    let levels: Vec<f64> = (0..space.dim).map(|n| n as f64).collect();
    FockOperator::new_unchecked(space, linalg::diagonal(&levels))
}

/// Builds `D(μ)` for many `μ` from one eigendecomposition.
///
/// With `μ = r e^{iθ}` and `U = e^{iθ a†a}`, the Hermitian matrix
/// `i(μa† - μ*a)` equals `r U H₀ U†` where `H₀ = i(a† - a)`. Its eigenvectors
/// are `U V` (phases on the rows of `V`) and its eigenvalues `r λ`, so
/// `D(μ) = U V e^{-i r Λ} V† U†` is unitary to eigensolver accuracy.
#[derive(Debug, Clone)]
pub struct DisplacementGenerator {
    space: FockSpace,
    eig: HermitianEigen,
}

impl DisplacementGenerator {
    pub fn new(space: FockSpace) -> Self {
        let a = annihilation(space).into_matrix();
        let h0 = (a.adjoint() - &a) * Complex64::i();
        DisplacementGenerator {
            space,
            eig: HermitianEigen::new(&h0),
        }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    /// Row phases `e^{iθn}`, the eigenphase factors `e^{-irλ}` and the shared
    /// eigenvectors, so callers can apply `D(μ)` without forming it.
    pub(crate) fn factors(&self, mu: Complex64) -> (Vec<Complex64>, Vec<Complex64>) {
        let (r, theta) = mu.to_polar();
        let phases = (0..self.space.dim)
            .map(|n| Complex64::from_polar(1.0, theta * n as f64))
            .collect();
        let eigenphases = self
            .eig
            .values
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -r * l))
            .collect();
        (phases, eigenphases)
    }

    pub(crate) fn vectors(&self) -> &CMat {
        &self.eig.vectors
    }

    pub fn displacement(&self, mu: Complex64) -> FockOperator {
        let (phases, eigenphases) = self.factors(mu);
        let core = self.eig.compose(&eigenphases);
        let d = self.space.dim;
        let m = CMat::from_fn(d, d, |j, k| phases[j] * core[(j, k)] * phases[k].conj());
        FockOperator::new_unchecked(self.space, m)
    }
}

/// `D(μ) = exp(μa† - μ*a)`. Logs a warning if the unitarity defect
/// `‖D†D - I‖_F` exceeds the space's tail tolerance.
pub fn displacement(mu: Complex64, space: FockSpace) -> FockOperator {
    let op = DisplacementGenerator::new(space).displacement(mu);
    let defect = unitarity_defect(&op);
    if defect > space.tail_tol {
        log::warn!(
            "displacement |mu|={} on d={}: unitarity defect {defect:e}",
            mu.norm(),
            space.dim
        );
    }
    op
}

pub fn unitarity_defect(u: &FockOperator) -> f64 {
    let m = u.matrix();
    linalg::frobenius(&(m.adjoint() * m - linalg::identity(m.nrows())))
}

/// `-Σ λ ln λ` over a spectrum, `0 ln 0 = 0`.
pub fn entropy_of_spectrum(values: &[f64]) -> f64 {
    values.iter().filter(|&&l| l > 0.0).map(|&l| -l * l.ln()).sum()
}

fn clamped_spectrum(eig: &HermitianEigen) -> Result<Vec<f64>> {
    if eig.min() < -EIGEN_CLAMP {
        return Err(LabError::NonPhysicalState {
            min_eigenvalue: eig.min(),
        });
    }
    Ok(eig.values.iter().map(|&l| l.max(0.0)).collect())
}

/// Von Neumann entropy in nats.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    Ok(entropy_of_spectrum(&clamped_spectrum(&rho.eigen())?))
}

/// `tr(ρ a†a)`.
pub fn energy(rho: &DensityMatrix) -> f64 {
    (0..rho.dim()).map(|n| n as f64 * rho.population(n)).sum()
}

/// Eigendecomposition together with `ln λ` for every eigenvalue.
#[derive(Debug, Clone)]
pub(crate) struct SpectralLog {
    pub eig: HermitianEigen,
    pub logs: Vec<f64>,
}

impl SpectralLog {
    /// Requires every eigenvalue to sit above the solver's noise floor, so
    /// that the logarithm is finite.
    pub fn new(m: &CMat) -> Result<Self> {
        let eig = HermitianEigen::new(m);
        if eig.min() < -EIGEN_CLAMP {
            return Err(LabError::NonPhysicalState {
                min_eigenvalue: eig.min(),
            });
        }
        if eig.min() <= eig.noise_floor {
            return Err(LabError::BoundaryState {
                eigenvalue: eig.min(),
                inflow: f64::NAN,
            });
        }
        let logs = eig.values.iter().map(|l| l.ln()).collect();
        Ok(SpectralLog { eig, logs })
    }

    /// As [`SpectralLog::new`], and additionally rejects states whose
    /// thermalization pushes population into eigendirections below
    /// [`RANK_FLOOR`]: there the entropy production rate is governed by the
    /// logarithm of an unresolved eigenvalue.
    pub fn interior(m: &CMat) -> Result<Self> {
        let eig = HermitianEigen::new(m);
        if eig.min() < -EIGEN_CLAMP {
            return Err(LabError::NonPhysicalState {
                min_eigenvalue: eig.min(),
            });
        }
        if eig.min() < RANK_FLOOR {
            let inflow = eig.expectations(&channel::generator(m));
            for (l, w) in eig.values.iter().zip(inflow.iter()) {
                if *l >= RANK_FLOOR {
                    break;
                }
                if *l <= eig.noise_floor || *w > KERNEL_INFLOW_TOL {
                    return Err(LabError::BoundaryState {
                        eigenvalue: *l,
                        inflow: *w,
                    });
                }
            }
        }
        let logs = eig.values.iter().map(|l| l.ln()).collect();
        Ok(SpectralLog { eig, logs })
    }

    pub fn log_matrix(&self) -> CMat {
        self.eig.compose_real(&self.logs)
    }
}

/// Entropy production rate `-γ tr[N(ρ) ln ρ]`.
///
/// Fails with [`LabError::BoundaryState`] when the state has a numerical kernel
/// or when thermalization feeds eigendirections below [`RANK_FLOOR`]; both
/// are the divergent boundary case.
pub fn entropy_rate(rho: &DensityMatrix, gamma: f64) -> Result<f64> {
    let spec = SpectralLog::interior(rho.matrix())?;
    let flow = spec.eig.expectations(&channel::generator(rho.matrix()));
    let tr: f64 = flow.iter().zip(spec.logs.iter()).map(|(w, l)| w * l).sum();
    Ok(-gamma * tr)
}

/// Independent RNG for item `index` of a seeded collection.
pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Seed for item `index`, independent of how many items are drawn.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    rng_for(master, index).next_u64()
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `d x cols` matrix of independent standard complex Gaussians.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Gaussian unitary ensemble sample `(G + G†)/2`.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, space: FockSpace) -> FockOperator {
    let g = ginibre(rng, space.dim, space.dim);
    FockOperator::new_unchecked(space, linalg::hermitian_part(&g))
}

/// `exp(-iH)` for a GUE sample `H`.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, space: FockSpace) -> FockOperator {
    let h = random_hermitian(rng, space);
    let eig = HermitianEigen::new(h.matrix());
    let phases: Vec<Complex64> = eig.values.iter().map(|&l| Complex64::from_polar(1.0, -l)).collect();
    FockOperator::new_unchecked(space, eig.compose(&phases))
}

/// Reproducible `G G† / tr(G G†)` with `G` a `d x rank` complex Ginibre matrix.
///
/// Full-rank draws whose smallest eigenvalue falls below [`RANK_FLOOR`] are
/// redrawn from the same stream, a bounded number of times.
pub fn random_density_matrix(seed: u64, space: FockSpace, rank: usize) -> Result<DensityMatrix> {
    if rank == 0 || rank > space.dim {
        return Err(LabError::invalid(
            "rank",
            format!("need 1 <= rank <= {}, got {rank}", space.dim),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let g = ginibre(&mut rng, space.dim, rank);
        let rho = DensityMatrix::normalized_unchecked(space, &(&g * g.adjoint()));
        if rank < space.dim {
            return Ok(rho);
        }
        let min = rho.eigen().min();
        if min >= RANK_FLOOR {
            return Ok(rho);
        }
        log::debug!("seed {seed}: redrawing, smallest eigenvalue {min:e}");
    }
    Err(LabError::BoundaryState {
        eigenvalue: 0.0,
        inflow: f64::NAN,
    })
}

/// Escort spectrum `λ^s / Σ λ^s`, computed in log space.
fn escort(logs: &[f64], s: f64) -> Vec<f64> {
    let top = logs.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(s * l));
    let w: Vec<f64> = logs.iter().map(|&l| (s * l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Retract onto the entropy level `target`: returns `ρ^s / tr ρ^s` with the
/// exponent `s > 0` found by bisection. Eigenvectors are unchanged.
pub fn set_entropy(rho: &DensityMatrix, target: f64) -> Result<DensityMatrix> {
    Ok(set_entropy_with_exponent(rho, target)?.0)
}

/// As [`set_entropy`], also returning the exponent `s`.
pub fn set_entropy_with_exponent(rho: &DensityMatrix, target: f64) -> Result<(DensityMatrix, f64)> {
    let max = rho.space.max_entropy();
    if !(target > 0.0 && target < max) {
        return Err(LabError::Unreachable { target, max });
    }
    let spec = SpectralLog::new(rho.matrix())?;
    if entropy_of_spectrum(&spec.eig.values) == target {
        return Ok((rho.clone(), 1.0));
    }
    let (spectrum, s) = retarget_spectrum(&spec.eig.values, &spec.logs, target, max)?;
    let matrix = spec.eig.compose_real(&spectrum);
    Ok((DensityMatrix::normalized_unchecked(rho.space, &matrix), s))
}

/// Escort exponent `s` and spectrum `λ^s / Σ λ^s` with entropy `target`.
pub(crate) fn retarget_spectrum(values: &[f64], logs: &[f64], target: f64, max: f64) -> Result<(Vec<f64>, f64)> {
    let entropy_at = |s: f64| entropy_of_spectrum(&escort(logs, s));

    // Entropy decreases from ln d at s = 0 towards ln(multiplicity of λ_max).
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let multiplicity = values
        .iter()
        .filter(|&&l| (top - l) <= 4.0 * f64::EPSILON * top)
        .count();
    let floor = (multiplicity as f64).ln();
    if target <= floor + 1e-14 {
        return Err(LabError::Unreachable { target, max });
    }

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while entropy_at(hi) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(LabError::Unreachable { target, max });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if entropy_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = if (entropy_at(lo) - target).abs() <= (entropy_at(hi) - target).abs() {
        lo
    } else {
        hi
    };
    Ok((escort(logs, s), s))
}

/// Alternately raises eigenvalues to `floor` and retargets the entropy until
/// the spectrum stays above `floor / 2` at entropy `target`.
pub(crate) fn floored_spectrum(values: &[f64], floor: f64, target: f64, max: f64) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = values.to_vec();
    for _ in 0..64 {
        let clipped: Vec<f64> = v.iter().map(|&l| l.max(floor)).collect();
        let total: f64 = clipped.iter().sum();
        let clipped: Vec<f64> = clipped.iter().map(|l| l / total).collect();
        let logs: Vec<f64> = clipped.iter().map(|l| l.ln()).collect();
        let (next, _) = retarget_spectrum(&clipped, &logs, target, max)?;
        let done = next.iter().all(|&l| l >= 0.5 * floor);
        v = next;
        if done {
            return Ok(v);
        }
    }
    Err(LabError::BoundaryState {
        eigenvalue: v.iter().cloned().fold(f64::INFINITY, f64::min),
        inflow: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{E, LN_2};

    fn space(d: usize) -> FockSpace {
        FockSpace::with_dim(d).unwrap()
    }

    #[test]
    fn space_rejects_bad_parameters() {
        assert!(FockSpace::new(1, 1e-10).is_err());
        assert!(FockSpace::new(4, 0.0).is_err());
    }

    #[test]
    fn annihilation_two_levels() {
        let a = annihilation(space(2));
        let expected = CMat::from_row_slice(2, 2, &[real(0.0), real(1.0), real(0.0), real(0.0)]);
        assert_eq!(a.matrix(), &expected);
    }

    #[test]
    fn annihilation_kills_vacuum_and_has_sqrt_entries() {
        let s = space(4);
        let a = annihilation(s);
        let vac = a.matrix().column(0).into_owned();
        assert!(vac.iter().all(|z| *z == linalg::ZERO));
        assert_eq!(a.matrix()[(2, 3)], real(3.0_f64.sqrt()));
        let n = number_operator(s);
        let ada = a.matrix().adjoint() * a.matrix();
        assert!(linalg::frobenius(&(ada - n.matrix())) < 1e-15);
    }

    #[test]
    fn commutator_defect_confined_to_top_level() {
        let d = 9;
        let a = annihilation(space(d)).into_matrix();
        let comm = a.adjoint() * &a - &a * a.adjoint();
        for j in 0..d {
            for k in 0..d {
                let expected = if j == k && j < d - 1 {
                    -1.0
                } else if j == k {
                    (d - 1) as f64
                } else {
                    0.0
                };
                assert_abs_diff_eq!(comm[(j, k)].re, expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn displacement_zero_is_identity() {
        let d = displacement(Complex64::new(0.0, 0.0), space(6));
        assert!(linalg::frobenius(&(d.matrix() - linalg::identity(6))) < 1e-14);
    }

    #[test]
    fn displaced_vacuum_matches_coherent_amplitudes() {
        let mu = Complex64::new(0.5, 0.0);
        let d = displacement(mu, space(30));
        let mut factorial = 1.0;
        for n in 0..30 {
            if n > 0 {
                factorial *= n as f64;
            }
            let expected = (-mu.norm_sqr() / 2.0).exp() * mu.powu(n as u32) / factorial.sqrt();
            assert!((d.matrix()[(n, 0)] - expected).norm() < 1e-10, "level {n}");
        }
        assert!(unitarity_defect(&d) <= 1e-8);
    }

    #[test]
    fn complex_displacement_matches_coherent_amplitudes() {
        let mu = Complex64::new(0.3, -0.4);
        let d = displacement(mu, space(30));
        let mut factorial = 1.0;
        for n in 0..12 {
            if n > 0 {
                factorial *= n as f64;
            }
            let expected = (-mu.norm_sqr() / 2.0).exp() * mu.powu(n as u32) / factorial.sqrt();
            assert!((d.matrix()[(n, 0)] - expected).norm() < 1e-10, "level {n}");
        }
    }

    #[test]
    fn thermal_special_cases() {
        let vac = ThermalSpec::new(f64::INFINITY, space(5)).unwrap().state();
        assert_eq!(vac, DensityMatrix::vacuum(space(5)));

        let pops = ThermalSpec::new(LN_2, space(8)).unwrap().populations();
        for w in pops.windows(2) {
            assert_abs_diff_eq!(w[1] / w[0], 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(pops.iter().sum::<f64>(), 1.0, epsilon = 1e-15);

        assert!(ThermalSpec::new(0.0, space(5)).is_err());
        assert!(ThermalSpec::new(-1.0, space(5)).is_err());
    }

    #[test]
    fn thermal_energy_matches_geometric_series() {
        let rho = ThermalSpec::new(1.0, space(40)).unwrap().state();
        // Direct summation of n q^n (1 - q) over an effectively infinite range.
        let q = (-1.0_f64).exp();
        let oracle: f64 = (0..400).map(|n| n as f64 * q.powi(n) * (1.0 - q)).sum();
        assert_abs_diff_eq!(energy(&rho), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(energy(&rho), 1.0 / (E - 1.0), epsilon = 1e-12);
    }

    #[test]
    fn entropy_reference_values() {
        let s = space(4);
        assert_eq!(von_neumann_entropy(&DensityMatrix::vacuum(s)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            von_neumann_entropy(&DensityMatrix::maximally_mixed(s)).unwrap(),
            4.0_f64.ln(),
            epsilon = 1e-15
        );
        let beta = 1.0_f64;
        let rho = ThermalSpec::new(beta, space(40)).unwrap().state();
        let q = (-beta).exp();
        let oracle: f64 = (0..400)
            .map(|n| {
                let p = q.powi(n) * (1.0 - q);
                -p * p.ln()
            })
            .sum();
        let closed = beta / beta.exp_m1() - (1.0 - q).ln();
        assert_abs_diff_eq!(oracle, closed, epsilon = 1e-13);
        assert_abs_diff_eq!(von_neumann_entropy(&rho).unwrap(), closed, epsilon = 1e-10);
    }

    #[test]
    fn entropy_rejects_negative_eigenvalues() {
        let s = space(2);
        let m = linalg::diagonal(&[1.0 + 1e-9, -1e-9]);
        let bad = DensityMatrix::new_unchecked(s, m);
        assert!(matches!(
            von_neumann_entropy(&bad),
            Err(LabError::NonPhysicalState { .. })
        ));
        assert!(DensityMatrix::from_populations(s, &[1.0 + 1e-9, -1e-9]).is_err());
    }

    #[test]
    fn energy_of_fock_states() {
        let s = space(5);
        assert_eq!(energy(&DensityMatrix::vacuum(s)), 0.0);
        assert_eq!(energy(&DensityMatrix::fock(s, 1).unwrap()), 1.0);
    }

    #[test]
    fn entropy_rate_of_thermal_state_is_gamma_beta() {
        let rho = ThermalSpec::new(1.0, space(40)).unwrap().state();
        assert_abs_diff_eq!(entropy_rate(&rho, 1.0).unwrap(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(entropy_rate(&rho, 2.5).unwrap(), 2.5, epsilon = 1e-8);
    }

    #[test]
    fn entropy_rate_boundary_and_fixed_point() {
        let s = space(8);
        assert!(matches!(
            entropy_rate(&DensityMatrix::vacuum(s), 1.0),
            Err(LabError::BoundaryState { .. })
        ));
        let pure = random_density_matrix(3, s, 1).unwrap();
        assert!(matches!(entropy_rate(&pure, 1.0), Err(LabError::BoundaryState { .. })));
        // I/d is the fixed point of the truncated generator, so its rate is finite (zero).
        let rate = entropy_rate(&DensityMatrix::maximally_mixed(s), 1.0).unwrap();
        assert!(rate.is_finite());
        assert!(rate.abs() < 1e-13);
    }

    #[test]
    fn random_states_are_reproducible_and_valid() {
        let s = space(12);
        let a = random_density_matrix(42, s, 12).unwrap();
        let b = random_density_matrix(42, s, 12).unwrap();
        assert_eq!(a, b);
        assert!(DensityMatrix::from_matrix(s, a.matrix().clone()).is_ok());
        assert!(a.eigen().min() > RANK_FLOOR);
        let c = random_density_matrix(43, s, 12).unwrap();
        assert_ne!(a, c);

        let pure = random_density_matrix(7, s, 1).unwrap();
        assert!(von_neumann_entropy(&pure).unwrap() < 1e-12);
        assert!(random_density_matrix(7, s, 0).is_err());
        assert!(random_density_matrix(7, s, 13).is_err());
    }

    #[test]
    fn set_entropy_fixed_point() {
        let rho = random_density_matrix(5, space(6), 6).unwrap();
        let s0 = von_neumann_entropy(&rho).unwrap();
        let (out, s) = set_entropy_with_exponent(&rho, s0).unwrap();
        assert_eq!(s, 1.0);
        assert!(linalg::frobenius(&(out.matrix() - rho.matrix())) < 1e-12);
    }

    #[test]
    fn set_entropy_near_max_approaches_maximally_mixed() {
        let s = space(6);
        let rho = random_density_matrix(5, s, 6).unwrap();
        let target = s.max_entropy() - 1e-9;
        let (out, exponent) = set_entropy_with_exponent(&rho, target).unwrap();
        assert!(exponent < 1e-2);
        assert!(out.trace_distance(&DensityMatrix::maximally_mixed(s)) < 1e-3);
    }

    #[test]
    fn set_entropy_maps_thermal_to_thermal() {
        let s = space(20);
        let hot = ThermalSpec::new(1.0, s).unwrap().state();
        let cold = ThermalSpec::new(2.0, s).unwrap().state();
        let target = von_neumann_entropy(&cold).unwrap();
        let out = set_entropy(&hot, target).unwrap();
        assert_abs_diff_eq!(von_neumann_entropy(&out).unwrap(), target, epsilon = 1e-10);
        for (a, b) in out.populations().iter().zip(cold.populations()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn set_entropy_errors() {
        let s = space(5);
        let rho = random_density_matrix(1, s, 5).unwrap();
        assert!(matches!(set_entropy(&rho, 0.0), Err(LabError::Unreachable { .. })));
        assert!(matches!(set_entropy(&rho, 2.0), Err(LabError::Unreachable { .. })));
        assert!(matches!(
            set_entropy(&DensityMatrix::vacuum(s), 0.5),
            Err(LabError::BoundaryState { .. })
        ));
        assert!(matches!(
            set_entropy(&DensityMatrix::maximally_mixed(s), 1.0),
            Err(LabError::Unreachable { .. })
        ));
    }
}
