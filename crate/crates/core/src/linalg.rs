//! Dense complex matrix helpers built on `nalgebra`.
//!
//! Everything in the crate works on `d x d` complex matrices. The central
//! routine is [`HermitianEigen`], which all matrix functions (logarithm,
//! powers, square roots, exponentials of Hermitian generators) go through.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

/// `(m + m†) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    let mut h = m.clone();
    let n = m.nrows();
    for j in 0..n {
        h[(j, j)] = real(m[(j, j)].re);
        for k in (j + 1)..n {
            let v = (m[(j, k)] + m[(k, j)].conj()) * 0.5;
            h[(j, k)] = v;
            h[(k, j)] = v.conj();
        }
    }
    h
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Real part of the Hilbert-Schmidt inner product `tr(a† b)`.
pub fn hs_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `tr(a b)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for j in 0..n {
        for k in 0..n {
            acc += a[(j, k)] * b[(k, j)];
        }
    }
    acc
}

/// Largest entry of `|m - m†|`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for k in j..n {
            worst = worst.max((m[(j, k)] - m[(k, j)].conj()).norm());
        }
    }
    worst
}

pub fn is_diagonal(m: &CMat) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|k| j == k || m[(j, k)] == ZERO))
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diagonal(values: &[f64]) -> CMat {
    let n = values.len();
    let mut m = CMat::zeros(n, n);
    for (j, v) in values.iter().enumerate() {
        m[(j, j)] = real(*v);
    }
    m
}

/// Spectral decomposition of a Hermitian matrix with eigenvalues ascending.
///
/// Exactly diagonal inputs bypass the iterative solver, so their eigenvalues
/// are exact. That matters for thermal states, whose populations reach far
/// below the solver's absolute accuracy.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMat,
    /// Absolute accuracy of `values`: zero on the exact diagonal path,
    /// `n * eps * max|λ|` otherwise.
    pub noise_floor: f64,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "eigendecomposition needs a square matrix");
        if is_diagonal(m) {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re));
            let values = order.iter().map(|&j| m[(j, j)].re).collect();
            let mut vectors = CMat::zeros(n, n);
            for (col, &j) in order.iter().enumerate() {
                vectors[(j, col)] = ONE;
            }
            return HermitianEigen {
                values,
                vectors,
                noise_floor: 0.0,
            };
        }

        let eig = SymmetricEigen::new(hermitian_part(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let mut vectors = CMat::zeros(n, n);
        for (col, &j) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(j));
        }
        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        HermitianEigen {
            values,
            vectors,
            noise_floor: n as f64 * f64::EPSILON * scale,
        }
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    /// `V diag(values) V†`.
    pub fn compose(&self, values: &[Complex64]) -> CMat {
        let mut scaled = self.vectors.clone();
        for (k, v) in values.iter().enumerate() {
            scaled.column_mut(k).iter_mut().for_each(|x| *x *= v);
        }
        &scaled * self.vectors.adjoint()
    }

    pub fn compose_real(&self, values: &[f64]) -> CMat {
        let vals: Vec<Complex64> = values.iter().map(|&v| real(v)).collect();
        hermitian_part(&self.compose(&vals))
    }

    /// `⟨v_k| m |v_k⟩` for every eigenvector.
    pub fn expectations(&self, m: &CMat) -> Vec<f64> {
        let mv = m * &self.vectors;
        (0..self.values.len())
            .map(|k| {
                self.vectors
                    .column(k)
                    .iter()
                    .zip(mv.column(k).iter())
                    .map(|(v, w)| (v.conj() * w).re)
                    .sum()
            })
            .collect()
    }

    /// Re-express `m` in the eigenbasis: `V† m V`.
    pub fn to_eigenbasis(&self, m: &CMat) -> CMat {
        self.vectors.adjoint() * m * &self.vectors
    }

    pub fn from_eigenbasis(&self, m: &CMat) -> CMat {
        &self.vectors * m * self.vectors.adjoint()
    }
}

/// Trace norm of a Hermitian matrix, halved: `½ Σ |λ_k|`.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let diff = a - b;
    0.5 * HermitianEigen::new(&diff).values.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest singular value, via the eigenvalues of `m† m`.
pub fn operator_norm(m: &CMat) -> f64 {
    let gram = m.adjoint() * m;
    HermitianEigen::new(&gram).max().max(0.0).sqrt()
}

/// Stack the real and imaginary parts of a matrix into one real column.
pub fn realify(m: &CMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.len());
    out.extend(m.iter().map(|z| z.re));
    out.extend(m.iter().map(|z| z.im));
    out
}
