//! Collective-spin coefficient matrices and reduced atomic states in the Jz basis.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::params::TotalSpin;
use crate::{Error, Result};

/// Largest entry modulus of a complex matrix.
pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Which form of the initial x-polarised coherent-spin-state coefficients to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approximation {
    Exact,
    /// Large-N Gaussian envelope sqrt(2 / pi N) exp(-(n^2 + m^2) / N).
    Gaussian,
}

/// Log of the binomial amplitude sqrt(C(2J, J+n) / 2^(2J)) of the x-polarised
/// coherent spin state.
pub fn log_css_amplitude(big_j: TotalSpin, n: f64) -> f64 {
    let j = big_j.j();
    let n = n.abs();
    0.5 * (libm::lgamma(2.0 * j + 1.0) - libm::lgamma(j + n + 1.0) - libm::lgamma(j - n + 1.0))
        - j * std::f64::consts::LN_2
}

/// Initial atomic coefficients C_nm(0) of the atoms-plus-field expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicCoefficients {
    pub big_j: TotalSpin,
    pub c: DMatrix<Complex64>,
}

impl AtomicCoefficients {
    /// Coherent spin state pointing along x.
    pub fn coherent_x(big_j: TotalSpin, approximation: Approximation) -> Self {
        let dim = big_j.dim();
        let c = match approximation {
            Approximation::Gaussian if big_j.two_j() > 0 => {
                let atoms = big_j.atoms();
                let pref = (2.0 / (std::f64::consts::PI * atoms)).sqrt();
                DMatrix::from_fn(dim, dim, |i, k| {
                    let (n, m) = (big_j.n(i), big_j.n(k));
                    Complex64::new(pref * (-(n * n + m * m) / atoms).exp(), 0.0)
                })
            }
            _ => {
                let amp: Vec<f64> = big_j.levels().map(|n| log_css_amplitude(big_j, n)).collect();
                DMatrix::from_fn(dim, dim, |i, k| Complex64::new((amp[i] + amp[k]).exp(), 0.0))
            }
        };
        Self { big_j, c }
    }

    /// Equal pure superposition (|n> + |-n>)/sqrt(2), or |0><0| when n = 0.
    pub fn two_state(big_j: TotalSpin, n: f64) -> Result<Self> {
        let i = big_j
            .index(n)
            .ok_or_else(|| Error::InvalidParams(format!("n = {n} is not a level of J = {big_j}")))?;
        let k = big_j.mirror(i);
        let dim = big_j.dim();
        let mut c = DMatrix::zeros(dim, dim);
        let amp = if i == k { 1.0 } else { 0.5 };
        for &a in &[i, k] {
            for &b in &[i, k] {
                c[(a, b)] = Complex64::new(amp, 0.0);
            }
        }
        Ok(Self { big_j, c })
    }

    /// Wraps an arbitrary Hermitian, unit-trace coefficient matrix.
    pub fn from_matrix(big_j: TotalSpin, c: DMatrix<Complex64>) -> Result<Self> {
        let dim = big_j.dim();
        if c.nrows() != dim || c.ncols() != dim {
            return Err(Error::InvalidParams(format!(
                "coefficient matrix must be {dim}x{dim}"
            )));
        }
        let herm = max_abs(&(&c - c.adjoint()));
        if herm > 1e-10 {
            return Err(Error::InvalidParams(format!(
                "coefficient matrix is not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = c.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::InvalidParams(format!("coefficient trace is {tr}, expected 1")));
        }
        Ok(Self { big_j, c })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.big_j.dim()).map(|i| self.c[(i, i)].re).collect()
    }

    pub fn as_density_matrix(&self) -> AtomicDensityMatrix {
        AtomicDensityMatrix {
            big_j: self.big_j,
            rho: self.c.clone(),
        }
    }
}

/// Reduced atomic state in the Jz basis, index 0 is n = -J.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDensityMatrix {
    pub big_j: TotalSpin,
    pub rho: DMatrix<Complex64>,
}

impl AtomicDensityMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.big_j.dim()).map(|i| self.rho[(i, i)].re).collect()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    /// Tr(rho^2) = sum |rho_nm|^2 for Hermitian rho.
    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs(&(&self.rho - self.rho.adjoint()))
    }

    /// Largest |rho_nn - rho_{-n,-n}|.
    pub fn mirror_asymmetry(&self) -> f64 {
        let d = self.diagonal();
        (0..d.len())
            .map(|i| (d[i] - d[self.big_j.mirror(i)]).abs())
            .fold(0.0, f64::max)
    }

    /// Largest elementwise deviation from another state.
    pub fn max_deviation(&self, other: &AtomicDensityMatrix) -> f64 {
        max_abs(&(&self.rho - &other.rho))
    }
}
