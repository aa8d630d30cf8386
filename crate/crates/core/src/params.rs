//! Physical constants of the probing setup and the quantities derived from them.
//!
//! Every frequency is an angular frequency in rad/s. The probe amplitude `beta`
//! carries units of s^(-1/2) so that `|beta|^2 dt` is a photon number.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Converts a frequency quoted as `2 pi x MHz` into rad/s.
pub fn mhz(x: f64) -> f64 {
    2.0 * PI * x * 1e6
}

/// Total collective spin, stored as `2J` so half-integers are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TotalSpin {
    two_j: u32,
}

impl TotalSpin {
    pub fn from_two_j(two_j: u32) -> Self {
        Self { two_j }
    }

    /// Spin of `atoms` spin-1/2 particles in the symmetric sector.
    pub fn from_atoms(atoms: u32) -> Self {
        Self { two_j: atoms }
    }

    /// Parses a non-negative multiple of 1/2.
    pub fn from_f64(j: f64) -> Option<Self> {
        let two_j = 2.0 * j;
        if j < 0.0 || !j.is_finite() || (two_j - two_j.round()).abs() > 1e-9 {
            return None;
        }
        Some(Self {
            two_j: two_j.round() as u32,
        })
    }

    pub fn two_j(self) -> u32 {
        self.two_j
    }

    pub fn j(self) -> f64 {
        f64::from(self.two_j) / 2.0
    }

    /// Number of atoms N = 2J.
    pub fn atoms(self) -> f64 {
        f64::from(self.two_j)
    }

    /// Dimension 2J + 1 of the Jz ladder.
    pub fn dim(self) -> usize {
        self.two_j as usize + 1
    }

    /// Jz eigenvalue of ladder index `i` (0 is n = -J).
    pub fn n(self, i: usize) -> f64 {
        i as f64 - self.j()
    }

    /// Ladder index of the eigenvalue `n`, if it is on the ladder.
    pub fn index(self, n: f64) -> Option<usize> {
        let i = n + self.j();
        if i < -1e-9 || (i - i.round()).abs() > 1e-9 || i.round() as usize > self.two_j as usize {
            return None;
        }
        Some(i.round() as usize)
    }

    /// Index of the mirror level `-n`.
    pub fn mirror(self, i: usize) -> usize {
        self.two_j as usize - i
    }

    pub fn levels(self) -> impl Iterator<Item = f64> {
        (0..self.dim()).map(move |i| self.n(i))
    }
}

impl fmt::Display for TotalSpin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.two_j.is_multiple_of(2) {
            write!(f, "{}", self.two_j / 2)
        } else {
            write!(f, "{}/2", self.two_j)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Single-atom coupling strength.
    pub g: f64,
    /// Detuning of the probe from the atomic transition.
    pub delta: f64,
    /// Cavity-1 input-mirror decay rate.
    pub kappa1: f64,
    pub kappa_loss1: f64,
    /// Cavity-2 (squeezing cavity) input-mirror decay rate; zero removes the cavity.
    pub kappa2: f64,
    pub kappa_loss2: f64,
    /// Input-beam amplitude.
    pub beta: Complex64,
    /// Nonlinear gain coefficient of the squeezing crystal.
    pub epsilon: Complex64,
    /// Detection efficiency.
    pub eta: f64,
    /// Local-oscillator phase.
    pub phi: f64,
    /// Atomic spontaneous decay rate, only used for timescale estimates.
    pub gamma_sp: f64,
    pub big_j: TotalSpin,
}

impl PhysicalParams {
    /// Strong-coupling cavity parameters: g = 2pi x 215 MHz,
    /// Delta = 2pi x 10 GHz, kappa1 = kappa = 2pi x 106 MHz, Gamma = 2pi x 6 MHz,
    /// probe strength 4 kappa1 beta^2 / kappa^2 = 0.01, perfect detection, no
    /// squeezing cavity, J = 50.
    pub fn reichel() -> Self {
        let mut p = Self {
            g: mhz(215.0),
            delta: mhz(10_000.0),
            kappa1: mhz(106.0),
            kappa_loss1: 0.0,
            kappa2: 0.0,
            kappa_loss2: 0.0,
            beta: Complex64::new(0.0, 0.0),
            epsilon: Complex64::new(0.0, 0.0),
            eta: 1.0,
            phi: PI,
            gamma_sp: mhz(6.0),
            big_j: TotalSpin::from_two_j(100),
        };
        p.beta = Complex64::new(p.beta_for_probe_strength(0.01), 0.0);
        p
    }

    /// Squeezed-vacuum probing geometry: both cavities at 2pi x 106 MHz without
    /// extra loss, eta = 0.9, phi = pi, beta = 0 and epsilon unset.
    pub fn reichel_squeezed() -> Self {
        Self {
            kappa2: mhz(106.0),
            eta: 0.9,
            beta: Complex64::new(0.0, 0.0),
            ..Self::reichel()
        }
    }

    /// Effective dispersive coupling g^2 / Delta.
    pub fn g_tilde(&self) -> f64 {
        self.g * self.g / self.delta
    }

    /// Total cavity-1 decay rate kappa1 + kappa_loss1.
    pub fn kappa(&self) -> f64 {
        self.kappa1 + self.kappa_loss1
    }

    /// Total cavity-2 decay rate kappa2 + kappa_loss2.
    pub fn kappa2_total(&self) -> f64 {
        self.kappa2 + self.kappa_loss2
    }

    /// Dimensionless probe strength 4 kappa1 |beta|^2 / kappa^2.
    pub fn probe_strength(&self) -> f64 {
        4.0 * self.kappa1 * self.beta.norm_sqr() / (self.kappa() * self.kappa())
    }

    /// |beta| giving the requested probe strength 4 kappa1 |beta|^2 / kappa^2.
    pub fn beta_for_probe_strength(&self, strength: f64) -> f64 {
        (strength * self.kappa() * self.kappa() / (4.0 * self.kappa1)).sqrt()
    }

    /// Largest rate appearing in the cascaded equations.
    pub fn max_rate(&self) -> f64 {
        let rates = [
            self.kappa(),
            self.kappa2_total(),
            self.epsilon.norm(),
            self.big_j.j() * self.g_tilde().abs(),
        ];
        rates.into_iter().fold(0.0, f64::max)
    }

    /// Step bound dt <= 0.01 / max rate required by the component integrators.
    pub fn stable_dt_bound(&self) -> f64 {
        0.01 / self.max_rate()
    }

    /// Maps coherent-probe parameters (real beta, x-quadrature detection) onto
    /// the cascaded equation with the squeezing cavity removed. In the cascaded
    /// convention the drive enters cavity 1 as `i sqrt(kappa1) beta`, so the
    /// equivalent amplitude is `-i beta`, and `phi = pi` reproduces the sign of
    /// the homodyne signal.
    pub fn cascaded_equivalent(&self) -> Self {
        Self {
            kappa2: 0.0,
            kappa_loss2: 0.0,
            epsilon: Complex64::new(0.0, 0.0),
            beta: Complex64::new(0.0, -1.0) * self.beta,
            phi: PI,
            ..*self
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let rates = [
            ("kappa1", self.kappa1),
            ("kappa_loss1", self.kappa_loss1),
            ("kappa2", self.kappa2),
            ("kappa_loss2", self.kappa_loss2),
            ("gamma_sp", self.gamma_sp),
        ];
        for (name, value) in rates {
            if !(value >= 0.0 && value.is_finite()) {
                report.violations.push(format!("{name} must be a finite non-negative rate"));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            report.violations.push("eta out of range [0, 1]".to_string());
        }
        if !self.g.is_finite() || !self.delta.is_finite() || self.delta == 0.0 {
            report
                .violations
                .push("g and delta must be finite with delta != 0".to_string());
        }
        if self.kappa() <= 0.0 {
            report
                .violations
                .push("total cavity-1 decay rate must be positive".to_string());
        }
        if !(self.beta.re.is_finite() && self.beta.im.is_finite()) {
            report.violations.push("beta must be finite".to_string());
        }
        if !self.phi.is_finite() {
            report.violations.push("phi must be finite".to_string());
        }
        let k2 = self.kappa2_total();
        if self.epsilon.norm() > 0.0 {
            if k2 <= 0.0 {
                report.violations.push(
                    "epsilon is non-zero but the squeezing cavity has no decay".to_string(),
                );
            } else if self.epsilon.norm() / k2 >= 0.5 {
                report.warnings.push(format!(
                    "above OPO threshold: |epsilon|/(kappa2+kappa_loss2) = {:.3} >= 1/2",
                    self.epsilon.norm() / k2
                ));
            }
        }
        if self.kappa2 == 0.0 && self.beta.norm() > 0.0 && self.kappa_loss2 > 0.0 {
            report
                .warnings
                .push("cavity 2 has loss but no input coupling".to_string());
        }
        report
    }

    /// Probing and spontaneous-emission timescales for a typical `Jz` value.
    pub fn derive_scales(&self, n_typical: f64) -> DerivedScales {
        let kappa = self.kappa();
        let strength = self.probe_strength();
        let gain = self.eta * self.kappa1 * strength;
        let t_qs = if gain > 0.0 { 1.0 / gain } else { f64::INFINITY };

        let g2 = self.g * self.g;
        let detuning_factor =
            1.0 + 4.0 * g2 * g2 * n_typical * n_typical / (self.delta * self.delta * kappa * kappa);
        let excitation =
            g2 / (self.delta * self.delta + 0.25 * self.gamma_sp * self.gamma_sp);
        let rate = self.gamma_sp * strength / detuning_factor * excitation * self.big_j.atoms() / 2.0;
        let t_sp = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };

        let radius = self.kappa1.sqrt() * self.beta.norm() / kappa;
        DerivedScales {
            g_tilde: self.g_tilde(),
            kappa_total: kappa,
            t_qs,
            t_sp,
            circle_center: radius,
            circle_radius: radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedScales {
    pub g_tilde: f64,
    pub kappa_total: f64,
    /// Time after which the n = 0 and n = +-J record distributions separate.
    pub t_qs: f64,
    /// Mean time between spontaneous emission events.
    pub t_sp: f64,
    /// Real-axis centre of the circle traced by the steady amplitudes.
    pub circle_center: f64,
    pub circle_radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> crate::Result<Vec<String>> {
        if self.violations.is_empty() {
            Ok(self.warnings)
        } else {
            Err(crate::Error::InvalidParams(self.violations.join("; ")))
        }
    }
}
