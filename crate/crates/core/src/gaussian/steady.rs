//! Stationary covariances and unobserved means of the diagonal blocks.

use nalgebra::{Matrix2, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use super::flow::{Generator, Mat4, Vec4};
use crate::error::{Error, Result};
use crate::params::PhysicalParams;

/// Relative residual `|dV/dt| / max rate` at which the covariance counts as stationary.
pub const STEADY_RESIDUAL: f64 = 1e-10;

/// Integrates the covariance flow of block `(n, m)` from vacuum to its fixed point.
pub fn steady_covariance(params: &PhysicalParams, n: f64, m: f64) -> Result<Mat4> {
    let gen = Generator::for_block(params, n, m);
    let rate = params.max_rate().max(params.kappa());
    let dt = 0.05 / rate;
    let half = Complex64::new(0.5 * dt, 0.0);
    let mut v = Mat4::identity();
    for _ in 0..2_000_000 {
        let f0 = gen.covariance_rate(&v);
        if f0.norm() / rate < STEADY_RESIDUAL {
            return Ok(v);
        }
        let f1 = gen.covariance_rate(&(v + f0 * Complex64::new(dt, 0.0)));
        v += (f0 + f1) * half;
    }
    Err(Error::Numerical(format!("covariance of block ({n}, {m}) did not settle")))
}

/// Stationary mean of the diagonal block `n` without detection (`eta = 0`).
pub fn steady_mean_unobserved(params: &PhysicalParams, n: f64) -> Result<Vec4> {
    let p = PhysicalParams { eta: 0.0, ..*params };
    let v = steady_covariance(&p, n, n)?;
    let k = Generator::for_block(&p, n, n).coefficients(&v);
    let lu = k.a.lu();
    lu.solve(&(-k.a0))
        .ok_or_else(|| Error::Numerical("singular mean drift".into()))
}

/// Closed-form stationary mean for `phi = pi`, `beta = i|beta|`, `epsilon = i Im(epsilon)`.
pub fn closed_form_steady_mean(params: &PhysicalParams, n: f64) -> Vec4 {
    let k2t = params.kappa2_total();
    let im_eps = params.epsilon.im;
    let b = params.beta.norm();
    let b_eff = b * (2.0 * params.kappa2 / (k2t + 2.0 * im_eps) - 1.0);
    let lambda = Complex64::new(0.5 * params.kappa(), n * params.g_tilde());
    let alpha = params.kappa1.sqrt() * b_eff / lambda;
    let re = |x: f64| Complex64::new(x, 0.0);
    Vec4::new(
        re(SQRT_2 * alpha.re),
        re(SQRT_2 * alpha.im),
        re(0.0),
        re(-2.0 * b * (2.0 * params.kappa2).sqrt() / (k2t + 2.0 * im_eps)),
    )
}

/// Cavity-1 marginal of a stationary diagonal block. Lengths are in units of
/// the vacuum radius, so vacuum is the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEllipse {
    pub center: [f64; 2],
    pub major: f64,
    pub minor: f64,
    /// Angle of the major axis from the x1 axis, in (-pi/2, pi/2].
    pub angle: f64,
    /// Variances along x1 and p1 (diagonal of the block).
    pub var_x1: f64,
    pub var_p1: f64,
}

pub fn uncertainty_ellipse(params: &PhysicalParams, n: f64) -> Result<UncertaintyEllipse> {
    let v = steady_covariance(params, n, n)?;
    let center = steady_mean_unobserved(params, n)?;
    let block = Matrix2::new(v[(0, 0)].re, v[(0, 1)].re, v[(1, 0)].re, v[(1, 1)].re);
    let eig = SymmetricEigen::new(block);
    let (imax, imin) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let axis = eig.eigenvectors.column(imax);
    let mut angle = axis[1].atan2(axis[0]);
    if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    } else if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    Ok(UncertaintyEllipse {
        center: [center[0].re, center[1].re],
        major: eig.eigenvalues[imax].max(0.0).sqrt(),
        minor: eig.eigenvalues[imin].max(0.0).sqrt(),
        angle,
        var_x1: block[(0, 0)],
        var_p1: block[(1, 1)],
    })
}
