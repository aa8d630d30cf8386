//! Closed-form conditional dynamics for a coherent-state probe.
//!
//! For an atomic Jz eigenstate |n> the cavity field stays coherent with
//! amplitude alpha_n(t), so the joint state is a sum over (n, m) of
//! |alpha_n><alpha_m| (x) |n><m| with scalar weights. Every weight exponent is
//! a handful of time integrals of the amplitudes, collected in
//! [`ExponentIntegrals`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par::{map_range, Exec};
use crate::params::{PhysicalParams, TotalSpin};
use crate::record::{trajectory_rng, wiener_increments, MeasurementRecord};
use crate::spin::{AtomicCoefficients, AtomicDensityMatrix};
use crate::{Error, Result};

fn cr(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// (1 - exp(-mu tau)) / mu, with the tau -> 0 limit handled.
fn decay_integral(mu: Complex64, tau: f64) -> Complex64 {
    let z = mu * tau;
    if z.norm() < 1e-4 {
        cr(tau) * (cr(1.0) - z / 2.0 + z * z / 6.0 - z * z * z / 24.0)
    } else {
        (cr(1.0) - (-z).exp()) / mu
    }
}

/// Piecewise-constant real probe amplitude. `segments` are (duration, beta)
/// pairs played in order; `after` holds from the end of the last segment on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaProfile {
    pub segments: Vec<(f64, f64)>,
    pub after: f64,
}

impl BetaProfile {
    pub fn constant(beta: f64) -> Self {
        Self {
            segments: Vec::new(),
            after: beta,
        }
    }

    /// Probe on with amplitude `beta` until `t_off`, then off.
    pub fn switched_off_at(beta: f64, t_off: f64) -> Self {
        Self {
            segments: vec![(t_off, beta)],
            after: 0.0,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let mut start = 0.0;
        for &(d, b) in &self.segments {
            if t < start + d {
                return b;
            }
            start += d;
        }
        self.after
    }

    /// Constant pieces covering [0, t].
    fn pieces(&self, t: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for &(d, b) in &self.segments {
            if start >= t {
                return out;
            }
            out.push(((start + d).min(t) - start, b));
            start += d;
        }
        if t > start {
            out.push((t - start, self.after));
        }
        out
    }
}

/// How the cavity amplitudes are evaluated along the record.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeModel {
    /// Steady-state amplitudes throughout, driven by `params.beta`.
    Steady,
    /// Exact transient amplitudes starting from the empty cavity.
    Transient(BetaProfile),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AmplitudeTime {
    Transient(f64),
    Steady,
}

/// Cavity amplitudes alpha_n for every level n = -J..J.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSet {
    pub big_j: TotalSpin,
    pub alpha: Vec<Complex64>,
    pub mode: AmplitudeTime,
}

impl AmplitudeSet {
    pub fn steady(params: &PhysicalParams) -> Self {
        let big_j = params.big_j;
        Self {
            big_j,
            alpha: big_j.levels().map(|n| alpha_steady(params, n)).collect(),
            mode: AmplitudeTime::Steady,
        }
    }

    pub fn transient(params: &PhysicalParams, t: f64, profile: &BetaProfile) -> Self {
        let big_j = params.big_j;
        Self {
            big_j,
            alpha: big_j
                .levels()
                .map(|n| alpha_transient(params, n, t, profile))
                .collect(),
            mode: AmplitudeTime::Transient(t),
        }
    }

    /// Largest |alpha_n - conj(alpha_{-n})|.
    pub fn conjugation_asymmetry(&self) -> f64 {
        (0..self.alpha.len())
            .map(|i| (self.alpha[i] - self.alpha[self.big_j.mirror(i)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

fn decay_rate(params: &PhysicalParams, n: f64) -> Complex64 {
    Complex64::new(params.kappa() / 2.0, n * params.g_tilde())
}

/// Steady-state cavity amplitude for level n under constant `params.beta`.
pub fn alpha_steady(params: &PhysicalParams, n: f64) -> Complex64 {
    let k = params.kappa();
    let x = 2.0 * n * params.g_tilde() / k;
    params.beta * (2.0 * params.kappa1.sqrt() / k) * Complex64::new(1.0, -x) / (1.0 + x * x)
}

/// Cavity amplitude at time `t` for level n, field empty at t = 0.
pub fn alpha_transient(params: &PhysicalParams, n: f64, t: f64, profile: &BetaProfile) -> Complex64 {
    let lambda = decay_rate(params, n);
    let sk = params.kappa1.sqrt();
    profile.pieces(t).into_iter().fold(cr(0.0), |alpha, (d, b)| {
        let target = cr(sk * b) / lambda;
        target + (alpha - target) * (-lambda * d).exp()
    })
}

/// Time integrals entering the weight of |alpha_n><alpha_m| (x) |n><m|.
#[derive(Debug, Clone)]
pub struct ExponentIntegrals {
    pub duration: f64,
    /// Integral of alpha_n dt.
    pub alpha_dt: Vec<Complex64>,
    /// Integral of beta alpha_n dt.
    pub beta_alpha_dt: Vec<Complex64>,
    /// Integral of alpha_n dy.
    pub alpha_dy: Vec<Complex64>,
    /// Integral of alpha_n^2 dt.
    pub alpha_sq_dt: Vec<Complex64>,
    /// Integral of alpha_n conj(alpha_m) dt, row n, column m.
    pub cross_dt: DMatrix<Complex64>,
    /// alpha_n at the end of the record.
    pub final_alpha: Vec<Complex64>,
}

impl ExponentIntegrals {
    pub fn new(params: &PhysicalParams, model: &AmplitudeModel, record: &MeasurementRecord) -> Result<Self> {
        match model {
            AmplitudeModel::Steady => Ok(Self::steady(params, record.duration(), record.integrated())),
            AmplitudeModel::Transient(profile) => Self::transient(params, profile, record),
        }
    }

    /// Constant amplitudes: only the total time and integrated current matter.
    /// At t = 0 the cavity is still empty.
    pub fn steady(params: &PhysicalParams, t: f64, y: f64) -> Self {
        let alpha = AmplitudeSet::steady(params).alpha;
        let final_alpha = if t > 0.0 { alpha.clone() } else { vec![cr(0.0); alpha.len()] };
        let beta = params.beta.re;
        let d = alpha.len();
        Self {
            duration: t,
            alpha_dt: alpha.iter().map(|a| a * t).collect(),
            beta_alpha_dt: alpha.iter().map(|a| a * (beta * t)).collect(),
            alpha_dy: alpha.iter().map(|a| a * y).collect(),
            alpha_sq_dt: alpha.iter().map(|a| a * a * t).collect(),
            cross_dt: DMatrix::from_fn(d, d, |i, k| alpha[i] * alpha[k].conj() * t),
            final_alpha,
        }
    }

    /// Exact amplitudes along the record grid. The dy integrals use the
    /// step-averaged amplitude; beta is sampled at step midpoints.
    pub fn transient(params: &PhysicalParams, profile: &BetaProfile, record: &MeasurementRecord) -> Result<Self> {
        let big_j = params.big_j;
        let d = big_j.dim();
        let dt = record.dt;
        if !(dt > 0.0) && !record.is_empty() {
            return Err(Error::NonPositiveTime(dt));
        }
        let lambdas: Vec<Complex64> = big_j.levels().map(|n| decay_rate(params, n)).collect();
        let sk = params.kappa1.sqrt();

        let mut out = Self {
            duration: record.duration(),
            alpha_dt: vec![cr(0.0); d],
            beta_alpha_dt: vec![cr(0.0); d],
            alpha_dy: vec![cr(0.0); d],
            alpha_sq_dt: vec![cr(0.0); d],
            cross_dt: DMatrix::zeros(d, d),
            final_alpha: vec![cr(0.0); d],
        };
        let mut alpha = vec![cr(0.0); d];

        // Runs of steps sharing one beta value.
        let betas: Vec<f64> = (0..record.len())
            .map(|k| profile.value_at((k as f64 + 0.5) * dt))
            .collect();
        let mut k = 0;
        while k < record.len() {
            let beta = betas[k];
            let mut end = k + 1;
            while end < record.len() && betas[end] == beta {
                end += 1;
            }
            let tau = (end - k) as f64 * dt;
            let target: Vec<Complex64> = lambdas.iter().map(|l| cr(sk * beta) / l).collect();
            let offset: Vec<Complex64> = (0..d).map(|i| alpha[i] - target[i]).collect();

            // Deterministic integrals over the run, alpha = A + B exp(-lambda s).
            for i in 0..d {
                let (a, b, l) = (target[i], offset[i], lambdas[i]);
                let int = a * tau + b * decay_integral(l, tau);
                out.alpha_dt[i] += int;
                out.beta_alpha_dt[i] += int * beta;
                out.alpha_sq_dt[i] += a * a * tau + 2.0 * a * b * decay_integral(l, tau) + b * b * decay_integral(2.0 * l, tau);
            }
            for i in 0..d {
                let (ai, bi, li) = (target[i], offset[i], lambdas[i]);
                for m in 0..d {
                    let (am, bm, lm) = (target[m].conj(), offset[m].conj(), lambdas[m].conj());
                    out.cross_dt[(i, m)] += ai * am * tau
                        + ai * bm * decay_integral(lm, tau)
                        + bi * am * decay_integral(li, tau)
                        + bi * bm * decay_integral(li + lm, tau);
                }
            }

            // Stepwise dy sums.
            for i in 0..d {
                let l = lambdas[i];
                let step_decay = (-l * dt).exp();
                let step_mean = decay_integral(l, dt) / dt;
                let mut b = offset[i];
                let mut acc = cr(0.0);
                for dy in &record.increments[k..end] {
                    acc += (target[i] + b * step_mean) * *dy;
                    b *= step_decay;
                }
                out.alpha_dy[i] += acc;
                alpha[i] = target[i] + offset[i] * (-l * tau).exp();
            }
            k = end;
        }
        out.final_alpha = alpha;
        Ok(out)
    }

    /// Log of the weight of component (n, m) before normalisation, without the
    /// field overlap factor.
    pub fn log_weight(&self, params: &PhysicalParams, i: usize, m: usize) -> Complex64 {
        let kappa = params.kappa();
        let ek = params.eta * params.kappa1;
        let decoherence = self.cross_dt[(i, i)] + self.cross_dt[(m, m)] - 2.0 * self.cross_dt[(i, m)];
        let sum_sq = self.alpha_sq_dt[i] + 2.0 * self.cross_dt[(i, m)] + self.alpha_sq_dt[m].conj();
        let drive = self.beta_alpha_dt[i] - self.beta_alpha_dt[i].conj() - self.beta_alpha_dt[m]
            + self.beta_alpha_dt[m].conj();
        -0.5 * kappa * decoherence + ek.sqrt() * (self.alpha_dy[i] + self.alpha_dy[m].conj())
            - 0.5 * ek * sum_sq
            - 0.5 * params.kappa1.sqrt() * drive
    }

    /// Log of the overlap <alpha_m|alpha_n> of the final field amplitudes.
    pub fn log_overlap(&self, i: usize, m: usize) -> Complex64 {
        let (a, b) = (self.final_alpha[i], self.final_alpha[m]);
        -0.5 * (a.norm_sqr() + b.norm_sqr()) + a * b.conj()
    }

    /// Real log weight of the diagonal component q.
    pub fn log_diagonal(&self, params: &PhysicalParams, q: usize) -> f64 {
        let ek = params.eta * params.kappa1;
        let re_dy = 2.0 * self.alpha_dy[q].re;
        let re_sq = 2.0 * (self.alpha_sq_dt[q].re + self.cross_dt[(q, q)].re);
        ek.sqrt() * re_dy - 0.5 * ek * re_sq
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| *x > f64::NEG_INFINITY).collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_normaliser(params: &PhysicalParams, coeffs: &AtomicCoefficients, ints: &ExponentIntegrals) -> Result<f64> {
    let logs: Vec<f64> = (0..coeffs.big_j.dim())
        .map(|q| {
            let c = coeffs.c[(q, q)].re;
            if c > 0.0 {
                c.ln() + ints.log_diagonal(params, q)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_d = log_sum_exp(logs.into_iter());
    if !log_d.is_finite() {
        return Err(Error::DegenerateNormalisation { max_log_weight: max });
    }
    Ok(log_d)
}

fn check_real_beta(params: &PhysicalParams) -> Result<()> {
    if params.beta.im.abs() > 1e-12 * params.beta.norm().max(1e-300) {
        return Err(Error::InvalidParams(
            "the closed-form coherent solution requires a real probe amplitude".into(),
        ));
    }
    Ok(())
}

fn check_coeffs(params: &PhysicalParams, coeffs: &AtomicCoefficients) -> Result<()> {
    if coeffs.big_j != params.big_j {
        return Err(Error::InvalidParams(format!(
            "coefficients are for J = {}, parameters for J = {}",
            coeffs.big_j, params.big_j
        )));
    }
    check_real_beta(params)
}

/// Conditional atomic state after the record.
#[derive(Debug, Clone)]
pub struct ConditionalState {
    pub rho: AtomicDensityMatrix,
    /// Normalised diagonal weights, equal to the populations rho_qq.
    pub weights: Vec<f64>,
    pub amplitudes: AmplitudeSet,
}

/// Conditional reduced atomic state. With `probe_off_at_end` the field is
/// taken to have decayed to vacuum, so the overlap factor is dropped.
pub fn conditional_state(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    record: &MeasurementRecord,
    model: &AmplitudeModel,
    probe_off_at_end: bool,
) -> Result<ConditionalState> {
    check_coeffs(params, coeffs)?;
    let ints = ExponentIntegrals::new(params, model, record)?;
    let rho = state_from_integrals(params, coeffs, &ints, probe_off_at_end)?;
    let amplitudes = AmplitudeSet {
        big_j: params.big_j,
        alpha: ints.final_alpha.clone(),
        mode: match model {
            AmplitudeModel::Steady => AmplitudeTime::Steady,
            AmplitudeModel::Transient(_) => AmplitudeTime::Transient(ints.duration),
        },
    };
    Ok(ConditionalState {
        weights: rho.diagonal(),
        rho,
        amplitudes,
    })
}

/// Assembles the reduced state from precomputed integrals.
pub fn state_from_integrals(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    ints: &ExponentIntegrals,
    probe_off_at_end: bool,
) -> Result<AtomicDensityMatrix> {
    let log_d = log_normaliser(params, coeffs, ints)?;
    let d = coeffs.big_j.dim();
    let rho = DMatrix::from_fn(d, d, |i, m| {
        let c = coeffs.c[(i, m)];
        if c == cr(0.0) {
            return c;
        }
        let mut e = ints.log_weight(params, i, m) - log_d;
        if !probe_off_at_end {
            e += ints.log_overlap(i, m);
        }
        c * e.exp()
    });
    Ok(AtomicDensityMatrix {
        big_j: coeffs.big_j,
        rho,
    })
}

/// Purity Tr(rho_at^2) from the explicit real-exponent formula.
pub fn purity_full(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    record: &MeasurementRecord,
    model: &AmplitudeModel,
    probe_off_at_end: bool,
) -> Result<f64> {
    check_coeffs(params, coeffs)?;
    let ints = ExponentIntegrals::new(params, model, record)?;
    purity_from_integrals(params, coeffs, &ints, probe_off_at_end)
}

pub fn purity_from_integrals(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    ints: &ExponentIntegrals,
    probe_off_at_end: bool,
) -> Result<f64> {
    let log_d = log_normaliser(params, coeffs, ints)?;
    let d = coeffs.big_j.dim();
    let kappa = params.kappa();
    let ek = params.eta * params.kappa1;
    let mut terms = Vec::with_capacity(d * d);
    for i in 0..d {
        for m in 0..d {
            let c2 = coeffs.c[(i, m)].norm_sqr();
            if c2 == 0.0 {
                continue;
            }
            let dist_dt = (ints.cross_dt[(i, i)] + ints.cross_dt[(m, m)] - 2.0 * ints.cross_dt[(i, m)]).re;
            let re_sq = |q: usize| 2.0 * (ints.alpha_sq_dt[q].re + ints.cross_dt[(q, q)].re);
            let mut e = -(kappa - ek) * dist_dt
                + ek.sqrt() * 2.0 * (ints.alpha_dy[i].re + ints.alpha_dy[m].re)
                - 0.5 * ek * (re_sq(i) + re_sq(m));
            if !probe_off_at_end {
                e -= (ints.final_alpha[i] - ints.final_alpha[m]).norm_sqr();
            }
            terms.push(c2.ln() + e - 2.0 * log_d);
        }
    }
    Ok(log_sum_exp(terms.into_iter()).exp())
}

/// Purity of an initially equal superposition of |n> and |-n> in the steady regime.
pub fn purity_two_state(params: &PhysicalParams, n: f64, t: f64) -> f64 {
    let k = params.kappa();
    let gt = params.g_tilde();
    let beta2 = params.beta.norm_sqr();
    let den = (k / 2.0).powi(2) + n * n * gt * gt;
    let rate = 4.0 * params.kappa1 * beta2 * n * n * gt * gt / (den * den);
    0.5 * (1.0 + (-rate * ((k - params.eta * params.kappa1) * t + 1.0)).exp())
}

/// Distribution of the integrated current Y in the steady regime: a mixture
/// of unit-variance-per-time Gaussians, one per level.
#[derive(Debug, Clone, PartialEq)]
pub struct YDistribution {
    pub t: f64,
    /// (weight, mean) per level.
    pub components: Vec<(f64, f64)>,
}

impl YDistribution {
    pub fn pdf(&self, y: f64) -> f64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * self.t).sqrt();
        self.components
            .iter()
            .map(|(w, mu)| w * norm * (-(y - mu).powi(2) / (2.0 * self.t)).exp())
            .sum()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let s = (2.0 * self.t).sqrt();
        self.components
            .iter()
            .map(|(w, mu)| w * 0.5 * libm::erfc(-(y - mu) / s))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|(w, mu)| w * mu).sum()
    }

    /// Range containing all components to `sigmas` standard deviations.
    pub fn support(&self, sigmas: f64) -> (f64, f64) {
        let sd = self.t.sqrt();
        let lo = self.components.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        (lo - sigmas * sd, hi + sigmas * sd)
    }
}

pub fn record_probability_y(params: &PhysicalParams, coeffs: &AtomicCoefficients, t: f64) -> Result<YDistribution> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    check_coeffs(params, coeffs)?;
    let amp = AmplitudeSet::steady(params);
    let gain = 2.0 * (params.eta * params.kappa1).sqrt() * t;
    Ok(YDistribution {
        t,
        components: coeffs
            .diagonal()
            .into_iter()
            .zip(&amp.alpha)
            .map(|(w, a)| (w, gain * a.re))
            .collect(),
    })
}

/// Draws a record of `round(t / dt)` increments with steady amplitudes. The
/// record density depends on the initial state only through its diagonal, so
/// drawing the level first and then Gaussian increments is exact.
pub fn sample_record(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    t: f64,
    dt: f64,
    rng_seed: u64,
) -> Result<MeasurementRecord> {
    check_coeffs(params, coeffs)?;
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTime(dt));
    }
    let steps = (t / dt).round();
    if steps < 1.0 || (steps * dt - t).abs() > 1e-9 * t {
        return Err(Error::InvalidParams(format!("dt = {dt:e} does not divide t = {t:e}")));
    }
    let mut rng = trajectory_rng(rng_seed, 0);
    let q = sample_level(&coeffs.diagonal(), rng.random::<f64>());
    let alpha = alpha_steady(params, params.big_j.n(q));
    let drift = 2.0 * (params.eta * params.kappa1).sqrt() * alpha.re * dt;
    let increments = wiener_increments(&mut rng, dt, steps as usize)
        .into_iter()
        .map(|dw| drift + dw)
        .collect();
    Ok(MeasurementRecord::new(dt, increments).with_seed(rng_seed))
}

/// Draws a record of `round(t / dt)` increments with transient amplitudes
/// under `profile`, starting from the empty cavity. Each increment carries
/// the step-averaged amplitude of the drawn level, matching
/// `ExponentIntegrals::transient`.
pub fn sample_record_transient(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    profile: &BetaProfile,
    t: f64,
    dt: f64,
    rng_seed: u64,
) -> Result<MeasurementRecord> {
    check_coeffs(params, coeffs)?;
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTime(dt));
    }
    let steps = (t / dt).round() as usize;
    if steps < 1 {
        return Err(Error::InvalidParams(format!("dt = {dt:e} exceeds t = {t:e}")));
    }
    let mut rng = trajectory_rng(rng_seed, 0);
    let q = sample_level(&coeffs.diagonal(), rng.random::<f64>());
    let lambda = decay_rate(params, params.big_j.n(q));
    let step_decay = (-lambda * dt).exp();
    let step_mean = decay_integral(lambda, dt) / dt;
    let gain = 2.0 * (params.eta * params.kappa1).sqrt() * dt;
    let sk = params.kappa1.sqrt();
    let mut alpha = cr(0.0);
    let increments = wiener_increments(&mut rng, dt, steps)
        .into_iter()
        .enumerate()
        .map(|(k, dw)| {
            let target = cr(sk * profile.value_at((k as f64 + 0.5) * dt)) / lambda;
            let mean = target + (alpha - target) * step_mean;
            alpha = target + (alpha - target) * step_decay;
            gain * mean.re + dw
        })
        .collect();
    Ok(MeasurementRecord::new(dt, increments).with_seed(rng_seed))
}

/// Records for seeds `base_seed + k`, k < count.
pub fn sample_records(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    t: f64,
    dt: f64,
    base_seed: u64,
    count: usize,
    exec: Exec,
) -> Result<Vec<MeasurementRecord>> {
    map_range(exec, count, |k| sample_record(params, coeffs, t, dt, base_seed.wrapping_add(k as u64)))
        .into_iter()
        .collect()
}

fn sample_level(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w.max(0.0) / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Most probable |n| from the large-N Gaussian approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub n_p: f64,
    /// No interior maximum: the distribution peaks at n = 0.
    pub single_peaked: bool,
}

/// Peak position of the conditional population for integrated current `y`.
///
/// With x = 1 + b n^2 / N the log population is
/// f(x) = -2 (x - 1) / b + 2 a y / x - 2 a^2 t / x^2, stationary where
/// x^3 + a b y x - 2 a^2 b t = 0.
pub fn peak_estimate(params: &PhysicalParams, t: f64, y: f64) -> Result<PeakEstimate> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    check_real_beta(params)?;
    let k = params.kappa();
    let n_atoms = params.big_j.atoms();
    let a = (params.eta * params.kappa1).sqrt() * 2.0 * params.kappa1.sqrt() * params.beta.re / k;
    let b = 4.0 * params.g_tilde().powi(2) * n_atoms / (k * k);
    if !(b > 0.0) || a == 0.0 {
        return Ok(PeakEstimate {
            n_p: 0.0,
            single_peaked: true,
        });
    }
    let f = |x: f64| -2.0 * (x - 1.0) / b + 2.0 * a * y / x - 2.0 * a * a * t / (x * x);
    let roots = if y == 0.0 {
        vec![(2.0 * a * a * b * t).cbrt()]
    } else {
        cubic_roots(a * b * y, -2.0 * a * a * b * t)
    };
    let best = roots
        .into_iter()
        .filter(|x| *x > 1.0)
        .fold(None::<f64>, |acc, x| match acc {
            Some(p) if f(p) >= f(x) => Some(p),
            _ => Some(x),
        });
    Ok(match best {
        Some(x) if f(x) > f(1.0) => PeakEstimate {
            n_p: (n_atoms * (x - 1.0) / b).sqrt(),
            single_peaked: false,
        },
        _ => PeakEstimate {
            n_p: 0.0,
            single_peaked: true,
        },
    })
}

/// Real roots of x^3 + p x + q = 0, Newton-polished.
fn cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let raw = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = if r > 0.0 { (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0) } else { 0.0 };
        let th = arg.acos() / 3.0;
        (0..3)
            .map(|k| 2.0 * r * (th - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    };
    raw.into_iter()
        .map(|mut x| {
            for _ in 0..3 {
                let d = 3.0 * x * x + p;
                if d != 0.0 {
                    x -= (x * x * x + p * x + q) / d;
                }
            }
            x
        })
        .collect()
}

/// Unconditional state (average over records), identical to an eta = 0 run.
pub fn unconditional_state(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    t: f64,
    probe_off_at_end: bool,
) -> Result<AtomicDensityMatrix> {
    let mut p = *params;
    p.eta = 0.0;
    check_coeffs(&p, coeffs)?;
    let ints = ExponentIntegrals::steady(&p, t, 0.0);
    state_from_integrals(&p, coeffs, &ints, probe_off_at_end)
}
