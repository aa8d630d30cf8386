//! Observables of a reduced atomic state and reductions over trajectory batches.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::params::TotalSpin;
use crate::spin::{log_css_amplitude, AtomicDensityMatrix};

/// Location of the nonnegative peak of the population distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSummary {
    /// Sub-grid peak position from a parabola through the discrete maximum.
    pub d_over_2: f64,
    pub d: f64,
    /// Peak position on the integer/half-integer grid.
    pub d_over_2_discrete: f64,
    pub single_peaked: bool,
    pub peak_height: f64,
}

/// Largest-population level with n >= 0; ties go to the smaller |n|.
pub fn diagonal_argmax(big_j: TotalSpin, diag: &[f64]) -> usize {
    let mut best = None::<usize>;
    for i in 0..diag.len() {
        if big_j.n(i) < 0.0 {
            continue;
        }
        match best {
            Some(b) if diag[b] >= diag[i] => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(0)
}

pub fn peak_summary(rho: &AtomicDensityMatrix) -> PeakSummary {
    peak_summary_of_diagonal(rho.big_j, &rho.diagonal())
}

pub fn peak_summary_of_diagonal(big_j: TotalSpin, diag: &[f64]) -> PeakSummary {
    let k = diagonal_argmax(big_j, diag);
    let nk = big_j.n(k);
    let height = diag[k];
    let last = diag.len() - 1;

    let mut pos = nk;
    if k > 0 && k < last {
        let (ym, y0, yp) = (diag[k - 1], diag[k], diag[k + 1]);
        let curv = ym - 2.0 * y0 + yp;
        if curv < 0.0 {
            pos = nk + 0.5 * (ym - yp) / curv;
        }
    }
    let pos = pos.clamp(0.0, big_j.j());

    let interior_max = (1..last).any(|i| {
        let n = big_j.n(i);
        n > 0.5 && diag[i] > diag[i - 1] && diag[i] >= diag[i + 1]
    });
    let single_peaked = nk <= 0.5 && !interior_max;

    PeakSummary {
        d_over_2: pos,
        d: 2.0 * pos,
        d_over_2_discrete: nk,
        single_peaked,
        peak_height: height,
    }
}

/// Spin Q-function on a Gauss-Legendre grid in cos(theta) times a uniform phi
/// grid. `values[i][j]` belongs to `theta[i]`, `phi[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunctionGrid {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Quadrature weights in cos(theta), so that sin(theta) dtheta is absorbed.
    pub theta_weights: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl QFunctionGrid {
    /// Integral of Q over the sphere.
    pub fn integral(&self) -> f64 {
        let dphi = 2.0 * std::f64::consts::PI / self.phi.len() as f64;
        self.values
            .iter()
            .zip(&self.theta_weights)
            .map(|(row, w)| w * dphi * row.iter().sum::<f64>())
            .sum()
    }

    pub fn max_location(&self) -> (f64, f64, f64) {
        let mut best = (0.0, 0.0, f64::NEG_INFINITY);
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v > best.2 {
                    best = (self.theta[i], self.phi[j], *v);
                }
            }
        }
        best
    }
}

/// Jz-basis amplitudes of the spin coherent state pointing along (theta, phi).
pub fn spin_coherent_amplitudes(big_j: TotalSpin, theta: f64, phi: f64) -> Vec<Complex64> {
    let j = big_j.j();
    let (lc, ls) = ((theta / 2.0).cos().abs().ln(), (theta / 2.0).sin().abs().ln());
    let pow = |e: f64, l: f64| if e == 0.0 { 0.0 } else { e * l };
    big_j
        .levels()
        .map(|n| {
            // sqrt(C(2J, J+n)) = amplitude of the x state times 2^J
            let log_binom = log_css_amplitude(big_j, n) + j * std::f64::consts::LN_2;
            let log_mod = log_binom + pow(j + n, lc) + pow(j - n, ls);
            Complex64::from_polar(log_mod.exp(), (j - n) * phi)
        })
        .collect()
}

/// Q(theta, phi) = (2J+1)/(4 pi) <theta, phi| rho |theta, phi>.
pub fn spin_q_function(rho: &AtomicDensityMatrix, n_theta: usize, n_phi: usize) -> QFunctionGrid {
    let rule = GaussLegendre::new(NonZeroUsize::new(n_theta.max(1)).expect("nonzero"));
    let pairs = rule.as_node_weight_pairs();
    let theta: Vec<f64> = pairs.iter().map(|(x, _)| x.acos()).collect();
    let theta_weights: Vec<f64> = pairs.iter().map(|(_, w)| *w).collect();
    let n_phi = n_phi.max(1);
    let phi: Vec<f64> = (0..n_phi)
        .map(|j| 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64)
        .collect();
    let pref = (rho.big_j.dim() as f64) / (4.0 * std::f64::consts::PI);
    let values = theta
        .iter()
        .map(|&th| {
            phi.iter()
                .map(|&ph| {
                    let c = nalgebra::DVector::from_vec(spin_coherent_amplitudes(rho.big_j, th, ph));
                    let v = (c.adjoint() * &rho.rho * &c)[(0, 0)].re;
                    (pref * v).max(0.0)
                })
                .collect()
        })
        .collect();
    QFunctionGrid {
        theta,
        phi,
        theta_weights,
        values,
    }
}

/// One trajectory's end state reduced to scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: usize,
    pub seed: u64,
    /// Integrated current over the probing window, when recorded.
    pub y: Option<f64>,
    pub purity: f64,
    pub peak: PeakSummary,
}

impl TrajectorySummary {
    pub fn from_state(index: usize, seed: u64, y: Option<f64>, rho: &AtomicDensityMatrix) -> Self {
        Self {
            index,
            seed,
            y,
            purity: rho.purity(),
            peak: peak_summary(rho),
        }
    }
}

/// A labelled batch of trajectories sharing probe settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub epsilon: Complex64,
    pub beta: Complex64,
    pub rows: Vec<TrajectorySummary>,
}

/// Scatter-plot reduction of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub label: String,
    pub epsilon: Complex64,
    pub beta: Complex64,
    pub seed_range: (u64, u64),
    /// (d/2, purity) per trajectory.
    pub points: Vec<(f64, f64)>,
    pub median_purity: f64,
    pub min_purity: f64,
    pub median_d_over_2: f64,
    pub double_peaked_fraction: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn histogram_summaries(series: &[Series]) -> Vec<SeriesSummary> {
    series
        .iter()
        .filter(|s| !s.rows.is_empty())
        .map(|s| {
            let purities: Vec<f64> = s.rows.iter().map(|r| r.purity).collect();
            let halves: Vec<f64> = s.rows.iter().map(|r| r.peak.d_over_2).collect();
            let seeds = s.rows.iter().map(|r| r.seed);
            let double = s.rows.iter().filter(|r| !r.peak.single_peaked).count();
            SeriesSummary {
                label: s.label.clone(),
                epsilon: s.epsilon,
                beta: s.beta,
                seed_range: (seeds.clone().min().unwrap_or(0), seeds.max().unwrap_or(0)),
                points: halves.iter().cloned().zip(purities.iter().cloned()).collect(),
                median_purity: median(&purities),
                min_purity: purities.iter().cloned().fold(f64::INFINITY, f64::min),
                median_d_over_2: median(&halves),
                double_peaked_fraction: double as f64 / s.rows.len() as f64,
            }
        })
        .collect()
}

/// Mean purity per Y bin: (bin centre, mean purity, count); empty bins dropped.
pub fn bin_purity_by_y(rows: &[TrajectorySummary], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut acc = vec![(0.0, 0usize); bins];
    for r in rows {
        let Some(y) = r.y else { continue };
        if y < lo || y >= hi {
            continue;
        }
        let b = (((y - lo) / width) as usize).min(bins - 1);
        acc[b].0 += r.purity;
        acc[b].1 += 1;
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(b, (s, c))| (lo + (b as f64 + 0.5) * width, s / c as f64, c))
        .collect()
}
