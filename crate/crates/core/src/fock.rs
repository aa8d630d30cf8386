//! Brute-force integration of the cascaded stochastic master equation on a
//! truncated basis `|n> (x) |k1> (x) |k2>`. Used only to validate the other
//! integrators at small `J`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{PhysicalParams, TotalSpin};
use crate::record::{trajectory_rng, wiener_increments, MeasurementRecord};
use crate::spin::{AtomicCoefficients, AtomicDensityMatrix};

type C = Complex64;
const I: C = C::new(0.0, 1.0);

fn re(x: f64) -> C {
    C::new(x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub n1: usize,
    pub n2: usize,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self { n1: 12, n2: 12 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Basis {
    atoms: usize,
    n1: usize,
    n2: usize,
}

impl Basis {
    fn dim(&self) -> usize {
        self.atoms * self.n1 * self.n2
    }

    fn index(&self, q: usize, k1: usize, k2: usize) -> usize {
        (q * self.n1 + k1) * self.n2 + k2
    }

    fn states(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.atoms).flat_map(move |q| (0..self.n1).flat_map(move |k1| (0..self.n2).map(move |k2| (q, k1, k2))))
    }
}

/// `m <- m + m^dag` in place.
fn add_adjoint(m: &mut DMatrix<C>) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..j {
            let (x, y) = (m[(i, j)], m[(j, i)]);
            m[(i, j)] = x + y.conj();
            m[(j, i)] = y + x.conj();
        }
        m[(j, j)] = re(2.0 * m[(j, j)].re);
    }
}

/// Sparse operator stored as `(row, column, value)` triplets.
#[derive(Debug, Clone)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, C)>,
}

impl SparseOp {
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, C)>) -> Self {
        let mut merged: BTreeMap<(usize, usize), C> = BTreeMap::new();
        for (r, c, v) in triplets {
            *merged.entry((r, c)).or_insert(re(0.0)) += v;
        }
        let entries = merged.into_iter().filter(|(_, v)| v.norm() > 0.0).map(|((r, c), v)| (r, c, v)).collect();
        Self { dim, entries }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.entries.iter().map(|&(r, c, v)| (c, r, v.conj())))
    }

    pub fn scaled(&self, s: C) -> Self {
        Self::from_triplets(self.dim, self.entries.iter().map(|&(r, c, v)| (r, c, v * s)))
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self::from_triplets(self.dim, self.entries.iter().chain(&other.entries).copied())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut rows: Vec<Vec<(usize, C)>> = vec![Vec::new(); self.dim];
        for &(r, c, v) in &other.entries {
            rows[r].push((c, v));
        }
        let prod = self
            .entries
            .iter()
            .flat_map(|&(r, k, v)| rows[k].iter().map(move |&(c, w)| (r, c, v * w)));
        Self::from_triplets(self.dim, prod.collect::<Vec<_>>())
    }

    pub fn to_dense(&self) -> DMatrix<C> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// `out += self * rho`
    pub fn left_acc(&self, rho: &DMatrix<C>, out: &mut DMatrix<C>) {
        let d = self.dim;
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for j in 0..d {
            let (s, t) = (&src[j * d..(j + 1) * d], &mut dst[j * d..(j + 1) * d]);
            for &(r, c, v) in &self.entries {
                t[r] += v * s[c];
            }
        }
    }

    /// `out += rho * self`
    pub fn right_acc(&self, rho: &DMatrix<C>, out: &mut DMatrix<C>) {
        let d = self.dim;
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for &(r, c, v) in &self.entries {
            let col_in = &src[r * d..(r + 1) * d];
            let col_out = &mut dst[c * d..(c + 1) * d];
            for (o, x) in col_out.iter_mut().zip(col_in) {
                *o += v * x;
            }
        }
    }

    /// `out += s * rho * self`
    pub fn right_acc_scaled(&self, rho: &DMatrix<C>, out: &mut DMatrix<C>, s: C) {
        let d = self.dim;
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for &(r, c, v) in &self.entries {
            let w = v * s;
            let col_in = &src[r * d..(r + 1) * d];
            let col_out = &mut dst[c * d..(c + 1) * d];
            for (o, x) in col_out.iter_mut().zip(col_in) {
                *o += w * x;
            }
        }
    }

    pub fn left(&self, rho: &DMatrix<C>) -> DMatrix<C> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.left_acc(rho, &mut out);
        out
    }

    pub fn right(&self, rho: &DMatrix<C>) -> DMatrix<C> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.right_acc(rho, &mut out);
        out
    }

    /// `Tr(self * rho)`
    pub fn expectation(&self, rho: &DMatrix<C>) -> C {
        self.entries.iter().map(|&(r, c, v)| v * rho[(c, r)]).sum()
    }
}

/// A term `coeff * L rho R` of the deterministic generator.
#[derive(Debug, Clone)]
pub struct Sandwich {
    pub coeff: C,
    pub left: SparseOp,
    pub right: SparseOp,
    left_adj: SparseOp,
    right_adj: SparseOp,
}

impl Sandwich {
    fn new(coeff: C, left: &SparseOp, right: &SparseOp) -> Self {
        Self {
            coeff,
            left_adj: left.adjoint(),
            right_adj: right.adjoint(),
            left: left.clone(),
            right: right.clone(),
        }
    }
}

/// Operators of the truncated problem.
///
/// The deterministic part is `G rho + rho G^dag + sum_k coeff_k L_k rho R_k`,
/// where `G` collects the Hamiltonian, squeezing, damping, cascade and drive
/// terms acting from one side. The measurement superoperator is
/// `M rho + rho M^dag` with `M = -sqrt(eta) e^{-i phi} (sqrt(kappa1) a - i sqrt(kappa2) c)`.
#[derive(Debug, Clone)]
pub struct Generators {
    pub big_j: TotalSpin,
    pub cutoffs: Cutoffs,
    pub a: SparseOp,
    pub c: SparseOp,
    pub hamiltonian: SparseOp,
    pub g: SparseOp,
    pub g_adj: SparseOp,
    pub sandwiches: Vec<Sandwich>,
    pub m: SparseOp,
    pub m_adj: SparseOp,
}

pub fn build_generators(params: &PhysicalParams, cutoffs: Cutoffs) -> Result<Generators> {
    if cutoffs.n1 < 2 || cutoffs.n2 < 2 {
        return Err(Error::InvalidParams("Fock cutoffs must be at least 2".into()));
    }
    let j = params.big_j;
    let basis = Basis {
        atoms: j.dim(),
        n1: cutoffs.n1,
        n2: cutoffs.n2,
    };
    let dim = basis.dim();
    let a = SparseOp::from_triplets(
        dim,
        basis
            .states()
            .filter(|s| s.1 > 0)
            .map(|(q, k1, k2)| (basis.index(q, k1 - 1, k2), basis.index(q, k1, k2), re((k1 as f64).sqrt())))
            .collect::<Vec<_>>(),
    );
    let c = SparseOp::from_triplets(
        dim,
        basis
            .states()
            .filter(|s| s.2 > 0)
            .map(|(q, k1, k2)| (basis.index(q, k1, k2 - 1), basis.index(q, k1, k2), re((k2 as f64).sqrt())))
            .collect::<Vec<_>>(),
    );
    let (ad, cd) = (a.adjoint(), c.adjoint());
    let na = ad.mul(&a);
    let nc = cd.mul(&c);
    let hamiltonian = SparseOp::from_triplets(
        dim,
        basis
            .states()
            .map(|(q, k1, k2)| {
                let i = basis.index(q, k1, k2);
                (i, i, re(params.g_tilde() * j.n(q) * k1 as f64))
            })
            .collect::<Vec<_>>(),
    );
    let eps = params.epsilon;
    let squeeze = cd.mul(&cd).scaled(eps).plus(&c.mul(&c).scaled(eps.conj()));
    let (k1, k2) = (params.kappa1, params.kappa2);
    let casc = I * (k1 * k2).sqrt();
    let beta = params.beta;
    let drive = ad
        .scaled(I * k1.sqrt() * beta)
        .plus(&a.scaled(I * k1.sqrt() * beta.conj()))
        .plus(&cd.scaled(-k2.sqrt() * beta))
        .plus(&c.scaled(k2.sqrt() * beta.conj()));

    let g = hamiltonian
        .scaled(-I)
        .plus(&squeeze.scaled(-0.5 * I))
        .plus(&na.scaled(re(-0.5 * params.kappa())))
        .plus(&nc.scaled(re(-0.5 * params.kappa2_total())))
        .plus(&ad.mul(&c).scaled(casc))
        .plus(&drive);

    let sandwiches = vec![
        Sandwich::new(re(params.kappa()), &a, &ad),
        Sandwich::new(re(params.kappa2_total()), &c, &cd),
        Sandwich::new(casc, &a, &cd),
        Sandwich::new(-casc, &c, &ad),
    ]
    .into_iter()
    .filter(|s| s.coeff.norm() > 0.0)
    .collect();

    let phase = C::from_polar(1.0, -params.phi);
    let m = a
        .scaled(re(k1.sqrt()))
        .plus(&c.scaled(-I * k2.sqrt()))
        .scaled(-params.eta.sqrt() * phase);
    Ok(Generators {
        big_j: j,
        cutoffs,
        g_adj: g.adjoint(),
        m_adj: m.adjoint(),
        a,
        c,
        hamiltonian,
        g,
        sandwiches,
        m,
    })
}

impl Generators {
    pub fn dim(&self) -> usize {
        self.a.dim
    }

    /// Deterministic part applied to `rho`.
    pub fn lindblad(&self, rho: &DMatrix<C>) -> DMatrix<C> {
        let mut out = self.g.left(rho);
        self.g_adj.right_acc(rho, &mut out);
        for s in &self.sandwiches {
            let x = s.left.left(rho);
            let mut y = DMatrix::zeros(self.dim(), self.dim());
            s.right.right_acc(&x, &mut y);
            out += y * s.coeff;
        }
        out
    }

    /// Deterministic part for Hermitian `rho`, written into `out`. The
    /// generator maps Hermitian matrices to Hermitian matrices, so half of it
    /// plus its adjoint gives the whole.
    pub fn lindblad_hermitian_into(&self, rho: &DMatrix<C>, out: &mut DMatrix<C>, tmp: &mut DMatrix<C>) {
        // Built as the adjoint half rho G^dag + sum c^*/2 (R^dag rho) L^dag, which
        // needs only column-streaming right products and cheap left products.
        out.fill(re(0.0));
        self.g_adj.right_acc(rho, out);
        for s in &self.sandwiches {
            tmp.fill(re(0.0));
            s.right_adj.left_acc(rho, tmp);
            s.left_adj.right_acc_scaled(tmp, out, s.coeff.conj() * 0.5);
        }
        add_adjoint(out);
    }

    /// Innovation term `B rho - Tr(B rho) rho` for Hermitian `rho`.
    pub fn diffusion_hermitian_into(&self, rho: &DMatrix<C>, out: &mut DMatrix<C>) {
        out.fill(re(0.0));
        self.m_adj.right_acc(rho, out);
        let tr = self.m.expectation(rho).re;
        for (o, r) in out.iter_mut().zip(rho.iter()) {
            *o -= r * tr;
        }
        add_adjoint(out);
    }

    /// `M rho + rho M^dag`.
    pub fn measurement(&self, rho: &DMatrix<C>) -> DMatrix<C> {
        let mut out = self.m.left(rho);
        self.m_adj.right_acc(rho, &mut out);
        out
    }

    /// Conditional expectation of the homodyne signal.
    pub fn signal(&self, rho: &DMatrix<C>) -> f64 {
        (self.m.expectation(rho) + self.m_adj.expectation(rho)).re
    }
}

/// Joint state of atoms and both cavity modes.
#[derive(Debug, Clone)]
pub struct TruncatedState {
    pub big_j: TotalSpin,
    pub cutoffs: Cutoffs,
    pub rho: DMatrix<C>,
}

impl TruncatedState {
    /// `rho_at (x) |0><0| (x) |0><0|`.
    pub fn with_vacuum_fields(atoms: &AtomicDensityMatrix, cutoffs: Cutoffs) -> Self {
        let basis = Basis {
            atoms: atoms.big_j.dim(),
            n1: cutoffs.n1,
            n2: cutoffs.n2,
        };
        let d = basis.dim();
        let mut rho = DMatrix::zeros(d, d);
        for q in 0..basis.atoms {
            for p in 0..basis.atoms {
                rho[(basis.index(q, 0, 0), basis.index(p, 0, 0))] = atoms.rho[(q, p)];
            }
        }
        Self {
            big_j: atoms.big_j,
            cutoffs,
            rho,
        }
    }

    fn basis(&self) -> Basis {
        Basis {
            atoms: self.big_j.dim(),
            n1: self.cutoffs.n1,
            n2: self.cutoffs.n2,
        }
    }

    /// Partial trace over both cavity modes.
    pub fn atomic_state(&self) -> AtomicDensityMatrix {
        let b = self.basis();
        let rho = DMatrix::from_fn(b.atoms, b.atoms, |q, p| {
            let mut s = re(0.0);
            for k1 in 0..b.n1 {
                for k2 in 0..b.n2 {
                    s += self.rho[(b.index(q, k1, k2), b.index(p, k1, k2))];
                }
            }
            s
        });
        AtomicDensityMatrix { big_j: self.big_j, rho }
    }

    /// Population of the highest retained Fock level of either mode.
    pub fn top_layer_population(&self) -> f64 {
        let b = self.basis();
        b.states()
            .filter(|&(_, k1, k2)| k1 == b.n1 - 1 || k2 == b.n2 - 1)
            .map(|(q, k1, k2)| {
                let i = b.index(q, k1, k2);
                self.rho[(i, i)].re
            })
            .sum()
    }

    /// Population of cavity-2 Fock levels above zero.
    pub fn mode2_excitation(&self) -> f64 {
        let b = self.basis();
        b.states()
            .filter(|&(_, _, k2)| k2 > 0)
            .map(|(q, k1, k2)| {
                let i = b.index(q, k1, k2);
                self.rho[(i, i)].re
            })
            .sum()
    }

    /// `<op>` conditioned on the atoms being in level `q`.
    pub fn conditional_expectation(&self, op: &SparseOp, q: usize) -> C {
        let b = self.basis();
        let mut num = re(0.0);
        let mut den = 0.0;
        for &(r, c, v) in &op.entries {
            if r / (b.n1 * b.n2) == q && c / (b.n1 * b.n2) == q {
                num += v * self.rho[(c, r)];
            }
        }
        for k1 in 0..b.n1 {
            for k2 in 0..b.n2 {
                let i = b.index(q, k1, k2);
                den += self.rho[(i, i)].re;
            }
        }
        num / den
    }

    pub fn trace(&self) -> C {
        self.rho.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.rho.clone().symmetric_eigenvalues().min()
    }
}

/// Noise driving the oracle.
#[derive(Debug, Clone, Copy)]
pub enum Drive<'a> {
    /// Innovations `dW`; the increments `dy` are generated.
    Innovations(&'a [f64]),
    /// Measured increments `dy` to be replayed.
    Record(&'a [f64]),
}

impl Drive<'_> {
    fn len(&self) -> usize {
        match self {
            Drive::Innovations(x) | Drive::Record(x) => x.len(),
        }
    }
}

/// Diagnostics accumulated during an integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub max_trace_drift: f64,
    pub max_hermitian_correction: f64,
    pub max_top_population: f64,
}

/// Buffers of one predictor-corrector step.
struct Workspace {
    a: DMatrix<C>,
    b: DMatrix<C>,
    x1: DMatrix<C>,
    x2: DMatrix<C>,
    b_up: DMatrix<C>,
    b_lo: DMatrix<C>,
    noise: DMatrix<C>,
    tmp: DMatrix<C>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        let z = || DMatrix::zeros(d, d);
        Self { a: z(), b: z(), x1: z(), x2: z(), b_up: z(), b_lo: z(), noise: z(), tmp: z() }
    }

    /// Derivative-free predictor-corrector step (see [`crate::sde::predictor_corrector`]).
    fn step(&mut self, gens: &Generators, rho: &mut DMatrix<C>, dt: f64, dw: f64) {
        let sq = dt.sqrt();
        gens.lindblad_hermitian_into(rho, &mut self.a, &mut self.tmp);
        gens.diffusion_hermitian_into(rho, &mut self.b);

        combine(&mut self.x1, rho, &[(dt, &self.a), (sq, &self.b)]);
        combine(&mut self.x2, rho, &[(dt, &self.a), (-sq, &self.b)]);
        gens.diffusion_hermitian_into(&self.x1, &mut self.b_up);
        gens.diffusion_hermitian_into(&self.x2, &mut self.b_lo);
        let mil = 0.25 * (dw * dw - dt) / sq;
        combine_from_zero(
            &mut self.noise,
            &[(0.25 * dw + mil, &self.b_up), (0.25 * dw - mil, &self.b_lo), (0.5 * dw, &self.b)],
        );

        combine(&mut self.x1, rho, &[(dt, &self.a), (dw, &self.b)]);
        gens.lindblad_hermitian_into(&self.x1, &mut self.x2, &mut self.tmp);
        combine(&mut self.x1, rho, &[(1.0, &self.noise), (0.5 * dt, &self.x2), (0.5 * dt, &self.a)]);
        gens.lindblad_hermitian_into(&self.x1, &mut self.x2, &mut self.tmp);
        let next = &mut self.x1;
        combine(next, rho, &[(1.0, &self.noise), (0.5 * dt, &self.x2), (0.5 * dt, &self.a)]);
        std::mem::swap(rho, next);
    }
}

fn combine(out: &mut DMatrix<C>, base: &DMatrix<C>, terms: &[(f64, &DMatrix<C>)]) {
    out.copy_from(base);
    for (c, m) in terms {
        for (o, x) in out.iter_mut().zip(m.iter()) {
            *o += x * *c;
        }
    }
}

fn combine_from_zero(out: &mut DMatrix<C>, terms: &[(f64, &DMatrix<C>)]) {
    out.fill(re(0.0));
    for (c, m) in terms {
        for (o, x) in out.iter_mut().zip(m.iter()) {
            *o += x * *c;
        }
    }
}

/// Largest `dt * rate` accepted by [`integrate`].
pub const ORACLE_STEP_LIMIT: f64 = 0.005;

/// Integrates the master equation with the derivative-free predictor-corrector
/// scheme, renormalising the trace and symmetrising after every step.
pub fn integrate(
    state: &mut TruncatedState,
    gens: &Generators,
    params: &PhysicalParams,
    drive: Drive<'_>,
    dt: f64,
) -> Result<(MeasurementRecord, OracleDiagnostics)> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTime(dt));
    }
    let rate = params.max_rate().max(params.g_tilde().abs() * params.big_j.j());
    if dt * rate > ORACLE_STEP_LIMIT * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge {
            dt,
            bound: ORACLE_STEP_LIMIT / rate,
        });
    }
    let mut ws = Workspace::new(gens.dim());
    let mut record = MeasurementRecord::empty(dt);
    let mut diag = OracleDiagnostics::default();
    for step in 0..drive.len() {
        let signal = gens.signal(&state.rho);
        let (dw, dy) = match drive {
            Drive::Innovations(w) => (w[step], w[step] + signal * dt),
            Drive::Record(y) => (y[step] - signal * dt, y[step]),
        };
        ws.step(gens, &mut state.rho, dt, dw);
        let rho = &mut state.rho;
        let tr = rho.trace();
        let drift = (tr - 1.0).norm();
        diag.max_trace_drift = diag.max_trace_drift.max(drift);
        if drift > 1e-6 {
            return Err(Error::TraceDrift { step, drift });
        }
        *rho /= tr;
        let mut correction: f64 = 0.0;
        let d = rho.nrows();
        for j in 0..d {
            for i in 0..=j {
                let (x, y) = (rho[(i, j)], rho[(j, i)]);
                let mean = (x + y.conj()) * 0.5;
                correction = correction.max((mean - x).norm());
                rho[(i, j)] = mean;
                rho[(j, i)] = mean.conj();
            }
        }
        diag.max_hermitian_correction = diag.max_hermitian_correction.max(correction);
        record.push(dy);
        if step % 100 == 99 || step + 1 == drive.len() {
            let top = state.top_layer_population();
            diag.max_top_population = diag.max_top_population.max(top);
            if top > 1e-6 {
                return Err(Error::CutoffSaturated { step, population: top });
            }
        }
    }
    Ok((record, diag))
}

/// Deviation between the oracle and a reduced description at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kappa_t: f64,
    /// Largest elementwise deviation of the atomic density matrices.
    pub max_deviation: f64,
    pub purity_deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    /// Closed-form coherent-probe state with transient amplitudes.
    ClosedForm,
    /// Gaussian-component integration.
    Gaussian,
}

/// Comparison of the oracle with a reduced description on one shared record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub reference: Reference,
    pub cutoffs: Cutoffs,
    pub dt: f64,
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub diagnostics: OracleDiagnostics,
}

impl OracleReport {
    pub fn max_deviation(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.max_deviation).fold(0.0, f64::max)
    }
}

/// Runs the oracle with its own noise, stopping every `chunk` steps to hand
/// the record so far and the atomic state to `reference`.
fn run_checkpoints(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    cutoffs: Cutoffs,
    seed: u64,
    dt: f64,
    chunk: usize,
    chunks: usize,
    mut reference: impl FnMut(&MeasurementRecord) -> Result<AtomicDensityMatrix>,
) -> Result<(Vec<Checkpoint>, OracleDiagnostics)> {
    let gens = build_generators(params, cutoffs)?;
    let mut state = TruncatedState::with_vacuum_fields(&coeffs.as_density_matrix(), cutoffs);
    let dw = wiener_increments(&mut trajectory_rng(seed, 0), dt, chunk * chunks);
    let mut record = MeasurementRecord::empty(dt).with_seed(seed);
    let mut diag = OracleDiagnostics::default();
    let mut checkpoints = Vec::with_capacity(chunks);
    for k in 0..chunks {
        let (r, d) = integrate(&mut state, &gens, params, Drive::Innovations(&dw[k * chunk..(k + 1) * chunk]), dt)?;
        record.increments.extend(r.increments);
        diag.max_trace_drift = diag.max_trace_drift.max(d.max_trace_drift);
        diag.max_hermitian_correction = diag.max_hermitian_correction.max(d.max_hermitian_correction);
        diag.max_top_population = diag.max_top_population.max(d.max_top_population);
        let oracle = state.atomic_state();
        let other = reference(&record)?;
        checkpoints.push(Checkpoint {
            kappa_t: params.kappa() * record.duration(),
            max_deviation: oracle.max_deviation(&other),
            purity_deviation: (oracle.purity() - other.purity()).abs(),
        });
    }
    Ok((checkpoints, diag))
}

/// Compares the oracle with the closed-form coherent-probe state. `coherent`
/// holds coherent-probe parameters (real `beta`); the oracle runs their
/// cascaded equivalent.
pub fn compare_closed_form(
    coherent: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    cutoffs: Cutoffs,
    seed: u64,
    dt: f64,
    chunk: usize,
    chunks: usize,
) -> Result<OracleReport> {
    use crate::coherent::{conditional_state, AmplitudeModel, BetaProfile};
    let cascaded = coherent.cascaded_equivalent();
    let model = AmplitudeModel::Transient(BetaProfile::constant(coherent.beta.re));
    let (checkpoints, diagnostics) = run_checkpoints(&cascaded, coeffs, cutoffs, seed, dt, chunk, chunks, |rec| {
        Ok(conditional_state(coherent, coeffs, rec, &model, false)?.rho)
    })?;
    Ok(OracleReport {
        reference: Reference::ClosedForm,
        cutoffs,
        dt,
        seed,
        checkpoints,
        diagnostics,
    })
}

/// Compares the oracle with the Gaussian-component integration driven by the
/// same record.
pub fn compare_gaussian(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    cutoffs: Cutoffs,
    seed: u64,
    dt: f64,
    chunk: usize,
    chunks: usize,
) -> Result<OracleReport> {
    use crate::gaussian::{EnsembleOptions, GaussianEnsemble};
    let mut ens = GaussianEnsemble::new(params, coeffs, EnsembleOptions::default())?;
    let mut fed = 0;
    let (checkpoints, diagnostics) = run_checkpoints(params, coeffs, cutoffs, seed, dt, chunk, chunks, |rec| {
        for &dy in &rec.increments[fed..] {
            ens.step_record(dy, dt)?;
        }
        fed = rec.len();
        ens.extract_atomic_state(false)
    })?;
    Ok(OracleReport {
        reference: Reference::Gaussian,
        cutoffs,
        dt,
        seed,
        checkpoints,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{AtomicCoefficients, Approximation};

    fn small(eps: f64) -> PhysicalParams {
        let mut p = PhysicalParams::reichel_squeezed();
        p.big_j = TotalSpin::from_two_j(2);
        p.epsilon = C::new(0.0, eps * p.kappa2);
        p.beta = C::new(0.0, p.beta_for_probe_strength(0.01));
        p
    }

    #[test]
    fn deterministic_part_is_traceless() {
        let p = small(0.05);
        let gens = build_generators(&p, Cutoffs { n1: 4, n2: 3 }).unwrap();
        let d = gens.dim();
        let mut rng = crate::record::trajectory_rng(1, 0);
        use rand::Rng;
        for _ in 0..20 {
            let a = DMatrix::from_fn(d, d, |_, _| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let rho = &a * a.adjoint();
            let t = gens.lindblad(&rho).trace().norm() / p.kappa();
            assert!(t < 1e-12, "{t:e}");
        }
    }

    #[test]
    fn vacuum_is_dark_without_drive() {
        let mut p = small(0.0);
        p.beta = C::new(0.0, 0.0);
        p.eta = 0.0;
        let gens = build_generators(&p, Cutoffs { n1: 3, n2: 3 }).unwrap();
        let atoms = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact).as_density_matrix();
        let s = TruncatedState::with_vacuum_fields(&atoms, gens.cutoffs);
        assert!(gens.lindblad(&s.rho).norm() == 0.0);
    }

    #[test]
    fn sparse_products_match_dense() {
        let p = small(0.05);
        let gens = build_generators(&p, Cutoffs { n1: 3, n2: 2 }).unwrap();
        let d = gens.dim();
        let rho = DMatrix::from_fn(d, d, |r, c| C::new((r * 7 + c) as f64 % 5.0, (r + 3 * c) as f64 % 3.0));
        let g = gens.g.to_dense();
        assert!((gens.g.left(&rho) - &g * &rho).norm() < 1e-6 * g.norm());
        assert!((gens.g.right(&rho) - &rho * &g).norm() < 1e-6 * g.norm());
        assert!((gens.g_adj.to_dense() - g.adjoint()).norm() == 0.0);
    }

    fn random_state(d: usize, seed: u64) -> DMatrix<C> {
        use rand::Rng;
        let mut rng = crate::record::trajectory_rng(seed, 0);
        let a = DMatrix::from_fn(d, d, |_, _| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let rho = &a * a.adjoint();
        let tr = rho.trace();
        rho / tr
    }

    #[test]
    fn hermitian_shortcut_matches_full_generator() {
        let p = small(-0.05);
        let gens = build_generators(&p, Cutoffs { n1: 3, n2: 3 }).unwrap();
        let d = gens.dim();
        let rho = random_state(d, 4);
        let (mut out, mut tmp) = (DMatrix::zeros(d, d), DMatrix::zeros(d, d));
        gens.lindblad_hermitian_into(&rho, &mut out, &mut tmp);
        let full = gens.lindblad(&rho);
        assert!((&out - &full).norm() < 1e-12 * full.norm());
        gens.diffusion_hermitian_into(&rho, &mut out);
        let b = gens.measurement(&rho);
        let direct = &b - &rho * b.trace();
        assert!((&out - &direct).norm() < 1e-12 * direct.norm());
    }

    struct Sme<'a>(&'a Generators);

    impl crate::sde::LinearState for DMatrix<C> {
        fn axpy(&mut self, a: f64, x: &Self) {
            *self += x * re(a);
        }
    }

    impl crate::sde::ScalarSde for Sme<'_> {
        type State = DMatrix<C>;
        fn drift(&self, rho: &DMatrix<C>) -> DMatrix<C> {
            self.0.lindblad(rho)
        }
        fn diffusion(&self, rho: &DMatrix<C>) -> DMatrix<C> {
            let b = self.0.measurement(rho);
            let tr = b.trace();
            b - rho * tr
        }
    }

    #[test]
    fn buffered_step_is_the_generic_scheme() {
        let p = small(0.05);
        let gens = build_generators(&p, Cutoffs { n1: 3, n2: 3 }).unwrap();
        let d = gens.dim();
        let rho = random_state(d, 5);
        let dt = 0.005 / p.max_rate();
        let mut ws = Workspace::new(d);
        for dw in [0.0, 1.7 * dt.sqrt(), -0.4 * dt.sqrt()] {
            let expect = crate::sde::predictor_corrector(&Sme(&gens), &rho, dt, dw);
            let mut got = rho.clone();
            ws.step(&gens, &mut got, dt, dw);
            assert!((&got - &expect).norm() < 1e-13, "{:e}", (&got - &expect).norm());
        }
    }
}
