//! Many trajectories advanced together. The covariances and hence the step
//! maps are shared, so each block stores its means and log weights for all
//! trajectories ("lanes") side by side and applies one map to all of them.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::flow::{Generator, Mat4, PreparedGenerator, StepMap, Vec4};
use super::{min_eigenvalue, packed, time_reversal_preconditions, REFLECTION};
use crate::error::{Error, Result};
use crate::par::{for_each_mut, Exec};
use crate::params::PhysicalParams;
use crate::record::{trajectory_rng, MeasurementRecord};
use crate::spin::{AtomicCoefficients, AtomicDensityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    /// Integrate only one block of each pair `(n, m)`, `(-m, -n)`.
    pub use_time_reversal: bool,
    pub freeze_covariance: bool,
    pub freeze_tolerance: f64,
    /// Keep every increment of every lane.
    pub keep_records: bool,
    pub exec: Exec,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            use_time_reversal: false,
            freeze_covariance: true,
            freeze_tolerance: 1e-15,
            keep_records: false,
            exec: Exec::default(),
        }
    }
}

impl BatchOptions {
    /// Settings for long scatter runs.
    pub fn production() -> Self {
        Self {
            use_time_reversal: true,
            ..Self::default()
        }
    }
}

const FIELDS: usize = 10;
/// Lanes are processed in chunks of this width; storage is padded to a multiple.
const WIDTH: usize = 8;

#[derive(Debug, Clone)]
struct Block {
    i: usize,
    k: usize,
    gen: PreparedGenerator,
    v: Mat4,
    frozen: Option<LaneMap>,
    min_eig: f64,
    /// `FIELDS` rows of `stride` values: Re ybar (4), Im ybar (4), Re nu, Im nu.
    data: Vec<f64>,
}

impl Block {
    fn advance(&mut self, dt: f64, dy: &[f64], shift: &[f64], freeze: Option<f64>) {
        let built;
        let map = match &self.frozen {
            Some(map) => map,
            None => {
                let (map, v_next) = StepMap::build(&self.gen, &self.v, dt);
                let change = (v_next - self.v).iter().map(|z| z.norm()).fold(0.0, f64::max);
                self.v = v_next;
                if self.i == self.k {
                    self.min_eig = min_eigenvalue(&self.v);
                }
                if freeze.is_some_and(|tol| change < tol) {
                    self.frozen = Some(LaneMap::from(&StepMap::frozen(&self.gen, &self.v, dt)));
                }
                built = LaneMap::from(&map);
                &built
            }
        };
        apply_lanes(map, &mut self.data, dy, shift);
    }
}

/// `StepMap` split into real and imaginary parts, with the quadratic form
/// folded onto its upper triangle.
#[derive(Debug, Clone)]
struct LaneMap {
    m_re: [[f64; 4]; 4],
    m_im: [[f64; 4]; 4],
    c: [[f64; 2]; 4],
    d: [[f64; 2]; 4],
    r_re: [[f64; 4]; 4],
    r_im: [[f64; 4]; 4],
    r1: [[f64; 2]; 4],
    r_dy: [[f64; 2]; 4],
    s: [[f64; 2]; 3],
}

impl From<&StepMap> for LaneMap {
    fn from(map: &StepMap) -> Self {
        let pair = |z: Complex64| [z.re, z.im];
        let upper = |a: usize, b: usize| match a.cmp(&b) {
            std::cmp::Ordering::Equal => map.r[(a, a)],
            std::cmp::Ordering::Less => map.r[(a, b)] + map.r[(b, a)],
            std::cmp::Ordering::Greater => Complex64::new(0.0, 0.0),
        };
        Self {
            m_re: std::array::from_fn(|a| std::array::from_fn(|b| map.m[(a, b)].re)),
            m_im: std::array::from_fn(|a| std::array::from_fn(|b| map.m[(a, b)].im)),
            c: std::array::from_fn(|a| pair(map.c[a])),
            d: std::array::from_fn(|a| pair(map.d[a])),
            r_re: std::array::from_fn(|a| std::array::from_fn(|b| upper(a, b).re)),
            r_im: std::array::from_fn(|a| std::array::from_fn(|b| upper(a, b).im)),
            r1: std::array::from_fn(|a| pair(map.r1[a])),
            r_dy: std::array::from_fn(|a| pair(map.r_dy[a])),
            s: [pair(map.s0), pair(map.s1), pair(map.s2)],
        }
    }
}

type Chunk = [f64; WIDTH];

#[inline(always)]
fn apply_chunk(k: &LaneMap, y_re: &mut [Chunk; 4], y_im: &mut [Chunk; 4], nu: &mut [Chunk; 2], dy: &Chunk) {
    let mut dn_re = [0.0; WIDTH];
    let mut dn_im = [0.0; WIDTH];
    for w in 0..WIDTH {
        let d = dy[w];
        dn_re[w] = k.s[0][0] + d * (k.s[1][0] + d * k.s[2][0]);
        dn_im[w] = k.s[0][1] + d * (k.s[1][1] + d * k.s[2][1]);
    }
    for a in 0..4 {
        let mut t_re = [0.0; WIDTH];
        let mut t_im = [0.0; WIDTH];
        for w in 0..WIDTH {
            t_re[w] = k.r1[a][0] + k.r_dy[a][0] * dy[w];
            t_im[w] = k.r1[a][1] + k.r_dy[a][1] * dy[w];
        }
        for b in a..4 {
            let (rr, ri) = (k.r_re[a][b], k.r_im[a][b]);
            for w in 0..WIDTH {
                t_re[w] += rr * y_re[b][w] - ri * y_im[b][w];
                t_im[w] += rr * y_im[b][w] + ri * y_re[b][w];
            }
        }
        for w in 0..WIDTH {
            dn_re[w] += y_re[a][w] * t_re[w] - y_im[a][w] * t_im[w];
            dn_im[w] += y_re[a][w] * t_im[w] + y_im[a][w] * t_re[w];
        }
    }
    let mut z_re = [[0.0; WIDTH]; 4];
    let mut z_im = [[0.0; WIDTH]; 4];
    for a in 0..4 {
        for w in 0..WIDTH {
            z_re[a][w] = k.c[a][0] + k.d[a][0] * dy[w];
            z_im[a][w] = k.c[a][1] + k.d[a][1] * dy[w];
        }
        for b in 0..4 {
            let (mr, mi) = (k.m_re[a][b], k.m_im[a][b]);
            for w in 0..WIDTH {
                z_re[a][w] += mr * y_re[b][w] - mi * y_im[b][w];
                z_im[a][w] += mr * y_im[b][w] + mi * y_re[b][w];
            }
        }
    }
    *y_re = z_re;
    *y_im = z_im;
    for w in 0..WIDTH {
        nu[0][w] += dn_re[w];
        nu[1][w] += dn_im[w];
    }
}

#[inline(always)]
fn apply_lanes_generic(k: &LaneMap, data: &mut [f64], dy: &[f64], shift: &[f64]) {
    let stride = dy.len();
    for base in (0..stride).step_by(WIDTH) {
        let load = |data: &[f64], row: usize| -> Chunk {
            data[row * stride + base..][..WIDTH].try_into().expect("padded lanes")
        };
        let mut y_re: [Chunk; 4] = std::array::from_fn(|a| load(data, a));
        let mut y_im: [Chunk; 4] = std::array::from_fn(|a| load(data, 4 + a));
        let mut nu = [load(data, 8), load(data, 9)];
        let d: Chunk = dy[base..][..WIDTH].try_into().expect("padded lanes");
        apply_chunk(k, &mut y_re, &mut y_im, &mut nu, &d);
        for w in 0..WIDTH {
            nu[0][w] -= shift[base + w];
        }
        let rows = y_re.iter().chain(&y_im).chain(&nu);
        for (row, vals) in rows.enumerate() {
            data[row * stride + base..][..WIDTH].copy_from_slice(vals);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn apply_lanes_avx2(k: &LaneMap, data: &mut [f64], dy: &[f64], shift: &[f64]) {
    apply_lanes_generic(k, data, dy, shift)
}

/// Applies one map to every lane. `dy` and `shift` have the padded length.
fn apply_lanes(k: &LaneMap, data: &mut [f64], dy: &[f64], shift: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { apply_lanes_avx2(k, data, dy, shift) };
    }
    apply_lanes_generic(k, data, dy, shift)
}

/// A group of independent trajectories sharing parameters and initial state.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    params: PhysicalParams,
    options: BatchOptions,
    blocks: Vec<Block>,
    /// For each stored pair `(i, k)`, the block holding it and whether it is
    /// the reflected partner.
    lookup: Vec<(usize, bool)>,
    /// Lane storage length, a multiple of `WIDTH`.
    stride: usize,
    seeds: Vec<u64>,
    rngs: Vec<ChaCha8Rng>,
    frozen_dt: f64,
    integrated: Vec<f64>,
    records: Vec<Vec<f64>>,
    pub time: f64,
    pub steps: usize,
}

impl TrajectoryBatch {
    /// One lane per seed; lane `l` draws its noise from `trajectory_rng(seeds[l], 0)`.
    pub fn new(
        params: &PhysicalParams,
        coeffs: &AtomicCoefficients,
        seeds: &[u64],
        options: BatchOptions,
    ) -> Result<Self> {
        let report = params.validate();
        if !report.violations.is_empty() {
            return Err(Error::InvalidParams(report.violations.join("; ")));
        }
        if seeds.is_empty() {
            return Err(Error::InvalidParams("a batch needs at least one trajectory".into()));
        }
        let j = params.big_j;
        if coeffs.big_j != j {
            return Err(Error::InvalidParams("coefficients and parameters disagree on J".into()));
        }
        let dim = j.dim();
        let stride = seeds.len().div_ceil(WIDTH) * WIDTH;
        if options.use_time_reversal {
            time_reversal_preconditions(params)?;
            let tol = 1e-12 * crate::spin::max_abs(&coeffs.c);
            for i in 0..dim {
                for k in 0..=i {
                    if (coeffs.c[(i, k)] - coeffs.c[(j.mirror(k), j.mirror(i))]).norm() > tol {
                        return Err(Error::SymmetryPrecondition(
                            "initial weights are not symmetric under (n, m) -> (-m, -n)".into(),
                        ));
                    }
                }
            }
        }

        let mut blocks = Vec::new();
        let mut lookup = vec![(usize::MAX, false); dim * (dim + 1) / 2];
        for i in 0..dim {
            for k in 0..=i {
                let here = packed(i, k);
                if options.use_time_reversal {
                    let there = packed(j.mirror(k), j.mirror(i));
                    if there < here {
                        lookup[here] = (lookup[there].0, true);
                        continue;
                    }
                }
                let w = coeffs.c[(i, k)];
                let mut data = vec![0.0; FIELDS * stride];
                let ln = w.ln();
                data[8 * stride..9 * stride].fill(ln.re);
                data[9 * stride..].fill(ln.im);
                lookup[here] = (blocks.len(), false);
                blocks.push(Block {
                    i,
                    k,
                    gen: PreparedGenerator::new(&Generator::for_block(params, j.n(i), j.n(k))),
                    v: Mat4::identity(),
                    frozen: None,
                    min_eig: 1.0,
                    data,
                });
            }
        }
        Ok(Self {
            params: *params,
            options,
            blocks,
            lookup,
            stride,
            seeds: seeds.to_vec(),
            rngs: seeds.iter().map(|&s| trajectory_rng(s, 0)).collect(),
            frozen_dt: 0.0,
            integrated: vec![0.0; seeds.len()],
            records: vec![Vec::new(); seeds.len()],
            time: 0.0,
            steps: 0,
        })
    }

    pub fn lanes(&self) -> usize {
        self.seeds.len()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    /// Number of blocks actually integrated.
    pub fn stored_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn frozen_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.frozen.is_some()).count()
    }

    pub fn set_drive(&mut self, beta: Complex64, epsilon: Complex64) -> Result<()> {
        self.params.beta = beta;
        self.params.epsilon = epsilon;
        if self.options.use_time_reversal {
            time_reversal_preconditions(&self.params)?;
        }
        let (p, j) = (self.params, self.params.big_j);
        for b in &mut self.blocks {
            b.gen = PreparedGenerator::new(&Generator::for_block(&p, j.n(b.i), j.n(b.k)));
            b.frozen = None;
        }
        Ok(())
    }

    /// Integrated current of every lane so far.
    pub fn integrated(&self) -> &[f64] {
        &self.integrated
    }

    pub fn record(&self, lane: usize) -> Option<MeasurementRecord> {
        if !self.options.keep_records {
            return None;
        }
        Some(MeasurementRecord::new(self.frozen_dt, self.records[lane].clone()).with_seed(self.seeds[lane]))
    }

    /// Log weight and measurement projection `b . ybar` of diagonal level `q`.
    fn diagonal_terms(&self, q: usize, lane: usize) -> (f64, f64) {
        let st = self.stride;
        let (idx, reflected) = self.lookup[packed(q, q)];
        let b = &self.blocks[idx];
        let mut proj = 0.0;
        for a in 0..4 {
            let s = if reflected { REFLECTION[a] } else { 1.0 };
            let bu = b.gen.b_u()[a] * s;
            proj += bu.re * b.data[a * st + lane] - bu.im * b.data[(4 + a) * st + lane];
        }
        (b.data[8 * st + lane], proj)
    }

    /// Advances all lanes by `steps` steps with their own noise.
    pub fn advance(&mut self, steps: usize, dt: f64) -> Result<()> {
        for _ in 0..steps {
            let dw: Vec<f64> = self
                .rngs
                .iter_mut()
                .map(|rng| dt.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            self.step(&dw, dt)?;
        }
        Ok(())
    }

    /// One step with the given innovations (one per lane).
    pub fn step(&mut self, dw: &[f64], dt: f64) -> Result<()> {
        let lanes = self.lanes();
        if dw.len() != lanes {
            return Err(Error::RecordMismatch { len: dw.len(), expected: lanes });
        }
        if !(dt > 0.0) {
            return Err(Error::NonPositiveTime(dt));
        }
        let bound = self.params.stable_dt_bound();
        if dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, bound });
        }
        if self.frozen_dt != dt {
            if self.steps > 0 && self.options.keep_records {
                return Err(Error::InvalidParams("step size changed within a record".into()));
            }
            self.blocks.iter_mut().for_each(|b| b.frozen = None);
            self.frozen_dt = dt;
        }

        let dim = self.params.big_j.dim();
        let mut dy = vec![0.0; self.stride];
        let mut shift = vec![0.0; self.stride];
        for l in 0..lanes {
            let terms: Vec<(f64, f64)> = (0..dim).map(|q| self.diagonal_terms(q, l)).collect();
            let lse = super::log_sum_exp(terms.iter().map(|t| t.0));
            let signal: f64 = terms.iter().map(|(nu, b)| (nu - lse).exp() * b).sum();
            dy[l] = signal * dt + dw[l];
            shift[l] = lse;
        }

        let freeze = self.options.freeze_covariance.then_some(self.options.freeze_tolerance);
        for_each_mut(self.options.exec, &mut self.blocks, |_, b| b.advance(dt, &dy, &shift, freeze));

        for b in self.blocks.iter().filter(|b| b.i == b.k) {
            if !(b.min_eig > -1e-9) {
                return Err(Error::LostPositivity {
                    n: self.params.big_j.n(b.i),
                    step: self.steps,
                    min_eigenvalue: b.min_eig,
                });
            }
        }
        for l in 0..lanes {
            self.integrated[l] += dy[l];
            if self.options.keep_records {
                self.records[l].push(dy[l]);
            }
        }
        self.steps += 1;
        self.time += dt;
        Ok(())
    }

    /// Mean and log weight of block `(i, k)`, `i >= k`, in lane `lane`.
    pub fn block(&self, i: usize, k: usize, lane: usize) -> (Vec4, Complex64) {
        let st = self.stride;
        let (idx, reflected) = self.lookup[packed(i, k)];
        let b = &self.blocks[idx];
        let y = Vec4::from_fn(|a, _| {
            let s = if reflected { REFLECTION[a] } else { 1.0 };
            Complex64::new(b.data[a * st + lane], b.data[(4 + a) * st + lane]) * s
        });
        (y, Complex64::new(b.data[8 * st + lane], b.data[9 * st + lane]))
    }

    /// Covariance of block `(i, k)`, `i >= k`.
    pub fn covariance(&self, i: usize, k: usize) -> Mat4 {
        let (idx, reflected) = self.lookup[packed(i, k)];
        let v = self.blocks[idx].v;
        if reflected {
            Mat4::from_fn(|r, c| v[(r, c)] * (REFLECTION[r] * REFLECTION[c]))
        } else {
            v
        }
    }

    /// Largest `|ybar|` over blocks and lanes and largest `|V - I|`.
    pub fn field_residual(&self) -> (f64, f64) {
        let lanes = self.lanes();
        let mut y_max: f64 = 0.0;
        let mut v_max: f64 = 0.0;
        for b in &self.blocks {
            v_max = v_max.max((b.v - Mat4::identity()).norm());
            for l in 0..lanes {
                let n2: f64 = (0..8).map(|a| b.data[a * self.stride + l].powi(2)).sum();
                y_max = y_max.max(n2.sqrt());
            }
        }
        (y_max, v_max)
    }

    /// Reduced atomic state of one lane, `rho_at[n, m] = N_nm`.
    pub fn atomic_state(&self, lane: usize, decay_field: bool) -> Result<AtomicDensityMatrix> {
        if decay_field {
            let (ybar_norm, cov_dev) = self.field_residual();
            if !super::field_decayed(ybar_norm, cov_dev) {
                return Err(Error::FieldNotDecayed { ybar_norm, cov_dev });
            }
        }
        let j = self.params.big_j;
        let dim = j.dim();
        let lse = super::log_sum_exp((0..dim).map(|q| self.block(q, q, lane).1.re));
        let mut rho = nalgebra::DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for k in 0..=i {
                let w = (self.block(i, k, lane).1 - lse).exp();
                rho[(i, k)] = w;
                rho[(k, i)] = w.conj();
            }
        }
        let tr: f64 = (0..dim).map(|i| rho[(i, i)].re).sum();
        rho /= Complex64::new(tr, 0.0);
        Ok(AtomicDensityMatrix { big_j: j, rho })
    }
}

/// Probe on for `t_on`, then drive and squeezing off while observation
/// continues for `t_decay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeProtocol {
    pub t_on: f64,
    pub t_decay: f64,
    pub dt: f64,
}

impl ProbeProtocol {
    /// Decay window of `15 / kappa1` with the largest stable step that
    /// divides both windows into whole numbers of steps.
    pub fn with_decay(params: &PhysicalParams, t_on: f64, dt_max: f64) -> Self {
        let t_decay = 15.0 / params.kappa1;
        let steps = (t_on / dt_max).ceil();
        Self {
            t_on,
            t_decay,
            dt: t_on / steps,
        }
    }

    pub fn steps_on(&self) -> usize {
        (self.t_on / self.dt).round() as usize
    }

    pub fn steps_decay(&self) -> usize {
        (self.t_decay / self.dt).ceil() as usize
    }
}

/// Final state of one trajectory of a protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub seed: u64,
    pub state: AtomicDensityMatrix,
    /// Integrated current over the probing window.
    pub y_on: f64,
    /// Integrated current including the decay window.
    pub y_total: f64,
}

/// Runs the probe-then-decay protocol for every seed in one batch.
pub fn run_protocol(
    params: &PhysicalParams,
    coeffs: &AtomicCoefficients,
    seeds: &[u64],
    protocol: &ProbeProtocol,
    options: BatchOptions,
) -> Result<Vec<ProtocolOutcome>> {
    let mut batch = TrajectoryBatch::new(params, coeffs, seeds, options)?;
    batch.advance(protocol.steps_on(), protocol.dt)?;
    let y_on = batch.integrated().to_vec();
    let zero = Complex64::new(0.0, 0.0);
    batch.set_drive(zero, zero)?;
    batch.advance(protocol.steps_decay(), protocol.dt)?;
    (0..batch.lanes())
        .map(|l| {
            Ok(ProtocolOutcome {
                seed: seeds[l],
                state: batch.atomic_state(l, true)?,
                y_on: y_on[l],
                y_total: batch.integrated()[l],
            })
        })
        .collect()
}
