//! Squeezed-vacuum probing: every block `rho_nm` of the joint state keeps a
//! Gaussian Wigner function, so the conditional evolution reduces to ODEs for
//! the covariances and SDEs for means and weights.

pub mod batch;
pub mod flow;
pub mod steady;

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{for_each_mut, Exec};
use crate::params::{PhysicalParams, TotalSpin};
use crate::record::MeasurementRecord;
use crate::spin::{AtomicCoefficients, AtomicDensityMatrix};

pub use flow::{FlowCoefficients, Generator, Mat4, PhaseOp, PreparedGenerator, Side, StepMap, Vec4};

/// The quadrature reflection `diag(1, -1, -1, 1)` of the time-reversal map.
pub const REFLECTION: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

/// Field part of the block `rho_nm`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub n: f64,
    pub m: f64,
    pub v: Mat4,
    pub ybar: Vec4,
    /// `ln N_nm`; the real part is the log magnitude, the imaginary part the phase.
    pub log_weight: Complex64,
}

impl GaussianComponent {
    pub fn vacuum(n: f64, m: f64, weight: Complex64) -> Self {
        Self {
            n,
            m,
            v: Mat4::identity(),
            ybar: Vec4::zeros(),
            log_weight: weight.ln(),
        }
    }

    pub fn weight(&self) -> Complex64 {
        self.log_weight.exp()
    }
}

/// Packed index of the stored block `(i, k)` with `i >= k`.
pub fn packed(i: usize, k: usize) -> usize {
    i * (i + 1) / 2 + k
}

pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

fn reflect_vec(y: &Vec4) -> Vec4 {
    Vec4::from_fn(|r, _| y[r] * REFLECTION[r])
}

fn reflect_mat(v: &Mat4) -> Mat4 {
    Mat4::from_fn(|r, c| v[(r, c)] * (REFLECTION[r] * REFLECTION[c]))
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Smallest eigenvalue of the real part of a diagonal-block covariance.
pub fn min_eigenvalue(v: &Mat4) -> f64 {
    let re: Matrix4<f64> = v.map(|z| z.re);
    SymmetricEigen::new(re).eigenvalues.min()
}

/// Checks that the symmetry argument of the time-reversal map applies.
pub fn time_reversal_preconditions(p: &PhysicalParams) -> Result<()> {
    let tol = 1e-12;
    if p.phi.sin().abs() > tol {
        return Err(Error::SymmetryPrecondition(format!("phi = {} is not a multiple of pi", p.phi)));
    }
    if p.beta.re.abs() > tol * p.beta.norm().max(1.0) {
        return Err(Error::SymmetryPrecondition("beta is not purely imaginary".into()));
    }
    if p.epsilon.re.abs() > tol * p.epsilon.norm().max(1.0) {
        return Err(Error::SymmetryPrecondition("epsilon is not purely imaginary".into()));
    }
    Ok(())
}

/// Largest violations of the time-reversal relations between blocks
/// `(n, m)` and `(-m, -n)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub covariance: f64,
    pub mean: f64,
    pub weight: f64,
}

impl SymmetryReport {
    pub fn max(&self) -> f64 {
        self.covariance.max(self.mean).max(self.weight)
    }
}

/// Options of the block integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Stop integrating a covariance once one step changes it by less than
    /// `freeze_tolerance` and reuse the step map from then on.
    pub freeze_covariance: bool,
    pub freeze_tolerance: f64,
    pub exec: Exec,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            freeze_covariance: false,
            freeze_tolerance: 1e-15,
            exec: Exec::default(),
        }
    }
}

/// All blocks `n >= m` of one conditional trajectory.
#[derive(Debug, Clone)]
pub struct GaussianEnsemble {
    params: PhysicalParams,
    options: EnsembleOptions,
    components: Vec<GaussianComponent>,
    generators: Vec<PreparedGenerator>,
    frozen: Vec<Option<StepMap>>,
    frozen_dt: f64,
    initially_symmetric: bool,
    pub time: f64,
    pub steps: usize,
    pub record: MeasurementRecord,
}

impl GaussianEnsemble {
    /// Vacuum cavity fields with atomic coefficients `coeffs`.
    pub fn new(params: &PhysicalParams, coeffs: &AtomicCoefficients, options: EnsembleOptions) -> Result<Self> {
        let report = params.validate();
        if !report.violations.is_empty() {
            return Err(Error::InvalidParams(report.violations.join("; ")));
        }
        let big_j = params.big_j;
        if coeffs.big_j != big_j {
            return Err(Error::InvalidParams(format!(
                "coefficients are for J = {}, parameters for J = {big_j}",
                coeffs.big_j
            )));
        }
        let dim = big_j.dim();
        let mut components = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            for k in 0..=i {
                components.push(GaussianComponent::vacuum(big_j.n(i), big_j.n(k), coeffs.c[(i, k)]));
            }
        }
        let tol = 1e-12 * crate::spin::max_abs(&coeffs.c);
        let initially_symmetric = (0..dim)
            .all(|i| (0..=i).all(|k| (coeffs.c[(i, k)] - coeffs.c[(big_j.mirror(k), big_j.mirror(i))]).norm() <= tol));
        let mut ens = Self {
            params: *params,
            options,
            components,
            generators: Vec::new(),
            frozen: Vec::new(),
            frozen_dt: 0.0,
            initially_symmetric,
            time: 0.0,
            steps: 0,
            record: MeasurementRecord::empty(0.0),
        };
        ens.rebuild_generators();
        ens.renormalise();
        Ok(ens)
    }

    fn rebuild_generators(&mut self) {
        let p = self.params;
        self.generators = self
            .components
            .iter()
            .map(|c| PreparedGenerator::new(&Generator::for_block(&p, c.n, c.m)))
            .collect();
        self.frozen = vec![None; self.components.len()];
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn big_j(&self) -> TotalSpin {
        self.params.big_j
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// The stored block `(n, m)`, or its partner conjugated when `n < m`.
    pub fn component(&self, n: f64, m: f64) -> Option<GaussianComponent> {
        let j = self.big_j();
        let (i, k) = (j.index(n)?, j.index(m)?);
        if i >= k {
            Some(self.components[packed(i, k)].clone())
        } else {
            let c = &self.components[packed(k, i)];
            Some(GaussianComponent {
                n,
                m,
                v: c.v.map(|z| z.conj()),
                ybar: c.ybar.map(|z| z.conj()),
                log_weight: c.log_weight.conj(),
            })
        }
    }

    /// Switches drive and squeezing, e.g. off at the end of the probing window.
    pub fn set_drive(&mut self, beta: Complex64, epsilon: Complex64) {
        self.params.beta = beta;
        self.params.epsilon = epsilon;
        self.rebuild_generators();
    }

    /// Number of blocks whose covariance is frozen.
    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|f| f.is_some()).count()
    }

    /// Conditional expectation of the homodyne signal, `Tr(B rho)`.
    pub fn signal(&self) -> f64 {
        let j = self.big_j();
        let diag = (0..j.dim()).map(|i| &self.components[packed(i, i)]);
        let log_norm = log_sum_exp(diag.clone().map(|c| c.log_weight.re));
        diag.zip(0..)
            .map(|(c, i)| {
                let b = self.generators[packed(i, i)].b_u().dot(&c.ybar).re;
                (c.log_weight.re - log_norm).exp() * b
            })
            .sum()
    }

    /// Simulation mode: `dy = signal dt + dw`.
    pub fn step_innovation(&mut self, dw: f64, dt: f64) -> Result<f64> {
        let dy = self.signal() * dt + dw;
        self.step_record(dy, dt)?;
        Ok(dy)
    }

    /// Replay mode: advances every block with the measured increment `dy`.
    pub fn step_record(&mut self, dy: f64, dt: f64) -> Result<()> {
        let bound = self.params.stable_dt_bound();
        if !(dt > 0.0) {
            return Err(Error::NonPositiveTime(dt));
        }
        if dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, bound });
        }
        if self.record.is_empty() {
            self.record.dt = dt;
        } else if (self.record.dt - dt).abs() > 1e-12 * dt {
            return Err(Error::InvalidParams("step size changed within a record".into()));
        }
        if self.frozen_dt != dt {
            self.frozen.iter_mut().for_each(|f| *f = None);
            self.frozen_dt = dt;
        }

        let opts = self.options;
        let gens = &self.generators;
        let mut work: Vec<(&mut GaussianComponent, &mut Option<StepMap>)> =
            self.components.iter_mut().zip(self.frozen.iter_mut()).collect();
        for_each_mut(opts.exec, &mut work, |idx, (comp, frozen)| {
            let dnu = match frozen {
                Some(map) => map.apply(&mut comp.ybar, dy),
                None => {
                    let (map, v_next) = StepMap::build(&gens[idx], &comp.v, dt);
                    let change = (v_next - comp.v).iter().map(|z| z.norm()).fold(0.0, f64::max);
                    comp.v = v_next;
                    let dnu = map.apply(&mut comp.ybar, dy);
                    if opts.freeze_covariance && change < opts.freeze_tolerance {
                        **frozen = Some(StepMap::frozen(&gens[idx], &comp.v, dt));
                    }
                    dnu
                }
            };
            comp.log_weight += dnu;
        });

        self.steps += 1;
        self.time += dt;
        self.record.push(dy);
        self.check_positivity()?;
        self.renormalise();
        Ok(())
    }

    fn check_positivity(&self) -> Result<()> {
        let j = self.big_j();
        for i in 0..j.dim() {
            let idx = packed(i, i);
            if self.frozen[idx].is_some() {
                continue;
            }
            let min = min_eigenvalue(&self.components[idx].v);
            if !(min > -1e-9) {
                return Err(Error::LostPositivity {
                    n: j.n(i),
                    step: self.steps,
                    min_eigenvalue: min,
                });
            }
        }
        Ok(())
    }

    fn renormalise(&mut self) {
        let j = self.big_j();
        let log_norm = log_sum_exp((0..j.dim()).map(|i| self.components[packed(i, i)].log_weight.re));
        for c in &mut self.components {
            c.log_weight -= log_norm;
        }
    }

    /// Residuals of the time-reversal relations; errors if the parameters or
    /// the initial weights break the symmetry.
    pub fn check_time_reversal(&self) -> Result<SymmetryReport> {
        time_reversal_preconditions(&self.params)?;
        if !self.initially_symmetric {
            return Err(Error::SymmetryPrecondition(
                "initial weights are not symmetric under (n, m) -> (-m, -n)".into(),
            ));
        }
        Ok(self.time_reversal_residuals())
    }

    /// The same residuals without precondition checks.
    pub fn time_reversal_residuals(&self) -> SymmetryReport {
        let j = self.big_j();
        let mut rep = SymmetryReport::default();
        for i in 0..j.dim() {
            for k in 0..=i {
                let a = &self.components[packed(i, k)];
                let b = &self.components[packed(j.mirror(k), j.mirror(i))];
                rep.covariance = rep.covariance.max((b.v - reflect_mat(&a.v)).norm());
                rep.mean = rep.mean.max((b.ybar - reflect_vec(&a.ybar)).norm());
                rep.weight = rep.weight.max((b.weight() - a.weight()).norm());
            }
        }
        rep
    }

    /// Largest `|ybar|` and `|V - I|` over all blocks.
    pub fn field_residual(&self) -> (f64, f64) {
        self.components.iter().fold((0.0, 0.0), |(y, v), c| {
            (y.max(c.ybar.norm()), v.max((c.v - Mat4::identity()).norm()))
        })
    }

    /// Reduced atomic state `rho_at[n, m] = Tr_field rho_nm = N_nm`.
    ///
    /// With `decay_field` the caller asserts that the cavities have been left
    /// to decay; an undecayed field is reported as an error.
    pub fn extract_atomic_state(&self, decay_field: bool) -> Result<AtomicDensityMatrix> {
        if decay_field {
            let (ybar_norm, cov_dev) = self.field_residual();
            if !field_decayed(ybar_norm, cov_dev) {
                return Err(Error::FieldNotDecayed { ybar_norm, cov_dev });
            }
        }
        let dim = self.big_j().dim();
        let mut rho = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for k in 0..=i {
                let w = self.components[packed(i, k)].weight();
                rho[(i, k)] = w;
                rho[(k, i)] = w.conj();
            }
        }
        let tr: f64 = (0..dim).map(|i| rho[(i, i)].re).sum();
        rho /= Complex64::new(tr, 0.0);
        Ok(AtomicDensityMatrix { big_j: self.big_j(), rho })
    }
}

/// Residual field occupation `|ybar|^2 + |V - I|` tolerated when the caller
/// asserts a decayed field.
pub const DECAY_TOLERANCE: f64 = 1e-4;

pub(crate) fn field_decayed(ybar_norm: f64, cov_dev: f64) -> bool {
    ybar_norm * ybar_norm + cov_dev <= DECAY_TOLERANCE
}
