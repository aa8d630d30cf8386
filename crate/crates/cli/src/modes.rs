//! One function per mode, each returning the artifacts to write.

use catprobe::analysis::{histogram_summaries, peak_summary, spin_q_function, Series, TrajectorySummary};
use catprobe::coherent::{
    conditional_state, peak_estimate, purity_full, record_probability_y, sample_record_transient,
    AmplitudeModel, AmplitudeSet, BetaProfile,
};
use catprobe::fock::{compare_closed_form, compare_gaussian, Cutoffs, OracleReport};
use catprobe::gaussian::batch::{BatchOptions, ProbeProtocol, TrajectoryBatch};
use catprobe::gaussian::{time_reversal_preconditions, EnsembleOptions, GaussianEnsemble, SymmetryReport};
use catprobe::par::{map_range, Exec};
use catprobe::params::PhysicalParams;
use catprobe::record::{trajectory_rng, wiener_increments, MeasurementRecord};
use catprobe::spin::{Approximation, AtomicCoefficients, AtomicDensityMatrix};
use num_complex::Complex64;
use serde_json::json;

use crate::config::{ExperimentSpec, Mode, Probe};
use crate::error::CliError;
use crate::output::{num, Artifact};

/// Deviation allowed between oracle and closed form.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-5;
/// Deviation allowed between oracle and Gaussian blocks.
pub const GAUSSIAN_TOLERANCE: f64 = 1e-4;
/// Largest time-reversal residual accepted by `symmetry-check`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

pub fn run_mode(spec: &mut ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    match spec.mode {
        Mode::AlphaCircle => alpha_circle(spec),
        Mode::State => state(spec),
        Mode::PurityVsY => purity_vs_y(spec),
        Mode::POfY => p_of_y(spec),
        Mode::NpVsY => np_vs_y(spec),
        Mode::SqueezedScatter => squeezed_scatter(spec),
        Mode::OracleValidate => oracle_validate(spec),
        Mode::SymmetryCheck => symmetry_check(spec),
    }
}

fn css(p: &PhysicalParams) -> AtomicCoefficients {
    AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact)
}

/// Cascaded drive `-i beta` for the real coherent-probe amplitude `beta`.
fn cascaded(p: &PhysicalParams) -> PhysicalParams {
    PhysicalParams {
        beta: Complex64::new(0.0, -p.beta.re),
        ..*p
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn alpha_circle(spec: &ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let p = &spec.params;
    let amps = AmplitudeSet::steady(p);
    let radius = p.kappa1.sqrt() * p.beta.re / p.kappa();
    let center = Complex64::new(radius, 0.0);
    let mut a = Artifact::new("alpha_circle", &["n", "re_alpha", "im_alpha", "abs_alpha"]);
    let mut residual: f64 = 0.0;
    for (i, alpha) in amps.alpha.iter().enumerate() {
        residual = residual.max(((alpha - center).norm() - radius.abs()).abs());
        a.push(vec![
            num(p.big_j.n(i)),
            num(alpha.re),
            num(alpha.im),
            num(alpha.norm()),
        ]);
    }
    a.summary = json!({
        "center": [radius, 0.0],
        "radius": radius.abs(),
        "circle_residual": residual,
        "conjugation_asymmetry": amps.conjugation_asymmetry(),
    });
    Ok(vec![a])
}

fn state(spec: &ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = &spec.settings;
    let p = &spec.params;
    let (t, y) = (s.t()?, s.y()?);
    let record = MeasurementRecord::integrated_only(t, y);
    let probe_off = s.probe_off.unwrap_or(false);
    let cs = conditional_state(p, &css(p), &record, &AmplitudeModel::Steady, probe_off)?;
    let rho = &cs.rho;
    let peak = peak_summary(rho);
    let estimate = peak_estimate(p, t, y)?;

    let mut pops = Artifact::new("state", &["n", "population"]);
    for (i, w) in rho.diagonal().iter().enumerate() {
        pops.push(vec![num(p.big_j.n(i)), num(*w)]);
    }
    pops.summary = json!({
        "purity": rho.purity(),
        "peak": peak,
        "estimate": estimate,
        "mirror_asymmetry": rho.mirror_asymmetry(),
    });

    let mut full = Artifact::new("state_rho", &["n", "m", "re", "im"]);
    for i in 0..rho.rho.nrows() {
        for k in 0..rho.rho.ncols() {
            let z = rho.rho[(i, k)];
            full.push(vec![num(p.big_j.n(i)), num(p.big_j.n(k)), num(z.re), num(z.im)]);
        }
    }

    let nt = s.q_theta.unwrap_or(100);
    let np = s.q_phi.unwrap_or(200);
    let grid = spin_q_function(rho, nt, np);
    let mut q = Artifact::new("state_q", &["theta", "phi", "q"]);
    for (i, th) in grid.theta.iter().enumerate() {
        for (j, ph) in grid.phi.iter().enumerate() {
            q.push(vec![num(*th), num(*ph), num(grid.values[i][j])]);
        }
    }
    let (qt, qp, qmax) = grid.max_location();
    q.summary = json!({
        "integral": grid.integral(),
        "max": {"theta": qt, "phi": qp, "value": qmax},
    });
    Ok(vec![pops, full, q])
}

fn purity_vs_y(spec: &ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = &spec.settings;
    let p = &spec.params;
    let t = s.t()?;
    let (lo, hi) = s.y_range()?;
    let probe_off = s.probe_off.unwrap_or(false);
    let coeffs = css(p);
    let ys = linspace(lo, hi, s.points()?);
    let purities: Result<Vec<f64>, _> = map_range(Exec::default(), ys.len(), |k| {
        purity_full(p, &coeffs, &MeasurementRecord::integrated_only(t, ys[k]), &AmplitudeModel::Steady, probe_off)
    })
    .into_iter()
    .collect();
    let purities = purities?;
    let mut a = Artifact::new("purity_vs_Y", &["y", "purity"]);
    for (y, pu) in ys.iter().zip(&purities) {
        a.push(vec![num(*y), num(*pu)]);
    }
    let min = purities.iter().cloned().fold(f64::INFINITY, f64::min);
    a.summary = json!({ "t": t, "min_purity": min });
    Ok(vec![a])
}

fn p_of_y(spec: &ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = &spec.settings;
    let p = &spec.params;
    let t = s.t()?;
    let dist = record_probability_y(p, &css(p), t)?;
    let (lo, hi) = match (s.y_min, s.y_max) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => dist.support(6.0),
    };
    let mut a = Artifact::new("p_of_Y", &["y", "pdf", "cdf"]);
    for y in linspace(lo, hi, s.points()?) {
        a.push(vec![num(y), num(dist.pdf(y)), num(dist.cdf(y))]);
    }
    a.summary = json!({ "t": t, "mean": dist.mean(), "y_min": lo, "y_max": hi });
    Ok(vec![a])
}

fn np_vs_y(spec: &ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = &spec.settings;
    let p = &spec.params;
    let t = s.t()?;
    let (lo, hi) = s.y_range()?;
    let probe_off = s.probe_off.unwrap_or(false);
    let coeffs = css(p);
    let ys = linspace(lo, hi, s.points()?);
    let rows: Result<Vec<_>, CliError> = map_range(Exec::default(), ys.len(), |k| {
        let y = ys[k];
        let est = peak_estimate(p, t, y)?;
        let cs = conditional_state(p, &coeffs, &MeasurementRecord::integrated_only(t, y), &AmplitudeModel::Steady, probe_off)?;
        Ok((y, est, peak_summary(&cs.rho)))
    })
    .into_iter()
    .collect();
    let mut a = Artifact::new(
        "np_vs_Y",
        &["y", "n_p_estimate", "estimate_single_peaked", "d_over_2", "d_over_2_discrete", "single_peaked"],
    );
    let mut worst: f64 = 0.0;
    for (y, est, peak) in rows? {
        worst = worst.max((est.n_p - peak.d_over_2_discrete).abs());
        a.push(vec![
            num(y),
            num(est.n_p),
            est.single_peaked.to_string(),
            num(peak.d_over_2),
            num(peak.d_over_2_discrete),
            peak.single_peaked.to_string(),
        ]);
    }
    a.summary = json!({ "t": t, "max_estimate_offset": worst });
    Ok(vec![a])
}

fn scatter_row(a: &mut Artifact, row: &TrajectorySummary, y_total: f64) {
    a.push(vec![
        row.index.to_string(),
        row.seed.to_string(),
        num(row.y.unwrap_or(f64::NAN)),
        num(y_total),
        num(row.purity),
        num(row.peak.d_over_2),
        num(row.peak.d_over_2_discrete),
        row.peak.single_peaked.to_string(),
    ]);
}

const SCATTER_COLUMNS: [&str; 8] = [
    "index",
    "seed",
    "y_on",
    "y_total",
    "purity",
    "d_over_2",
    "d_over_2_discrete",
    "single_peaked",
];

fn squeezed_scatter(spec: &mut ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = spec.settings.clone();
    let p = spec.params;
    let t = s.t()?;
    let n = s.trajectories()?;
    let base = s.seed();
    let seeds: Vec<u64> = (0..n as u64).map(|k| base.wrapping_add(k)).collect();
    let coeffs = css(&p);
    let probe = s.probe.unwrap_or(Probe::Squeezed);
    let engine = match probe {
        Probe::Squeezed => cascaded(&p),
        Probe::Coherent => {
            if p.kappa2 != 0.0 {
                return Err(CliError::Usage("probe = coherent needs `kappa2_mhz` = 0".into()));
            }
            p
        }
    };
    let dt = s.dt.unwrap_or_else(|| engine.stable_dt_bound());
    let protocol = ProbeProtocol::with_decay(&engine, t, dt);
    spec.settings.dt = Some(protocol.dt);

    let mut rows = Vec::with_capacity(n);
    let mut totals = Vec::with_capacity(n);
    match probe {
        Probe::Squeezed => {
            let options = if time_reversal_preconditions(&engine).is_ok() {
                BatchOptions::production()
            } else {
                BatchOptions::default()
            };
            let mut batch = TrajectoryBatch::new(&engine, &coeffs, &seeds, options)?;
            batch.advance(protocol.steps_on(), protocol.dt)?;
            let y_on = batch.integrated().to_vec();
            let zero = Complex64::new(0.0, 0.0);
            batch.set_drive(zero, zero)?;
            batch.advance(protocol.steps_decay(), protocol.dt)?;
            for (l, &seed) in seeds.iter().enumerate() {
                let rho = batch
                    .atomic_state(l, true)
                    .map_err(|source| CliError::Trajectory { index: l, seed, source })?;
                rows.push(TrajectorySummary::from_state(l, seed, Some(y_on[l]), &rho));
                totals.push(batch.integrated()[l]);
            }
        }
        Probe::Coherent => {
            let profile = BetaProfile::switched_off_at(p.beta.re, t);
            let steps = protocol.steps_on() + protocol.steps_decay();
            let t_total = steps as f64 * protocol.dt;
            let model = AmplitudeModel::Transient(profile.clone());
            let out: Vec<Result<(f64, f64, AtomicDensityMatrix), CliError>> = map_range(Exec::default(), n, |l| {
                let seed = seeds[l];
                let wrap = |source| CliError::Trajectory { index: l, seed, source };
                let rec = sample_record_transient(&p, &coeffs, &profile, t_total, protocol.dt, seed).map_err(wrap)?;
                let y_on = rec.increments[..protocol.steps_on()].iter().sum();
                let cs = conditional_state(&p, &coeffs, &rec, &model, true).map_err(wrap)?;
                Ok((y_on, rec.integrated(), cs.rho))
            });
            for (l, r) in out.into_iter().enumerate() {
                let (y_on, y_total, rho) = r?;
                rows.push(TrajectorySummary::from_state(l, seeds[l], Some(y_on), &rho));
                totals.push(y_total);
            }
        }
    }

    let mut a = Artifact::new("squeezed_scatter", &SCATTER_COLUMNS);
    for (row, y_total) in rows.iter().zip(&totals) {
        scatter_row(&mut a, row, *y_total);
    }
    let label = match probe {
        Probe::Squeezed => format!("epsilon = {}i kappa2", s.epsilon_im.unwrap_or(0.0)),
        Probe::Coherent => "coherent".to_string(),
    };
    let series = Series {
        label,
        epsilon: engine.epsilon,
        beta: engine.beta,
        rows,
    };
    let summary = histogram_summaries(std::slice::from_ref(&series));
    a.summary = json!({
        "protocol": protocol,
        "series": summary.first(),
    });
    Ok(vec![a])
}

fn oracle_validate(spec: &mut ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = spec.settings.clone();
    let p = spec.params;
    let coherent = p.kappa2 == 0.0 && p.epsilon == Complex64::new(0.0, 0.0);
    let cutoffs = Cutoffs {
        n1: s.cutoff1.unwrap_or(12),
        n2: s.cutoff2.unwrap_or(if coherent { 2 } else { 10 }),
    };
    spec.settings.cutoff1 = Some(cutoffs.n1);
    spec.settings.cutoff2 = Some(cutoffs.n2);
    let engine = cascaded(&p);
    let dt = s.dt.unwrap_or(if coherent { 0.002 / p.kappa() } else { 0.005 / engine.max_rate() });
    let t = s.t.unwrap_or(20.0 / p.kappa());
    let chunks = 4;
    let chunk = ((t / dt / chunks as f64).round() as usize).max(1);
    spec.settings.dt = Some(dt);
    spec.settings.t = Some(t);
    let coeffs = css(&p);
    let seed = s.seed();
    let (report, tol): (OracleReport, f64) = if coherent {
        (compare_closed_form(&p, &coeffs, cutoffs, seed, dt, chunk, chunks)?, CLOSED_FORM_TOLERANCE)
    } else {
        (compare_gaussian(&engine, &coeffs, cutoffs, seed, dt, chunk, chunks)?, GAUSSIAN_TOLERANCE)
    };
    let mut a = Artifact::new("oracle_validate", &["kappa_t", "max_deviation", "purity_deviation", "pass"]);
    for c in &report.checkpoints {
        a.push(vec![
            num(c.kappa_t),
            num(c.max_deviation),
            num(c.purity_deviation),
            (c.max_deviation < tol).to_string(),
        ]);
    }
    let worst = report.max_deviation();
    a.summary = json!({ "report": report, "tolerance": tol, "max_deviation": worst, "pass": worst < tol });
    if worst >= tol {
        spec_failure(spec, &a)?;
        return Err(CliError::Validation(format!(
            "oracle deviation {worst:e} exceeds {tol:e}"
        )));
    }
    Ok(vec![a])
}

/// Writes the artifact of a failed validation before the error is reported.
fn spec_failure(spec: &ExperimentSpec, a: &Artifact) -> Result<(), CliError> {
    crate::output::write_artifact(spec, a).map(|_| ())
}

fn symmetry_run(p: &PhysicalParams, seed: u64, steps: usize, dt: f64) -> catprobe::Result<SymmetryReport> {
    let mut ens = GaussianEnsemble::new(p, &css(p), EnsembleOptions::default())?;
    let dw = wiener_increments(&mut trajectory_rng(seed, 0), dt, steps);
    let mut worst = SymmetryReport::default();
    for (k, w) in dw.iter().enumerate() {
        ens.step_innovation(*w, dt)?;
        if k % 1000 == 999 || k + 1 == steps {
            let r = ens.check_time_reversal()?;
            worst.covariance = worst.covariance.max(r.covariance);
            worst.mean = worst.mean.max(r.mean);
            worst.weight = worst.weight.max(r.weight);
        }
    }
    Ok(worst)
}

fn symmetry_check(spec: &mut ExperimentSpec) -> Result<Vec<Artifact>, CliError> {
    let s = spec.settings.clone();
    let engine = cascaded(&spec.params);
    let steps = s.steps.unwrap_or(10_000);
    let n = s.trajectories()?;
    let dt = s.dt.unwrap_or_else(|| engine.stable_dt_bound());
    spec.settings.dt = Some(dt);
    time_reversal_preconditions(&engine).map_err(|e| CliError::Usage(e.to_string()))?;
    let base = s.seed();
    let reports = map_range(Exec::default(), n, |k| {
        let seed = base.wrapping_add(k as u64);
        symmetry_run(&engine, seed, steps, dt).map_err(|source| CliError::Trajectory { index: k, seed, source })
    });
    let mut a = Artifact::new("symmetry_check", &["index", "seed", "covariance", "mean", "weight", "pass"]);
    let mut worst: f64 = 0.0;
    for (k, r) in reports.into_iter().enumerate() {
        let r = r?;
        worst = worst.max(r.max());
        a.push(vec![
            k.to_string(),
            base.wrapping_add(k as u64).to_string(),
            num(r.covariance),
            num(r.mean),
            num(r.weight),
            (r.max() < SYMMETRY_TOLERANCE).to_string(),
        ]);
    }
    a.summary = json!({ "steps": steps, "tolerance": SYMMETRY_TOLERANCE, "max_residual": worst, "pass": worst < SYMMETRY_TOLERANCE });
    if worst >= SYMMETRY_TOLERANCE {
        spec_failure(spec, &a)?;
        return Err(CliError::Validation(format!(
            "time-reversal residual {worst:e} exceeds {SYMMETRY_TOLERANCE:e}"
        )));
    }
    Ok(vec![a])
}
