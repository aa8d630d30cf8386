use catprobe::analysis::{diagonal_argmax, peak_summary};
use catprobe::coherent::*;
use catprobe::par::Exec;
use catprobe::params::{PhysicalParams, TotalSpin};
use catprobe::record::{trajectory_rng, wiener_increments, MeasurementRecord};
use catprobe::spin::{AtomicCoefficients, Approximation};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

fn preset(two_j: u32) -> PhysicalParams {
    let mut p = PhysicalParams::reichel();
    p.big_j = TotalSpin::from_two_j(two_j);
    p
}

/// RK4 for d alpha/dt = -(kappa/2 + i n g~) alpha + sqrt(kappa1) beta(t).
fn alpha_rk4(p: &PhysicalParams, n: f64, t: f64, beta: impl Fn(f64) -> f64, steps: usize) -> Complex64 {
    let lam = Complex64::new(p.kappa() / 2.0, n * p.g_tilde());
    let f = |s: f64, a: Complex64| -lam * a + p.kappa1.sqrt() * beta(s);
    let h = t / steps as f64;
    let mut a = Complex64::new(0.0, 0.0);
    for k in 0..steps {
        // beta held at its mid-step value so switching times on the grid are exact
        let s = (k as f64 + 0.5) * h;
        let k1 = f(s, a);
        let k2 = f(s, a + k1 * (h / 2.0));
        let k3 = f(s, a + k2 * (h / 2.0));
        let k4 = f(s, a + k3 * h);
        a += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
    }
    a
}

fn random_record(seed: u64, dt: f64, steps: usize, drift: f64) -> MeasurementRecord {
    let incs = wiener_increments(&mut trajectory_rng(seed, 0), dt, steps)
        .into_iter()
        .map(|w| w + drift * dt)
        .collect();
    MeasurementRecord::new(dt, incs)
}

fn random_hermitian_coeffs(big_j: TotalSpin, seed: u64) -> AtomicCoefficients {
    let mut rng = trajectory_rng(seed, 0);
    let d = big_j.dim();
    let a = DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let mut c = &a * a.adjoint();
    let tr = c.trace();
    c /= tr;
    AtomicCoefficients::from_matrix(big_j, c).unwrap()
}

#[test]
fn steady_amplitude_matches_integrated_equation() {
    let p = preset(0);
    let beta = p.beta.re;
    let ode = alpha_rk4(&p, 0.0, 60.0 / p.kappa(), |_| beta, 60_000);
    let closed = alpha_steady(&p, 0.0);
    assert!((ode - closed).norm() < 1e-9, "{ode} vs {closed}");
    assert!((closed.re - 0.1).abs() < 1e-12);
    // (2 sqrt(kappa1) beta / kappa)^2 = probe strength
    assert!((closed.re.powi(2) - p.probe_strength()).abs() < 1e-14);
}

#[test]
fn transient_amplitude_matches_integrated_equation() {
    let p = preset(0);
    let t_off = 2.0 / p.kappa();
    let prof = BetaProfile::switched_off_at(p.beta.re, t_off);
    for n in [-40.0, -3.0, 0.0, 1.0, 25.0] {
        for kt in [0.5, 1.0, 2.0, 3.5] {
            let t = kt / p.kappa();
            let closed = alpha_transient(&p, n, t, &prof);
            let ode = alpha_rk4(&p, n, t, |s| prof.value_at(s), (kt * 20_000.0) as usize);
            assert!((closed - ode).norm() < 1e-7, "n={n} kt={kt}: {closed} vs {ode}");
        }
    }
}

#[test]
fn amplitudes_vanish_for_large_n() {
    let p = preset(0);
    assert!(alpha_steady(&p, 1e7).norm() < 1e-6);
    assert!(alpha_steady(&p, -1e7).norm() < 1e-6);
}

#[test]
fn transient_set_is_conjugation_symmetric() {
    let p = preset(40);
    for kt in [0.1, 1.0, 10.0] {
        let set = AmplitudeSet::transient(&p, kt / p.kappa(), &BetaProfile::constant(p.beta.re));
        assert!(set.conjugation_asymmetry() < 1e-15);
    }
    assert_eq!(AmplitudeSet::steady(&p).conjugation_asymmetry(), 0.0);
}

#[test]
fn spin_half_coefficients_by_direct_evaluation() {
    // 4^(-1/2) * 1! / sqrt(1! 0! 1! 0!) = 1/2 for every entry
    let c = AtomicCoefficients::coherent_x(TotalSpin::from_two_j(1), Approximation::Exact);
    assert!(c.c.iter().all(|z| (z.re - 0.5).abs() < 1e-15));
}

#[test]
fn conditional_state_is_a_density_matrix_with_mirror_symmetry() {
    for two_j in [2u32, 5, 8] {
        let p = preset(two_j);
        let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
        let dt = 0.05 / p.kappa();
        for seed in 0..4 {
            let rec = random_record(seed, dt, 400, 3000.0);
            for model in [AmplitudeModel::Steady, AmplitudeModel::Transient(BetaProfile::constant(p.beta.re))] {
                let s = conditional_state(&p, &c, &rec, &model, false).unwrap();
                assert!(s.rho.hermiticity_error() < 1e-14);
                assert!((s.rho.trace().re - 1.0).abs() < 1e-12);
                assert!(s.rho.trace().im.abs() < 1e-14);
                assert!(s.rho.mirror_asymmetry() < 1e-13);
                assert!(s.weights.iter().all(|w| (0.0..=1.0).contains(w)));
                let pur = s.rho.purity();
                assert!(pur > 0.0 && pur <= 1.0 + 1e-12);
            }
        }
    }
}

#[test]
fn diagonal_ignores_off_diagonal_initial_data() {
    let p = preset(6);
    let a = random_hermitian_coeffs(p.big_j, 3);
    let mut b = a.clone();
    for i in 0..p.big_j.dim() {
        for k in 0..p.big_j.dim() {
            if i != k {
                b.c[(i, k)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    let rec = random_record(11, 0.1 / p.kappa(), 300, 0.0);
    let model = AmplitudeModel::Transient(BetaProfile::constant(p.beta.re));
    let sa = conditional_state(&p, &a, &rec, &model, false).unwrap();
    let sb = conditional_state(&p, &b, &rec, &model, false).unwrap();
    for (x, y) in sa.weights.iter().zip(&sb.weights) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn purity_formula_equals_trace_of_square() {
    for two_j in [1u32, 4, 10, 20] {
        let mut p = preset(two_j);
        p.eta = 0.7;
        let c = random_hermitian_coeffs(p.big_j, two_j as u64);
        let rec = random_record(two_j as u64, 0.1 / p.kappa(), 200, 1000.0);
        for model in [AmplitudeModel::Steady, AmplitudeModel::Transient(BetaProfile::constant(p.beta.re))] {
            for off in [false, true] {
                let s = conditional_state(&p, &c, &rec, &model, off).unwrap();
                let f = purity_full(&p, &c, &rec, &model, off).unwrap();
                assert!((s.rho.purity() - f).abs() < 1e-10, "J={two_j}: {} vs {f}", s.rho.purity());
            }
        }
    }
}

#[test]
fn lossless_pure_probe_off_stays_pure() {
    let p = preset(10);
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    for y in [-2e-3, 0.0, 5e-4, 3e-3] {
        let rec = MeasurementRecord::integrated_only(1e-6, y);
        let pur = purity_full(&p, &c, &rec, &AmplitudeModel::Steady, true).unwrap();
        assert!((pur - 1.0).abs() < 1e-10, "Y={y}: {pur}");
    }
}

#[test]
fn two_state_purity_matches_general_formula() {
    // small 2 g~ / kappa: weaker coupling than the preset
    let mut p = preset(2);
    p.g /= 4.0;
    p.eta = 0.9;
    let t = 50.0 / p.kappa();
    let c = AtomicCoefficients::two_state(p.big_j, 1.0).unwrap();
    let rec = random_record(5, t / 2000.0, 2000, 100.0);
    let eq4 = purity_two_state(&p, 1.0, t);
    let steady = purity_full(&p, &c, &rec, &AmplitudeModel::Steady, false).unwrap();
    assert!((steady - eq4).abs() / eq4 < 1e-12, "{steady} vs {eq4}");
    let transient =
        purity_full(&p, &c, &rec, &AmplitudeModel::Transient(BetaProfile::constant(p.beta.re)), false).unwrap();
    assert!((transient - eq4).abs() / eq4 < 1e-3, "{transient} vs {eq4}");
}

#[test]
fn probe_scaling_leaves_state_invariant() {
    let p = preset(12);
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    let rec = random_record(8, 0.02 / p.kappa(), 500, 2000.0);
    let s = 3.7;
    let mut q = p;
    q.beta *= s;
    let scaled = rec.rescaled(s);
    let a = conditional_state(&p, &c, &rec, &AmplitudeModel::Steady, true).unwrap();
    let b = conditional_state(&q, &c, &scaled, &AmplitudeModel::Steady, true).unwrap();
    assert!(a.rho.max_deviation(&b.rho) < 1e-12);
}

#[test]
fn y_density_integrates_to_one() {
    let mut p = preset(100);
    p.eta = 0.9;
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    let dist = record_probability_y(&p, &c, 1e-6).unwrap();
    let (lo, hi) = dist.support(12.0);
    let total = adaptive_simpson(&|y| dist.pdf(y), lo, hi, 1e-13, 50);
    assert!((total - 1.0).abs() < 1e-10, "{total}");
    assert!(record_probability_y(&p, &c, 0.0).is_err());
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (l + r - whole).abs() < 15.0 * tol {
            return l + r + (l + r - whole) / 15.0;
        }
        rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
    }
    rec(f, a, b, simpson(f, a, b), tol, depth)
}

#[test]
fn single_level_gives_single_gaussian() {
    let p = preset(0);
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    let t = 1e-6;
    let dist = record_probability_y(&p, &c, t).unwrap();
    let mean = 2.0 * (p.eta * p.kappa1).sqrt() * alpha_steady(&p, 0.0).re * t;
    for y in [-1e-3, 0.0, mean, 4e-3] {
        let g = (-(y - mean).powi(2) / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
        assert!((dist.pdf(y) - g).abs() < 1e-12 * g.max(1.0));
    }
}

#[test]
fn more_atoms_shift_mass_to_low_y() {
    let mut cdfs = Vec::new();
    for two_j in [20u32, 100, 200] {
        let mut p = preset(two_j);
        p.eta = 0.9;
        let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
        let dist = record_probability_y(&p, &c, 1e-6).unwrap();
        cdfs.push(dist.cdf(2e-3));
    }
    assert!(cdfs[0] < cdfs[1] && cdfs[1] < cdfs[2], "{cdfs:?}");
}

fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn lossless_detector_off_gives_pure_noise() {
    let mut p = preset(10);
    p.eta = 0.0;
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    let dt = 1e-11;
    let rec = sample_record(&p, &c, 1e5 * dt, dt, 42).unwrap();
    let n = rec.len() as f64;
    let var = rec.increments.iter().map(|d| d * d / dt).sum::<f64>() / n;
    // variance of the sample variance of unit normals is 2 / n
    assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "{var}");
}

#[test]
fn sampled_y_matches_mixture_distribution() {
    for two_j in [0u32, 100] {
        let mut p = preset(two_j);
        p.eta = 0.9;
        let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
        let t = 1e-6;
        let recs = sample_records(&p, &c, t, t / 10.0, 1000, 10_000, Exec::Parallel).unwrap();
        let ys: Vec<f64> = recs.iter().map(|r| r.integrated()).collect();
        let dist = record_probability_y(&p, &c, t).unwrap();
        let d = ks_statistic(ys, |y| dist.cdf(y));
        assert!(d < 1.628 / 100.0, "2J={two_j}: KS {d}");
    }
}

#[test]
fn record_average_reproduces_unconditional_state() {
    let mut p = preset(4);
    p.eta = 1.0;
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    let t = 2e-7;
    let recs = sample_records(&p, &c, t, t, 7, 1000, Exec::Parallel).unwrap();
    let d = p.big_j.dim();
    let states: Vec<DMatrix<Complex64>> = recs
        .iter()
        .map(|r| conditional_state(&p, &c, r, &AmplitudeModel::Steady, false).unwrap().rho.rho)
        .collect();
    let n = states.len() as f64;
    let target = unconditional_state(&p, &c, t, false).unwrap();
    for i in 0..d {
        for k in 0..d {
            let vals: Vec<Complex64> = states.iter().map(|s| s[(i, k)]).collect();
            let mean = vals.iter().sum::<Complex64>() / n;
            let var_re = vals.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / (n - 1.0);
            let var_im = vals.iter().map(|v| (v.im - mean.im).powi(2)).sum::<f64>() / (n - 1.0);
            let tgt = target.rho[(i, k)];
            assert!((mean.re - tgt.re).abs() <= 3.0 * (var_re / n).sqrt() + 1e-12, "({i},{k}) re");
            assert!((mean.im - tgt.im).abs() <= 3.0 * (var_im / n).sqrt() + 1e-12, "({i},{k}) im");
        }
    }
}

#[test]
fn probed_css_state_is_double_peaked() {
    let p = preset(100);
    let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
    let rec = MeasurementRecord::integrated_only(1e-6, 5e-4);
    let s = conditional_state(&p, &c, &rec, &AmplitudeModel::Steady, false).unwrap();
    assert!(s.rho.mirror_asymmetry() < 1e-15);
    let peak = peak_summary(&s.rho);
    assert!(!peak.single_peaked);
    let diag = s.rho.diagonal();
    let centre = diag[p.big_j.index(0.0).unwrap()];
    assert!(centre / peak.peak_height < 0.05, "valley ratio {}", centre / peak.peak_height);
    let est = peak_estimate(&p, 1e-6, 5e-4).unwrap();
    assert!((est.n_p - peak.d_over_2_discrete).abs() <= 1.0, "{} vs {}", est.n_p, peak.d_over_2_discrete);
}

#[test]
fn peak_estimate_tracks_direct_argmax() {
    for two_j in [20u32, 100, 200] {
        let mut p = preset(two_j);
        p.eta = 0.9;
        let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
        let t = 1e-6;
        let mut last = f64::INFINITY;
        for k in 0..=40 {
            let y = -1e-3 + k as f64 * 1.5e-4;
            let rec = MeasurementRecord::integrated_only(t, y);
            let s = conditional_state(&p, &c, &rec, &AmplitudeModel::Steady, false).unwrap();
            let direct = p.big_j.n(diagonal_argmax(p.big_j, &s.weights));
            let est = peak_estimate(&p, t, y).unwrap();
            assert!((est.n_p - direct).abs() <= 1.0, "2J={two_j} Y={y}: {} vs {direct}", est.n_p);
            assert!(est.n_p <= last + 1e-12);
            last = est.n_p;
        }
    }
}

#[test]
fn transient_records_carry_the_integrated_amplitude() {
    // |n> and |-n> give the same Re(alpha), so the mean of Y is deterministic.
    let p = preset(20);
    let n = 4.0;
    let c = AtomicCoefficients::two_state(p.big_j, n).unwrap();
    let beta = p.beta.re;
    let t_off = 8.0 / p.kappa();
    let t = 12.0 / p.kappa();
    let profile = BetaProfile::switched_off_at(beta, t_off);
    let steps = 1200;
    let dt = t / steps as f64;
    let lam = Complex64::new(p.kappa() / 2.0, n * p.g_tilde());
    let a_t = alpha_rk4(&p, n, t, |s| if s < t_off { beta } else { 0.0 }, 20_000);
    let int_alpha = (p.kappa1.sqrt() * beta * t_off - a_t) / lam;
    let expect = 2.0 * (p.eta * p.kappa1).sqrt() * int_alpha.re;

    let count = 4000;
    let ys: Vec<f64> = (0..count)
        .map(|k| sample_record_transient(&p, &c, &profile, t, dt, 500 + k).unwrap().integrated())
        .collect();
    let mean = ys.iter().sum::<f64>() / count as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    let sigma = (t / count as f64).sqrt();
    assert!((mean - expect).abs() < 3.0 * sigma, "{mean:e} vs {expect:e} (sigma {sigma:e})");
    assert!((var / t - 1.0).abs() < 0.1, "variance ratio {}", var / t);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

    #[test]
    fn conditional_state_is_physical(
        two_j in 0u32..60,
        t in 1e-8f64..2e-6,
        y_scale in -3.0f64..3.0,
        eta in 0.1f64..1.0,
        probe_off: bool,
    ) {
        let mut p = preset(two_j);
        p.eta = eta;
        let c = AtomicCoefficients::coherent_x(p.big_j, Approximation::Exact);
        let y = y_scale * t.sqrt();
        let s = conditional_state(&p, &c, &MeasurementRecord::integrated_only(t, y), &AmplitudeModel::Steady, probe_off)
            .unwrap();
        proptest::prop_assert!((s.rho.trace().re - 1.0).abs() < 1e-12);
        proptest::prop_assert!(s.rho.hermiticity_error() < 1e-14);
        proptest::prop_assert!(s.rho.mirror_asymmetry() < 1e-12);
        let purity = s.rho.purity();
        proptest::prop_assert!(purity > 0.0 && purity <= 1.0 + 1e-12, "purity {}", purity);
        proptest::prop_assert!(s.rho.diagonal().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn peak_estimate_stays_in_range(two_j in 2u32..200, y in -2e-3f64..2e-3) {
        let p = preset(two_j);
        let est = peak_estimate(&p, 1e-6, y).unwrap();
        proptest::prop_assert!(est.n_p >= 0.0 && est.n_p <= p.big_j.j() + 1e-12);
    }
}
