//! Phase-space form of the cascaded master equation for one block `rho_nm`.
//!
//! Each field operator acting on `rho_nm` from the left or right becomes a
//! first-order differential operator `u . y + v . grad` on the Wigner function
//! (quadratures `y = (x1, p1, x2, p2)`, vacuum covariance `V = I`). Under the
//! Gaussian ansatz
//!
//! `W = N / (pi^2 sqrt(det V)) exp(-(y - ybar)^T V^-1 (y - ybar))`
//!
//! the equation closes on `(V, ybar, nu = ln N)`. The flow is written without
//! `V^-1`, so `V` may be complex and need not be invertible along the way.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::params::PhysicalParams;

pub type Mat4 = Matrix4<Complex64>;
pub type Vec4 = Vector4<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Wigner correspondence `O rho <-> (u . y + v . grad) W`.
#[derive(Debug, Clone, Copy)]
pub struct PhaseOp {
    pub u: Vec4,
    pub v: Vec4,
}

impl PhaseOp {
    /// Annihilation (or creation) operator of `mode` (0 = cavity 1, 1 = cavity 2).
    pub fn ladder(mode: usize, dagger: bool, side: Side) -> Self {
        let k = 2 * mode;
        let q = if dagger { -I } else { I };
        let mut u = Vec4::zeros();
        u[k] = c(FRAC_1_SQRT_2);
        u[k + 1] = q * FRAC_1_SQRT_2;
        let sign = if (side == Side::Left) != dagger { 0.5 } else { -0.5 };
        Self { u, v: u * c(sign) }
    }
}

fn sym(m: &Mat4) -> Mat4 {
    (m + m.transpose()) * c(0.5)
}

/// Coefficient tables of the generator for one block.
///
/// Quadratic terms `c O1 O2` (O2 acts first) accumulate into the four `k_**`
/// matrices, linear terms into `k_u`, `k_v`, constants into `k0`. The
/// measurement superoperator is kept apart in `b_u`, `b_v`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub k_uu: Mat4,
    pub k_uv: Mat4,
    pub k_vu: Mat4,
    pub k_vv: Mat4,
    pub k_u: Vec4,
    pub k_v: Vec4,
    pub k0: Complex64,
    pub b_u: Vec4,
    pub b_v: Vec4,
}

impl Generator {
    pub fn zero() -> Self {
        Self {
            k_uu: Mat4::zeros(),
            k_uv: Mat4::zeros(),
            k_vu: Mat4::zeros(),
            k_vv: Mat4::zeros(),
            k_u: Vec4::zeros(),
            k_v: Vec4::zeros(),
            k0: c(0.0),
            b_u: Vec4::zeros(),
            b_v: Vec4::zeros(),
        }
    }

    pub fn add_pair(&mut self, coeff: Complex64, o1: PhaseOp, o2: PhaseOp) {
        self.k_uu += o1.u * o2.u.transpose() * coeff;
        self.k_uv += o1.u * o2.v.transpose() * coeff;
        self.k_vu += o1.v * o2.u.transpose() * coeff;
        self.k_vv += o1.v * o2.v.transpose() * coeff;
    }

    pub fn add_single(&mut self, coeff: Complex64, o: PhaseOp) {
        self.k_u += o.u * coeff;
        self.k_v += o.v * coeff;
    }

    pub fn add_measurement(&mut self, coeff: Complex64, o: PhaseOp) {
        self.b_u += o.u * coeff;
        self.b_v += o.v * coeff;
    }

    /// Generator of the block `rho_nm` (`n`, `m` are `Jz` eigenvalues).
    pub fn for_block(p: &PhysicalParams, n: f64, m: f64) -> Self {
        use Side::{Left, Right};
        let a = |d, s| PhaseOp::ladder(0, d, s);
        let cc = |d, s| PhaseOp::ladder(1, d, s);
        let mut gen = Self::zero();

        let gt = p.g_tilde();
        gen.add_pair(-I * gt * n, a(true, Left), a(false, Left));
        gen.add_pair(I * gt * m, a(false, Right), a(true, Right));

        let eps = p.epsilon;
        gen.add_pair(-0.5 * I * eps, cc(true, Left), cc(true, Left));
        gen.add_pair(-0.5 * I * eps.conj(), cc(false, Left), cc(false, Left));
        gen.add_pair(0.5 * I * eps, cc(true, Right), cc(true, Right));
        gen.add_pair(0.5 * I * eps.conj(), cc(false, Right), cc(false, Right));

        for (mode, rate) in [(0, p.kappa()), (1, p.kappa2_total())] {
            if rate == 0.0 {
                continue;
            }
            let op = |d, s| PhaseOp::ladder(mode, d, s);
            gen.add_pair(c(-0.5 * rate), op(true, Left), op(false, Left));
            gen.add_pair(c(-0.5 * rate), op(false, Right), op(true, Right));
            gen.add_pair(c(rate), op(false, Left), op(true, Right));
        }

        let casc = I * (p.kappa1 * p.kappa2).sqrt();
        if p.kappa2 > 0.0 {
            gen.add_pair(casc, a(true, Left), cc(false, Left));
            gen.add_pair(-casc, a(false, Right), cc(true, Right));
            gen.add_pair(casc, a(false, Left), cc(true, Right));
            gen.add_pair(-casc, cc(false, Left), a(true, Right));
        }

        let s1 = p.kappa1.sqrt();
        let s2 = p.kappa2.sqrt();
        let b = p.beta;
        gen.add_single(I * s1 * b, a(true, Left));
        gen.add_single(-I * s1 * b, a(true, Right));
        gen.add_single(I * s1 * b.conj(), a(false, Left));
        gen.add_single(-I * s1 * b.conj(), a(false, Right));
        gen.add_single(-s2 * b, cc(true, Left));
        gen.add_single(s2 * b, cc(true, Right));
        gen.add_single(s2 * b.conj(), cc(false, Left));
        gen.add_single(-s2 * b.conj(), cc(false, Right));

        let se = p.eta.sqrt();
        let ph = Complex64::from_polar(1.0, -p.phi);
        let phc = ph.conj();
        gen.add_measurement(-se * s1 * ph, a(false, Left));
        gen.add_measurement(I * se * s2 * ph, cc(false, Left));
        gen.add_measurement(-se * s1 * phc, a(true, Right));
        gen.add_measurement(-I * se * s2 * phc, cc(true, Right));
        gen
    }

    /// Gain vector `g = V b_u - 2 b_v`; the mean moves by `g dy / 2`.
    fn gain(&self, v: &Mat4) -> Vec4 {
        v * self.b_u - self.b_v * c(2.0)
    }

    /// `dV/dt`, which involves neither the drive nor the record.
    pub fn covariance_rate(&self, v: &Mat4) -> Mat4 {
        let g = self.gain(v);
        let raw = v * self.k_uu * v - v * self.k_uv * c(2.0) - self.k_vu * v * c(2.0)
            + self.k_vv * c(4.0);
        sym(&raw) - g * g.transpose() * c(0.5)
    }

    /// Mean and log-weight coefficients at covariance `v`.
    pub fn coefficients(&self, v: &Mat4) -> FlowCoefficients {
        let g = self.gain(v);
        let k_sym = self.k_uu + self.k_uu.transpose();
        let a = v * k_sym * c(0.5)
            - (self.k_vu + self.k_uv.transpose())
            - g * self.b_u.transpose() * c(0.5);
        let a0 = v * self.k_u * c(0.5) - self.k_v;
        let p = sym(&self.k_uu) - self.b_u * self.b_u.transpose() * c(0.5);
        let p0 = self.k0 + (v * self.k_uu).trace() * 0.5 - self.k_uv.trace();
        FlowCoefficients {
            a,
            a0,
            h: g * c(0.5),
            p,
            p_vec: self.k_u,
            p0,
            b: self.b_u,
        }
    }
}

/// Generator tables rearranged for repeated evaluation along a covariance
/// trajectory. Uses that every covariance it sees is symmetric.
#[derive(Debug, Clone)]
pub struct PreparedGenerator {
    s: Mat4,
    lin: Mat4,
    k_vv4: Mat4,
    p: Mat4,
    p0: Complex64,
    k_u: Vec4,
    k_v: Vec4,
    b_u: Vec4,
    b_v: Vec4,
}

impl PreparedGenerator {
    pub fn new(gen: &Generator) -> Self {
        let s = sym(&gen.k_uu);
        Self {
            s,
            lin: gen.k_vu + gen.k_uv.transpose(),
            k_vv4: gen.k_vv * c(4.0),
            p: s - gen.b_u * gen.b_u.transpose() * c(0.5),
            p0: gen.k0 - gen.k_uv.trace(),
            k_u: gen.k_u,
            k_v: gen.k_v,
            b_u: gen.b_u,
            b_v: gen.b_v,
        }
    }

    /// Measurement vector `b_u`.
    pub fn b_u(&self) -> &Vec4 {
        &self.b_u
    }

    /// `dV/dt` and the flow coefficients at a symmetric `v`.
    pub fn stage(&self, v: &Mat4) -> (Mat4, FlowCoefficients) {
        let g = v * self.b_u - self.b_v * c(2.0);
        let w = v * self.s;
        let rate = sym(&(w * v - self.lin * v * c(2.0) + self.k_vv4)) - g * g.transpose() * c(0.5);
        let k = FlowCoefficients {
            a: w - self.lin - g * self.b_u.transpose() * c(0.5),
            a0: v * self.k_u * c(0.5) - self.k_v,
            h: g * c(0.5),
            p: self.p,
            p_vec: self.k_u,
            p0: self.p0 + w.trace() * 0.5,
            b: self.b_u,
        };
        (rate, k)
    }
}

/// Right-hand sides at a fixed covariance:
/// `d ybar = (a ybar + a0) dt + h dy`,
/// `d nu = (ybar^T p ybar + p_vec . ybar + p0) dt + (b . ybar) dy`.
#[derive(Debug, Clone)]
pub struct FlowCoefficients {
    pub a: Mat4,
    pub a0: Vec4,
    pub h: Vec4,
    pub p: Mat4,
    pub p_vec: Vec4,
    pub p0: Complex64,
    pub b: Vec4,
}

impl FlowCoefficients {
    pub fn mean_drift(&self, y: &Vec4) -> Vec4 {
        self.a * y + self.a0
    }

    pub fn log_weight_drift(&self, y: &Vec4) -> Complex64 {
        (y.transpose() * self.p * y)[0] + self.p_vec.dot(y) + self.p0
    }

    pub fn log_weight_noise(&self, y: &Vec4) -> Complex64 {
        self.b.dot(y)
    }
}

/// One predictor-corrector step of a block, written as an explicit map:
/// `ybar' = m ybar + c + d dy` and
/// `nu' - nu = ybar^T r ybar + ybar . (r1 + r_dy dy) + s0 + s1 dy + s2 dy^2`.
///
/// Since the covariance stages do not depend on the noise, the scheme is
/// affine in the mean and quadratic in the log weight; the map is exact.
#[derive(Debug, Clone)]
pub struct StepMap {
    pub m: Mat4,
    pub c: Vec4,
    pub d: Vec4,
    pub r: Mat4,
    pub r1: Vec4,
    pub r_dy: Vec4,
    pub s0: Complex64,
    pub s1: Complex64,
    pub s2: Complex64,
}

impl StepMap {
    /// Builds the map for one step from `v0` and returns it with the new covariance.
    pub fn build(gen: &PreparedGenerator, v0: &Mat4, dt: f64) -> (Self, Mat4) {
        let dtc = c(dt);
        let half = c(0.5 * dt);
        let (f0, c0) = gen.stage(v0);
        let v1 = v0 + f0 * dtc;
        let (f1, c1) = gen.stage(&v1);
        let v2 = v0 + (f1 + f0) * half;
        let (f2, c2) = gen.stage(&v2);
        let v_next = sym(&(v0 + (f2 + f0) * half));
        (Self::from_stages(&c0, &c1, &c2, dt), v_next)
    }

    /// Map for a covariance that no longer changes.
    pub fn frozen(gen: &PreparedGenerator, v: &Mat4, dt: f64) -> Self {
        let (_, k) = gen.stage(v);
        Self::from_stages(&k, &k, &k, dt)
    }

    fn from_stages(c0: &FlowCoefficients, c1: &FlowCoefficients, c2: &FlowCoefficients, dt: f64) -> Self {
        let id = Mat4::identity();
        let dtc = c(dt);
        let half = c(0.5 * dt);

        let ms = id + c0.a * dtc;
        let cs = c0.a0 * dtc;
        let hp = (c0.h + c1.h) * c(0.5);

        let m2 = id + (c1.a * ms + c0.a) * half;
        let c2v = (c1.a * cs + c1.a0 + c0.a0) * half;
        let d2 = c1.a * c0.h * half + hp;

        let m = id + (c2.a * m2 + c0.a) * half;
        let cv = (c2.a * c2v + c2.a0 + c0.a0) * half;
        let d = c2.a * d2 * half + hp;

        let p2 = &c2.p;
        let m2t = m2.transpose();
        let q = m2t * p2;
        let r = sym(&((q * m2 + c0.p) * half));
        let r1 = (q * c2v * c(2.0) + m2t * c2.p_vec + c0.p_vec) * half;
        let r_dy = q * d2 * dtc + (c1.b + c0.a.tr_mul(&c1.b) * dtc + c0.b) * c(0.5);
        let quad = |x: &Vec4, y: &Vec4| (x.transpose() * p2 * y)[0];
        let b1h0 = c1.b.dot(&c0.h);
        let s0 = (quad(&c2v, &c2v) + c2.p_vec.dot(&c2v) + c2.p0 + c0.p0) * half - b1h0 * half;
        let s1 = (quad(&c2v, &d2) * 2.0 + c2.p_vec.dot(&d2)) * half + c1.b.dot(&c0.a0) * half;
        let s2 = quad(&d2, &d2) * half + b1h0 * 0.5;
        Self {
            m,
            c: cv,
            d,
            r,
            r1,
            r_dy,
            s0,
            s1,
            s2,
        }
    }

    /// Applies the map to one block, returning the log-weight increment.
    pub fn apply(&self, y: &mut Vec4, dy: f64) -> Complex64 {
        let dyc = c(dy);
        let dnu = (y.transpose() * self.r * *y)[0]
            + y.dot(&(self.r1 + self.r_dy * dyc))
            + self.s0
            + self.s1 * dy
            + self.s2 * (dy * dy);
        *y = self.m * *y + self.c + self.d * dyc;
        dnu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{predictor_corrector, LinearState, ScalarSde};

    fn squeezed() -> PhysicalParams {
        let mut p = PhysicalParams::reichel_squeezed();
        p.epsilon = Complex64::new(0.0, 0.05 * p.kappa2);
        p.beta = Complex64::new(0.0, 0.3 * p.kappa1.sqrt());
        p.big_j = crate::params::TotalSpin::from_two_j(2);
        p
    }

    #[test]
    fn vacuum_is_fixed_without_squeezing() {
        let mut p = PhysicalParams::reichel();
        p.big_j = crate::params::TotalSpin::from_two_j(4);
        for (n, m) in [(0.0, 0.0), (2.0, -1.0), (-2.0, -2.0)] {
            let gen = Generator::for_block(&p, n, m);
            let rate = gen.covariance_rate(&Mat4::identity());
            assert!(rate.iter().all(|x| x.norm() < 1e-6 * p.kappa()), "{rate}");
        }
    }

    #[test]
    fn ladder_correspondences_annihilate_vacuum() {
        // a rho = 0 and rho a^dag = 0 for the vacuum: u - 2 v = 0 at V = I.
        for side in [Side::Left, Side::Right] {
            let dag = side == Side::Right;
            let op = PhaseOp::ladder(1, dag, side);
            assert!((op.u - op.v * c(2.0)).norm() < 1e-15);
        }
    }

    #[derive(Clone)]
    struct Block {
        v: Mat4,
        y: Vec4,
        nu: Complex64,
    }

    impl LinearState for Block {
        fn axpy(&mut self, a: f64, x: &Self) {
            self.v += x.v * c(a);
            self.y += x.y * c(a);
            self.nu += x.nu * a;
        }
    }

    /// The block SDE driven by `dy`, fed to the generic scheme.
    struct BlockSde<'a>(&'a Generator);

    impl ScalarSde for BlockSde<'_> {
        type State = Block;
        fn drift(&self, x: &Block) -> Block {
            let k = self.0.coefficients(&x.v);
            Block {
                v: self.0.covariance_rate(&x.v),
                y: k.mean_drift(&x.y),
                nu: k.log_weight_drift(&x.y),
            }
        }
        fn diffusion(&self, x: &Block) -> Block {
            let k = self.0.coefficients(&x.v);
            Block {
                v: Mat4::zeros(),
                y: k.h,
                nu: k.log_weight_noise(&x.y),
            }
        }
    }

    #[test]
    fn step_map_equals_generic_scheme() {
        let p = squeezed();
        let gen = Generator::for_block(&p, 1.0, -1.0);
        let dt = 1e-3 / p.kappa();
        let mut v = Mat4::identity();
        v[(0, 1)] = Complex64::new(0.1, 0.05);
        v[(1, 0)] = v[(0, 1)];
        v[(2, 2)] = c(1.3);
        let y = Vec4::new(c(0.2), Complex64::new(-0.1, 0.3), c(0.05), Complex64::new(0.0, -0.2));
        let x = Block { v, y, nu: Complex64::new(-0.4, 0.2) };
        for dy in [0.0, 2.0 * dt.sqrt(), -1.3 * dt.sqrt()] {
            let expect = predictor_corrector(&BlockSde(&gen), &x, dt, dy);
            let (map, v_next) = StepMap::build(&PreparedGenerator::new(&gen), &x.v, dt);
            let mut y_next = x.y;
            let nu_next = x.nu + map.apply(&mut y_next, dy);
            assert!((v_next - expect.v).norm() < 1e-13);
            assert!((y_next - expect.y).norm() < 1e-13, "{}", (y_next - expect.y).norm());
            assert!((nu_next - expect.nu).norm() < 1e-13);
        }
    }

    #[test]
    fn covariance_rate_ignores_drive() {
        let p = squeezed();
        let mut q = p;
        q.beta = c(0.0);
        let v = Mat4::identity() * c(1.2);
        let a = Generator::for_block(&p, 1.0, 0.0).covariance_rate(&v);
        let b = Generator::for_block(&q, 1.0, 0.0).covariance_rate(&v);
        assert_eq!(a, b);
    }
}
