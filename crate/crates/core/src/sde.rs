//! Derivative-free predictor-corrector integrator for SDEs driven by a single
//! scalar Wiener process (Kloeden & Platen, weak order 2). With one noise
//! source the scheme also carries the Milstein correction, so trajectories
//! converge pathwise with strong order 1.

/// A state that supports the linear combinations needed by the scheme.
pub trait LinearState: Clone {
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
}

/// An Ito SDE `dX = a(X) dt + b(X) dW` with scalar noise.
pub trait ScalarSde {
    type State: LinearState;

    fn drift(&self, x: &Self::State) -> Self::State;
    fn diffusion(&self, x: &Self::State) -> Self::State;
}

fn combine<S: LinearState>(base: &S, terms: &[(f64, &S)]) -> S {
    let mut out = base.clone();
    for (a, x) in terms {
        out.axpy(*a, x);
    }
    out
}

/// Advances `x` by one step of length `dt` with noise increment `dw`.
pub fn predictor_corrector<S: ScalarSde>(sde: &S, x: &S::State, dt: f64, dw: f64) -> S::State {
    let sqrt_dt = dt.sqrt();
    let a = sde.drift(x);
    let b = sde.diffusion(x);

    let support = combine(x, &[(dt, &a), (dw, &b)]);
    let upper = combine(x, &[(dt, &a), (sqrt_dt, &b)]);
    let lower = combine(x, &[(dt, &a), (-sqrt_dt, &b)]);
    let b_up = sde.diffusion(&upper);
    let b_lo = sde.diffusion(&lower);

    let milstein = 0.25 * (dw * dw - dt) / sqrt_dt;
    let noise_terms = [
        (0.25 * dw, &b_up),
        (0.25 * dw, &b_lo),
        (0.5 * dw, &b),
        (milstein, &b_up),
        (-milstein, &b_lo),
    ];

    let a_support = sde.drift(&support);
    let mut predictor = combine(x, &noise_terms);
    predictor.axpy(0.5 * dt, &a_support);
    predictor.axpy(0.5 * dt, &a);

    let a_pred = sde.drift(&predictor);
    let mut next = combine(x, &noise_terms);
    next.axpy(0.5 * dt, &a_pred);
    next.axpy(0.5 * dt, &a);
    next
}

impl LinearState for Vec<f64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
}
