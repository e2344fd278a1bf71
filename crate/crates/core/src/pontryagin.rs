//! Extremals of the minimum principle with normal multiplier: Hamiltonian,
//! minimizing control, backward integration of the state and adjoint from
//! `(x_T, 0)`, and the feasible curves of the `(x, λ)` plane.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::DerivedModel;

/// Backward integration stops once the state leaves this box.
pub const STATE_BOX: (f64, f64) = (-0.1, 1.1);

const SWITCH_BISECTIONS: usize = 200;

/// `(C - λ) w + x + λ (mu_I + f(x))`.
pub fn hamiltonian(model: &DerivedModel, x: f64, lambda: f64, w: f64) -> f64 {
    (model.c - lambda) * w + x + lambda * (model.mu_i + model.f(x))
}

/// Level minimizing the Hamiltonian. The tie `λ = C` goes to 0.
pub fn minimizing_control(model: &DerivedModel, _x: f64, lambda: f64) -> f64 {
    if lambda > model.c {
        model.mu_i
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointSample {
    pub t: f64,
    pub x: f64,
    pub lambda: f64,
    /// Minimizing level at this sample.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extremal {
    pub final_state: f64,
    /// Forward time order, ending at `(T, x_T, 0)`.
    pub samples: Vec<AdjointSample>,
    /// Crossings of `λ = C`, forward time order.
    pub switch_times: Vec<f64>,
    pub switch_states: Vec<f64>,
    /// Value of `H` at `T`, equal to `x_T`.
    pub hamiltonian_value: f64,
    /// `max |H - x_T|` over every integration node.
    pub max_hamiltonian_drift: f64,
    /// True when the state left [`STATE_BOX`] before `t = 0`.
    pub left_box: bool,
    /// Level on the interval that ends at `T`.
    pub final_level: f64,
}

impl Extremal {
    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(f64::NAN, |s| s.t)
    }
}

/// Reversed-time vector field: with `s = T - t`,
/// `dx/ds = -(mu_I - w + f)` and `dλ/ds = 1 + λ f'`.
#[inline]
fn reversed(m: &DerivedModel, w: f64, x: f64, l: f64) -> (f64, f64) {
    (-(m.mu_i - w + m.f(x)), 1.0 + l * m.f_prime(x))
}

#[inline]
fn rk4(m: &DerivedModel, w: f64, x: f64, l: f64, h: f64) -> (f64, f64) {
    let (a1, b1) = reversed(m, w, x, l);
    let (a2, b2) = reversed(m, w, x + 0.5 * h * a1, l + 0.5 * h * b1);
    let (a3, b3) = reversed(m, w, x + 0.5 * h * a2, l + 0.5 * h * b2);
    let (a4, b4) = reversed(m, w, x + h * a3, l + h * b3);
    (
        x + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
        l + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
    )
}

/// Backward RK4 from `(x_T, λ = 0)` at `T`, keeping every node.
pub fn backward_extremal(model: &DerivedModel, x_t: f64, step: f64) -> Result<Extremal> {
    backward_extremal_thinned(model, x_t, step, 1)
}

/// As [`backward_extremal`] but keeping every `keep_every`-th node; switch
/// points and both ends are always kept. Drift is measured at every node.
pub fn backward_extremal_thinned(model: &DerivedModel, x_t: f64, step: f64, keep_every: usize) -> Result<Extremal> {
    let m = model;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::StepInvalid(step));
    }
    if !(x_t.is_finite() && (0.0..=1.0).contains(&x_t)) {
        return Err(Error::StateOutOfRange(x_t));
    }
    let keep_every = keep_every.max(1);
    let horizon = m.horizon;
    let h_ref = x_t;

    let mut samples = Vec::new();
    let mut switches = Vec::new();
    let mut drift = 0.0f64;
    let mut left_box = false;

    let (mut x, mut l, mut s) = (x_t, 0.0, 0.0);
    let mut w = minimizing_control(m, x, l);
    let final_level = w;
    samples.push(AdjointSample { t: horizon, x, lambda: l, w });
    let mut k = 0usize;
    while s < horizon {
        let h = step.min(horizon - s);
        let (mut xn, mut ln) = rk4(m, w, x, l, h);
        let mut sn = if h == horizon - s { horizon } else { s + h };
        let mut switched = false;
        if minimizing_control(m, xn, ln) != w {
            // smallest sub-step on the far side of λ = C
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..SWITCH_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let (_, lm) = rk4(m, w, x, l, mid);
                if minimizing_control(m, xn, lm) != w {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            (xn, ln) = rk4(m, w, x, l, hi);
            sn = s + hi;
            switched = true;
        }
        x = xn;
        l = ln;
        s = sn;
        k += 1;
        if !(STATE_BOX.0..=STATE_BOX.1).contains(&x) {
            left_box = true;
            break;
        }
        drift = drift.max((hamiltonian(m, x, l, w) - h_ref).abs());
        if switched {
            w = minimizing_control(m, x, l);
            switches.push((horizon - s, x));
        }
        drift = drift.max((hamiltonian(m, x, l, w) - h_ref).abs());
        if switched || k % keep_every == 0 || s >= horizon {
            samples.push(AdjointSample {
                t: horizon - s,
                x,
                lambda: l,
                w,
            });
        }
    }
    if let Some(last) = samples.last_mut() {
        if last.t.abs() < 1e-9 * horizon {
            last.t = 0.0;
        }
    }
    samples.reverse();
    switches.reverse();
    Ok(Extremal {
        final_state: x_t,
        samples,
        switch_times: switches.iter().map(|p| p.0).collect(),
        switch_states: switches.iter().map(|p| p.1).collect(),
        hamiltonian_value: h_ref,
        max_hamiltonian_drift: drift,
        left_box,
        final_level,
    })
}

/// Extremals for every final state, in input order.
pub fn extremal_field(model: &DerivedModel, finals: &[f64], step: f64, keep_every: usize) -> Result<Vec<Extremal>> {
    finals
        .par_iter()
        .map(|&x_t| backward_extremal_thinned(model, x_t, step, keep_every))
        .collect()
}

fn near_root(x: f64, root: f64) -> bool {
    (x - root).abs() <= 4.0 * f64::EPSILON * root.abs().max(1.0)
}

/// `(x_T - x) / (mu_I + f(x))`.
pub fn lambda_inf(model: &DerivedModel, x: f64, x_t: f64) -> Result<f64> {
    let m = model;
    for root in [m.r0_minus, m.r0_plus] {
        if near_root(x, root) {
            return Err(Error::PoleAtRoot { what: "lambda_inf", x });
        }
    }
    Ok((x_t - x) / (m.mu_i + m.f(x)))
}

/// `(x_ref - x + C f(x_ref)) / f(x)`.
pub fn lambda_sup(model: &DerivedModel, x: f64, x_ref: f64) -> Result<f64> {
    let m = model;
    for root in [0.0, m.rmu_plus] {
        if near_root(x, root) {
            return Err(Error::PoleAtRoot { what: "lambda_sup", x });
        }
    }
    Ok((x_ref - x + m.c * m.f(x_ref)) / m.f(x))
}

/// `-1 / f'(x)`, the `λ`-nullcline of the `w = 0` field.
pub fn lambda_ncl(model: &DerivedModel, x: f64) -> Result<f64> {
    let peak = model.b / (2.0 * model.a);
    if near_root(x, peak) {
        return Err(Error::PoleAtRoot { what: "lambda_ncl", x });
    }
    Ok(-1.0 / model.f_prime(x))
}
