//! Switching curves in the `(x, t)` strip and pointwise region labels.
//!
//! `S` is the graph of the last-switch time `t_S`, `σ` the graph of the
//! first-switch time `t_σ` and `Γ` the `w = 0` orbit through the tangency
//! point `(x̄_C, t_S(x̄_C))`. The last two only exist when `x̄_C > r₀⁺`.
//!
//! Full-screening orbits touch `S` at `x̄_C - C mu_I / 2`. Right of that
//! state an orbit starting above `S` dips under it and switches when it
//! comes back up, so `S` stops bounding the no-screening region. There
//! the boundary is the curve on which screening now and never screening
//! cost the same. In the two-switch branch it meets `σ` at a junction
//! state and continues as the `w = 0` orbit through that point, which is
//! `Γ` shifted in time.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::time_to_reach;
use crate::model::{Branch, DerivedModel};
use crate::value::arc_cost;

/// Relative half-width of the band that counts as lying on a curve.
pub const CURVE_BAND: f64 = 1e-12;

/// Absolute band used by [`classify_point`].
pub fn default_band(model: &DerivedModel) -> f64 {
    CURVE_BAND * model.horizon.max(1.0)
}

fn out_of_domain(what: &'static str, value: f64, lo: f64, hi: f64) -> Error {
    Error::OutOfDomain { what, value, lo, hi }
}

fn require_two_switch(model: &DerivedModel, what: &'static str) -> Result<()> {
    match model.regime.branch {
        Branch::TwoSwitch => Ok(()),
        Branch::OneSwitch => Err(Error::RegimeMismatch(what)),
    }
}

fn require_first_switch(model: &DerivedModel, what: &'static str) -> Result<()> {
    if model.has_first_switch() {
        Ok(())
    } else {
        Err(Error::RegimeMismatch(what))
    }
}

/// Last-switch state of the optimal arc that ends at `x_T`.
pub fn x_s_of_xt(model: &DerivedModel, x_t: f64) -> Result<f64> {
    let m = model;
    if !(x_t > m.r0_minus && x_t <= m.xt_sup) {
        return Err(out_of_domain("x_S", x_t, m.r0_minus, m.xt_sup));
    }
    if x_t == m.r0_plus {
        return Ok(if m.x_bar_c < m.r0_plus {
            2.0 * m.x_bar_c - m.r0_plus
        } else {
            m.r0_plus
        });
    }
    // same quadratic on both sides of r0+, written around r0+
    let gap = m.x_bar_c - m.r0_plus;
    let kappa = gap * gap - (x_t - m.r0_plus) / (m.a * m.c);
    Ok(m.x_bar_c - kappa.max(0.0).sqrt())
}

/// Final state reached from last-switch state `x_s`.
pub fn x_t_of_xs(model: &DerivedModel, x_s: f64) -> Result<f64> {
    let m = model;
    if !(x_s > m.r0_minus && x_s < m.xs_sup) {
        return Err(out_of_domain("x_T", x_s, m.r0_minus, m.xs_sup));
    }
    Ok(m.c * (m.mu_i + m.f(x_s)) + x_s)
}

/// Right end of the natural domain of the `t_S` formula, `2 x̄_C - r₀⁺`.
pub fn t_s_pole(model: &DerivedModel) -> f64 {
    1.0 / (model.a * model.c) + model.r0_minus
}

/// The `t_S` formula on its whole natural domain `(-inf, 2 x̄_C - r₀⁺]`.
/// The right end maps to `-inf`.
pub fn t_s_graph(model: &DerivedModel, x: f64) -> Result<f64> {
    let m = model;
    let pole = t_s_pole(m);
    if !(x <= pole) {
        return Err(out_of_domain("t_S", x, f64::NEG_INFINITY, pole));
    }
    if x == pole {
        return Ok(f64::NEG_INFINITY);
    }
    let ac = m.a * m.c;
    let num = 1.0 - ac * (x - m.r0_plus);
    let den = 1.0 - ac * (x - m.r0_minus);
    Ok(m.horizon - (num / den).ln() / m.sqrt_delta)
}

/// Time of the last switch as a function of the switching state, on
/// `(r₀⁻, x_S^sup]`. At `x_S^sup` the one-switch branch returns `-inf`.
pub fn t_s(model: &DerivedModel, x_s: f64) -> Result<f64> {
    let m = model;
    if !(x_s > m.r0_minus && x_s <= m.xs_sup) {
        return Err(out_of_domain("t_S", x_s, m.r0_minus, m.xs_sup));
    }
    if m.regime.branch == Branch::OneSwitch && x_s >= m.xs_sup.min(t_s_pole(m)) {
        return Ok(f64::NEG_INFINITY);
    }
    t_s_graph(m, x_s)
}

/// `t_S'(x)`; negative wherever defined.
pub fn t_s_prime(model: &DerivedModel, x: f64) -> f64 {
    let m = model;
    let ac = m.a * m.c;
    -ac * m.c / ((1.0 - ac * (x - m.r0_plus)) * (1.0 - ac * (x - m.r0_minus)))
}

/// Domain `(lo, hi)` of `t_σ`, with `lo` included when `x̄_C > r₀⁺`.
pub fn sigma_domain(model: &DerivedModel) -> (f64, f64) {
    (2.0 * model.x_bar_c - model.xs_sup, 2.0 * model.x_bar_c - model.rmu_plus)
}

/// Time of the first switch as a function of the first-switch state.
pub fn t_sigma(model: &DerivedModel, x_sigma: f64) -> Result<f64> {
    let m = model;
    require_first_switch(m, "first-switch curve")?;
    let (lo, hi) = sigma_domain(m);
    if !(x_sigma >= lo && x_sigma <= hi) {
        return Err(out_of_domain("t_sigma", x_sigma, lo, hi));
    }
    if x_sigma == hi {
        return Ok(f64::NEG_INFINITY);
    }
    if x_sigma == m.x_bar_c {
        return t_s(m, m.x_bar_c);
    }
    let x_s = 2.0 * m.x_bar_c - x_sigma;
    let arc = ((x_s / x_sigma) * ((x_sigma - m.rmu_plus) / (x_s - m.rmu_plus))).ln() / m.b;
    Ok(t_s(m, x_s)? - arc)
}

/// Time along the `w = 0` orbit through the tangency point, on `(r₀⁺, 1]`.
pub fn t_gamma(model: &DerivedModel, x: f64) -> Result<f64> {
    let m = model;
    require_two_switch(m, "limit curve")?;
    let hi = m.x_bar_c.max(1.0);
    if !(x > m.r0_plus && x <= hi) {
        return Err(out_of_domain("t_Gamma", x, m.r0_plus, hi));
    }
    let anchor = t_s(m, m.x_bar_c)?;
    if x == m.x_bar_c {
        return Ok(anchor);
    }
    Ok(free_orbit_time(m, m.x_bar_c, anchor, x))
}

/// Time at which the `w = 0` orbit through `(x_a, t_a)` passes `x`, both
/// states above `r₀⁺`.
fn free_orbit_time(m: &DerivedModel, x_a: f64, t_a: f64, x: f64) -> f64 {
    let log = ((x - m.r0_minus) / (x_a - m.r0_minus)).ln() + ((x_a - m.r0_plus) / (x - m.r0_plus)).ln();
    t_a + log / m.sqrt_delta
}

/// `t_Γ'(x)`.
pub fn t_gamma_prime(model: &DerivedModel, x: f64) -> f64 {
    -1.0 / (model.a * (x - model.r0_plus) * (x - model.r0_minus))
}

const JUNCTION_SCAN: usize = 512;
const INDIFFERENCE_SCAN: usize = 256;

/// Bisect `g` on `[lo, hi]` with `g(lo) <= 0 < g(hi)` down to adjacent floats.
fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Cost of never screening minus the cost of screening from `(x, t)` until
/// the last switch at `(x_s, t_hit)`, then stopping.
fn screening_advantage(m: &DerivedModel, x: f64, t: f64, x_s: f64, t_hit: f64) -> f64 {
    arc_cost(m, 0.0, x, m.horizon - t)
        - arc_cost(m, m.mu_i, x, t_hit - t)
        - arc_cost(m, 0.0, x_s, m.horizon - t_hit)
}

fn sigma_advantage(m: &DerivedModel, x: f64) -> f64 {
    let x_s = 2.0 * m.x_bar_c - x;
    match (t_sigma(m, x), t_s(m, x_s)) {
        (Ok(t), Ok(ts)) if t.is_finite() => screening_advantage(m, x, t, x_s, ts),
        _ => f64::NAN,
    }
}

/// First state on `σ` at which switching beats never screening. Only the
/// part of `σ` whose screening arcs cross `S` upward is searched. Falls
/// back to the right end of the `σ` domain.
pub(crate) fn junction_state(model: &DerivedModel) -> f64 {
    let m = model;
    if !m.has_first_switch() {
        return f64::INFINITY;
    }
    let (lo, hi) = sigma_domain(m);
    let lo = lo.max(2.0 * m.x_bar_c - m.mu_tangency);
    if !(lo < hi) {
        return hi;
    }
    if sigma_advantage(m, lo) > 0.0 {
        return lo;
    }
    let step = (hi - lo) / JUNCTION_SCAN as f64;
    let mut prev = lo;
    for k in 1..JUNCTION_SCAN {
        let x = lo + step * k as f64;
        if sigma_advantage(m, x) > 0.0 {
            return bisect(prev, x, |z| sigma_advantage(m, z));
        }
        prev = x;
    }
    hi
}

/// Right end of the domain of [`t_indifference`].
fn indifference_end(m: &DerivedModel) -> f64 {
    if m.has_first_switch() {
        m.v_junction.min(sigma_domain(m).1)
    } else {
        1.0
    }
}

/// Time at which screening until `S` and never screening cost the same,
/// for `x` between the tangency state `x̄_C - C mu_I / 2` and the
/// junction with `σ`. `-inf` when screening never wins on that vertical.
pub fn t_indifference(model: &DerivedModel, x: f64) -> Result<f64> {
    let m = model;
    let touch = m.mu_tangency;
    let end = indifference_end(m);
    if !(x >= touch && x <= end) {
        return Err(out_of_domain("t_indifference", x, touch, end));
    }
    if x == touch {
        return t_s(m, x);
    }
    // Parametrize by the last-switch state, which lies left of the
    // tangency state on the crossing where the arc leaves the region below S.
    let time_of = |x_s: f64| -> Option<(f64, f64)> {
        let ts = t_s(m, x_s).ok()?;
        let tau = time_to_reach(m, m.mu_i, x, 0.0, x_s).ok()?;
        Some((ts - tau, ts))
    };
    let psi = |x_s: f64| match time_of(x_s) {
        Some((t, ts)) => screening_advantage(m, x, t, x_s, ts),
        None => f64::NAN,
    };
    let bottom = m.rmu_plus.max(m.r0_minus).max(0.0);
    let step = (touch - bottom) / INDIFFERENCE_SCAN as f64;
    let mut prev = touch;
    for k in 1..INDIFFERENCE_SCAN {
        let x_s = touch - step * k as f64;
        if psi(x_s) > 0.0 {
            let root = -bisect(-prev, -x_s, |z| psi(-z));
            return time_of(root)
                .map(|(t, _)| t)
                .ok_or_else(|| Error::InternalConsistency("indifference root".into()));
        }
        prev = x_s;
    }
    Ok(f64::NEG_INFINITY)
}

/// Lower boundary of the no-screening region at state `x`: `S` up to the
/// tangency state, then the indifference curve, then, when `σ` exists, the
/// `w = 0` orbit through the junction with `σ`. `-inf` where no point of
/// the vertical screens.
pub fn t_v_boundary(model: &DerivedModel, x: f64) -> Result<f64> {
    let m = model;
    if x <= m.mu_tangency {
        return match m.regime.branch {
            Branch::OneSwitch if x >= m.xs_sup => Ok(f64::NEG_INFINITY),
            _ => t_s_graph(m, x),
        };
    }
    let end = indifference_end(m);
    if x <= end {
        return t_indifference(m, x);
    }
    let x_j = m.v_junction;
    if !m.has_first_switch() || x_j >= sigma_domain(m).1 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(free_orbit_time(m, x_j, t_sigma(m, x_j)?, x))
}

/// Region of a point in the `(x, t)` strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionLabel {
    /// Screening region when there is no first switch.
    Theta,
    SCurve,
    /// Everything else when there is no first switch.
    ThetaComplement,
    /// No-screening region when a first switch exists.
    V,
    /// Boundary of the no-screening region where it leaves `S`.
    GammaCurve,
    /// Screening region when a first switch exists.
    SSet,
    SigmaCurve,
    /// Above `σ` and below `V`.
    TSet,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Theta => "Theta",
            RegionLabel::SCurve => "S_curve",
            RegionLabel::ThetaComplement => "ThetaComplement",
            RegionLabel::V => "V",
            RegionLabel::GammaCurve => "Gamma_curve",
            RegionLabel::SSet => "Sset",
            RegionLabel::SigmaCurve => "Sigma_curve",
            RegionLabel::TSet => "Tset",
        }
    }

    /// Control prescribed by the synthesis on this label.
    pub fn control(self, model: &DerivedModel) -> f64 {
        match self {
            RegionLabel::Theta | RegionLabel::SSet | RegionLabel::SigmaCurve => model.mu_i,
            _ => 0.0,
        }
    }

    pub fn is_curve(self) -> bool {
        matches!(
            self,
            RegionLabel::SCurve | RegionLabel::GammaCurve | RegionLabel::SigmaCurve
        )
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Label the point with the default curve band.
pub fn classify_point(model: &DerivedModel, x: f64, t: f64) -> RegionLabel {
    classify_point_with_band(model, x, t, default_band(model))
}

/// Label the point, counting `|t - curve(x)| <= band` as on the curve.
/// The boundary of the no-screening region wins over `σ`.
pub fn classify_point_with_band(model: &DerivedModel, x: f64, t: f64, band: f64) -> RegionLabel {
    let m = model;
    let near = |c: f64| (t - c).abs() <= band;
    let tv = t_v_boundary(m, x).unwrap_or(f64::NEG_INFINITY);
    if near(tv) {
        return if x <= m.mu_tangency {
            RegionLabel::SCurve
        } else {
            RegionLabel::GammaCurve
        };
    }
    match m.has_first_switch() {
        false => {
            if t < tv {
                RegionLabel::Theta
            } else {
                RegionLabel::ThetaComplement
            }
        }
        true => {
            if t > tv {
                return RegionLabel::V;
            }
            if x <= m.v_junction {
                return RegionLabel::SSet;
            }
            let (_, hi) = sigma_domain(m);
            if x < hi {
                let tsig = t_sigma(m, x).unwrap_or(f64::NEG_INFINITY);
                if near(tsig) {
                    return RegionLabel::SigmaCurve;
                }
                if t < tsig {
                    return RegionLabel::SSet;
                }
            }
            RegionLabel::TSet
        }
    }
}

/// Sampled polyline of one curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSamples {
    pub name: &'static str,
    pub points: Vec<(f64, f64)>,
}

/// Region labels on a uniform grid plus curve polylines.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisDiagram {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Row-major with `t` as the outer index.
    pub labels: Vec<RegionLabel>,
    pub curves: Vec<CurveSamples>,
}

impl SynthesisDiagram {
    pub fn label(&self, i: usize, j: usize) -> RegionLabel {
        self.labels[j * self.xs.len() + i]
    }
}

/// `n + 1` equally spaced points on `[lo, hi]` with exact endpoints.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            if k == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / n as f64
            }
        })
        .collect()
}

fn sample_curve(
    name: &'static str,
    lo: f64,
    hi: f64,
    n: usize,
    eval: impl Fn(f64) -> Result<f64>,
) -> CurveSamples {
    let points = if lo < hi {
        linspace(lo, hi, n)
            .into_iter()
            .filter_map(|x| eval(x).ok().filter(|t| t.is_finite()).map(|t| (x, t)))
            .collect()
    } else {
        Vec::new()
    };
    CurveSamples { name, points }
}

/// Curves present in the model's regime, `n + 1` abscissae each.
/// `S` is sampled over its full switching domain, including negative states.
pub fn curve_samples(model: &DerivedModel, n: usize) -> Vec<CurveSamples> {
    let m = model;
    let mut out = vec![sample_curve("S", m.r0_minus, m.xs_sup, n, |x| {
        if x == m.r0_minus {
            Err(Error::RegimeMismatch("open end"))
        } else {
            t_s(m, x)
        }
    })];
    if m.has_first_switch() {
        let (lo, hi) = sigma_domain(m);
        out.push(sample_curve("sigma", lo, hi, n, |x| t_sigma(m, x)));
    }
    if m.regime.branch == Branch::TwoSwitch {
        out.push(sample_curve("Gamma", m.r0_plus, 1.0, n, |x| t_gamma(m, x)));
    }
    out.push(sample_curve("V_boundary", 0.0, 1.0, n, |x| t_v_boundary(m, x)));
    out
}

/// Label an `(nx + 1) x (nt + 1)` grid over `[0, 1] x [0, T]`.
pub fn synthesis_diagram(model: &DerivedModel, nx: usize, nt: usize, curve_points: usize) -> SynthesisDiagram {
    let xs = linspace(0.0, 1.0, nx.max(1));
    let ts = linspace(0.0, model.horizon, nt.max(1));
    let labels = ts
        .par_iter()
        .flat_map_iter(|&t| xs.iter().map(move |&x| classify_point(model, x, t)))
        .collect();
    SynthesisDiagram {
        xs,
        ts,
        labels,
        curves: curve_samples(model, curve_points),
    }
}
