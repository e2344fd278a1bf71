//! Closed-form arc costs, the value function of the synthesis and the
//! pointwise HJB residual.

use rayon::prelude::*;

use crate::curves::{self, classify_point, linspace, RegionLabel};
use crate::error::{Error, Result};
use crate::model::DerivedModel;
use crate::synthesis::{self, optimal_schedule};

fn check_arc(model: &DerivedModel, w: f64, x_i: f64, t_i: f64, t_f: f64) -> Result<()> {
    model.check_level(w)?;
    if !(x_i.is_finite() && (0.0..=1.0).contains(&x_i)) {
        return Err(Error::StateOutOfRange(x_i));
    }
    if !(t_i <= t_f) {
        return Err(Error::InvalidParameter {
            name: "t_f",
            reason: format!("arc must run forward, got [{t_i}, {t_f}]"),
        });
    }
    Ok(())
}

/// `∫ (C w + x^w(t)) dt` over `[t_i, t_f]` for the constant-control arc from `x_i`.
pub fn j_w(model: &DerivedModel, w: f64, x_i: f64, t_i: f64, t_f: f64) -> Result<f64> {
    check_arc(model, w, x_i, t_i, t_f)?;
    Ok(arc_cost(model, w, x_i, t_f - t_i))
}

#[inline]
pub(crate) fn arc_cost(model: &DerivedModel, w: f64, x_i: f64, dt: f64) -> f64 {
    let m = model;
    let (lo, hi) = m.roots(w);
    if dt == 0.0 {
        return 0.0;
    }
    if x_i == lo {
        return (lo + m.c * w) * dt;
    }
    let gap = hi - lo;
    let one_minus_e = -(-m.a * gap * dt).exp_m1();
    (hi + m.c * w) * dt + ((x_i - hi) * one_minus_e / gap).ln_1p() / m.a
}

/// Partial derivatives of [`j_w`] with respect to `x_i`, `t_i` and `t_f`.
pub fn j_w_partials(model: &DerivedModel, w: f64, x_i: f64, t_i: f64, t_f: f64) -> Result<(f64, f64, f64)> {
    check_arc(model, w, x_i, t_i, t_f)?;
    let m = model;
    let (lo, hi) = m.roots(w);
    let gap = hi - lo;
    let e = (-m.a * gap * (t_f - t_i)).exp();
    let d = (x_i - lo) - e * (x_i - hi);
    let dx = (1.0 - e) / (m.a * d);
    let dti = -(hi + m.c * w) - (x_i - hi) * e * gap / d;
    Ok((dx, dti, -dti))
}

/// One arc of the optimal schedule and its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub level: f64,
    pub from: f64,
    pub to: f64,
    pub x_from: f64,
    pub cost: f64,
}

/// Value, arc decomposition and first-order data at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    pub x0: f64,
    pub t0: f64,
    pub label: RegionLabel,
    pub w: f64,
    pub segments: Vec<Segment>,
    /// `None` on the manifolds where the value is not differentiable.
    pub gradient: Option<(f64, f64)>,
    pub hjb_residual: Option<f64>,
}

fn segments(model: &DerivedModel, x0: f64, t0: f64) -> Result<(RegionLabel, Vec<Segment>)> {
    let s = optimal_schedule(model, x0, t0)?;
    let segs = s
        .arcs()
        .into_iter()
        .map(|(level, from, to, x_from)| Segment {
            level,
            from,
            to,
            x_from,
            cost: arc_cost(model, level, x_from, to - from),
        })
        .collect();
    Ok((s.label, segs))
}

/// Value function of the synthesis at `(x0, t0)`.
pub fn value(model: &DerivedModel, x0: f64, t0: f64) -> Result<f64> {
    Ok(segments(model, x0, t0)?.1.iter().fold(0.0, |a, s| a + s.cost))
}

/// Full report: value, arcs, gradient and HJB residual where defined.
pub fn value_report(model: &DerivedModel, x0: f64, t0: f64) -> Result<ValueReport> {
    let (label, segs) = segments(model, x0, t0)?;
    let w = segs.iter().fold(0.0, |a, s| a + s.cost);
    let gradient = gradient(model, x0, t0).ok();
    let hjb_residual = hjb_residual(model, x0, t0).ok();
    Ok(ValueReport {
        x0,
        t0,
        label,
        w,
        segments: segs,
        gradient,
        hjb_residual,
    })
}

/// `∂W_S/∂x0` at a point whose full-screening arc meets `S` at `x_s`.
fn d_ws_dx(model: &DerivedModel, x0: f64, x_s: f64) -> f64 {
    (-x0 + x_s + model.c * model.f(x_s)) / model.f(x0)
}

/// Closed-form `(∂W/∂x0, ∂W/∂t0)`.
///
/// On the line `x0 = B/A` inside the full-screening region the closed form is
/// `0/0`; a one-sided difference is returned there.
pub fn gradient(model: &DerivedModel, x0: f64, t0: f64) -> Result<(f64, f64)> {
    let m = model;
    let label = classify_point(m, x0, t0);
    let excluded = Err(Error::OnExcludedManifold { x: x0, t: t0 });
    match label {
        RegionLabel::SCurve | RegionLabel::GammaCurve | RegionLabel::SigmaCurve => excluded,
        RegionLabel::ThetaComplement | RegionLabel::V => {
            let (dx, dt, _) = j_w_partials(m, 0.0, x0, t0, m.horizon)?;
            Ok((dx, dt))
        }
        RegionLabel::Theta | RegionLabel::SSet => {
            if x0 == m.rmu_plus {
                return one_sided_gradient(m, x0, t0);
            }
            let (xs, _) = crossing(synthesis::last_switch_crossing(m, x0, t0), x0, t0)?;
            let fs = m.f(xs);
            Ok((d_ws_dx(m, x0, xs), -xs - m.c * m.mu_i - m.c * fs))
        }
        RegionLabel::TSet => {
            let (xsig, tsig) = crossing(synthesis::first_switch_crossing(m, x0, t0), x0, t0)?;
            let (xs, _) = crossing(synthesis::last_switch_crossing(m, xsig, tsig), xsig, tsig)?;
            let inflow = m.mu_i + m.f(xsig);
            let dx = -(x0 - xsig - m.c * inflow) / (m.mu_i + m.f(x0));
            let (_, dti, _) = j_w_partials(m, 0.0, x0, t0, tsig)?;
            let dt = dti - inflow * d_ws_dx(m, xsig, xs);
            Ok((dx, dt))
        }
    }
}

fn crossing(hit: Option<(f64, f64)>, x: f64, t: f64) -> Result<(f64, f64)> {
    hit.ok_or_else(|| Error::InternalConsistency(format!("no switch reached from ({x}, {t})")))
}

fn one_sided_gradient(model: &DerivedModel, x0: f64, t0: f64) -> Result<(f64, f64)> {
    let h = 1e-6;
    let w0 = value(model, x0, t0)?;
    let hx = if x0 + h <= 1.0 { h } else { -h };
    let ht = if t0 + h <= model.horizon { h } else { -h };
    let dx = (value(model, x0 + hx, t0)? - w0) / hx;
    let dt = (value(model, x0, t0 + ht)? - w0) / ht;
    Ok((dx, dt))
}

/// `∂W/∂t0 + x0 + (mu_I + f(x0)) ∂W/∂x0 + min(0, (C - ∂W/∂x0) mu_I)`.
pub fn hjb_residual(model: &DerivedModel, x0: f64, t0: f64) -> Result<f64> {
    let m = model;
    if x0 == m.rmu_plus
        && matches!(classify_point(m, x0, t0), RegionLabel::Theta | RegionLabel::SSet)
    {
        return Err(Error::OnExcludedManifold { x: x0, t: t0 });
    }
    let (dx, dt) = gradient(m, x0, t0)?;
    Ok(dt + x0 + (m.mu_i + m.f(x0)) * dx + ((m.c - dx) * m.mu_i).min(0.0))
}

/// `C - ∂J⁰/∂x_i(x, t, T)`; its sign separates the region below the full
/// graph of `t_S` (negative) from the rest (positive).
pub fn free_arc_margin(model: &DerivedModel, x: f64, t: f64) -> f64 {
    let m = model;
    let (lo, hi) = m.roots(0.0);
    let e = (-m.sqrt_delta * (m.horizon - t)).exp();
    let d = (x - lo) - e * (x - hi);
    m.c - (1.0 - e) / (m.a * d)
}

/// Value (and residual) on a uniform grid, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Row-major with `t` as the outer index.
    pub values: Vec<f64>,
    pub residuals: Vec<Option<f64>>,
    pub gradients: Vec<Option<(f64, f64)>>,
    pub labels: Vec<RegionLabel>,
}

impl ValueSurface {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }
}

/// Evaluate `W` on an `(nx + 1) x (nt + 1)` grid over `[0, 1] x [0, T]`.
pub fn value_surface(model: &DerivedModel, nx: usize, nt: usize) -> Result<ValueSurface> {
    let xs = linspace(0.0, 1.0, nx.max(1));
    let ts = linspace(0.0, model.horizon, nt.max(1));
    let nodes: Vec<(f64, f64)> = ts
        .iter()
        .flat_map(|&t| xs.iter().map(move |&x| (x, t)))
        .collect();
    let reports: Vec<ValueReport> = nodes
        .par_iter()
        .map(|&(x, t)| value_report(model, x, t))
        .collect::<Result<_>>()?;
    Ok(ValueSurface {
        values: reports.iter().map(|r| r.w).collect(),
        residuals: reports.iter().map(|r| r.hjb_residual).collect(),
        gradients: reports.iter().map(|r| r.gradient).collect(),
        labels: reports.iter().map(|r| r.label).collect(),
        xs,
        ts,
    })
}

/// Whether `(x, t)` lies strictly below the full graph of `t_S`.
pub fn below_full_last_switch_graph(model: &DerivedModel, x: f64, t: f64) -> bool {
    x > model.r0_minus
        && x < curves::t_s_pole(model)
        && curves::t_s_graph(model, x).map_or(false, |ts| t < ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{t_s, t_sigma};
    use crate::flow::{flow_const, simulate_with_step, ControlSchedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one() -> DerivedModel {
        DerivedModel::from_reduced(0.5, 0.3, 0.03, 5.0, 50.0).unwrap()
    }

    fn two() -> DerivedModel {
        DerivedModel::from_reduced(0.5, 0.3, 0.03, 2.0, 50.0).unwrap()
    }

    #[test]
    fn arc_cost_examples() {
        let m = two();
        assert_eq!(j_w(&m, 0.0, 0.2, 3.0, 3.0).unwrap(), 0.0);
        let (_, hi) = m.equilibria(0.01).unwrap();
        let j = j_w(&m, 0.01, hi, 0.0, 7.0).unwrap();
        assert!((j - (hi + m.c * 0.01) * 7.0).abs() < 1e-14);
        // mpmath quadrature of the exact solution at 40 digits
        let j = j_w(&m, 0.0, 0.2, 0.0, 10.0).unwrap();
        assert!((j - 4.958_671_717_889_859).abs() < 1e-12, "{j}");
        let s = ControlSchedule::new(&m, vec![0.0, 10.0, 50.0], vec![0.0, 0.0]).unwrap();
        let tr = simulate_with_step(&m, &s, 0.2, 1e-3).unwrap();
        let at_10 = tr.samples.iter().find(|p| p.t == 10.0).unwrap().running_cost;
        assert!((at_10 - j).abs() < 1e-8);
        assert!(matches!(j_w(&m, 0.5, 0.2, 0.0, 1.0), Err(Error::ControlOutOfRange { .. })));
    }

    #[test]
    fn partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = two();
        for _ in 0..20 {
            let w = rng.gen_range(0.0..=m.mu_i);
            let x = rng.gen_range(0.05..0.95);
            let ti = rng.gen_range(0.0..40.0);
            let tf = ti + rng.gen_range(0.5..10.0);
            let (dx, dti, dtf) = j_w_partials(&m, w, x, ti, tf).unwrap();
            assert_eq!(dti, -dtf);
            let h = 1e-6;
            let fx = (j_w(&m, w, x + h, ti, tf).unwrap() - j_w(&m, w, x - h, ti, tf).unwrap()) / (2.0 * h);
            let ft = (j_w(&m, w, x, ti + h, tf).unwrap() - j_w(&m, w, x, ti - h, tf).unwrap()) / (2.0 * h);
            assert!((fx - dx).abs() < 1e-6 * dx.abs().max(1.0));
            assert!((ft - dti).abs() < 1e-6 * dti.abs().max(1.0));
        }
    }

    #[test]
    fn free_arc_slope_equals_c_on_s() {
        let m = one();
        for k in 1..20 {
            let x = m.xs_sup * k as f64 / 20.0;
            let t = t_s(&m, x).unwrap();
            if t < 0.0 {
                continue;
            }
            let (dx, _, _) = j_w_partials(&m, 0.0, x, t, m.horizon).unwrap();
            assert!((dx - m.c).abs() < 1e-9);
        }
    }

    #[test]
    fn terminal_and_degenerate_values() {
        for m in [one(), two()] {
            assert_eq!(value(&m, 0.4, m.horizon).unwrap(), 0.0);
        }
        let m = DerivedModel::from_reduced(0.5, 0.3, 0.03, 50.0, 50.0).unwrap();
        for k in 0..=10 {
            let x = k as f64 / 10.0;
            assert_eq!(value(&m, x, 5.0).unwrap(), j_w(&m, 0.0, x, 5.0, 50.0).unwrap());
        }
    }

    #[test]
    fn value_matches_simulated_plan() {
        for m in [one(), two()] {
            for &(x, t) in &[(0.05, 0.0), (0.5, 10.0), (0.97, 42.0), (0.9, 20.0)] {
                let p = synthesis::plan_with_step(&m, x, t, 1e-3).unwrap();
                let w = value(&m, x, t).unwrap();
                assert!((p.total_cost - w).abs() < 1e-8, "{x} {t}: {} vs {w}", p.total_cost);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [one(), two()] {
            let mut checked = 0;
            while checked < 60 {
                let x = rng.gen_range(0.01..0.99);
                let t = rng.gen_range(0.0..49.0);
                let h = 1e-5;
                let near = |xx: f64, tt: f64| classify_point(&m, xx, tt) != classify_point(&m, x, t);
                if near(x + 1e-3, t) || near(x - 1e-3, t) || near(x, t + 1e-3) || near(x, t - 1e-3) {
                    continue;
                }
                if (x - m.rmu_plus).abs() < 1e-3 {
                    continue;
                }
                let (dx, dt) = gradient(&m, x, t).unwrap();
                let fx = (value(&m, x + h, t).unwrap() - value(&m, x - h, t).unwrap()) / (2.0 * h);
                let ft = (value(&m, x, t + h).unwrap() - value(&m, x, t - h).unwrap()) / (2.0 * h);
                assert!((fx - dx).abs() < 1e-6 * dx.abs().max(1.0), "{x} {t} {fx} {dx}");
                assert!((ft - dt).abs() < 1e-6 * dt.abs().max(1.0), "{x} {t} {ft} {dt}");
                let r = hjb_residual(&m, x, t).unwrap();
                assert!(r.abs() < 1e-8, "{r}");
                checked += 1;
            }
        }
    }

    #[test]
    fn excluded_manifolds_are_rejected() {
        let m = two();
        let x = 0.95;
        let ts = t_sigma(&m, x).unwrap();
        assert!(matches!(hjb_residual(&m, x, ts), Err(Error::OnExcludedManifold { .. })));
        assert!(matches!(hjb_residual(&m, m.rmu_plus, 0.0), Err(Error::OnExcludedManifold { .. })));
        assert!(gradient(&m, m.rmu_plus, 0.0).is_ok());
    }

    #[test]
    fn dynamic_programming_step() {
        let h = 1e-3;
        for m in [one(), two()] {
            for &(x, t) in &[(0.05, 0.0), (0.5, 10.0), (0.97, 42.0), (0.9, 20.0), (0.2, 45.0)] {
                let w = synthesis::feedback(&m, x, t);
                let x1 = flow_const(&m, w, x, t, t + h).unwrap();
                let lhs = value(&m, x, t).unwrap();
                let rhs = j_w(&m, w, x, t, t + h).unwrap() + value(&m, x1, t + h).unwrap();
                assert!((lhs - rhs).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn value_is_monotone_in_start_time() {
        for m in [one(), two()] {
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                let mut prev = f64::INFINITY;
                for j in 0..=50 {
                    let w = value(&m, x, j as f64).unwrap();
                    assert!(w <= prev + 1e-12);
                    prev = w;
                }
            }
        }
    }

    #[test]
    fn value_is_continuous_across_curves() {
        let m1 = one();
        let m2 = two();
        let mut pairs: Vec<(DerivedModel, f64, f64)> = Vec::new();
        for k in 1..40 {
            let x = m1.xs_sup * k as f64 / 40.0;
            pairs.push((m1, x, t_s(&m1, x).unwrap()));
            let x = m2.x_bar_c * k as f64 / 40.0;
            pairs.push((m2, x, t_s(&m2, x).unwrap()));
            let x = m2.x_bar_c + (1.0 - m2.x_bar_c) * k as f64 / 40.0;
            pairs.push((m2, x, curves::t_v_boundary(&m2, x).unwrap()));
            pairs.push((m2, x, t_sigma(&m2, x).unwrap()));
        }
        for (m, x, c) in pairs {
            for &eps in &[1e-4, 1e-6] {
                if c - eps < 0.0 || c + eps > m.horizon {
                    continue;
                }
                let jump = (value(&m, x, c + eps).unwrap() - value(&m, x, c - eps).unwrap()).abs();
                assert!(jump < 10.0 * eps, "{x} {c} {eps} {jump}");
            }
        }
    }
}
