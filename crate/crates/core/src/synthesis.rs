//! Optimal feedback, hitting times onto the switching curves and complete
//! optimal plans.

use crate::curves::{self, classify_point, RegionLabel};
use crate::error::{Error, Result};
use crate::flow::{self, advance, ControlSchedule, SwitchEvent, Trajectory};
use crate::model::{Branch, DerivedModel};

/// Subintervals scanned for the first sign change before bisecting.
const SCAN_INTERVALS: usize = 1024;

/// Optimal control level at `(x, t)`.
pub fn feedback(model: &DerivedModel, x: f64, t: f64) -> f64 {
    classify_point(model, x, t).control(model)
}

fn is_full_screening(label: RegionLabel) -> bool {
    matches!(
        label,
        RegionLabel::Theta | RegionLabel::SSet | RegionLabel::SigmaCurve
    )
}

/// Bracket `(lo, hi)`, adjacent to machine precision, around the first `t`
/// in `(t0, T]` with `gap(t) >= 0`, given `gap(t0) < 0`.
fn first_crossing(t0: f64, horizon: f64, gap: impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    let n = SCAN_INTERVALS;
    let mut lo = t0;
    let mut found = None;
    for k in 1..=n {
        let t = if k == n {
            horizon
        } else {
            t0 + (horizon - t0) * k as f64 / n as f64
        };
        if gap(t) >= 0.0 {
            found = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = found?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some((lo, hi))
}

/// `t - t_S(x)` with the conventions used along a full-screening arc.
fn last_switch_gap(model: &DerivedModel, x: f64, t: f64) -> f64 {
    let m = model;
    let ts = match m.regime.branch {
        // beyond x_S^sup an arc has necessarily crossed S already
        Branch::OneSwitch if x >= m.xs_sup => return f64::INFINITY,
        // right of the tangency point S has not been reached yet
        Branch::TwoSwitch if x > m.x_bar_c => return f64::NEG_INFINITY,
        _ => curves::t_s_graph(m, x).unwrap_or(f64::NEG_INFINITY),
    };
    t - ts
}

/// Crossing of the full-screening arc from `(x0, t0)` with `S`, no region
/// check. Right of the tangency state the arc can only leave the region
/// below `S` after passing that state, so the search starts there.
pub(crate) fn last_switch_crossing(model: &DerivedModel, x0: f64, t0: f64) -> Option<(f64, f64)> {
    let m = model;
    let gap = |t: f64| last_switch_gap(m, advance(m, m.mu_i, x0, t - t0), t);
    let start = if x0 > m.mu_tangency {
        let t = flow::time_to_reach(m, m.mu_i, x0, t0, m.mu_tangency).ok()?;
        if t >= m.horizon || gap(t) >= 0.0 {
            return None;
        }
        t
    } else {
        if last_switch_gap(m, x0, t0) >= 0.0 {
            return Some((x0, t0));
        }
        t0
    };
    let bracket = first_crossing(start, m.horizon, gap)?;
    let t = bracket.1;
    Some((advance(m, m.mu_i, x0, t - t0), t))
}

/// `t - t_σ(x)` with the conventions used along a no-screening arc. The
/// sign is flipped so that reaching `σ` from above reads as `>= 0`.
fn first_switch_gap(model: &DerivedModel, x: f64, t: f64) -> f64 {
    let m = model;
    let (lo, hi) = curves::sigma_domain(m);
    if x >= hi {
        return f64::NEG_INFINITY;
    }
    // σ includes its left end only in the two-switch branch
    if x < lo || (x == lo && m.regime.branch == Branch::OneSwitch) {
        return f64::INFINITY;
    }
    let ts = curves::t_sigma(m, x).unwrap_or(f64::NEG_INFINITY);
    ts - t
}

pub(crate) fn first_switch_crossing(model: &DerivedModel, x0: f64, t0: f64) -> Option<(f64, f64)> {
    let m = model;
    if first_switch_gap(m, x0, t0) >= 0.0 {
        return Some((x0, t0));
    }
    let bracket = first_crossing(t0, m.horizon, |t| {
        first_switch_gap(m, advance(m, 0.0, x0, t - t0), t)
    })?;
    let t = bracket.1;
    Some((advance(m, 0.0, x0, t - t0), t))
}

/// Where the full-screening arc from `(x0, t0)` meets the last-switch curve.
/// `None` means the arc reaches the horizon first.
pub fn hit_last_switch(model: &DerivedModel, x0: f64, t0: f64) -> Result<Option<(f64, f64)>> {
    let label = classify_point(model, x0, t0);
    if !(is_full_screening(label) || label == RegionLabel::SCurve) {
        return Err(Error::NotInSwitchRegion { x: x0, t: t0 });
    }
    if label == RegionLabel::SCurve {
        return Ok(Some((x0, t0)));
    }
    Ok(last_switch_crossing(model, x0, t0))
}

/// Where the no-screening arc from `(x0, t0)` meets the first-switch curve.
pub fn hit_first_switch(model: &DerivedModel, x0: f64, t0: f64) -> Result<Option<(f64, f64)>> {
    if !model.has_first_switch() {
        return Err(Error::RegimeMismatch("first-switch curve"));
    }
    match classify_point(model, x0, t0) {
        RegionLabel::SigmaCurve => Ok(Some((x0, t0))),
        RegionLabel::TSet => Ok(first_switch_crossing(model, x0, t0)),
        _ => Err(Error::NotInSwitchRegion { x: x0, t: t0 }),
    }
}

/// Switches and schedule of the optimal control from `(x0, t0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSchedule {
    pub x0: f64,
    pub t0: f64,
    pub label: RegionLabel,
    pub switches: Vec<SwitchEvent>,
    pub schedule: ControlSchedule,
}

impl OptimalSchedule {
    /// `(level, t_from, t_to, x_from)` for each arc, states taken from the
    /// analytic switch points.
    pub fn arcs(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.schedule.levels().len());
        for (i, (w, a, b)) in self.schedule.segments().enumerate() {
            if i > 0 {
                if let Some(s) = self.switches.iter().find(|s| s.t == a) {
                    x = s.x;
                }
            }
            out.push((w, a, b, x));
        }
        out
    }
}

/// Apply the synthesis from `(x0, t0)` without integrating.
pub fn optimal_schedule(model: &DerivedModel, x0: f64, t0: f64) -> Result<OptimalSchedule> {
    let m = model;
    if !(x0.is_finite() && (0.0..=1.0).contains(&x0)) {
        return Err(Error::StateOutOfRange(x0));
    }
    if !(t0.is_finite() && (0.0..=m.horizon).contains(&t0)) {
        return Err(Error::InvalidParameter {
            name: "t0",
            reason: format!("must lie in [0, {}], got {t0}", m.horizon),
        });
    }
    let label = classify_point(m, x0, t0);
    let mu = m.mu_i;
    let mut switches = Vec::new();
    let initial = label.control(m);
    let last_switch = |x: f64, t: f64| {
        last_switch_crossing(m, x, t).ok_or_else(|| {
            Error::InternalConsistency(format!(
                "full-screening arc from ({x}, {t}) never meets the last-switch curve"
            ))
        })
    };
    if t0 < m.horizon {
        if is_full_screening(label) {
            let (xs, ts) = last_switch(x0, t0)?;
            switches.push(SwitchEvent { t: ts, x: xs, from: mu, to: 0.0 });
        } else if label == RegionLabel::TSet {
            if let Some((xsig, tsig)) = first_switch_crossing(m, x0, t0) {
                let (xs, ts) = last_switch(xsig, tsig)?;
                switches.push(SwitchEvent { t: tsig, x: xsig, from: 0.0, to: mu });
                switches.push(SwitchEvent { t: ts, x: xs, from: mu, to: 0.0 });
            }
        }
    }
    // a switch at t0 only changes the initial level
    let pairs: Vec<(f64, f64)> = switches.iter().map(|s| (s.t, s.to)).collect();
    switches.retain(|s| s.t > t0 && s.t < m.horizon);
    let schedule = ControlSchedule::from_switches(m, t0, initial, &pairs)?;
    Ok(OptimalSchedule {
        x0,
        t0,
        label,
        switches,
        schedule,
    })
}

/// Optimal plan with its simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPlan {
    pub x0: f64,
    pub t0: f64,
    pub label: RegionLabel,
    pub switches: Vec<SwitchEvent>,
    pub schedule: ControlSchedule,
    pub trajectory: Trajectory,
    pub total_cost: f64,
}

/// Plan from `(x0, t0)` integrated at the default step.
pub fn plan(model: &DerivedModel, x0: f64, t0: f64) -> Result<OptimalPlan> {
    plan_with_step(model, x0, t0, model.horizon / flow::DEFAULT_STEPS_PER_HORIZON)
}

pub fn plan_with_step(model: &DerivedModel, x0: f64, t0: f64, step: f64) -> Result<OptimalPlan> {
    let s = optimal_schedule(model, x0, t0)?;
    let trajectory = flow::simulate_with_step(model, &s.schedule, x0, step)?;
    Ok(OptimalPlan {
        x0,
        t0,
        label: s.label,
        switches: s.switches,
        schedule: s.schedule,
        total_cost: trajectory.cost,
        trajectory,
    })
}
