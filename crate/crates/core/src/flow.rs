//! Closed-form flow of the controlled logistic equation and a fixed-step
//! RK4 integrator used as the numeric reference for arbitrary schedules.

use crate::error::{Error, Result};
use crate::model::DerivedModel;

/// Below this distance from `r_w^+` the closed form returns the equilibrium.
const EQUILIBRIUM_SNAP: f64 = 1e-13;

/// Number of RK4 steps over the horizon used by [`simulate`].
pub const DEFAULT_STEPS_PER_HORIZON: f64 = 1e5;

fn check_state(x: f64) -> Result<()> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::StateOutOfRange(x))
    }
}

/// Closed-form state after `dt >= 0` time units at constant control `w`.
///
/// Uses the offset form `r+ + (r+ - r-)(x0 - r+) e / ((x0 - r-) - e (x0 - r+))`
/// with the decaying exponential `e = exp(-A (r+ - r-) dt)`.
#[inline]
pub(crate) fn advance(model: &DerivedModel, w: f64, x0: f64, dt: f64) -> f64 {
    let (lo, hi) = model.roots(w);
    if x0 == lo || dt == 0.0 {
        return x0;
    }
    if (x0 - hi).abs() < EQUILIBRIUM_SNAP {
        return hi;
    }
    let gap = hi - lo;
    let e = (-model.a * gap * dt).exp();
    let denom = (x0 - lo) - e * (x0 - hi);
    hi + gap * (x0 - hi) * e / denom
}

/// `x^w(t; x0, t0)` for constant control `w`.
pub fn flow_const(model: &DerivedModel, w: f64, x0: f64, t0: f64, t: f64) -> Result<f64> {
    model.check_level(w)?;
    check_state(x0)?;
    if !(t >= t0) {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("flow is evaluated forward only, got t = {t} < t0 = {t0}"),
        });
    }
    let x = advance(model, w, x0, t - t0);
    debug_assert!(x > -1e-12 && x < 1.0 + 1e-12, "flow left the unit interval: {x}");
    Ok(x.clamp(0.0, 1.0))
}

/// Time at which the constant-control arc from `(x0, t0)` reaches `target`.
///
/// The target must lie on the forward orbit: between `x0` (inclusive) and
/// the attracting equilibrium `r_w^+` (exclusive).
pub fn time_to_reach(model: &DerivedModel, w: f64, x0: f64, t0: f64, target: f64) -> Result<f64> {
    model.check_level(w)?;
    check_state(x0)?;
    check_state(target)?;
    if target == x0 {
        return Ok(t0);
    }
    let (lo, hi) = model.roots(w);
    let unreachable = Error::Unreachable {
        start: x0,
        target,
        level: w,
    };
    let on_orbit = (x0 < target && target < hi) || (hi < target && target < x0);
    if !on_orbit || x0 == lo {
        return Err(unreachable);
    }
    let rate = model.a * (hi - lo);
    let elapsed = (((target - lo) / (x0 - lo)).ln() + ((x0 - hi) / (target - hi)).ln()) / rate;
    if !elapsed.is_finite() {
        return Err(unreachable);
    }
    Ok(t0 + elapsed.max(0.0))
}

/// Piecewise-constant control on `[t0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl ControlSchedule {
    /// `breakpoints` must increase strictly and end at the horizon; one level per interval.
    pub fn new(model: &DerivedModel, breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::ScheduleInvalid(msg));
        if breakpoints.is_empty() {
            return invalid("no breakpoints".into());
        }
        if breakpoints.len() != levels.len() + 1 {
            return invalid(format!(
                "{} breakpoints for {} levels",
                breakpoints.len(),
                levels.len()
            ));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return invalid("non-finite breakpoint".into());
        }
        if breakpoints.windows(2).any(|p| !(p[0] < p[1])) {
            return invalid("breakpoints must increase strictly".into());
        }
        let (first, last) = (breakpoints[0], *breakpoints.last().unwrap());
        if last != model.horizon {
            return invalid(format!("schedule ends at {last}, horizon is {}", model.horizon));
        }
        if first < 0.0 {
            return invalid(format!("schedule starts before 0: {first}"));
        }
        for &w in &levels {
            if model.check_level(w).is_err() {
                return invalid(format!("level {w} outside [0, {}]", model.mu_i));
            }
        }
        Ok(Self { breakpoints, levels })
    }

    /// Single level from `t0` to the horizon.
    pub fn constant(model: &DerivedModel, t0: f64, w: f64) -> Result<Self> {
        if t0 == model.horizon {
            return Self::new(model, vec![t0], vec![]);
        }
        Self::new(model, vec![t0, model.horizon], vec![w])
    }

    /// Start at `initial` and change level at each `(time, level)`; empty
    /// intervals and repeated levels are merged away.
    pub fn from_switches(
        model: &DerivedModel,
        t0: f64,
        initial: f64,
        switches: &[(f64, f64)],
    ) -> Result<Self> {
        if t0 == model.horizon {
            return Self::new(model, vec![t0], vec![]);
        }
        let mut breakpoints = vec![t0];
        let mut levels = vec![initial];
        for &(t, w) in switches {
            let t = t.clamp(t0, model.horizon);
            let last = *breakpoints.last().unwrap();
            if t <= last {
                *levels.last_mut().unwrap() = w;
            } else if t < model.horizon && w != *levels.last().unwrap() {
                breakpoints.push(t);
                levels.push(w);
            }
        }
        // a level change may have produced consecutive equal levels
        let mut bp = vec![breakpoints[0]];
        let mut lv: Vec<f64> = Vec::new();
        for (i, &w) in levels.iter().enumerate() {
            if lv.last() == Some(&w) {
                continue;
            }
            if i > 0 {
                bp.push(breakpoints[i]);
            }
            lv.push(w);
        }
        bp.push(model.horizon);
        Self::new(model, bp, lv)
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// `(level, from, to)` for each interval.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.levels
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(&w, p)| (w, p[0], p[1]))
    }

    /// Level active at `t` (right-continuous; the last level at the horizon).
    pub fn level_at(&self, t: f64) -> Option<f64> {
        if self.levels.is_empty() || t < self.start() || t > self.end() {
            return None;
        }
        let idx = self.breakpoints[1..]
            .iter()
            .position(|&b| t < b)
            .unwrap_or(self.levels.len() - 1);
        Some(self.levels[idx])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    /// Level active from this sample onward.
    pub w: f64,
    pub running_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub x: f64,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub switch_events: Vec<SwitchEvent>,
    pub cost: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<f64> {
        self.samples.last().map(|s| s.x)
    }
}

/// Integrate the schedule with RK4 at step `T / 1e5`.
pub fn simulate(model: &DerivedModel, schedule: &ControlSchedule, x0: f64) -> Result<Trajectory> {
    simulate_with_step(model, schedule, x0, model.horizon / DEFAULT_STEPS_PER_HORIZON)
}

/// Integrate state and running cost `C w + x` together with classic RK4.
///
/// Each schedule interval is split into equal steps no longer than `step`, so
/// breakpoints are always integration nodes.
pub fn simulate_with_step(
    model: &DerivedModel,
    schedule: &ControlSchedule,
    x0: f64,
    step: f64,
) -> Result<Trajectory> {
    check_state(x0)?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::StepInvalid(step));
    }
    let span = schedule.end() - schedule.start();
    let capacity = (span / step).ceil() as usize + schedule.levels().len() + 1;
    let mut samples = Vec::with_capacity(capacity);
    let mut switch_events = Vec::new();

    let mut x = x0;
    let mut cost = 0.0;
    let mut prev_level: Option<f64> = None;
    for (w, from, to) in schedule.segments() {
        if let Some(p) = prev_level {
            if p != w {
                switch_events.push(SwitchEvent {
                    t: from,
                    x,
                    from: p,
                    to: w,
                });
            }
        }
        prev_level = Some(w);
        let n = ((to - from) / step).ceil().max(1.0) as usize;
        let h = (to - from) / n as f64;
        let rate = |x: f64| model.drift(x, w);
        let lagrangian = model.c * w;
        for k in 0..n {
            samples.push(Sample {
                t: from + k as f64 * h,
                x,
                w,
                running_cost: cost,
            });
            let k1 = rate(x);
            let k2 = rate(x + 0.5 * h * k1);
            let x2 = x + 0.5 * h * k1;
            let x3 = x + 0.5 * h * k2;
            let k3 = rate(x3);
            let x4 = x + h * k3;
            let k4 = rate(x4);
            cost += h * (lagrangian + (x + 2.0 * x2 + 2.0 * x3 + x4) / 6.0);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    samples.push(Sample {
        t: schedule.end(),
        x,
        w: prev_level.unwrap_or(0.0),
        running_cost: cost,
    });
    Ok(Trajectory {
        samples,
        switch_events,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DerivedModel;
    use proptest::prelude::*;

    fn model() -> DerivedModel {
        DerivedModel::from_reduced(0.5, 0.3, 0.03, 5.0, 50.0).unwrap()
    }

    #[test]
    fn equilibrium_and_initial_condition_are_fixed() {
        let m = model();
        assert_eq!(flow_const(&m, 0.0, m.r0_plus, 0.0, 17.0).unwrap(), m.r0_plus);
        assert_eq!(flow_const(&m, 0.01, 0.42, 3.0, 3.0).unwrap(), 0.42);
        assert_eq!(flow_const(&m, m.mu_i, 0.0, 0.0, 50.0).unwrap(), 0.0);
    }

    #[test]
    fn matches_high_precision_integration() {
        // mpmath odefun at 40 digits: x(5) for x' = -0.5 x^2 + 0.3 x + 0.03, x(0) = 0.1
        let x = flow_const(&model(), 0.0, 0.1, 0.0, 5.0).unwrap();
        assert!((x - 0.446_102_081_942_936_26).abs() < 1e-12, "{x}");
    }

    #[test]
    fn large_horizon_underflows_to_equilibrium() {
        let m = model();
        let x = flow_const(&m, 0.0, 0.9, 0.0, 1e6).unwrap();
        assert_eq!(x, m.r0_plus);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model();
        assert!(matches!(flow_const(&m, 0.05, 0.1, 0.0, 1.0), Err(Error::ControlOutOfRange { .. })));
        assert!(matches!(flow_const(&m, 0.0, 1.1, 0.0, 1.0), Err(Error::StateOutOfRange(_))));
    }

    #[test]
    fn time_to_reach_examples() {
        let m = model();
        assert_eq!(time_to_reach(&m, 0.0, 0.3, 2.0, 0.3).unwrap(), 2.0);
        assert!(matches!(
            time_to_reach(&m, 0.0, 0.3, 0.0, m.r0_plus),
            Err(Error::Unreachable { .. })
        ));
        assert!(matches!(time_to_reach(&m, 0.0, 0.3, 0.0, 0.2), Err(Error::Unreachable { .. })));
        assert!(matches!(time_to_reach(&m, 0.0, 0.3, 0.0, 0.9), Err(Error::Unreachable { .. })));
        assert!(matches!(time_to_reach(&m, m.mu_i, 0.0, 0.0, 0.1), Err(Error::Unreachable { .. })));

        let t = time_to_reach(&m, 0.0, 0.1, 0.0, 0.5).unwrap();
        // mpmath root of x(t) = 0.5 on the high-precision solution
        assert!((t - 5.901_549_822_498_478).abs() < 1e-11, "{t}");
        let back = flow_const(&m, 0.0, 0.1, 0.0, t).unwrap();
        assert!((back - 0.5).abs() < 1e-10);

        // descending orbit
        let t = time_to_reach(&m, m.mu_i, 0.95, 1.0, 0.7).unwrap();
        assert!((flow_const(&m, m.mu_i, 0.95, 1.0, t).unwrap() - 0.7).abs() < 1e-10);
    }

    #[test]
    fn schedule_validation() {
        let m = model();
        assert!(ControlSchedule::new(&m, vec![0.0, 10.0], vec![0.0]).is_err());
        assert!(ControlSchedule::new(&m, vec![0.0, 20.0, 10.0, 50.0], vec![0.0, 0.0, 0.0]).is_err());
        assert!(ControlSchedule::new(&m, vec![0.0, 50.0], vec![0.04]).is_err());
        assert!(ControlSchedule::new(&m, vec![0.0, 50.0], vec![]).is_err());
        let s = ControlSchedule::from_switches(&m, 0.0, m.mu_i, &[(0.0, 0.0), (10.0, m.mu_i), (20.0, 0.0)])
            .unwrap();
        assert_eq!(s.breakpoints(), &[0.0, 10.0, 20.0, 50.0]);
        assert_eq!(s.levels(), &[0.0, m.mu_i, 0.0]);
        assert_eq!(s.level_at(15.0), Some(m.mu_i));
        assert_eq!(s.level_at(50.0), Some(0.0));
        let merged = ControlSchedule::from_switches(&m, 0.0, 0.0, &[(10.0, 0.0)]).unwrap();
        assert_eq!(merged.levels(), &[0.0]);
    }

    #[test]
    fn simulate_constant_matches_closed_form() {
        let m = model();
        for &(w, x0, t0) in &[(0.0, 0.1, 0.0), (0.03, 0.95, 10.0), (0.012, 0.5, 40.0)] {
            let s = ControlSchedule::constant(&m, t0, w).unwrap();
            let tr = simulate(&m, &s, x0).unwrap();
            let worst = tr
                .samples
                .iter()
                .map(|p| (p.x - flow_const(&m, w, x0, t0, p.t).unwrap()).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-8, "sup error {worst}");
            assert!(tr.switch_events.is_empty());
        }
    }

    #[test]
    fn full_screening_from_zero_stays_at_zero() {
        let m = model();
        let s = ControlSchedule::constant(&m, 0.0, m.mu_i).unwrap();
        let tr = simulate_with_step(&m, &s, 0.0, 0.5).unwrap();
        assert!(tr.samples.iter().all(|p| p.x == 0.0));
        assert!((tr.cost - m.c * m.mu_i * 50.0).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_gives_single_sample() {
        let m = model();
        let s = ControlSchedule::constant(&m, 50.0, 0.0).unwrap();
        let tr = simulate(&m, &s, 0.3).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert_eq!(tr.cost, 0.0);
    }

    #[test]
    fn switch_events_follow_levels() {
        let m = model();
        let s = ControlSchedule::new(&m, vec![0.0, 5.0, 9.0, 50.0], vec![0.0, m.mu_i, 0.0]).unwrap();
        let tr = simulate_with_step(&m, &s, 0.2, 0.01).unwrap();
        assert_eq!(tr.switch_events.len(), 2);
        assert_eq!(tr.switch_events[0].t, 5.0);
        assert_eq!((tr.switch_events[1].from, tr.switch_events[1].to), (m.mu_i, 0.0));
        assert!(tr.samples.windows(2).all(|p| p[0].t <= p[1].t));
    }

    #[test]
    fn invalid_step_is_rejected() {
        let m = model();
        let s = ControlSchedule::constant(&m, 0.0, 0.0).unwrap();
        assert!(matches!(simulate_with_step(&m, &s, 0.2, 0.0), Err(Error::StepInvalid(_))));
    }

    proptest! {
        #[test]
        fn flow_composes(w in 0.0f64..0.03, x0 in 0.0f64..1.0, a in 0.0f64..25.0, b in 0.0f64..25.0) {
            let m = model();
            let mid = flow_const(&m, w, x0, 0.0, a).unwrap();
            let two = flow_const(&m, w, mid, a, a + b).unwrap();
            let one = flow_const(&m, w, x0, 0.0, a + b).unwrap();
            prop_assert!((two - one).abs() < 1e-10);
        }

        #[test]
        fn orbits_do_not_cross(w in 0.0f64..0.03, x0 in 0.0f64..0.99, d in 1e-6f64..0.01, t in 0.0f64..60.0) {
            let m = model();
            let lo = flow_const(&m, w, x0, 0.0, t).unwrap();
            let hi = flow_const(&m, w, x0 + d, 0.0, t).unwrap();
            prop_assert!(lo <= hi);
        }
    }
}
