//! The acceptance suite: ten numerical checks of the synthesis against its
//! closed forms, the extremal field and the two oracles.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curves::{self, classify_point, linspace, RegionLabel};
use crate::error::Result;
use crate::flow::{self, ControlSchedule};
use crate::model::{derive, CostInput, DerivedModel, RawParameters, SubCase};
use crate::oracle;
use crate::pontryagin;
use crate::synthesis::{self, optimal_schedule};
use crate::value::{self, free_arc_margin, gradient, hjb_residual, j_w};

/// Reference epidemiological inputs with the rescaled cost `C`.
pub fn reference_parameters(c: f64) -> RawParameters {
    RawParameters {
        beta: 0.5,
        gamma: 0.1,
        mu: 0.1,
        p_i: 0.3,
        eta: 0.0,
        delta: 0.0,
        pi: 1.0,
        cost: CostInput::Rescaled(c),
        horizon: 50.0,
    }
}

/// One-switch reference set, `C = 5`.
pub fn p_one() -> DerivedModel {
    derive(&reference_parameters(5.0)).expect("reference parameters are valid")
}

/// Two-switch reference set, `C = 2`.
pub fn p_two() -> DerivedModel {
    derive(&reference_parameters(2.0)).expect("reference parameters are valid")
}

#[derive(Debug, Clone)]
pub struct Settings {
    /// Named models checked by the per-regime criteria.
    pub models: Vec<(String, DerivedModel)>,
    pub seed: u64,
    /// Random draws for criteria 1, 3 and 9.
    pub draws: usize,
    /// Final states of the extremal field.
    pub extremals: usize,
    /// Extremal step is `T / extremal_steps`.
    pub extremal_steps: f64,
    /// Start points per axis for the brute-force comparison.
    pub brute_points: usize,
    /// Switch-time resolution of the brute force.
    pub n_grid: usize,
    /// Finest DP resolution; coarser ones halve down to `dp_n / 8`.
    pub dp_n: usize,
    /// Allowed amount by which the brute force may exceed `W`.
    pub gap_tolerance: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            models: vec![("P_one".into(), p_one()), ("P_two".into(), p_two())],
            seed: 20_240_601,
            draws: 10_000,
            extremals: 200,
            extremal_steps: 1e5,
            brute_points: 30,
            n_grid: 2000,
            dp_n: 2000,
            gap_tolerance: 5e-4,
        }
    }
}

impl Settings {
    /// Same checks on a single model.
    pub fn for_model(name: &str, model: DerivedModel) -> Self {
        Self {
            models: vec![(name.into(), model)],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
    /// `(file name, CSV body)` pairs produced along the way.
    pub artifacts: Vec<(String, String)>,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {}: {} ({:.2} s) {}",
            self.id,
            self.title,
            if self.passed { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Accumulates failures of one criterion.
#[derive(Default)]
struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
    artifacts: Vec<(String, String)>,
}

impl Check {
    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }

    fn error(&mut self, e: crate::Error) {
        self.failures.push(format!("error: {e}"));
    }
}

fn timed(id: u8, title: &'static str, budget_s: u64, body: impl FnOnce(&mut Check)) -> Outcome {
    let start = Instant::now();
    let mut check = Check::default();
    body(&mut check);
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    if elapsed > budget {
        check.failures.push(format!("over budget of {budget_s} s"));
    }
    let mut detail = check.notes.join("; ");
    if !check.failures.is_empty() {
        let shown: Vec<_> = check.failures.iter().take(3).cloned().collect();
        detail = format!("{} failure(s): {} | {detail}", check.failures.len(), shown.join("; "));
    }
    Outcome {
        id,
        title,
        passed: check.failures.is_empty(),
        detail,
        elapsed,
        budget,
        artifacts: check.artifacts,
    }
}

pub fn run_all(settings: &Settings) -> Vec<Outcome> {
    (1..=10).map(|id| run_one(settings, id)).collect()
}

pub fn run_one(settings: &Settings, id: u8) -> Outcome {
    match id {
        1 => flow_vs_rk4(settings),
        2 => hamiltonian_constancy(settings),
        3 => switch_structure(settings),
        4 => curve_geometry(settings),
        5 => hjb(settings),
        6 => brute_force(settings),
        7 => dynamic_programming(settings),
        8 => degenerate(settings),
        9 => invariance(settings),
        10 => trichotomy(settings),
        _ => panic!("no criterion {id}"),
    }
}

fn rng(settings: &Settings, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(settings.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// RK4 step used against the closed-form flow.
const FLOW_STEP: f64 = 1e-2;

fn flow_vs_rk4(s: &Settings) -> Outcome {
    timed(1, "closed-form flow vs RK4", 10, |ck| {
        for (name, m) in &s.models {
            let mut r = rng(s, 1);
            let draws: Vec<(f64, f64, f64, f64)> = (0..s.draws)
                .map(|_| {
                    let w = r.gen_range(0.0..=m.mu_i);
                    let x0 = r.gen_range(0.0..=1.0);
                    let t0 = r.gen_range(0.0..m.horizon);
                    let t = r.gen_range(t0..m.horizon);
                    (w, x0, t0, t)
                })
                .collect();
            let worst = draws
                .par_iter()
                .map(|&(w, x0, t0, t)| -> Result<f64> {
                    let closed = flow::flow_const(m, w, x0, t0, t)?;
                    let sched = if t > t0 {
                        ControlSchedule::new(m, vec![t0, t, m.horizon], vec![w, w])?
                    } else {
                        ControlSchedule::constant(m, t0, w)?
                    };
                    let tr = flow::simulate_with_step(m, &sched, x0, FLOW_STEP)?;
                    let x = tr.samples.iter().find(|p| p.t == t).map_or(x0, |p| p.x);
                    Ok((closed - x).abs())
                })
                .try_reduce(|| 0.0, |a, b| Ok(a.max(b)));
            match worst {
                Ok(e) => {
                    ck.require(e < 1e-8, || format!("{name}: max error {e:e}"));
                    ck.note(format!("{name} max |flow - rk4| {e:.2e}"));
                }
                Err(e) => ck.error(e),
            }
        }
    })
}

fn extremal_finals(s: &Settings) -> Vec<f64> {
    linspace(0.0, 1.0, s.extremals.max(2) - 1)
}

fn hamiltonian_constancy(s: &Settings) -> Outcome {
    timed(2, "Hamiltonian constancy along extremals", 60, |ck| {
        for (name, m) in &s.models {
            let step = m.horizon / s.extremal_steps;
            let field = match pontryagin::extremal_field(m, &extremal_finals(s), step, 1) {
                Ok(f) => f,
                Err(e) => return ck.error(e),
            };
            let mut drift = 0.0f64;
            for e in &field {
                drift = drift.max(e.max_hamiltonian_drift);
                let last = e.samples.last().unwrap();
                ck.require(last.t == m.horizon && last.lambda == 0.0, || {
                    format!("{name} x_T {}: terminal adjoint {}", e.final_state, last.lambda)
                });
                let bad = e.samples[..e.samples.len() - 1].iter().find(|p| !(p.lambda > 0.0));
                ck.require(bad.is_none(), || format!("{name} x_T {}: adjoint not positive", e.final_state));
            }
            ck.require(drift < 1e-8, || format!("{name}: drift {drift:e}"));
            ck.note(format!("{name} max |H - x_T| {drift:.2e}"));
        }
    })
}

/// RK4 step for simulated plans and random schedules.
const PLAN_STEP: f64 = 0.05;

fn switch_structure(s: &Settings) -> Outcome {
    timed(3, "switch structure", 120, |ck| {
        for (name, m) in &s.models {
            let step = m.horizon / s.extremal_steps;
            let field = match pontryagin::extremal_field(m, &extremal_finals(s), step, 1000) {
                Ok(f) => f,
                Err(e) => return ck.error(e),
            };
            let mut worst = 0.0f64;
            for e in &field {
                ck.require(e.switch_times.len() <= 2, || {
                    format!("{name} extremal x_T {}: {} switches", e.final_state, e.switch_times.len())
                });
                ck.require(e.final_level == 0.0, || format!("{name} extremal x_T {}: last arc screens", e.final_state));
                if let [a, b] = e.switch_states[..] {
                    worst = worst.max((0.5 * (a + b) - m.x_bar_c).abs());
                }
            }
            let mut r = rng(s, 3);
            let starts: Vec<(f64, f64)> = (0..s.draws)
                .map(|_| (r.gen_range(0.0..=1.0), r.gen_range(0.0..=m.horizon)))
                .collect();
            let plans: Vec<Result<(usize, f64, Option<f64>)>> = starts
                .par_iter()
                .map(|&(x0, t0)| {
                    let p = synthesis::plan_with_step(m, x0, t0, PLAN_STEP)?;
                    let last = p.schedule.levels().last().copied().unwrap_or(0.0);
                    let reflect = match p.switches[..] {
                        [a, b] => Some((0.5 * (a.x + b.x) - m.x_bar_c).abs()),
                        _ => None,
                    };
                    ck_len(&p.trajectory, p.switches.len())?;
                    Ok((p.switches.len(), last, reflect))
                })
                .collect();
            let mut twos = 0;
            for (k, p) in plans.into_iter().enumerate() {
                match p {
                    Ok((n, last, reflect)) => {
                        ck.require(n <= 2, || format!("{name} plan {:?}: {n} switches", starts[k]));
                        ck.require(last == 0.0, || format!("{name} plan {:?}: last arc screens", starts[k]));
                        if let Some(d) = reflect {
                            twos += 1;
                            worst = worst.max(d);
                        }
                    }
                    Err(e) => ck.error(e),
                }
            }
            ck.require(worst < 1e-8, || format!("{name}: reflection error {worst:e}"));
            ck.note(format!("{name} two-switch plans {twos}, max reflection error {worst:.2e}"));
        }
    })
}

fn ck_len(tr: &flow::Trajectory, expected: usize) -> Result<()> {
    if tr.switch_events.len() == expected {
        Ok(())
    } else {
        Err(crate::Error::InternalConsistency(format!(
            "trajectory has {} switch events, plan has {expected}",
            tr.switch_events.len()
        )))
    }
}

fn curve_geometry(s: &Settings) -> Outcome {
    timed(4, "curve geometry", 10, |ck| {
        for (name, m) in &s.models {
            let lo = m.r0_minus.max(0.0);
            let hi = m.xs_sup.min(curves::t_s_pole(m));
            let n = 2000;
            let xs: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
            let ts: Vec<f64> = xs.iter().map(|&x| curves::t_s_graph(m, x).unwrap_or(f64::NAN)).collect();
            let decreasing = ts.windows(2).all(|p| p[1] < p[0]);
            let second = ts.windows(3).map(|p| p[0] - 2.0 * p[1] + p[2]).fold(f64::NEG_INFINITY, f64::max);
            ck.require(decreasing, || format!("{name}: t_S not strictly decreasing"));
            ck.require(second <= 1e-8, || format!("{name}: second difference {second:e}"));

            let mut trip = 0.0f64;
            for &x in &xs {
                if x > m.r0_minus && x < m.xs_sup {
                    match curves::x_t_of_xs(m, x).and_then(|xt| curves::x_s_of_xt(m, xt)) {
                        Ok(back) => trip = trip.max((back - x).abs()),
                        Err(e) => ck.error(e),
                    }
                }
            }
            ck.require(trip < 1e-10, || format!("{name}: round trip {trip:e}"));
            ck.note(format!("{name} max second difference {second:.2e}, round trip {trip:.2e}"));

            if m.regime.branch == crate::model::Branch::TwoSwitch {
                let x = m.x_bar_c;
                let h = 1e-5;
                let ds = (curves::t_s_graph(m, x + h).unwrap() - curves::t_s_graph(m, x - h).unwrap()) / (2.0 * h);
                let dg = (curves::t_gamma(m, x + h).unwrap() - curves::t_gamma(m, x - h).unwrap()) / (2.0 * h);
                ck.require((ds - dg).abs() < 1e-6, || format!("{name}: slopes {ds} vs {dg}"));
                ck.note(format!("{name} tangency slope gap {:.2e}", (ds - dg).abs()));
            }
        }
    })
}

/// Finite-difference step for the gradient check.
const FD_STEP: f64 = 1e-5;

/// State step, shrunk near `x = 0` where `W` has curvature of order `1 / x^2`.
fn fd_step_x(x: f64) -> f64 {
    FD_STEP * (10.0 * x).min(1.0)
}

/// Point and its closed-form gradient when the whole finite-difference
/// stencil sits in the same region.
fn smooth_point(m: &DerivedModel, x: f64, t: f64) -> Option<(f64, f64)> {
    let label = classify_point(m, x, t);
    if label.is_curve() || x == m.rmu_plus {
        return None;
    }
    let (hx, h) = (10.0 * fd_step_x(x), 10.0 * FD_STEP);
    let inside = [(x - hx, t), (x + hx, t), (x, t - h), (x, t + h)]
        .iter()
        .all(|&(a, b)| (0.0..=1.0).contains(&a) && (0.0..m.horizon).contains(&b) && classify_point(m, a, b) == label);
    if !inside {
        return None;
    }
    if matches!(label, RegionLabel::Theta | RegionLabel::SSet) && (x - m.rmu_plus).abs() < h {
        return None;
    }
    gradient(m, x, t).ok()
}

fn hjb(s: &Settings) -> Outcome {
    timed(5, "HJB residual and partials", 60, |ck| {
        for (name, m) in &s.models {
            let mut r = rng(s, 5);
            let mut points = Vec::new();
            while points.len() < 1000 {
                let (x, t) = (r.gen_range(0.0..1.0), r.gen_range(0.0..m.horizon));
                if let Some(g) = smooth_point(m, x, t) {
                    points.push((x, t, g));
                }
            }
            let results: Vec<Result<(f64, f64)>> = points
                .par_iter()
                .map(|&(x, t, (gx, gt))| {
                    let res = hjb_residual(m, x, t)?.abs();
                    let (hx, h) = (fd_step_x(x), FD_STEP);
                    let fx = (value::value(m, x + hx, t)? - value::value(m, x - hx, t)?) / (2.0 * hx);
                    let ft = (value::value(m, x, t + h)? - value::value(m, x, t - h)?) / (2.0 * h);
                    let rel = ((fx - gx).abs() / gx.abs().max(1.0)).max((ft - gt).abs() / gt.abs().max(1.0));
                    Ok((res, rel))
                })
                .collect();
            let (mut res, mut rel) = (0.0f64, 0.0f64);
            for item in results {
                match item {
                    Ok((a, b)) => {
                        res = res.max(a);
                        rel = rel.max(b);
                    }
                    Err(e) => ck.error(e),
                }
            }
            ck.require(res < 1e-8, || format!("{name}: residual {res:e}"));
            ck.require(rel < 1e-6, || format!("{name}: partials off by {rel:e}"));
            ck.note(format!("{name} max residual {res:.2e}, partial mismatch {rel:.2e}"));
        }
    })
}

pub fn brute_force_points(m: &DerivedModel, n: usize) -> Vec<(f64, f64)> {
    let xs = linspace(0.0, 1.0, n.max(2) - 1);
    let ts = linspace(0.0, m.horizon, n.max(2) - 1);
    ts.iter().flat_map(|&t| xs.iter().map(move |&x| (x, t))).collect()
}

fn brute_force(s: &Settings) -> Outcome {
    timed(6, "optimality vs brute force", 300, |ck| {
        for (name, m) in &s.models {
            match oracle::compare(m, &brute_force_points(m, s.brute_points), s.n_grid) {
                Ok(sum) => {
                    ck.artifacts.push((format!("brute_force_{name}.csv"), comparison_csv(&sum)));
                    let w = &sum.reports[sum.worst];
                    ck.require(sum.max_excess <= 1e-10, || format!("{name}: W above brute force by {:e}", sum.max_excess));
                    ck.require(sum.max_gap < s.gap_tolerance, || {
                        format!("{name}: gap {:e} at ({}, {})", sum.max_gap, w.x0, w.t0)
                    });
                    ck.note(format!(
                        "{name} max gap {:.2e}, mean {:.2e}, max excess {:.2e}",
                        sum.max_gap, sum.mean_gap, sum.max_excess
                    ));
                }
                Err(e) => ck.error(e),
            }
        }
    })
}

/// Per-point brute-force reports, 17 significant digits.
pub fn comparison_csv(sum: &oracle::ComparisonSummary) -> String {
    let mut out = String::from("x0,t0,best_cost,analytic_cost,gap,switch_on,switch_off,n_grid\n");
    for r in &sum.reports {
        // the search family is (0, mu_I, 0); empty arcs are merged away
        let bp = r.best_schedule.breakpoints();
        let lv = r.best_schedule.levels();
        let on = lv.iter().position(|&w| w > 0.0);
        let (t_on, t_off) = match on {
            Some(k) => (bp[k], bp[k + 1]),
            None => (f64::NAN, f64::NAN),
        };
        out += &format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.x0, r.t0, r.best_cost, r.analytic_cost, r.gap, t_on, t_off, r.n_grid
        );
    }
    out
}

/// Nodes compared against `W` per axis.
const DP_PROBES: usize = 100;

/// Left end of the DP comparison window. Full screening holds `x = 0`
/// fixed and makes `∂W/∂x` blow up like `1 / f(x)`, so linear
/// interpolation cannot converge in max norm next to that edge.
pub const DP_INTERIOR_X: f64 = 0.05;

/// Max-norm distance between the DP table and `W` on interior probe nodes.
pub fn dp_error(m: &DerivedModel, table: &oracle::DpTable) -> Result<f64> {
    let n = table.xs.len() - 1;
    let stride = (n / DP_PROBES).max(1);
    let probes: Vec<(usize, usize)> = (0..n)
        .step_by(stride)
        .flat_map(|j| (0..=n).step_by(stride).map(move |i| (i, j)))
        .filter(|&(i, _)| table.xs[i] >= DP_INTERIOR_X)
        .collect();
    probes
        .par_iter()
        .map(|&(i, j)| Ok((table.value(i, j) - value::value(m, table.xs[i], table.ts[j])?).abs()))
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Max-norm distance between a table and the one at twice its resolution,
/// on the coarse interior nodes.
fn refinement_distance(coarse: &oracle::DpTable, fine: &oracle::DpTable) -> f64 {
    let n = coarse.xs.len();
    let mut d = 0.0f64;
    for j in 0..coarse.ts.len() - 1 {
        for i in (0..n).filter(|&i| coarse.xs[i] >= DP_INTERIOR_X) {
            d = d.max((coarse.value(i, j) - fine.value(2 * i, 2 * j)).abs());
        }
    }
    d
}

fn dynamic_programming(s: &Settings) -> Outcome {
    timed(7, "optimality vs dynamic programming", 600, |ck| {
        for (name, m) in &s.models {
            let sizes = [s.dp_n / 8, s.dp_n / 4, s.dp_n / 2, s.dp_n];
            let tables = match sizes.iter().map(|&n| oracle::dp_grid(m, n, n)).collect::<Result<Vec<_>>>() {
                Ok(t) => t,
                Err(e) => return ck.error(e),
            };
            let dist: Vec<f64> = tables.windows(2).map(|p| refinement_distance(&p[0], &p[1])).collect();
            for p in dist.windows(2) {
                let ratio = p[0] / p[1];
                ck.require(ratio >= 1.5, || format!("{name}: self-convergence ratio {ratio:.3}"));
            }
            let errs: Vec<f64> = match tables[1..].iter().map(|t| dp_error(m, t)).collect::<Result<Vec<_>>>() {
                Ok(e) => e,
                Err(e) => return ck.error(e),
            };
            let finest = *errs.last().unwrap();
            ck.require(finest < 2e-2, || format!("{name}: DP error {finest:e}"));
            ck.require(errs.windows(2).all(|p| p[1] < p[0]), || format!("{name}: DP error not decreasing {errs:?}"));
            let fmt = |v: &[f64]| v.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join("/");
            ck.note(format!("{name} refinement distances {}, errors {}", fmt(&dist), fmt(&errs)));
        }
    })
}

/// Same base model with `C` changed.
fn with_cost(m: &DerivedModel, c: f64) -> Result<DerivedModel> {
    DerivedModel::from_reduced(m.a, m.b, m.mu_i, c, m.horizon)
}

/// `C` large enough that `x_S^sup < 0`, and small enough that `x_S^sup > 1`.
pub fn degenerate_costs(m: &DerivedModel) -> (f64, f64) {
    (2.0 / (m.a * -m.r0_minus), 0.5 / (2.0 * m.a - m.b))
}

fn degenerate(s: &Settings) -> Outcome {
    timed(8, "degenerate regimes", 60, |ck| {
        let (name, base) = &s.models[0];
        let (big, small) = degenerate_costs(base);
        let (never, outside) = match (with_cost(base, big), with_cost(base, small)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return ck.error(e),
        };
        ck.require(never.regime.sub_case == SubCase::NoSwitchEver, || format!("C = {big}: {:?}", never.regime));
        ck.require(outside.regime.sub_case == SubCase::FirstSwitchOutsideUnitBox, || {
            format!("C = {small}: {:?}", outside.regime)
        });
        let grid = brute_force_points(&never, 101);
        let mut worst = 0.0f64;
        for &(x, t) in &grid {
            ck.require(synthesis::feedback(&never, x, t) == 0.0, || format!("feedback screens at ({x}, {t})"));
            match (value::value(&never, x, t), j_w(&never, 0.0, x, t, never.horizon)) {
                (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                (Err(e), _) | (_, Err(e)) => ck.error(e),
            }
        }
        ck.require(worst < 1e-12, || format!("W differs from J0 by {worst:e}"));
        let mut most = 0;
        for &(x, t) in &brute_force_points(&outside, 101) {
            match optimal_schedule(&outside, x, t) {
                Ok(p) => {
                    most = most.max(p.switches.len());
                    ck.require(p.switches.len() <= 1, || format!("{} switches from ({x}, {t})", p.switches.len()));
                }
                Err(e) => ck.error(e),
            }
        }
        ck.note(format!(
            "{name} base: C = {big:.4} gives |W - J0| {worst:.1e}; C = {small:.4} gives at most {most} switch"
        ));
    })
}

/// Random admissible schedule with up to five arcs of arbitrary levels.
fn random_schedule(m: &DerivedModel, r: &mut ChaCha8Rng) -> Result<(f64, ControlSchedule)> {
    let t0 = r.gen_range(0.0..m.horizon);
    let arcs = r.gen_range(1..=5);
    let mut cuts: Vec<f64> = (1..arcs).map(|_| r.gen_range(t0..m.horizon)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut bp = vec![t0];
    bp.extend(cuts.into_iter().filter(|&c| c > t0));
    bp.push(m.horizon);
    let levels = (1..bp.len())
        .map(|_| match r.gen_range(0..3) {
            0 => 0.0,
            1 => m.mu_i,
            _ => r.gen_range(0.0..=m.mu_i),
        })
        .collect();
    Ok((t0, ControlSchedule::new(m, bp, levels)?))
}

fn invariance(s: &Settings) -> Outcome {
    timed(9, "state stays in [0, 1]", 60, |ck| {
        for (name, m) in &s.models {
            let mut r = rng(s, 9);
            let runs: Vec<(f64, ControlSchedule)> = match (0..s.draws)
                .map(|k| {
                    let (_, sched) = random_schedule(m, &mut r)?;
                    let x0 = match k % 10 {
                        0 => 0.0,
                        1 => 1.0,
                        _ => r.gen_range(0.0..=1.0),
                    };
                    Ok((x0, sched))
                })
                .collect::<Result<Vec<_>>>()
            {
                Ok(v) => v,
                Err(e) => return ck.error(e),
            };
            let extremes = runs
                .par_iter()
                .map(|(x0, sched)| {
                    let tr = flow::simulate_with_step(m, sched, *x0, PLAN_STEP)?;
                    Ok(tr.samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        (lo.min(p.x), hi.max(p.x))
                    }))
                })
                .try_reduce(
                    || (f64::INFINITY, f64::NEG_INFINITY),
                    |a, b| Ok((a.0.min(b.0), a.1.max(b.1))),
                );
            match extremes {
                Ok((lo, hi)) => {
                    ck.require(lo >= -1e-12 && hi <= 1.0 + 1e-12, || format!("{name}: range [{lo}, {hi}]"));
                    ck.note(format!("{name} states within [{lo:.3e}, {hi:.6}]"));
                }
                Err(e) => ck.error(e),
            }
        }
    })
}

/// Band around `C - ∂J⁰/∂x = 0` treated as the curve itself.
const MARGIN_ZERO: f64 = 1e-9;

fn trichotomy(s: &Settings) -> Outcome {
    timed(10, "sign of C - dJ0/dx matches the regions", 10, |ck| {
        for (name, m) in &s.models {
            let pole = 2.0 * m.x_bar_c - m.r0_plus;
            let mut points = brute_force_points(m, 32);
            points.truncate(1000);
            // points exactly on the full last-switch graph
            for k in 1..=24 {
                let x = pole.min(1.0) * k as f64 / 25.0;
                if let Ok(t) = curves::t_s_graph(m, x) {
                    if (0.0..=m.horizon).contains(&t) {
                        points.push((x, t));
                    }
                }
            }
            let (mut seen, mut on) = ([0usize; 3], 0);
            for &(x, t) in &points {
                let margin = free_arc_margin(m, x, t);
                let graph = if x < pole { curves::t_s_graph(m, x).ok() } else { None };
                // 0 below the graph, 1 on it, 2 elsewhere
                let region = match graph {
                    Some(ts) if (t - ts).abs() <= 1e-9 * m.horizon => 1,
                    Some(ts) if t < ts => 0,
                    _ => 2,
                };
                let sign = if margin.abs() <= MARGIN_ZERO {
                    1
                } else if margin < 0.0 {
                    0
                } else {
                    2
                };
                seen[region] += 1;
                if region == 1 {
                    on += 1;
                }
                ck.require(sign == region, || format!("{name} ({x}, {t}): margin {margin:e}, region {region}"));
            }
            ck.note(format!(
                "{name} {} points: {} below, {on} on, {} above",
                points.len(),
                seen[0],
                seen[2]
            ));
        }
    })
}
