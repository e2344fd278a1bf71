//! Ground truth for the analytic synthesis: exhaustive search over bang-bang
//! schedules with at most two switches, and backward dynamic programming on
//! a state-time lattice.

use rayon::prelude::*;

use crate::curves::linspace;
use crate::error::{Error, Result};
use crate::flow::{advance, ControlSchedule};
use crate::model::DerivedModel;
use crate::value::{arc_cost, value};

/// Best schedule found by [`brute_force`] next to the analytic value.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub x0: f64,
    pub t0: f64,
    pub best_schedule: ControlSchedule,
    pub best_cost: f64,
    pub analytic_cost: f64,
    /// `best_cost - analytic_cost`.
    pub gap: f64,
    pub n_grid: usize,
}

/// Minimum over `w = 0`, `(mu_I, 0)` and `(0, mu_I, 0)` with switch times on
/// the uniform grid of `n + 1` points over `[t0, T]`. Returns the cost and
/// the switch indices `(i, j)`: screening runs on `[t_i, t_j)`.
fn search(model: &DerivedModel, x0: f64, t0: f64, n: usize) -> (f64, usize, usize) {
    let m = model;
    let ts = linspace(t0, m.horizon, n);
    let (lo0, hi0) = m.roots(0.0);
    let (lo_mu, hi_mu) = m.roots(m.mu_i);
    let (gap0, gap_mu) = (hi0 - lo0, hi_mu - lo_mu);

    let x_free: Vec<f64> = ts.iter().map(|&t| advance(m, 0.0, x0, t - t0)).collect();
    let c_free: Vec<f64> = ts.iter().map(|&t| arc_cost(m, 0.0, x0, t - t0)).collect();
    // terminal free arc from t_j: hi0 (T - t_j) + ln(1 + (y - hi0) q_j) / A
    let q: Vec<f64> = ts
        .iter()
        .map(|&t| -(-m.a * gap0 * (m.horizon - t)).exp_m1() / gap0)
        .collect();
    let lin0: Vec<f64> = ts.iter().map(|&t| hi0 * (m.horizon - t)).collect();
    // screening arc over d cells
    let h = (m.horizon - t0) / n as f64;
    let e_mu: Vec<f64> = (0..=n).map(|d| (-m.a * gap_mu * h * d as f64).exp()).collect();
    let rate_mu = hi_mu + m.c * m.mu_i;

    let row = |i: usize| -> (f64, usize, usize) {
        let x1 = x_free[i];
        let mut best = (f64::INFINITY, i, i);
        for j in i..=n {
            let e = e_mu[j - i];
            let d = (x1 - lo_mu) - e * (x1 - hi_mu);
            let x2 = hi_mu + gap_mu * (x1 - hi_mu) * e / d;
            let ln = ((d / gap_mu) * (1.0 + (x2 - hi0) * q[j])).ln();
            let cost = c_free[i] + rate_mu * (ts[j] - ts[i]) + lin0[j] + ln / m.a;
            if cost < best.0 {
                best = (cost, i, j);
            }
        }
        best
    };
    (0..=n)
        .into_par_iter()
        .map(row)
        .reduce(
            || (f64::INFINITY, 0, 0),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) { b } else { a },
        )
}

/// Cost of the best grid schedule from `(x0, t0)` with at most two switches.
pub fn brute_force_cost(model: &DerivedModel, x0: f64, t0: f64, n_grid: usize) -> Result<f64> {
    check_start(model, x0, t0, n_grid)?;
    if t0 == model.horizon {
        return Ok(0.0);
    }
    Ok(search(model, x0, t0, n_grid).0)
}

fn check_start(model: &DerivedModel, x0: f64, t0: f64, n_grid: usize) -> Result<()> {
    if n_grid < 2 {
        return Err(Error::GridTooCoarse(format!("n_grid = {n_grid}, need at least 2")));
    }
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::StateOutOfRange(x0));
    }
    if !(t0 >= 0.0 && t0 <= model.horizon) {
        return Err(Error::OutOfDomain {
            what: "t0",
            value: t0,
            lo: 0.0,
            hi: model.horizon,
        });
    }
    Ok(())
}

/// Exhaustive search over `w = 0`, `(mu_I then 0)` and `(0, mu_I, 0)` with
/// switch times on an `n_grid` partition of `[t0, T]`.
pub fn brute_force(model: &DerivedModel, x0: f64, t0: f64, n_grid: usize) -> Result<OracleReport> {
    let m = model;
    check_start(m, x0, t0, n_grid)?;
    let analytic_cost = value(m, x0, t0)?;
    let (best_cost, schedule) = if t0 == m.horizon {
        (0.0, ControlSchedule::constant(m, t0, 0.0)?)
    } else {
        let (cost, i, j) = search(m, x0, t0, n_grid);
        let ts = linspace(t0, m.horizon, n_grid);
        let schedule = ControlSchedule::from_switches(m, t0, 0.0, &[(ts[i], m.mu_i), (ts[j], 0.0)])?;
        (cost, schedule)
    };
    Ok(OracleReport {
        x0,
        t0,
        best_schedule: schedule,
        best_cost,
        analytic_cost,
        gap: best_cost - analytic_cost,
        n_grid,
    })
}

/// Backward dynamic-programming table on a uniform lattice of `[0, 1] x [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Row-major with `t` as the outer index.
    pub values: Vec<f64>,
}

impl DpTable {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.xs.len();
        &self.values[j * n..(j + 1) * n]
    }
}

/// Linear interpolation on a uniform grid over `[0, 1]`, clamped to its ends.
fn interp(row: &[f64], x: f64) -> f64 {
    let n = row.len() - 1;
    let s = x.clamp(0.0, 1.0) * n as f64;
    let k = (s.floor() as usize).min(n - 1);
    let frac = s - k as f64;
    row[k] + frac * (row[k + 1] - row[k])
}

/// Explicit Euler backward induction with `nx + 1` states and `nt + 1` times.
pub fn dp_grid(model: &DerivedModel, nx: usize, nt: usize) -> Result<DpTable> {
    let m = model;
    if nx < 16 || nt < 16 {
        return Err(Error::GridTooCoarse(format!("nx = {nx}, nt = {nt}, need at least 16")));
    }
    let h = m.horizon / nt as f64;
    let lipschitz = m.b.abs().max((m.b - 2.0 * m.a).abs());
    if h * lipschitz >= 1.0 {
        return Err(Error::GridTooCoarse(format!("h max|f'| = {} >= 1", h * lipschitz)));
    }
    let xs = linspace(0.0, 1.0, nx);
    let ts = linspace(0.0, m.horizon, nt);
    let width = nx + 1;
    let mut values = vec![0.0; width * (nt + 1)];
    for j in (0..nt).rev() {
        let (head, tail) = values.split_at_mut((j + 1) * width);
        let next = &tail[..width];
        head[j * width..].par_iter_mut().zip(xs.par_iter()).for_each(|(v, &x)| {
            let free = x * h + interp(next, x + h * (m.mu_i + m.f(x)));
            let screen = (m.c * m.mu_i + x) * h + interp(next, x + h * m.f(x));
            *v = free.min(screen);
        });
    }
    Ok(DpTable { xs, ts, values })
}

/// Aggregate of brute-force reports over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub reports: Vec<OracleReport>,
    pub max_gap: f64,
    pub mean_gap: f64,
    /// Largest `analytic_cost - best_cost`; positive when the search beats W.
    pub max_excess: f64,
    /// Index of the report with the largest `|gap|`.
    pub worst: usize,
}

/// Run [`brute_force`] at every point.
pub fn compare(model: &DerivedModel, points: &[(f64, f64)], n_grid: usize) -> Result<ComparisonSummary> {
    if points.is_empty() {
        return Err(Error::Config("no comparison points".into()));
    }
    let reports = points
        .iter()
        .map(|&(x, t)| brute_force(model, x, t, n_grid))
        .collect::<Result<Vec<_>>>()?;
    let max_gap = reports.iter().map(|r| r.gap).fold(f64::NEG_INFINITY, f64::max);
    let max_excess = reports.iter().map(|r| -r.gap).fold(f64::NEG_INFINITY, f64::max);
    let mean_gap = reports.iter().map(|r| r.gap).sum::<f64>() / reports.len() as f64;
    let worst = reports
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (k, r)| if r.gap.abs() > acc.1 { (k, r.gap.abs()) } else { acc })
        .0;
    Ok(ComparisonSummary {
        reports,
        max_gap,
        mean_gap,
        max_excess,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::hit_last_switch;
    use proptest::prelude::*;

    fn one() -> DerivedModel {
        DerivedModel::from_reduced(0.5, 0.3, 0.03, 5.0, 50.0).unwrap()
    }

    fn two() -> DerivedModel {
        DerivedModel::from_reduced(0.5, 0.3, 0.03, 2.0, 50.0).unwrap()
    }

    #[test]
    fn never_screening_regime_picks_free_arc() {
        let m = DerivedModel::from_reduced(0.5, 0.3, 0.03, 50.0, 50.0).unwrap();
        for &(x, t) in &[(0.0, 0.0), (0.3, 10.0), (0.9, 45.0)] {
            let r = brute_force(&m, x, t, 400).unwrap();
            assert_eq!(r.best_schedule.levels(), &[0.0]);
            assert!(r.gap.abs() < 1e-10, "{}", r.gap);
        }
    }

    #[test]
    fn one_switch_time_within_a_cell() {
        let m = one();
        let n = 2000;
        let r = brute_force(&m, 0.05, 0.0, n).unwrap();
        let (_, t_s) = hit_last_switch(&m, 0.05, 0.0).unwrap().unwrap();
        assert_eq!(r.best_schedule.levels(), &[m.mu_i, 0.0]);
        let cell = m.horizon / n as f64;
        assert!((r.best_schedule.breakpoints()[1] - t_s).abs() <= cell);
        let rate = m.c * m.mu_i + 1.0;
        assert!(r.gap >= -1e-12 && r.gap < cell * rate);
    }

    #[test]
    fn terminal_points_cost_nothing() {
        let m = two();
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64 / 4.0, m.horizon)).collect();
        let s = compare(&m, &pts, 50).unwrap();
        assert!(s.reports.iter().all(|r| r.gap == 0.0 && r.best_cost == 0.0));
        assert!(compare(&m, &[], 50).is_err());
    }

    #[test]
    fn degenerate_switch_at_start_costs_like_one_switch() {
        // a zero-length free arc makes (0, mu_I, 0) coincide with (mu_I, 0)
        let m = two();
        let n = 200;
        let full = brute_force_cost(&m, 0.4, 0.0, n).unwrap();
        let direct = {
            let ts = linspace(0.0, m.horizon, n);
            ts.iter()
                .map(|&t| {
                    let x1 = advance(&m, m.mu_i, 0.4, t);
                    arc_cost(&m, m.mu_i, 0.4, t) + arc_cost(&m, 0.0, x1, m.horizon - t)
                })
                .fold(arc_cost(&m, 0.0, 0.4, m.horizon), f64::min)
        };
        assert!(full <= direct + 1e-12);
    }

    #[test]
    fn positive_gap_shrinks_with_resolution() {
        let m = two();
        let pts: Vec<(f64, f64)> = (0..12).map(|k| (0.05 + 0.08 * k as f64, 3.7 * k as f64)).collect();
        let coarse = compare(&m, &pts, 101).unwrap();
        let fine = compare(&m, &pts, 401).unwrap();
        assert!(coarse.max_excess <= 1e-10 && fine.max_excess <= 1e-10);
        assert!(fine.max_gap <= coarse.max_gap / 2.0, "{} {}", coarse.max_gap, fine.max_gap);
    }

    #[test]
    fn first_switch_below_endemic_center() {
        // x̄_C between the midpoint and r₀⁺: one-switch branch, yet σ exists
        let m = DerivedModel::from_reduced(0.5, 0.3, 0.03, 2.7, 50.0).unwrap();
        assert!(m.has_first_switch() && m.x_bar_c < m.r0_plus);
        for &(x, t) in &[(1.0, 23.7), (1.0, 5.0), (0.9, 30.0), (0.75, 36.0)] {
            let r = brute_force(&m, x, t, 1500).unwrap();
            assert!(r.gap >= -1e-10 && r.gap < 1e-4, "({x}, {t}): {}", r.gap);
        }
        let r = brute_force(&m, 1.0, 23.7, 1500).unwrap();
        assert_eq!(r.best_schedule.levels(), &[0.0, m.mu_i, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = one();
        assert!(matches!(brute_force(&m, 0.3, 0.0, 1), Err(Error::GridTooCoarse(_))));
        assert!(matches!(brute_force(&m, 1.3, 0.0, 10), Err(Error::StateOutOfRange(_))));
        assert!(matches!(brute_force(&m, 0.3, 60.0, 10), Err(Error::OutOfDomain { .. })));
        assert!(matches!(dp_grid(&m, 8, 100), Err(Error::GridTooCoarse(_))));
        // h max|f'| = 50/20 * 0.7 > 1
        assert!(matches!(dp_grid(&m, 100, 20), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn dp_table_shape_and_sign() {
        let m = two();
        let t = dp_grid(&m, 64, 128).unwrap();
        assert_eq!(t.values.len(), 65 * 129);
        assert!(t.row(128).iter().all(|&v| v == 0.0));
        assert!(t.values.iter().all(|&v| v >= 0.0));
        assert!((0..128).all(|j| t.value(32, j) >= t.value(32, j + 1)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn analytic_value_is_a_lower_bound(x in 0.0..=1.0f64, t in 0.0..50.0f64, two_switch in any::<bool>()) {
            let m = if two_switch { two() } else { one() };
            let r = brute_force(&m, x, t, 300).unwrap();
            prop_assert!(r.gap >= -1e-10, "W exceeds brute force by {}", -r.gap);
        }
    }
}
