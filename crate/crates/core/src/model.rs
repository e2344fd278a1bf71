//! Parameter ingestion and the reduced one-dimensional control problem.
//!
//! The infected proportion `x` obeys `x' = mu_I - w + f(x)` with
//! `f(x) = B x - A x^2` and a control `w` in `[0, mu_I]`. The running cost
//! is `C w + x`. Everything downstream is expressed through the constants
//! computed here.

use crate::error::{Error, Result};

/// How the per-unit control cost enters the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostInput {
    /// Unit costs of one test, one treatment and one infected individual.
    Unit {
        detection: f64,
        treatment: f64,
        infected: f64,
    },
    /// The rescaled constant `C` supplied directly.
    Rescaled(f64),
}

/// Epidemiological, operational and cost inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawParameters {
    /// Contact rate.
    pub beta: f64,
    /// Recovery rate.
    pub gamma: f64,
    /// Entry (and exit) rate.
    pub mu: f64,
    /// Infected fraction of entrants.
    pub p_i: f64,
    /// One minus test sensitivity.
    pub eta: f64,
    /// One minus test specificity. Only affects `C`.
    pub delta: f64,
    /// Probability that treatment succeeds.
    pub pi: f64,
    pub cost: CostInput,
    /// Horizon `T`.
    pub horizon: f64,
}

/// Which synthesis applies: the threshold is `x̄_C` against `r₀⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `x̄_C <= r₀⁺`: at most one switch, from full to no screening.
    OneSwitch,
    /// `x̄_C > r₀⁺`: a first-switch curve exists and plans may switch twice.
    TwoSwitch,
}

/// Degenerate sub-cases driven by where `x_S^sup` sits relative to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubCase {
    /// `x_S^sup < 0`: the last-switch curve lies left of the box.
    NoSwitchEver,
    /// `x_S^sup > 1`: the first-switch curve lies right of the box.
    FirstSwitchOutsideUnitBox,
    Generic,
}

/// Position of the reflection center `x̄_C` among `r̄⁺` and `r₀⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CenterPlacement {
    /// `x̄_C < r̄⁺`
    BelowMidpoint,
    /// `r̄⁺ <= x̄_C < r₀⁺`
    BetweenMidpointAndEndemic,
    /// `r₀⁺ <= x̄_C`
    AtOrAboveEndemic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Regime {
    pub branch: Branch,
    pub sub_case: SubCase,
    pub placement: CenterPlacement,
}

/// All constants of the reduced problem. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedModel {
    /// Quadratic coefficient of `f`.
    pub a: f64,
    /// Linear coefficient of `f`.
    pub b: f64,
    /// Upper control bound, the infected inflow rate.
    pub mu_i: f64,
    /// Rescaled unit control cost.
    pub c: f64,
    /// `B^2 + 4 A mu_I`.
    pub delta: f64,
    pub sqrt_delta: f64,
    pub r0_minus: f64,
    pub r0_plus: f64,
    /// Positive equilibrium under full screening, `B / A`.
    pub rmu_plus: f64,
    /// Reflection center `(1 + B C) / (2 A C)`.
    pub x_bar_c: f64,
    /// Mean of `rmu_plus` and `r0_plus`.
    pub r_bar_plus: f64,
    /// Supremum of last-switch states.
    pub xs_sup: f64,
    /// Right end of the domain of the last-switch map.
    pub xt_sup: f64,
    pub r0: f64,
    pub horizon: f64,
    pub regime: Regime,
    /// State `x̄_C - C mu_I / 2` where full-screening orbits touch `S`.
    /// Infinite when it lies outside `(B / A, x_S^sup)`, where every
    /// crossing is transversal.
    pub mu_tangency: f64,
    /// State where the lower boundary of `V` meets `σ`. Infinite in the
    /// one-switch branch.
    pub v_junction: f64,
}

fn require(name: &'static str, ok: bool, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: reason.into(),
        })
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    require(name, v.is_finite() && v > 0.0, format!("must be finite and > 0, got {v}"))
}

fn probability(name: &'static str, v: f64) -> Result<()> {
    require(
        name,
        v.is_finite() && (0.0..=1.0).contains(&v),
        format!("must lie in [0, 1], got {v}"),
    )
}

/// Validate raw inputs and compute every derived constant.
pub fn derive(raw: &RawParameters) -> Result<DerivedModel> {
    positive("beta", raw.beta)?;
    positive("gamma", raw.gamma)?;
    positive("mu", raw.mu)?;
    probability("p_I", raw.p_i)?;
    require(
        "p_I",
        raw.p_i > 0.0,
        "must be > 0: with no infected inflow the control set collapses to {0}",
    )?;
    probability("eta", raw.eta)?;
    probability("delta", raw.delta)?;
    probability("pi", raw.pi)?;
    positive("horizon", raw.horizon)?;
    match raw.cost {
        CostInput::Unit {
            detection,
            treatment,
            infected,
        } => {
            positive("cost_detection", detection)?;
            positive("cost_treatment", treatment)?;
            positive("cost_infected", infected)?;
        }
        CostInput::Rescaled(c) => positive("C", c)?,
    }

    if raw.eta != 0.0 || raw.pi != 1.0 {
        return Err(Error::AssumptionViolation(format!(
            "the test must have perfect sensitivity and treatment must always succeed \
             (eta = 0, pi = 1); got eta = {}, pi = {}",
            raw.eta, raw.pi
        )));
    }
    let r0 = raw.beta / (raw.gamma + raw.mu);
    if r0 <= 1.0 {
        return Err(Error::AssumptionViolation(format!(
            "basic reproduction number beta/(gamma+mu) must exceed 1, got {r0}"
        )));
    }

    let mu_i = raw.p_i * raw.mu;
    let mu_i_treated = (1.0 - raw.eta) * raw.pi * mu_i;
    let c = match raw.cost {
        CostInput::Rescaled(c) => c,
        CostInput::Unit {
            detection,
            treatment,
            infected,
        } => {
            let treated_share = (1.0 - raw.eta) * raw.p_i + raw.delta * (1.0 - raw.p_i);
            (raw.mu / mu_i_treated)
                * ((detection / infected) * raw.mu + (treatment / infected) * raw.mu * treated_share)
        }
    };
    let mut model = DerivedModel::from_reduced(raw.beta, raw.beta - (raw.gamma + raw.mu), mu_i, c, raw.horizon)?;
    model.r0 = r0;
    Ok(model)
}

impl DerivedModel {
    /// Build the model straight from the reduced constants `A, B, mu_I, C, T`.
    pub fn from_reduced(a: f64, b: f64, mu_i: f64, c: f64, horizon: f64) -> Result<Self> {
        positive("A", a)?;
        positive("B", b)?;
        positive("mu_I", mu_i)?;
        positive("C", c)?;
        positive("horizon", horizon)?;
        require("A", a > b, "A must exceed B (recovery plus exit rate is positive)")?;
        require(
            "mu_I",
            mu_i + b - a < 0.0,
            "the drift at x = 1 must point inward (mu_I < A - B)",
        )?;

        let delta = b * b + 4.0 * a * mu_i;
        let sqrt_delta = delta.sqrt();
        let r0_plus = (b + sqrt_delta) / (2.0 * a);
        let r0_minus = -mu_i / (a * r0_plus);
        let rmu_plus = b / a;
        let x_bar_c = (1.0 + b * c) / (2.0 * a * c);
        let r_bar_plus = 0.5 * (rmu_plus + r0_plus);
        let (xs_sup, xt_sup) = if x_bar_c < r0_plus {
            (2.0 * x_bar_c - r0_plus, r0_plus)
        } else {
            let gap = x_bar_c - r0_plus;
            (x_bar_c, r0_plus + a * c * gap * gap)
        };

        let mut model = DerivedModel {
            a,
            b,
            mu_i,
            c,
            delta,
            sqrt_delta,
            r0_minus,
            r0_plus,
            rmu_plus,
            x_bar_c,
            r_bar_plus,
            xs_sup,
            xt_sup,
            r0: a / (a - b),
            horizon,
            regime: Regime {
                branch: Branch::OneSwitch,
                sub_case: SubCase::Generic,
                placement: CenterPlacement::BelowMidpoint,
            },
            mu_tangency: f64::INFINITY,
            v_junction: f64::INFINITY,
        };
        let touch = x_bar_c - 0.5 * c * mu_i;
        if touch > rmu_plus && touch < xs_sup {
            model.mu_tangency = touch;
        }
        model.regime = classify_regime(&model);
        model.v_junction = crate::curves::junction_state(&model);
        Ok(model)
    }

    /// `f(x) = B x - A x^2`.
    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        x * (self.b - self.a * x)
    }

    #[inline]
    pub fn f_prime(&self, x: f64) -> f64 {
        self.b - 2.0 * self.a * x
    }

    /// Right-hand side of the state equation under control `w`.
    #[inline]
    pub fn drift(&self, x: f64, w: f64) -> f64 {
        self.mu_i - w + self.f(x)
    }

    pub fn check_level(&self, w: f64) -> Result<()> {
        if w.is_finite() && (0.0..=self.mu_i).contains(&w) {
            Ok(())
        } else {
            Err(Error::ControlOutOfRange {
                level: w,
                max: self.mu_i,
            })
        }
    }

    /// Roots `(r_w^-, r_w^+)` of `-A x^2 + B x + (mu_I - w) = 0` without range checks.
    #[inline]
    pub(crate) fn roots(&self, w: f64) -> (f64, f64) {
        if w == 0.0 {
            return (self.r0_minus, self.r0_plus);
        }
        let q = self.mu_i - w;
        let root = (self.b * self.b + 4.0 * self.a * q).sqrt();
        let plus = (self.b + root) / (2.0 * self.a);
        (-q / (self.a * plus), plus)
    }

    /// Both equilibria of the dynamics under constant control `w`.
    pub fn equilibria(&self, w: f64) -> Result<(f64, f64)> {
        self.check_level(w)?;
        Ok(self.roots(w))
    }

    /// True when `x̄_C` sits left of `r̄⁺`, equivalently `2 < C(B + sqrt(Delta))`.
    pub fn center_below_midpoint(&self) -> bool {
        self.x_bar_c < self.r_bar_plus
    }

    /// Whether a first-switch curve exists, i.e. last-switch states reach
    /// above `B / A`. Holds in the two-switch branch and in the one-switch
    /// branch once `x̄_C` passes the midpoint of the positive equilibria.
    pub fn has_first_switch(&self) -> bool {
        self.xs_sup > self.rmu_plus
    }
}

/// Select the synthesis branch and degenerate sub-case. Comparisons are exact.
pub fn classify_regime(model: &DerivedModel) -> Regime {
    let branch = if model.x_bar_c <= model.r0_plus {
        Branch::OneSwitch
    } else {
        Branch::TwoSwitch
    };
    let sub_case = if model.xs_sup < 0.0 {
        SubCase::NoSwitchEver
    } else if model.xs_sup > 1.0 {
        SubCase::FirstSwitchOutsideUnitBox
    } else {
        SubCase::Generic
    };
    let placement = if model.x_bar_c < model.r_bar_plus {
        CenterPlacement::BelowMidpoint
    } else if model.x_bar_c < model.r0_plus {
        CenterPlacement::BetweenMidpointAndEndemic
    } else {
        CenterPlacement::AtOrAboveEndemic
    };
    Regime {
        branch,
        sub_case,
        placement,
    }
}

/// Convenience equivalent of [`DerivedModel::equilibria`].
pub fn equilibria(model: &DerivedModel, w: f64) -> Result<(f64, f64)> {
    model.equilibria(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(c: f64) -> RawParameters {
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

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn derives_reference_constants() {
        let m = derive(&raw(5.0)).unwrap();
        assert!(close(m.a, 0.5, 1e-15));
        assert!(close(m.b, 0.3, 1e-15));
        assert!(close(m.mu_i, 0.03, 1e-15));
        assert!(close(m.r0, 2.5, 1e-15));
        assert!(close(m.delta, 0.15, 1e-15));
        // mpmath root finder on -A x^2 + B x + mu_I at 40 digits
        assert!(close(m.r0_plus, 0.687_298_334_620_741_7, 1e-15));
        assert!(close(m.r0_minus, -0.087_298_334_620_741_69, 1e-15));
        assert!(close(m.rmu_plus, 0.6, 1e-15));
    }

    #[test]
    fn rejects_imperfect_test_or_treatment() {
        let mut p = raw(5.0);
        p.eta = 0.1;
        assert!(matches!(derive(&p), Err(Error::AssumptionViolation(_))));
        let mut p = raw(5.0);
        p.pi = 0.9;
        assert!(matches!(derive(&p), Err(Error::AssumptionViolation(_))));
    }

    #[test]
    fn rejects_subcritical_epidemic() {
        let mut p = raw(5.0);
        p.beta = 0.15;
        assert!(matches!(derive(&p), Err(Error::AssumptionViolation(_))));
    }

    #[test]
    fn range_violations_are_invalid_parameters() {
        let mut p = raw(5.0);
        p.delta = 1.5;
        assert!(matches!(derive(&p), Err(Error::InvalidParameter { name: "delta", .. })));
        let mut p = raw(5.0);
        p.gamma = -1.0;
        assert!(matches!(derive(&p), Err(Error::InvalidParameter { name: "gamma", .. })));
        let mut p = raw(5.0);
        p.horizon = 0.0;
        assert!(matches!(derive(&p), Err(Error::InvalidParameter { name: "horizon", .. })));
        let mut p = raw(5.0);
        p.p_i = 0.0;
        assert!(matches!(derive(&p), Err(Error::InvalidParameter { name: "p_I", .. })));
    }

    #[test]
    fn unit_costs_rescale_into_c() {
        let mut p = raw(1.0);
        p.delta = 0.2;
        p.cost = CostInput::Unit {
            detection: 2.0,
            treatment: 3.0,
            infected: 4.0,
        };
        let m = derive(&p).unwrap();
        // (mu / mu_I) * ((CD/CI) mu + (CT/CI) mu [p_I + delta (1 - p_I)])
        let expected = (0.1 / 0.03) * (0.5 * 0.1 + 0.75 * 0.1 * (0.3 + 0.2 * 0.7));
        assert!(close(m.c, expected, 1e-14));
        // delta never touches the dynamics
        let base = derive(&raw(1.0)).unwrap();
        assert_eq!(base.r0_plus, m.r0_plus);
    }

    #[test]
    fn classifies_reference_regimes() {
        let one = derive(&raw(5.0)).unwrap();
        assert_eq!(one.regime.branch, Branch::OneSwitch);
        assert_eq!(one.regime.placement, CenterPlacement::BelowMidpoint);
        assert!(close(one.x_bar_c, 0.5, 1e-15));
        assert!(close(one.xs_sup, 0.312_701_665_379_258_3, 1e-14));

        let two = derive(&raw(2.0)).unwrap();
        assert_eq!(two.regime.branch, Branch::TwoSwitch);
        assert!(close(two.x_bar_c, 0.8, 1e-15));
        assert_eq!(two.xs_sup, two.x_bar_c);
        assert!(close(two.xt_sup, 0.7, 1e-14));

        let none = derive(&raw(100.0)).unwrap();
        assert_eq!(none.regime.sub_case, SubCase::NoSwitchEver);
        assert_eq!(none.regime.branch, Branch::OneSwitch);

        let wide = derive(&raw(1.0)).unwrap();
        assert_eq!(wide.regime.sub_case, SubCase::FirstSwitchOutsideUnitBox);
        assert_eq!(wide.regime.branch, Branch::TwoSwitch);
    }

    #[test]
    fn equilibria_examples() {
        let m = derive(&raw(5.0)).unwrap();
        let (lo, hi) = m.equilibria(m.mu_i).unwrap();
        assert_eq!(lo, 0.0);
        assert_eq!(hi, m.b / m.a);
        let (lo, hi) = m.equilibria(0.015).unwrap();
        assert!(close(lo, -0.046_410_161_513_775_46, 1e-14));
        assert!(close(hi, 0.646_410_161_513_775_5, 1e-14));
        assert!(matches!(m.equilibria(0.031), Err(Error::ControlOutOfRange { .. })));
        assert!(matches!(m.equilibria(-1e-9), Err(Error::ControlOutOfRange { .. })));
    }

    #[test]
    fn equilibria_sweep_is_monotone() {
        let m = derive(&raw(5.0)).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=200 {
            let w = m.mu_i * k as f64 / 200.0;
            let (lo, hi) = m.equilibria(w).unwrap();
            assert!(lo <= 0.0 && 0.0 <= hi && hi < 1.0);
            assert!(hi < prev);
            prev = hi;
        }
    }

    fn arb_model() -> impl Strategy<Value = DerivedModel> {
        (0.2f64..2.0, 0.05f64..0.9, 0.02f64..0.5, 0.01f64..1.0, 0.1f64..50.0).prop_filter_map(
            "R0 > 1",
            |(beta, frac, mu, p_i, c)| {
                let gamma = beta * frac * 0.9;
                let mu = mu.min(beta - gamma - 1e-3);
                if mu <= 0.0 {
                    return None;
                }
                derive(&RawParameters {
                    beta,
                    gamma,
                    mu,
                    p_i,
                    eta: 0.0,
                    delta: 0.0,
                    pi: 1.0,
                    cost: CostInput::Rescaled(c),
                    horizon: 10.0,
                })
                .ok()
            },
        )
    }

    proptest! {
        #[test]
        fn derived_invariants(m in arb_model()) {
            prop_assert!(m.b > 0.0);
            prop_assert!(m.r0_minus < 0.0 && 0.0 < m.rmu_plus && m.rmu_plus < m.r0_plus && m.r0_plus < 1.0);
            prop_assert_eq!(m.delta, m.b * m.b + 4.0 * m.a * m.mu_i);
            let slope = m.c * m.f_prime(m.x_bar_c);
            prop_assert!((slope + 1.0).abs() <= 1e-12 * (m.c * m.b).max(1.0));
            let lhs = 2.0 * m.x_bar_c - m.r0_plus;
            let rhs = 1.0 / (m.a * m.c) + m.r0_minus;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
            prop_assert_eq!(m.x_bar_c < m.r_bar_plus, 2.0 < m.c * (m.b + m.sqrt_delta));
            prop_assert_eq!(m.x_bar_c >= m.r0_plus, 1.0 >= m.c * m.sqrt_delta);
            if m.regime.sub_case == SubCase::NoSwitchEver {
                prop_assert_eq!(m.regime.branch, Branch::OneSwitch);
            }
            if m.regime.sub_case == SubCase::FirstSwitchOutsideUnitBox {
                prop_assert_eq!(m.regime.branch, Branch::TwoSwitch);
            }
        }
    }
}
