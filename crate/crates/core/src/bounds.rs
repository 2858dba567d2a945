//! Closed-form pointwise bounds on the fraction negatively affected.
//!
//! Everything here works on a single covariate point, described by the two
//! conditional outcome means `mu0 = E[Y | X = x, A = 0]` and
//! `mu1 = E[Y | X = x, A = 1]`. The harm probability at that point is
//! `FNA(x) = P(Y⁰ = 1, Y¹ = 0 | X = x)`, which the marginals alone do not pin
//! down; the conditional correlation `rho = Corr(Y⁰, Y¹ | X = x)` does.
//!
//! All functions are pure and allocation free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when a caller-supplied correlation sits just outside the
/// feasible range because of estimation or rounding noise.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

/// Conditional outcome means `(mu0, mu1)` at one covariate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPair {
    mu0: f64,
    mu1: f64,
}

impl MarginalPair {
    pub fn new(mu0: f64, mu1: f64) -> Result<Self> {
        check_probability("mu0", mu0)?;
        check_probability("mu1", mu1)?;
        Ok(Self { mu0, mu1 })
    }

    #[inline]
    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    #[inline]
    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    /// Conditional average treatment effect `mu1 - mu0`.
    #[inline]
    pub fn tau(&self) -> f64 {
        self.mu1 - self.mu0
    }

    /// Product of the two potential-outcome standard deviations.
    #[inline]
    pub fn sd_product(&self) -> f64 {
        (self.mu0 * (1.0 - self.mu0) * self.mu1 * (1.0 - self.mu1)).sqrt()
    }

    /// Harm probability under conditional independence, `mu0 (1 - mu1)`.
    #[inline]
    pub fn independence_fna(&self) -> f64 {
        self.mu0 * (1.0 - self.mu1)
    }

    /// True when either marginal sits on 0 or 1, so the correlation is undefined.
    #[inline]
    pub fn is_degenerate(&self) -> bool {
        self.mu0 <= 0.0 || self.mu0 >= 1.0 || self.mu1 <= 0.0 || self.mu1 >= 1.0
    }

    /// `mu0 (1 - mu1) - rho * sd_product`, the harm probability implied by `rho`
    /// before any truncation.
    #[inline]
    pub fn harm_line(&self, rho: f64) -> f64 {
        self.independence_fna() - rho * self.sd_product()
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { name, value })
    }
}

/// Assumed range `[rho_l, rho_u]` for `Corr(Y⁰, Y¹ | X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoInterval {
    rho_l: f64,
    rho_u: f64,
}

impl RhoInterval {
    pub fn new(rho_l: f64, rho_u: f64) -> Result<Self> {
        let in_range = |r: f64| (-1.0..=1.0).contains(&r);
        if !in_range(rho_l) || !in_range(rho_u) || rho_l > rho_u {
            return Err(Error::InvalidInterval {
                lower: rho_l,
                upper: rho_u,
            });
        }
        Ok(Self { rho_l, rho_u })
    }

    pub fn point(rho: f64) -> Result<Self> {
        Self::new(rho, rho)
    }

    pub fn full() -> Self {
        Self {
            rho_l: -1.0,
            rho_u: 1.0,
        }
    }

    #[inline]
    pub fn lower(&self) -> f64 {
        self.rho_l
    }

    #[inline]
    pub fn upper(&self) -> f64 {
        self.rho_u
    }

    pub fn contains(&self, rho: f64) -> bool {
        self.rho_l <= rho && rho <= self.rho_u
    }

    /// Intersection with `other`, or `None` when they are disjoint.
    pub fn intersect(&self, other: &RhoInterval) -> Option<RhoInterval> {
        let lo = self.rho_l.max(other.rho_l);
        let hi = self.rho_u.min(other.rho_u);
        (lo <= hi).then_some(RhoInterval { rho_l: lo, rho_u: hi })
    }

    /// Clamp both endpoints into `feasible`. An interval that misses the
    /// feasible range entirely collapses onto the nearest feasible endpoint.
    pub fn clamped_to(&self, feasible: &RhoInterval) -> RhoInterval {
        let clamp = |r: f64| r.clamp(feasible.rho_l, feasible.rho_u);
        RhoInterval {
            rho_l: clamp(self.rho_l),
            rho_u: clamp(self.rho_u),
        }
    }
}

/// Lower and upper bound on a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.lower - tol <= value && value <= self.upper + tol
    }

    /// True when `self` lies inside `outer` up to `tol`.
    pub fn nested_in(&self, outer: &BoundPair, tol: f64) -> bool {
        outer.lower - tol <= self.lower && self.upper <= outer.upper + tol
    }
}

/// Association between the two potential outcomes at one covariate point.
///
/// Each measure is `None` when its definition divides by zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationMeasures {
    pub rho: Option<f64>,
    pub rd: Option<f64>,
    pub rr: Option<f64>,
    pub odds_ratio: Option<f64>,
}

/// Fréchet–Hoeffding bounds from the marginals alone:
/// `[max(mu0 - mu1, 0), min(mu0, 1 - mu1)]`.
pub fn fh_bounds(m: MarginalPair) -> BoundPair {
    BoundPair {
        lower: (m.mu0 - m.mu1).max(0.0),
        upper: m.mu0.min(1.0 - m.mu1),
    }
}

/// Range of `Corr(Y⁰, Y¹ | X = x)` compatible with the marginals.
pub fn rho_feasible_range(m: MarginalPair) -> Result<RhoInterval> {
    if m.is_degenerate() {
        return Err(Error::DegenerateMarginal {
            mu0: m.mu0,
            mu1: m.mu1,
        });
    }
    let (mu0, mu1) = (m.mu0, m.mu1);
    let sd = m.sd_product();
    let lower = -((1.0 - mu0) * (1.0 - mu1)).min(mu0 * mu1) / sd;
    let upper = (mu0 * (1.0 - mu1)).min(mu1 * (1.0 - mu0)) / sd;
    Ok(RhoInterval {
        rho_l: lower.max(-1.0),
        rho_u: upper.min(1.0),
    })
}

fn resolve_rho(m: MarginalPair, rho: f64, feasible: &RhoInterval) -> Result<f64> {
    if rho < feasible.rho_l - FEASIBILITY_SLACK || rho > feasible.rho_u + FEASIBILITY_SLACK {
        return Err(Error::InfeasibleRho {
            rho,
            feasible_lower: feasible.rho_l,
            feasible_upper: feasible.rho_u,
        });
    }
    debug_assert!(!m.is_degenerate());
    Ok(rho.clamp(feasible.rho_l, feasible.rho_u))
}

/// Sharp bounds under `rho_l <= rho(x) <= rho_u` with `ri` inside the
/// feasible range. Endpoints within [`FEASIBILITY_SLACK`] of the feasible
/// range are clamped onto it; anything further out is an error, use
/// [`general_bounds`] for arbitrary intervals.
///
/// Degenerate marginals identify the harm probability outright, so both ends
/// equal `mu0 (1 - mu1)`.
pub fn sensitivity_bounds(m: MarginalPair, ri: RhoInterval) -> Result<BoundPair> {
    if m.is_degenerate() {
        let v = m.independence_fna().max(0.0);
        return Ok(BoundPair { lower: v, upper: v });
    }
    let feasible = rho_feasible_range(m)?;
    let rho_l = resolve_rho(m, ri.rho_l, &feasible)?;
    let rho_u = resolve_rho(m, ri.rho_u, &feasible)?;
    Ok(BoundPair {
        lower: m.harm_line(rho_u).max(0.0),
        upper: m.harm_line(rho_l).max(0.0),
    })
}

/// Sharp bounds for an interval of any sign, capped by the Fréchet–Hoeffding
/// envelope.
///
/// Fails with [`Error::EmptyFeasibleSet`] when `ri` misses the feasible range
/// of the correlation by more than [`FEASIBILITY_SLACK`]; no joint
/// distribution is then compatible with both the marginals and `ri`.
pub fn general_bounds(m: MarginalPair, ri: RhoInterval) -> Result<BoundPair> {
    if !m.is_degenerate() {
        let feasible = rho_feasible_range(m)?;
        if ri.rho_l > feasible.rho_u + FEASIBILITY_SLACK
            || ri.rho_u < feasible.rho_l - FEASIBILITY_SLACK
        {
            return Err(Error::EmptyFeasibleSet(format!(
                "[{}, {}] does not meet the feasible range [{}, {}]",
                ri.rho_l, ri.rho_u, feasible.rho_l, feasible.rho_u
            )));
        }
    }
    let fh = fh_bounds(m);
    let lower = m.harm_line(ri.rho_u).max(fh.lower);
    let upper = fh.upper.min(m.harm_line(ri.rho_l).max(0.0));
    // Within the slack the two ends can cross by a rounding error.
    if lower > upper {
        let mid = 0.5 * (lower + upper);
        return Ok(BoundPair { lower: mid, upper: mid });
    }
    Ok(BoundPair { lower, upper })
}

/// Smallest `rho_u` that makes the lower bound vanish when `tau > 0`:
/// `sqrt(mu0 (1 - mu1) / ((1 - mu0) mu1))`.
pub fn rho_star_threshold(m: MarginalPair) -> Result<f64> {
    if m.is_degenerate() {
        return Err(Error::DegenerateMarginal {
            mu0: m.mu0,
            mu1: m.mu1,
        });
    }
    if m.tau() <= 0.0 {
        return Err(Error::NotApplicable(format!(
            "tau = {} <= 0, the lower bound is positive for every feasible rho_u",
            m.tau()
        )));
    }
    Ok((m.mu0 * (1.0 - m.mu1) / ((1.0 - m.mu0) * m.mu1)).sqrt())
}

/// Odds ratio of treatment on outcome at the covariate point,
/// `mu1 (1 - mu0) / ((1 - mu1) mu0)`.
pub fn odds_ratio_ay(m: MarginalPair) -> Result<f64> {
    if m.is_degenerate() {
        return Err(Error::DegenerateMarginal {
            mu0: m.mu0,
            mu1: m.mu1,
        });
    }
    Ok(m.mu1 * (1.0 - m.mu0) / ((1.0 - m.mu1) * m.mu0))
}

/// The threshold written through the treatment–outcome odds ratio:
/// `sqrt(1 / OR_AY)`, meaningful for `OR_AY > 1`.
pub fn rho_star_from_odds_ratio(odds_ratio: f64) -> Result<f64> {
    if odds_ratio.is_nan() || odds_ratio <= 1.0 || odds_ratio.is_infinite() {
        return Err(Error::NotApplicable(format!(
            "odds ratio {odds_ratio} must be finite and exceed 1"
        )));
    }
    Ok((1.0 / odds_ratio).sqrt())
}

/// The lower bound in factored form, together with the harm criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposedLower {
    pub value: f64,
    /// Even the most favourable joint distribution harms someone.
    pub harmful_best_case: bool,
}

/// Lower bound written as
/// `max{-tau + (1 - rho_u²)(1 - mu0) mu1, 0} * a / (a + rho_u b)` with
/// `a = sqrt(mu0 (1 - mu1))`, `b = sqrt((1 - mu0) mu1)`.
pub fn lower_bound_decomposed(m: MarginalPair, rho_u: f64) -> Result<DecomposedLower> {
    let feasible = rho_feasible_range(m)?;
    if rho_u < -FEASIBILITY_SLACK || rho_u > feasible.rho_u + FEASIBILITY_SLACK {
        return Err(Error::InfeasibleRho {
            rho: rho_u,
            feasible_lower: 0.0,
            feasible_upper: feasible.rho_u,
        });
    }
    let rho_u = rho_u.clamp(0.0, feasible.rho_u);
    let (mu0, mu1) = (m.mu0, m.mu1);
    let margin = (1.0 - rho_u * rho_u) * (1.0 - mu0) * mu1;
    let a = (mu0 * (1.0 - mu1)).sqrt();
    let b = ((1.0 - mu0) * mu1).sqrt();
    let value = (margin - m.tau()).max(0.0) * a / (a + rho_u * b);
    Ok(DecomposedLower {
        value,
        harmful_best_case: m.tau() < margin,
    })
}

/// Closed-form caps on the two upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperCaps {
    /// `(1 - tau) / 2`, dominating the Fréchet–Hoeffding upper bound.
    pub fh_cap: f64,
    /// `(1 - tau)² / 4`, dominating `mu0 (1 - mu1)`.
    pub indep_cap: f64,
}

pub fn upper_bound_caps(m: MarginalPair) -> UpperCaps {
    let s = 1.0 - m.tau();
    UpperCaps {
        fh_cap: s / 2.0,
        indep_cap: s * s / 4.0,
    }
}

/// Harm probability implied by a fixed correlation.
pub fn fna_given_rho(m: MarginalPair, rho: f64) -> Result<f64> {
    if m.is_degenerate() {
        return Ok(m.independence_fna());
    }
    let feasible = rho_feasible_range(m)?;
    let rho = resolve_rho(m, rho, &feasible)?;
    Ok(m.harm_line(rho))
}

/// Bounds on the fraction positively affected, `FPA(x) = FNA(x) + tau(x)`.
pub fn fpa_bounds(m: MarginalPair, ri: RhoInterval) -> Result<BoundPair> {
    let fna = general_bounds(m, ri)?;
    let shift = |v: f64| (v + m.tau()).clamp(0.0, 1.0);
    Ok(BoundPair {
        lower: shift(fna.lower),
        upper: shift(fna.upper),
    })
}

/// Average of pointwise bounds over a population of covariate points.
pub fn mean_bounds<I>(bounds: I) -> Option<BoundPair>
where
    I: IntoIterator<Item = BoundPair>,
{
    let mut n = 0usize;
    let (mut lo, mut hi) = (0.0, 0.0);
    for b in bounds {
        n += 1;
        lo += b.lower;
        hi += b.upper;
    }
    (n > 0).then(|| BoundPair {
        lower: lo / n as f64,
        upper: hi / n as f64,
    })
}
