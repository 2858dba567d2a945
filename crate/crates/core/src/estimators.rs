//! Cross-fitted influence-function estimators.
//!
//! The target is `β_ρ = E[max{g(η, ρ), 0}]` with
//! `g(η, ρ) = μ0 (1 − μ1) − ρ √(μ0(1−μ0)μ1(1−μ1))`. At `ρ = 0` this is the
//! smooth functional `β_0 = E[μ0 (1 − μ1)]`; otherwise the per-unit summand is
//! `I{g ≥ 0} (φ_β − ρ φ_γ)`, where `φ_β` and `φ_γ` are the uncentred efficient
//! influence functions of `β_0` and `γ = E[√(μ0(1−μ0)μ1(1−μ1))]`.
//!
//! Every estimate is a plain sample mean of per-unit summands, its variance
//! the `1/n` sample variance of those summands, and its interval a Wald
//! interval. Summation is sequential so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::bounds::{rho_feasible_range, MarginalPair, RhoInterval};
use crate::error::{Error, Result};
use crate::nuisance::{Dataset, Eta, NuisanceFit};
use crate::stats::{quantile_sorted, two_sided_z};

/// Uncentred influence function of `β_0 = E[μ0(1 − μ1)]`.
pub fn phi_beta(y: u8, a: u8, eta: Eta) -> f64 {
    let (y, a) = (y as f64, a as f64);
    let Eta { e, mu0, mu1 } = eta;
    (1.0 - a) * (y - mu0) / (1.0 - e) * (1.0 - mu1) - a * (y - mu1) / e * mu0 + mu0 * (1.0 - mu1)
}

/// Uncentred influence function of `γ = E[√(μ0(1−μ0)μ1(1−μ1))]`.
pub fn phi_gamma(y: u8, a: u8, eta: Eta) -> f64 {
    let (y, a) = (y as f64, a as f64);
    let Eta { e, mu0, mu1 } = eta;
    let v0 = mu0 * (1.0 - mu0);
    let v1 = mu1 * (1.0 - mu1);
    let treated = (1.0 - 2.0 * mu1) / 2.0 * (v0 / v1).sqrt() * a * (y - mu1) / e;
    let control = (1.0 - 2.0 * mu0) / 2.0 * (v1 / v0).sqrt() * (1.0 - a) * (y - mu0) / (1.0 - e);
    treated + control + (v0 * v1).sqrt()
}

/// `g(η, ρ)`, the untruncated pointwise harm line.
pub fn g_value(eta: Eta, rho: f64) -> f64 {
    let Eta { mu0, mu1, .. } = eta;
    mu0 * (1.0 - mu1) - rho * (mu0 * (1.0 - mu0) * mu1 * (1.0 - mu1)).sqrt()
}

/// Per-unit pieces of the estimator at one `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub phi_beta: f64,
    pub phi_gamma: f64,
    pub g_value: f64,
    /// `I{g ≥ 0} (φ_β − ρ φ_γ)`.
    pub varphi: f64,
}

impl InfluenceRow {
    pub fn new(y: u8, a: u8, eta: Eta, rho: f64) -> Self {
        let pb = phi_beta(y, a, eta);
        let pg = phi_gamma(y, a, eta);
        let g = g_value(eta, rho);
        let varphi = if g >= 0.0 { pb - rho * pg } else { 0.0 };
        Self {
            phi_beta: pb,
            phi_gamma: pg,
            g_value: g,
            varphi,
        }
    }

    /// The summand entering `β̂_ρ`: `φ_β` itself at `ρ = 0`, `varphi` otherwise.
    pub fn summand(&self, rho: f64) -> f64 {
        if rho == 0.0 {
            self.phi_beta
        } else {
            self.varphi
        }
    }
}

/// Point estimate with a Wald interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub n: usize,
    /// Units whose implied harm probability `g(η̂, ρ)` exceeds the
    /// Fréchet–Hoeffding upper bound; only possible for `ρ` below the
    /// feasible range, i.e. negative `ρ`.
    #[serde(default)]
    pub units_above_fh_cap: usize,
}

impl EstimateReport {
    /// Mean, `1/n` plug-in variance and Wald interval of `summands`.
    pub fn from_summands(summands: &[f64], level: f64) -> Result<Self> {
        check_level(level)?;
        let n = summands.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no summands".into()));
        }
        let nf = n as f64;
        let estimate = summands.iter().sum::<f64>() / nf;
        let sigma2 = summands.iter().map(|s| (s - estimate).powi(2)).sum::<f64>() / nf;
        let se = (sigma2 / nf).sqrt();
        let half = two_sided_z(level) * se;
        Ok(Self {
            estimate,
            se,
            ci_lower: estimate - half,
            ci_upper: estimate + half,
            level,
            n,
            units_above_fh_cap: 0,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("confidence level {level} must lie in (0, 1)")))
    }
}

/// Influence rows for every unit at `rho`.
pub fn influence_rows(data: &Dataset, fit: &NuisanceFit, rho: f64) -> Result<Vec<InfluenceRow>> {
    fit.check_aligned(data)?;
    Ok((0..data.n())
        .map(|i| InfluenceRow::new(data.outcome()[i], data.treatment()[i], fit.eta(i), rho))
        .collect())
}

fn count_above_cap(fit: &NuisanceFit, rho: f64) -> usize {
    if rho >= 0.0 {
        return 0;
    }
    (0..fit.len())
        .filter(|&i| {
            let eta = fit.eta(i);
            g_value(eta, rho) > eta.mu0.min(1.0 - eta.mu1) + 1e-12
        })
        .count()
}

fn weighted_beta(
    data: &Dataset,
    fit: &NuisanceFit,
    rho: f64,
    level: f64,
    weights: Option<&[u8]>,
) -> Result<EstimateReport> {
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(Error::InvalidArgument(format!("rho = {rho} must lie in [-1, 1]")));
    }
    let rows = influence_rows(data, fit, rho)?;
    let summands: Vec<f64> = match weights {
        None => rows.iter().map(|r| r.summand(rho)).collect(),
        Some(d) => rows.iter().zip(d).map(|(r, &w)| w as f64 * r.summand(rho)).collect(),
    };
    let mut report = EstimateReport::from_summands(&summands, level)?;
    report.units_above_fh_cap = count_above_cap(fit, rho);
    Ok(report)
}

/// `β̂_ρ` with its influence-function standard error.
///
/// The estimate is never truncated to `[0, 1]`: it estimates `β_ρ` as
/// defined and may stray slightly outside at small `n`.
pub fn estimate_beta(data: &Dataset, fit: &NuisanceFit, rho: f64, level: f64) -> Result<EstimateReport> {
    weighted_beta(data, fit, rho, level, None)
}

/// Estimates over a correlation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub rho_grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
}

impl CurveReport {
    pub fn len(&self) -> usize {
        self.rho_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_grid.is_empty()
    }
}

pub fn sensitivity_curve(data: &Dataset, fit: &NuisanceFit, rho_grid: &[f64], level: f64) -> Result<CurveReport> {
    if rho_grid.is_empty() {
        return Err(Error::InvalidArgument("empty rho grid".into()));
    }
    if rho_grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::InvalidArgument("rho grid must be strictly ascending".into()));
    }
    let mut curve = CurveReport {
        rho_grid: rho_grid.to_vec(),
        estimates: Vec::with_capacity(rho_grid.len()),
        se: Vec::with_capacity(rho_grid.len()),
        ci_lower: Vec::with_capacity(rho_grid.len()),
        ci_upper: Vec::with_capacity(rho_grid.len()),
        level,
    };
    for &rho in rho_grid {
        let r = estimate_beta(data, fit, rho, level)?;
        curve.estimates.push(r.estimate);
        curve.se.push(r.se);
        curve.ci_lower.push(r.ci_lower);
        curve.ci_upper.push(r.ci_upper);
    }
    Ok(curve)
}

/// Per-unit feasible correlation ranges and a single `ρ_u` chosen as a
/// sample quantile of the upper ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSelection {
    pub rho_u: f64,
    pub quantile: f64,
    /// Fraction of units whose upper end is at most `rho_u`.
    pub coverage: f64,
    /// `None` for units with a degenerate marginal.
    pub per_unit_upper: Vec<Option<f64>>,
    pub per_unit_lower: Vec<Option<f64>>,
    pub skipped: usize,
}

impl RhoSelection {
    /// Fraction of (non-skipped) units whose feasible upper end is at most `rho_u`.
    pub fn coverage_of(&self, rho_u: f64) -> f64 {
        let valid: Vec<f64> = self.per_unit_upper.iter().flatten().copied().collect();
        valid.iter().filter(|&&u| u <= rho_u).count() as f64 / valid.len() as f64
    }

    /// Central interval holding `mass` of the per-unit upper ends.
    pub fn upper_central_range(&self, mass: f64) -> (f64, f64) {
        central_range(&self.per_unit_upper, mass)
    }

    pub fn lower_central_range(&self, mass: f64) -> (f64, f64) {
        central_range(&self.per_unit_lower, mass)
    }
}

fn central_range(values: &[Option<f64>], mass: f64) -> (f64, f64) {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - mass) / 2.0;
    (quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail))
}

pub fn rho_upper_selection(fit: &NuisanceFit, quantile: f64) -> Result<RhoSelection> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {quantile} must lie in (0, 1)")));
    }
    let mut upper = Vec::with_capacity(fit.len());
    let mut lower = Vec::with_capacity(fit.len());
    let mut skipped = 0;
    for m in fit.marginals() {
        match rho_feasible_range(m) {
            Ok(r) => {
                upper.push(Some(r.upper()));
                lower.push(Some(r.lower()));
            }
            Err(Error::DegenerateMarginal { .. }) => {
                skipped += 1;
                upper.push(None);
                lower.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let mut sorted: Vec<f64> = upper.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("every unit has a degenerate marginal".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let rho_u = quantile_sorted(&sorted, quantile);
    let coverage = sorted.iter().filter(|&&u| u <= rho_u).count() as f64 / sorted.len() as f64;
    Ok(RhoSelection {
        rho_u,
        quantile,
        coverage,
        per_unit_upper: upper,
        per_unit_lower: lower,
        skipped,
    })
}

/// Augmented inverse-probability-weighted average treatment effect.
pub fn dr_ate(data: &Dataset, fit: &NuisanceFit, level: f64) -> Result<EstimateReport> {
    fit.check_aligned(data)?;
    let summands: Vec<f64> = (0..data.n())
        .map(|i| {
            let (y, a) = (data.outcome()[i] as f64, data.treatment()[i] as f64);
            let Eta { e, mu0, mu1 } = fit.eta(i);
            a * (y - mu1) / e - (1.0 - a) * (y - mu0) / (1.0 - e) + mu1 - mu0
        })
        .collect();
    EstimateReport::from_summands(&summands, level)
}

/// Lower and upper estimates of a bound pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    pub lower: EstimateReport,
    pub upper: EstimateReport,
}

/// Bounds on `FNA(d) = E[FNA(X) d(X)]` for a binary policy `d`: the
/// estimator at `ρ_u` (lower) and `ρ_l` (upper), summands multiplied by `d`.
pub fn policy_bounds(
    data: &Dataset,
    fit: &NuisanceFit,
    policy: &[u8],
    ri: RhoInterval,
    level: f64,
) -> Result<BoundEstimates> {
    fit.check_aligned(data)?;
    if policy.len() != data.n() {
        return Err(Error::MisalignedFit(format!(
            "policy has {} entries, data has {}",
            policy.len(),
            data.n()
        )));
    }
    if policy.iter().any(|&d| d > 1) {
        return Err(Error::InvalidArgument("policy must be binary".into()));
    }
    Ok(BoundEstimates {
        lower: weighted_beta(data, fit, ri.upper(), level, Some(policy))?,
        upper: weighted_beta(data, fit, ri.lower(), level, Some(policy))?,
    })
}

/// The policy that treats exactly when the estimated CATE exceeds `threshold`.
pub fn policy_from_cate(fit: &NuisanceFit, threshold: f64) -> Vec<u8> {
    (0..fit.len())
        .map(|i| (fit.mu1_hat[i] - fit.mu0_hat[i] > threshold) as u8)
        .collect()
}

/// Uncentred influence function of `E[μ_a(X)]` (the AIPW pseudo-outcome).
fn aipw_pseudo(y: f64, a: f64, eta: Eta, arm: u8) -> f64 {
    if arm == 1 {
        a * (y - eta.mu1) / eta.e + eta.mu1
    } else {
        (1.0 - a) * (y - eta.mu0) / (1.0 - eta.e) + eta.mu0
    }
}

/// Fréchet–Hoeffding bounds `E[max(μ0 − μ1, 0)]` and `E[min(μ0, 1 − μ1)]`,
/// estimated with the same indicator construction as `β̂_ρ`: the branch of
/// the max/min is picked from `η̂` and the active branch is replaced by its
/// AIPW pseudo-outcome.
pub fn fh_bound_estimates(data: &Dataset, fit: &NuisanceFit, level: f64) -> Result<BoundEstimates> {
    fit.check_aligned(data)?;
    let mut lower = Vec::with_capacity(data.n());
    let mut upper = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let (y, a) = (data.outcome()[i] as f64, data.treatment()[i] as f64);
        let eta = fit.eta(i);
        let psi0 = aipw_pseudo(y, a, eta, 0);
        let psi1 = aipw_pseudo(y, a, eta, 1);
        lower.push(if eta.mu0 - eta.mu1 >= 0.0 { psi0 - psi1 } else { 0.0 });
        upper.push(if eta.mu0 <= 1.0 - eta.mu1 { psi0 } else { 1.0 - psi1 });
    }
    Ok(BoundEstimates {
        lower: EstimateReport::from_summands(&lower, level)?,
        upper: EstimateReport::from_summands(&upper, level)?,
    })
}

/// Plug-in average of pointwise values over the fitted marginals.
pub fn plug_in_mean(fit: &NuisanceFit, f: impl Fn(MarginalPair) -> f64) -> f64 {
    fit.marginals().map(f).sum::<f64>() / fit.len() as f64
}
