//! Logistic-latent data-generating processes and the replication harness.
//!
//! Every case draws `X ~ N(0, I_p)`, `U ~ N(0, 1)` independent of `X`,
//! `A ~ Bernoulli(expit(θ_0 + θᵀX))` and, independently given `(X, U)`,
//! `Y^a ~ Bernoulli(expit(c_a + α_aᵀX + b_a U))`. `U` is unobserved, so the
//! identified outcome regressions are `μ_a(x) = E_U[expit(c_a + α_aᵀx + b_a U)]`.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{estimate_beta, EstimateReport};
use crate::nuisance::{cross_fit, ClipBounds, CrossFitOptions, Dataset, IrlsOptions, ModelSpec};
use crate::stats::{expit, mean, sample_sd, NormalQuadrature};

/// Order of the Gauss–Hermite rule used for latent-truth regressions.
pub const TRUTH_QUADRATURE_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    Custom,
}

impl CaseId {
    pub const BUILTIN: [CaseId; 6] = [CaseId::C1, CaseId::C2, CaseId::C3, CaseId::C4, CaseId::C5, CaseId::C6];
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseId::C1 => "C1",
            CaseId::C2 => "C2",
            CaseId::C3 => "C3",
            CaseId::C4 => "C4",
            CaseId::C5 => "C5",
            CaseId::C6 => "C6",
            CaseId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(CaseId::C1),
            "C2" => Ok(CaseId::C2),
            "C3" => Ok(CaseId::C3),
            "C4" => Ok(CaseId::C4),
            "C5" => Ok(CaseId::C5),
            "C6" => Ok(CaseId::C6),
            _ => Err(Error::InvalidArgument(format!("unknown case `{s}` (expected C1..C6)"))),
        }
    }
}

/// `intercept + coefficientsᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIndex {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearIndex {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Potential-outcome model `expit(index(x) + u_loading · U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentOutcome {
    pub index: LinearIndex,
    pub u_loading: f64,
}

impl LatentOutcome {
    /// `P(Y^a = 1 | X = x, U = u)`.
    pub fn prob(&self, x: &[f64], u: f64) -> f64 {
        expit(self.index.eval(x) + self.u_loading * u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub case_id: CaseId,
    pub p: usize,
    pub propensity: LinearIndex,
    pub outcome0: LatentOutcome,
    pub outcome1: LatentOutcome,
}

impl DgpSpec {
    pub fn case(id: CaseId) -> Result<Self> {
        let low_dim = |b0: f64, b1: f64| {
            let index = |c: f64| LinearIndex {
                intercept: c,
                coefficients: vec![0.5, 0.5],
            };
            Self {
                case_id: id,
                p: 2,
                propensity: LinearIndex {
                    intercept: 0.0,
                    coefficients: vec![0.5, -0.5],
                },
                outcome0: LatentOutcome {
                    index: index(0.0),
                    u_loading: b0,
                },
                outcome1: LatentOutcome {
                    index: index(1.0),
                    u_loading: b1,
                },
            }
        };
        Ok(match id {
            CaseId::C1 => low_dim(3.0, 1.5),
            CaseId::C2 => low_dim(2.0, 1.0),
            CaseId::C3 => low_dim(1.0, 0.5),
            CaseId::C4 => Self::sparse(id, 20),
            CaseId::C5 => Self::sparse(id, 50),
            CaseId::C6 => Self::sparse(id, 100),
            CaseId::Custom => {
                return Err(Error::InvalidArgument("custom specs are built field by field".into()))
            }
        })
    }

    fn sparse(id: CaseId, p: usize) -> Self {
        let alpha: Vec<f64> = (0..p).map(|j| 0.5f64.powi(j as i32)).collect();
        let mut theta = vec![0.0; p];
        theta[0] = 0.5;
        theta[1] = -0.5;
        let index = |c: f64| LinearIndex {
            intercept: c,
            coefficients: alpha.clone(),
        };
        Self {
            case_id: id,
            p,
            propensity: LinearIndex {
                intercept: 0.0,
                coefficients: theta,
            },
            outcome0: LatentOutcome {
                index: index(0.0),
                u_loading: 1.0,
            },
            outcome1: LatentOutcome {
                index: index(1.0),
                u_loading: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        for (name, c) in [
            ("propensity", &self.propensity.coefficients),
            ("outcome0", &self.outcome0.index.coefficients),
            ("outcome1", &self.outcome1.index.coefficients),
        ] {
            if c.len() != self.p {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {} coefficients for p = {}",
                    c.len(),
                    self.p
                )));
            }
        }
        Ok(())
    }

    /// Nuisance learner used for this case in the replication study.
    pub fn default_model(&self) -> ModelSpec {
        if self.p > 2 {
            ModelSpec::L1Cv { folds: 5 }
        } else {
            ModelSpec::Plain
        }
    }

    pub fn propensity_at(&self, x: &[f64]) -> f64 {
        expit(self.propensity.eval(x))
    }
}

/// How `μ_a(x) = E_U[expit(·)]` is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentIntegration {
    /// Gauss–Hermite rule of the given order.
    Quadrature { order: usize },
    /// Average over `draws` simulated `U` values, shared by both arms.
    MonteCarlo { draws: usize },
}

/// `(μ0(x), μ1(x))` for the case's latent model.
pub fn latent_means<R: Rng + ?Sized>(
    spec: &DgpSpec,
    x: &[f64],
    method: LatentIntegration,
    quad: Option<&NormalQuadrature>,
    rng: &mut R,
) -> (f64, f64) {
    let l0 = spec.outcome0.index.eval(x);
    let l1 = spec.outcome1.index.eval(x);
    let (b0, b1) = (spec.outcome0.u_loading, spec.outcome1.u_loading);
    match method {
        LatentIntegration::Quadrature { order } => {
            let owned;
            let q = match quad {
                Some(q) if q.nodes.len() == order => q,
                _ => {
                    owned = NormalQuadrature::new(order);
                    &owned
                }
            };
            let m0 = if b0 == 0.0 { expit(l0) } else { q.expect(|u| expit(l0 + b0 * u)) };
            let m1 = if b1 == 0.0 { expit(l1) } else { q.expect(|u| expit(l1 + b1 * u)) };
            (m0, m1)
        }
        LatentIntegration::MonteCarlo { draws } => {
            if b0 == 0.0 && b1 == 0.0 {
                return (expit(l0), expit(l1));
            }
            let (mut s0, mut s1) = (0.0, 0.0);
            for _ in 0..draws {
                let u: f64 = rng.sample(StandardNormal);
                s0 += expit(l0 + b0 * u);
                s1 += expit(l1 + b1 * u);
            }
            let d = draws as f64;
            let m0 = if b0 == 0.0 { expit(l0) } else { s0 / d };
            let m1 = if b1 == 0.0 { expit(l1) } else { s1 / d };
            (m0, m1)
        }
    }
}

/// Per-unit quantities that are never observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub y0: Vec<u8>,
    pub y1: Vec<u8>,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl Latent {
    /// Sample fraction with `Y^0 = 1, Y^1 = 0`.
    pub fn empirical_fna(&self) -> f64 {
        let harmed = self.y0.iter().zip(&self.y1).filter(|&(&a, &b)| a == 1 && b == 0).count();
        harmed as f64 / self.y0.len() as f64
    }

    pub fn empirical_ate(&self) -> f64 {
        let d: i64 = self.y0.iter().zip(&self.y1).map(|(&a, &b)| b as i64 - a as i64).sum();
        d as f64 / self.y0.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub data: Dataset,
    pub latent: Latent,
}

/// Draw `n` units. The true regressions `μ_a` are integrated with a
/// 64-point Gauss–Hermite rule.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Generated> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quad = NormalQuadrature::new(TRUTH_QUADRATURE_ORDER);
    let method = LatentIntegration::Quadrature {
        order: TRUTH_QUADRATURE_ORDER,
    };

    let mut xs = Vec::with_capacity(n * p);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut latent = Latent {
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        mu0: Vec::with_capacity(n),
        mu1: Vec::with_capacity(n),
    };
    let mut row = vec![0.0; p];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let u: f64 = rng.sample(StandardNormal);
        let e = spec.propensity_at(&row);
        let ai = (rng.random::<f64>() < e) as u8;
        let y0 = (rng.random::<f64>() < spec.outcome0.prob(&row, u)) as u8;
        let y1 = (rng.random::<f64>() < spec.outcome1.prob(&row, u)) as u8;
        let (m0, m1) = latent_means(spec, &row, method, Some(&quad), &mut rng);

        xs.extend_from_slice(&row);
        a.push(ai);
        y.push(if ai == 1 { y1 } else { y0 });
        latent.y0.push(y0);
        latent.y1.push(y1);
        latent.u.push(u);
        latent.e.push(e);
        latent.mu0.push(m0);
        latent.mu1.push(m1);
    }
    let x = DMatrix::from_row_slice(n, p, &xs);
    let data = Dataset::unnamed(x, a, y)?;
    Ok(Generated { data, latent })
}

/// Settings for the Monte Carlo truth of `β_ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthOptions {
    pub n_outer: usize,
    pub integration: LatentIntegration,
    pub seed: u64,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            n_outer: 100_000,
            integration: LatentIntegration::MonteCarlo { draws: 1000 },
            seed: 0x5EED_7207,
        }
    }
}

const TRUTH_CHUNK: usize = 1000;

/// `β_ρ = E[max{μ0(X)(1−μ1(X)) − ρ√(μ0(1−μ0)μ1(1−μ1)), 0}]` for each `ρ` in
/// `rhos`, sharing the outer draws across `ρ`.
pub fn true_betas(spec: &DgpSpec, rhos: &[f64], opts: &TruthOptions) -> Result<Vec<f64>> {
    spec.validate()?;
    if opts.n_outer == 0 {
        return Err(Error::InvalidArgument("n_outer must be positive".into()));
    }
    if let LatentIntegration::MonteCarlo { draws: 0 } | LatentIntegration::Quadrature { order: 0 } = opts.integration {
        return Err(Error::InvalidArgument("latent integration needs at least one point".into()));
    }
    let quad = match opts.integration {
        LatentIntegration::Quadrature { order } => Some(NormalQuadrature::new(order)),
        LatentIntegration::MonteCarlo { .. } => None,
    };
    let chunks = opts.n_outer.div_ceil(TRUTH_CHUNK);
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(c as u64);
            let len = TRUTH_CHUNK.min(opts.n_outer - c * TRUTH_CHUNK);
            let mut sums = vec![0.0; rhos.len()];
            let mut x = vec![0.0; spec.p];
            for _ in 0..len {
                for v in x.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let (m0, m1) = latent_means(spec, &x, opts.integration, quad.as_ref(), &mut rng);
                let sd = (m0 * (1.0 - m0) * m1 * (1.0 - m1)).sqrt();
                for (s, &rho) in sums.iter_mut().zip(rhos) {
                    *s += (m0 * (1.0 - m1) - rho * sd).max(0.0);
                }
            }
            sums
        })
        .collect();
    let mut totals = vec![0.0; rhos.len()];
    for sums in &partial {
        for (t, s) in totals.iter_mut().zip(sums) {
            *t += s;
        }
    }
    Ok(totals.into_iter().map(|t| t / opts.n_outer as f64).collect())
}

pub fn true_beta(spec: &DgpSpec, rho: f64, opts: &TruthOptions) -> Result<f64> {
    Ok(true_betas(spec, &[rho], opts)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case_id: CaseId,
    pub rho: f64,
    pub beta_true: f64,
    pub bias: f64,
    pub sd: f64,
    pub ese: f64,
    pub cp95: f64,
    pub n: usize,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub rhos: Vec<f64>,
    pub replications: usize,
    pub folds: usize,
    pub model: ModelSpec,
    pub master_seed: u64,
    pub level: f64,
    pub clip: ClipBounds,
    pub truth: TruthOptions,
}

impl StudyConfig {
    /// Desk-scale defaults: 500 replications of n = 1000, 2-fold cross-fitting.
    pub fn for_case(spec: &DgpSpec, rhos: Vec<f64>, master_seed: u64) -> Self {
        Self {
            n: 1000,
            rhos,
            replications: 500,
            folds: 2,
            model: spec.default_model(),
            master_seed,
            level: 0.95,
            clip: ClipBounds::default(),
            truth: TruthOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidArgument("need at least 2 replications".into()));
        }
        if self.rhos.is_empty() {
            return Err(Error::InvalidArgument("empty rho list".into()));
        }
        if let Some(r) = self.rhos.iter().find(|r| !r.is_finite() || r.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!("rho = {r} must lie in [-1, 1]")));
        }
        Ok(())
    }
}

/// Seed of replication `r`: the first word of stream `r` of a generator
/// keyed by `master`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64);
    rng.next_u64()
}

/// Estimates at every `ρ` of one replication, plus the number of nuisance
/// models that fell back to the L1 learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub seed: u64,
    pub estimates: Vec<EstimateReport>,
    pub fallbacks: usize,
}

pub fn run_replication(spec: &DgpSpec, config: &StudyConfig, seed: u64) -> Result<ReplicationOutcome> {
    let generated = generate(spec, config.n, seed)?;
    let opts = CrossFitOptions {
        folds: config.folds,
        model: config.model,
        seed: seed ^ 0xA076_1D64_78BD_642F,
        clip: config.clip,
        irls: IrlsOptions::default(),
    };
    let fit = cross_fit(&generated.data, &opts)?;
    let estimates = config
        .rhos
        .iter()
        .map(|&rho| estimate_beta(&generated.data, &fit, rho, config.level))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationOutcome {
        seed,
        estimates,
        fallbacks: fit.fallbacks,
    })
}

/// Run one replication per seed in parallel; results come back in seed order.
pub fn run_replications(spec: &DgpSpec, config: &StudyConfig, seeds: &[u64]) -> Result<Vec<ReplicationOutcome>> {
    spec.validate()?;
    let outcomes: Vec<Result<ReplicationOutcome>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            run_replication(spec, config, seed).map_err(|e| Error::Replication {
                replication: r,
                source: Box::new(e),
            })
        })
        .collect();
    outcomes.into_iter().collect()
}

/// Summarise replications against the true `β_ρ` values.
pub fn summarize(
    case_id: CaseId,
    config: &StudyConfig,
    truths: &[f64],
    outcomes: &[ReplicationOutcome],
) -> Vec<MetricsRow> {
    config
        .rhos
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let est: Vec<f64> = outcomes.iter().map(|o| o.estimates[k].estimate).collect();
            let se: Vec<f64> = outcomes.iter().map(|o| o.estimates[k].se).collect();
            let covered = outcomes.iter().filter(|o| o.estimates[k].covers(truths[k])).count();
            MetricsRow {
                case_id,
                rho,
                beta_true: truths[k],
                bias: mean(&est) - truths[k],
                sd: sample_sd(&est),
                ese: mean(&se),
                cp95: covered as f64 / outcomes.len() as f64,
                n: config.n,
                replications: outcomes.len(),
            }
        })
        .collect()
}

/// Replications with explicitly supplied seeds.
pub fn run_study_with_seeds(spec: &DgpSpec, config: &StudyConfig, seeds: &[u64]) -> Result<Vec<MetricsRow>> {
    let config = StudyConfig {
        replications: seeds.len(),
        ..config.clone()
    };
    config.validate()?;
    let truths = true_betas(spec, &config.rhos, &config.truth)?;
    let outcomes = run_replications(spec, &config, seeds)?;
    Ok(summarize(spec.case_id, &config, &truths, &outcomes))
}

/// Full study: `config.replications` replications seeded from `config.master_seed`.
pub fn run_study(spec: &DgpSpec, config: &StudyConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.replications)
        .map(|r| replication_seed(config.master_seed, r))
        .collect();
    run_study_with_seeds(spec, config, &seeds)
}
