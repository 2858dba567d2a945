//! Nuisance models: propensity score `e(x)` and outcome regressions
//! `mu_a(x)`, fitted out of fold.

mod lasso;
mod logistic;

pub use lasso::{
    fit_logistic_l1, fit_logistic_l1_cv, fit_logistic_l1_with, lambda_max, select_lambda_cv,
    select_lambda_cv_with, shuffled_folds, CdOptions, LambdaGrid, LambdaSelection,
};
pub use logistic::{
    fit_logistic, log_likelihood_gradient, mean_deviance, IrlsOptions, LogisticModel, Penalty,
    SEPARATION_NORM,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::MarginalPair;
use crate::error::{Error, Result};

/// Observed data: covariates `X` (n × p), treatment `A` and outcome `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let p = covariates.ncols();
        if n == 0 || p == 0 {
            return Err(Error::InvalidDataset(format!("need n >= 1 and p >= 1, got {n} x {p}")));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{n} covariate rows, {} treatments, {} outcomes",
                treatment.len(),
                outcome.len()
            )));
        }
        if names.len() != p {
            return Err(Error::InvalidDataset(format!("{p} columns but {} names", names.len())));
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::InvalidDataset(format!("treatment at row {} is not binary", i + 1)));
        }
        if let Some(i) = outcome.iter().position(|&y| y > 1) {
            return Err(Error::InvalidDataset(format!("outcome at row {} is not binary", i + 1)));
        }
        if let Some(idx) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite covariate at row {}, column {}",
                idx % n + 1,
                idx / n + 1
            )));
        }
        let treated = treatment.iter().filter(|&&a| a == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidDataset("both treatment arms must be nonempty".into()));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            names,
        })
    }

    /// Build with default covariate names `x1..xp`.
    pub fn unnamed(covariates: DMatrix<f64>, treatment: Vec<u8>, outcome: Vec<u8>) -> Result<Self> {
        let names = (1..=covariates.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(covariates, treatment, outcome, names)
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }
}

/// Nuisance learner used inside each cross-fitting fold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Maximum-likelihood logistic regression. Falls back to the
    /// cross-validated L1 fit when a fold's data are separable.
    #[default]
    Plain,
    /// L1-penalized logistic regression, penalty chosen by K-fold CV.
    L1Cv { folds: usize },
    /// L1-penalized logistic regression at a fixed penalty.
    L1Fixed { lambda: f64 },
}

/// Truncation applied to out-of-fold predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub eps_e: f64,
    pub eps_mu: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self {
            eps_e: 0.01,
            eps_mu: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossFitOptions {
    pub folds: usize,
    pub model: ModelSpec,
    pub seed: u64,
    pub clip: ClipBounds,
    pub irls: IrlsOptions,
}

impl Default for CrossFitOptions {
    fn default() -> Self {
        Self {
            folds: 2,
            model: ModelSpec::Plain,
            seed: 0,
            clip: ClipBounds::default(),
            irls: IrlsOptions::default(),
        }
    }
}

/// Nuisance values at a single unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    pub e: f64,
    pub mu0: f64,
    pub mu1: f64,
}

/// Out-of-fold predictions `(ê, μ̂0, μ̂1)` for every unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub e_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub fold_assignment: Vec<usize>,
    pub folds: usize,
    pub clip: ClipBounds,
    /// Models that hit separation and were refitted with the L1 learner.
    pub fallbacks: usize,
}

impl NuisanceFit {
    /// Wrap externally supplied nuisance values (true functions in a
    /// simulation, or another learner), clipping them like a fitted model.
    pub fn from_predictions(e: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>, clip: ClipBounds) -> Result<Self> {
        let n = e.len();
        if mu0.len() != n || mu1.len() != n {
            return Err(Error::MisalignedFit(format!(
                "prediction lengths {} / {} / {}",
                n,
                mu0.len(),
                mu1.len()
            )));
        }
        let ce = |v: f64| v.clamp(clip.eps_e, 1.0 - clip.eps_e);
        let cm = |v: f64| v.clamp(clip.eps_mu, 1.0 - clip.eps_mu);
        Ok(Self {
            e_hat: e.into_iter().map(ce).collect(),
            mu0_hat: mu0.into_iter().map(cm).collect(),
            mu1_hat: mu1.into_iter().map(cm).collect(),
            fold_assignment: vec![0; n],
            folds: 1,
            clip,
            fallbacks: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.e_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_hat.is_empty()
    }

    pub fn eta(&self, i: usize) -> Eta {
        Eta {
            e: self.e_hat[i],
            mu0: self.mu0_hat[i],
            mu1: self.mu1_hat[i],
        }
    }

    pub fn marginal(&self, i: usize) -> MarginalPair {
        MarginalPair::new(self.mu0_hat[i], self.mu1_hat[i]).expect("clipped predictions are probabilities")
    }

    pub fn marginals(&self) -> impl Iterator<Item = MarginalPair> + '_ {
        (0..self.len()).map(|i| self.marginal(i))
    }

    pub fn check_aligned(&self, data: &Dataset) -> Result<()> {
        if self.len() != data.n() {
            return Err(Error::MisalignedFit(format!(
                "fit has {} units, data has {}",
                self.len(),
                data.n()
            )));
        }
        Ok(())
    }
}

fn derive_seed(seed: u64, fold: usize, model: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((fold as u64) << 8 | model as u64)
        .rotate_left(17)
}

fn fit_one(
    x: &DMatrix<f64>,
    labels: &[u8],
    spec: ModelSpec,
    irls: IrlsOptions,
    seed: u64,
    fallbacks: &mut usize,
) -> Result<LogisticModel> {
    match spec {
        ModelSpec::Plain => match fit_logistic(x, labels, irls) {
            Err(Error::SeparationDetected { .. }) => {
                *fallbacks += 1;
                Ok(fit_logistic_l1_cv(x, labels, 5, seed)?.0)
            }
            other => other,
        },
        ModelSpec::L1Cv { folds } => Ok(fit_logistic_l1_cv(x, labels, folds, seed)?.0),
        ModelSpec::L1Fixed { lambda } => fit_logistic_l1(x, labels, lambda),
    }
}

fn has_both(values: impl Iterator<Item = u8>) -> bool {
    let (mut zero, mut one) = (false, false);
    for v in values {
        if v == 0 {
            zero = true;
        } else {
            one = true;
        }
    }
    zero && one
}

/// Cross-fitting with a seeded, balanced random fold assignment.
pub fn cross_fit(data: &Dataset, opts: &CrossFitOptions) -> Result<NuisanceFit> {
    if opts.folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {}", opts.folds)));
    }
    if data.n() < opts.folds {
        return Err(Error::InvalidArgument(format!(
            "{} units cannot fill {} folds",
            data.n(),
            opts.folds
        )));
    }
    let assignment = shuffled_folds(data.n(), opts.folds, opts.seed);
    cross_fit_with_assignment(data, &assignment, opts)
}

/// Cross-fitting with an explicit fold label per unit (`0..folds`).
///
/// For every fold `k`, `ê` is fitted on `(X, A)` and `μ̂_a` on `(X, Y)` among
/// units with `A = a`, all restricted to units outside fold `k`, and then
/// evaluated on fold `k`.
pub fn cross_fit_with_assignment(
    data: &Dataset,
    assignment: &[usize],
    opts: &CrossFitOptions,
) -> Result<NuisanceFit> {
    let n = data.n();
    if assignment.len() != n {
        return Err(Error::InvalidArgument(format!(
            "fold assignment has {} entries for {n} units",
            assignment.len()
        )));
    }
    let folds = assignment.iter().copied().max().map_or(0, |m| m + 1);
    if folds < 2 {
        return Err(Error::InvalidArgument("fold assignment uses fewer than 2 folds".into()));
    }
    let x = data.covariates();
    let a = data.treatment();
    let y = data.outcome();

    let mut e_hat = vec![f64::NAN; n];
    let mut mu0_hat = vec![f64::NAN; n];
    let mut mu1_hat = vec![f64::NAN; n];
    let mut fallbacks = 0;

    for k in 0..folds {
        let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
        if held.is_empty() {
            return Err(Error::FoldDegenerate {
                fold: k,
                reason: "fold is empty".into(),
            });
        }
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
        let arm = |t: u8| -> Vec<usize> { train.iter().copied().filter(|&i| a[i] == t).collect() };
        let (train0, train1) = (arm(0), arm(1));
        if train0.is_empty() || train1.is_empty() {
            return Err(Error::FoldDegenerate {
                fold: k,
                reason: "training complement lacks a treatment arm".into(),
            });
        }
        for (rows, label) in [(&train0, "control"), (&train1, "treated")] {
            if !has_both(rows.iter().map(|&i| y[i])) {
                return Err(Error::FoldDegenerate {
                    fold: k,
                    reason: format!("{label} training units all share one outcome value"),
                });
            }
        }

        let x_held = x.select_rows(&held);
        let x_train = x.select_rows(&train);
        let a_train: Vec<u8> = train.iter().map(|&i| a[i]).collect();
        let e_model = fit_one(
            &x_train,
            &a_train,
            opts.model,
            opts.irls,
            derive_seed(opts.seed, k, 0),
            &mut fallbacks,
        )?;

        let mut outcome_model = |rows: &[usize], tag: usize| -> Result<LogisticModel> {
            let xs = x.select_rows(rows);
            let ys: Vec<u8> = rows.iter().map(|&i| y[i]).collect();
            fit_one(&xs, &ys, opts.model, opts.irls, derive_seed(opts.seed, k, tag), &mut fallbacks)
        };
        let mu0_model = outcome_model(&train0, 1)?;
        let mu1_model = outcome_model(&train1, 2)?;

        let clip_e = |v: f64| v.clamp(opts.clip.eps_e, 1.0 - opts.clip.eps_e);
        let clip_mu = |v: f64| v.clamp(opts.clip.eps_mu, 1.0 - opts.clip.eps_mu);
        let pe = e_model.predict_proba(&x_held);
        let p0 = mu0_model.predict_proba(&x_held);
        let p1 = mu1_model.predict_proba(&x_held);
        for (pos, &i) in held.iter().enumerate() {
            e_hat[i] = clip_e(pe[pos]);
            mu0_hat[i] = clip_mu(p0[pos]);
            mu1_hat[i] = clip_mu(p1[pos]);
        }
    }

    Ok(NuisanceFit {
        e_hat,
        mu0_hat,
        mu1_hat,
        fold_assignment: assignment.to_vec(),
        folds,
        clip: opts.clip,
        fallbacks,
    })
}
