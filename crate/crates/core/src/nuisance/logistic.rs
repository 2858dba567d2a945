//! Unpenalized logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{expit, logit};

/// Coefficient norm past which the fit is declared separated.
pub const SEPARATION_NORM: f64 = 30.0;

/// Columns whose variance falls below this are held at zero.
pub(crate) const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    None,
    L1 { lambda: f64 },
}

/// A fitted logistic model on the original feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: Penalty,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn intercept_only(p: usize, mean: f64, penalty: Penalty) -> Self {
        Self {
            intercept: logit(mean),
            coefficients: vec![0.0; p],
            penalty,
            iterations: 0,
            converged: true,
        }
    }

    pub fn linear_predictor(&self, features: &DMatrix<f64>) -> Vec<f64> {
        let mut eta = vec![self.intercept; features.nrows()];
        for (j, &b) in self.coefficients.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (e, x) in eta.iter_mut().zip(features.column(j).iter()) {
                *e += b * x;
            }
        }
        eta
    }

    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(features).into_iter().map(expit).collect()
    }
}

pub(crate) fn check_labels(features: &DMatrix<f64>, labels: &[u8]) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::InvalidDataset(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidDataset("no rows".into()));
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    Ok(ones as f64 / labels.len() as f64)
}

/// Indices of columns with non-negligible variance.
pub(crate) fn varying_columns(features: &DMatrix<f64>) -> Vec<usize> {
    let n = features.nrows() as f64;
    (0..features.ncols())
        .filter(|&j| {
            let col = features.column(j);
            let m = col.sum() / n;
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            var > ZERO_VARIANCE
        })
        .collect()
}

/// Maximum-likelihood logistic regression with an unpenalized intercept.
///
/// Constant columns are not identifiable next to the intercept and keep a
/// zero coefficient.
pub fn fit_logistic(
    features: &DMatrix<f64>,
    labels: &[u8],
    opts: IrlsOptions,
) -> Result<LogisticModel> {
    let ybar = check_labels(features, labels)?;
    let n = features.nrows();
    let active = varying_columns(features);
    let q = active.len() + 1;

    let mut design = DMatrix::<f64>::from_element(n, q, 1.0);
    for (k, &j) in active.iter().enumerate() {
        design.set_column(k + 1, &features.column(j));
    }
    let y = DVector::from_iterator(n, labels.iter().map(|&v| v as f64));

    let mut beta = DVector::<f64>::zeros(q);
    beta[0] = logit(ybar);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let eta = &design * &beta;
        let p = eta.map(expit);
        let resid = &y - &p;
        let weights = p.map(|v| (v * (1.0 - v)).max(1e-12));

        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i].sqrt();
        }
        let hessian = weighted.tr_mul(&weighted);
        let gradient = design.tr_mul(&resid);

        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&gradient),
            None => match hessian.lu().solve(&gradient) {
                Some(s) => s,
                None => {
                    return Err(Error::SeparationDetected {
                        norm: beta.norm(),
                    })
                }
            },
        };
        beta += &step;

        let norm = beta.norm();
        if !norm.is_finite() || norm > SEPARATION_NORM {
            return Err(Error::SeparationDetected { norm });
        }
        if step.amax() < opts.tol {
            converged = true;
            break;
        }
    }

    if !converged {
        // Coefficients drifting off without converging while the linear
        // predictor splits the labels perfectly is the signature of separation.
        let eta = &design * &beta;
        let split = eta.iter().zip(&y).all(|(&e, &t)| (e > 0.0) == (t > 0.5));
        if split {
            return Err(Error::SeparationDetected { norm: beta.norm() });
        }
    }

    let mut coefficients = vec![0.0; features.ncols()];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = beta[k + 1];
    }
    Ok(LogisticModel {
        intercept: beta[0],
        coefficients,
        penalty: Penalty::None,
        iterations,
        converged,
    })
}

/// Gradient of the mean log-likelihood at `model`, intercept first.
pub fn log_likelihood_gradient(
    model: &LogisticModel,
    features: &DMatrix<f64>,
    labels: &[u8],
) -> Vec<f64> {
    let p = model.predict_proba(features);
    let n = labels.len() as f64;
    let resid: Vec<f64> = labels.iter().zip(&p).map(|(&y, &pi)| y as f64 - pi).collect();
    let mut grad = Vec::with_capacity(features.ncols() + 1);
    grad.push(resid.iter().sum::<f64>() / n);
    for j in 0..features.ncols() {
        let g: f64 = features.column(j).iter().zip(&resid).map(|(x, r)| x * r).sum();
        grad.push(g / n);
    }
    grad
}

/// Mean Bernoulli deviance of probabilities `p` against `labels`.
pub fn mean_deviance(p: &[f64], labels: &[u8]) -> f64 {
    const EPS: f64 = 1e-15;
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&pi, &y)| {
            let pi = pi.clamp(EPS, 1.0 - EPS);
            if y == 1 {
                -2.0 * pi.ln()
            } else {
                -2.0 * (1.0 - pi).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}
