//! L1-penalized logistic regression by proximal-Newton coordinate descent,
//! with a cross-validated penalty.
//!
//! The objective on standardized features is
//! `(1/n) Σ [log(1 + exp(η_i)) - y_i η_i] + λ Σ_j |β_j|` with an unpenalized
//! intercept. Each outer step replaces the log-likelihood by its quadratic
//! expansion at the current fit and solves the resulting weighted lasso by
//! cyclic coordinate descent over the active set, with a full sweep to
//! confirm the KKT conditions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{check_labels, mean_deviance, LogisticModel, Penalty, ZERO_VARIANCE};
use crate::error::{Error, Result};
use crate::stats::{expit, logit};

const MIN_WEIGHT: f64 = 1e-5;
const DIVERGED_NORM: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdOptions {
    pub max_outer: usize,
    pub max_sweeps: usize,
    /// Convergence threshold on the largest coefficient change.
    pub tol: f64,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_sweeps: 10_000,
            tol: 1e-9,
        }
    }
}

/// Logarithmic penalty grid from `lambda_max` down to `lambda_max * min_ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub len: usize,
    pub min_ratio: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            len: 20,
            min_ratio: 1e-3,
        }
    }
}

impl LambdaGrid {
    pub fn values(&self, lambda_max: f64) -> Vec<f64> {
        let len = self.len.max(2);
        (0..len)
            .map(|k| lambda_max * self.min_ratio.powf(k as f64 / (len - 1) as f64))
            .collect()
    }
}

/// Outcome of [`select_lambda_cv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub index: usize,
    pub grid: Vec<f64>,
    pub cv_deviance: Vec<f64>,
}

/// Varying columns of a row subset, centred and scaled to unit variance.
struct Standardized {
    n: usize,
    columns: Vec<usize>,
    means: Vec<f64>,
    sds: Vec<f64>,
    /// Column-major `n × columns.len()`.
    data: Vec<f64>,
}

impl Standardized {
    fn new(features: &DMatrix<f64>, rows: &[usize]) -> Self {
        let n = rows.len();
        let nf = n as f64;
        let mut columns = Vec::new();
        let mut means = Vec::new();
        let mut sds = Vec::new();
        let mut data = Vec::new();
        for j in 0..features.ncols() {
            let col = features.column(j);
            let m = rows.iter().map(|&i| col[i]).sum::<f64>() / nf;
            let var = rows.iter().map(|&i| (col[i] - m).powi(2)).sum::<f64>() / nf;
            if var <= ZERO_VARIANCE {
                continue;
            }
            let sd = var.sqrt();
            columns.push(j);
            means.push(m);
            sds.push(sd);
            data.extend(rows.iter().map(|&i| (col[i] - m) / sd));
        }
        Self {
            n,
            columns,
            means,
            sds,
            data,
        }
    }

    #[inline]
    fn col(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    fn q(&self) -> usize {
        self.columns.len()
    }

    fn lambda_max(&self, y: &[f64]) -> f64 {
        let ybar = y.iter().sum::<f64>() / self.n as f64;
        (0..self.q())
            .map(|k| {
                let g: f64 = self.col(k).iter().zip(y).map(|(x, yi)| x * (yi - ybar)).sum();
                (g / self.n as f64).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Convert standardized coefficients back to the original feature scale.
    fn to_model(&self, p: usize, state: &CdState, lambda: f64, outer: usize, conv: bool) -> LogisticModel {
        let mut coefficients = vec![0.0; p];
        let mut intercept = state.b0;
        for (k, &j) in self.columns.iter().enumerate() {
            let b = state.beta[k] / self.sds[k];
            coefficients[j] = b;
            intercept -= b * self.means[k];
        }
        LogisticModel {
            intercept,
            coefficients,
            penalty: Penalty::L1 { lambda },
            iterations: outer,
            converged: conv,
        }
    }
}

#[derive(Debug, Clone)]
struct CdState {
    b0: f64,
    beta: Vec<f64>,
    /// Current linear predictor on the training rows.
    eta: Vec<f64>,
}

impl CdState {
    fn null(std: &Standardized, ybar: f64) -> Self {
        let b0 = logit(ybar);
        Self {
            b0,
            beta: vec![0.0; std.q()],
            eta: vec![b0; std.n],
        }
    }
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Solve the penalized problem at `lambda`, warm-started from `state`.
/// Returns `(outer iterations, converged)`.
fn solve(std: &Standardized, y: &[f64], lambda: f64, state: &mut CdState, opts: &CdOptions) -> (usize, bool) {
    let n = std.n;
    let nf = n as f64;
    let q = std.q();
    let mut w = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut xwx = vec![f64::NAN; q];
    let mut active: Vec<bool> = state.beta.iter().map(|&b| b != 0.0).collect();

    for outer in 1..=opts.max_outer {
        let old_b0 = state.b0;
        let old_beta = state.beta.clone();
        let mut w_sum = 0.0;
        for i in 0..n {
            let p = expit(state.eta[i]);
            let wi = (p * (1.0 - p)).max(MIN_WEIGHT);
            w[i] = wi;
            r[i] = (y[i] - p) / wi;
            w_sum += wi;
        }
        xwx.iter_mut().for_each(|v| *v = f64::NAN);

        let mut sweeps = 0;
        let mut full_sweep = true;
        loop {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            let mut grew = false;
            for k in 0..q {
                if !full_sweep && !active[k] {
                    continue;
                }
                let x = std.col(k);
                if xwx[k].is_nan() {
                    xwx[k] = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum::<f64>() / nf;
                }
                let grad: f64 = x
                    .iter()
                    .zip(&w)
                    .zip(&r)
                    .map(|((xi, wi), ri)| xi * wi * ri)
                    .sum::<f64>()
                    / nf;
                let old = state.beta[k];
                let new = soft_threshold(grad + xwx[k] * old, lambda) / xwx[k];
                let delta = new - old;
                if delta != 0.0 {
                    state.beta[k] = new;
                    for (ri, xi) in r.iter_mut().zip(x) {
                        *ri -= xi * delta;
                    }
                    if !active[k] {
                        active[k] = true;
                        grew = true;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            let d0 = w.iter().zip(&r).map(|(wi, ri)| wi * ri).sum::<f64>() / w_sum;
            if d0 != 0.0 {
                state.b0 += d0;
                r.iter_mut().for_each(|ri| *ri -= d0);
                max_change = max_change.max(d0.abs());
            }

            if max_change < opts.tol {
                if full_sweep && !grew {
                    break;
                }
                full_sweep = true;
            } else {
                full_sweep = false;
            }
            if sweeps >= opts.max_sweeps {
                break;
            }
        }

        rebuild_eta(std, state);

        let change = state
            .beta
            .iter()
            .zip(&old_beta)
            .map(|(a, b)| (a - b).abs())
            .fold((state.b0 - old_b0).abs(), f64::max);
        let norm = state.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGED_NORM {
            return (outer, false);
        }
        if change < opts.tol * 10.0 {
            return (outer, true);
        }
    }
    (opts.max_outer, false)
}

fn rebuild_eta(std: &Standardized, state: &mut CdState) {
    state.eta.iter_mut().for_each(|e| *e = state.b0);
    for (k, &b) in state.beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (e, x) in state.eta.iter_mut().zip(std.col(k)) {
            *e += b * x;
        }
    }
}

fn labels_f64(labels: &[u8], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| labels[i] as f64).collect()
}

/// L1-penalized logistic regression at a fixed `lambda`.
///
/// Features are standardized internally; the intercept is not penalized and
/// coefficients are reported on the original scale.
pub fn fit_logistic_l1(features: &DMatrix<f64>, labels: &[u8], lambda: f64) -> Result<LogisticModel> {
    fit_logistic_l1_with(features, labels, lambda, &CdOptions::default())
}

pub fn fit_logistic_l1_with(
    features: &DMatrix<f64>,
    labels: &[u8],
    lambda: f64,
    opts: &CdOptions,
) -> Result<LogisticModel> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be >= 0")));
    }
    let ybar = check_labels(features, labels)?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    let std = Standardized::new(features, &rows);
    let y = labels_f64(labels, &rows);
    let mut state = CdState::null(&std, ybar);
    if lambda >= std.lambda_max(&y) {
        return Ok(LogisticModel::intercept_only(
            features.ncols(),
            ybar,
            Penalty::L1 { lambda },
        ));
    }
    let (outer, converged) = solve(&std, &y, lambda, &mut state, opts);
    Ok(std.to_model(features.ncols(), &state, lambda, outer, converged))
}

/// Smallest penalty that zeroes every slope, on the standardized scale.
pub fn lambda_max(features: &DMatrix<f64>, labels: &[u8]) -> Result<f64> {
    check_labels(features, labels)?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    let std = Standardized::new(features, &rows);
    Ok(std.lambda_max(&labels_f64(labels, &rows)))
}

/// Seeded fold labels with sizes differing by at most one.
pub fn shuffled_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    assignment
}

/// Choose the penalty minimizing mean held-out deviance over a logarithmic
/// grid. Ties go to the larger penalty.
pub fn select_lambda_cv(
    features: &DMatrix<f64>,
    labels: &[u8],
    folds: usize,
    seed: u64,
) -> Result<LambdaSelection> {
    select_lambda_cv_with(features, labels, folds, seed, LambdaGrid::default(), &cv_options())
}

fn cv_options() -> CdOptions {
    CdOptions {
        tol: 1e-7,
        ..CdOptions::default()
    }
}

pub fn select_lambda_cv_with(
    features: &DMatrix<f64>,
    labels: &[u8],
    folds: usize,
    seed: u64,
    grid: LambdaGrid,
    opts: &CdOptions,
) -> Result<LambdaSelection> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    check_labels(features, labels)?;
    let n = labels.len();
    if n < folds {
        return Err(Error::InvalidArgument(format!("{n} rows cannot fill {folds} folds")));
    }
    let all: Vec<usize> = (0..n).collect();
    let lmax = Standardized::new(features, &all).lambda_max(&labels_f64(labels, &all));
    let lambdas = grid.values(lmax.max(f64::MIN_POSITIVE));

    let assignment = shuffled_folds(n, folds, seed);
    let mut deviance = vec![0.0; lambdas.len()];
    for f in 0..folds {
        let train: Vec<usize> = all.iter().copied().filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = all.iter().copied().filter(|&i| assignment[i] == f).collect();
        let y_train = labels_f64(labels, &train);
        let ones = y_train.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == train.len() {
            return Err(Error::FoldDegenerate {
                fold: f,
                reason: "cross-validation training set has a single label value".into(),
            });
        }
        let std = Standardized::new(features, &train);
        let mut state = CdState::null(&std, ones as f64 / train.len() as f64);
        let test_labels: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        let test_x = features.select_rows(&test);
        for (k, &lambda) in lambdas.iter().enumerate() {
            let (outer, conv) = solve(&std, &y_train, lambda, &mut state, opts);
            let model = std.to_model(features.ncols(), &state, lambda, outer, conv);
            let p = model.predict_proba(&test_x);
            deviance[k] += mean_deviance(&p, &test_labels) * test.len() as f64;
        }
    }
    deviance.iter_mut().for_each(|d| *d /= n as f64);

    let mut index = 0;
    for k in 1..deviance.len() {
        if deviance[k] < deviance[index] * (1.0 - 1e-12) {
            index = k;
        }
    }
    Ok(LambdaSelection {
        lambda: lambdas[index],
        index,
        grid: lambdas,
        cv_deviance: deviance,
    })
}

/// Cross-validated L1 fit: select the penalty, then refit on all rows along
/// the grid down to it.
pub fn fit_logistic_l1_cv(
    features: &DMatrix<f64>,
    labels: &[u8],
    folds: usize,
    seed: u64,
) -> Result<(LogisticModel, LambdaSelection)> {
    let selection = select_lambda_cv(features, labels, folds, seed)?;
    let ybar = check_labels(features, labels)?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    let std = Standardized::new(features, &rows);
    let y = labels_f64(labels, &rows);
    let mut state = CdState::null(&std, ybar);
    let opts = CdOptions::default();
    let mut last = (0, true);
    for &lambda in &selection.grid[..=selection.index] {
        last = solve(&std, &y, lambda, &mut state, &opts);
    }
    let model = std.to_model(features.ncols(), &state, selection.lambda, last.0, last.1);
    Ok((model, selection))
}
