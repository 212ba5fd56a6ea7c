//! Cross-fit nuisance estimation: generalized propensities and conditional
//! outcome means.
//!
//! Propensities come from a multinomial logistic model (reference arm pinned
//! at zero) maximizing an L2-penalized mean log-likelihood by monotone
//! damped Newton ascent with Armijo backtracking.
//! Outcome means are fit per arm, either by ridge-stabilized least squares
//! or by a k-nearest-neighbour average with `k = ceil(n_b^{4/5})`.
//!
//! Everything is cross-fit: rows in fold `j` receive predictions from models
//! trained on the complement of fold `j` only, so downstream estimators can
//! treat nuisance estimates as independent of the row they are evaluated on.
//! Covariates are standardized inside each training set; fitted coefficients
//! are reported back on the original scale.
//!
//! Estimated propensities are deliberately *never* clipped or floored:
//! exact zeros and near-zeros are data, and the intervention machinery is
//! built to handle them. Diagnostics count how many estimated cells are
//! exactly zero or below the configured reporting floor.
//!
//! For simulation work the module also provides an oracle pass-through
//! (copy true nuisance matrices) and an injectable-error mode that corrupts
//! oracle values at a chosen rate, used by the convergence-rate experiments.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{split_folds, validate_folds, DataError, Dataset, EstimationConfig, FoldAssignment, OutcomeMethod};
use crate::num::{cholesky_solve, log_sum_exp, pairwise_map_sum};

/// Nuisance-fitting failures.
#[derive(Debug, Error)]
pub enum FitError {
    /// Fold/arm coverage or validation failure from the data model.
    #[error(transparent)]
    Data(#[from] DataError),
    /// Oracle matrices with impossible shapes or values.
    #[error("invalid oracle nuisances: {0}")]
    InvalidOracle(String),
    /// Internal shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Options for the propensity optimizer.
#[derive(Debug, Clone)]
pub struct PropensityOptions {
    /// L2 penalty on slope coefficients (intercepts unpenalized).
    pub lambda: f64,
    /// Convergence threshold on the gradient's Euclidean norm.
    pub tol: f64,
    /// Iteration cap; hitting it sets `converged = false` (not an error).
    pub max_iter: usize,
}

impl Default for PropensityOptions {
    fn default() -> Self {
        PropensityOptions {
            lambda: 1e-4,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Column-wise standardization parameters learned from a training set.
#[derive(Debug, Clone)]
struct Standardizer {
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Array2<f64>, rows: &[usize]) -> Self {
        let p = x.ncols();
        let n = rows.len();
        let mut means = vec![0.0; p];
        let mut sds = vec![1.0; p];
        for j in 0..p {
            let m = pairwise_map_sum(n, |t| x[[rows[t], j]]) / n as f64;
            let v = pairwise_map_sum(n, |t| (x[[rows[t], j]] - m).powi(2)) / n as f64;
            means[j] = m;
            sds[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Standardizer { means, sds }
    }
}

/// Fitted multinomial propensity model.
///
/// `coefficients` is `d x (p+1)` on the original covariate scale, column 0
/// the intercept, with the reference arm (highest internal index) pinned at
/// an all-zero row.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub coefficients: Array2<f64>,
    /// Gradient norm fell below tolerance before the iteration cap.
    pub converged: bool,
    /// Iterations actually taken.
    pub iterations: usize,
    /// Final gradient norm.
    pub final_grad_norm: f64,
    /// Penalized mean log-likelihood after each iteration (non-decreasing).
    pub loglik_trace: Vec<f64>,
    /// Some training-row fitted probability fell below 1e-12, the classical
    /// footprint of (near-)separated arms. Estimates stay finite thanks to
    /// the L2 penalty; the flag is for reports.
    pub separation_flag: bool,
}

impl PropensityModel {
    /// Per-arm probabilities for one covariate row (original scale).
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let d = self.coefficients.nrows();
        let mut logits = vec![0.0; d];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut z = self.coefficients[[c, 0]];
            for (j, &xj) in x.iter().enumerate() {
                z += self.coefficients[[c, j + 1]] * xj;
            }
            *logit = z;
        }
        let lse = log_sum_exp(&logits);
        logits.iter().map(|&l| (l - lse).exp()).collect()
    }
}

/// Fit the multinomial propensity model on the given rows.
pub fn fit_propensity(
    x: &Array2<f64>,
    treatments: &[usize],
    rows: &[usize],
    arms: usize,
    opts: &PropensityOptions,
) -> Result<PropensityModel, FitError> {
    if rows.is_empty() {
        return Err(FitError::Shape("no training rows".into()));
    }
    let p = x.ncols();
    let n = rows.len();
    let scaler = Standardizer::fit(x, rows);

    // Design matrix [1, standardized covariates] for the training rows.
    let mut z = Array2::<f64>::zeros((n, p + 1));
    for (t, &i) in rows.iter().enumerate() {
        z[[t, 0]] = 1.0;
        for j in 0..p {
            z[[t, j + 1]] = (x[[i, j]] - scaler.means[j]) / scaler.sds[j];
        }
    }
    let y: Vec<usize> = rows.iter().map(|&i| treatments[i]).collect();

    // Free parameters: arms-1 rows of p+1 weights; reference arm is implicit.
    let free = arms.saturating_sub(1);
    let dim = free * (p + 1);
    let mut w = vec![0.0f64; dim];

    // Penalized mean log-likelihood and gradient at `w`.
    let objective_grad = |w: &[f64]| -> (f64, Vec<f64>) {
        let mut loglik = 0.0;
        let mut grad = vec![0.0f64; dim];
        let mut logits = vec![0.0f64; arms];
        for t in 0..n {
            for c in 0..free {
                let mut s = 0.0;
                for j in 0..=p {
                    s += w[c * (p + 1) + j] * z[[t, j]];
                }
                logits[c] = s;
            }
            logits[free] = 0.0; // reference arm
            let lse = log_sum_exp(&logits[..arms]);
            loglik += logits[y[t]] - lse;
            for c in 0..free {
                let pc = (logits[c] - lse).exp();
                let resid = f64::from(y[t] == c) - pc;
                for j in 0..=p {
                    grad[c * (p + 1) + j] += z[[t, j]] * resid;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        loglik *= inv_n;
        for g in grad.iter_mut() {
            *g *= inv_n;
        }
        // L2 penalty on slopes only.
        let mut penalty = 0.0;
        for c in 0..free {
            for j in 1..=p {
                let idx = c * (p + 1) + j;
                penalty += w[idx] * w[idx];
                grad[idx] -= opts.lambda * w[idx];
            }
        }
        (loglik - 0.5 * opts.lambda * penalty, grad)
    };

    // Negative Hessian of the penalized mean log-likelihood at `w`: the
    // classical multinomial curvature z zᵀ ⊗ (diag(p) − p pᵀ) averaged over
    // rows, plus the ridge on slope entries. Positive semidefinite by
    // construction, and positive definite whenever every arm keeps mass.
    let curvature = |w: &[f64]| -> Array2<f64> {
        let mut h = Array2::<f64>::zeros((dim, dim));
        let mut logits = vec![0.0f64; arms];
        let mut probs = vec![0.0f64; free];
        for t in 0..n {
            for c in 0..free {
                let mut s = 0.0;
                for j in 0..=p {
                    s += w[c * (p + 1) + j] * z[[t, j]];
                }
                logits[c] = s;
            }
            logits[free] = 0.0;
            let lse = log_sum_exp(&logits[..arms]);
            for c in 0..free {
                probs[c] = (logits[c] - lse).exp();
            }
            // Blocks with c <= c' fill the upper triangle; mirrored below.
            for c in 0..free {
                for cc in c..free {
                    let weight = if c == cc {
                        probs[c] * (1.0 - probs[c])
                    } else {
                        -probs[c] * probs[cc]
                    };
                    if weight == 0.0 {
                        continue;
                    }
                    for j in 0..=p {
                        let zj = weight * z[[t, j]];
                        for jj in 0..=p {
                            h[[c * (p + 1) + j, cc * (p + 1) + jj]] += zj * z[[t, jj]];
                        }
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for a in 0..dim {
            for b in a..dim {
                h[[a, b]] *= inv_n;
                h[[b, a]] = h[[a, b]];
            }
        }
        for c in 0..free {
            for j in 1..=p {
                let idx = c * (p + 1) + j;
                h[[idx, idx]] += opts.lambda;
            }
        }
        h
    };

    let norm = |v: &[f64]| v.iter().map(|g| g * g).sum::<f64>().sqrt();

    let (mut obj, mut grad) = objective_grad(&w);
    let mut trace = Vec::with_capacity(64);
    trace.push(obj);
    let mut converged = false;
    let mut iterations = 0usize;

    while iterations < opts.max_iter {
        let gnorm = norm(&grad);
        if gnorm < opts.tol {
            converged = true;
            break;
        }
        // Newton ascent direction, with a Levenberg shift only if the
        // curvature fails to factor, and a plain gradient step as the
        // last resort. The direction is an ascent direction whenever the
        // (shifted) solve succeeds, since the matrix is then PD.
        let g_arr = Array1::from_vec(grad.clone());
        let curv = curvature(&w);
        let mut solved = cholesky_solve(&curv, &g_arr);
        let mut shift = 1e-10;
        while solved.is_none() && shift <= 1.0 {
            let mut damped = curv.clone();
            for k in 0..dim {
                damped[[k, k]] += shift;
            }
            solved = cholesky_solve(&damped, &g_arr);
            shift *= 100.0;
        }
        let (dir, slope) = match solved {
            Some(d) => {
                let slope: f64 = (0..dim).map(|k| grad[k] * d[k]).sum();
                if slope > 0.0 {
                    (d, slope)
                } else {
                    (g_arr, gnorm * gnorm)
                }
            }
            None => (g_arr, gnorm * gnorm),
        };
        // Armijo backtracking from the full step keeps the trace monotone.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = (0..dim).map(|k| w[k] + step * dir[k]).collect();
            let (cand_obj, cand_grad) = objective_grad(&cand);
            if cand_obj >= obj + 1e-4 * step * slope {
                w = cand;
                grad = cand_grad;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        trace.push(obj);
        if !accepted {
            // Step underflow: the objective is flat to rounding; treat the
            // current point as converged if the gradient is small, else stop
            // without the converged flag.
            converged = norm(&grad) < opts.tol.max(1e-6);
            break;
        }
    }
    let final_grad_norm = norm(&grad);

    // Back-transform coefficients to the original covariate scale and pin
    // the reference arm's row at zero.
    let mut coefficients = Array2::<f64>::zeros((arms, p + 1));
    for c in 0..free {
        let mut intercept = w[c * (p + 1)];
        for j in 0..p {
            let slope = w[c * (p + 1) + j + 1] / scaler.sds[j];
            coefficients[[c, j + 1]] = slope;
            intercept -= slope * scaler.means[j];
        }
        coefficients[[c, 0]] = intercept;
    }

    let model = PropensityModel {
        coefficients,
        converged,
        iterations,
        final_grad_norm,
        loglik_trace: trace,
        separation_flag: false,
    };

    // Separation check on training rows.
    let mut separation = false;
    'outer: for &i in rows {
        let probs = model.predict_row(x.row(i).as_slice().expect("row is contiguous"));
        for pr in probs {
            if pr < 1e-12 {
                separation = true;
                break 'outer;
            }
        }
    }
    Ok(PropensityModel {
        separation_flag: separation,
        ..model
    })
}

/// A fitted conditional-mean model for one arm.
#[derive(Debug, Clone)]
pub enum OutcomeModel {
    /// `y ≈ c0 + c' x` with coefficients on the original scale.
    Linear { coefficients: Array1<f64> },
    /// k-nearest-neighbour average in standardized covariate space.
    Knn {
        train_x: Array2<f64>,
        train_y: Array1<f64>,
        means: Vec<f64>,
        sds: Vec<f64>,
        k: usize,
    },
}

impl OutcomeModel {
    /// Predicted conditional mean at one covariate row (original scale).
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            OutcomeModel::Linear { coefficients } => {
                let mut v = coefficients[0];
                for (j, &xj) in x.iter().enumerate() {
                    v += coefficients[j + 1] * xj;
                }
                v
            }
            OutcomeModel::Knn {
                train_x,
                train_y,
                means,
                sds,
                k,
            } => {
                let m = train_x.nrows();
                let mut dist: Vec<(f64, usize)> = (0..m)
                    .map(|t| {
                        let mut d2 = 0.0;
                        for (j, &xj) in x.iter().enumerate() {
                            let q = (xj - means[j]) / sds[j];
                            let diff = train_x[[t, j]] - q;
                            d2 += diff * diff;
                        }
                        (d2, t)
                    })
                    .collect();
                // Ties broken by training index so predictions are
                // order-deterministic.
                dist.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                let kk = (*k).min(m);
                let s = pairwise_map_sum(kk, |t| train_y[dist[t].1]);
                s / kk as f64
            }
        }
    }
}

/// Neighbour count for a training-arm size: `ceil(n_b^{4/5})`, capped at `n_b`.
pub fn knn_neighbour_count(n_b: usize) -> usize {
    ((n_b as f64).powf(0.8).ceil() as usize).clamp(1, n_b)
}

/// Ridge strength stabilizing the linear outcome fit.
const OUTCOME_RIDGE: f64 = 1e-8;

/// Fit one arm's outcome model on the given rows.
pub fn fit_outcome(
    x: &Array2<f64>,
    y: &Array1<f64>,
    rows: &[usize],
    method: OutcomeMethod,
) -> Result<OutcomeModel, FitError> {
    if rows.is_empty() {
        return Err(FitError::Shape("no training rows for outcome model".into()));
    }
    let p = x.ncols();
    let n = rows.len();
    let scaler = Standardizer::fit(x, rows);
    match method {
        OutcomeMethod::Linear => {
            // Normal equations on [1, standardized x] with a small ridge.
            let dim = p + 1;
            let mut zt_z = Array2::<f64>::zeros((dim, dim));
            let mut zt_y = Array1::<f64>::zeros(dim);
            let zval = |i: usize, j: usize| -> f64 {
                if j == 0 {
                    1.0
                } else {
                    (x[[rows[i], j - 1]] - scaler.means[j - 1]) / scaler.sds[j - 1]
                }
            };
            for a in 0..dim {
                for b in a..dim {
                    let s = pairwise_map_sum(n, |i| zval(i, a) * zval(i, b)) / n as f64;
                    zt_z[[a, b]] = s;
                    zt_z[[b, a]] = s;
                }
                zt_y[a] = pairwise_map_sum(n, |i| zval(i, a) * y[rows[i]]) / n as f64;
            }
            for a in 0..dim {
                zt_z[[a, a]] += OUTCOME_RIDGE;
            }
            let beta = cholesky_solve(&zt_z, &zt_y)
                .ok_or_else(|| FitError::Shape("outcome normal equations not SPD".into()))?;
            // Back-transform to the original scale.
            let mut coefficients = Array1::<f64>::zeros(dim);
            let mut intercept = beta[0];
            for j in 0..p {
                let slope = beta[j + 1] / scaler.sds[j];
                coefficients[j + 1] = slope;
                intercept -= slope * scaler.means[j];
            }
            coefficients[0] = intercept;
            Ok(OutcomeModel::Linear { coefficients })
        }
        OutcomeMethod::Knn => {
            let mut train_x = Array2::<f64>::zeros((n, p));
            let mut train_y = Array1::<f64>::zeros(n);
            for (t, &i) in rows.iter().enumerate() {
                for j in 0..p {
                    train_x[[t, j]] = (x[[i, j]] - scaler.means[j]) / scaler.sds[j];
                }
                train_y[t] = y[i];
            }
            Ok(OutcomeModel::Knn {
                train_x,
                train_y,
                means: scaler.means,
                sds: scaler.sds,
                k: knn_neighbour_count(n),
            })
        }
    }
}

/// Where a set of nuisance values came from.
#[derive(Debug, Clone, PartialEq)]
pub enum NuisanceSource {
    /// Cross-fit from the data.
    Fitted,
    /// Copied from a known truth.
    Oracle,
    /// Oracle values corrupted at rate `epsilon`.
    Corrupted { epsilon: f64 },
}

/// Positivity diagnostics for a set of estimated propensities.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceDiagnostics {
    /// Smallest estimated propensity across all cells.
    pub min_pi_hat: f64,
    /// Cells with an exactly zero estimated propensity.
    pub zero_cells: usize,
    /// Cells strictly below the configured reporting floor.
    pub sub_floor_cells: usize,
    /// Floor the counts refer to.
    pub floor: f64,
    /// Every per-fold propensity fit converged.
    pub converged: bool,
    /// Any per-fold fit raised the separation flag.
    pub separation: bool,
    /// Iterations per fold's propensity fit (empty for oracle sources).
    pub fold_iterations: Vec<usize>,
}

/// Out-of-fold nuisance estimates for every row and arm.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    /// `n x d` estimated propensities.
    pub pi_hat: Array2<f64>,
    /// `n x d` estimated conditional outcome means.
    pub mu_hat: Array2<f64>,
    /// Fold assignment used (None for oracle or corrupted sources).
    pub folds: Option<FoldAssignment>,
    /// Provenance.
    pub source: NuisanceSource,
    /// Positivity and optimizer diagnostics.
    pub diagnostics: NuisanceDiagnostics,
}

fn propensity_diagnostics(pi_hat: &Array2<f64>, floor: f64) -> (f64, usize, usize) {
    let mut min_pi = f64::INFINITY;
    let mut zeros = 0usize;
    let mut sub_floor = 0usize;
    for &v in pi_hat.iter() {
        min_pi = min_pi.min(v);
        if v == 0.0 {
            zeros += 1;
        }
        if v < floor {
            sub_floor += 1;
        }
    }
    (min_pi, zeros, sub_floor)
}

impl NuisanceFits {
    /// Wrap known-true nuisance matrices (simulation oracle mode).
    pub fn from_oracle(
        pi_hat: Array2<f64>,
        mu_hat: Array2<f64>,
        floor: f64,
    ) -> Result<Self, FitError> {
        if pi_hat.dim() != mu_hat.dim() {
            return Err(FitError::InvalidOracle(format!(
                "pi {:?} vs mu {:?}",
                pi_hat.dim(),
                mu_hat.dim()
            )));
        }
        for (i, row) in pi_hat.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &v in row.iter() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(FitError::InvalidOracle(format!(
                        "propensity {v} outside [0,1] at row {i}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-8 {
                return Err(FitError::InvalidOracle(format!(
                    "propensity row {i} sums to {sum}"
                )));
            }
        }
        if mu_hat.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidOracle("non-finite outcome mean".into()));
        }
        let (min_pi_hat, zero_cells, sub_floor_cells) = propensity_diagnostics(&pi_hat, floor);
        Ok(NuisanceFits {
            pi_hat,
            mu_hat,
            folds: None,
            source: NuisanceSource::Oracle,
            diagnostics: NuisanceDiagnostics {
                min_pi_hat,
                zero_cells,
                sub_floor_cells,
                floor,
                converged: true,
                separation: false,
                fold_iterations: Vec::new(),
            },
        })
    }
}

/// Corrupt oracle nuisance matrices at rate `epsilon`: propensities become
/// `normalize(max(pi + epsilon*eta, 0))` and means `mu + epsilon*eta'`, with
/// `eta, eta'` i.i.d. Uniform(-1, 1) drawn from `rng`.
///
/// The draw happens once per call, so a caller that fixes `rng` gets a fixed
/// corruption *direction* whose magnitude scales with `epsilon` — the shape
/// rate experiments need. Keep `epsilon` below the smallest true propensity
/// when kink-free corruption matters; entries pushed below zero are clamped.
pub fn corrupt_matrices(
    pi: &Array2<f64>,
    mu: &Array2<f64>,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Array2<f64>) {
    let (m, d) = pi.dim();
    let mut pi_t = Array2::<f64>::zeros((m, d));
    let mut mu_t = mu.clone();
    for i in 0..m {
        let mut sum = 0.0;
        for b in 0..d {
            let noisy = (pi[[i, b]] + epsilon * rng.random_range(-1.0..1.0)).max(0.0);
            pi_t[[i, b]] = noisy;
            sum += noisy;
        }
        for b in 0..d {
            pi_t[[i, b]] /= sum;
        }
    }
    for v in mu_t.iter_mut() {
        *v += epsilon * rng.random_range(-1.0..1.0);
    }
    (pi_t, mu_t)
}

/// Cross-fit both nuisances: every row's predictions come from models that
/// never saw that row's fold.
pub fn crossfit_nuisances(
    data: &Dataset,
    config: &EstimationConfig,
) -> Result<NuisanceFits, FitError> {
    config.validate()?;
    let n = data.n();
    let d = data.arms();
    let folds = split_folds(n, config.folds, config.seed)?;
    validate_folds(data, &folds)?;

    let opts = PropensityOptions::default();
    let x = data.covariates();
    let y = data.outcomes();
    let treatments = data.treatments();

    // Per-fold results are computed independently (possibly in parallel) and
    // then assembled in fold order, so the output is thread-count invariant.
    let fold_results: Vec<Result<FoldFit, FitError>> = (0..config.folds)
        .into_par_iter()
        .map(|j| {
            let train = folds.rows_outside(j);
            let test = folds.rows_in(j);
            let prop = fit_propensity(x, treatments, &train, d, &opts)?;
            let mut outcome_models = Vec::with_capacity(d);
            for arm in 0..d {
                let arm_rows: Vec<usize> = train
                    .iter()
                    .copied()
                    .filter(|&i| treatments[i] == arm)
                    .collect();
                if arm_rows.is_empty() {
                    return Err(FitError::Data(DataError::FoldArmEmpty {
                        fold: j,
                        label: data.labels().label_of(arm).to_string(),
                    }));
                }
                outcome_models.push(fit_outcome(x, y, &arm_rows, config.outcome_method)?);
            }
            let mut pi_rows = Vec::with_capacity(test.len());
            let mut mu_rows = Vec::with_capacity(test.len());
            for &i in &test {
                let xi = x.row(i);
                let xi = xi.as_slice().expect("row is contiguous");
                pi_rows.push(prop.predict_row(xi));
                mu_rows.push(outcome_models.iter().map(|m| m.predict_row(xi)).collect());
            }
            Ok(FoldFit {
                rows: test,
                pi_rows,
                mu_rows,
                iterations: prop.iterations,
                converged: prop.converged,
                separation: prop.separation_flag,
            })
        })
        .collect();

    let mut pi_hat = Array2::<f64>::zeros((n, d));
    let mut mu_hat = Array2::<f64>::zeros((n, d));
    let mut converged = true;
    let mut separation = false;
    let mut fold_iterations = Vec::with_capacity(config.folds);
    for res in fold_results {
        let fit = res?;
        converged &= fit.converged;
        separation |= fit.separation;
        fold_iterations.push(fit.iterations);
        for (t, &i) in fit.rows.iter().enumerate() {
            for b in 0..d {
                pi_hat[[i, b]] = fit.pi_rows[t][b];
                mu_hat[[i, b]] = fit.mu_rows[t][b];
            }
        }
    }

    let (min_pi_hat, zero_cells, sub_floor_cells) =
        propensity_diagnostics(&pi_hat, config.propensity_floor);
    Ok(NuisanceFits {
        pi_hat,
        mu_hat,
        folds: Some(folds),
        source: NuisanceSource::Fitted,
        diagnostics: NuisanceDiagnostics {
            min_pi_hat,
            zero_cells,
            sub_floor_cells,
            floor: config.propensity_floor,
            converged,
            separation,
            fold_iterations,
        },
    })
}

struct FoldFit {
    rows: Vec<usize>,
    pi_rows: Vec<Vec<f64>>,
    mu_rows: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
    separation: bool,
}
