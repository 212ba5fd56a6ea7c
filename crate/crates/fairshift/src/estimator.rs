//! One-step and plug-in estimators for trimmed stochastic-intervention
//! means, with influence-function-based covariance and confidence intervals.
//!
//! For target arm `a` the estimand is `psi_a = E[ sum_b mu_b(X) q_a(b|X) ]`,
//! the mean outcome if treatments were drawn from the intervened law `q_a`
//! instead of the observed propensities. Its efficient influence function
//! (un-centered) decomposes per subject into
//!
//! ```text
//! phi_a(Z) = sum_b  mu_b(X) q_a(b|X)                        (plug-in part)
//!          +        [1(A=b)/pi_b(X)] {Y - mu_b(X)} q_a(b|X) (residual part)
//!          +        mu_b(X) phi_{q_a}(Z; b)                 (propensity part)
//! ```
//!
//! where `phi_{q_a}` chains the scores of the trim product `S`, the shifted
//! law `rho_a`, and the raw propensities:
//!
//! ```text
//! phi_{q_a}(Z;b) = phi_S(Z) {rho_a(b|X) - pi_b(X)}
//!                + S(X) phi_{rho_a}(Z;b)
//!                + {1 - S(X)} {1(A=b) - pi_b(X)}
//! phi_{rho_a}(Z;b) = 1(b!=a) f'(pi_b) {1(A=b) - pi_b}
//!                  - 1(b=a) sum_{c!=a} f'(pi_c) {1(A=c) - pi_c}
//! phi_S(Z) = sum_b s'(pi_b) {1(A=b) - pi_b} prod_{c!=b} s(pi_c)
//! ```
//!
//! The one-step estimator is the sample mean of `phi_a`; the plug-in keeps
//! only the first line. Averaging the influence function removes the
//! first-order nuisance bias, so the one-step estimator tolerates slower
//! nuisance convergence than the plug-in (their bias rates are compared
//! empirically by the simulation experiments).
//!
//! Division-by-zero policy: the residual part is defined as exactly 0
//! whenever `q_a(b|X) = 0`, mirroring how the estimand ignores arms the
//! intervention never assigns. When a subject's observed arm has estimated
//! propensity below 1e-12 — an internal contradiction of the nuisance fits,
//! since the arm was observed — the ratio is computed with the propensity
//! floored at 1e-12 and the row is counted in `inconsistent_rows`.
//!
//! All reductions use fixed-shape pairwise summation and per-row work is
//! written to disjoint output slots, so results are bit-identical across
//! thread counts.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use thiserror::Error;

use crate::intervention::{
    interventional_propensity, InterventionError, InterventionalPropensities, PropensityMatrix,
};
use crate::model::{DataError, Dataset, EstimationConfig, LabelMap};
use crate::nuisance::NuisanceFits;
use crate::num::{column_covariance, column_means, normal_quantile, pairwise_map_sum};
use crate::shift::{ShiftFamily, SmoothingKernel};

/// Floor applied to an observed arm's estimated propensity inside the
/// residual ratio when the fit contradicts the observation (see module doc).
pub const PROPENSITY_RATIO_FLOOR: f64 = 1e-12;

/// Estimation failures.
#[derive(Debug, Error)]
pub enum EstimatorError {
    /// Invalid configuration or dataset state.
    #[error(transparent)]
    Data(#[from] DataError),
    /// Estimated propensities rejected by the intervention layer.
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    /// Unknown label, or a contrast of a label with itself.
    #[error("bad contrast label: {0}")]
    BadLabel(String),
    /// Nuisance matrices not aligned with the dataset.
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn ind(observed: usize, b: usize) -> f64 {
    f64::from(observed == b)
}

/// Residual ratio term `[1(A=b)/pi_b] (y - mu_b)` before multiplication by
/// `q_a(b|X)`. Returns the term and an inconsistency flag that is set when
/// the observed arm's estimated propensity sits below the ratio floor.
pub fn eif_mu_term(observed: usize, y: f64, b: usize, pi_b: f64, mu_b: f64) -> (f64, bool) {
    if observed != b {
        return (0.0, false);
    }
    let inconsistent = pi_b < PROPENSITY_RATIO_FLOOR;
    let denom = pi_b.max(PROPENSITY_RATIO_FLOOR);
    ((y - mu_b) / denom, inconsistent)
}

/// Score of the shifted law: `phi_{rho_a}(Z; b)` evaluated from one row of
/// propensities. Identically zero for the no-shift family (`f' = 0`).
pub fn eif_rho(observed: usize, target: usize, b: usize, pi: &[f64], family: &ShiftFamily) -> f64 {
    if b != target {
        family.df(pi[b]) * (ind(observed, b) - pi[b])
    } else {
        let mut freed = 0.0;
        for (c, &pi_c) in pi.iter().enumerate() {
            if c != target {
                freed += family.df(pi_c) * (ind(observed, c) - pi_c);
            }
        }
        -freed
    }
}

/// Score of the smooth trim product:
/// `phi_S(Z) = sum_b s'(pi_b) {1(A=b) - pi_b} prod_{c!=b} s(pi_c)`.
///
/// Each co-factor product is recomputed directly (never by dividing the full
/// product by `s(pi_b)`), so rows containing exact zeros stay exact: two or
/// more zero propensities force every summand to zero.
pub fn eif_trim(observed: usize, pi: &[f64], kernel: &SmoothingKernel) -> f64 {
    let d = pi.len();
    let mut total = 0.0;
    for b in 0..d {
        let mut term = kernel.ds(pi[b]) * (ind(observed, b) - pi[b]);
        for (c, &pi_c) in pi.iter().enumerate() {
            if c != b {
                term *= kernel.s(pi_c);
            }
        }
        total += term;
    }
    total
}

/// Score of the interventional propensity `q_a(b|X)`, chaining the trim,
/// shift, and raw-propensity scores. `rho_b` and `trim` are the row's
/// already-computed shifted law entry and trim score.
pub fn eif_q(
    observed: usize,
    target: usize,
    b: usize,
    pi: &[f64],
    rho_b: f64,
    trim: f64,
    family: &ShiftFamily,
    kernel: &SmoothingKernel,
) -> f64 {
    let phi_s = eif_trim(observed, pi, kernel);
    let phi_rho = eif_rho(observed, target, b, pi, family);
    phi_s * (rho_b - pi[b]) + trim * phi_rho + (1.0 - trim) * (ind(observed, b) - pi[b])
}

/// Un-centered influence value `phi_a(Z)` for one subject, given the row's
/// nuisance values and the already-built intervention quantities.
///
/// Returns the value and the row's inconsistency flag. Terms are accumulated
/// in a fixed arm order so the result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn eif_row(
    observed: usize,
    y: f64,
    pi: &[f64],
    mu: &[f64],
    q_row: &[f64],
    rho_row: &[f64],
    trim: f64,
    target: usize,
    family: &ShiftFamily,
    kernel: &SmoothingKernel,
) -> (f64, bool) {
    let d = pi.len();
    let phi_s = eif_trim(observed, pi, kernel);
    let mut value = 0.0;
    let mut inconsistent = false;
    for b in 0..d {
        // Plug-in part.
        value += mu[b] * q_row[b];
        // Residual part with the 0/0 := 0 guard: an arm the intervention
        // never assigns contributes nothing, whatever its raw propensity.
        if observed == b && q_row[b] != 0.0 {
            let (term, flag) = eif_mu_term(observed, y, b, pi[b], mu[b]);
            value += term * q_row[b];
            inconsistent |= flag;
        }
        // Propensity part.
        let phi_rho = eif_rho(observed, target, b, pi, family);
        let phi_q =
            phi_s * (rho_row[b] - pi[b]) + trim * phi_rho + (1.0 - trim) * (ind(observed, b) - pi[b]);
        value += mu[b] * phi_q;
    }
    (value, inconsistent)
}

/// Per-subject un-centered influence values, one column per target arm.
#[derive(Debug, Clone)]
pub struct EifMatrix {
    /// `n x d`; column `a` holds `phi_a(Z_i)`.
    pub phi: Array2<f64>,
    /// Rows whose observed arm had estimated propensity below the ratio
    /// floor while the intervention still assigned it mass.
    pub inconsistent_rows: usize,
}

/// Build the intervention quantities for every target arm from estimated
/// propensities.
fn build_interventions(
    pi_hat: &Array2<f64>,
    config: &EstimationConfig,
) -> Result<Vec<InterventionalPropensities>, EstimatorError> {
    let kernel = config.kernel()?;
    let pi = PropensityMatrix::new(pi_hat.clone())?;
    let d = pi.arms();
    let mut out = Vec::with_capacity(d);
    for a in 0..d {
        out.push(interventional_propensity(&pi, &config.family, &kernel, a)?);
    }
    Ok(out)
}

fn check_alignment(data: &Dataset, fits: &NuisanceFits) -> Result<(), EstimatorError> {
    let want = (data.n(), data.arms());
    if fits.pi_hat.dim() != want || fits.mu_hat.dim() != want {
        return Err(EstimatorError::Shape(format!(
            "nuisance matrices {:?}/{:?} vs dataset {:?}",
            fits.pi_hat.dim(),
            fits.mu_hat.dim(),
            want
        )));
    }
    Ok(())
}

/// Evaluate the influence matrix for every subject and target arm.
pub fn compute_eif(
    data: &Dataset,
    fits: &NuisanceFits,
    config: &EstimationConfig,
) -> Result<EifMatrix, EstimatorError> {
    config.validate()?;
    check_alignment(data, fits)?;
    let n = data.n();
    let d = data.arms();
    let kernel = config.kernel()?;
    let interventions = build_interventions(&fits.pi_hat, config)?;

    let treatments = data.treatments();
    let outcomes = data.outcomes();

    // Row-parallel fill of disjoint output slots; arm order inside each row
    // is fixed, so the matrix is identical for any thread count.
    let mut phi = vec![0.0f64; n * d];
    let flags: Vec<bool> = phi
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, row_out)| {
            let pi = fits.pi_hat.row(i);
            let pi = pi.as_slice().expect("row-major matrix");
            let mu = fits.mu_hat.row(i);
            let mu = mu.as_slice().expect("row-major matrix");
            let mut row_flag = false;
            for (a, iv) in interventions.iter().enumerate() {
                let q_row = iv.q.row(i);
                let rho_row = iv.rho.row(i);
                let (value, flag) = eif_row(
                    treatments[i],
                    outcomes[i],
                    pi,
                    mu,
                    q_row.as_slice().expect("row-major matrix"),
                    rho_row.as_slice().expect("row-major matrix"),
                    iv.trim_score[i],
                    a,
                    &config.family,
                    &kernel,
                );
                row_out[a] = value;
                row_flag |= flag;
            }
            row_flag
        })
        .collect();

    Ok(EifMatrix {
        phi: Array2::from_shape_vec((n, d), phi).expect("n*d buffer"),
        inconsistent_rows: flags.iter().filter(|&&f| f).count(),
    })
}

/// Point estimates with covariance, standard errors, and Wald intervals.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    /// One-step estimates, one per arm (label order).
    pub psi_hat: Array1<f64>,
    /// Empirical covariance of the influence columns (denominator `n`).
    pub sigma_hat: Array2<f64>,
    /// `sqrt(sigma_hat[a,a] / n)`.
    pub se: Array1<f64>,
    /// Two-sided Wald intervals at `ci_level`.
    pub ci: Vec<(f64, f64)>,
    /// Arms whose influence column is exactly constant: the interval
    /// collapses to the point estimate.
    pub degenerate: Vec<bool>,
    /// Sample size behind the estimates.
    pub n: usize,
    /// Confidence level of `ci`.
    pub ci_level: f64,
    /// Label order the vectors follow.
    pub labels: LabelMap,
    /// Rows with an observed-arm propensity below the ratio floor.
    pub inconsistent_rows: usize,
}

/// One-step estimates: per-arm sample means of the influence columns.
pub fn one_step(
    data: &Dataset,
    fits: &NuisanceFits,
    config: &EstimationConfig,
) -> Result<EstimateSet, EstimatorError> {
    let eif = compute_eif(data, fits, config)?;
    let n = data.n();
    let d = data.arms();
    let psi_hat = column_means(&eif.phi);
    let sigma_hat = column_covariance(&eif.phi);
    let z = normal_quantile(0.5 + config.ci_level / 2.0);
    let mut se = Array1::<f64>::zeros(d);
    let mut ci = Vec::with_capacity(d);
    let mut degenerate = Vec::with_capacity(d);
    for a in 0..d {
        let var = sigma_hat[[a, a]];
        let is_degenerate = var <= 0.0;
        let s = if is_degenerate {
            0.0
        } else {
            (var / n as f64).sqrt()
        };
        se[a] = s;
        ci.push((psi_hat[a] - z * s, psi_hat[a] + z * s));
        degenerate.push(is_degenerate);
    }
    Ok(EstimateSet {
        psi_hat,
        sigma_hat,
        se,
        ci,
        degenerate,
        n,
        ci_level: config.ci_level,
        labels: data.labels().clone(),
        inconsistent_rows: eif.inconsistent_rows,
    })
}

/// Plug-in estimates `P_n { sum_b mu_b(X) q_a(b|X) }`, reported alongside
/// the one-step values for bias comparisons.
pub fn plugin(
    data: &Dataset,
    fits: &NuisanceFits,
    config: &EstimationConfig,
) -> Result<Array1<f64>, EstimatorError> {
    config.validate()?;
    check_alignment(data, fits)?;
    let n = data.n();
    let d = data.arms();
    let interventions = build_interventions(&fits.pi_hat, config)?;
    let mut out = Array1::<f64>::zeros(d);
    for (a, iv) in interventions.iter().enumerate() {
        out[a] = pairwise_map_sum(n, |i| {
            let mut row = 0.0;
            for b in 0..d {
                row += fits.mu_hat[[i, b]] * iv.q[[i, b]];
            }
            row
        }) / n as f64;
    }
    Ok(out)
}

/// A difference of two arm estimates with its delta-method interval.
#[derive(Debug, Clone)]
pub struct Contrast {
    /// Label of the left arm.
    pub lhs: String,
    /// Label of the right arm (or a description of a benchmark set).
    pub rhs: String,
    /// `psi_hat[lhs] - psi_hat[rhs]`.
    pub estimate: f64,
    /// Standard error from the joint covariance.
    pub se: f64,
    /// Two-sided Wald interval at the estimate set's level.
    pub ci: (f64, f64),
    /// Both influence columns were constant; the interval is a point.
    pub degenerate: bool,
}

fn weighted_contrast(
    est: &EstimateSet,
    weights: &[f64],
    lhs: String,
    rhs: String,
) -> Contrast {
    let d = est.psi_hat.len();
    let estimate = pairwise_map_sum(d, |a| weights[a] * est.psi_hat[a]);
    let mut var = 0.0;
    for a in 0..d {
        for b in 0..d {
            var += weights[a] * est.sigma_hat[[a, b]] * weights[b];
        }
    }
    let var = var.max(0.0) / est.n as f64;
    let degenerate = var == 0.0;
    let se = var.sqrt();
    let z = normal_quantile(0.5 + est.ci_level / 2.0);
    Contrast {
        lhs,
        rhs,
        estimate,
        se,
        ci: (estimate - z * se, estimate + z * se),
        degenerate,
    }
}

/// Pairwise contrast `psi_hat[a] - psi_hat[b]` between two arm labels.
pub fn contrast(est: &EstimateSet, a: &str, b: &str) -> Result<Contrast, EstimatorError> {
    let ia = est
        .labels
        .index_of(a)
        .ok_or_else(|| EstimatorError::BadLabel(a.to_string()))?;
    let ib = est
        .labels
        .index_of(b)
        .ok_or_else(|| EstimatorError::BadLabel(b.to_string()))?;
    if ia == ib {
        return Err(EstimatorError::BadLabel(format!(
            "cannot contrast '{a}' with itself"
        )));
    }
    // The pair difference is computed directly (not through the weighted
    // path) so chained contrasts telescope exactly in floating point.
    let estimate = est.psi_hat[ia] - est.psi_hat[ib];
    let var = (est.sigma_hat[[ia, ia]] + est.sigma_hat[[ib, ib]]
        - 2.0 * est.sigma_hat[[ia, ib]])
        .max(0.0)
        / est.n as f64;
    let degenerate = var == 0.0;
    let se = var.sqrt();
    let z = normal_quantile(0.5 + est.ci_level / 2.0);
    Ok(Contrast {
        lhs: a.to_string(),
        rhs: b.to_string(),
        estimate,
        se,
        ci: (estimate - z * se, estimate + z * se),
        degenerate,
    })
}

/// Contrast of one arm against the unweighted mean of all other arms.
pub fn contrast_vs_rest(est: &EstimateSet, a: &str) -> Result<Contrast, EstimatorError> {
    let ia = est
        .labels
        .index_of(a)
        .ok_or_else(|| EstimatorError::BadLabel(a.to_string()))?;
    let d = est.psi_hat.len();
    if d < 2 {
        return Err(EstimatorError::BadLabel(
            "need at least two arms for a benchmark contrast".into(),
        ));
    }
    let mut weights = vec![-1.0 / (d - 1) as f64; d];
    weights[ia] = 1.0;
    Ok(weighted_contrast(
        est,
        &weights,
        a.to_string(),
        "mean(others)".to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::NuisanceSource;
    use crate::rng::{seeded_rng, STREAM_SAMPLE};
    use crate::shift::ShiftFamily;
    use ndarray::array;
    use rand::Rng;

    fn kernel() -> SmoothingKernel {
        SmoothingKernel::new(100.0).unwrap()
    }

    #[test]
    fn mu_term_cases() {
        // Wrong arm: indicator kills the term.
        assert_eq!(eif_mu_term(0, 5.0, 1, 0.5, 2.0), (0.0, false));
        // Zero residual.
        assert_eq!(eif_mu_term(1, 2.0, 1, 0.5, 2.0), (0.0, false));
        // Direct arithmetic: residual 0.2 over propensity 0.5.
        let (t, flag) = eif_mu_term(1, 2.2, 1, 0.5, 2.0);
        assert!((t - 0.4).abs() < 1e-15);
        assert!(!flag);
        // Observed arm with propensity below the floor: flagged, floored.
        let (t, flag) = eif_mu_term(0, 1.0, 0, 1e-14, 0.0);
        assert!(flag);
        assert!((t - 1e12).abs() / 1e12 < 1e-12);
    }

    #[test]
    fn rho_score_cases() {
        let pi = [0.3, 0.7];
        // No-shift family: f' = 0 everywhere.
        assert_eq!(eif_rho(1, 0, 1, &pi, &ShiftFamily::Tsm), 0.0);
        assert_eq!(eif_rho(1, 0, 0, &pi, &ShiftFamily::Tsm), 0.0);
        // Proportional family, observed arm 1, target 0, component 1:
        // f'(0.7) * (1 - 0.7) = 0.5 * 0.3.
        let fam = ShiftFamily::multiplicative(0.5).unwrap();
        let v = eif_rho(1, 0, 1, &pi, &fam);
        assert!((v - 0.15).abs() < 1e-15);
        // Components sum to zero across arms for every observed/target pair.
        let fam = ShiftFamily::exp_tilt(0.7).unwrap();
        let pi = [0.2, 0.0, 0.5, 0.3];
        for observed in 0..4 {
            for target in 0..4 {
                let total: f64 = (0..4).map(|b| eif_rho(observed, target, b, &pi, &fam)).sum();
                assert!(total.abs() < 1e-12, "observed {observed} target {target}");
            }
        }
    }

    #[test]
    fn trim_score_zeroes_and_degenerate_arm() {
        let k = kernel();
        // Two exact zeros: every summand carries at least one zero factor.
        assert_eq!(eif_trim(0, &[0.0, 0.0, 1.0], &k), 0.0);
        // Single arm: the observed indicator equals the propensity.
        assert_eq!(eif_trim(0, &[1.0], &k), 0.0);
    }

    #[test]
    fn trim_score_matches_directional_derivative() {
        // phi_S is the derivative of t -> prod_b s(pi_b + t*(1(A=b)-pi_b)).
        let k = kernel();
        let pi = [0.25, 0.6, 0.15];
        for observed in 0..3 {
            let g = |t: f64| -> f64 {
                (0..3)
                    .map(|b| k.s(pi[b] + t * (ind(observed, b) - pi[b])))
                    .product()
            };
            let h = 1e-6;
            let numeric = (g(h) - g(-h)) / (2.0 * h);
            let analytic = eif_trim(observed, &pi, &k);
            assert!(
                (numeric - analytic).abs() <= 1e-5 * (1.0 + analytic.abs()),
                "observed {observed}: {numeric} vs {analytic}"
            );
        }
    }

    #[test]
    fn q_score_components_sum_to_zero() {
        let k = kernel();
        let families = [
            ShiftFamily::Tsm,
            ShiftFamily::multiplicative(0.5).unwrap(),
            ShiftFamily::exp_tilt(0.9).unwrap(),
            ShiftFamily::Identity,
        ];
        let rows: [&[f64]; 3] = [&[0.3, 0.7], &[0.0, 0.4, 0.6], &[0.25, 0.25, 0.25, 0.25]];
        for fam in &families {
            for pi in rows {
                let d = pi.len();
                let pm = PropensityMatrix::new(
                    Array2::from_shape_vec((1, d), pi.to_vec()).unwrap(),
                )
                .unwrap();
                for target in 0..d {
                    let iv = interventional_propensity(&pm, fam, &k, target).unwrap();
                    for observed in 0..d {
                        let total: f64 = (0..d)
                            .map(|b| {
                                eif_q(
                                    observed,
                                    target,
                                    b,
                                    pi,
                                    iv.rho[[0, b]],
                                    iv.trim_score[0],
                                    fam,
                                    &k,
                                )
                            })
                            .sum();
                        assert!(
                            total.abs() < 1e-10,
                            "{} target {target} observed {observed}: {total}",
                            fam.tag()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn q_score_reduces_to_propensity_score_under_full_trim() {
        // With every propensity bounded away from zero and a huge smoothing
        // rate, S ~ 1 and phi_S ~ 0, so for the no-op family the q score
        // collapses to the raw propensity score 1(A=b) - pi_b.
        let k = SmoothingKernel::new(1e6).unwrap();
        let pi = [0.4, 0.6];
        let fam = ShiftFamily::Identity;
        let pm =
            PropensityMatrix::new(Array2::from_shape_vec((1, 2), pi.to_vec()).unwrap()).unwrap();
        let iv = interventional_propensity(&pm, &fam, &k, 0).unwrap();
        for observed in 0..2 {
            for b in 0..2 {
                let v = eif_q(observed, 0, b, &pi, iv.rho[[0, b]], iv.trim_score[0], &fam, &k);
                let expect = ind(observed, b) - pi[b];
                assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
            }
        }
    }

    /// Hand-rolled two-atom discrete world used by the enumeration tests.
    struct TwoAtom {
        probs: [f64; 2],
        pi: Array2<f64>,
        mu: Array2<f64>,
    }

    fn two_atom() -> TwoAtom {
        TwoAtom {
            probs: [0.4, 0.6],
            pi: array![[0.3, 0.7], [0.8, 0.2]],
            mu: array![[1.0, 2.0], [-0.5, 3.0]],
        }
    }

    /// Exact functional on the two-atom world by direct atom summation.
    fn exact_psi(world: &TwoAtom, family: &ShiftFamily, k: &SmoothingKernel, target: usize) -> f64 {
        let pm = PropensityMatrix::new(world.pi.clone()).unwrap();
        let iv = interventional_propensity(&pm, family, k, target).unwrap();
        let mut total = 0.0;
        for atom in 0..2 {
            let mut inner = 0.0;
            for b in 0..2 {
                inner += world.mu[[atom, b]] * iv.q[[atom, b]];
            }
            total += world.probs[atom] * inner;
        }
        total
    }

    /// Enumerated mean of the influence function: outcomes are noise-free,
    /// so summing `p(atom) * pi(arm|atom) * phi(atom, arm, mu)` enumerates
    /// the full distribution.
    fn enumerated_eif_mean(
        world: &TwoAtom,
        family: &ShiftFamily,
        k: &SmoothingKernel,
        target: usize,
    ) -> f64 {
        let pm = PropensityMatrix::new(world.pi.clone()).unwrap();
        let iv = interventional_propensity(&pm, family, k, target).unwrap();
        let mut total = 0.0;
        for atom in 0..2 {
            let pi_row = world.pi.row(atom);
            let pi = pi_row.as_slice().unwrap();
            let mu_row = world.mu.row(atom);
            let mu = mu_row.as_slice().unwrap();
            for arm in 0..2 {
                if pi[arm] == 0.0 {
                    continue;
                }
                let q_row = iv.q.row(atom);
                let rho_row = iv.rho.row(atom);
                let (phi, _) = eif_row(
                    arm,
                    mu[arm],
                    pi,
                    mu,
                    q_row.as_slice().unwrap(),
                    rho_row.as_slice().unwrap(),
                    iv.trim_score[atom],
                    target,
                    family,
                    k,
                );
                total += world.probs[atom] * pi[arm] * phi;
            }
        }
        total
    }

    #[test]
    fn influence_mean_equals_functional_by_enumeration() {
        let world = two_atom();
        let k = kernel();
        let families = [
            ShiftFamily::Tsm,
            ShiftFamily::multiplicative(0.5).unwrap(),
            ShiftFamily::exp_tilt(0.9).unwrap(),
        ];
        for fam in &families {
            for target in 0..2 {
                let psi = exact_psi(&world, fam, &k, target);
                let mean_phi = enumerated_eif_mean(&world, fam, &k, target);
                assert!(
                    (psi - mean_phi).abs() < 1e-10,
                    "{} target {target}: psi {psi} vs E[phi] {mean_phi}",
                    fam.tag()
                );
            }
        }
    }

    /// Draw a dataset plus oracle nuisances from the two-atom world.
    fn sample_two_atom(world: &TwoAtom, n: usize, seed: u64) -> (Dataset, NuisanceFits) {
        let mut rng = seeded_rng(seed, STREAM_SAMPLE);
        let mut cov = Array2::<f64>::zeros((n, 1));
        let mut labels = Vec::with_capacity(n);
        let mut y = Array1::<f64>::zeros(n);
        let mut pi_hat = Array2::<f64>::zeros((n, 2));
        let mut mu_hat = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let atom = usize::from(rng.random::<f64>() >= world.probs[0]);
            cov[[i, 0]] = atom as f64;
            let arm = usize::from(rng.random::<f64>() >= world.pi[[atom, 0]]);
            labels.push(arm as i64 + 1);
            y[i] = world.mu[[atom, arm]] + 0.5 * rng.random_range(-1.0..1.0);
            for b in 0..2 {
                pi_hat[[i, b]] = world.pi[[atom, b]];
                mu_hat[[i, b]] = world.mu[[atom, b]];
            }
        }
        let data = Dataset::from_numeric(cov, &labels, y, None).unwrap();
        let fits = NuisanceFits::from_oracle(pi_hat, mu_hat, 1e-8).unwrap();
        (data, fits)
    }

    #[test]
    fn one_step_tracks_exact_functional_with_oracle_nuisances() {
        let world = two_atom();
        let k = kernel();
        let fam = ShiftFamily::multiplicative(0.5).unwrap();
        let config = EstimationConfig::new(fam.clone(), 99);
        let (data, fits) = sample_two_atom(&world, 4000, 7);
        let est = one_step(&data, &fits, &config).unwrap();
        for target in 0..2 {
            let psi = exact_psi(&world, &fam, &k, target);
            let dev = (est.psi_hat[target] - psi).abs();
            assert!(
                dev <= 4.0 * est.se[target],
                "target {target}: {} vs {psi} (se {})",
                est.psi_hat[target],
                est.se[target]
            );
            assert!(est.se[target] > 0.0);
            assert!(est.ci[target].0 < est.ci[target].1);
        }
        assert_eq!(est.inconsistent_rows, 0);
        // Plug-in with oracle nuisances is close to the one-step value.
        let plug = plugin(&data, &fits, &config).unwrap();
        for target in 0..2 {
            assert!((plug[target] - est.psi_hat[target]).abs() <= 4.0 * est.se[target]);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let world = two_atom();
        let fam = ShiftFamily::exp_tilt(0.5).unwrap();
        let config = EstimationConfig::new(fam, 3);
        let (data, fits) = sample_two_atom(&world, 500, 21);
        let est = one_step(&data, &fits, &config).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(est.sigma_hat[[a, b]], est.sigma_hat[[b, a]]);
            }
        }
        assert!(crate::num::is_psd_within(&est.sigma_hat, 1e-10));
    }

    #[test]
    fn no_shift_in_assignment_recovers_observed_mean() {
        // The no-op family leaves the assignment law untouched, so the
        // influence value telescopes to the raw outcome and every arm's
        // estimate equals the sample mean of Y.
        let world = two_atom();
        let config = EstimationConfig::new(ShiftFamily::Identity, 5);
        let (data, fits) = sample_two_atom(&world, 1000, 13);
        let est = one_step(&data, &fits, &config).unwrap();
        let ybar = crate::num::mean(data.outcomes().as_slice().unwrap());
        for target in 0..2 {
            assert!(
                (est.psi_hat[target] - ybar).abs() < 1e-10,
                "target {target}: {} vs mean {ybar}",
                est.psi_hat[target]
            );
        }
    }

    #[test]
    fn constant_outcome_collapses_to_point() {
        // Single atom, constant outcome: every influence value is the
        // constant, variance is exactly zero, intervals collapse.
        let n = 40;
        let mut rng = seeded_rng(2, STREAM_SAMPLE);
        let cov = Array2::<f64>::zeros((n, 1));
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(1..=2)).collect();
        let y = Array1::<f64>::from_elem(n, 3.25);
        let data = Dataset::from_numeric(cov, &labels, y, None).unwrap();
        let pi_hat = Array2::from_shape_fn((n, 2), |(_, b)| if b == 0 { 0.5 } else { 0.5 });
        let mu_hat = Array2::from_elem((n, 2), 3.25);
        let fits = NuisanceFits::from_oracle(pi_hat, mu_hat, 1e-8).unwrap();
        let config = EstimationConfig::new(ShiftFamily::multiplicative(0.5).unwrap(), 1);
        let eif = compute_eif(&data, &fits, &config).unwrap();
        for i in 0..n {
            for a in 0..2 {
                assert!(
                    (eif.phi[[i, a]] - 3.25).abs() < 1e-12,
                    "phi[{i},{a}] = {}",
                    eif.phi[[i, a]]
                );
            }
        }
        let est = one_step(&data, &fits, &config).unwrap();
        for a in 0..2 {
            assert!((est.psi_hat[a] - 3.25).abs() < 1e-12);
            assert!(est.degenerate[a]);
            assert_eq!(est.se[a], 0.0);
            assert_eq!(est.ci[a].0, est.ci[a].1);
        }
        let plug = plugin(&data, &fits, &config).unwrap();
        for a in 0..2 {
            assert!((plug[a] - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_rows_are_flagged_not_fatal() {
        // Observed arm 0 on a row whose estimated propensity for arm 0 is a
        // positive sub-floor sliver: the intervention still assigns arm 0
        // a little mass, so the floored ratio enters and the row is flagged.
        let n = 4;
        let cov = Array2::<f64>::zeros((n, 1));
        let labels = vec![1i64, 2, 2, 1];
        let y = array![1.0, 0.0, 0.5, 2.0];
        let data = Dataset::from_numeric(cov, &labels, y, None).unwrap();
        let mut pi_hat = Array2::from_elem((n, 2), 0.5);
        pi_hat[[0, 0]] = 1e-13;
        pi_hat[[0, 1]] = 1.0 - 1e-13;
        let mu_hat = Array2::from_elem((n, 2), 0.5);
        let fits = NuisanceFits::from_oracle(pi_hat, mu_hat, 1e-8).unwrap();
        let config = EstimationConfig::new(ShiftFamily::multiplicative(0.5).unwrap(), 1);
        let eif = compute_eif(&data, &fits, &config).unwrap();
        assert_eq!(eif.inconsistent_rows, 1);
        assert!(eif.phi.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn exact_zero_propensity_on_observed_arm_is_guarded_not_flagged() {
        // With an exact zero the trim score is exactly zero, q equals the
        // raw propensities bit-for-bit, and the 0/0 := 0 guard removes the
        // residual term entirely: finite output, no inconsistency count.
        let n = 4;
        let cov = Array2::<f64>::zeros((n, 1));
        let labels = vec![1i64, 2, 2, 1];
        let y = array![1.0, 0.0, 0.5, 2.0];
        let data = Dataset::from_numeric(cov, &labels, y, None).unwrap();
        let mut pi_hat = Array2::from_elem((n, 2), 0.5);
        pi_hat[[0, 0]] = 0.0;
        pi_hat[[0, 1]] = 1.0;
        let mu_hat = Array2::from_elem((n, 2), 0.5);
        let fits = NuisanceFits::from_oracle(pi_hat, mu_hat, 1e-8).unwrap();
        let config = EstimationConfig::new(ShiftFamily::multiplicative(0.5).unwrap(), 1);
        let eif = compute_eif(&data, &fits, &config).unwrap();
        assert_eq!(eif.inconsistent_rows, 0);
        assert!(eif.phi.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn contrasts_reject_bad_labels_and_telescope_exactly() {
        // Three arms with estimates inside a binade so pairwise differences
        // are exact floating-point subtractions.
        let n = 300;
        let mut rng = seeded_rng(8, STREAM_SAMPLE);
        let cov = Array2::<f64>::zeros((n, 1));
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let y = Array1::from_shape_fn(n, |i| {
            0.6 + 0.05 * labels[i] as f64 + 0.1 * rng.random::<f64>() - 0.05 * (i % 2) as f64
        });
        let data = Dataset::from_numeric(cov, &labels, y, None).unwrap();
        let third = 1.0 / 3.0;
        let pi_hat = Array2::from_elem((n, 3), third);
        let mu_hat = Array2::from_shape_fn((n, 3), |(_, b)| 0.6 + 0.05 * (b + 1) as f64);
        let fits = NuisanceFits::from_oracle(pi_hat, mu_hat, 1e-8).unwrap();
        let config = EstimationConfig::new(ShiftFamily::multiplicative(0.9).unwrap(), 4);
        let est = one_step(&data, &fits, &config).unwrap();

        assert!(matches!(
            contrast(&est, "1", "1"),
            Err(EstimatorError::BadLabel(_))
        ));
        assert!(matches!(
            contrast(&est, "1", "9"),
            Err(EstimatorError::BadLabel(_))
        ));

        let c12 = contrast(&est, "1", "2").unwrap();
        let c23 = contrast(&est, "2", "3").unwrap();
        let c13 = contrast(&est, "1", "3").unwrap();
        assert_eq!(
            (c12.estimate + c23.estimate).to_bits(),
            c13.estimate.to_bits(),
            "chained contrasts must telescope bit-exactly"
        );
        assert!(c12.se > 0.0);
        assert!(c12.ci.0 < c12.ci.1);

        let vs_rest = contrast_vs_rest(&est, "2").unwrap();
        let manual = est.psi_hat[1] - 0.5 * (est.psi_hat[0] + est.psi_hat[2]);
        assert!((vs_rest.estimate - manual).abs() < 1e-12);
        assert_eq!(vs_rest.rhs, "mean(others)");
    }

    #[test]
    fn outcome_scaling_scales_estimates_exactly() {
        // Scaling outcomes and outcome means by a power of two scales every
        // estimate, standard error, and interval endpoint bit-exactly; a
        // non-dyadic scale agrees to relative rounding tolerance.
        let world = two_atom();
        let fam = ShiftFamily::exp_tilt(0.5).unwrap();
        let config = EstimationConfig::new(fam, 77);
        let (data, fits) = sample_two_atom(&world, 600, 31);
        let base = one_step(&data, &fits, &config).unwrap();

        let lambda = 4.0;
        let scaled_data = data
            .with_outcomes(data.outcomes().mapv(|v| lambda * v))
            .unwrap();
        let scaled_fits = NuisanceFits::from_oracle(
            fits.pi_hat.clone(),
            fits.mu_hat.mapv(|v| lambda * v),
            1e-8,
        )
        .unwrap();
        let scaled = one_step(&scaled_data, &scaled_fits, &config).unwrap();
        for a in 0..2 {
            assert_eq!(
                (lambda * base.psi_hat[a]).to_bits(),
                scaled.psi_hat[a].to_bits()
            );
            assert_eq!((lambda * base.se[a]).to_bits(), scaled.se[a].to_bits());
            assert_eq!(
                (lambda * base.ci[a].0).to_bits(),
                scaled.ci[a].0.to_bits()
            );
            assert_eq!(
                (lambda * base.ci[a].1).to_bits(),
                scaled.ci[a].1.to_bits()
            );
        }

        let lambda = 2.5;
        let scaled_data = data
            .with_outcomes(data.outcomes().mapv(|v| lambda * v))
            .unwrap();
        let scaled_fits = NuisanceFits::from_oracle(
            fits.pi_hat.clone(),
            fits.mu_hat.mapv(|v| lambda * v),
            1e-8,
        )
        .unwrap();
        let scaled = one_step(&scaled_data, &scaled_fits, &config).unwrap();
        for a in 0..2 {
            let rel = (scaled.psi_hat[a] - lambda * base.psi_hat[a]).abs()
                / (1.0 + (lambda * base.psi_hat[a]).abs());
            assert!(rel < 1e-12);
            let rel_se =
                (scaled.se[a] - lambda * base.se[a]).abs() / (1.0 + (lambda * base.se[a]).abs());
            assert!(rel_se < 1e-12);
        }
    }

    #[test]
    fn results_are_identical_across_thread_counts() {
        // The EIF fill is row-parallel; forcing different pool sizes must
        // not change a single bit.
        let world = two_atom();
        let config = EstimationConfig::new(ShiftFamily::multiplicative(0.5).unwrap(), 11);
        let (data, fits) = sample_two_atom(&world, 400, 17);
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let est1 = pool1.install(|| one_step(&data, &fits, &config)).unwrap();
        let est4 = pool4.install(|| one_step(&data, &fits, &config)).unwrap();
        assert_eq!(est1.psi_hat, est4.psi_hat);
        assert_eq!(est1.sigma_hat, est4.sigma_hat);
        assert_eq!(est1.se, est4.se);
        assert_eq!(fits.source, NuisanceSource::Oracle);
    }
}
