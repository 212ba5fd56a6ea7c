//! Observational data model: validated datasets, estimation configuration,
//! and deterministic cross-validation folds.
//!
//! A [`Dataset`] holds `n` rows of covariates, a treatment arm per row, and a
//! scalar outcome per row. Arm labels from the source data are re-indexed to
//! contiguous internal indices `0..d` through a recorded [`LabelMap`], so all
//! numeric code works with dense arm indices while reports speak the caller's
//! labels. Validation guarantees every arm actually occurs, all values are
//! finite, and `n >= 2d` (anything sparser cannot support split-sample
//! nuisance fitting).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{permutation, seeded_rng, STREAM_FOLDS};
use crate::shift::{ShiftFamily, SmoothingKernel};

/// Validation and configuration errors for the data model.
#[derive(Debug, Error)]
pub enum DataError {
    /// A declared arm label never occurs in the data.
    #[error("arm '{label}' is declared but has no observations")]
    EmptyArm { label: String },
    /// A label occurs in the data but not in the declared set.
    #[error("arm '{label}' occurs in the data but is not declared")]
    UndeclaredLabel { label: String },
    /// A covariate or outcome is NaN or infinite.
    #[error("non-finite value in {field} at row {row}")]
    NonFinite { field: String, row: usize },
    /// More arms than the sample can support (`n < 2d`).
    #[error("{arms} arms need at least {} rows, got {rows}", 2 * arms)]
    ArityTooLarge { arms: usize, rows: usize },
    /// Too few rows for the requested fold count.
    #[error("cannot split {rows} rows into {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    /// Mismatched input lengths.
    #[error("input lengths disagree: {0}")]
    LengthMismatch(String),
    /// A fold is missing observations from some arm.
    #[error("fold {fold} has no observations of arm '{label}'")]
    FoldArmEmpty { fold: usize, label: String },
    /// Configuration field outside its domain.
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Recorded bijection between source arm labels and internal indices.
///
/// Labels are ordered numerically when every label parses as an integer and
/// lexicographically otherwise; either way the order is deterministic and the
/// map travels with every result so output is always in source labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    originals: Vec<String>,
}

impl LabelMap {
    fn from_distinct(mut labels: Vec<String>) -> Self {
        let all_numeric = labels.iter().all(|l| l.parse::<i64>().is_ok());
        if all_numeric {
            labels.sort_by_key(|l| l.parse::<i64>().unwrap());
        } else {
            labels.sort();
        }
        LabelMap { originals: labels }
    }

    /// Number of arms.
    pub fn arms(&self) -> usize {
        self.originals.len()
    }

    /// Internal index of a source label.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.originals.iter().position(|l| l == label)
    }

    /// Source label of an internal index.
    pub fn label_of(&self, index: usize) -> &str {
        &self.originals[index]
    }

    /// All labels in internal-index order.
    pub fn labels(&self) -> &[String] {
        &self.originals
    }
}

/// Validated observational dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Array2<f64>,
    treatments: Vec<usize>,
    outcomes: Array1<f64>,
    labels: LabelMap,
}

impl Dataset {
    /// Validate and build a dataset from raw columns.
    ///
    /// `declared` optionally fixes the arm label set: every declared label
    /// must occur ([`DataError::EmptyArm`]) and no other label may appear
    /// ([`DataError::UndeclaredLabel`]). Without it the label set is inferred
    /// from the data.
    pub fn from_labels(
        covariates: Array2<f64>,
        treatment_labels: &[String],
        outcomes: Array1<f64>,
        declared: Option<&[String]>,
    ) -> Result<Self, DataError> {
        let n = covariates.nrows();
        if treatment_labels.len() != n || outcomes.len() != n {
            return Err(DataError::LengthMismatch(format!(
                "covariate rows {n}, treatments {}, outcomes {}",
                treatment_labels.len(),
                outcomes.len()
            )));
        }
        if n == 0 {
            return Err(DataError::LengthMismatch("empty dataset".into()));
        }

        for (i, row) in covariates.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    field: "covariates".into(),
                    row: i,
                });
            }
        }
        for (i, y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(DataError::NonFinite {
                    field: "outcome".into(),
                    row: i,
                });
            }
        }

        let mut distinct: Vec<String> = Vec::new();
        for l in treatment_labels {
            if !distinct.contains(l) {
                distinct.push(l.clone());
            }
        }
        let labels = match declared {
            Some(decl) => {
                for l in treatment_labels {
                    if !decl.contains(l) {
                        return Err(DataError::UndeclaredLabel { label: l.clone() });
                    }
                }
                for l in decl {
                    if !distinct.contains(l) {
                        return Err(DataError::EmptyArm { label: l.clone() });
                    }
                }
                LabelMap::from_distinct(decl.to_vec())
            }
            None => LabelMap::from_distinct(distinct),
        };

        let d = labels.arms();
        if n < 2 * d {
            return Err(DataError::ArityTooLarge { arms: d, rows: n });
        }

        let treatments: Vec<usize> = treatment_labels
            .iter()
            .map(|l| labels.index_of(l).expect("label presence already checked"))
            .collect();

        Ok(Dataset {
            covariates,
            treatments,
            outcomes,
            labels,
        })
    }

    /// Convenience constructor for integer-labelled arms.
    pub fn from_numeric(
        covariates: Array2<f64>,
        treatment_labels: &[i64],
        outcomes: Array1<f64>,
        declared: Option<&[i64]>,
    ) -> Result<Self, DataError> {
        let as_strings: Vec<String> = treatment_labels.iter().map(|l| l.to_string()).collect();
        let declared_strings: Option<Vec<String>> =
            declared.map(|d| d.iter().map(|l| l.to_string()).collect());
        Self::from_labels(
            covariates,
            &as_strings,
            outcomes,
            declared_strings.as_deref(),
        )
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    /// Number of arms.
    pub fn arms(&self) -> usize {
        self.labels.arms()
    }

    /// Covariate matrix (`n x p`).
    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    /// Internal arm index per row.
    pub fn treatments(&self) -> &[usize] {
        &self.treatments
    }

    /// Outcome per row.
    pub fn outcomes(&self) -> &Array1<f64> {
        &self.outcomes
    }

    /// The label map.
    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    /// Replace the outcome column (used by scale-equivariance checks).
    pub fn with_outcomes(&self, outcomes: Array1<f64>) -> Result<Self, DataError> {
        if outcomes.len() != self.n() {
            return Err(DataError::LengthMismatch("outcome length".into()));
        }
        for (i, y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(DataError::NonFinite {
                    field: "outcome".into(),
                    row: i,
                });
            }
        }
        Ok(Dataset {
            covariates: self.covariates.clone(),
            treatments: self.treatments.clone(),
            outcomes,
            labels: self.labels.clone(),
        })
    }
}

/// How conditional outcome means are fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMethod {
    /// Ridge-stabilised least squares on covariates plus intercept.
    Linear,
    /// k-nearest-neighbour average with `k = ceil(n_b^{4/5})` per arm.
    Knn,
}

/// Everything an estimation run needs besides the data.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    /// Shift family defining the intervention.
    pub family: ShiftFamily,
    /// Trimming kernel rate `k` (default 100).
    pub smoothing_k: f64,
    /// Cross-fitting fold count (default 2).
    pub folds: usize,
    /// Seed for every random choice the run makes.
    pub seed: u64,
    /// Two-sided confidence level (default 0.95).
    pub ci_level: f64,
    /// Reporting threshold for near-zero estimated propensities
    /// (default 1e-8). Diagnostic only — predictions are never clipped.
    pub propensity_floor: f64,
    /// Outcome-model choice (default linear).
    pub outcome_method: OutcomeMethod,
}

impl EstimationConfig {
    /// Config with spec'd defaults for the given family and seed.
    pub fn new(family: ShiftFamily, seed: u64) -> Self {
        EstimationConfig {
            family,
            smoothing_k: 100.0,
            folds: 2,
            seed,
            ci_level: 0.95,
            propensity_floor: 1e-8,
            outcome_method: OutcomeMethod::Linear,
        }
    }

    /// Validate field domains.
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.smoothing_k > 0.0) || !self.smoothing_k.is_finite() {
            return Err(DataError::BadConfig(format!(
                "smoothing_k must be positive, got {}",
                self.smoothing_k
            )));
        }
        if self.folds < 2 {
            return Err(DataError::BadConfig(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(DataError::BadConfig(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if !(self.propensity_floor >= 0.0) {
            return Err(DataError::BadConfig(format!(
                "propensity_floor must be >= 0, got {}",
                self.propensity_floor
            )));
        }
        Ok(())
    }

    /// The trimming kernel implied by `smoothing_k`.
    pub fn kernel(&self) -> Result<SmoothingKernel, DataError> {
        SmoothingKernel::new(self.smoothing_k)
            .map_err(|e| DataError::BadConfig(e.to_string()))
    }
}

/// Deterministic fold assignment: a seeded permutation of row indices cut
/// into `folds` contiguous blocks, so fold sizes differ by at most one and
/// the assignment is a pure function of `(seed, n, folds)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of_row: Vec<usize>,
    folds: usize,
}

impl FoldAssignment {
    /// Fold index of each row.
    pub fn fold_of_row(&self) -> &[usize] {
        &self.fold_of_row
    }

    /// Fold of row `i`.
    pub fn fold(&self, i: usize) -> usize {
        self.fold_of_row[i]
    }

    /// Number of folds.
    pub fn folds(&self) -> usize {
        self.folds
    }

    /// Row indices belonging to fold `j`.
    pub fn rows_in(&self, j: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] == j)
            .collect()
    }

    /// Row indices outside fold `j` (the training complement).
    pub fn rows_outside(&self, j: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] != j)
            .collect()
    }
}

/// Split `n` rows into `folds` balanced folds, deterministically in
/// `(seed, n, folds)`.
pub fn split_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if folds < 2 || n < folds {
        return Err(DataError::TooFewRows { rows: n, folds });
    }
    let mut rng = seeded_rng(seed, STREAM_FOLDS);
    let perm = permutation(n, &mut rng);
    let base = n / folds;
    let extra = n % folds; // first `extra` folds get one more row
    let mut fold_of_row = vec![0usize; n];
    let mut pos = 0usize;
    for j in 0..folds {
        let size = base + usize::from(j < extra);
        for &row in &perm[pos..pos + size] {
            fold_of_row[row] = j;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_of_row, folds })
}

/// Check that every fold contains at least one observation of every arm, the
/// coverage cross-fitting needs for both propensity and outcome fits.
pub fn validate_folds(data: &Dataset, assignment: &FoldAssignment) -> Result<(), DataError> {
    let d = data.arms();
    let mut counts = vec![vec![0usize; d]; assignment.folds()];
    for (i, &a) in data.treatments().iter().enumerate() {
        counts[assignment.fold(i)][a] += 1;
    }
    for (j, row) in counts.iter().enumerate() {
        for (a, &c) in row.iter().enumerate() {
            if c == 0 {
                return Err(DataError::FoldArmEmpty {
                    fold: j,
                    label: data.labels().label_of(a).to_string(),
                });
            }
        }
    }
    Ok(())
}
