//! Interventional propensities: what the intervention does to treatment law.
//!
//! Given a propensity matrix `pi` (rows = subjects, columns = arms), a shift
//! family `f`, a trimming kernel `s`, and a target arm `a`, the intervened
//! assignment law blends a shifted law with the observational one:
//!
//! * `rho_a(b | x) = f(pi_b(x))` for `b != a`, and the target receives the
//!   freed mass `rho_a(a | x) = 1 - sum_{b != a} f(pi_b(x))`;
//! * the smooth trim score `S(x) = prod_b s(pi_b(x))` measures how far `x`
//!   is from any positivity violation (`S = 0` exactly iff some arm has zero
//!   propensity at `x`);
//! * `q_a(b | x) = S(x) * rho_a(b | x) + (1 - S(x)) * pi_b(x)`.
//!
//! Where every arm is reachable the intervention shifts mass toward the
//! target; where any arm is unreachable it leaves the world exactly as it
//! found it. Three structural properties make these laws fair comparators,
//! and each has a checker here: the target's propensity never decreases and
//! strictly increases somewhere (property 1), non-target arms are treated
//! identically across targets (property 2), and arms with zero propensity
//! keep zero mass (q-weak positivity).

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::shift::{ShiftError, ShiftFamily, SmoothingKernel};

/// Absolute tolerance for equality comparisons between propensities.
pub const EQUALITY_TOL: f64 = 1e-12;
/// Slack for one-sided inequality checks.
pub const INEQUALITY_SLACK: f64 = 1e-10;
/// Threshold a strict increase must clear to count.
pub const STRICT_INCREASE_MIN: f64 = 1e-10;
/// Tolerance on row sums of probability matrices.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Errors from constructing or transforming propensity matrices.
#[derive(Debug, Error)]
pub enum InterventionError {
    /// A row of a probability matrix does not sum to one.
    #[error("row {row} sums to {sum}, not 1 (tolerance {ROW_SUM_TOL})")]
    RowSum { row: usize, sum: f64 },
    /// An entry lies outside [0, 1].
    #[error("entry ({row}, {col}) = {value} lies outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    /// Matrix has no rows or no columns.
    #[error("propensity matrix must have at least one row and one column")]
    EmptyMatrix,
    /// The shift family frees more mass than exists: the target entry of
    /// `rho` would be negative. Admissible families cannot trigger this.
    #[error("shifted law gives target arm {target} negative mass {mass} at row {row}")]
    NegativeTargetMass { row: usize, target: usize, mass: f64 },
    /// Target arm index out of range.
    #[error("target arm {target} out of range for {arms} arms")]
    BadTarget { target: usize, arms: usize },
    /// Underlying shift-family failure.
    #[error(transparent)]
    Shift(#[from] ShiftError),
}

/// A validated `n x d` matrix of per-subject propensities.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityMatrix {
    values: Array2<f64>,
}

impl PropensityMatrix {
    /// Validate entries in [0, 1] (NaN rejected) and row sums within
    /// [`ROW_SUM_TOL`] of one.
    pub fn new(values: Array2<f64>) -> Result<Self, InterventionError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(InterventionError::EmptyMatrix);
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(InterventionError::OutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(InterventionError::RowSum { row: i, sum });
            }
        }
        Ok(PropensityMatrix { values })
    }

    /// Number of subjects (rows).
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of arms (columns).
    pub fn arms(&self) -> usize {
        self.values.ncols()
    }

    /// The underlying matrix.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Entry accessor.
    pub fn get(&self, row: usize, arm: usize) -> f64 {
        self.values[[row, arm]]
    }
}

/// The intervened assignment law for one target arm, with its ingredients.
#[derive(Debug, Clone)]
pub struct InterventionalPropensities {
    /// Target arm index.
    pub target: usize,
    /// `n x d` intervened propensities `q_a(b | x_i)`.
    pub q: Array2<f64>,
    /// `n x d` shifted law `rho_a(b | x_i)`.
    pub rho: Array2<f64>,
    /// Per-row smooth trim score `S(x_i)`.
    pub trim_score: Array1<f64>,
}

/// The shifted assignment law `rho_a` for every subject.
///
/// Fails with [`InterventionError::NegativeTargetMass`] when
/// `sum_{b != a} f(pi_b) > 1` beyond floating-point slack — possible only
/// for inadmissible (custom, unchecked) families.
pub fn rho(
    pi: &PropensityMatrix,
    family: &ShiftFamily,
    target: usize,
) -> Result<Array2<f64>, InterventionError> {
    let (n, d) = (pi.n(), pi.arms());
    if target >= d {
        return Err(InterventionError::BadTarget { target, arms: d });
    }
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let mut freed = 0.0;
        for b in 0..d {
            if b == target {
                continue;
            }
            let fb = family.eval(pi.get(i, b), 0)?;
            out[[i, b]] = fb;
            freed += fb;
        }
        let mass = 1.0 - freed;
        if mass < -INEQUALITY_SLACK {
            return Err(InterventionError::NegativeTargetMass {
                row: i,
                target,
                mass,
            });
        }
        out[[i, target]] = mass;
    }
    Ok(out)
}

/// Smooth trim score per row: `S_i = prod_b s(pi_b(x_i))`.
///
/// Exactly zero iff some arm's propensity is exactly zero, because
/// `s(0) = 0` exactly and the product short-circuits nothing.
pub fn smooth_trim_score(pi: &PropensityMatrix, kernel: &SmoothingKernel) -> Array1<f64> {
    let (n, d) = (pi.n(), pi.arms());
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut prod = 1.0;
        for b in 0..d {
            prod *= kernel.s(pi.get(i, b));
        }
        out[i] = prod;
    }
    out
}

/// The intervened law `q_a = S * rho_a + (1 - S) * pi` for one target.
///
/// On rows where `S = 0` (some arm unreachable) the computed `q` row equals
/// the `pi` row bit for bit, which is what makes trimming exact rather than
/// approximate.
pub fn interventional_propensity(
    pi: &PropensityMatrix,
    family: &ShiftFamily,
    kernel: &SmoothingKernel,
    target: usize,
) -> Result<InterventionalPropensities, InterventionError> {
    let rho_mat = rho(pi, family, target)?;
    let trim = smooth_trim_score(pi, kernel);
    let (n, d) = (pi.n(), pi.arms());
    let mut q = Array2::zeros((n, d));
    for i in 0..n {
        let s = trim[i];
        for b in 0..d {
            q[[i, b]] = s * rho_mat[[i, b]] + (1.0 - s) * pi.get(i, b);
        }
    }
    Ok(InterventionalPropensities {
        target,
        q,
        rho: rho_mat,
        trim_score: trim,
    })
}

/// Outcome of a structural property check.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    /// Whether the property holds.
    pub pass: bool,
    /// Magnitude of the worst violation found (0 when none).
    pub worst_violation: f64,
    /// Rows where violations occurred (deduplicated, in order).
    pub violating_rows: Vec<usize>,
    /// Human-readable summary.
    pub detail: String,
}

impl PropertyReport {
    fn pass(detail: impl Into<String>) -> Self {
        PropertyReport {
            pass: true,
            worst_violation: 0.0,
            violating_rows: Vec::new(),
            detail: detail.into(),
        }
    }
}

fn push_row(rows: &mut Vec<usize>, i: usize) {
    if rows.last() != Some(&i) {
        rows.push(i);
    }
}

/// Property 1: for each target `a`, `q_a(a|x) >= pi_a(x)` everywhere (within
/// [`INEQUALITY_SLACK`]), with a strict increase (> [`STRICT_INCREASE_MIN`])
/// on at least one row, and `q_a(b|x) <= pi_b(x)` for every other arm.
pub fn check_property_one(
    interventions: &[InterventionalPropensities],
    pi: &PropensityMatrix,
) -> PropertyReport {
    let n = pi.n();
    let d = pi.arms();
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    let mut failures = Vec::new();

    for iv in interventions {
        let a = iv.target;
        let mut strict = false;
        for i in 0..n {
            let gain = iv.q[[i, a]] - pi.get(i, a);
            if gain < -INEQUALITY_SLACK {
                worst = worst.max(-gain);
                push_row(&mut rows, i);
                failures.push(format!("target {a}: q_a(a) < pi_a at row {i} by {:.3e}", -gain));
            }
            if gain > STRICT_INCREASE_MIN {
                strict = true;
            }
            for b in 0..d {
                if b == a {
                    continue;
                }
                let excess = iv.q[[i, b]] - pi.get(i, b);
                if excess > INEQUALITY_SLACK {
                    worst = worst.max(excess);
                    push_row(&mut rows, i);
                    failures.push(format!(
                        "target {a}: q_a({b}) > pi_{b} at row {i} by {excess:.3e}"
                    ));
                }
            }
        }
        if !strict {
            failures.push(format!(
                "target {a}: no row shows a strict propensity increase (> {STRICT_INCREASE_MIN:.0e})"
            ));
        }
    }

    if failures.is_empty() {
        PropertyReport::pass(format!(
            "target propensity non-decreasing with a strict increase, others non-increasing \
             ({} targets, {n} rows)",
            interventions.len()
        ))
    } else {
        PropertyReport {
            pass: false,
            worst_violation: worst,
            violating_rows: rows,
            detail: failures.join("; "),
        }
    }
}

/// Property 2: for two targets `a != b`, the intervened propensities of
/// every arm `c` outside `{a, b}` agree within [`EQUALITY_TOL`].
pub fn check_property_two(
    iv_a: &InterventionalPropensities,
    iv_b: &InterventionalPropensities,
) -> PropertyReport {
    let (n, d) = (iv_a.q.nrows(), iv_a.q.ncols());
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for i in 0..n {
        for c in 0..d {
            if c == iv_a.target || c == iv_b.target {
                continue;
            }
            let gap = (iv_a.q[[i, c]] - iv_b.q[[i, c]]).abs();
            if gap > EQUALITY_TOL {
                worst = worst.max(gap);
                push_row(&mut rows, i);
            }
        }
    }
    if rows.is_empty() {
        PropertyReport::pass(format!(
            "non-target arms treated identically across targets {} and {}",
            iv_a.target, iv_b.target
        ))
    } else {
        PropertyReport {
            pass: false,
            worst_violation: worst,
            violating_rows: rows,
            detail: format!(
                "non-target propensities differ across targets {} and {} (worst {worst:.3e})",
                iv_a.target, iv_b.target
            ),
        }
    }
}

/// q-weak positivity: wherever `pi_b(x) = 0` exactly, `q(b|x) = 0` exactly.
pub fn check_q_weak_positivity(
    iv: &InterventionalPropensities,
    pi: &PropensityMatrix,
) -> PropertyReport {
    let (n, d) = (pi.n(), pi.arms());
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for i in 0..n {
        for b in 0..d {
            if pi.get(i, b) == 0.0 && iv.q[[i, b]] != 0.0 {
                worst = worst.max(iv.q[[i, b]].abs());
                push_row(&mut rows, i);
            }
        }
    }
    if rows.is_empty() {
        PropertyReport::pass("arms with zero propensity keep exactly zero mass")
    } else {
        PropertyReport {
            pass: false,
            worst_violation: worst,
            violating_rows: rows,
            detail: format!(
                "intervention assigns mass to unreachable arms (worst {worst:.3e}, target {})",
                iv.target
            ),
        }
    }
}
