//! Discrete data-generating processes with exactly computable functionals.
//!
//! Every ground-truth process here has finite covariate support, so the
//! target functional `psi_a = E[sum_b mu_b(X) q_a(b|X)]` is a finite sum
//! over atoms — an oracle with no Monte Carlo error. Samplers draw datasets
//! from the same atoms along with oracle nuisance matrices, which is what
//! lets the simulation experiments separate statistical error from
//! estimator bias exactly.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::estimator::EstimatorError;
use crate::intervention::{
    interventional_propensity, InterventionError, InterventionalPropensities, PropensityMatrix,
};
use crate::model::{DataError, Dataset};
use crate::nuisance::{FitError, NuisanceFits, NuisanceSource};
use crate::num::pairwise_map_sum;
use crate::rng::{seeded_rng, STREAM_SAMPLE};
use crate::shift::{ShiftFamily, SmoothingKernel};

/// Simulation-layer failures.
#[derive(Debug, Error)]
pub enum SimError {
    /// Ground-truth tables are inconsistent.
    #[error("invalid ground truth: {0}")]
    BadDgp(String),
    /// A requested sample size of zero.
    #[error("sample size must be at least 1")]
    EmptySample,
    /// Tilt point outside the support.
    #[error("tilt point (atom {atom}, arm {arm}) is not in the support")]
    OffSupport { atom: usize, arm: usize },
    /// Sequence-identity inputs of different lengths.
    #[error("sequences have lengths {a} and {b}")]
    LengthMismatch { a: usize, b: usize },
    /// Propagated dataset error.
    #[error(transparent)]
    Data(#[from] DataError),
    /// Propagated nuisance error.
    #[error(transparent)]
    Fit(#[from] FitError),
    /// Propagated estimation error.
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    /// Propagated intervention error.
    #[error(transparent)]
    Intervention(#[from] InterventionError),
}

/// A finite-support world: covariate atoms with probabilities, true
/// propensities and outcome means per atom and arm, and per-cell Gaussian
/// outcome noise.
#[derive(Debug, Clone)]
pub struct DiscreteDgp {
    /// Short name echoed into reports.
    pub tag: String,
    /// Atom probabilities (length `m`, sums to 1).
    pub atom_probs: Array1<f64>,
    /// Covariate value of each atom (`m x p`).
    pub atoms: Array2<f64>,
    /// True propensities (`m x d`, rows sum to 1; exact zeros allowed).
    pub pi: Array2<f64>,
    /// True conditional outcome means (`m x d`).
    pub mu: Array2<f64>,
    /// Outcome noise standard deviation per cell (`m x d`, zeros allowed).
    pub noise_sd: Array2<f64>,
}

/// One drawn dataset plus the atom index behind every row, so oracle or
/// corrupted nuisance matrices can be evaluated at the drawn support points.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    pub data: Dataset,
    pub atom_of_row: Vec<usize>,
}

impl DiscreteDgp {
    /// Number of support atoms.
    pub fn m(&self) -> usize {
        self.atom_probs.len()
    }

    /// Number of arms.
    pub fn d(&self) -> usize {
        self.pi.ncols()
    }

    /// Structural validation of the ground-truth tables.
    pub fn validate(&self) -> Result<(), SimError> {
        let m = self.m();
        let d = self.d();
        if m == 0 || d == 0 {
            return Err(SimError::BadDgp("empty support or no arms".into()));
        }
        if self.atoms.nrows() != m
            || self.pi.dim() != (m, d)
            || self.mu.dim() != (m, d)
            || self.noise_sd.dim() != (m, d)
        {
            return Err(SimError::BadDgp("table shapes disagree".into()));
        }
        let total: f64 = self.atom_probs.iter().sum();
        if (total - 1.0).abs() > 1e-8 || self.atom_probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(SimError::BadDgp(format!("atom probabilities sum to {total}")));
        }
        for (i, row) in self.pi.rows().into_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-8 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(SimError::BadDgp(format!("propensity row {i} sums to {s}")));
            }
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(SimError::BadDgp("non-finite outcome mean".into()));
        }
        if self.noise_sd.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(SimError::BadDgp("negative or non-finite noise".into()));
        }
        Ok(())
    }

    /// Every arm is received somewhere: each propensity column is positive
    /// on at least one atom with positive probability.
    pub fn every_arm_reachable(&self) -> bool {
        (0..self.d()).all(|b| {
            (0..self.m()).any(|i| self.atom_probs[i] > 0.0 && self.pi[[i, b]] > 0.0)
        })
    }

    /// Some atom gives every arm positive probability — the region a
    /// trimming intervention can act on is nonempty.
    pub fn has_jointly_positive_atom(&self) -> bool {
        (0..self.m()).any(|i| {
            self.atom_probs[i] > 0.0 && (0..self.d()).all(|b| self.pi[[i, b]] > 0.0)
        })
    }

    /// Atom indices where every arm has positive propensity.
    pub fn jointly_positive_atoms(&self) -> Vec<usize> {
        (0..self.m())
            .filter(|&i| (0..self.d()).all(|b| self.pi[[i, b]] > 0.0))
            .collect()
    }

    /// Mixture mean `sum_i p_i sum_b mu[i,b] * weights[i,b]`.
    ///
    /// This single summation path is shared by [`Self::true_functional`],
    /// [`Self::expected_outcome_mean`], and [`Self::known_trim_functional`]
    /// so that algebraically equal inputs produce bit-identical outputs.
    fn mixture_mean(&self, weights: &Array2<f64>) -> f64 {
        let d = self.d();
        pairwise_map_sum(self.m(), |i| {
            let mut inner = 0.0;
            for b in 0..d {
                inner += self.mu[[i, b]] * weights[[i, b]];
            }
            self.atom_probs[i] * inner
        })
    }

    /// Intervention quantities evaluated on the atom propensity table.
    pub fn intervention(
        &self,
        family: &ShiftFamily,
        kernel: &SmoothingKernel,
        target: usize,
    ) -> Result<InterventionalPropensities, SimError> {
        let pm = PropensityMatrix::new(self.pi.clone())?;
        Ok(interventional_propensity(&pm, family, kernel, target)?)
    }

    /// Exact target functional `psi_a` by atom summation (no sampling).
    pub fn true_functional(
        &self,
        family: &ShiftFamily,
        kernel: &SmoothingKernel,
        target: usize,
    ) -> Result<f64, SimError> {
        let iv = self.intervention(family, kernel, target)?;
        Ok(self.mixture_mean(&iv.q))
    }

    /// Exact observed-world mean outcome `E(Y)`.
    pub fn expected_outcome_mean(&self) -> f64 {
        self.mixture_mean(&self.pi)
    }

    /// Exact value of the known-trim estimand: target mean on the jointly
    /// positive region, observed mean elsewhere.
    pub fn known_trim_functional(&self, target: usize) -> f64 {
        let (m, d) = (self.m(), self.d());
        let mut weights = Array2::<f64>::zeros((m, d));
        for i in 0..m {
            let jointly_positive = (0..d).all(|b| self.pi[[i, b]] > 0.0);
            for b in 0..d {
                weights[[i, b]] = if jointly_positive {
                    f64::from(b == target)
                } else {
                    self.pi[[i, b]]
                };
            }
        }
        self.mixture_mean(&weights)
    }

    /// Standardized-ratio style summary `E[mu_a(X) | A = a]` — the indirect
    /// comparator that aggregates each arm over its *own* covariate mix.
    /// Used as the Simpson's-paradox foil, never as an estimand.
    pub fn self_selected_mean(&self, arm: usize) -> f64 {
        let num = pairwise_map_sum(self.m(), |i| {
            self.atom_probs[i] * self.pi[[i, arm]] * self.mu[[i, arm]]
        });
        let den = pairwise_map_sum(self.m(), |i| self.atom_probs[i] * self.pi[[i, arm]]);
        num / den
    }

    /// Draw `n` subjects using the supplied generator state.
    pub fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<SampleDraw, SimError> {
        if n == 0 {
            return Err(SimError::EmptySample);
        }
        self.validate()?;
        let (m, d, p) = (self.m(), self.d(), self.atoms.ncols());
        let mut cov = Array2::<f64>::zeros((n, p));
        let mut labels = Vec::with_capacity(n);
        let mut y = Array1::<f64>::zeros(n);
        let mut atom_of_row = Vec::with_capacity(n);
        let pick = |cdf_target: f64, weights: &dyn Fn(usize) -> f64, len: usize| -> usize {
            let mut acc = 0.0;
            for idx in 0..len {
                acc += weights(idx);
                if cdf_target < acc {
                    return idx;
                }
            }
            len - 1
        };
        for i in 0..n {
            let u: f64 = rng.random();
            let atom = pick(u, &|idx| self.atom_probs[idx], m);
            let v: f64 = rng.random();
            let arm = pick(v, &|idx| self.pi[[atom, idx]], d);
            let noise: f64 = StandardNormal.sample(rng);
            for j in 0..p {
                cov[[i, j]] = self.atoms[[atom, j]];
            }
            labels.push(arm as i64 + 1);
            y[i] = self.mu[[atom, arm]] + self.noise_sd[[atom, arm]] * noise;
            atom_of_row.push(atom);
        }
        let declared: Vec<i64> = (1..=d as i64).collect();
        let data = Dataset::from_numeric(cov, &labels, y, Some(&declared))?;
        Ok(SampleDraw { data, atom_of_row })
    }

    /// Draw `n` subjects from a fixed seed (dedicated sampling stream).
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleDraw, SimError> {
        let mut rng = seeded_rng(seed, STREAM_SAMPLE);
        self.sample_with(n, &mut rng)
    }

    /// Per-row nuisance matrices looked up from atom-level tables.
    pub fn fits_from_atoms(
        &self,
        draw: &SampleDraw,
        pi_atoms: &Array2<f64>,
        mu_atoms: &Array2<f64>,
        floor: f64,
    ) -> Result<NuisanceFits, SimError> {
        let n = draw.data.n();
        let d = self.d();
        if pi_atoms.dim() != (self.m(), d) || mu_atoms.dim() != (self.m(), d) {
            return Err(SimError::BadDgp("atom table shapes disagree".into()));
        }
        let mut pi_hat = Array2::<f64>::zeros((n, d));
        let mut mu_hat = Array2::<f64>::zeros((n, d));
        for (i, &atom) in draw.atom_of_row.iter().enumerate() {
            for b in 0..d {
                pi_hat[[i, b]] = pi_atoms[[atom, b]];
                mu_hat[[i, b]] = mu_atoms[[atom, b]];
            }
        }
        Ok(NuisanceFits::from_oracle(pi_hat, mu_hat, floor)?)
    }

    /// True nuisance values at every drawn row.
    pub fn oracle_fits(&self, draw: &SampleDraw, floor: f64) -> Result<NuisanceFits, SimError> {
        self.fits_from_atoms(draw, &self.pi, &self.mu, floor)
    }

    /// Corrupted nuisance values at every drawn row, tagged with the rate.
    pub fn corrupted_fits(
        &self,
        draw: &SampleDraw,
        pi_atoms: &Array2<f64>,
        mu_atoms: &Array2<f64>,
        epsilon: f64,
        floor: f64,
    ) -> Result<NuisanceFits, SimError> {
        let mut fits = self.fits_from_atoms(draw, pi_atoms, mu_atoms, floor)?;
        fits.source = NuisanceSource::Corrupted { epsilon };
        Ok(fits)
    }

    /// One-parameter submodel mixing a point mass into the world:
    /// `P_t = (1 - t) P + t * delta_{z0}` with `z0 = (atoms[atom], arm, y0)`.
    ///
    /// The mixture stays inside the discrete family: only the atom's
    /// probability, its propensity row, and the one conditional mean move.
    /// Requires `z0` in the support (positive atom probability and positive
    /// propensity for the tilted arm) and small `|t|`.
    pub fn tilt(&self, atom: usize, arm: usize, y0: f64, t: f64) -> Result<DiscreteDgp, SimError> {
        if atom >= self.m()
            || arm >= self.d()
            || self.atom_probs[atom] <= 0.0
            || self.pi[[atom, arm]] <= 0.0
        {
            return Err(SimError::OffSupport { atom, arm });
        }
        let mut out = self.clone();
        out.tag = format!("{}-tilt", self.tag);
        let p0 = self.atom_probs[atom];
        let w = (1.0 - t) * p0 + t;
        for i in 0..self.m() {
            out.atom_probs[i] = (1.0 - t) * self.atom_probs[i];
        }
        out.atom_probs[atom] = w;
        for b in 0..self.d() {
            let mass = (1.0 - t) * p0 * self.pi[[atom, b]] + t * f64::from(b == arm);
            out.pi[[atom, b]] = mass / w;
        }
        let cell = (1.0 - t) * p0 * self.pi[[atom, arm]];
        out.mu[[atom, arm]] = (cell * self.mu[[atom, arm]] + t * y0) / (cell + t);
        Ok(out)
    }
}

/// Strictly positive three-arm world (all propensities at least 0.2) with a
/// narrow outcome-mean spread; the workhorse for rate and coverage runs.
pub fn strict_overlap() -> DiscreteDgp {
    DiscreteDgp {
        tag: "strict-overlap".into(),
        atom_probs: ndarray::array![0.3, 0.4, 0.3],
        atoms: ndarray::array![[-1.0, 0.5], [0.0, -0.5], [1.0, 0.25]],
        pi: ndarray::array![[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]],
        mu: ndarray::array![[1.9, 2.1, 2.0], [2.2, 1.8, 2.05], [2.0, 2.15, 1.85]],
        noise_sd: Array2::from_elem((3, 3), 0.1),
    }
}

/// Mixed world: two jointly positive atoms and two atoms with exact zeros,
/// so trimming is active on part of the support.
pub fn intermediate() -> DiscreteDgp {
    DiscreteDgp {
        tag: "intermediate".into(),
        atom_probs: ndarray::array![0.35, 0.25, 0.2, 0.2],
        atoms: ndarray::array![[-1.0, 1.0], [0.0, 0.5], [1.0, -0.5], [2.0, 0.0]],
        pi: ndarray::array![
            [0.4, 0.35, 0.25],
            [0.3, 0.3, 0.4],
            [0.0, 0.6, 0.4],
            [0.5, 0.5, 0.0]
        ],
        mu: ndarray::array![
            [1.0, 2.0, 1.5],
            [2.5, 0.5, 1.0],
            [3.0, 1.0, 2.0],
            [0.5, 1.5, 2.5]
        ],
        noise_sd: Array2::from_elem((4, 3), 0.3),
    }
}

/// Mixed-positivity world tuned for rate measurements on the known-trim
/// estimator: two jointly positive atoms, two atoms with exact zeros, a
/// narrow outcome-mean spread, and low noise so the estimator's Monte Carlo
/// variance stays far below the corruption-induced bias being measured.
pub fn trim_rate() -> DiscreteDgp {
    DiscreteDgp {
        tag: "trim-rate".into(),
        atom_probs: ndarray::array![0.35, 0.25, 0.2, 0.2],
        atoms: ndarray::array![[-1.0, 0.5], [0.0, -0.5], [1.0, 0.0], [2.0, 0.5]],
        pi: ndarray::array![
            [0.5, 0.3, 0.2],
            [0.3, 0.4, 0.3],
            [0.0, 0.6, 0.4],
            [0.6, 0.4, 0.0]
        ],
        mu: ndarray::array![
            [2.1, 1.9, 2.0],
            [1.8, 2.2, 2.0],
            [2.05, 1.95, 2.0],
            [2.2, 2.0, 1.8]
        ],
        noise_sd: Array2::from_elem((4, 3), 0.1),
    }
}

/// Every atom violates joint positivity (each has one zero), yet every arm
/// is received somewhere: no atom admits a fair intervention.
pub fn no_fair_atom() -> DiscreteDgp {
    DiscreteDgp {
        tag: "no-fair-atom".into(),
        atom_probs: ndarray::array![0.4, 0.3, 0.3],
        atoms: ndarray::array![[-1.0, 0.0], [0.0, 1.0], [1.0, -1.0]],
        pi: ndarray::array![[0.0, 0.6, 0.4], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]],
        mu: ndarray::array![[1.0, 2.0, 3.0], [0.5, 1.5, 2.5], [2.0, 1.0, 0.0]],
        noise_sd: Array2::from_elem((3, 3), 0.2),
    }
}

/// Two-atom world where arm 1 beats arm 2 pointwise, yet each arm
/// concentrates where its own outcomes are worst/best so the self-selected
/// averages reverse the ordering — the indirect-standardization paradox.
pub fn simpson_two_atom() -> DiscreteDgp {
    DiscreteDgp {
        tag: "simpson-two-atom".into(),
        atom_probs: ndarray::array![0.5, 0.5],
        atoms: ndarray::array![[0.0, 0.0], [1.0, 1.0]],
        pi: ndarray::array![[0.1, 0.9], [0.9, 0.1]],
        mu: ndarray::array![[0.9, 0.85], [0.1, 0.05]],
        noise_sd: Array2::from_elem((2, 2), 0.1),
    }
}

/// Two arms with identical conditional means everywhere: any admissible
/// intervention gives both arms the same functional, and their contrast is
/// exactly zero.
pub fn exchangeable_pair() -> DiscreteDgp {
    DiscreteDgp {
        tag: "exchangeable-pair".into(),
        atom_probs: ndarray::array![0.5, 0.5],
        atoms: ndarray::array![[0.0, 1.0], [1.0, 0.0]],
        pi: ndarray::array![[0.3, 0.7], [0.7, 0.3]],
        mu: ndarray::array![[1.0, 1.0], [-0.5, -0.5]],
        noise_sd: Array2::from_elem((2, 2), 0.3),
    }
}

/// Degenerate world: the outcome is the constant `c` with no noise.
///
/// A single atom with exactly representable halved propensities, so every
/// influence value lands on the same bits regardless of the received arm
/// when `c` is itself a dyadic rational — the empirical variance is then
/// exactly zero, which is what the degenerate-variance flag keys on.
pub fn constant_outcome(c: f64) -> DiscreteDgp {
    DiscreteDgp {
        tag: "constant-outcome".into(),
        atom_probs: ndarray::array![1.0],
        atoms: ndarray::array![[0.0]],
        pi: ndarray::array![[0.5, 0.5]],
        mu: Array2::from_elem((1, 2), c),
        noise_sd: Array2::zeros((1, 2)),
    }
}

/// Small two-atom, two-arm world used by enumeration unit checks.
pub fn two_atom_basic() -> DiscreteDgp {
    DiscreteDgp {
        tag: "two-atom-basic".into(),
        atom_probs: ndarray::array![0.4, 0.6],
        atoms: ndarray::array![[0.0, 1.0], [1.0, 0.0]],
        pi: ndarray::array![[0.3, 0.7], [0.8, 0.2]],
        mu: ndarray::array![[1.0, 2.0], [-0.5, 3.0]],
        noise_sd: Array2::from_elem((2, 2), 0.5),
    }
}

/// Ten-arm, eight-atom world with scattered exact zeros; the source of the
/// shipped synthetic dataset and the wide-arity stress checks.
pub fn ten_arm() -> DiscreteDgp {
    let m = 8;
    let d = 10;
    let weights = [3.0, 2.0, 2.0, 1.0, 1.0, 2.0, 3.0, 2.0];
    let total: f64 = weights.iter().sum();
    let atom_probs = Array1::from_iter(weights.iter().map(|w| w / total));
    let atoms = Array2::from_shape_fn((m, 2), |(i, j)| {
        if j == 0 {
            i as f64 - 3.5
        } else {
            ((i * i) % 5) as f64 * 0.5 - 1.0
        }
    });
    // Zeros only on odd atoms; every arm keeps positive mass on the even
    // atoms, so all arms stay reachable and the jointly positive region is
    // nonempty.
    let zero_cells: &[(usize, usize)] = &[(1, 2), (3, 0), (3, 7), (5, 4), (5, 0), (7, 9)];
    let mut pi = Array2::<f64>::zeros((m, d));
    for i in 0..m {
        let mut sum = 0.0;
        for b in 0..d {
            let raw = if zero_cells.contains(&(i, b)) {
                0.0
            } else {
                1.0 + ((i * 7 + b * 3) % 11) as f64
            };
            pi[[i, b]] = raw;
            sum += raw;
        }
        for b in 0..d {
            pi[[i, b]] /= sum;
        }
    }
    let mu = Array2::from_shape_fn((m, d), |(i, b)| ((i * 5 + b * 2) % 7) as f64 * 0.5 - 1.0);
    DiscreteDgp {
        tag: "ten-arm".into(),
        atom_probs,
        atoms,
        pi,
        mu,
        noise_sd: Array2::from_elem((m, d), 0.5),
    }
}

/// The battery of worlds the influence-function checks enumerate over.
pub fn enumeration_battery() -> Vec<DiscreteDgp> {
    vec![
        two_atom_basic(),
        strict_overlap(),
        intermediate(),
        no_fair_atom(),
        ten_arm(),
    ]
}
