//! Randomized invariant checks.
//!
//! These complement the deterministic oracle tests: instead of pinning
//! expected values, they assert structural properties that must hold for
//! *every* input — row-stochasticity of intervention matrices, exact
//! passthrough on zero-containing rows, the partition laws of the fold
//! splitter, label-map determinism, and the shrink property of the shift
//! families.

use fairshift::intervention::{interventional_propensity, PropensityMatrix};
use fairshift::model::{split_folds, Dataset, LabelMap};
use fairshift::shift::{ShiftFamily, SmoothingKernel};
use fairshift::sim::experiments::telescoping_identity;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

/// Strategy: a propensity matrix with strictly positive weights, where
/// roughly a third of the rows get one cell forced to exactly zero.
fn propensity_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..5, 2usize..5)
        .prop_flat_map(|(m, d)| {
            (
                proptest::collection::vec(0.05f64..1.0, m * d),
                proptest::collection::vec(proptest::option::weighted(0.33, 0..d), m),
                Just((m, d)),
            )
        })
        .prop_map(|(weights, zero_col, (m, d))| {
            let mut values = Array2::<f64>::zeros((m, d));
            for i in 0..m {
                for b in 0..d {
                    values[[i, b]] = weights[i * d + b];
                }
                if d > 1 {
                    if let Some(col) = zero_col[i] {
                        values[[i, col]] = 0.0;
                    }
                }
                let sum: f64 = (0..d).map(|b| values[[i, b]]).sum();
                for b in 0..d {
                    values[[i, b]] /= sum;
                }
            }
            values
        })
}

/// Strategy: any built-in family at a random strength.
fn any_family() -> impl Strategy<Value = ShiftFamily> {
    prop_oneof![
        Just(ShiftFamily::Tsm),
        Just(ShiftFamily::Identity),
        (0.0f64..=1.0).prop_map(|d| ShiftFamily::multiplicative(d).expect("delta in range")),
        (0.0f64..=1.0).prop_map(|d| ShiftFamily::exp_tilt(d).expect("delta in range")),
    ]
}

proptest! {
    /// Every intervention matrix is row-stochastic, and rows containing
    /// an exact zero are passed through bit-for-bit unchanged.
    #[test]
    fn intervention_rows_are_stochastic_with_exact_passthrough(
        values in propensity_matrix(),
        family in any_family(),
        k in 1.0f64..1000.0,
    ) {
        let (m, d) = (values.nrows(), values.ncols());
        let pi = PropensityMatrix::new(values.clone()).expect("valid matrix");
        let kernel = SmoothingKernel::new(k).expect("valid rate");
        for target in 0..d {
            let iv = interventional_propensity(&pi, &family, &kernel, target)
                .expect("construction succeeds");
            for i in 0..m {
                let q_sum: f64 = (0..d).map(|b| iv.q[[i, b]]).sum();
                let rho_sum: f64 = (0..d).map(|b| iv.rho[[i, b]]).sum();
                prop_assert!((q_sum - 1.0).abs() <= 1e-10, "q row sum {q_sum}");
                prop_assert!((rho_sum - 1.0).abs() <= 1e-10, "rho row sum {rho_sum}");
                for b in 0..d {
                    prop_assert!(
                        (-1e-12..=1.0 + 1e-12).contains(&iv.q[[i, b]]),
                        "q out of range: {}", iv.q[[i, b]]
                    );
                }
                let has_zero = (0..d).any(|b| values[[i, b]] == 0.0);
                if has_zero {
                    prop_assert_eq!(iv.trim_score[i], 0.0);
                    for b in 0..d {
                        prop_assert_eq!(
                            iv.q[[i, b]].to_bits(),
                            values[[i, b]].to_bits(),
                            "zero-containing row must pass through exactly"
                        );
                    }
                }
            }
        }
    }

    /// The product-difference expansion agrees with its telescoped form
    /// for arbitrary real sequences.
    #[test]
    fn telescoping_identity_holds_for_random_sequences(
        pairs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..8),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (lhs, rhs) = telescoping_identity(&a, &b).expect("equal lengths");
        prop_assert!(
            (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
            "lhs {lhs} vs rhs {rhs}"
        );
    }

    /// The fold splitter partitions rows with sizes differing by at most
    /// one, for any admissible (n, folds, seed).
    #[test]
    fn fold_split_is_a_balanced_partition(
        n in 4usize..400,
        folds in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(folds <= n);
        let assignment = split_folds(n, folds, seed).expect("admissible split");
        let mut counts = vec![0usize; folds];
        for &f in assignment.fold_of_row() {
            prop_assert!(f < folds);
            counts[f] += 1;
        }
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        let (lo, hi) = (
            *counts.iter().min().expect("nonempty"),
            *counts.iter().max().expect("nonempty"),
        );
        prop_assert!(hi - lo <= 1, "fold sizes {counts:?}");
    }

    /// Label recoding is a deterministic bijection: numeric order when all
    /// labels are integers, lexicographic otherwise, and `index_of` is the
    /// inverse of `label_of` either way.
    #[test]
    fn label_map_round_trips_and_orders_deterministically(
        raw in proptest::collection::btree_set("[a-z0-9]{1,3}", 2..6),
    ) {
        let distinct: Vec<String> = raw.into_iter().collect();
        // Two rows per arm satisfies the dataset's arity floor.
        let labels: Vec<String> = distinct
            .iter()
            .flat_map(|l| [l.clone(), l.clone()])
            .collect();
        let n = labels.len();
        let covariates = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let outcomes = Array1::zeros(n);
        let data = Dataset::from_labels(covariates, &labels, outcomes, None)
            .expect("valid dataset");
        let map: &LabelMap = data.labels();
        prop_assert_eq!(map.arms(), distinct.len());
        for label in &distinct {
            let idx = map.index_of(label).expect("known label");
            prop_assert_eq!(map.label_of(idx), label.as_str());
        }
        let ordered = map.labels();
        let all_numeric = ordered.iter().all(|l| l.parse::<i64>().is_ok());
        for pair in ordered.windows(2) {
            if all_numeric {
                let (x, y) = (
                    pair[0].parse::<i64>().expect("numeric"),
                    pair[1].parse::<i64>().expect("numeric"),
                );
                prop_assert!(x < y, "numeric order violated: {x} !< {y}");
            } else {
                prop_assert!(pair[0] < pair[1], "lexicographic order violated");
            }
        }
    }

    /// Built-in shrink families never move mass up: f(x) <= x on (0, 1),
    /// strictly below 1, and f is non-decreasing.
    #[test]
    fn shrink_families_stay_below_identity_and_monotone(
        delta in 0.0f64..0.999,
        x in 0.001f64..0.999,
        step in 0.0f64..0.4,
    ) {
        for family in [
            ShiftFamily::Tsm,
            ShiftFamily::multiplicative(delta).expect("delta in range"),
            ShiftFamily::exp_tilt(delta).expect("delta in range"),
        ] {
            let fx = family.f(x);
            prop_assert!(fx <= x, "{family:?}: f({x}) = {fx} > x");
            prop_assert!(fx >= 0.0);
            let x2 = (x + step).min(0.999);
            prop_assert!(
                family.f(x2) >= fx - 1e-12,
                "{family:?} not monotone between {x} and {x2}"
            );
        }
    }
}
