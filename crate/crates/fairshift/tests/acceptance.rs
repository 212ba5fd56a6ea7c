//! Acceptance gate for the estimation library.
//!
//! One test per criterion; each prints a single `ACCEPTANCE <id> ...:
//! PASS/FAIL` line with its runtime against the pinned budget. Tolerances
//! live here, in code, so the gate cannot drift silently.

use std::time::Instant;

use fairshift::num::mean;
use fairshift::shift::{ShiftFamily, SmoothingKernel};
use fairshift::sim::dgp;
use fairshift::sim::experiments::{
    expected_one_step, run_construction_sweep, run_coverage_experiment, run_dr_rate_experiment,
    run_fairness_criterion_check, run_necessity_check, run_pathwise_battery,
    run_telescoping_battery, CoverageConfig, RateConfig,
};

const SEED: u64 = 20_240_817;

/// Print the criterion line and fail the test on a miss so `cargo test`
/// reflects the gate.
fn conclude(id: u32, name: &str, pass: bool, detail: &str, started: Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    let in_budget = elapsed <= budget_s;
    let status = if pass && in_budget { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {id} {name}: {status} ({detail}; {elapsed:.2}s of {budget_s:.0}s budget)");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
    assert!(
        in_budget,
        "criterion {id} ({name}) exceeded its {budget_s:.0}s budget: {elapsed:.2}s"
    );
}

#[test]
fn criterion_1_construction_invariants() {
    let started = Instant::now();
    let report = run_construction_sweep(SEED, 100).expect("sweep runs");
    let detail = format!(
        "{} matrices x {} family/rate configurations, max row-sum error {:.2e}",
        report.summary.matrices_checked, report.summary.configurations, report.summary.max_row_sum_error
    );
    conclude(1, "construction-invariants", report.pass, &detail, started, 5.0);
}

#[test]
fn criterion_2_product_difference_identity() {
    let started = Instant::now();
    let report = run_telescoping_battery(SEED, 1000).expect("battery runs");
    let detail = format!(
        "{} random sequences, max |lhs - rhs| = {:.2e}",
        report.summary.sequences_checked, report.summary.max_abs_error
    );
    conclude(2, "product-difference-identity", report.pass, &detail, started, 1.0);
}

#[test]
fn criterion_3_influence_function_checks() {
    let started = Instant::now();

    // Part 1: the enumerated mean of the influence function equals the
    // functional exactly (within accumulation noise) on every world, for a
    // spread of families, at every target.
    let kernel = SmoothingKernel::new(100.0).expect("valid rate");
    let families = [
        ShiftFamily::Tsm,
        ShiftFamily::multiplicative(0.5).expect("valid delta"),
        ShiftFamily::multiplicative(0.9).expect("valid delta"),
        ShiftFamily::exp_tilt(0.5).expect("valid delta"),
        ShiftFamily::exp_tilt(0.9).expect("valid delta"),
    ];
    let worlds = dgp::enumeration_battery();
    assert!(worlds.len() >= 5, "need at least five worlds");
    let mut worst_mean_gap = 0.0f64;
    let mut mean_ok = true;
    for world in &worlds {
        for family in &families {
            for target in 0..world.d() {
                let truth = world
                    .true_functional(family, &kernel, target)
                    .expect("functional");
                let enumerated =
                    expected_one_step(world, &world.pi, &world.mu, family, &kernel, target)
                        .expect("enumeration");
                let gap = (enumerated - truth).abs();
                worst_mean_gap = worst_mean_gap.max(gap);
                mean_ok &= gap <= 1e-10;
            }
        }
    }

    // Part 2: pathwise derivative agreement at every support point.
    let pathwise = run_pathwise_battery(SEED).expect("battery runs");

    let pass = mean_ok && pathwise.pass;
    let detail = format!(
        "{} worlds: enumerated-mean gap {:.2e} (tol 1e-10), pathwise max rel err {:.2e} (tol 1e-3) over {} points",
        worlds.len(),
        worst_mean_gap,
        pathwise.summary.max_rel_err,
        pathwise.summary.records.len()
    );
    conclude(3, "influence-function-checks", pass, &detail, started, 30.0);
}

#[test]
fn criterion_4_double_robust_rates() {
    let started = Instant::now();
    let cfg = RateConfig::default();
    let report = run_dr_rate_experiment(&cfg).expect("experiment runs");
    let corrupt = report
        .summary
        .arms
        .iter()
        .find(|a| a.name == "corrupt-half")
        .expect("gated arm present");
    let detail = format!(
        "one-step slope {:.3} (gate <= -0.85), plug-in slope {:.3} (gate [-0.55, -0.15]), {} gated checks",
        corrupt.one_step_slope.unwrap_or(f64::NAN),
        corrupt.plugin_slope.unwrap_or(f64::NAN),
        report.checks.iter().filter(|c| c.gated).count()
    );
    conclude(4, "double-robust-rates", report.pass, &detail, started, 600.0);
}

#[test]
fn criterion_5_interval_coverage() {
    let started = Instant::now();
    let cfg = CoverageConfig::default();
    let report = run_coverage_experiment(&cfg).expect("experiment runs");
    let covs: Vec<f64> = report.summary.per_target.iter().map(|r| r.coverage).collect();
    let detail = format!(
        "coverage per arm {:?} (band [0.93, 0.97]), contrast coverage {:.3}, mean |skew| {:.3}",
        covs,
        report.summary.contrast_coverage,
        mean(
            &report
                .summary
                .per_target
                .iter()
                .map(|r| r.studentized_skew.abs())
                .collect::<Vec<_>>()
        )
    );
    conclude(5, "interval-coverage", report.pass, &detail, started, 300.0);
}

#[test]
fn criterion_6_fairness_orderings() {
    let started = Instant::now();
    let report = run_fairness_criterion_check(SEED).expect("sweep runs");
    let n_cases = report.summary.cases.len();
    let detail = format!(
        "{n_cases} family/case/adversary records, foil self-selected means {:.3} vs {:.3}",
        report.summary.foil_self_selected.0, report.summary.foil_self_selected.1
    );
    conclude(6, "fairness-orderings", report.pass, &detail, started, 10.0);
}

#[test]
fn criterion_7_necessity_signature() {
    let started = Instant::now();
    let report = run_necessity_check(SEED).expect("check runs");
    let detail = format!(
        "{} families, max |psi - E(Y)| = {:.1e} (must be exactly 0)",
        report.summary.families_checked, report.summary.max_abs_deviation
    );
    conclude(7, "necessity-signature", report.pass, &detail, started, 1.0);
}
