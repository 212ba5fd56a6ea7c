//! Orchestration: one analysis run or one experiment run, end to end.
//!
//! Analysis fits the nuisances once and reuses them for every requested
//! family — the propensity and outcome models do not depend on the shift
//! being evaluated, so per-family work is estimation only.

use std::path::Path;
use std::time::Instant;

use fairshift::estimator::{self, EstimateSet};
use fairshift::model::EstimationConfig;
use fairshift::nuisance::crossfit_nuisances;
use fairshift::num::mean;
use fairshift::shift::ShiftFamily;
use fairshift::sim::experiments::{
    run_coverage_experiment, run_dr_rate_experiment, run_fairness_criterion_check,
    run_identity_suite, run_pathwise_battery, CoverageConfig, RateConfig, SimulationReport,
};
use serde::Serialize;

use crate::ingest::{load_dataset, AnalysisRequest};
use crate::report::{
    atomic_write, family_file_stem, render_analysis_text, render_family_csv, render_table,
    sig6, to_json_bytes, AnalysisReport, ContrastRow, DiagnosticsBlock, EffectiveConfig,
    EstimateRow, FamilySection, SCHEMA_VERSION,
};
use crate::CliError;

/// Seed used by experiments whose only knob is the seed.
pub const DEFAULT_EXPERIMENT_SEED: u64 = 20_240_817;

/// Run a full analysis and write its reports into `out`.
pub fn run_analysis(req: &AnalysisRequest, out: &Path) -> Result<AnalysisReport, CliError> {
    let started = Instant::now();
    let data = load_dataset(req)?;
    let labels: Vec<String> = data.labels().labels().to_vec();

    let benchmark = match &req.benchmark {
        Some(label) => {
            if data.labels().index_of(label).is_none() {
                return Err(CliError::Schema(format!(
                    "benchmark '{label}' is not a treatment label; the data has: {}",
                    labels.join(", ")
                )));
            }
            label.clone()
        }
        None => labels[0].clone(),
    };

    // The family slot is swapped per estimation pass below; nuisance
    // fitting reads only the fold, seed, and model knobs.
    let mut config = EstimationConfig::new(ShiftFamily::Tsm, req.seed);
    config.smoothing_k = req.smoothing_k;
    config.folds = req.folds;
    let fits = crossfit_nuisances(&data, &config).map_err(|e| CliError::Run(e.to_string()))?;
    let diagnostics = DiagnosticsBlock {
        zero_propensity_cells: fits.diagnostics.zero_cells,
        sub_floor_cells: fits.diagnostics.sub_floor_cells,
        min_pi_hat: fits.diagnostics.min_pi_hat,
        note: None,
    };

    let mut families = Vec::with_capacity(req.families.len());
    for spec in &req.families {
        let mut cfg = config.clone();
        cfg.family = spec.resolve()?;
        let zero_curvature = cfg.family.zero_curvature();
        let est = estimator::one_step(&data, &fits, &cfg)
            .map_err(|e| CliError::Run(format!("family {}: {e}", spec.label())))?;
        let mut section = family_section(spec, &est, &benchmark, &labels, &diagnostics)?;
        if zero_curvature {
            section.diagnostics.note = Some(
                "shift function has zero second derivative; second-order remainder bounds \
                 are boundary cases"
                    .into(),
            );
        }
        families.push(section);
    }

    let observed_mean = mean(
        data.outcomes()
            .as_slice()
            .expect("outcome column is contiguous"),
    );
    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        config: EffectiveConfig {
            input: req.input.display().to_string(),
            treatment: req.treatment.clone(),
            outcome: req.outcome.clone(),
            covariates: req.covariates.clone(),
            families: req.families.clone(),
            smoothing_k: req.smoothing_k,
            folds: req.folds,
            seed: req.seed,
            ci_level: config.ci_level,
            propensity_floor: config.propensity_floor,
            benchmark: benchmark.clone(),
        },
        label_map: labels,
        observed_mean,
        families,
        runtime_ms: started.elapsed().as_millis() as u64,
    };

    atomic_write(out, "report.json", &to_json_bytes(&report)?)?;
    atomic_write(out, "report.txt", render_analysis_text(&report).as_bytes())?;
    // Repeated families (same tag and strength) get numbered stems so no
    // CSV silently overwrites another.
    let mut used: std::collections::BTreeMap<String, usize> = std::collections::BTreeMap::new();
    for section in &report.families {
        let stem = family_file_stem(section);
        let count = used.entry(stem.clone()).or_insert(0);
        *count += 1;
        let name = if *count == 1 {
            format!("{stem}.csv")
        } else {
            format!("{stem}_{count}.csv")
        };
        atomic_write(out, &name, render_family_csv(section).as_bytes())?;
    }
    Ok(report)
}

fn family_section(
    spec: &crate::ingest::FamilySpec,
    est: &EstimateSet,
    benchmark: &str,
    labels: &[String],
    diagnostics: &DiagnosticsBlock,
) -> Result<FamilySection, CliError> {
    let estimates = labels
        .iter()
        .enumerate()
        .map(|(a, label)| EstimateRow {
            label: label.clone(),
            psi: est.psi_hat[a],
            se: est.se[a],
            ci_lo: est.ci[a].0,
            ci_hi: est.ci[a].1,
        })
        .collect();
    let mut contrasts = Vec::with_capacity(labels.len().saturating_sub(1));
    for label in labels {
        if label == benchmark {
            continue;
        }
        let c = estimator::contrast(est, label, benchmark)
            .map_err(|e| CliError::Run(format!("contrast {label} vs {benchmark}: {e}")))?;
        contrasts.push(ContrastRow {
            label: label.clone(),
            benchmark: benchmark.to_string(),
            estimate: c.estimate,
            se: c.se,
            ci_lo: c.ci.0,
            ci_hi: c.ci.1,
        });
    }
    let delta = match spec.tag.as_str() {
        "multiplicative" | "exp_tilt" => spec.delta,
        _ => None,
    };
    Ok(FamilySection {
        tag: spec.tag.clone(),
        delta,
        estimates,
        contrasts,
        diagnostics: diagnostics.clone(),
    })
}

/// Knobs accepted by `experiment`; which ones apply depends on the name.
#[derive(Debug, Clone, Default)]
pub struct ExperimentArgs {
    pub n: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
}

/// Run a named experiment, write its reports into `out`, and return
/// whether every gated check passed.
pub fn run_experiment(name: &str, args: &ExperimentArgs, out: &Path) -> Result<bool, CliError> {
    if let Some(reps) = args.reps {
        if reps == 0 {
            return Err(CliError::Usage("--reps must be at least 1".into()));
        }
    }
    let seed = args.seed.unwrap_or(DEFAULT_EXPERIMENT_SEED);
    let sim_err = |e: fairshift::sim::SimError| CliError::Run(e.to_string());
    match name {
        "fairness" => finish(&run_fairness_criterion_check(seed).map_err(sim_err)?, out),
        "pathwise" => finish(&run_pathwise_battery(seed).map_err(sim_err)?, out),
        "identity-suite" => finish(&run_identity_suite(seed).map_err(sim_err)?, out),
        "dr-rate" => {
            let mut cfg = RateConfig::default();
            if let Some(grid) = &args.n {
                if grid.is_empty() {
                    return Err(CliError::Usage("--n needs at least one sample size".into()));
                }
                cfg.n_grid = grid.clone();
            }
            if let Some(reps) = args.reps {
                cfg.reps = reps;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            finish(&run_dr_rate_experiment(&cfg).map_err(sim_err)?, out)
        }
        "coverage" => {
            let mut cfg = CoverageConfig::default();
            if let Some(grid) = &args.n {
                match grid.as_slice() {
                    [n] => cfg.n = *n,
                    _ => {
                        return Err(CliError::Usage(
                            "coverage takes a single --n, not a grid".into(),
                        ))
                    }
                }
            }
            if let Some(reps) = args.reps {
                cfg.reps = reps;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            finish(&run_coverage_experiment(&cfg).map_err(sim_err)?, out)
        }
        other => Err(CliError::Usage(format!(
            "unknown experiment '{other}' (expected fairness, pathwise, dr-rate, coverage, \
             or identity-suite)"
        ))),
    }
}

fn finish<T: Serialize>(report: &SimulationReport<T>, out: &Path) -> Result<bool, CliError> {
    atomic_write(out, "report.json", &to_json_bytes(report)?)?;
    atomic_write(out, "report.txt", render_experiment_text(report).as_bytes())?;
    Ok(report.pass)
}

/// Plain-text rendering of an experiment report: header lines plus one
/// aligned row per check.
pub fn render_experiment_text<T>(report: &SimulationReport<T>) -> String {
    let mut out = String::new();
    out.push_str(&format!("experiment '{}'\n", report.tag));
    out.push_str(&format!("mode:   {}\n", report.mode));
    out.push_str(&format!("seed:   {}\n", report.seed));
    out.push_str(&format!("rng:    {}\n", report.rng_algorithm));
    out.push_str(&format!(
        "result: {}\n\n",
        if report.pass { "PASS" } else { "FAIL" }
    ));
    let rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                if c.gated { "gate" } else { "info" }.to_string(),
                if c.passed { "pass" } else { "FAIL" }.to_string(),
                sig6(c.observed),
                c.criterion.clone(),
            ]
        })
        .collect();
    out.push_str(&render_table(
        &["check", "kind", "status", "observed", "criterion"],
        &rows,
    ));
    out
}
