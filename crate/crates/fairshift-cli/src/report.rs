//! Report rendering and atomic output.
//!
//! Every run produces one JSON report (full float precision, versioned
//! schema) plus an aligned plain-text table rounded to six significant
//! digits. Analysis runs additionally emit one CSV per family with the
//! estimate and interval columns, ready for plotting. All files are
//! written to a temporary name in the target directory and renamed into
//! place, so readers never observe a half-written report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ingest::FamilySpec;
use crate::CliError;

/// Version tag embedded in every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

/// The effective configuration echoed into an analysis report after
/// flag / config-file / default precedence has been applied.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub input: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub families: Vec<FamilySpec>,
    pub smoothing_k: f64,
    pub folds: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub propensity_floor: f64,
    pub benchmark: String,
}

/// One arm's estimate row.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub label: String,
    pub psi: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// One row of the contrast table: an arm minus the benchmark arm.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastRow {
    pub label: String,
    pub benchmark: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Estimated-propensity health counters for the shared nuisance fit.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsBlock {
    pub zero_propensity_cells: usize,
    pub sub_floor_cells: usize,
    pub min_pi_hat: f64,
    /// Set for families whose shift function has zero second derivative:
    /// the second-order remainder bounds are boundary cases there, though
    /// the estimates themselves are unaffected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Results for one shift family.
#[derive(Debug, Clone, Serialize)]
pub struct FamilySection {
    pub tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub estimates: Vec<EstimateRow>,
    pub contrasts: Vec<ContrastRow>,
    pub diagnostics: DiagnosticsBlock,
}

/// The complete analysis report.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub config: EffectiveConfig,
    /// Treatment labels in internal order; estimates follow this order.
    pub label_map: Vec<String>,
    /// Sample mean of the outcome column: the no-intervention reference.
    pub observed_mean: f64,
    pub families: Vec<FamilySection>,
    pub runtime_ms: u64,
}

/// Format with six significant digits, plain notation where readable.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-3..6).contains(&exponent) {
        let decimals = (5 - exponent).max(0) as usize;
        format!("{:.*}", decimals, x)
    } else {
        format!("{:.5e}", x)
    }
}

/// Render rows into an aligned table: first column left-aligned, the
/// rest right-aligned under their headers.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut emit = |cells: Vec<&str>| {
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            if c == 0 {
                out.push_str(&format!("{:<width$}", cell, width = widths[c]));
            } else {
                out.push_str(&format!("{:>width$}", cell, width = widths[c]));
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    emit(headers.to_vec());
    for row in rows {
        debug_assert_eq!(row.len(), cols);
        emit(row.iter().map(String::as_str).collect());
    }
    out
}

/// Plain-text rendering of an analysis report.
pub fn render_analysis_text(report: &AnalysisReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    out.push_str(&format!(
        "interventional mean report (schema v{})\n",
        report.schema_version
    ));
    out.push_str(&format!("input:         {}\n", cfg.input));
    out.push_str(&format!(
        "columns:       treatment='{}'  outcome='{}'  covariates={}\n",
        cfg.treatment,
        cfg.outcome,
        cfg.covariates.join(",")
    ));
    out.push_str(&format!(
        "config:        folds={}  seed={}  k={}  ci={}  floor={}\n",
        cfg.folds,
        cfg.seed,
        sig6(cfg.smoothing_k),
        sig6(cfg.ci_level),
        sig6(cfg.propensity_floor)
    ));
    out.push_str(&format!("benchmark arm: '{}'\n", cfg.benchmark));
    out.push_str(&format!("label map:     {}\n", report.label_map.join(" ")));
    out.push_str(&format!(
        "observed outcome mean (no intervention): {}\n",
        sig6(report.observed_mean)
    ));

    for family in &report.families {
        let title = match family.delta {
            Some(d) => format!("{}(delta={})", family.tag, d),
            None => family.tag.clone(),
        };
        out.push_str(&format!("\nfamily {title}\n"));
        out.push_str(&"-".repeat(7 + title.len()));
        out.push('\n');

        let est_rows: Vec<Vec<String>> = family
            .estimates
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    sig6(r.psi),
                    sig6(r.se),
                    sig6(r.ci_lo),
                    sig6(r.ci_hi),
                ]
            })
            .collect();
        out.push_str(&render_table(
            &["arm", "estimate", "std.err", "ci.lo", "ci.hi"],
            &est_rows,
        ));

        if !family.contrasts.is_empty() {
            out.push_str(&format!(
                "contrasts vs benchmark '{}':\n",
                family.contrasts[0].benchmark
            ));
            let con_rows: Vec<Vec<String>> = family
                .contrasts
                .iter()
                .map(|r| {
                    vec![
                        r.label.clone(),
                        sig6(r.estimate),
                        sig6(r.se),
                        sig6(r.ci_lo),
                        sig6(r.ci_hi),
                    ]
                })
                .collect();
            out.push_str(&render_table(
                &["arm", "difference", "std.err", "ci.lo", "ci.hi"],
                &con_rows,
            ));
        }
        out.push_str(&format!(
            "diagnostics: zero propensity cells={}  sub-floor cells={}  min pi-hat={}\n",
            family.diagnostics.zero_propensity_cells,
            family.diagnostics.sub_floor_cells,
            sig6(family.diagnostics.min_pi_hat)
        ));
        if let Some(note) = &family.diagnostics.note {
            out.push_str(&format!("note: {note}\n"));
        }
    }
    out.push_str(&format!("\nruntime: {} ms\n", report.runtime_ms));
    out
}

/// CSV of one family's estimate table (the plotting payload).
pub fn render_family_csv(section: &FamilySection) -> String {
    let mut out = String::from("label,psi,se,ci_lo,ci_hi\n");
    for r in &section.estimates {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label, r.psi, r.se, r.ci_lo, r.ci_hi
        ));
    }
    out
}

/// File stem for a family's CSV, e.g. `family_multiplicative_0.5`.
pub fn family_file_stem(section: &FamilySection) -> String {
    match section.delta {
        Some(d) => format!("family_{}_{}", section.tag, d),
        None => format!("family_{}", section.tag),
    }
}

/// Write `content` at `dir/name`, atomically: the bytes land under a
/// temporary name first and are renamed into place.
pub fn atomic_write(dir: &Path, name: &str, content: &[u8]) -> Result<PathBuf, CliError> {
    let io_err = |what: &str, e: std::io::Error| CliError::Run(format!("{what}: {e}"));
    fs::create_dir_all(dir)
        .map_err(|e| io_err(&format!("cannot create output directory {}", dir.display()), e))?;
    let final_path = dir.join(name);
    let tmp_path = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp_path, content)
        .map_err(|e| io_err(&format!("cannot write {}", tmp_path.display()), e))?;
    fs::rename(&tmp_path, &final_path)
        .map_err(|e| io_err(&format!("cannot move report into {}", final_path.display()), e))?;
    Ok(final_path)
}

/// Serialize any report to pretty JSON bytes with a trailing newline.
pub fn to_json_bytes<T: Serialize>(report: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(report)
        .map_err(|e| CliError::Run(format!("cannot serialize report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_covers_magnitude_ranges() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(2.035613), "2.03561");
        assert_eq!(sig6(-2.035617), "-2.03562");
        assert_eq!(sig6(0.001234564), "0.00123456");
        assert_eq!(sig6(123456.4), "123456");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.00001), "1.00000e-5");
    }

    #[test]
    fn table_columns_align() {
        let body = render_table(
            &["arm", "estimate"],
            &[
                vec!["a".into(), "1.5".into()],
                vec!["long-label".into(), "22.25".into()],
            ],
        );
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 3);
        // Right-aligned numeric column: the values end at one shared offset.
        assert!(lines[1].ends_with("1.5"));
        assert!(lines[2].ends_with("22.25"));
        assert_eq!(lines[1].len(), lines[2].len());
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().expect("temp dir");
        let path = atomic_write(dir.path(), "report.json", b"{}\n").expect("writes");
        assert_eq!(fs::read(&path).expect("read back"), b"{}\n");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .expect("list")
            .map(|e| e.expect("entry").file_name())
            .collect();
        assert_eq!(leftovers, ["report.json"]);
    }

    #[test]
    fn family_stems_are_distinct_per_strength() {
        let section = |tag: &str, delta: Option<f64>| FamilySection {
            tag: tag.into(),
            delta,
            estimates: vec![],
            contrasts: vec![],
            diagnostics: DiagnosticsBlock {
                zero_propensity_cells: 0,
                sub_floor_cells: 0,
                min_pi_hat: 0.1,
                note: None,
            },
        };
        assert_eq!(family_file_stem(&section("tsm", None)), "family_tsm");
        assert_eq!(
            family_file_stem(&section("multiplicative", Some(0.5))),
            "family_multiplicative_0.5"
        );
        assert_eq!(
            family_file_stem(&section("multiplicative", Some(0.9))),
            "family_multiplicative_0.9"
        );
    }
}
