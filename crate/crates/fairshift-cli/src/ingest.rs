//! Request assembly and CSV ingestion.
//!
//! A CSV run is described by an [`AnalysisRequest`]: where the data lives,
//! which columns play which role, which shift families to estimate, and
//! the estimation knobs. Requests are assembled with a fixed precedence —
//! command-line flags override config-file entries, which override
//! defaults — and the effective result is echoed into every report.

use std::fs;
use std::path::{Path, PathBuf};

use fairshift::model::Dataset;
use fairshift::shift::ShiftFamily;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One requested shift family: a tag plus its strength where applicable,
/// or a tabulated custom shift.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FamilySpec {
    /// One of `tsm`, `multiplicative`, `exp_tilt`, `identity`, `custom`.
    pub tag: String,
    /// Strength in [0, 1]; required for `multiplicative` and `exp_tilt`,
    /// ignored by the others.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Knot grid for a `custom` family (config file only): strictly
    /// increasing, starting at 0, inside [0, 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xs: Option<Vec<f64>>,
    /// Shift values at the knots; admissibility (0 <= f(x) < x) is
    /// validated at load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    /// First derivative at the knots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<Vec<f64>>,
    /// Second derivative at the knots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2f: Option<Vec<f64>>,
}

impl FamilySpec {
    /// A plain tag + optional strength, as the `--family` flag builds.
    pub fn tagged(tag: impl Into<String>, delta: Option<f64>) -> Self {
        FamilySpec {
            tag: tag.into(),
            delta,
            xs: None,
            f: None,
            df: None,
            d2f: None,
        }
    }

    /// Materialise the family, validating the tag, strength, or table.
    pub fn resolve(&self) -> Result<ShiftFamily, CliError> {
        let need_delta = || {
            self.delta.ok_or_else(|| {
                CliError::Usage(format!(
                    "family '{}' needs a strength; pass --delta <f> in [0, 1]",
                    self.tag
                ))
            })
        };
        match self.tag.as_str() {
            "tsm" => Ok(ShiftFamily::Tsm),
            "identity" => Ok(ShiftFamily::Identity),
            "multiplicative" => ShiftFamily::multiplicative(need_delta()?)
                .map_err(|e| CliError::Usage(e.to_string())),
            "exp_tilt" => {
                ShiftFamily::exp_tilt(need_delta()?).map_err(|e| CliError::Usage(e.to_string()))
            }
            "custom" => {
                let table = (|| {
                    Some((
                        self.xs.clone()?,
                        self.f.clone()?,
                        self.df.clone()?,
                        self.d2f.clone()?,
                    ))
                })()
                .ok_or_else(|| {
                    CliError::Usage(
                        "a custom family is defined in the config file with its tabulated \
                         'xs', 'f', 'df', and 'd2f' arrays"
                            .into(),
                    )
                })?;
                ShiftFamily::custom(table.0, table.1, table.2, table.3)
                    .map_err(|e| CliError::Usage(e.to_string()))
            }
            other => Err(CliError::Usage(format!(
                "unknown family tag '{other}' (expected tsm, multiplicative, exp_tilt, \
                 identity, or custom)"
            ))),
        }
    }

    /// Display label such as `multiplicative(delta=0.5)`.
    pub fn label(&self) -> String {
        match self.delta {
            Some(d) if matches!(self.tag.as_str(), "multiplicative" | "exp_tilt") => {
                format!("{}(delta={})", self.tag, d)
            }
            _ => self.tag.clone(),
        }
    }
}

/// The family set reported when the caller names none: the full default
/// sweep of trimmed means plus two strengths each of the two shrinkage
/// families.
pub fn default_families() -> Vec<FamilySpec> {
    vec![
        FamilySpec::tagged("tsm", None),
        FamilySpec::tagged("multiplicative", Some(0.9)),
        FamilySpec::tagged("multiplicative", Some(0.5)),
        FamilySpec::tagged("exp_tilt", Some(0.9)),
        FamilySpec::tagged("exp_tilt", Some(0.5)),
    ]
}

/// Optional JSON config file. Every field mirrors a flag; flags win.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub families: Option<Vec<FamilySpec>>,
    pub delta: Option<f64>,
    pub k: Option<f64>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub benchmark: Option<String>,
}

impl ConfigFile {
    /// Parse a config file, treating malformed JSON as a usage error.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config file {}: {e}", path.display())))
    }
}

/// A fully resolved analysis run.
#[derive(Debug, Clone)]
pub struct AnalysisRequest {
    pub input: PathBuf,
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    pub families: Vec<FamilySpec>,
    pub smoothing_k: f64,
    pub folds: usize,
    pub seed: u64,
    pub benchmark: Option<String>,
}

impl AnalysisRequest {
    /// Merge flags over a config file over defaults and validate the
    /// result. `flag_*` arguments are `None` when the flag was absent.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        input: PathBuf,
        flag_treatment: Option<String>,
        flag_outcome: Option<String>,
        flag_covariates: Option<Vec<String>>,
        flag_families: Vec<String>,
        flag_delta: Option<f64>,
        flag_k: Option<f64>,
        flag_folds: Option<usize>,
        flag_seed: Option<u64>,
        flag_benchmark: Option<String>,
        file: ConfigFile,
    ) -> Result<Self, CliError> {
        let missing = |what: &str| {
            CliError::Usage(format!(
                "no {what} column named; pass --{what} <col> or set it in the config file"
            ))
        };
        let treatment = flag_treatment
            .or(file.treatment)
            .ok_or_else(|| missing("treatment"))?;
        let outcome = flag_outcome
            .or(file.outcome)
            .ok_or_else(|| missing("outcome"))?;
        let covariates = flag_covariates
            .or(file.covariates)
            .ok_or_else(|| missing("covariates"))?;

        // `--family` flags share the single `--delta` value; the config
        // file carries per-family strengths instead.
        let delta = flag_delta.or(file.delta);
        let families = if !flag_families.is_empty() {
            flag_families
                .into_iter()
                .map(|tag| FamilySpec::tagged(tag, delta))
                .collect()
        } else if let Some(list) = file.families {
            list
        } else {
            default_families()
        };
        if families.is_empty() {
            return Err(CliError::Usage("the family list is empty".into()));
        }

        let request = AnalysisRequest {
            input,
            covariates,
            treatment,
            outcome,
            families,
            smoothing_k: flag_k.or(file.k).unwrap_or(100.0),
            folds: flag_folds.or(file.folds).unwrap_or(2),
            seed: flag_seed.or(file.seed).unwrap_or(0),
            benchmark: flag_benchmark.or(file.benchmark),
        };
        request.validate()?;
        Ok(request)
    }

    /// Check everything that can be checked before touching the data.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.covariates.is_empty() {
            return Err(CliError::Usage("at least one covariate column is required".into()));
        }
        // Role disjointness: no column may serve twice.
        let mut roles: Vec<&str> = vec![&self.treatment, &self.outcome];
        roles.extend(self.covariates.iter().map(String::as_str));
        for (i, a) in roles.iter().enumerate() {
            if roles[i + 1..].contains(a) {
                return Err(CliError::Schema(format!(
                    "column '{a}' is named for more than one role; \
                     treatment, outcome, and covariates must be disjoint"
                )));
            }
        }
        if !(self.smoothing_k.is_finite() && self.smoothing_k > 0.0) {
            return Err(CliError::Usage(format!(
                "smoothing rate k must be positive and finite, got {}",
                self.smoothing_k
            )));
        }
        if self.folds < 2 {
            return Err(CliError::Usage(format!(
                "cross-fitting needs at least 2 folds, got {}",
                self.folds
            )));
        }
        for family in &self.families {
            family.resolve()?;
        }
        Ok(())
    }
}

/// Load and validate the dataset an [`AnalysisRequest`] points at.
///
/// The file must be UTF-8 CSV with a header row. Covariates and the
/// outcome parse as floats; treatment labels are taken verbatim (integer
/// or string) and the recoding is recorded in the dataset's label map.
pub fn load_dataset(req: &AnalysisRequest) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&req.input)
        .map_err(|e| CliError::Schema(format!("cannot open {}: {e}", req.input.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("bad header row: {e}")))?
        .clone();
    let col_index = |name: &str| -> Result<usize, CliError> {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| *h == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => Err(CliError::Schema(format!(
                "column '{name}' not found; the file has: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))),
            _ => Err(CliError::Schema(format!(
                "column '{name}' appears {} times in the header",
                hits.len()
            ))),
        }
    };

    let cov_idx: Vec<usize> = req
        .covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;
    let treat_idx = col_index(&req.treatment)?;
    let outcome_idx = col_index(&req.outcome)?;

    let mut covariates: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut outcomes: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Parse(format!("data row {}: {e}", row + 1)))?;
        let field = |idx: usize, role: &str| -> Result<&str, CliError> {
            record.get(idx).ok_or_else(|| {
                CliError::Parse(format!("data row {} is missing the {role} field", row + 1))
            })
        };
        let numeric = |idx: usize, role: &str, name: &str| -> Result<f64, CliError> {
            let raw = field(idx, role)?;
            raw.parse::<f64>().map_err(|_| {
                CliError::Parse(format!(
                    "data row {}, column '{name}': '{raw}' is not a number",
                    row + 1
                ))
            })
        };
        for (c, &idx) in cov_idx.iter().enumerate() {
            covariates.push(numeric(idx, "covariate", &req.covariates[c])?);
        }
        labels.push(field(treat_idx, "treatment")?.to_string());
        outcomes.push(numeric(outcome_idx, "outcome", &req.outcome)?);
    }
    let n = labels.len();
    if n == 0 {
        return Err(CliError::Schema("the file has a header but no data rows".into()));
    }

    let covariates = Array2::from_shape_vec((n, cov_idx.len()), covariates)
        .expect("row-major covariate buffer matches its dimensions");
    Dataset::from_labels(covariates, &labels, Array1::from_vec(outcomes), None)
        .map_err(|e| CliError::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("temp file");
        f.write_all(content.as_bytes()).expect("write");
        f
    }

    fn basic_request(input: PathBuf) -> AnalysisRequest {
        AnalysisRequest {
            input,
            covariates: vec!["x1".into(), "x2".into()],
            treatment: "arm".into(),
            outcome: "y".into(),
            families: default_families(),
            smoothing_k: 100.0,
            folds: 2,
            seed: 1,
            benchmark: None,
        }
    }

    #[test]
    fn default_family_set_has_five_members() {
        let defaults = default_families();
        assert_eq!(defaults.len(), 5);
        assert!(defaults.iter().all(|f| f.resolve().is_ok()));
        assert_eq!(defaults[0].tag, "tsm");
    }

    #[test]
    fn family_tags_resolve_and_reject() {
        assert!(FamilySpec::tagged("exp_tilt", Some(0.5)).resolve().is_ok());
        let no_delta = FamilySpec::tagged("multiplicative", None);
        assert!(matches!(no_delta.resolve(), Err(CliError::Usage(_))));
        let unknown = FamilySpec::tagged("smorgasbord", None);
        assert!(matches!(unknown.resolve(), Err(CliError::Usage(_))));
        // `custom` without a table points the caller at the config file.
        let bare_custom = FamilySpec::tagged("custom", None);
        let err = bare_custom.resolve().expect_err("needs a table");
        assert!(err.to_string().contains("config file"), "{err}");
    }

    #[test]
    fn custom_family_table_resolves_from_config_json() {
        let spec: FamilySpec = serde_json::from_str(
            r#"{"tag": "custom",
                "xs":  [0.0, 0.25, 0.5, 0.75],
                "f":   [0.0, 0.1, 0.2, 0.3],
                "df":  [0.4, 0.4, 0.4, 0.4],
                "d2f": [0.0, 0.0, 0.0, 0.0]}"#,
        )
        .expect("valid spec");
        assert!(spec.resolve().is_ok());

        // An inadmissible table (f(x) >= x at a knot) is rejected at load.
        let bad: FamilySpec = serde_json::from_str(
            r#"{"tag": "custom",
                "xs":  [0.0, 0.5],
                "f":   [0.0, 0.6],
                "df":  [1.0, 1.0],
                "d2f": [0.0, 0.0]}"#,
        )
        .expect("parses");
        let err = bad.resolve().expect_err("inadmissible");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let file: ConfigFile = serde_json::from_str(
            r#"{"treatment": "arm", "outcome": "y", "covariates": ["x"],
                "folds": 5, "seed": 9, "families": [{"tag": "tsm"}]}"#,
        )
        .expect("valid config");
        let req = AnalysisRequest::assemble(
            PathBuf::from("in.csv"),
            None,
            None,
            None,
            vec![],
            None,
            None,
            Some(3), // flag beats the file's 5
            None,
            None,
            file,
        )
        .expect("assembles");
        assert_eq!(req.folds, 3);
        assert_eq!(req.seed, 9); // file beats the default 0
        assert_eq!(req.treatment, "arm");
        assert_eq!(req.families, vec![FamilySpec::tagged("tsm", None)]);
    }

    #[test]
    fn family_flags_shadow_config_file_families() {
        let file: ConfigFile = serde_json::from_str(
            r#"{"treatment": "arm", "outcome": "y", "covariates": ["x"],
                "families": [{"tag": "identity"}]}"#,
        )
        .expect("valid config");
        let req = AnalysisRequest::assemble(
            PathBuf::from("in.csv"),
            None,
            None,
            None,
            vec!["multiplicative".into()],
            Some(0.7),
            None,
            None,
            None,
            None,
            file,
        )
        .expect("assembles");
        assert_eq!(req.families.len(), 1);
        assert_eq!(req.families[0].tag, "multiplicative");
        assert_eq!(req.families[0].delta, Some(0.7));
    }

    #[test]
    fn overlapping_roles_are_rejected() {
        let mut req = basic_request(PathBuf::from("in.csv"));
        req.outcome = "x1".into();
        assert!(matches!(req.validate(), Err(CliError::Schema(_))));
    }

    #[test]
    fn loads_a_small_csv_with_string_labels() {
        let f = write_temp(
            "x1,x2,arm,y\n0.1,1.0,b,2.5\n0.2,0.0,a,1.5\n0.3,1.0,b,2.0\n0.4,0.0,a,1.0\n",
        );
        let req = basic_request(f.path().to_path_buf());
        let data = load_dataset(&req).expect("loads");
        assert_eq!(data.n(), 4);
        assert_eq!(data.arms(), 2);
        // Lexicographic recoding: 'a' first despite appearing second.
        assert_eq!(data.labels().labels(), ["a", "b"]);
        assert_eq!(data.treatments(), [1, 0, 1, 0]);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let f = write_temp("x1,x2,arm\n0.1,1.0,b\n");
        let req = basic_request(f.path().to_path_buf());
        let err = load_dataset(&req).expect_err("no outcome column");
        assert!(matches!(err, CliError::Schema(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unparseable_field_is_a_parse_error_with_row_number() {
        let f = write_temp("x1,x2,arm,y\n0.1,1.0,b,2.5\n0.2,oops,a,1.5\n");
        let req = basic_request(f.path().to_path_buf());
        let err = load_dataset(&req).expect_err("bad float");
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("x2"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn empty_body_is_rejected() {
        let f = write_temp("x1,x2,arm,y\n");
        let req = basic_request(f.path().to_path_buf());
        assert!(matches!(load_dataset(&req), Err(CliError::Schema(_))));
    }
}
