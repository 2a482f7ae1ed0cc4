use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::app::config::RunConfig;
use crate::error::{Error, Result};
use crate::fit::{ChainSummary, ClassSearch, FitResult, FitStatus, TermSearchEntry};
use crate::inference::StandardErrorReport;
use crate::posthoc::{ClassSummary, WorthRow};
use crate::ranking::CovariateInfo;

/// Version of the fit artifact layout; bumped on incompatible changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEcho {
    pub items: Vec<String>,
    pub reference_item: String,
    pub formula: String,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub respondents: u64,
    pub rejected_rows: usize,
    pub covariate_sets: usize,
    pub patterns: usize,
    pub cells: usize,
    pub covariates: Vec<CovariateInfo>,
    pub set_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub status: FitStatus,
    pub loglik: f64,
    pub minus_two_loglik: f64,
    pub deviance: f64,
    pub n_parameters: usize,
    pub bic: f64,
    pub iterations: usize,
    pub starts_attempted: usize,
    pub best_start: crate::fit::StartKind,
    pub seed: u64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCoefficient {
    pub name: String,
    pub estimate: f64,
    /// Estimate on the raw covariate scale (only when continuous terms exist).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub classes: usize,
    pub minus_two_loglik: Option<f64>,
    pub deviance: Option<f64>,
    pub n_parameters: Option<usize>,
    pub bic: Option<f64>,
    pub status: Option<FitStatus>,
    pub error: Option<String>,
}

impl ComparisonRow {
    fn new(label: String, classes: usize, fit: &std::result::Result<FitResult, String>) -> Self {
        match fit {
            Ok(f) => Self {
                label,
                classes,
                minus_two_loglik: Some(f.minus_two_loglik()),
                deviance: Some(f.deviance()),
                n_parameters: Some(f.n_parameters),
                bic: Some(f.bic),
                status: Some(f.status),
                error: None,
            },
            Err(e) => Self {
                label,
                classes,
                minus_two_loglik: None,
                deviance: None,
                n_parameters: None,
                bic: None,
                status: None,
                error: Some(e.clone()),
            },
        }
    }

    pub fn from_class_search(search: &ClassSearch) -> Vec<Self> {
        search
            .entries
            .iter()
            .map(|e| Self::new(format!("R={}", e.classes), e.classes, &e.fit))
            .collect()
    }

    pub fn from_term_search(entries: &[TermSearchEntry]) -> Vec<Self> {
        entries
            .iter()
            .map(|e| Self::new(e.formula.clone(), 1, &e.fit))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest |sum_r w - 1| over cells.
    pub weight_sum_error: f64,
    /// |sum_r q_r - 1|.
    pub mass_sum_error: f64,
    pub converged_chains: usize,
    pub degenerate_chains: usize,
}

/// Everything a fit run produces, serialized as `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub command: String,
    pub run: RunConfig,
    pub model: ModelEcho,
    pub data: DataSummary,
    pub fit: FitSummary,
    pub coefficients: Vec<NamedCoefficient>,
    pub masses: Vec<f64>,
    /// locations[r][j]; the reference class and reference item are zero.
    pub locations: Vec<Vec<f64>>,
    pub worths: Vec<WorthRow>,
    pub classes: Option<ClassSummary>,
    pub standard_errors: Option<StandardErrorReport>,
    pub class_search: Vec<ComparisonRow>,
    pub selected_classes: Option<usize>,
    pub term_search: Vec<ComparisonRow>,
    pub chains: Vec<ChainSummary>,
    pub diagnostics: Diagnostics,
}

impl FitArtifact {
    pub fn build(
        command: &str,
        run: &RunConfig,
        fit: &FitResult,
        data_summary: DataSummary,
        worths: Vec<WorthRow>,
        classes: Option<ClassSummary>,
        standard_errors: Option<StandardErrorReport>,
    ) -> Self {
        let design = &fit.design;
        let spec = design.spec();
        let has_continuous = data_summary
            .covariates
            .iter()
            .any(|c| matches!(c, CovariateInfo::Continuous { .. }));
        let raw = design.raw_scale_coefficients(&fit.params.coefficients);
        let coefficients = raw
            .into_iter()
            .zip(&fit.params.coefficients)
            .map(|((name, raw), &estimate)| NamedCoefficient {
                name,
                estimate,
                raw_scale: has_continuous.then_some(raw),
            })
            .collect();
        let locations = (0..design.n_classes())
            .map(|r| {
                (0..design.n_items())
                    .map(|j| fit.params.location(design, r, j))
                    .collect()
            })
            .collect();
        let converged_chains = fit
            .chains
            .iter()
            .filter(|c| c.status == crate::fit::ChainStatus::Converged)
            .count();
        let degenerate_chains = fit
            .chains
            .iter()
            .filter(|c| c.status == crate::fit::ChainStatus::Degenerate)
            .count();
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            run: run.clone(),
            model: ModelEcho {
                items: spec.items.clone(),
                reference_item: spec.items[spec.reference_item].clone(),
                formula: spec.formula(),
                classes: spec.classes,
            },
            data: data_summary,
            fit: FitSummary {
                status: fit.status,
                loglik: fit.loglik.loglik,
                minus_two_loglik: fit.minus_two_loglik(),
                deviance: fit.deviance(),
                n_parameters: fit.n_parameters,
                bic: fit.bic,
                iterations: fit.iterations,
                starts_attempted: fit.starts_attempted,
                best_start: fit.best_start,
                seed: fit.seed,
                trace: fit.trace.clone(),
            },
            coefficients,
            masses: fit.params.masses.clone(),
            locations,
            worths,
            classes,
            standard_errors,
            class_search: Vec::new(),
            selected_classes: None,
            term_search: Vec::new(),
            chains: fit.chains.clone(),
            diagnostics: Diagnostics {
                weight_sum_error: fit.weights.max_normalization_error(),
                mass_sum_error: (fit.params.masses.iter().sum::<f64>() - 1.0).abs(),
                converged_chains,
                degenerate_chains,
            },
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Parse an artifact, checking the schema version before anything else.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let found = value
            .get("schema_version")
            .map(|v| v.to_string())
            .unwrap_or_else(|| "none".to_string());
        if found != SCHEMA_VERSION.to_string() {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

/// Write to a temporary file in the target directory, then rename over the
/// target so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Serialize rows to CSV bytes.
pub fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Data(format!("writing csv: {}", e.error())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_mismatch_names_the_expected_version() {
        let err = FitArtifact::from_json(br#"{"schema_version": 99}"#).unwrap_err();
        match &err {
            Error::SchemaVersion { expected, found } => {
                assert_eq!(*expected, SCHEMA_VERSION);
                assert_eq!(found, "99");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            FitArtifact::from_json(b"{}"),
            Err(Error::SchemaVersion { .. })
        ));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
