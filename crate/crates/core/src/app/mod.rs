//! Command implementations behind the `rankmix` binary: configuration,
//! CSV ingestion, simulation, artifacts, and text reports.

pub mod artifact;
pub mod config;
pub mod ingest;
pub mod report;
pub mod simulate;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{
    self, refine, search_classes, search_terms, FitResult, REFINE_MAX_ITER, REFINE_TOL,
};
use crate::inference::{standard_errors, StandardErrorReport};
use crate::model::{parse_terms, ModelSpec};
use crate::posthoc::{
    assign_classes, class_proportions, crosstab_expected, crosstab_hard, format_odds,
    log_odds_ratio, worth_curves, CrossTab,
};

use artifact::{csv_bytes, write_atomic, ComparisonRow, DataSummary, FitArtifact};
use config::RunConfig;
use ingest::Dataset;

pub const ARTIFACT_FILE: &str = "fit.json";

/// What a fit or search command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub converged: bool,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub report: String,
}

pub fn load_dataset(run: &RunConfig) -> Result<Dataset> {
    let input = run.data.input.as_ref().ok_or_else(|| {
        Error::Config("no input file given (set data.input or pass --input)".into())
    })?;
    ingest::read_path(input, &run.data)
}

fn model_spec(run: &RunConfig, dataset: &Dataset, classes: usize) -> Result<ModelSpec> {
    let terms = parse_terms(&run.model.terms, dataset.data.covariates())?;
    ModelSpec::new(run.item_labels(), terms, classes)
}

/// Fit one model with the configured number of classes.
pub fn run_fit(run: &RunConfig) -> Result<Outcome> {
    run.validate()?;
    let dataset = load_dataset(run)?;
    let spec = model_spec(run, &dataset, run.model.classes)?;
    let result = fit::fit(&spec, &dataset.data, &run.fit)?;
    let result = refine(&result, &dataset.data, REFINE_TOL, REFINE_MAX_ITER)?;
    let artifact = analyse("fit", run, &dataset, &result)?;
    write_outputs(run, &dataset, &result, artifact)
}

/// Fit every class count in the configured range (plus the optional
/// fixed-effects term sweep) and report the lowest-BIC model.
pub fn run_search(run: &RunConfig) -> Result<Outcome> {
    run.validate()?;
    let dataset = load_dataset(run)?;
    let [lo, hi] = run
        .model
        .class_range
        .unwrap_or([1, run.model.classes.max(1)]);
    let range: Vec<usize> = (lo..=hi).collect();
    let template = model_spec(run, &dataset, 1)?;
    let search = search_classes(&template, &dataset.data, &run.fit, &range)?;
    let selected = search
        .selected_fit()
        .ok_or_else(|| Error::Data("every class count failed to fit".into()))?;
    let result = refine(selected, &dataset.data, REFINE_TOL, REFINE_MAX_ITER)?;
    let mut artifact = analyse("search", run, &dataset, &result)?;
    artifact.class_search = ComparisonRow::from_class_search(&search);
    artifact.selected_classes = search.selected;
    if !run.model.term_sweep.is_empty() {
        let entries = search_terms(
            &run.item_labels(),
            &run.model.term_sweep,
            &dataset.data,
            &run.fit,
        );
        artifact.term_search = ComparisonRow::from_term_search(&entries);
    }
    write_outputs(run, &dataset, &result, artifact)
}

fn analyse(
    command: &str,
    run: &RunConfig,
    dataset: &Dataset,
    result: &FitResult,
) -> Result<FitArtifact> {
    let data = &dataset.data;
    let se = standard_errors(result, data, run.output.se_method);
    let classes =
        (result.design.n_classes() > 1).then(|| class_proportions(result, data, Some(&se)));
    let summary = DataSummary {
        respondents: data.total(),
        rejected_rows: dataset.rejected,
        covariate_sets: data.n_sets(),
        patterns: data.n_patterns(),
        cells: data.n_cells(),
        covariates: data.covariates().to_vec(),
        set_labels: (0..data.n_sets()).map(|k| data.set_label(k)).collect(),
    };
    Ok(FitArtifact::build(
        command,
        run,
        result,
        summary,
        worth_curves(result, data),
        classes,
        Some(se),
    ))
}

#[derive(Serialize)]
struct SeCsvRow<'a> {
    term: &'a str,
    estimate: f64,
    se_raw: Option<f64>,
    se_corrected: Option<f64>,
    se_hessian: Option<f64>,
    lr_drop: Option<f64>,
    note: &'a str,
}

#[derive(Serialize)]
struct ClassCsvRow {
    class: usize,
    mass: f64,
    patterns: f64,
    respondents: f64,
}

#[derive(Serialize)]
struct LocationCsvRow<'a> {
    class: usize,
    item: &'a str,
    delta: f64,
    odds: String,
    se_corrected: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

#[derive(Serialize)]
struct AssignmentCsvRow {
    input_row: usize,
    set: usize,
    pattern: usize,
    class: usize,
    posterior: f64,
}

#[derive(Serialize)]
struct CrossTabCsvRow<'a> {
    variable: &'a str,
    mode: &'a str,
    category: &'a str,
    class: usize,
    count: f64,
}

#[derive(Serialize)]
struct LogOddsCsvRow<'a> {
    variable: &'a str,
    mode: &'a str,
    category_1: &'a str,
    category_2: &'a str,
    class_a: usize,
    class_b: usize,
    log_odds: Option<f64>,
    note: String,
}

fn se_rows(se: &StandardErrorReport) -> Vec<SeCsvRow<'_>> {
    se.coefficients
        .iter()
        .map(|c| SeCsvRow {
            term: &c.term,
            estimate: c.estimate,
            se_raw: c.se_raw,
            se_corrected: c.se_corrected,
            se_hessian: c.se_hessian,
            lr_drop: c.lr_drop,
            note: c.note.as_deref().unwrap_or(""),
        })
        .collect()
}

/// Long format: class, one column per covariate, item, worth.
fn worths_csv(artifact: &FitArtifact) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["class".to_string()];
    header.extend(
        artifact
            .data
            .covariates
            .iter()
            .map(|c| c.name().to_string()),
    );
    header.extend(["item".to_string(), "worth".to_string()]);
    writer.write_record(&header)?;
    for w in &artifact.worths {
        let mut record = vec![w.class.to_string()];
        record.extend(w.covariates.iter().cloned());
        record.extend([w.item.clone(), w.worth.to_string()]);
        writer.write_record(&record)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Data(format!("writing csv: {}", e.error())))
}

fn crosstab_rows<'a>(tab: &'a CrossTab, mode: &'a str) -> Vec<CrossTabCsvRow<'a>> {
    tab.categories
        .iter()
        .zip(&tab.counts)
        .flat_map(|(cat, row)| {
            row.iter()
                .enumerate()
                .map(move |(r, &count)| CrossTabCsvRow {
                    variable: &tab.variable,
                    mode,
                    category: cat,
                    class: r + 1,
                    count,
                })
        })
        .collect()
}

fn write_outputs(
    run: &RunConfig,
    dataset: &Dataset,
    result: &FitResult,
    artifact: FitArtifact,
) -> Result<Outcome> {
    let dir = run.output.dir.clone();
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        files.push(path);
        Ok(())
    };
    put(ARTIFACT_FILE, artifact.to_json()?)?;
    if let Some(se) = &artifact.standard_errors {
        put("se.csv", csv_bytes(&se_rows(se))?)?;
    }
    put("worths.csv", worths_csv(&artifact)?)?;
    if !artifact.class_search.is_empty() {
        put("comparison.csv", csv_bytes(&artifact.class_search)?)?;
    }
    if !artifact.term_search.is_empty() {
        put("terms.csv", csv_bytes(&artifact.term_search)?)?;
    }

    if let Some(classes) = &artifact.classes {
        let rows: Vec<ClassCsvRow> = classes
            .proportions
            .iter()
            .map(|p| ClassCsvRow {
                class: p.class,
                mass: p.mass,
                patterns: p.patterns,
                respondents: p.respondents,
            })
            .collect();
        put("classes.csv", csv_bytes(&rows)?)?;
        let rows: Vec<LocationCsvRow> = classes
            .locations
            .iter()
            .map(|l| LocationCsvRow {
                class: l.class,
                item: &l.item,
                delta: l.delta,
                odds: format_odds(l.delta),
                se_corrected: l.se_corrected,
                ci_low: l.ci_low,
                ci_high: l.ci_high,
            })
            .collect();
        put("locations.csv", csv_bytes(&rows)?)?;

        let data = &dataset.data;
        let assignments = assign_classes(result, data);
        let rows: Vec<AssignmentCsvRow> = assignments
            .iter()
            .map(|a| AssignmentCsvRow {
                input_row: dataset.row_numbers[a.row - 1],
                set: a.set,
                pattern: a.pattern,
                class: a.class,
                posterior: a.posterior,
            })
            .collect();
        put("assignments.csv", csv_bytes(&rows)?)?;

        let n_classes = result.design.n_classes();
        let mut tables: Vec<(CrossTab, CrossTab)> = Vec::new();
        let mut variables: Vec<&str> = run.posthoc.crosstab.iter().map(String::as_str).collect();
        for lo in &run.posthoc.logodds {
            if !variables.contains(&lo.column.as_str()) {
                variables.push(&lo.column);
            }
        }
        for variable in variables {
            let external = dataset.external_column(variable)?;
            tables.push((
                crosstab_expected(result, data, variable, &external)?,
                crosstab_hard(&assignments, n_classes, variable, &external)?,
            ));
        }
        if !tables.is_empty() {
            let rows: Vec<CrossTabCsvRow> = tables
                .iter()
                .flat_map(|(e, h)| {
                    crosstab_rows(e, "expected")
                        .into_iter()
                        .chain(crosstab_rows(h, "hard"))
                })
                .collect();
            put("crosstab.csv", csv_bytes(&rows)?)?;
        }
        let mut lo_rows = Vec::new();
        for lo in &run.posthoc.logodds {
            for c in [lo.class_a, lo.class_b] {
                if c < 1 || c > n_classes {
                    return Err(Error::Config(format!(
                        "log-odds class {c} is outside 1..={n_classes}"
                    )));
                }
            }
            let (expected, hard) = tables
                .iter()
                .find(|(e, _)| e.variable == lo.column)
                .expect("table built above");
            let pairs: Vec<[String; 2]> = if lo.pairs.is_empty() {
                expected.categories[1..]
                    .iter()
                    .map(|c| [expected.categories[0].clone(), c.clone()])
                    .collect()
            } else {
                lo.pairs.clone()
            };
            for (tab, mode) in [(expected, "expected"), (hard, "hard")] {
                for [c1, c2] in &pairs {
                    let index = |c: &str| {
                        tab.category_index(c).ok_or_else(|| {
                            Error::Config(format!("'{c}' is not a category of '{}'", lo.column))
                        })
                    };
                    let (i1, i2) = (index(c1)?, index(c2)?);
                    let value = log_odds_ratio(
                        tab,
                        lo.class_a - 1,
                        lo.class_b - 1,
                        i1,
                        i2,
                        run.posthoc.continuity_correction,
                    );
                    lo_rows.push((
                        lo.column.clone(),
                        mode,
                        c1.clone(),
                        c2.clone(),
                        lo.class_a,
                        lo.class_b,
                        value,
                    ));
                }
            }
        }
        if !lo_rows.is_empty() {
            let rows: Vec<LogOddsCsvRow> = lo_rows
                .iter()
                .map(|(v, mode, c1, c2, a, b, value)| LogOddsCsvRow {
                    variable: v,
                    mode,
                    category_1: c1,
                    category_2: c2,
                    class_a: *a,
                    class_b: *b,
                    log_odds: value.as_ref().ok().copied(),
                    note: value
                        .as_ref()
                        .err()
                        .map(|e| e.to_string())
                        .unwrap_or_default(),
                })
                .collect();
            put("logodds.csv", csv_bytes(&rows)?)?;
        }
    }

    let report = report::render(&artifact);
    put("report.txt", report.clone().into_bytes())?;
    Ok(Outcome {
        converged: result.converged(),
        out_dir: dir.clone(),
        files,
        report,
    })
}

/// Simulate data from the `[simulate]` section.
pub fn run_simulate(run: &RunConfig) -> Result<(simulate::Simulation, PathBuf)> {
    let config = run
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
    let sim = simulate::run(config, &config.output)?;
    Ok((sim, config.output.clone()))
}

/// Text report for an existing artifact.
pub fn run_report(path: &Path) -> Result<String> {
    Ok(report::render(&FitArtifact::read(path)?))
}
