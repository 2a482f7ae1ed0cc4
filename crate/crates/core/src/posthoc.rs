//! Latent-class analytics on a fitted mixture: class proportions, hard
//! assignment, cross-tabulations against external covariates, observed
//! log-odds ratios, and worth tables per (class, covariate set).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::inference::StandardErrorReport;
use crate::model::{odds_multiplier, worths, ColumnKind};
use crate::ranking::AggregatedData;

/// z quantile for 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProportion {
    /// 1-based class label.
    pub class: usize,
    /// Mass probability from the fit.
    pub mass: f64,
    /// Unweighted mean of the posterior over observed cells.
    pub patterns: f64,
    /// Respondent-weighted mean of the posterior.
    pub respondents: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEstimate {
    pub class: usize,
    pub item: String,
    pub delta: f64,
    /// Odds multiplier against the reference item relative to the reference class.
    pub odds: f64,
    pub se_corrected: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub proportions: Vec<ClassProportion>,
    pub locations: Vec<LocationEstimate>,
}

pub fn class_proportions(
    fit: &FitResult,
    data: &AggregatedData,
    se: Option<&StandardErrorReport>,
) -> ClassSummary {
    let n_classes = fit.design.n_classes();
    let mut pattern_sum = vec![0.0; n_classes];
    let mut respondent_sum = vec![0.0; n_classes];
    let mut observed_cells = 0usize;
    for k in 0..data.n_sets() {
        for l in 0..data.n_patterns() {
            let n = data.count(k, l);
            if n == 0 {
                continue;
            }
            observed_cells += 1;
            for (r, w) in fit.weights.cell(k, l).iter().enumerate() {
                pattern_sum[r] += w;
                respondent_sum[r] += n as f64 * w;
            }
        }
    }
    let total = data.total() as f64;
    let proportions = (0..n_classes)
        .map(|r| ClassProportion {
            class: r + 1,
            mass: fit.params.masses[r],
            patterns: pattern_sum[r] / observed_cells.max(1) as f64,
            respondents: respondent_sum[r] / total,
        })
        .collect();

    let spec = fit.design.spec();
    let locations = fit
        .design
        .columns()
        .iter()
        .zip(&fit.params.coefficients)
        .filter_map(|(col, &delta)| match col.kind {
            ColumnKind::Location { class, item } => {
                let se_c = se
                    .and_then(|s| s.get(&col.name))
                    .and_then(|c| c.se_corrected);
                Some(LocationEstimate {
                    class: class + 1,
                    item: spec.items[item].clone(),
                    delta,
                    odds: odds_multiplier(delta),
                    se_corrected: se_c,
                    ci_low: se_c.map(|s| delta - Z_95 * s),
                    ci_high: se_c.map(|s| delta + Z_95 * s),
                })
            }
            _ => None,
        })
        .collect();
    ClassSummary {
        proportions,
        locations,
    }
}

/// `exp(2 * delta)` rounded for display, e.g. `-0.84` gives `0.186`.
pub fn format_odds(effect: f64) -> String {
    format!("{:.3}", odds_multiplier(effect))
}

/// Class with the highest posterior; ties go to the lowest class index.
/// Returns the 0-based class and its posterior.
pub fn argmax_class(posterior: &[f64]) -> (usize, f64) {
    posterior
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (r, &w)| {
            if w > best.1 {
                (r, w)
            } else {
                best
            }
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// 1-based respondent row among aggregated rows.
    pub row: usize,
    pub set: usize,
    pub pattern: usize,
    /// 1-based class.
    pub class: usize,
    pub posterior: f64,
}

pub type AssignmentTable = Vec<Assignment>;

pub fn assign_classes(fit: &FitResult, data: &AggregatedData) -> AssignmentTable {
    data.row_cells()
        .iter()
        .enumerate()
        .map(|(i, &(k, l))| {
            let (r, w) = argmax_class(fit.weights.cell(k, l));
            Assignment {
                row: i + 1,
                set: k,
                pattern: l,
                class: r + 1,
                posterior: w,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossTabMode {
    /// Sums of posterior probabilities.
    Expected,
    /// Counts of hard assignments.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub mode: CrossTabMode,
    pub variable: String,
    pub categories: Vec<String>,
    pub n_classes: usize,
    /// counts[category][class]
    pub counts: Vec<Vec<f64>>,
}

impl CrossTab {
    pub fn row_totals(&self) -> Vec<f64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.row_totals().iter().sum()
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

fn category_index(external: &[String]) -> (Vec<String>, Vec<usize>) {
    let cats: BTreeMap<&str, usize> = external
        .iter()
        .map(|s| s.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let idx = external.iter().map(|s| cats[s.as_str()]).collect();
    (cats.into_keys().map(String::from).collect(), idx)
}

/// Expected class membership by category: sum of posteriors of matching
/// respondents. `external` is aligned with the aggregated respondent rows.
pub fn crosstab_expected(
    fit: &FitResult,
    data: &AggregatedData,
    variable: &str,
    external: &[String],
) -> Result<CrossTab> {
    let cells = data.row_cells();
    if external.len() != cells.len() {
        return Err(Error::Data(format!(
            "external column '{variable}' has {} values for {} respondents",
            external.len(),
            cells.len()
        )));
    }
    let n_classes = fit.design.n_classes();
    let (categories, idx) = category_index(external);
    let mut counts = vec![vec![0.0; n_classes]; categories.len()];
    for (&(k, l), &c) in cells.iter().zip(&idx) {
        for (acc, w) in counts[c].iter_mut().zip(fit.weights.cell(k, l)) {
            *acc += w;
        }
    }
    Ok(CrossTab {
        mode: CrossTabMode::Expected,
        variable: variable.to_string(),
        categories,
        n_classes,
        counts,
    })
}

/// Hard-assignment counts by category.
pub fn crosstab_hard(
    assignments: &AssignmentTable,
    n_classes: usize,
    variable: &str,
    external: &[String],
) -> Result<CrossTab> {
    if external.len() != assignments.len() {
        return Err(Error::Data(format!(
            "external column '{variable}' has {} values for {} respondents",
            external.len(),
            assignments.len()
        )));
    }
    let (categories, idx) = category_index(external);
    let mut counts = vec![vec![0.0; n_classes]; categories.len()];
    for (a, &c) in assignments.iter().zip(&idx) {
        counts[c][a.class - 1] += 1.0;
    }
    Ok(CrossTab {
        mode: CrossTabMode::Hard,
        variable: variable.to_string(),
        categories,
        n_classes,
        counts,
    })
}

/// `ln((n[row1][a] n[row2][b]) / (n[row1][b] n[row2][a]))` with 0-based
/// rows and classes; adds 0.5 to each cell when `continuity` is set.
pub fn log_odds_ratio(
    tab: &CrossTab,
    class_a: usize,
    class_b: usize,
    row1: usize,
    row2: usize,
    continuity: bool,
) -> Result<f64> {
    if class_a >= tab.n_classes
        || class_b >= tab.n_classes
        || row1 >= tab.counts.len()
        || row2 >= tab.counts.len()
    {
        return Err(Error::Domain("log-odds ratio index out of range".into()));
    }
    let add = if continuity { 0.5 } else { 0.0 };
    let cell = |r: usize, c: usize| tab.counts[r][c] + add;
    let cells = [
        cell(row1, class_a),
        cell(row2, class_b),
        cell(row1, class_b),
        cell(row2, class_a),
    ];
    if cells.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Data(format!(
            "zero cell in log-odds ratio for rows {} / {}; enable the continuity correction",
            tab.categories[row1], tab.categories[row2]
        )));
    }
    Ok((cells[0] * cells[1] / (cells[2] * cells[3])).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorthRow {
    /// 1-based class.
    pub class: usize,
    pub set: usize,
    /// Covariate values of the set, in declaration order.
    pub covariates: Vec<String>,
    pub item: String,
    pub worth: f64,
}

/// Long-format worths from `lambda_jk + delta_jr` for every (class, set).
pub fn worth_curves(fit: &FitResult, data: &AggregatedData) -> Vec<WorthRow> {
    let design = &fit.design;
    let spec = design.spec();
    let mut rows = Vec::new();
    for r in 0..design.n_classes() {
        for k in 0..design.n_sets() {
            let covariates: Vec<String> = data.set_values(k).into_iter().map(|(_, v)| v).collect();
            let w = worths(&design.item_effects(k, r, &fit.params.coefficients));
            for (j, &v) in w.values().iter().enumerate() {
                rows.push(WorthRow {
                    class: r + 1,
                    set: k,
                    covariates: covariates.clone(),
                    item: spec.items[j].clone(),
                    worth: v,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(counts: Vec<Vec<f64>>) -> CrossTab {
        CrossTab {
            mode: CrossTabMode::Hard,
            variable: "v".into(),
            categories: (0..counts.len()).map(|i| format!("c{i}")).collect(),
            n_classes: counts[0].len(),
            counts,
        }
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax_class(&[1.0]).0, 0);
        assert_eq!(argmax_class(&[0.1, 0.7, 0.2]).0, 1);
        assert_eq!(argmax_class(&[0.5, 0.5]).0, 0);
    }

    #[test]
    fn log_odds_examples() {
        let t = table(vec![vec![10.0, 10.0], vec![10.0, 10.0]]);
        assert_eq!(log_odds_ratio(&t, 0, 1, 0, 1, false).unwrap(), 0.0);
        let t = table(vec![vec![20.0, 5.0], vec![5.0, 20.0]]);
        let v = log_odds_ratio(&t, 0, 1, 0, 1, false).unwrap();
        assert!((v - 16f64.ln()).abs() < 1e-12);
        assert!((v - 2.7726).abs() < 1e-4);
        let doubled = table(vec![vec![40.0, 10.0], vec![10.0, 40.0]]);
        assert_eq!(log_odds_ratio(&doubled, 0, 1, 0, 1, false).unwrap(), v);
        assert_eq!(log_odds_ratio(&t, 1, 0, 0, 1, false).unwrap(), -v);
    }

    #[test]
    fn zero_cells_need_correction() {
        let t = table(vec![vec![0.0, 5.0], vec![5.0, 20.0]]);
        let err = log_odds_ratio(&t, 0, 1, 0, 1, false).unwrap_err();
        assert!(err.to_string().contains("continuity"));
        let v = log_odds_ratio(&t, 0, 1, 0, 1, true).unwrap();
        assert!((v - (0.5f64 * 20.5 / (5.5 * 5.5)).ln()).abs() < 1e-12);
    }

    #[test]
    fn odds_formatting() {
        assert_eq!(format_odds(-0.84), "0.186");
        assert_eq!(format_odds(-0.77), "0.214");
    }

    #[test]
    fn hard_crosstab_counts() {
        let assignments: AssignmentTable = [1, 2, 2, 1, 3]
            .iter()
            .enumerate()
            .map(|(i, &c)| Assignment {
                row: i + 1,
                set: 0,
                pattern: 0,
                class: c,
                posterior: 1.0,
            })
            .collect();
        let ext: Vec<String> = ["x", "y", "x", "x", "y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let t = crosstab_hard(&assignments, 3, "v", &ext).unwrap();
        assert_eq!(t.categories, vec!["x", "y"]);
        assert_eq!(t.counts, vec![vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]);
        assert_eq!(t.total(), 5.0);
        assert!(crosstab_hard(&assignments, 3, "v", &ext[..4]).is_err());
    }
}
