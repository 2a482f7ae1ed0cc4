//! Standard errors after EM convergence.
//!
//! * raw: from the final weighted IRLS, treating the posterior weights as known;
//! * corrected: the standard error that makes the Wald statistic equal the
//!   likelihood-ratio statistic for constraining the coefficient to zero;
//! * hessian: observed information of the mixture log-likelihood, from
//!   central differences of its analytic score.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::irls::{self, ExpandedTable, Restriction};
use crate::fit::{m_step, run_chain, FitConfig, FitResult, StartKind};
use crate::linalg::spd_inverse;
use crate::model::{mixture_loglik, mixture_score, Parameters};
use crate::ranking::AggregatedData;

/// EM iterations allowed for each constrained refit.
pub const CONSTRAINED_MAX_ITER: usize = 200;
/// Relative finite-difference step for the observed information.
pub const HESSIAN_STEP: f64 = 1e-5;
const RIDGE_PENALTY: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    Raw,
    Corrected,
    Hessian,
    #[default]
    All,
}

impl SeMethod {
    fn corrected(self) -> bool {
        matches!(self, SeMethod::Corrected | SeMethod::All)
    }

    fn hessian(self) -> bool {
        matches!(self, SeMethod::Hessian | SeMethod::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSe {
    pub term: String,
    pub estimate: f64,
    pub se_raw: Option<f64>,
    pub se_corrected: Option<f64>,
    pub se_hessian: Option<f64>,
    /// `2 ln L(full) - 2 ln L(coefficient = 0)`.
    pub lr_drop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrorReport {
    pub method: SeMethod,
    pub coefficients: Vec<CoefficientSe>,
}

impl StandardErrorReport {
    pub fn get(&self, term: &str) -> Option<&CoefficientSe> {
        self.coefficients.iter().find(|c| c.term == term)
    }
}

/// Standard errors from the final weighted IRLS information.
pub fn raw_standard_errors(fit: &FitResult, data: &AggregatedData) -> Result<Vec<f64>> {
    let table = ExpandedTable::new(&fit.design, fit.weights.expected_counts(data));
    let (info, _) = irls::information(
        &fit.design,
        &table,
        &fit.params.coefficients,
        &Restriction::default(),
    );
    let cov = spd_inverse(&info, &fit.design.column_names())?;
    Ok((0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedSe {
    pub se: f64,
    pub lr_drop: f64,
    pub constrained_loglik: f64,
}

/// Corrected standard error `|estimate| / sqrt(2 ln L - 2 ln L(coef = 0))`.
/// The constrained refit starts from the final posterior weights.
pub fn corrected_se(fit: &FitResult, data: &AggregatedData, column: usize) -> Result<CorrectedSe> {
    let design = &fit.design;
    let name = design
        .columns()
        .get(column)
        .ok_or_else(|| Error::Domain(format!("no coefficient with index {column}")))?
        .name
        .clone();
    let estimate = fit.params.coefficients[column];
    if estimate == 0.0 {
        return Err(Error::Domain(format!("coefficient {name} is already zero")));
    }
    let full = fit.loglik.loglik;
    let config = FitConfig {
        max_iter: CONSTRAINED_MAX_ITER,
        ..fit.config.clone()
    };
    let attempt = |restriction: &Restriction| -> Result<f64> {
        let start = m_step(
            design,
            data,
            &fit.weights,
            &fit.params,
            restriction,
            &config.irls(),
        )?;
        let chain = run_chain(
            design,
            data,
            start,
            StartKind::Warm { index: 0 },
            &config,
            restriction,
        );
        if let Some(err) = chain.error {
            return Err(Error::ConstrainedRefit {
                coefficient: name.clone(),
                message: err,
            });
        }
        let mut params = chain.params;
        params.coefficients[column] = 0.0;
        Ok(mixture_loglik(design, data, &params)?.loglik)
    };

    let mut constrained = attempt(&Restriction {
        fixed_zero: vec![column],
        ridge: Vec::new(),
    });
    let bad = |c: &Result<f64>| !matches!(c, Ok(ll) if 2.0 * (full - ll) > 0.0);
    if bad(&constrained) {
        constrained = attempt(&Restriction {
            fixed_zero: Vec::new(),
            ridge: vec![(column, RIDGE_PENALTY)],
        });
    }
    let constrained_loglik = constrained?;
    let lr_drop = 2.0 * (full - constrained_loglik);
    if !(lr_drop > 0.0) {
        return Err(Error::ConstrainedRefit {
            coefficient: name,
            message: format!("log-likelihood drop {lr_drop:.3e} is not positive (label switching or non-convergence)"),
        });
    }
    Ok(CorrectedSe {
        se: estimate.abs() / lr_drop.sqrt(),
        lr_drop,
        constrained_loglik,
    })
}

/// Observed information `-d score / d theta` by central differences with
/// steps `rel_step * max(|theta_i|, 1)`. Column i holds the differences in
/// direction i; the result is not symmetrized.
pub fn observed_information<F>(score: F, theta: &[f64], rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = theta.len();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = rel_step * theta[i].abs().max(1.0);
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let (sp, sm) = (score(&plus), score(&minus));
            sp.iter()
                .zip(&sm)
                .map(|(a, b)| -(a - b) / (2.0 * h))
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |r, c| columns[c][r])
}

/// Standard errors from an observed information matrix (symmetrized first).
pub fn standard_errors_from_information(info: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
    let sym = (info + info.transpose()) * 0.5;
    let cov = spd_inverse(&sym, names)?;
    Ok((0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect())
}

#[derive(Debug, Clone)]
pub struct HessianSe {
    /// One per structural coefficient (mass-point locations included).
    pub se: Vec<f64>,
    pub information: DMatrix<f64>,
    /// Largest |I_ij - I_ji| relative to the largest |I_ij|.
    pub relative_asymmetry: f64,
}

/// Hessian standard errors. The information covers the coefficients and the
/// free mass logits; only coefficient SEs are reported.
pub fn hessian_se(fit: &FitResult, data: &AggregatedData) -> Result<HessianSe> {
    let design = &fit.design;
    let theta = fit.params.to_free();
    let score = |t: &[f64]| mixture_score(design, data, &Parameters::from_free(design, t));
    let info = observed_information(score, &theta, HESSIAN_STEP);
    let max_abs = info
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let asym = (&info - info.transpose())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut names = design.column_names();
    names.extend((1..design.n_classes()).map(|r| format!("mass-logit:class{r}")));
    let se = standard_errors_from_information(&info, &names)?;
    Ok(HessianSe {
        se: se[..design.n_coefficients()].to_vec(),
        information: info,
        relative_asymmetry: asym / max_abs,
    })
}

/// Standard-error table for every coefficient of a fit.
pub fn standard_errors(
    fit: &FitResult,
    data: &AggregatedData,
    method: SeMethod,
) -> StandardErrorReport {
    let design = &fit.design;
    let names = design.column_names();
    let p = names.len();
    let mut notes: Vec<Vec<String>> = vec![Vec::new(); p];
    let raw = match raw_standard_errors(fit, data) {
        Ok(v) => v.into_iter().map(Some).collect(),
        Err(e) => {
            notes.iter_mut().for_each(|n| n.push(format!("raw: {e}")));
            vec![None; p]
        }
    };
    let hessian = if method.hessian() {
        match hessian_se(fit, data) {
            Ok(h) => h.se.into_iter().map(Some).collect(),
            Err(e) => {
                notes
                    .iter_mut()
                    .for_each(|n| n.push(format!("hessian: {e}")));
                vec![None; p]
            }
        }
    } else {
        vec![None; p]
    };
    let corrected: Vec<Option<CorrectedSe>> = if method.corrected() {
        (0..p)
            .into_par_iter()
            .map(|c| corrected_se(fit, data, c))
            .collect::<Vec<_>>()
            .into_iter()
            .enumerate()
            .map(|(c, r)| match r {
                Ok(v) => Some(v),
                Err(e) => {
                    notes[c].push(format!("corrected: {e}"));
                    None
                }
            })
            .collect()
    } else {
        vec![None; p]
    };
    let coefficients = (0..p)
        .map(|c| CoefficientSe {
            term: names[c].clone(),
            estimate: fit.params.coefficients[c],
            se_raw: raw[c],
            se_corrected: corrected[c].map(|v| v.se),
            se_hessian: hessian[c],
            lr_drop: corrected[c].map(|v| v.lr_drop),
            note: (!notes[c].is_empty()).then(|| notes[c].join("; ")),
        })
        .collect();
    StandardErrorReport {
        method,
        coefficients,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_log_likelihood_gives_its_scale() {
        // logL = -(x - a)^2 / (2 s^2)
        let (a, s) = (0.7, 0.25);
        let score = |t: &[f64]| vec![-(t[0] - a) / (s * s)];
        let info = observed_information(score, &[a], HESSIAN_STEP);
        let se = standard_errors_from_information(&info, &["x".to_string()]).unwrap();
        assert!((se[0] - s).abs() < 1e-8);
    }

    #[test]
    fn formula_arithmetic() {
        // 0.169 / sqrt(88.2)
        let se = 0.169 / 88.2f64.sqrt();
        assert!((se - 0.0180).abs() < 5e-5);
    }

    #[test]
    fn indefinite_information_names_directions() {
        let score = |t: &[f64]| vec![-(t[0] + t[1]), -(t[0] + t[1])];
        let info = observed_information(score, &[0.0, 0.0], HESSIAN_STEP);
        let names = vec!["a".to_string(), "b".to_string()];
        let err = standard_errors_from_information(&info, &names).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('a') && msg.contains('b'), "{msg}");
    }
}
