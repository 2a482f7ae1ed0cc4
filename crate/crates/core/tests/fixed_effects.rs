mod common;

use std::sync::Arc;

use common::*;
use rankmix::fit::{self, FitConfig};
use rankmix::inference::{corrected_se, hessian_se, raw_standard_errors};
use rankmix::model::{mixture_loglik, parse_terms, Design, ModelSpec, Parameters};
use rankmix::ranking::{enumerate_transitive_patterns, AggregatedData, CovariateSet};

fn one_class_spec(data: &AggregatedData) -> ModelSpec {
    let n_items = data.space().n_items();
    let formula = if data.n_sets() > 1 { "g" } else { "" };
    ModelSpec::new(
        item_names(n_items),
        parse_terms(formula, data.covariates()).unwrap(),
        1,
    )
    .unwrap()
}

fn quick_config() -> FitConfig {
    FitConfig {
        n_starts: 2,
        ..FitConfig::default()
    }
}

#[test]
fn pattern_probabilities_match_the_pairwise_product() {
    let space = Arc::new(enumerate_transitive_patterns(3).unwrap());
    let data = AggregatedData::from_counts(
        space.clone(),
        vec![],
        vec![CovariateSet {
            levels: vec![],
            values: vec![],
        }],
        vec![vec![1; 6]],
    )
    .unwrap();
    let spec = ModelSpec::new(item_names(3), vec![], 1).unwrap();
    let design = Design::new(&spec, &data).unwrap();
    let params = Parameters {
        coefficients: vec![0.5, 0.2],
        masses: vec![1.0],
    };
    let lib = design.pattern_probs(0, 0, &params);
    let oracle = oracle_pattern_probs(&space, &[0.5, 0.2, 0.0]);
    for (a, b) in lib.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn log_likelihood_matches_literal_summation() {
    let data = fixed_effects_instance(5, 3, 2, 400);
    let spec = one_class_spec(&data);
    let design = Design::new(&spec, &data).unwrap();
    let coefs = vec![0.3, -0.1, 0.25, 0.4];
    let params = Parameters {
        coefficients: coefs.clone(),
        masses: vec![1.0],
    };
    let lib = mixture_loglik(&design, &data, &params).unwrap().loglik;
    let oracle = oracle_loglik(
        &data,
        &lambda_per_set(&coefs, 3, 2),
        &[vec![0.0; 3]],
        &[1.0],
    );
    assert!((lib - oracle).abs() < 1e-10, "{lib} vs {oracle}");
}

#[test]
fn one_class_fit_matches_oracle_optimizer() {
    for (seed, n_sets) in [(11, 1), (12, 2), (13, 2)] {
        let data = fixed_effects_instance(seed, 3, n_sets, 500);
        let fit = fit::fit(&one_class_spec(&data), &data, &quick_config()).unwrap();
        let (oracle, oracle_ll) = oracle_fixed_fit(&data);
        for (a, b) in fit.params.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
        }
        assert!((fit.loglik.loglik - oracle_ll).abs() < 1e-8);
        assert!(fit.converged());
        assert!(fit.iterations <= 2);
    }
}

#[test]
fn one_class_standard_errors_agree_across_methods() {
    let data = fixed_effects_instance(21, 3, 2, 800);
    let fit = fit::fit(&one_class_spec(&data), &data, &quick_config()).unwrap();
    let (oracle, _) = oracle_fixed_fit(&data);
    let objective =
        |c: &[f64]| oracle_loglik(&data, &lambda_per_set(c, 3, 2), &[vec![0.0; 3]], &[1.0]);
    let info = -numerical_hessian(objective, &oracle, 1e-4);
    let cov = info.try_inverse().unwrap();
    let oracle_se: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();

    let hessian = hessian_se(&fit, &data).unwrap();
    let raw = raw_standard_errors(&fit, &data).unwrap();
    for c in 0..oracle_se.len() {
        assert!(
            (hessian.se[c] - oracle_se[c]).abs() < 1e-4,
            "hessian {} vs {}",
            hessian.se[c],
            oracle_se[c]
        );
        assert!(
            (raw[c] - oracle_se[c]).abs() < 1e-4,
            "raw {} vs {}",
            raw[c],
            oracle_se[c]
        );
        let corrected = corrected_se(&fit, &data, c).unwrap();
        assert!(
            (corrected.se / raw[c] - 1.0).abs() < 0.10,
            "corrected {} vs raw {}",
            corrected.se,
            raw[c]
        );
        let wald = (fit.params.coefficients[c] / corrected.se).powi(2);
        assert!((wald - corrected.lr_drop).abs() < 1e-6 * corrected.lr_drop.max(1.0));
    }
    assert!(hessian.relative_asymmetry < 1e-6);
}
