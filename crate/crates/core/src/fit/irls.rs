//! Weighted Poisson log-linear IRLS for the M-step.
//!
//! The expanded table has one row per (pattern l, covariate set k, class r)
//! with expected count `y = n_lk * w_lkr`, log link, and linear predictor
//! `alpha_kr + eta_lkr`. The nuisance intercepts `alpha_kr` reproduce the
//! observed block totals; they are eliminated exactly at every iteration
//! (`alpha_kr = ln T_kr - lse_l eta_lkr`), which leaves the Schur-complement
//! Newton system in the structural coefficients. With the canonical log link
//! this Newton step is the IRLS step.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{checked_cholesky, solve};
use crate::model::{log_softmax, Design};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    /// Converged when the relative change in deviance falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

/// Coefficients held at zero, or pulled toward zero by a ridge penalty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Restriction {
    pub fixed_zero: Vec<usize>,
    pub ridge: Vec<(usize, f64)>,
}

impl Restriction {
    pub fn is_free(&self, column: usize) -> bool {
        !self.fixed_zero.contains(&column)
    }
}

#[derive(Debug, Clone)]
pub struct IrlsOutcome {
    pub coefficients: Vec<f64>,
    /// Poisson deviance of the expanded table at the solution.
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Expected counts of the expanded table with per-block totals.
#[derive(Debug, Clone)]
pub struct ExpandedTable {
    /// `y[k * R + r][l]`
    pub y: Vec<Vec<f64>>,
    totals: Vec<f64>,
    /// Per block, `sum_l y_l s_l` as a J-vector.
    score_sums: Vec<Vec<f64>>,
    constant: f64,
}

impl ExpandedTable {
    pub fn new(design: &Design, y: Vec<Vec<f64>>) -> Self {
        let n_items = design.n_items();
        let mut totals = Vec::with_capacity(y.len());
        let mut score_sums = Vec::with_capacity(y.len());
        let mut constant = 0.0;
        for row in &y {
            let t: f64 = row.iter().sum();
            let mut ss = vec![0.0; n_items];
            for (l, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    constant += v * v.ln();
                    for (acc, s) in ss.iter_mut().zip(design.pattern_scores(l)) {
                        *acc += v * s;
                    }
                }
            }
            if t > 0.0 {
                constant -= t * t.ln();
            }
            totals.push(t);
            score_sums.push(ss);
        }
        Self {
            y,
            totals,
            score_sums,
            constant,
        }
    }
}

struct Evaluation {
    objective: f64,
    gradient: Vec<f64>,
    information: Option<DMatrix<f64>>,
}

/// Profiled objective `sum_b [sum_l y eta - T lse(eta)] - ridge`, with its
/// gradient and (optionally) the Fisher information.
fn evaluate(
    design: &Design,
    table: &ExpandedTable,
    beta: &[f64],
    restriction: &Restriction,
    with_information: bool,
) -> Evaluation {
    let n_items = design.n_items();
    let n_classes = design.n_classes();
    let p = design.n_coefficients();
    let mut objective = 0.0;
    let mut gradient = vec![0.0; p];
    let mut info = with_information.then(|| DMatrix::<f64>::zeros(p, p));
    for (b, y) in table.y.iter().enumerate() {
        let total = table.totals[b];
        if total <= 0.0 {
            continue;
        }
        let (k, r) = (b / n_classes, b % n_classes);
        let eta = design.block_eta(k, r, beta);
        let logp = log_softmax(&eta);
        objective += y
            .iter()
            .zip(&logp)
            .map(|(a, lp)| if *a > 0.0 { a * lp } else { 0.0 })
            .sum::<f64>();

        let mut m1 = vec![0.0; n_items];
        let mut m2 = DMatrix::<f64>::zeros(n_items, n_items);
        for (l, lp) in logp.iter().enumerate() {
            let pr = lp.exp();
            let s = design.pattern_scores(l);
            for i in 0..n_items {
                m1[i] += pr * s[i];
                if info.is_some() {
                    for j in 0..=i {
                        m2[(i, j)] += pr * s[i] * s[j];
                    }
                }
            }
        }
        let block = design.block(k, r);
        let v: Vec<f64> = (0..n_items)
            .map(|j| table.score_sums[b][j] - total * m1[j])
            .collect();
        for (c, g) in gradient.iter_mut().enumerate() {
            *g += (0..n_items).map(|j| block[(j, c)] * v[j]).sum::<f64>();
        }
        if let Some(info) = info.as_mut() {
            let mut cov = DMatrix::<f64>::zeros(n_items, n_items);
            for i in 0..n_items {
                for j in 0..=i {
                    let c = total * (m2[(i, j)] - m1[i] * m1[j]);
                    cov[(i, j)] = c;
                    cov[(j, i)] = c;
                }
            }
            *info += block.transpose() * cov * block;
        }
    }
    for &(c, penalty) in &restriction.ridge {
        objective -= 0.5 * penalty * beta[c] * beta[c];
        gradient[c] -= penalty * beta[c];
        if let Some(info) = info.as_mut() {
            info[(c, c)] += penalty;
        }
    }
    Evaluation {
        objective,
        gradient,
        information: info,
    }
}

fn deviance(table: &ExpandedTable, objective: f64) -> f64 {
    2.0 * (table.constant - objective)
}

/// Fisher information of the profiled Poisson fit at `beta`, restricted to
/// the free columns. Returns the matrix and the column indices it covers.
pub fn information(
    design: &Design,
    table: &ExpandedTable,
    beta: &[f64],
    restriction: &Restriction,
) -> (DMatrix<f64>, Vec<usize>) {
    let eval = evaluate(design, table, beta, restriction, true);
    let active: Vec<usize> = (0..design.n_coefficients())
        .filter(|&c| restriction.is_free(c))
        .collect();
    let full = eval.information.expect("requested information");
    let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| {
        full[(active[i], active[j])]
    });
    (sub, active)
}

/// Maximize the weighted multinomial objective from `start`. Every accepted
/// step increases the objective, so the M-step never lowers the EM
/// auxiliary function.
pub fn fit(
    design: &Design,
    table: &ExpandedTable,
    start: &[f64],
    restriction: &Restriction,
    config: &IrlsConfig,
) -> Result<IrlsOutcome> {
    let names = design.column_names();
    let active: Vec<usize> = (0..design.n_coefficients())
        .filter(|&c| restriction.is_free(c))
        .collect();
    let active_names: Vec<String> = active.iter().map(|&c| names[c].clone()).collect();
    let mut beta = start.to_vec();
    for &c in &restriction.fixed_zero {
        beta[c] = 0.0;
    }
    let mut eval = evaluate(design, table, &beta, restriction, true);
    let mut dev = deviance(table, eval.objective);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let info = eval.information.as_ref().expect("information");
        let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| {
            info[(active[i], active[j])]
        });
        let rhs: Vec<f64> = active.iter().map(|&c| eval.gradient[c]).collect();
        let chol = checked_cholesky(&sub, &active_names)?;
        let step = solve(&chol, &rhs);
        let decrement: f64 = step.iter().zip(&rhs).map(|(a, b)| a * b).sum();

        let mut t = 1.0;
        let mut accepted = None;
        let mut attempted = f64::NAN;
        for _ in 0..40 {
            let mut trial = beta.clone();
            for (&c, s) in active.iter().zip(&step) {
                trial[c] += t * s;
            }
            let e = evaluate(design, table, &trial, restriction, false);
            attempted = deviance(table, e.objective);
            if e.objective.is_finite() && e.objective >= eval.objective {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(trial) = accepted else {
            // No ascent possible: either already at the optimum up to
            // rounding, or the iteration has broken down.
            if decrement.abs() <= 1e-9 * (1.0 + eval.objective.abs()) {
                converged = true;
                break;
            }
            return Err(Error::IrlsDivergence {
                iterations,
                last_deviance: dev,
                attempted_deviance: attempted,
            });
        };
        beta = trial;
        eval = evaluate(design, table, &beta, restriction, true);
        let new_dev = deviance(table, eval.objective);
        let change = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(IrlsOutcome {
        coefficients: beta,
        deviance: dev,
        iterations,
        converged,
    })
}
