//! Independent reference computations for the integration and acceptance
//! tests. Nothing here uses the library's score vectors, design matrices, or
//! fitting code.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rankmix::ranking::{
    enumerate_transitive_patterns, AggregatedData, CovariateInfo, CovariateSet, PatternSpace,
    RankVector,
};

/// All orderings of `0..n` (item indices, most preferred first).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// 1-based ranks of an ordering.
pub fn order_to_ranks(order: &[usize]) -> Vec<usize> {
    let mut ranks = vec![0; order.len()];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item] = pos + 1;
    }
    ranks
}

/// Pattern probabilities from the paired-comparison product
/// `prod_{i<j} exp(y_ij (lambda_i - lambda_j))`, normalized over all
/// rankings, indexed like the library's pattern space.
pub fn oracle_pattern_probs(space: &PatternSpace, lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut probs = vec![0.0; space.len()];
    let mut total = 0.0;
    for order in permutations(n) {
        let ranks = order_to_ranks(&order);
        let mut log_term = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let y = if ranks[i] < ranks[j] { 1.0 } else { -1.0 };
                log_term += y * (lambda[i] - lambda[j]);
            }
        }
        let term = log_term.exp();
        total += term;
        let idx = space
            .index_of_ranks(&RankVector::new(ranks).unwrap())
            .unwrap();
        probs[idx] = term;
    }
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// `sum_k sum_l n_kl ln sum_r q_r P_l(lambda_k + delta_r)` by literal summation.
/// `lambda[k]` and `delta[r]` are full J-vectors.
pub fn oracle_loglik(
    data: &AggregatedData,
    lambda: &[Vec<f64>],
    delta: &[Vec<f64>],
    q: &[f64],
) -> f64 {
    let space = data.space();
    let mut ll = 0.0;
    for (k, lambda_k) in lambda.iter().enumerate().take(data.n_sets()) {
        let per_class: Vec<Vec<f64>> = delta
            .iter()
            .map(|d| {
                let eff: Vec<f64> = lambda_k.iter().zip(d).map(|(a, b)| a + b).collect();
                oracle_pattern_probs(space, &eff)
            })
            .collect();
        for l in 0..data.n_patterns() {
            let n = data.count(k, l) as f64;
            if n > 0.0 {
                let mix: f64 = q.iter().zip(&per_class).map(|(qr, p)| qr * p[l]).sum();
                ll += n * mix.ln();
            }
        }
    }
    ll
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Maximize a smooth concave-near-optimum function by Newton steps on
/// finite-difference derivatives, with step halving.
pub fn maximize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64]) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    for _ in 0..200 {
        let g = fd_gradient(&f, &x, 1e-5);
        let hh = 1e-4;
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += hh;
            m[j] -= hh;
            let col = (fd_gradient(&f, &p, 1e-5) - fd_gradient(&f, &m, 1e-5)) / (2.0 * hh);
            hess.set_column(j, &col);
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let step = match (-hess).cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone() * 1e-3,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let fc = f(&cand);
            if fc >= fx {
                x = cand;
                fx = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || step.amax() * t < 1e-12 {
            break;
        }
    }
    x
}

/// Observed information by second central differences of `f`.
pub fn numerical_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let eval = |di: f64, dj: f64| {
            let mut p = x.to_vec();
            p[i] += di;
            p[j] += dj;
            f(&p)
        };
        (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
    })
}

/// A count table over `n_sets` sets of a two-level factor `g` (or no
/// covariate when `n_sets == 1`), drawn from pattern probabilities.
pub fn sampled_table(
    n_items: usize,
    probs_per_set: &[Vec<f64>],
    n_per_set: &[usize],
    rng: &mut ChaCha8Rng,
) -> AggregatedData {
    let space = Arc::new(enumerate_transitive_patterns(n_items).unwrap());
    let counts: Vec<Vec<u64>> = probs_per_set
        .iter()
        .zip(n_per_set)
        .map(|(p, &n)| {
            let mut c = vec![0u64; space.len()];
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = p.len() - 1;
                for (l, v) in p.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        idx = l;
                        break;
                    }
                }
                c[idx] += 1;
            }
            c
        })
        .collect();
    let (covariates, sets) = if probs_per_set.len() == 1 {
        (
            vec![],
            vec![CovariateSet {
                levels: vec![],
                values: vec![],
            }],
        )
    } else {
        (
            vec![CovariateInfo::Factor {
                name: "g".into(),
                levels: (0..probs_per_set.len()).map(|i| format!("l{i}")).collect(),
            }],
            (0..probs_per_set.len())
                .map(|k| CovariateSet {
                    levels: vec![k],
                    values: vec![],
                })
                .collect(),
        )
    };
    AggregatedData::from_counts(space, covariates, sets, counts).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Class matching with the smallest total variation distance between fitted
/// and true worth profiles (exhaustive, so it equals the optimal
/// assignment). Returns `perm[true_class] = fitted_class` and the largest
/// absolute worth error under that matching.
pub fn best_relabeling(fitted: &[Vec<f64>], truth: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let perm = permutations(truth.len())
        .into_iter()
        .map(|perm| {
            let tv: f64 = truth
                .iter()
                .enumerate()
                .map(|(r, t)| {
                    0.5 * t
                        .iter()
                        .zip(&fitted[perm[r]])
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
                })
                .sum();
            (perm, tv)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    let err = truth
        .iter()
        .enumerate()
        .flat_map(|(r, t)| t.iter().zip(&fitted[perm[r]]).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    (perm, err)
}

/// Coefficient layout of a one-class model over items `item0..` with an
/// optional two-level factor `g`: item effects, then `item:g=l1` shifts.
pub fn lambda_per_set(coefs: &[f64], n_items: usize, n_sets: usize) -> Vec<Vec<f64>> {
    let free = n_items - 1;
    (0..n_sets)
        .map(|k| {
            let mut l: Vec<f64> = (0..free)
                .map(|j| coefs[j] + if k == 1 { coefs[free + j] } else { 0.0 })
                .collect();
            l.push(0.0);
            l
        })
        .collect()
}

pub fn item_names(n_items: usize) -> Vec<String> {
    (0..n_items).map(|j| format!("item{j}")).collect()
}

/// Random fixed-effects instance: J items, one or two covariate sets, N
/// respondents split evenly.
pub fn fixed_effects_instance(
    seed: u64,
    n_items: usize,
    n_sets: usize,
    n: usize,
) -> AggregatedData {
    let mut r = rng(seed);
    let space = enumerate_transitive_patterns(n_items).unwrap();
    let n_coef = (n_items - 1) * n_sets;
    let truth: Vec<f64> = (0..n_coef).map(|_| r.random_range(-0.6..0.6)).collect();
    let probs: Vec<Vec<f64>> = lambda_per_set(&truth, n_items, n_sets)
        .iter()
        .map(|l| oracle_pattern_probs(&space, l))
        .collect();
    let per_set: Vec<usize> = (0..n_sets)
        .map(|k| n / n_sets + usize::from(k < n % n_sets))
        .collect();
    sampled_table(n_items, &probs, &per_set, &mut r)
}

/// Oracle maximum-likelihood fit of a one-class model: coefficients in the
/// layout of [`lambda_per_set`] and the maximized log-likelihood.
pub fn oracle_fixed_fit(data: &AggregatedData) -> (Vec<f64>, f64) {
    let n_items = data.space().n_items();
    let n_sets = data.n_sets();
    let objective = |c: &[f64]| {
        oracle_loglik(
            data,
            &lambda_per_set(c, n_items, n_sets),
            &[vec![0.0; n_items]],
            &[1.0],
        )
    };
    let x = maximize(objective, &vec![0.0; (n_items - 1) * n_sets]);
    let ll = objective(&x);
    (x, ll)
}

/// Two well-separated classes over four items and a two-level factor `g`.
pub fn two_class_config(n: usize, seed: u64) -> rankmix::app::config::SimulateConfig {
    rankmix::app::config::SimulateConfig {
        n,
        seed,
        items: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        terms: "g".into(),
        factors: vec![rankmix::app::config::SimFactor {
            name: "g".into(),
            levels: vec!["x".into(), "y".into()],
            probs: vec![0.5, 0.5],
        }],
        masses: vec![0.55, 0.45],
        coefficients: [
            ("a", 0.2),
            ("b", 0.1),
            ("c", -0.1),
            ("a:g=y", -0.3),
            ("b:g=y", 0.2),
            ("delta:a:class1", 1.0),
            ("delta:b:class1", -0.8),
            ("delta:c:class1", 0.4),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect(),
        output: "unused.csv".into(),
    }
}
