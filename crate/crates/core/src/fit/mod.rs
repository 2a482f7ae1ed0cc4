//! NPML mixture fitting: E-step posterior class weights, IRLS M-step on the
//! expanded table, multi-start EM, and BIC searches over classes and
//! covariate terms.

pub mod irls;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bic, count_parameters, log_sum_exp, loglik_from_log_probs, saturated_loglik, ColumnKind,
    Design, LogLikelihood, MassCounting, ModelSpec, Parameters,
};
use crate::ranking::AggregatedData;

pub use irls::{ExpandedTable, IrlsConfig, Restriction};

/// Below this mass a class is treated as degenerate.
pub const MIN_CLASS_MASS: f64 = 1e-6;
/// Above this absolute location a class is treated as degenerate.
pub const MAX_LOCATION: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iter: usize,
    /// Absolute change in -2 ln L that ends a chain.
    pub tol: f64,
    pub seed: u64,
    /// Starting coefficients are drawn uniform on [-scale, scale].
    pub start_scale: f64,
    pub irls_tol: f64,
    pub irls_max_iter: usize,
    pub mass_counting: MassCounting,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 50,
            max_iter: 500,
            tol: 0.001,
            seed: 1,
            start_scale: 0.5,
            irls_tol: 1e-10,
            irls_max_iter: 50,
            mass_counting: MassCounting::ExcludeMasses,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts < 1 {
            return Err(Error::Config("n_starts must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !(self.irls_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iter < 1 || self.irls_max_iter < 1 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        if !(self.start_scale >= 0.0) {
            return Err(Error::Config("start_scale must be non-negative".into()));
        }
        Ok(())
    }

    pub fn irls(&self) -> IrlsConfig {
        IrlsConfig {
            tol: self.irls_tol,
            max_iter: self.irls_max_iter,
        }
    }
}

/// Posterior class probabilities for every (set, pattern) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights {
    n_patterns: usize,
    n_classes: usize,
    /// `w[(k * L + l) * R + r]`
    w: Vec<f64>,
}

impl PosteriorWeights {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, set: usize, pattern: usize, class: usize) -> f64 {
        self.w[(set * self.n_patterns + pattern) * self.n_classes + class]
    }

    pub fn cell(&self, set: usize, pattern: usize) -> &[f64] {
        let start = (set * self.n_patterns + pattern) * self.n_classes;
        &self.w[start..start + self.n_classes]
    }

    /// Largest deviation of a cell's class weights from summing to one.
    pub fn max_normalization_error(&self) -> f64 {
        self.w
            .chunks_exact(self.n_classes)
            .map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Expected counts `n_lk w_lkr` laid out by (set, class) block.
    pub fn expected_counts(&self, data: &AggregatedData) -> Vec<Vec<f64>> {
        let mut y = vec![vec![0.0; self.n_patterns]; data.n_sets() * self.n_classes];
        for k in 0..data.n_sets() {
            for l in 0..self.n_patterns {
                let n = data.count(k, l);
                if n == 0 {
                    continue;
                }
                for r in 0..self.n_classes {
                    y[k * self.n_classes + r][l] = n as f64 * self.get(k, l, r);
                }
            }
        }
        y
    }

    /// Permute class labels: new class `i` takes old class `order[i]`.
    pub fn relabel(&self, order: &[usize]) -> Self {
        let mut w = self.w.clone();
        for (cell_new, cell_old) in w
            .chunks_exact_mut(self.n_classes)
            .zip(self.w.chunks_exact(self.n_classes))
        {
            for (i, &o) in order.iter().enumerate() {
                cell_new[i] = cell_old[o];
            }
        }
        Self { w, ..self.clone() }
    }
}

/// Random starting values: coefficients uniform on [-scale, scale], masses
/// `(1/R + Dirichlet(1)) / 2`.
pub fn init_start(seed: u64, stream: u64, design: &Design, scale: f64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let coefficients = (0..design.n_coefficients())
        .map(|_| {
            if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            }
        })
        .collect();
    let r = design.n_classes();
    let masses = if r == 1 {
        vec![1.0]
    } else {
        let draws: Vec<f64> = (0..r).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let mut q: Vec<f64> = draws
            .iter()
            .map(|d| 0.5 / r as f64 + 0.5 * d / total)
            .collect();
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        q
    };
    Parameters {
        coefficients,
        masses,
    }
}

/// Posterior class weights and the log-likelihood at `params`.
pub fn e_step_with_loglik(
    design: &Design,
    data: &AggregatedData,
    params: &Parameters,
) -> (PosteriorWeights, f64) {
    let log_probs = design.all_log_probs(&params.coefficients);
    let n_classes = design.n_classes();
    let n_patterns = design.n_patterns();
    let log_q: Vec<f64> = params.masses.iter().map(|q| q.ln()).collect();
    let mut w = vec![0.0; data.n_sets() * n_patterns * n_classes];
    let mut terms = vec![0.0; n_classes];
    for k in 0..data.n_sets() {
        for l in 0..n_patterns {
            for r in 0..n_classes {
                terms[r] = log_q[r] + log_probs[k * n_classes + r][l];
            }
            let lse = log_sum_exp(&terms);
            let cell = &mut w[(k * n_patterns + l) * n_classes..][..n_classes];
            for r in 0..n_classes {
                cell[r] = (terms[r] - lse).exp();
            }
            let s: f64 = cell.iter().sum();
            cell.iter_mut().for_each(|v| *v /= s);
        }
    }
    let loglik = loglik_from_log_probs(design, data, &params.masses, &log_probs);
    (
        PosteriorWeights {
            n_patterns,
            n_classes,
            w,
        },
        loglik,
    )
}

pub fn e_step(design: &Design, data: &AggregatedData, params: &Parameters) -> PosteriorWeights {
    e_step_with_loglik(design, data, params).0
}

/// Respondent-weighted mass update `q_r = sum n w / N`.
pub fn update_masses(data: &AggregatedData, weights: &PosteriorWeights) -> Vec<f64> {
    let mut q = vec![0.0; weights.n_classes];
    for k in 0..data.n_sets() {
        for l in 0..weights.n_patterns {
            let n = data.count(k, l);
            if n > 0 {
                for (qr, w) in q.iter_mut().zip(weights.cell(k, l)) {
                    *qr += n as f64 * w;
                }
            }
        }
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    q
}

/// One M-step: mass update plus IRLS from `start` on the expanded table.
pub fn m_step(
    design: &Design,
    data: &AggregatedData,
    weights: &PosteriorWeights,
    start: &Parameters,
    restriction: &Restriction,
    config: &IrlsConfig,
) -> Result<Parameters> {
    let masses = update_masses(data, weights);
    let table = ExpandedTable::new(design, weights.expected_counts(data));
    let outcome = irls::fit(design, &table, &start.coefficients, restriction, config)?;
    Ok(Parameters {
        coefficients: outcome.coefficients,
        masses,
    })
}

fn is_degenerate(design: &Design, params: &Parameters) -> bool {
    params.masses.iter().any(|&q| q < MIN_CLASS_MASS)
        || design
            .columns()
            .iter()
            .zip(&params.coefficients)
            .any(|(c, v)| matches!(c.kind, ColumnKind::Location { .. }) && v.abs() > MAX_LOCATION)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainStatus {
    Converged,
    MaxIterations,
    Degenerate,
    Failed,
}

/// Where a chain's starting values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StartKind {
    Random {
        stream: u64,
    },
    /// Seeded from a fit with one fewer class.
    Warm {
        index: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub start: StartKind,
    pub status: ChainStatus,
    /// Last non-degenerate parameters reached.
    pub params: Parameters,
    pub weights: PosteriorWeights,
    pub loglik: f64,
    pub iterations: usize,
    /// -2 ln L after each E-step, starting at the initial values.
    pub trace: Vec<f64>,
    /// Largest |sum_r w - 1| seen over all E-steps.
    pub weight_sum_error: f64,
    /// Largest |sum_r q - 1| seen over all M-steps.
    pub mass_sum_error: f64,
    pub error: Option<String>,
}

/// Run one EM chain from `start` until the change in -2 ln L drops below
/// the tolerance or the iteration limit is hit.
pub fn run_chain(
    design: &Design,
    data: &AggregatedData,
    start: Parameters,
    start_kind: StartKind,
    config: &FitConfig,
    restriction: &Restriction,
) -> Chain {
    let irls_config = config.irls();
    let mut params = start;
    for &c in &restriction.fixed_zero {
        params.coefficients[c] = 0.0;
    }
    let (mut weights, mut loglik) = e_step_with_loglik(design, data, &params);
    let mut trace = vec![-2.0 * loglik];
    let mut weight_sum_error = weights.max_normalization_error();
    let mut mass_sum_error = (params.masses.iter().sum::<f64>() - 1.0).abs();
    let mut status = ChainStatus::MaxIterations;
    let mut error = None;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let next = match m_step(design, data, &weights, &params, restriction, &irls_config) {
            Ok(p) => p,
            Err(e) => {
                status = ChainStatus::Failed;
                error = Some(e.to_string());
                break;
            }
        };
        mass_sum_error = mass_sum_error.max((next.masses.iter().sum::<f64>() - 1.0).abs());
        if is_degenerate(design, &next) {
            status = ChainStatus::Degenerate;
            break;
        }
        params = next;
        let (w, ll) = e_step_with_loglik(design, data, &params);
        weights = w;
        loglik = ll;
        weight_sum_error = weight_sum_error.max(weights.max_normalization_error());
        let prev = *trace.last().unwrap();
        trace.push(-2.0 * loglik);
        if (prev + 2.0 * loglik).abs() < config.tol {
            status = ChainStatus::Converged;
            break;
        }
    }
    Chain {
        start: start_kind,
        status,
        params,
        weights,
        loglik,
        iterations,
        trace,
        weight_sum_error,
        mass_sum_error,
        error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    NotConverged,
    /// Only degenerate chains were available.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub start: StartKind,
    pub status: ChainStatus,
    /// `None` when the chain ended without a finite log-likelihood.
    pub minus_two_loglik: Option<f64>,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub design: Design,
    pub params: Parameters,
    pub weights: PosteriorWeights,
    pub loglik: LogLikelihood,
    pub n_parameters: usize,
    pub n_cells: usize,
    pub bic: f64,
    pub iterations: usize,
    pub starts_attempted: usize,
    pub best_start: StartKind,
    pub seed: u64,
    pub status: FitStatus,
    pub trace: Vec<f64>,
    pub chains: Vec<ChainSummary>,
    pub config: FitConfig,
}

impl FitResult {
    pub fn spec(&self) -> &ModelSpec {
        self.design.spec()
    }

    pub fn minus_two_loglik(&self) -> f64 {
        self.loglik.minus_two_loglik()
    }

    pub fn deviance(&self) -> f64 {
        self.loglik.deviance()
    }

    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

/// Fit one model by multi-start EM and keep the chain with the smallest
/// -2 ln L.
pub fn fit(spec: &ModelSpec, data: &AggregatedData, config: &FitConfig) -> Result<FitResult> {
    let design = Design::new(spec, data)?;
    fit_design(design, data, config, Vec::new())
}

/// As [`fit`], with extra warm starts that are exempt from the
/// degenerate-class exclusion (their last non-degenerate state is kept).
pub fn fit_design(
    design: Design,
    data: &AggregatedData,
    config: &FitConfig,
    warm_starts: Vec<Parameters>,
) -> Result<FitResult> {
    config.validate()?;
    if let Some(k) = (0..data.n_sets()).find(|&k| data.set_total(k) == 0) {
        return Err(Error::Data(format!("covariate set {k} has no respondents")));
    }
    let restriction = Restriction::default();
    let mut starts: Vec<(StartKind, Parameters)> = (0..config.n_starts as u64)
        .map(|s| {
            (
                StartKind::Random { stream: s },
                init_start(config.seed, s, &design, config.start_scale),
            )
        })
        .collect();
    starts.extend(
        warm_starts
            .into_iter()
            .enumerate()
            .map(|(i, p)| (StartKind::Warm { index: i }, p)),
    );
    let chains: Vec<Chain> = starts
        .into_par_iter()
        .map(|(kind, p)| run_chain(&design, data, p, kind, config, &restriction))
        .collect();
    select_best(design, data, config, chains)
}

fn select_best(
    design: Design,
    data: &AggregatedData,
    config: &FitConfig,
    chains: Vec<Chain>,
) -> Result<FitResult> {
    let usable = |c: &Chain| match c.status {
        ChainStatus::Converged | ChainStatus::MaxIterations => true,
        ChainStatus::Degenerate => matches!(c.start, StartKind::Warm { .. }),
        ChainStatus::Failed => false,
    };
    // Deterministic fold in start order; strict improvement keeps the first.
    let pick = |filter: &dyn Fn(&Chain) -> bool| {
        chains
            .iter()
            .enumerate()
            .filter(|(_, c)| filter(c) && c.loglik.is_finite())
            .fold(None::<(usize, f64)>, |best, (i, c)| match best {
                Some((_, ll)) if ll >= c.loglik => best,
                _ => Some((i, c.loglik)),
            })
            .map(|(i, _)| i)
    };
    let (best, status) = if let Some(i) = pick(&usable) {
        let s = if chains[i].status == ChainStatus::Converged {
            FitStatus::Converged
        } else {
            FitStatus::NotConverged
        };
        (i, s)
    } else if let Some(i) = pick(&|c: &Chain| c.status == ChainStatus::Degenerate) {
        (i, FitStatus::Degenerate)
    } else {
        let msg = chains
            .iter()
            .find_map(|c| c.error.clone())
            .unwrap_or_else(|| "no usable chain".into());
        return Err(Error::Data(format!("every EM chain failed: {msg}")));
    };
    let summaries = chains
        .iter()
        .map(|c| ChainSummary {
            start: c.start,
            status: c.status,
            minus_two_loglik: c.loglik.is_finite().then_some(-2.0 * c.loglik),
            iterations: c.iterations,
            error: c.error.clone(),
        })
        .collect();
    let starts_attempted = chains.len();
    let chain = chains.into_iter().nth(best).expect("best index");
    let loglik = LogLikelihood {
        loglik: chain.loglik,
        saturated: saturated_loglik(data),
    };
    let n_parameters = count_parameters(&design, config.mass_counting);
    let n_cells = data.n_cells();
    Ok(FitResult {
        bic: bic(loglik.minus_two_loglik(), n_parameters, n_cells),
        design,
        params: chain.params,
        weights: chain.weights,
        loglik,
        n_parameters,
        n_cells,
        iterations: chain.iterations,
        starts_attempted,
        best_start: chain.start,
        seed: config.seed,
        status,
        trace: chain.trace,
        chains: summaries,
        config: config.clone(),
    })
}

/// Tolerance used by [`refine`] before standard errors are computed.
pub const REFINE_TOL: f64 = 1e-8;
/// EM iteration limit for [`refine`].
pub const REFINE_MAX_ITER: usize = 2000;

/// Continue EM from the selected chain with a tighter tolerance. Likelihood
/// ratios smaller than the search tolerance are only meaningful after this.
/// The chain summaries and start bookkeeping are kept; the trace is extended.
/// Fits that did not converge within their own limits are returned as is.
pub fn refine(
    fit: &FitResult,
    data: &AggregatedData,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    if !fit.converged() {
        return Ok(fit.clone());
    }
    let config = FitConfig {
        tol,
        max_iter,
        ..fit.config.clone()
    };
    config.validate()?;
    let chain = run_chain(
        &fit.design,
        data,
        fit.params.clone(),
        fit.best_start,
        &config,
        &Restriction::default(),
    );
    if let Some(e) = chain.error {
        return Err(Error::Data(format!(
            "refining the selected fit failed: {e}"
        )));
    }
    if chain.status == ChainStatus::Degenerate || !(chain.loglik >= fit.loglik.loglik) {
        return Ok(fit.clone());
    }
    let mut out = fit.clone();
    out.loglik.loglik = chain.loglik;
    out.bic = bic(out.loglik.minus_two_loglik(), out.n_parameters, out.n_cells);
    out.iterations += chain.iterations;
    out.trace.extend_from_slice(&chain.trace[1..]);
    out.params = chain.params;
    out.weights = chain.weights;
    out.config = config;
    Ok(out)
}

/// Embed a fit with R classes into R + 1 classes by splitting its largest
/// class in two. With `jitter = 0` the likelihood is unchanged.
pub fn split_largest_class(fit: &FitResult, target: &Design, jitter: f64, seed: u64) -> Parameters {
    let source = &fit.design;
    let old_r = source.n_classes();
    let largest = (0..old_r).fold(0, |best, r| {
        if fit.params.masses[r] > fit.params.masses[best] {
            r
        } else {
            best
        }
    });
    let n_fixed = source.n_fixed();
    let mut coefficients = vec![0.0; target.n_coefficients()];
    coefficients[..n_fixed].copy_from_slice(&fit.params.coefficients[..n_fixed]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // New classes 0..old_r-1 keep the old non-reference classes, class
    // old_r - 1 is the copy of the largest, class old_r is the old reference.
    for (c, col) in target.columns().iter().enumerate() {
        if let ColumnKind::Location { class, item } = col.kind {
            coefficients[c] = if class + 1 < old_r {
                fit.params.location(source, class, item)
            } else {
                let base = fit.params.location(source, largest, item);
                if jitter > 0.0 {
                    base + rng.random_range(-jitter..=jitter)
                } else {
                    base
                }
            };
        }
    }
    let mut masses = Vec::with_capacity(old_r + 1);
    for r in 0..old_r - 1 {
        masses.push(fit.params.masses[r]);
    }
    masses.push(fit.params.masses[largest]);
    masses.push(fit.params.masses[old_r - 1]);
    // halve the two copies of the largest class
    let copy_idx = old_r - 1;
    let orig_idx = if largest == old_r - 1 { old_r } else { largest };
    masses[copy_idx] /= 2.0;
    masses[orig_idx] = masses[copy_idx];
    Parameters {
        coefficients,
        masses,
    }
}

#[derive(Debug, Clone)]
pub struct SearchEntry {
    pub classes: usize,
    pub fit: std::result::Result<FitResult, String>,
}

#[derive(Debug, Clone)]
pub struct ClassSearch {
    pub entries: Vec<SearchEntry>,
    /// Class count with the lowest BIC, if any fit succeeded.
    pub selected: Option<usize>,
}

impl ClassSearch {
    pub fn selected_fit(&self) -> Option<&FitResult> {
        let r = self.selected?;
        self.entries
            .iter()
            .find(|e| e.classes == r)?
            .fit
            .as_ref()
            .ok()
    }
}

/// Fit every class count in `range` and select the lowest BIC. Each fit
/// after the first also gets warm starts from the previous class count.
pub fn search_classes(
    template: &ModelSpec,
    data: &AggregatedData,
    config: &FitConfig,
    range: &[usize],
) -> Result<ClassSearch> {
    if range.is_empty() || range.windows(2).any(|w| w[0] >= w[1]) || range[0] < 1 {
        return Err(Error::Config(
            "class range must be nonempty, ascending, and start at 1 or more".into(),
        ));
    }
    let mut entries: Vec<SearchEntry> = Vec::with_capacity(range.len());
    for &r in range {
        let spec = template.with_classes(r);
        let result = Design::new(&spec, data).and_then(|design| {
            let mut warm = Vec::new();
            if let Some(prev) = entries.last().and_then(|e| e.fit.as_ref().ok()) {
                if prev.design.n_classes() + 1 == r {
                    warm.push(split_largest_class(prev, &design, 0.0, config.seed));
                    warm.push(split_largest_class(
                        prev,
                        &design,
                        0.5 * config.start_scale,
                        config.seed,
                    ));
                }
            }
            fit_design(design, data, config, warm)
        });
        entries.push(SearchEntry {
            classes: r,
            fit: result.map_err(|e| e.to_string()),
        });
    }
    let selected = entries
        .iter()
        .filter_map(|e| e.fit.as_ref().ok().map(|f| (e.classes, f.bic)))
        .fold(None::<(usize, f64)>, |best, (r, b)| match best {
            Some((_, bb)) if bb <= b => best,
            _ => Some((r, b)),
        })
        .map(|(r, _)| r);
    Ok(ClassSearch { entries, selected })
}

#[derive(Debug, Clone)]
pub struct TermSearchEntry {
    pub formula: String,
    pub fit: std::result::Result<FitResult, String>,
}

/// Fixed-effects comparison of covariate models (one class each) on the
/// same table.
pub fn search_terms(
    items: &[String],
    formulas: &[String],
    data: &AggregatedData,
    config: &FitConfig,
) -> Vec<TermSearchEntry> {
    formulas
        .iter()
        .map(|formula| {
            let fit = crate::model::parse_terms(formula, data.covariates())
                .and_then(|terms| ModelSpec::new(items.to_vec(), terms, 1))
                .and_then(|spec| fit(&spec, data, config))
                .map_err(|e| e.to_string());
            TermSearchEntry {
                formula: formula.clone(),
                fit,
            }
        })
        .collect()
}
