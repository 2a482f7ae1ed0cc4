//! Pattern model: design structure, linear predictors, pattern probabilities,
//! worths, and the mixture log-likelihood with its analytic score.
//!
//! Item effects for covariate set `k` and latent class `r` are
//! `mu_j = lambda_jk + delta_jr`. The linear predictor of a pattern is
//! `sum_{i<j} y_ij (mu_i - mu_j)`, which equals `sum_j s_j mu_j` where `s_j`
//! is item j's wins minus losses in the pattern. Pattern probabilities are a
//! softmax of the linear predictor over the transitive pattern space, so the
//! per-pair normalizing constants of the Bradley-Terry model never appear.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::{AggregatedData, CovariateInfo};

/// A covariate term acting on the item effects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Term {
    /// item x factor (or item x factor x factor ...) interaction,
    /// reference-level dummy coding.
    Factor { factors: Vec<String> },
    /// item x continuous slope.
    Continuous { covariate: String },
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Factor { factors } => write!(f, "{}", factors.join(":")),
            Term::Continuous { covariate } => write!(f, "{covariate}"),
        }
    }
}

/// Parse a formula such as `AGE+SEX+AGE:SEX`. An empty formula, `1`, or
/// `null` gives the model without covariates.
pub fn parse_terms(formula: &str, covariates: &[CovariateInfo]) -> Result<Vec<Term>> {
    let formula = formula.trim();
    if formula.is_empty() || formula == "1" || formula.eq_ignore_ascii_case("null") {
        return Ok(Vec::new());
    }
    let mut terms = Vec::new();
    for piece in formula.split('+') {
        let names: Vec<String> = piece.split(':').map(|s| s.trim().to_string()).collect();
        if names.iter().any(|n| n.is_empty()) {
            return Err(Error::Config(format!("empty name in term '{piece}'")));
        }
        let kinds: Vec<&CovariateInfo> = names
            .iter()
            .map(|n| {
                covariates
                    .iter()
                    .find(|c| c.name() == n)
                    .ok_or_else(|| Error::Config(format!("unknown covariate '{n}' in formula")))
            })
            .collect::<Result<_>>()?;
        let term = match kinds.as_slice() {
            [CovariateInfo::Continuous { name, .. }] => Term::Continuous {
                covariate: name.clone(),
            },
            _ if kinds
                .iter()
                .all(|c| matches!(c, CovariateInfo::Factor { .. })) =>
            {
                Term::Factor { factors: names }
            }
            _ => {
                return Err(Error::Config(format!(
                    "term '{piece}': continuous covariates enter only as single slope terms"
                )))
            }
        };
        if terms.contains(&term) {
            return Err(Error::Config(format!("duplicate term '{piece}'")));
        }
        terms.push(term);
    }
    Ok(terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub items: Vec<String>,
    pub terms: Vec<Term>,
    /// Number of mass points R; the last class is the reference.
    pub classes: usize,
    /// Item whose effects are fixed at zero (default: the last item).
    pub reference_item: usize,
}

impl ModelSpec {
    pub fn new(items: Vec<String>, terms: Vec<Term>, classes: usize) -> Result<Self> {
        let reference_item = items.len().saturating_sub(1);
        let spec = Self {
            items,
            terms,
            classes,
            reference_item,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.len() < 2 {
            return Err(Error::Config("need at least 2 items".into()));
        }
        if self.classes < 1 {
            return Err(Error::Config("number of classes must be at least 1".into()));
        }
        if self.reference_item >= self.items.len() {
            return Err(Error::Config("reference item out of range".into()));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        Self {
            classes,
            ..self.clone()
        }
    }

    pub fn formula(&self) -> String {
        if self.terms.is_empty() {
            "null".into()
        } else {
            self.terms
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    /// Item main effect.
    Item { item: usize },
    /// Item x factor-level interaction; `levels` are the non-reference level
    /// indices of the term's factors.
    Factor {
        term: usize,
        item: usize,
        levels: Vec<usize>,
    },
    /// Item x continuous slope.
    Slope { term: usize, item: usize },
    /// Mass-point location of a non-reference class.
    Location { class: usize, item: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Design structure for a model over a particular dataset.
#[derive(Debug, Clone)]
pub struct Design {
    spec: ModelSpec,
    columns: Vec<Column>,
    n_patterns: usize,
    n_sets: usize,
    /// Wins-minus-losses scores, row-major L x J.
    scores: Vec<f64>,
    /// Block (k, r) at index `k * R + r`: J x P map from coefficients to item effects.
    blocks: Vec<DMatrix<f64>>,
    covariates: Vec<CovariateInfo>,
}

impl Design {
    pub fn new(spec: &ModelSpec, data: &AggregatedData) -> Result<Self> {
        spec.validate()?;
        let n_items = spec.n_items();
        if data.space().n_items() != n_items {
            return Err(Error::Data(format!(
                "model has {n_items} items but data patterns cover {}",
                data.space().n_items()
            )));
        }
        let free_items: Vec<usize> = (0..n_items).filter(|&j| j != spec.reference_item).collect();
        let covariates = data.covariates().to_vec();
        let factor_pos = |name: &str| {
            covariates
                .iter()
                .filter(|c| matches!(c, CovariateInfo::Factor { .. }))
                .position(|c| c.name() == name)
        };
        let continuous_pos = |name: &str| {
            covariates
                .iter()
                .filter(|c| matches!(c, CovariateInfo::Continuous { .. }))
                .position(|c| c.name() == name)
        };

        let mut columns: Vec<Column> = free_items
            .iter()
            .map(|&item| Column {
                name: spec.items[item].clone(),
                kind: ColumnKind::Item { item },
            })
            .collect();

        // Per term: (factor positions, level combos) for factor terms.
        for (t, term) in spec.terms.iter().enumerate() {
            match term {
                Term::Factor { factors } => {
                    let mut level_lists = Vec::new();
                    for f in factors {
                        let pos = factor_pos(f).ok_or_else(|| {
                            Error::Config(format!(
                                "term '{term}' names '{f}', which is not a factor covariate"
                            ))
                        })?;
                        let n_levels = match covariates.iter().find(|c| c.name() == f) {
                            Some(CovariateInfo::Factor { levels, .. }) => levels.len(),
                            _ => unreachable!(),
                        };
                        level_lists.push((pos, n_levels));
                    }
                    let combos = non_reference_combos(
                        &level_lists.iter().map(|(_, n)| *n).collect::<Vec<_>>(),
                    );
                    for &item in &free_items {
                        for combo in &combos {
                            let label = factors
                                .iter()
                                .zip(combo)
                                .map(|(f, &lv)| {
                                    let levels = match covariates.iter().find(|c| c.name() == f) {
                                        Some(CovariateInfo::Factor { levels, .. }) => levels,
                                        _ => unreachable!(),
                                    };
                                    format!("{f}={}", levels[lv])
                                })
                                .collect::<Vec<_>>()
                                .join(":");
                            columns.push(Column {
                                name: format!("{}:{label}", spec.items[item]),
                                kind: ColumnKind::Factor {
                                    term: t,
                                    item,
                                    levels: combo.clone(),
                                },
                            });
                        }
                    }
                }
                Term::Continuous { covariate } => {
                    continuous_pos(covariate).ok_or_else(|| {
                        Error::Config(format!("term '{term}' is not a continuous covariate"))
                    })?;
                    for &item in &free_items {
                        columns.push(Column {
                            name: format!("{}:{covariate}", spec.items[item]),
                            kind: ColumnKind::Slope { term: t, item },
                        });
                    }
                }
            }
        }
        for class in 0..spec.classes.saturating_sub(1) {
            for &item in &free_items {
                columns.push(Column {
                    name: format!("delta:{}:class{}", spec.items[item], class + 1),
                    kind: ColumnKind::Location { class, item },
                });
            }
        }

        // Factor positions of each term, resolved once.
        let term_factor_pos: Vec<Vec<usize>> = spec
            .terms
            .iter()
            .map(|t| match t {
                Term::Factor { factors } => {
                    factors.iter().map(|f| factor_pos(f).unwrap()).collect()
                }
                Term::Continuous { .. } => Vec::new(),
            })
            .collect();
        let term_cont: Vec<Option<(usize, f64, f64)>> = spec
            .terms
            .iter()
            .map(|t| match t {
                Term::Continuous { covariate } => {
                    let pos = continuous_pos(covariate).unwrap();
                    match covariates.iter().find(|c| c.name() == covariate) {
                        Some(CovariateInfo::Continuous { mean, sd, .. }) => Some((pos, *mean, *sd)),
                        _ => unreachable!(),
                    }
                }
                Term::Factor { .. } => None,
            })
            .collect();

        let n_classes = spec.classes;
        let p = columns.len();
        let mut blocks = Vec::with_capacity(data.n_sets() * n_classes);
        for set in data.sets() {
            for r in 0..n_classes {
                let mut m = DMatrix::<f64>::zeros(n_items, p);
                for (c, col) in columns.iter().enumerate() {
                    match &col.kind {
                        ColumnKind::Item { item } => m[(*item, c)] = 1.0,
                        ColumnKind::Factor { term, item, levels } => {
                            let hit = term_factor_pos[*term]
                                .iter()
                                .zip(levels)
                                .all(|(&pos, &lv)| set.levels[pos] == lv);
                            if hit {
                                m[(*item, c)] = 1.0;
                            }
                        }
                        ColumnKind::Slope { term, item } => {
                            let (pos, mean, sd) = term_cont[*term].unwrap();
                            m[(*item, c)] = (set.values[pos] - mean) / sd;
                        }
                        ColumnKind::Location { class, item } => {
                            if *class == r {
                                m[(*item, c)] = 1.0;
                            }
                        }
                    }
                }
                blocks.push(m);
            }
        }

        let space = data.space();
        let mut scores = Vec::with_capacity(space.len() * n_items);
        for pattern in space.patterns() {
            scores.extend_from_slice(&pattern.scores);
        }

        Ok(Self {
            spec: spec.clone(),
            columns,
            n_patterns: space.len(),
            n_sets: data.n_sets(),
            scores,
            blocks,
            covariates,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_coefficients(&self) -> usize {
        self.columns.len()
    }

    /// Coefficients other than mass-point locations.
    pub fn n_fixed(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| !matches!(c.kind, ColumnKind::Location { .. }))
            .count()
    }

    pub fn n_items(&self) -> usize {
        self.spec.n_items()
    }

    pub fn n_classes(&self) -> usize {
        self.spec.classes
    }

    pub fn n_sets(&self) -> usize {
        self.n_sets
    }

    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    pub fn block(&self, set: usize, class: usize) -> &DMatrix<f64> {
        &self.blocks[set * self.spec.classes + class]
    }

    pub fn pattern_scores(&self, pattern: usize) -> &[f64] {
        let j = self.n_items();
        &self.scores[pattern * j..(pattern + 1) * j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Item effects `lambda_jk + delta_jr` for one covariate set and class.
    pub fn item_effects(&self, set: usize, class: usize, coefficients: &[f64]) -> Vec<f64> {
        let m = self.block(set, class);
        (0..m.nrows())
            .map(|j| m.row(j).iter().zip(coefficients).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Linear predictor for every pattern in one (set, class) block.
    pub fn block_eta(&self, set: usize, class: usize, coefficients: &[f64]) -> Vec<f64> {
        let mu = self.item_effects(set, class, coefficients);
        let j = mu.len();
        self.scores
            .chunks_exact(j)
            .map(|s| s.iter().zip(&mu).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn linear_predictor(
        &self,
        pattern: usize,
        set: usize,
        class: usize,
        params: &Parameters,
    ) -> f64 {
        let mu = self.item_effects(set, class, &params.coefficients);
        self.pattern_scores(pattern)
            .iter()
            .zip(&mu)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Log pattern probabilities for one (set, class) block.
    pub fn log_pattern_probs(&self, set: usize, class: usize, params: &Parameters) -> Vec<f64> {
        log_softmax(&self.block_eta(set, class, &params.coefficients))
    }

    pub fn pattern_probs(&self, set: usize, class: usize, params: &Parameters) -> Vec<f64> {
        let mut p: Vec<f64> = self
            .log_pattern_probs(set, class, params)
            .into_iter()
            .map(f64::exp)
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    /// Log pattern probabilities for all blocks, indexed `[k * R + r][l]`.
    pub fn all_log_probs(&self, coefficients: &[f64]) -> Vec<Vec<f64>> {
        let r = self.n_classes();
        (0..self.n_sets * r)
            .map(|b| log_softmax(&self.block_eta(b / r, b % r, coefficients)))
            .collect()
    }

    /// Coefficients mapped back to the raw scale of continuous covariates.
    /// Slopes are divided by the covariate's sd and item main effects absorb
    /// the centring. Other coefficients are unchanged.
    pub fn raw_scale_coefficients(&self, coefficients: &[f64]) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .columns
            .iter()
            .zip(coefficients)
            .map(|(c, &v)| (c.name.clone(), v))
            .collect();
        for (c, col) in self.columns.iter().enumerate() {
            if let ColumnKind::Slope { term, item } = col.kind {
                let Term::Continuous { covariate } = &self.spec.terms[term] else {
                    continue;
                };
                let Some(CovariateInfo::Continuous { mean, sd, .. }) =
                    self.covariates.iter().find(|ci| ci.name() == covariate)
                else {
                    continue;
                };
                out[c].1 = coefficients[c] / sd;
                if let Some(main) = self
                    .columns
                    .iter()
                    .position(|m| m.kind == ColumnKind::Item { item })
                {
                    out[main].1 -= coefficients[c] * mean / sd;
                }
            }
        }
        out
    }
}

/// Level-index combinations excluding the reference (first) level of each factor.
fn non_reference_combos(n_levels: &[usize]) -> Vec<Vec<usize>> {
    let mut combos = vec![Vec::new()];
    for &n in n_levels {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                (1..n).map(move |lv| {
                    let mut c = prefix.clone();
                    c.push(lv);
                    c
                })
            })
            .collect();
    }
    combos
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| v - lse).collect()
}

/// Probability that item i is preferred to item j given their effects.
pub fn pairwise_prob(lambda_i: f64, lambda_j: f64) -> Result<f64> {
    if !lambda_i.is_finite() || !lambda_j.is_finite() {
        return Err(Error::Domain("item effects must be finite".into()));
    }
    let (a, b) = (2.0 * lambda_i, 2.0 * lambda_j);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    Ok(ea / (ea + eb))
}

/// Item worths, normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorthVector(pub Vec<f64>);

impl WorthVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn worths(item_effects: &[f64]) -> WorthVector {
    let doubled: Vec<f64> = item_effects.iter().map(|l| 2.0 * l).collect();
    let mut w: Vec<f64> = log_softmax(&doubled).into_iter().map(f64::exp).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    WorthVector(w)
}

/// Odds multiplier for a half-log-odds effect: `exp(2 * effect)`.
pub fn odds_multiplier(effect: f64) -> f64 {
    (2.0 * effect).exp()
}

/// Structural coefficients (including mass-point locations) and mass
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub coefficients: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Parameters {
    pub fn zeros(design: &Design) -> Self {
        let r = design.n_classes();
        Self {
            coefficients: vec![0.0; design.n_coefficients()],
            masses: vec![1.0 / r as f64; r],
        }
    }

    pub fn validate(&self, design: &Design) -> Result<()> {
        if self.coefficients.len() != design.n_coefficients()
            || self.masses.len() != design.n_classes()
        {
            return Err(Error::Domain(
                "parameter dimensions do not match the design".into(),
            ));
        }
        if self.coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.masses.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
            return Err(Error::Domain(
                "mass probabilities must lie in (0, 1] and sum to 1".into(),
            ));
        }
        Ok(())
    }

    /// Location of class `r` for item `j` (zero for reference entries).
    pub fn location(&self, design: &Design, class: usize, item: usize) -> f64 {
        design
            .columns()
            .iter()
            .position(|c| c.kind == ColumnKind::Location { class, item })
            .map_or(0.0, |i| self.coefficients[i])
    }

    /// Unconstrained vector: coefficients then log(q_r / q_R) for r < R.
    pub fn to_free(&self) -> Vec<f64> {
        let last = self.masses.last().copied().unwrap_or(1.0);
        let mut v = self.coefficients.clone();
        v.extend(
            self.masses[..self.masses.len() - 1]
                .iter()
                .map(|q| (q / last).ln()),
        );
        v
    }

    pub fn from_free(design: &Design, free: &[f64]) -> Self {
        let p = design.n_coefficients();
        let mut logits = free[p..].to_vec();
        logits.push(0.0);
        let masses = log_softmax(&logits).into_iter().map(f64::exp).collect();
        Self {
            coefficients: free[..p].to_vec(),
            masses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub loglik: f64,
    /// Log-likelihood of the saturated multinomial, p_lk = n_lk / n_+k.
    pub saturated: f64,
}

impl LogLikelihood {
    pub fn minus_two_loglik(&self) -> f64 {
        -2.0 * self.loglik
    }

    pub fn deviance(&self) -> f64 {
        2.0 * (self.saturated - self.loglik)
    }
}

pub fn saturated_loglik(data: &AggregatedData) -> f64 {
    data.counts()
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .filter(|&&n| n > 0)
                .map(|&n| n as f64 * (n as f64 / total as f64).ln())
                .sum::<f64>()
        })
        .sum()
}

fn check_sets_nonempty(data: &AggregatedData) -> Result<()> {
    if let Some(k) = (0..data.n_sets()).find(|&k| data.set_total(k) == 0) {
        return Err(Error::Data(format!(
            "covariate set {k} ({}) has no respondents",
            data.set_label(k)
        )));
    }
    Ok(())
}

/// `sum_lk n_lk ln(sum_r q_r P_lkr)` and the saturated log-likelihood.
pub fn mixture_loglik(
    design: &Design,
    data: &AggregatedData,
    params: &Parameters,
) -> Result<LogLikelihood> {
    check_sets_nonempty(data)?;
    let log_probs = design.all_log_probs(&params.coefficients);
    Ok(LogLikelihood {
        loglik: loglik_from_log_probs(design, data, &params.masses, &log_probs),
        saturated: saturated_loglik(data),
    })
}

pub(crate) fn loglik_from_log_probs(
    design: &Design,
    data: &AggregatedData,
    masses: &[f64],
    log_probs: &[Vec<f64>],
) -> f64 {
    let n_classes = design.n_classes();
    let log_q: Vec<f64> = masses.iter().map(|q| q.ln()).collect();
    let mut total = 0.0;
    let mut terms = vec![0.0; n_classes];
    for (k, row) in data.counts().iter().enumerate() {
        for (l, &n) in row.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for r in 0..n_classes {
                terms[r] = log_q[r] + log_probs[k * n_classes + r][l];
            }
            total += n as f64 * log_sum_exp(&terms);
        }
    }
    total
}

/// Analytic score of the mixture log-likelihood with respect to the free
/// parameterization returned by [`Parameters::to_free`].
pub fn mixture_score(design: &Design, data: &AggregatedData, params: &Parameters) -> Vec<f64> {
    let n_classes = design.n_classes();
    let n_items = design.n_items();
    let p = design.n_coefficients();
    let log_probs = design.all_log_probs(&params.coefficients);
    let log_q: Vec<f64> = params.masses.iter().map(|q| q.ln()).collect();
    let mut grad = vec![0.0; p + n_classes - 1];
    let total = data.total() as f64;
    let mut class_weight = vec![0.0; n_classes];
    let mut terms = vec![0.0; n_classes];
    for k in 0..data.n_sets() {
        // Accumulate sum_l n w (s_l - E[s]) per class, as a J-vector.
        let mut resid = vec![vec![0.0; n_items]; n_classes];
        let mut weight_total = vec![0.0; n_classes];
        for l in 0..design.n_patterns() {
            let n = data.count(k, l);
            if n == 0 {
                continue;
            }
            for r in 0..n_classes {
                terms[r] = log_q[r] + log_probs[k * n_classes + r][l];
            }
            let lse = log_sum_exp(&terms);
            let s = design.pattern_scores(l);
            for r in 0..n_classes {
                let nw = n as f64 * (terms[r] - lse).exp();
                weight_total[r] += nw;
                class_weight[r] += nw;
                for j in 0..n_items {
                    resid[r][j] += nw * s[j];
                }
            }
        }
        for r in 0..n_classes {
            let lp = &log_probs[k * n_classes + r];
            let mut mean_s = vec![0.0; n_items];
            for (l, &lpl) in lp.iter().enumerate() {
                let pr = lpl.exp();
                for (m, s) in mean_s.iter_mut().zip(design.pattern_scores(l)) {
                    *m += pr * s;
                }
            }
            let v: Vec<f64> = (0..n_items)
                .map(|j| resid[r][j] - weight_total[r] * mean_s[j])
                .collect();
            let block = design.block(k, r);
            for c in 0..p {
                grad[c] += (0..n_items).map(|j| block[(j, c)] * v[j]).sum::<f64>();
            }
        }
    }
    for r in 0..n_classes - 1 {
        grad[p + r] = class_weight[r] - total * params.masses[r];
    }
    grad
}

/// How the mass probabilities enter the parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassCounting {
    /// Structural coefficients plus one nuisance parameter per covariate set.
    #[default]
    ExcludeMasses,
    /// Additionally count the R - 1 free mass probabilities.
    IncludeMasses,
}

pub fn count_parameters(design: &Design, mode: MassCounting) -> usize {
    let masses = match mode {
        MassCounting::ExcludeMasses => 0,
        MassCounting::IncludeMasses => design.n_classes() - 1,
    };
    design.n_coefficients() + design.n_sets() + masses
}

/// `-2 ln L + p ln(LK)`.
pub fn bic(minus_two_loglik: f64, n_parameters: usize, n_cells: usize) -> f64 {
    minus_two_loglik + n_parameters as f64 * (n_cells as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{enumerate_transitive_patterns, CovariateSet};
    use std::sync::Arc;

    fn factor(name: &str, levels: &[&str]) -> CovariateInfo {
        CovariateInfo::Factor {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn items(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    fn uniform_data(
        n_items: usize,
        sets: Vec<CovariateSet>,
        covs: Vec<CovariateInfo>,
    ) -> AggregatedData {
        let space = Arc::new(enumerate_transitive_patterns(n_items).unwrap());
        let counts = vec![vec![1; space.len()]; sets.len()];
        AggregatedData::from_counts(space, covs, sets, counts).unwrap()
    }

    fn survey_like_data() -> AggregatedData {
        let covs = vec![
            factor("AGE", &["15-24", "25-39", "40-54", "55+"]),
            factor("SEX", &["male", "female"]),
        ];
        let sets = (0..4)
            .flat_map(|a| {
                (0..2).map(move |s| CovariateSet {
                    levels: vec![a, s],
                    values: vec![],
                })
            })
            .collect();
        uniform_data(6, sets, covs)
    }

    #[test]
    fn pairwise_prob_examples() {
        assert_eq!(pairwise_prob(0.3, 0.3).unwrap(), 0.5);
        let p = pairwise_prob(0.5 * 2f64.ln(), 0.0).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        let mut last = 0.5;
        for x in [1.0, 5.0, 50.0, 500.0] {
            let p = pairwise_prob(x, 0.0).unwrap();
            assert!(p >= last && p <= 1.0);
            last = p;
        }
        assert!((last - 1.0).abs() < 1e-15);
        assert!(pairwise_prob(f64::NAN, 0.0).is_err());
        assert!(pairwise_prob(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn worths_examples() {
        let w = worths(&[0.0; 4]);
        assert!(w.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let w = worths(&[0.5 * 2f64.ln(), 0.0]);
        assert!((w.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.values()[1] - 1.0 / 3.0).abs() < 1e-15);
        let shifted = worths(&[0.5 * 2f64.ln() + 3.0, 3.0]);
        assert!((shifted.values()[0] - w.values()[0]).abs() < 1e-12);
    }

    #[test]
    fn parameter_counts_of_media_models() {
        let data = survey_like_data();
        let items = items(6);
        let count = |formula: &str, r: usize| {
            let terms = parse_terms(formula, data.covariates()).unwrap();
            let spec = ModelSpec::new(items.clone(), terms, r).unwrap();
            let design = Design::new(&spec, &data).unwrap();
            count_parameters(&design, MassCounting::ExcludeMasses)
        };
        assert_eq!(count("null", 1), 13);
        assert_eq!(count("AGE", 1), 28);
        assert_eq!(count("SEX", 1), 18);
        assert_eq!(count("AGE+SEX", 1), 33);
        assert_eq!(count("AGE+SEX+AGE:SEX", 1), 48);
        for (r, p) in [(2, 18), (3, 23), (4, 28), (8, 48)] {
            assert_eq!(count("null", r), p);
        }
        for (r, p) in [(2, 38), (6, 58), (8, 68)] {
            assert_eq!(count("AGE+SEX", r), p);
        }
        let terms = parse_terms("AGE+SEX", data.covariates()).unwrap();
        let design = Design::new(&ModelSpec::new(items, terms, 6).unwrap(), &data).unwrap();
        assert_eq!(count_parameters(&design, MassCounting::IncludeMasses), 63);
    }

    #[test]
    fn media_model_bic_arithmetic() {
        // the deviances below are rounded, so the last digit may differ by one
        assert_eq!(bic(21293.0, 13, 5760).round(), 21406.0);
        assert!((bic(17815.0, 33, 5760).round() - 18100.0).abs() <= 1.0);
    }

    #[test]
    fn linear_predictor_expansion() {
        let data = uniform_data(
            3,
            vec![CovariateSet {
                levels: vec![],
                values: vec![],
            }],
            vec![],
        );
        let spec = ModelSpec::new(items(3), vec![], 1).unwrap();
        let design = Design::new(&spec, &data).unwrap();
        let mut params = Parameters::zeros(&design);
        for l in 0..6 {
            assert_eq!(design.linear_predictor(l, 0, 0, &params), 0.0);
        }
        params.coefficients = vec![0.7, -0.2];
        // pattern 0 is the identity order 1 > 2 > 3
        assert!((design.linear_predictor(0, 0, 0, &params) - 1.4).abs() < 1e-15);
        let p = design.pattern_probs(0, 0, &Parameters::zeros(&design));
        assert!(p.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn formula_parsing() {
        let covs = vec![
            factor("A", &["a", "b"]),
            CovariateInfo::Continuous {
                name: "x".into(),
                mean: 0.0,
                sd: 1.0,
            },
        ];
        assert!(parse_terms("", &covs).unwrap().is_empty());
        assert_eq!(parse_terms("A + x", &covs).unwrap().len(), 2);
        assert!(parse_terms("A:x", &covs).is_err());
        assert!(parse_terms("B", &covs).is_err());
        assert!(parse_terms("A+A", &covs).is_err());
    }

    #[test]
    fn factor_coding_uses_first_level_as_reference() {
        let covs = vec![factor("A", &["a", "b", "c"])];
        let sets = (0..3)
            .map(|a| CovariateSet {
                levels: vec![a],
                values: vec![],
            })
            .collect();
        let data = uniform_data(3, sets, covs);
        let terms = parse_terms("A", data.covariates()).unwrap();
        let design = Design::new(&ModelSpec::new(items(3), terms, 2).unwrap(), &data).unwrap();
        let names = design.column_names();
        assert_eq!(
            names,
            vec![
                "i0",
                "i1",
                "i0:A=b",
                "i0:A=c",
                "i1:A=b",
                "i1:A=c",
                "delta:i0:class1",
                "delta:i1:class1"
            ]
        );
        // set 0 (reference level), class 1 (reference class): only main effects
        let b = design.block(0, 1);
        assert_eq!(b.row(0).iter().sum::<f64>(), 1.0);
        assert_eq!(b.row(2).iter().sum::<f64>(), 0.0);
        // set 2, class 0: main + level c + location
        let b = design.block(2, 0);
        assert_eq!(b[(0, 0)], 1.0);
        assert_eq!(b[(0, 3)], 1.0);
        assert_eq!(b[(0, 6)], 1.0);
        assert_eq!(b[(0, 2)], 0.0);
    }

    #[test]
    fn saturated_model_has_zero_deviance() {
        let data = uniform_data(
            3,
            vec![CovariateSet {
                levels: vec![],
                values: vec![],
            }],
            vec![],
        );
        let spec = ModelSpec::new(items(3), vec![], 1).unwrap();
        let design = Design::new(&spec, &data).unwrap();
        let ll = mixture_loglik(&design, &data, &Parameters::zeros(&design)).unwrap();
        assert!(ll.deviance().abs() < 1e-12);
        assert!((ll.loglik - 6.0 * (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_covariate_set_is_a_data_error() {
        let space = Arc::new(enumerate_transitive_patterns(3).unwrap());
        let covs = vec![factor("A", &["a", "b"])];
        let sets = (0..2)
            .map(|a| CovariateSet {
                levels: vec![a],
                values: vec![],
            })
            .collect();
        let counts = vec![vec![1; 6], vec![0; 6]];
        let data = AggregatedData::from_counts(space, covs, sets, counts).unwrap();
        let spec = ModelSpec::new(items(3), vec![], 1).unwrap();
        let design = Design::new(&spec, &data).unwrap();
        assert!(matches!(
            mixture_loglik(&design, &data, &Parameters::zeros(&design)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn free_parameterization_round_trip() {
        let data = uniform_data(
            3,
            vec![CovariateSet {
                levels: vec![],
                values: vec![],
            }],
            vec![],
        );
        let design = Design::new(&ModelSpec::new(items(3), vec![], 3).unwrap(), &data).unwrap();
        let params = Parameters {
            coefficients: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            masses: vec![0.2, 0.5, 0.3],
        };
        let back = Parameters::from_free(&design, &params.to_free());
        assert_eq!(back.coefficients, params.coefficients);
        for (a, b) in back.masses.iter().zip(&params.masses) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(params.location(&design, 1, 0), 0.5);
        assert_eq!(params.location(&design, 2, 0), 0.0);
        assert_eq!(params.location(&design, 0, 2), 0.0);
    }

    #[test]
    fn raw_scale_back_transform() {
        let space = Arc::new(enumerate_transitive_patterns(2).unwrap());
        let covs = vec![CovariateInfo::Continuous {
            name: "x".into(),
            mean: 10.0,
            sd: 2.0,
        }];
        let sets = vec![
            CovariateSet {
                levels: vec![],
                values: vec![8.0],
            },
            CovariateSet {
                levels: vec![],
                values: vec![12.0],
            },
        ];
        let data =
            AggregatedData::from_counts(space, covs, sets, vec![vec![1, 1], vec![1, 1]]).unwrap();
        let terms = parse_terms("x", data.covariates()).unwrap();
        let design = Design::new(&ModelSpec::new(items(2), terms, 1).unwrap(), &data).unwrap();
        let coefs = [0.3, 0.4];
        let raw = design.raw_scale_coefficients(&coefs);
        // lambda(x) = 0.3 + 0.4 (x - 10) / 2 = -1.7 + 0.2 x
        assert!((raw[1].1 - 0.2).abs() < 1e-15);
        assert!((raw[0].1 + 1.7).abs() < 1e-12);
        let eff = design.item_effects(1, 0, &coefs);
        assert!((eff[0] - (raw[0].1 + raw[1].1 * 12.0)).abs() < 1e-12);
    }
}
