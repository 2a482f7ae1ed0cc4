//! Rankings, paired-comparison patterns, the transitive pattern space, and
//! aggregation of respondent rows into a (covariate set x pattern) count table.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of items; 8! = 40320 patterns.
pub const DEFAULT_MAX_ITEMS: usize = 8;

/// Rank position of each item, 1 = most preferred.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankVector(Vec<usize>);

/// Item indices (0-based) listed from most to least preferred.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderVector(Vec<usize>);

fn check_permutation(values: &[usize], offset: usize) -> std::result::Result<(), String> {
    let n = values.len();
    if n < 2 {
        return Err(format!("need at least 2 items, got {n}"));
    }
    let mut seen = vec![false; n];
    for &v in values {
        if v < offset || v >= n + offset {
            return Err(format!("value {v} outside {}..={}", offset, n + offset - 1));
        }
        if seen[v - offset] {
            return Err(format!("value {v} appears more than once (tie)"));
        }
        seen[v - offset] = true;
    }
    Ok(())
}

impl RankVector {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        check_permutation(&ranks, 1).map_err(|message| Error::Validation { row: 0, message })?;
        Ok(RankVector(ranks))
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    pub fn n_items(&self) -> usize {
        self.0.len()
    }

    pub fn to_order(&self) -> OrderVector {
        let mut order = vec![0; self.0.len()];
        for (item, &rank) in self.0.iter().enumerate() {
            order[rank - 1] = item;
        }
        OrderVector(order)
    }
}

impl OrderVector {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        check_permutation(&order, 0).map_err(|message| Error::Validation { row: 0, message })?;
        Ok(OrderVector(order))
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn to_ranks(&self) -> RankVector {
        let mut ranks = vec![0; self.0.len()];
        for (pos, &item) in self.0.iter().enumerate() {
            ranks[item] = pos + 1;
        }
        RankVector(ranks)
    }

    /// Position of this permutation in lexicographic order (Lehmer code).
    pub fn lex_index(&self) -> usize {
        let n = self.0.len();
        let mut used = vec![false; n];
        let mut index = 0;
        for (pos, &item) in self.0.iter().enumerate() {
            let smaller_unused = (0..item).filter(|&v| !used[v]).count();
            index += smaller_unused * factorial(n - 1 - pos);
            used[item] = true;
        }
        index
    }
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

pub fn n_pairs(n_items: usize) -> usize {
    n_items * n_items.saturating_sub(1) / 2
}

/// 0-based position of pair (i, j) in the sequence (12),(13),...,(1J),(23),...,((J-1)J).
pub fn pair_index(i: usize, j: usize, n_items: usize) -> Result<usize> {
    if i >= j || j >= n_items {
        return Err(Error::Domain(format!(
            "pair ({i}, {j}) requires 0 <= i < j < {n_items}"
        )));
    }
    // pairs preceding row i: sum_{a<i} (J-1-a)
    Ok(i * (2 * n_items - i - 1) / 2 + (j - i - 1))
}

/// A vector of +1/-1 over all item pairs in the standard sequence;
/// `+1` at (i, j) means item i is preferred to item j.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairedComparisonPattern {
    n_items: usize,
    y: Vec<i8>,
}

impl PairedComparisonPattern {
    pub fn new(n_items: usize, y: Vec<i8>) -> Result<Self> {
        if n_items < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 items, got {n_items}"
            )));
        }
        if y.len() != n_pairs(n_items) {
            return Err(Error::Domain(format!(
                "pattern length {} does not match C({n_items},2) = {}",
                y.len(),
                n_pairs(n_items)
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Domain(format!(
                "pattern entries must be +1 or -1, found {bad}"
            )));
        }
        Ok(Self { n_items, y })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn values(&self) -> &[i8] {
        &self.y
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        if i < j {
            self.y[pair_index(i, j, self.n_items).expect("valid pair")]
        } else {
            -self.y[pair_index(j, i, self.n_items).expect("valid pair")]
        }
    }

    /// Number of comparisons each item wins.
    pub fn wins(&self) -> Vec<usize> {
        let mut wins = vec![0; self.n_items];
        let mut idx = 0;
        for i in 0..self.n_items {
            for j in i + 1..self.n_items {
                if self.y[idx] > 0 {
                    wins[i] += 1;
                } else {
                    wins[j] += 1;
                }
                idx += 1;
            }
        }
        wins
    }
}

pub fn ranks_to_pattern(ranks: &RankVector) -> PairedComparisonPattern {
    let r = ranks.ranks();
    let n = r.len();
    let mut y = Vec::with_capacity(n_pairs(n));
    for i in 0..n {
        for j in i + 1..n {
            y.push(if r[i] < r[j] { 1 } else { -1 });
        }
    }
    PairedComparisonPattern { n_items: n, y }
}

/// True iff the tournament has no 3-cycle, i.e. the win counts are a
/// permutation of 0..J-1.
pub fn is_transitive(pattern: &PairedComparisonPattern) -> bool {
    let mut wins = pattern.wins();
    wins.sort_unstable();
    wins.iter().enumerate().all(|(expected, &w)| w == expected)
}

/// The ranking recovered from a transitive pattern.
pub fn pattern_to_ranks(pattern: &PairedComparisonPattern) -> Result<RankVector> {
    if !is_transitive(pattern) {
        return Err(Error::Domain("pattern is intransitive".into()));
    }
    let n = pattern.n_items();
    Ok(RankVector(
        pattern.wins().into_iter().map(|w| n - w).collect(),
    ))
}

/// One element of the transitive pattern space.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub order: OrderVector,
    pub ranks: RankVector,
    pub comparisons: PairedComparisonPattern,
    /// Wins minus losses for each item, `J + 1 - 2 * rank`. The linear
    /// predictor of a pattern is the dot product of these scores with the
    /// item effects.
    pub scores: Vec<f64>,
}

/// All J! transitive patterns, indexed by the lexicographic order of their
/// order vectors.
#[derive(Debug, Clone)]
pub struct PatternSpace {
    n_items: usize,
    patterns: Vec<Pattern>,
}

impl PatternSpace {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn pattern(&self, index: usize) -> &Pattern {
        &self.patterns[index]
    }

    pub fn index_of_ranks(&self, ranks: &RankVector) -> Result<usize> {
        if ranks.n_items() != self.n_items {
            return Err(Error::Domain(format!(
                "ranking has {} items, pattern space has {}",
                ranks.n_items(),
                self.n_items
            )));
        }
        Ok(ranks.to_order().lex_index())
    }
}

pub fn enumerate_transitive_patterns(n_items: usize) -> Result<PatternSpace> {
    enumerate_transitive_patterns_capped(n_items, DEFAULT_MAX_ITEMS)
}

pub fn enumerate_transitive_patterns_capped(
    n_items: usize,
    max_items: usize,
) -> Result<PatternSpace> {
    if n_items < 2 {
        return Err(Error::Capacity(format!(
            "need at least 2 items, got {n_items}"
        )));
    }
    if n_items > max_items {
        return Err(Error::Capacity(format!(
            "{n_items} items would need {n_items}! = {} patterns; the pattern space grows factorially and the cap is {max_items} items (raise it with the max-items override)",
            (1..=n_items as u128).product::<u128>()
        )));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut patterns = Vec::with_capacity(factorial(n_items));
    loop {
        let ov = OrderVector(order.clone());
        let ranks = ov.to_ranks();
        let comparisons = ranks_to_pattern(&ranks);
        let scores = ranks
            .ranks()
            .iter()
            .map(|&r| (n_items + 1) as f64 - 2.0 * r as f64)
            .collect();
        patterns.push(Pattern {
            order: ov,
            ranks,
            comparisons,
            scores,
        });
        if !next_permutation(&mut order) {
            break;
        }
    }
    Ok(PatternSpace { n_items, patterns })
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

// ---------------------------------------------------------------------------
// Covariates and aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovariateDecl {
    /// Categorical covariate. When `levels` is empty, observed levels are
    /// sorted; the first level is the reference.
    Factor {
        name: String,
        #[serde(default)]
        levels: Vec<String>,
    },
    Continuous {
        name: String,
    },
}

impl CovariateDecl {
    pub fn name(&self) -> &str {
        match self {
            CovariateDecl::Factor { name, .. } | CovariateDecl::Continuous { name } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Level(String),
    Value(f64),
}

/// One respondent: a complete ranking plus named covariate values.
#[derive(Debug, Clone)]
pub struct Respondent {
    pub ranking: RankVector,
    pub covariates: HashMap<String, CovariateValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovariateInfo {
    Factor {
        name: String,
        levels: Vec<String>,
    },
    /// Continuous covariates enter the design standardized as (x - mean) / sd.
    Continuous {
        name: String,
        mean: f64,
        sd: f64,
    },
}

impl CovariateInfo {
    pub fn name(&self) -> &str {
        match self {
            CovariateInfo::Factor { name, .. } | CovariateInfo::Continuous { name, .. } => name,
        }
    }
}

/// A distinct observed covariate combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    /// Level index for each factor covariate, in declaration order.
    pub levels: Vec<usize>,
    /// Raw value for each continuous covariate, in declaration order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AggregatedData {
    space: Arc<PatternSpace>,
    covariates: Vec<CovariateInfo>,
    sets: Vec<CovariateSet>,
    /// counts[k][l]: respondents in covariate set k with pattern l.
    counts: Vec<Vec<u64>>,
    /// (set, pattern) for each aggregated respondent row, in input order.
    row_cells: Vec<(usize, usize)>,
    total: u64,
}

impl AggregatedData {
    /// Build directly from a count table (used by simulations and tests).
    pub fn from_counts(
        space: Arc<PatternSpace>,
        covariates: Vec<CovariateInfo>,
        sets: Vec<CovariateSet>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if sets.len() != counts.len() {
            return Err(Error::Data(format!(
                "{} covariate sets but {} count rows",
                sets.len(),
                counts.len()
            )));
        }
        if let Some(row) = counts.iter().find(|row| row.len() != space.len()) {
            return Err(Error::Data(format!(
                "count row has {} entries, pattern space has {}",
                row.len(),
                space.len()
            )));
        }
        let total = counts.iter().flatten().sum();
        let mut row_cells = Vec::new();
        for (k, row) in counts.iter().enumerate() {
            for (l, &n) in row.iter().enumerate() {
                row_cells.extend(std::iter::repeat_n((k, l), n as usize));
            }
        }
        Ok(Self {
            space,
            covariates,
            sets,
            counts,
            row_cells,
            total,
        })
    }

    pub fn space(&self) -> &Arc<PatternSpace> {
        &self.space
    }

    pub fn covariates(&self) -> &[CovariateInfo] {
        &self.covariates
    }

    pub fn sets(&self) -> &[CovariateSet] {
        &self.sets
    }

    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn n_patterns(&self) -> usize {
        self.space.len()
    }

    /// Number of pattern-covariate cells, L * K.
    pub fn n_cells(&self) -> usize {
        self.n_patterns() * self.n_sets()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn count(&self, set: usize, pattern: usize) -> u64 {
        self.counts[set][pattern]
    }

    pub fn set_total(&self, set: usize) -> u64 {
        self.counts[set].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn row_cells(&self) -> &[(usize, usize)] {
        &self.row_cells
    }

    /// `(name, value)` for each covariate of a set, in declaration order.
    pub fn set_values(&self, set: usize) -> Vec<(String, String)> {
        let s = &self.sets[set];
        let (mut fi, mut ci) = (0, 0);
        self.covariates
            .iter()
            .map(|info| match info {
                CovariateInfo::Factor { name, levels } => {
                    fi += 1;
                    (name.clone(), levels[s.levels[fi - 1]].clone())
                }
                CovariateInfo::Continuous { name, .. } => {
                    ci += 1;
                    (name.clone(), s.values[ci - 1].to_string())
                }
            })
            .collect()
    }

    /// Human-readable label for a covariate set, e.g. `AGE=25-39,SEX=f`.
    pub fn set_label(&self, set: usize) -> String {
        let parts: Vec<String> = self
            .set_values(set)
            .into_iter()
            .map(|(name, value)| format!("{name}={value}"))
            .collect();
        if parts.is_empty() {
            "all".to_string()
        } else {
            parts.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SetKey {
    levels: Vec<usize>,
    values: Vec<f64>,
}

impl Eq for SetKey {}

impl PartialOrd for SetKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SetKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.levels.cmp(&other.levels).then_with(|| {
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }
}

/// Aggregate respondent rows into counts per (covariate set, pattern).
/// Covariate sets are ordered by factor level indices, then continuous values.
pub fn aggregate(
    space: Arc<PatternSpace>,
    rows: &[Respondent],
    decls: &[CovariateDecl],
) -> Result<AggregatedData> {
    let n_items = space.n_items();
    let lookup = |row: usize, r: &Respondent, name: &str| -> Result<CovariateValue> {
        r.covariates
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Validation {
                row,
                message: format!("unknown covariate name '{name}'"),
            })
    };

    // Resolve factor levels and continuous scaling.
    let mut infos = Vec::with_capacity(decls.len());
    for decl in decls {
        match decl {
            CovariateDecl::Factor { name, levels } => {
                let mut resolved = levels.clone();
                if resolved.is_empty() {
                    let mut seen = BTreeSet::new();
                    for (i, r) in rows.iter().enumerate() {
                        match lookup(i + 1, r, name)? {
                            CovariateValue::Level(l) => {
                                seen.insert(l);
                            }
                            CovariateValue::Value(v) => {
                                seen.insert(v.to_string());
                            }
                        }
                    }
                    resolved = seen.into_iter().collect();
                }
                infos.push(CovariateInfo::Factor {
                    name: name.clone(),
                    levels: resolved,
                });
            }
            CovariateDecl::Continuous { name } => {
                let mut xs = Vec::with_capacity(rows.len());
                for (i, r) in rows.iter().enumerate() {
                    xs.push(continuous_value(i + 1, name, lookup(i + 1, r, name)?)?);
                }
                let n = xs.len().max(1) as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                infos.push(CovariateInfo::Continuous {
                    name: name.clone(),
                    mean,
                    sd,
                });
            }
        }
    }

    let mut keys = Vec::with_capacity(rows.len());
    let mut patterns = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        if r.ranking.n_items() != n_items {
            return Err(Error::Validation {
                row,
                message: format!(
                    "ranking has {} items, expected {n_items}",
                    r.ranking.n_items()
                ),
            });
        }
        patterns.push(space.index_of_ranks(&r.ranking)?);
        let mut key = SetKey {
            levels: Vec::new(),
            values: Vec::new(),
        };
        for info in &infos {
            let value = lookup(row, r, info.name())?;
            match info {
                CovariateInfo::Factor { name, levels } => {
                    let label = match value {
                        CovariateValue::Level(l) => l,
                        CovariateValue::Value(v) => v.to_string(),
                    };
                    let idx = levels.iter().position(|l| *l == label).ok_or_else(|| {
                        Error::Validation {
                            row,
                            message: format!("level '{label}' is not a declared level of '{name}'"),
                        }
                    })?;
                    key.levels.push(idx);
                }
                CovariateInfo::Continuous { name, .. } => {
                    key.values.push(continuous_value(row, name, value)?);
                }
            }
        }
        keys.push(key);
    }

    let index: BTreeMap<SetKey, usize> = keys
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, key)| (key, k))
        .collect();
    let sets: Vec<CovariateSet> = index
        .keys()
        .map(|key| CovariateSet {
            levels: key.levels.clone(),
            values: key.values.clone(),
        })
        .collect();
    let mut counts = vec![vec![0u64; space.len()]; sets.len()];
    let mut row_cells = Vec::with_capacity(rows.len());
    for (key, &l) in keys.iter().zip(&patterns) {
        let k = index[key];
        counts[k][l] += 1;
        row_cells.push((k, l));
    }

    Ok(AggregatedData {
        space,
        covariates: infos,
        sets,
        counts,
        row_cells,
        total: rows.len() as u64,
    })
}

fn continuous_value(row: usize, name: &str, value: CovariateValue) -> Result<f64> {
    let v = match value {
        CovariateValue::Value(v) => v,
        CovariateValue::Level(s) => s.trim().parse::<f64>().map_err(|_| Error::Validation {
            row,
            message: format!("covariate '{name}' value '{s}' is not numeric"),
        })?,
    };
    if !v.is_finite() {
        return Err(Error::Validation {
            row,
            message: format!("covariate '{name}' is not finite"),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        let space = enumerate_transitive_patterns(n).unwrap();
        space
            .patterns()
            .iter()
            .map(|p| p.order.items().to_vec())
            .collect()
    }

    #[test]
    fn pair_index_examples() {
        assert_eq!(pair_index(0, 1, 3).unwrap(), 0);
        assert_eq!(pair_index(1, 2, 3).unwrap(), 2);
        assert_eq!(pair_index(0, 5, 6).unwrap(), 4);
        assert!(pair_index(2, 2, 3).is_err());
        assert!(pair_index(2, 1, 3).is_err());
        assert!(pair_index(1, 3, 3).is_err());
    }

    #[test]
    fn pair_index_is_bijective() {
        for n in 2..=8 {
            let mut seen = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    seen.push(pair_index(i, j, n).unwrap());
                }
            }
            assert_eq!(seen, (0..n_pairs(n)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn order_vector_example() {
        // items a,b,c,d = 0..3; order (c,a,b,d)
        let order = OrderVector::new(vec![2, 0, 1, 3]).unwrap();
        let y = ranks_to_pattern(&order.to_ranks());
        // (ab),(ac),(ad),(bc),(bd),(cd)
        assert_eq!(y.values(), &[1, -1, 1, -1, 1, 1]);
    }

    #[test]
    fn identity_and_reversed_two_items() {
        let y = ranks_to_pattern(&RankVector::new((1..=5).collect()).unwrap());
        assert!(y.values().iter().all(|&v| v == 1));
        let y = ranks_to_pattern(&RankVector::new(vec![2, 1]).unwrap());
        assert_eq!(y.values(), &[-1]);
    }

    #[test]
    fn ties_and_missing_ranks_rejected() {
        assert!(RankVector::new(vec![1, 1, 3]).is_err());
        assert!(RankVector::new(vec![1, 2, 4]).is_err());
        assert!(RankVector::new(vec![1]).is_err());
        assert!(OrderVector::new(vec![0, 0]).is_err());
    }

    #[test]
    fn transitivity_examples() {
        // (12),(13),(23): 1>2, 1>3, 2>3
        let p = PairedComparisonPattern::new(3, vec![1, 1, 1]).unwrap();
        assert!(is_transitive(&p));
        // 1>2, 2>3, 3>1
        let p = PairedComparisonPattern::new(3, vec![1, -1, 1]).unwrap();
        assert!(!is_transitive(&p));
        assert!(pattern_to_ranks(&p).is_err());
    }

    #[test]
    fn three_items_have_two_intransitive_sign_patterns() {
        let mut intransitive = 0;
        for bits in 0..8u8 {
            let y = (0..3)
                .map(|b| if bits >> b & 1 == 1 { 1 } else { -1 })
                .collect();
            let p = PairedComparisonPattern::new(3, y).unwrap();
            if !is_transitive(&p) {
                intransitive += 1;
            }
        }
        assert_eq!(intransitive, 2);
    }

    #[test]
    fn space_sizes_and_membership() {
        for (n, expected) in [(2, 2), (3, 6), (4, 24), (5, 120), (6, 720)] {
            let space = enumerate_transitive_patterns(n).unwrap();
            assert_eq!(space.len(), expected);
            let distinct: BTreeSet<_> = space
                .patterns()
                .iter()
                .map(|p| p.comparisons.values().to_vec())
                .collect();
            assert_eq!(distinct.len(), expected);
            for (l, p) in space.patterns().iter().enumerate() {
                assert!(is_transitive(&p.comparisons));
                assert_eq!(space.index_of_ranks(&p.ranks).unwrap(), l);
                assert_eq!(pattern_to_ranks(&p.comparisons).unwrap(), p.ranks);
            }
        }
        let two = enumerate_transitive_patterns(2).unwrap();
        assert_eq!(two.pattern(0).comparisons.values(), &[1]);
        assert_eq!(two.pattern(1).comparisons.values(), &[-1]);
    }

    #[test]
    fn capacity_limits() {
        assert!(matches!(
            enumerate_transitive_patterns(1),
            Err(Error::Capacity(_))
        ));
        let err = enumerate_transitive_patterns(9).unwrap_err();
        assert!(err.to_string().contains("factorial"));
        assert_eq!(
            enumerate_transitive_patterns_capped(9, 9).unwrap().len(),
            362_880
        );
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let perms = all_permutations(4);
        let mut sorted = perms.clone();
        sorted.sort();
        assert_eq!(perms, sorted);
    }

    #[test]
    fn rank_order_round_trip_and_injectivity_exhaustive() {
        for n in 2..=6 {
            let space = enumerate_transitive_patterns(n).unwrap();
            let mut seen = BTreeSet::new();
            for p in space.patterns() {
                assert_eq!(p.ranks.to_order().to_ranks(), p.ranks);
                assert_eq!(p.order.to_ranks().to_order(), p.order);
                assert!(seen.insert(ranks_to_pattern(&p.ranks).values().to_vec()));
            }
        }
    }

    #[test]
    fn scores_are_wins_minus_losses() {
        let space = enumerate_transitive_patterns(5).unwrap();
        for p in space.patterns() {
            for (j, w) in p.comparisons.wins().into_iter().enumerate() {
                let losses = 4 - w;
                assert_eq!(p.scores[j], w as f64 - losses as f64);
            }
        }
    }

    fn respondent(ranks: Vec<usize>, covs: &[(&str, CovariateValue)]) -> Respondent {
        Respondent {
            ranking: RankVector::new(ranks).unwrap(),
            covariates: covs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    #[test]
    fn aggregate_same_cell() {
        let space = Arc::new(enumerate_transitive_patterns(3).unwrap());
        let sex = |s: &str| ("SEX", CovariateValue::Level(s.into()));
        let rows = vec![
            respondent(vec![1, 2, 3], &[sex("m")]),
            respondent(vec![1, 2, 3], &[sex("m")]),
        ];
        let decls = vec![CovariateDecl::Factor {
            name: "SEX".into(),
            levels: vec![],
        }];
        let data = aggregate(space, &rows, &decls).unwrap();
        assert_eq!(data.n_sets(), 1);
        assert_eq!(data.count(0, 0), 2);
        assert_eq!(data.total(), 2);
        assert_eq!(data.row_cells(), &[(0, 0), (0, 0)]);
    }

    #[test]
    fn aggregate_counts_distinct_sets() {
        let space = Arc::new(enumerate_transitive_patterns(3).unwrap());
        let rows: Vec<_> = (0..30)
            .map(|i| {
                respondent(
                    vec![1 + i % 3, 1 + (i + 1) % 3, 1 + (i + 2) % 3],
                    &[
                        ("A", CovariateValue::Level(format!("a{}", i % 4))),
                        ("B", CovariateValue::Level(format!("b{}", i % 2))),
                    ],
                )
            })
            .collect();
        let decls = vec![
            CovariateDecl::Factor {
                name: "A".into(),
                levels: vec![],
            },
            CovariateDecl::Factor {
                name: "B".into(),
                levels: vec![],
            },
        ];
        let data = aggregate(space, &rows, &decls).unwrap();
        // i%4 determines i%2, so only 4 combinations are observed
        assert_eq!(data.n_sets(), 4);
        assert_eq!(data.counts().iter().flatten().sum::<u64>(), 30);
    }

    #[test]
    fn aggregate_errors() {
        let space = Arc::new(enumerate_transitive_patterns(3).unwrap());
        let rows = vec![respondent(vec![1, 2, 3], &[])];
        let decls = vec![CovariateDecl::Continuous { name: "x".into() }];
        let err = aggregate(space.clone(), &rows, &decls).unwrap_err();
        assert!(err.to_string().contains("unknown covariate name"));

        let rows = vec![respondent(vec![1, 2, 3, 4], &[])];
        assert!(matches!(
            aggregate(space, &rows, &[]),
            Err(Error::Validation { row: 1, .. })
        ));
    }

    #[test]
    fn survey_design_cell_count() {
        let space = Arc::new(enumerate_transitive_patterns(6).unwrap());
        let ages = ["15-24", "25-39", "40-54", "55+"];
        let mut rows = Vec::new();
        for (a, age) in ages.iter().enumerate() {
            for sex in ["male", "female"] {
                let mut ranks: Vec<usize> = (1..=6).collect();
                ranks.rotate_left(a);
                rows.push(respondent(
                    ranks,
                    &[
                        ("AGE", CovariateValue::Level(age.to_string())),
                        ("SEX", CovariateValue::Level(sex.to_string())),
                    ],
                ));
            }
        }
        let decls = vec![
            CovariateDecl::Factor {
                name: "AGE".into(),
                levels: ages.iter().map(|s| s.to_string()).collect(),
            },
            CovariateDecl::Factor {
                name: "SEX".into(),
                levels: vec!["male".into(), "female".into()],
            },
        ];
        let data = aggregate(space, &rows, &decls).unwrap();
        assert_eq!(data.n_cells(), 5760);
    }

    #[test]
    fn continuous_covariates_are_standardized() {
        let space = Arc::new(enumerate_transitive_patterns(2).unwrap());
        let rows: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&x| respondent(vec![1, 2], &[("x", CovariateValue::Value(x))]))
            .collect();
        let data = aggregate(
            space,
            &rows,
            &[CovariateDecl::Continuous { name: "x".into() }],
        )
        .unwrap();
        assert_eq!(data.n_sets(), 3);
        match &data.covariates()[0] {
            CovariateInfo::Continuous { mean, sd, .. } => {
                assert!((mean - 2.0).abs() < 1e-12);
                assert!((sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
            }
            _ => panic!("expected continuous"),
        }
    }
}
