use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::app::config::{SimFactor, SimulateConfig};
use crate::error::{Error, Result};
use crate::model::{parse_terms, worths, Design, ModelSpec, Parameters};
use crate::ranking::{enumerate_transitive_patterns, AggregatedData, CovariateInfo, CovariateSet};

/// Column holding the generating class in simulated CSV output.
pub const TRUE_CLASS_COLUMN: &str = "true_class";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub set: usize,
    pub pattern: usize,
    /// 0-based generating class.
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub design: Design,
    pub params: Parameters,
    /// Every level combination of the factors, including empty ones.
    pub all_sets: Vec<CovariateSet>,
    /// Respondents in draw order; `set` indexes `all_sets`.
    pub draws: Vec<Draw>,
    pub factors: Vec<SimFactor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWorths {
    pub class: usize,
    pub set: String,
    pub worths: Vec<f64>,
}

/// Generating values written next to a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub n: usize,
    pub seed: u64,
    pub items: Vec<String>,
    pub terms: String,
    pub factors: Vec<SimFactor>,
    pub masses: Vec<f64>,
    pub coefficients: BTreeMap<String, f64>,
    pub worths: Vec<TruthWorths>,
}

fn level_combinations(factors: &[SimFactor]) -> Vec<Vec<usize>> {
    factors.iter().fold(vec![Vec::new()], |acc, f| {
        acc.into_iter()
            .flat_map(|prefix| {
                (0..f.levels.len()).map(move |l| {
                    let mut next = prefix.clone();
                    next.push(l);
                    next
                })
            })
            .collect()
    })
}

fn weighted(probs: &[f64], what: &str) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(probs)
        .map_err(|e| Error::Config(format!("invalid {what} probabilities: {e}")))
}

/// Draw `n` respondents: factor levels independently by their
/// probabilities, then a class from the masses, then a pattern from the
/// class- and set-specific pattern distribution.
pub fn simulate(config: &SimulateConfig) -> Result<Simulation> {
    let n_items = config.items.len();
    let space = Arc::new(enumerate_transitive_patterns(n_items)?);
    let mut factors = config.factors.clone();
    for f in &mut factors {
        if f.levels.is_empty() {
            return Err(Error::Config(format!("factor '{}' has no levels", f.name)));
        }
        if f.probs.is_empty() {
            f.probs = vec![1.0 / f.levels.len() as f64; f.levels.len()];
        }
        if f.probs.len() != f.levels.len() {
            return Err(Error::Config(format!(
                "factor '{}' needs one probability per level",
                f.name
            )));
        }
    }
    let infos: Vec<CovariateInfo> = factors
        .iter()
        .map(|f| CovariateInfo::Factor {
            name: f.name.clone(),
            levels: f.levels.clone(),
        })
        .collect();
    let all_sets: Vec<CovariateSet> = level_combinations(&factors)
        .into_iter()
        .map(|levels| CovariateSet {
            levels,
            values: vec![],
        })
        .collect();
    let n_classes = config.masses.len();
    let template = AggregatedData::from_counts(
        space.clone(),
        infos.clone(),
        all_sets.clone(),
        vec![vec![0; space.len()]; all_sets.len()],
    )?;
    let spec = ModelSpec::new(
        config.items.clone(),
        parse_terms(&config.terms, &infos)?,
        n_classes,
    )?;
    let design = Design::new(&spec, &template)?;
    let mut coefficients = vec![0.0; design.n_coefficients()];
    for (name, &value) in &config.coefficients {
        let c = design
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("'{name}' is not a coefficient of this model")))?;
        coefficients[c] = value;
    }
    let params = Parameters {
        coefficients,
        masses: config.masses.clone(),
    };
    params.validate(&design)?;

    let factor_dists = factors
        .iter()
        .map(|f| weighted(&f.probs, &f.name))
        .collect::<Result<Vec<_>>>()?;
    let class_dist = weighted(&config.masses, "mass")?;
    let mut pattern_dists = Vec::with_capacity(all_sets.len() * n_classes);
    for k in 0..all_sets.len() {
        for r in 0..n_classes {
            pattern_dists.push(weighted(&design.pattern_probs(k, r, &params), "pattern")?);
        }
    }
    // Set index of a level combination: mixed radix, first factor slowest.
    let radix: Vec<usize> = factors.iter().map(|f| f.levels.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draws = (0..config.n)
        .map(|_| {
            let set = factor_dists
                .iter()
                .zip(&radix)
                .fold(0, |acc, (d, &base)| acc * base + d.sample(&mut rng));
            let class = class_dist.sample(&mut rng);
            let pattern = pattern_dists[set * n_classes + class].sample(&mut rng);
            Draw {
                set,
                pattern,
                class,
            }
        })
        .collect();
    Ok(Simulation {
        design,
        params,
        all_sets,
        draws,
        factors,
    })
}

impl Simulation {
    /// Aggregated counts over the non-empty covariate sets.
    pub fn data(&self) -> Result<AggregatedData> {
        let space = self.design.spec().n_items();
        let space = Arc::new(enumerate_transitive_patterns(space)?);
        let mut counts = vec![vec![0u64; space.len()]; self.all_sets.len()];
        for d in &self.draws {
            counts[d.set][d.pattern] += 1;
        }
        let keep: Vec<usize> = (0..counts.len())
            .filter(|&k| counts[k].iter().any(|&c| c > 0))
            .collect();
        let infos = self
            .factors
            .iter()
            .map(|f| CovariateInfo::Factor {
                name: f.name.clone(),
                levels: f.levels.clone(),
            })
            .collect();
        AggregatedData::from_counts(
            space,
            infos,
            keep.iter().map(|&k| self.all_sets[k].clone()).collect(),
            keep.iter().map(|&k| counts[k].clone()).collect(),
        )
    }

    pub fn truth(&self, config: &SimulateConfig) -> SimulationTruth {
        let names = self.design.column_names();
        let mut worth_rows = Vec::new();
        for r in 0..self.design.n_classes() {
            for (k, set) in self.all_sets.iter().enumerate() {
                let label = if self.factors.is_empty() {
                    "all".to_string()
                } else {
                    self.factors
                        .iter()
                        .zip(&set.levels)
                        .map(|(f, &l)| format!("{}={}", f.name, f.levels[l]))
                        .collect::<Vec<_>>()
                        .join(",")
                };
                let w = worths(&self.design.item_effects(k, r, &self.params.coefficients));
                worth_rows.push(TruthWorths {
                    class: r + 1,
                    set: label,
                    worths: w.values().to_vec(),
                });
            }
        }
        SimulationTruth {
            n: config.n,
            seed: config.seed,
            items: config.items.clone(),
            terms: config.terms.clone(),
            factors: self.factors.clone(),
            masses: self.params.masses.clone(),
            coefficients: names
                .into_iter()
                .zip(self.params.coefficients.iter().copied())
                .collect(),
            worths: worth_rows,
        }
    }

    /// Rank columns (one per item), then factor columns, then the true class.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let space = enumerate_transitive_patterns(self.design.n_items())?;
        let mut writer = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.design.spec().items.clone();
        header.extend(self.factors.iter().map(|f| f.name.clone()));
        header.push(TRUE_CLASS_COLUMN.to_string());
        writer.write_record(&header)?;
        for d in &self.draws {
            let mut record: Vec<String> = space
                .pattern(d.pattern)
                .ranks
                .ranks()
                .iter()
                .map(|r| r.to_string())
                .collect();
            let set = &self.all_sets[d.set];
            record.extend(
                self.factors
                    .iter()
                    .zip(&set.levels)
                    .map(|(f, &l)| f.levels[l].clone()),
            );
            record.push((d.class + 1).to_string());
            writer.write_record(&record)?;
        }
        writer
            .flush()
            .map_err(|e| Error::Data(format!("writing simulated data: {e}")))?;
        Ok(())
    }
}

/// Simulate and write the CSV plus `<stem>.truth.json` next to it.
pub fn run(config: &SimulateConfig, output: &Path) -> Result<Simulation> {
    let sim = simulate(config)?;
    let mut csv_bytes = Vec::new();
    sim.write_csv(&mut csv_bytes)?;
    crate::app::artifact::write_atomic(output, &csv_bytes)?;
    let truth = serde_json::to_vec_pretty(&sim.truth(config))?;
    crate::app::artifact::write_atomic(&truth_path(output), &truth)?;
    Ok(sim)
}

pub fn truth_path(output: &Path) -> std::path::PathBuf {
    let stem = output
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("simulated");
    output.with_file_name(format!("{stem}.truth.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize) -> SimulateConfig {
        SimulateConfig {
            n,
            seed: 7,
            items: vec!["a".into(), "b".into(), "c".into()],
            terms: "g".into(),
            factors: vec![SimFactor {
                name: "g".into(),
                levels: vec!["x".into(), "y".into()],
                probs: vec![0.3, 0.7],
            }],
            masses: vec![0.6, 0.4],
            coefficients: [("a".to_string(), 0.8), ("delta:b:class1".to_string(), -1.0)]
                .into_iter()
                .collect(),
            output: "sim.csv".into(),
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate(&config(300)).unwrap();
        let b = simulate(&config(300)).unwrap();
        assert_eq!(a.draws, b.draws);
        let data = a.data().unwrap();
        assert_eq!(data.total(), 300);
        assert_eq!(data.n_sets(), 2);
    }

    #[test]
    fn frequencies_follow_probabilities() {
        let sim = simulate(&config(20000)).unwrap();
        let class0 = sim.draws.iter().filter(|d| d.class == 0).count() as f64 / 20000.0;
        let set1 = sim.draws.iter().filter(|d| d.set == 1).count() as f64 / 20000.0;
        assert!((class0 - 0.6).abs() < 0.02, "{class0}");
        assert!((set1 - 0.7).abs() < 0.02, "{set1}");
    }

    #[test]
    fn empty_simulation_writes_header_only() {
        let sim = simulate(&config(0)).unwrap();
        let mut out = Vec::new();
        sim.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b,c,g,true_class\n");
    }

    #[test]
    fn unknown_coefficient_is_rejected() {
        let mut cfg = config(10);
        cfg.coefficients.insert("zzz".into(), 1.0);
        assert!(matches!(simulate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn truth_lists_every_coefficient() {
        let cfg = config(10);
        let sim = simulate(&cfg).unwrap();
        let truth = sim.truth(&cfg);
        assert_eq!(truth.coefficients.len(), sim.design.n_coefficients());
        assert_eq!(truth.coefficients["a"], 0.8);
        assert_eq!(truth.worths.len(), 4);
    }
}
