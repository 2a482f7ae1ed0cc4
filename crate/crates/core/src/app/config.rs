use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::inference::SeMethod;
use crate::ranking::{CovariateDecl, DEFAULT_MAX_ITEMS};

/// A run configuration read from TOML. Every section is optional; command
/// line flags override individual fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub output: OutputConfig,
    pub posthoc: PosthocConfig,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingFormat {
    /// One column per item holding that item's rank.
    #[default]
    Ranks,
    /// One column per rank position holding an item label.
    Orders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemDecl {
    Label(String),
    Column { label: String, column: String },
}

impl ItemDecl {
    pub fn label(&self) -> &str {
        match self {
            ItemDecl::Label(l) | ItemDecl::Column { label: l, .. } => l,
        }
    }

    pub fn column(&self) -> &str {
        match self {
            ItemDecl::Label(l) => l,
            ItemDecl::Column { column, .. } => column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub input: Option<PathBuf>,
    pub format: RankingFormat,
    pub items: Vec<ItemDecl>,
    /// Rank-position columns (most preferred first) for the `orders` format.
    pub order_columns: Vec<String>,
    pub covariates: Vec<CovariateDecl>,
    pub max_items: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: RankingFormat::Ranks,
            items: Vec::new(),
            order_columns: Vec::new(),
            covariates: Vec::new(),
            max_items: DEFAULT_MAX_ITEMS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Covariate formula, e.g. `AGE+SEX`; empty for no covariates.
    pub terms: String,
    pub classes: usize,
    /// Inclusive class range for `search`.
    pub class_range: Option<[usize; 2]>,
    /// Covariate formulas compared as fixed-effects models by `search`.
    pub term_sweep: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            terms: String::new(),
            classes: 1,
            class_range: None,
            term_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub se_method: SeMethod,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            se_method: SeMethod::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogOddsConfig {
    /// External column (or `A*B` combination) to cross-tabulate.
    pub column: String,
    /// 1-based classes compared.
    pub class_a: usize,
    pub class_b: usize,
    /// Category pairs; defaults to every category against the first.
    #[serde(default)]
    pub pairs: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosthocConfig {
    /// External columns to cross-tabulate against class membership.
    pub crosstab: Vec<String>,
    pub continuity_correction: bool,
    pub logodds: Vec<LogOddsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFactor {
    pub name: String,
    pub levels: Vec<String>,
    /// Sampling probabilities per level; uniform when omitted.
    #[serde(default)]
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub items: Vec<String>,
    #[serde(default)]
    pub terms: String,
    #[serde(default)]
    pub factors: Vec<SimFactor>,
    /// Mass probabilities; their count sets the number of classes.
    #[serde(default = "one_class")]
    pub masses: Vec<f64>,
    /// Generating coefficients by column name; omitted columns are zero.
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    /// Output CSV path; the truth file is written alongside.
    pub output: PathBuf,
}

fn one_class() -> Vec<f64> {
    vec![1.0]
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    pub fn validate(&self) -> Result<()> {
        let n_items = match self.data.format {
            RankingFormat::Ranks => self.data.items.len(),
            RankingFormat::Orders => self.data.items.len().max(self.data.order_columns.len()),
        };
        if n_items < 2 {
            return Err(Error::Config("at least 2 item columns are required".into()));
        }
        if self.data.format == RankingFormat::Orders
            && self.data.order_columns.len() != self.data.items.len()
        {
            return Err(Error::Config(
                "orders format needs one order column per item".into(),
            ));
        }
        if self.model.classes < 1 {
            return Err(Error::Config("classes must be at least 1".into()));
        }
        if let Some([lo, hi]) = self.model.class_range {
            if lo < 1 || lo > hi {
                return Err(Error::Config(format!("invalid class range {lo}..{hi}")));
            }
        }
        self.fit.validate()
    }

    pub fn item_labels(&self) -> Vec<String> {
        self.data
            .items
            .iter()
            .map(|i| i.label().to_string())
            .collect()
    }
}
