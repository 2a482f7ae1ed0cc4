use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rankmix::app::config::{ItemDecl, RunConfig};
use rankmix::app::{run_fit, run_report, run_search, run_simulate};
use rankmix::inference::SeMethod;
use rankmix::model::MassCounting;
use rankmix::ranking::CovariateDecl;
use rankmix::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rankmix",
    version,
    about = "Pattern models for ranked data with latent classes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model.
    Fit(FitArgs),
    /// Fit a range of class counts and select by BIC.
    Search {
        #[command(flatten)]
        fit: FitArgs,
        /// Inclusive class range, e.g. `1..8`.
        #[arg(long, value_parser = parse_range)]
        class_range: Option<[usize; 2]>,
    },
    /// Draw synthetic rankings from the `[simulate]` section.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV (overrides `simulate.output`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Print the summary of a fit artifact.
    Report {
        /// Path to `fit.json` or the directory holding it.
        artifact: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Item columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    items: Vec<String>,
    /// Factor covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    factors: Vec<String>,
    /// Continuous covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
    /// Covariate formula, e.g. `AGE+SEX`.
    #[arg(long)]
    terms: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    se_method: Option<SeMethodArg>,
    /// Count the free mass probabilities in the BIC parameter total.
    #[arg(long)]
    count_masses: bool,
    /// Add 0.5 to every cell of observed log-odds ratios.
    #[arg(long)]
    continuity_correction: bool,
    #[arg(long)]
    max_items: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SeMethodArg {
    Raw,
    Corrected,
    Hessian,
    All,
}

impl From<SeMethodArg> for SeMethod {
    fn from(m: SeMethodArg) -> Self {
        match m {
            SeMethodArg::Raw => SeMethod::Raw,
            SeMethodArg::Corrected => SeMethod::Corrected,
            SeMethodArg::Hessian => SeMethod::Hessian,
            SeMethodArg::All => SeMethod::All,
        }
    }
}

fn parse_range(s: &str) -> std::result::Result<[usize; 2], String> {
    let (lo, hi) = s
        .split_once("..")
        .or_else(|| s.split_once('-'))
        .or_else(|| s.split_once(':'))
        .ok_or_else(|| format!("expected LO..HI, got '{s}'"))?;
    let lo = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound in '{s}'"))?;
    let hi = hi
        .trim_start_matches('=')
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound in '{s}'"))?;
    Ok([lo, hi])
}

impl FitArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            run.data.input = Some(v.clone());
        }
        if let Some(v) = &self.out {
            run.output.dir = v.clone();
        }
        if !self.items.is_empty() {
            run.data.items = self
                .items
                .iter()
                .map(|s| ItemDecl::Label(s.clone()))
                .collect();
        }
        if !self.factors.is_empty() || !self.continuous.is_empty() {
            run.data.covariates = self
                .factors
                .iter()
                .map(|name| CovariateDecl::Factor {
                    name: name.clone(),
                    levels: Vec::new(),
                })
                .chain(
                    self.continuous
                        .iter()
                        .map(|name| CovariateDecl::Continuous { name: name.clone() }),
                )
                .collect();
        }
        if let Some(v) = &self.terms {
            run.model.terms = v.clone();
        }
        if let Some(v) = self.classes {
            run.model.classes = v;
        }
        if let Some(v) = self.seed {
            run.fit.seed = v;
        }
        if let Some(v) = self.starts {
            run.fit.n_starts = v;
        }
        if let Some(v) = self.tol {
            run.fit.tol = v;
        }
        if let Some(v) = self.max_iter {
            run.fit.max_iter = v;
        }
        if let Some(v) = self.se_method {
            run.output.se_method = v.into();
        }
        if self.count_masses {
            run.fit.mass_counting = MassCounting::IncludeMasses;
        }
        if self.continuity_correction {
            run.posthoc.continuity_correction = true;
        }
        if let Some(v) = self.max_items {
            run.data.max_items = v;
        }
        Ok(run)
    }
}

/// Exit status: 0 converged, 2 finished without convergence, 1 error.
fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fit(args) => {
            let outcome = run_fit(&args.run_config()?)?;
            print!("{}", outcome.report);
            Ok(if outcome.converged { 0 } else { 2 })
        }
        Command::Search { fit, class_range } => {
            let mut run = fit.run_config()?;
            if class_range.is_some() {
                run.model.class_range = class_range;
            }
            let outcome = run_search(&run)?;
            print!("{}", outcome.report);
            Ok(if outcome.converged { 0 } else { 2 })
        }
        Command::Simulate {
            config,
            out,
            seed,
            n,
        } => {
            let mut run = RunConfig::from_path(&config)?;
            let sim = run
                .simulate
                .as_mut()
                .ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
            if let Some(v) = out {
                sim.output = v;
            }
            if let Some(v) = seed {
                sim.seed = v;
            }
            if let Some(v) = n {
                sim.n = v;
            }
            let (sim, path) = run_simulate(&run)?;
            println!("wrote {} rows to {}", sim.draws.len(), path.display());
            Ok(0)
        }
        Command::Report { artifact } => {
            let path = if artifact.is_dir() {
                artifact.join(rankmix::app::ARTIFACT_FILE)
            } else {
                artifact
            };
            print!("{}", run_report(&path)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.kind());
            ExitCode::from(1)
        }
    }
}
