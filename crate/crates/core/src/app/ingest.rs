use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use crate::app::config::{DataConfig, RankingFormat};
use crate::error::{Error, Result};
use crate::ranking::{
    aggregate, enumerate_transitive_patterns_capped, AggregatedData, CovariateDecl, CovariateValue,
    OrderVector, RankVector, Respondent,
};

/// Ingested respondent data: the aggregated table plus the retained raw rows
/// (for external cross-tabulation columns).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub data: AggregatedData,
    pub headers: Vec<String>,
    /// Retained rows in input order, aligned with `data.row_cells()`.
    pub rows: Vec<Vec<String>>,
    /// 1-based data-row numbers of the retained rows.
    pub row_numbers: Vec<usize>,
    /// Rows dropped for missing or incomplete values.
    pub rejected: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c == "."
}

impl Dataset {
    /// Column values for the retained rows. `A*B` joins several columns.
    pub fn external_column(&self, spec: &str) -> Result<Vec<String>> {
        let idx =
            spec.split('*')
                .map(|name| {
                    let name = name.trim();
                    self.headers.iter().position(|h| h == name).ok_or_else(|| {
                        Error::Config(format!("no column named '{name}' in the input"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        Ok(self
            .rows
            .iter()
            .map(|row| {
                idx.iter()
                    .map(|&i| row[i].trim())
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect())
    }
}

pub fn read_path(path: &Path, config: &DataConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read(file, config)
}

/// Read a CSV with a header row. Rows with a missing ranking or covariate
/// cell are dropped and counted; ties and out-of-range ranks are errors.
pub fn read<R: Read>(input: R, config: &DataConfig) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("no column named '{name}' in the input")))
    };
    let labels: Vec<&str> = config.items.iter().map(|i| i.label()).collect();
    let n_items = labels.len();
    let ranking_columns: Vec<usize> = match config.format {
        RankingFormat::Ranks => config
            .items
            .iter()
            .map(|i| column(i.column()))
            .collect::<Result<_>>()?,
        RankingFormat::Orders => config
            .order_columns
            .iter()
            .map(|c| column(c))
            .collect::<Result<_>>()?,
    };
    let covariate_columns: Vec<usize> = config
        .covariates
        .iter()
        .map(|c| column(c.name()))
        .collect::<Result<_>>()?;
    let space = Arc::new(enumerate_transitive_patterns_capped(
        n_items,
        config.max_items,
    )?);

    let mut respondents = Vec::new();
    let mut rows = Vec::new();
    let mut row_numbers = Vec::new();
    let mut rejected = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        if ranking_columns
            .iter()
            .chain(&covariate_columns)
            .any(|&c| is_missing(&cells[c]))
        {
            rejected += 1;
            continue;
        }
        let ranking = parse_ranking(row, &ranking_columns, &cells, config.format, &labels)?;
        let mut covariates = HashMap::new();
        for (decl, &c) in config.covariates.iter().zip(&covariate_columns) {
            let raw = cells[c].trim();
            let value = match decl {
                CovariateDecl::Factor { .. } => CovariateValue::Level(raw.to_string()),
                CovariateDecl::Continuous { name } => {
                    CovariateValue::Value(raw.parse::<f64>().map_err(|_| Error::Validation {
                        row,
                        message: format!(
                            "'{raw}' is not a number for continuous covariate '{name}'"
                        ),
                    })?)
                }
            };
            covariates.insert(decl.name().to_string(), value);
        }
        respondents.push(Respondent {
            ranking,
            covariates,
        });
        rows.push(cells);
        row_numbers.push(row);
    }
    if respondents.is_empty() {
        return Err(Error::Data(format!(
            "no complete rows ({rejected} rejected)"
        )));
    }
    let data = aggregate(space, &respondents, &config.covariates).map_err(|e| match e {
        Error::Validation { row, message } if row >= 1 && row <= row_numbers.len() => {
            Error::Validation {
                row: row_numbers[row - 1],
                message,
            }
        }
        other => other,
    })?;
    Ok(Dataset {
        data,
        headers,
        rows,
        row_numbers,
        rejected,
    })
}

fn parse_ranking(
    row: usize,
    columns: &[usize],
    cells: &[String],
    format: RankingFormat,
    labels: &[&str],
) -> Result<RankVector> {
    let with_row = |e: Error| match e {
        Error::Validation { message, .. } => Error::Validation { row, message },
        other => other,
    };
    match format {
        RankingFormat::Ranks => {
            let ranks = columns
                .iter()
                .map(|&c| {
                    let raw = cells[c].trim();
                    raw.parse::<usize>().map_err(|_| Error::Validation {
                        row,
                        message: format!("rank '{raw}' is not a positive integer"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            RankVector::new(ranks).map_err(with_row)
        }
        RankingFormat::Orders => {
            let order = columns
                .iter()
                .map(|&c| {
                    let raw = cells[c].trim();
                    labels
                        .iter()
                        .position(|l| *l == raw)
                        .ok_or_else(|| Error::Validation {
                            row,
                            message: format!("'{raw}' is not a declared item label"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(OrderVector::new(order).map_err(with_row)?.to_ranks())
        }
    }
}
