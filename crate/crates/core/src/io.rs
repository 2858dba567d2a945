//! CSV ingestion and report emission.
//!
//! Data files carry a header row, a binary outcome column `y`, a binary
//! treatment column `a`, and numeric covariates. Row numbers in errors are
//! 1-based and count data rows only (the header is row 0).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BoundEstimates, CurveReport};
use crate::nuisance::Dataset;
use crate::simulation::MetricsRow;

pub const OUTCOME_COLUMN: &str = "y";
pub const TREATMENT_COLUMN: &str = "a";

/// Column order of curve CSV files.
pub const CURVE_HEADER: [&str; 7] = ["rho", "estimate", "se", "ci_lower", "ci_upper", "fh_lower", "fh_upper"];

pub const METRICS_HEADER: [&str; 9] = ["case_id", "rho", "beta_true", "bias", "sd", "ese", "cp95", "n", "replications"];

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.record() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Schema {
            row,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Schema {
            row,
            message: format!("{other:?}"),
        },
    }
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Schema {
            row: Some(row),
            message: format!("column `{column}` must be 0 or 1, found `{raw}`"),
        })
    }
}

/// Read a dataset. Covariates are `covariates` in the given order, or every
/// column other than `y` and `a` when `None`.
pub fn read_csv<R: Read>(reader: R, covariates: Option<&[String]>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            row: None,
            message: format!("missing required column `{name}`"),
        })
    };
    let y_col = find(OUTCOME_COLUMN)?;
    let a_col = find(TREATMENT_COLUMN)?;
    let x_cols: Vec<usize> = match covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&j| j != y_col && j != a_col).collect(),
    };
    if x_cols.is_empty() {
        return Err(Error::Schema {
            row: None,
            message: "no covariate columns".into(),
        });
    }

    let mut xs = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(csv_error)?;
        y.push(parse_binary(&record[y_col], row, OUTCOME_COLUMN)?);
        a.push(parse_binary(&record[a_col], row, TREATMENT_COLUMN)?);
        for &j in &x_cols {
            let raw = record[j].trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: header[j].clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[j].clone(),
                    message: format!("`{raw}` is not finite"),
                });
            }
            xs.push(v);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Schema {
            row: None,
            message: "file has no data rows".into(),
        });
    }
    let names = x_cols.iter().map(|&j| header[j].clone()).collect();
    let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
    Dataset::new(x, a, y, names)
}

pub fn load_csv(path: &Path, covariates: Option<&[String]>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, covariates)
}

/// Write `y, a, covariates...`. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![OUTCOME_COLUMN.to_string(), TREATMENT_COLUMN.to_string()];
    header.extend(data.names().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    let x = data.covariates();
    for i in 0..data.n() {
        let mut rec = vec![data.outcome()[i].to_string(), data.treatment()[i].to_string()];
        rec.extend((0..data.p()).map(|j| x[(i, j)].to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_dataset(file, data)
}

/// One row per `ρ`; the Fréchet–Hoeffding columns repeat the population
/// bound estimates, which do not depend on `ρ`.
pub fn write_curve<W: Write>(writer: W, curve: &CurveReport, fh: &BoundEstimates) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CURVE_HEADER).map_err(csv_error)?;
    for k in 0..curve.len() {
        let rec = [
            curve.rho_grid[k],
            curve.estimates[k],
            curve.se[k],
            curve.ci_lower[k],
            curve.ci_upper[k],
            fh.lower.estimate,
            fh.upper.estimate,
        ];
        w.write_record(rec.iter().map(f64::to_string)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.case_id.to_string(),
            r.rho.to_string(),
            r.beta_true.to_string(),
            r.bias.to_string(),
            r.sd.to_string(),
            r.ese.to_string(),
            r.cp95.to_string(),
            r.n.to_string(),
            r.replications.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

/// Top-level shape of every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<C, R> {
    pub config: C,
    pub results: R,
    pub warnings: Vec<String>,
    pub timing: Option<Timing>,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_hand_written_file() {
        let text = "y,a,age,score\n1,0,30,0.5\n0,1,41,-1.25\n1,1,29,2\n";
        let d = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.names(), ["age", "score"]);
        assert_eq!(d.outcome(), [1, 0, 1]);
        assert_eq!(d.treatment(), [0, 1, 1]);
        assert_eq!(d.covariates()[(1, 1)], -1.25);
        let only = read_csv(text.as_bytes(), Some(&["score".to_string()])).unwrap();
        assert_eq!(only.p(), 1);
    }

    #[test]
    fn bad_outcome_names_its_row() {
        let mut text = String::from("a,y,x\n");
        for i in 1..=8 {
            let y = if i == 7 { 2 } else { i % 2 };
            text.push_str(&format!("{},{y},0.{i}\n", i % 2));
        }
        let err = read_csv(text.as_bytes(), None).unwrap_err();
        assert_eq!(
            err,
            Error::Schema {
                row: Some(7),
                message: "column `y` must be 0 or 1, found `2`".into()
            }
        );
    }

    #[test]
    fn unparsable_cell_is_a_parse_error() {
        let text = "y,a,x\n1,0,0.1\n0,1,abc\n";
        match read_csv(text.as_bytes(), None) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "x")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_columns() {
        assert!(matches!(read_csv("y,x\n1,0\n".as_bytes(), None), Err(Error::Schema { row: None, .. })));
        assert!(matches!(
            read_csv("y,a\n1,0\n".as_bytes(), None),
            Err(Error::Schema { row: None, .. })
        ));
        assert!(matches!(
            read_csv("y,a,x\n1,0,1\n".as_bytes(), Some(&["z".to_string()])),
            Err(Error::Schema { .. })
        ));
    }
}
