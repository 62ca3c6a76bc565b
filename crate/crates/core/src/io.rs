//! Dataset loading and result files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{multivariate_names, univariate_names, DrawTable, ParameterSummary};
use crate::multivariate::ChainMV;
use crate::numerics::Matrix;
use crate::univariate::Chain;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("row {row}, column {column:?}: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}, column {column:?}: missing value")]
    MissingValue { row: usize, column: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Design matrix, responses and labels, validated for shape and completeness.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub x_labels: Vec<String>,
    pub y_labels: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn y_vector(&self) -> crate::numerics::Vector {
        self.y.column(0).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Student rent survey. Needs `sex` and `distance`, plus either
    /// `rent_per_person` and `rooms_per_person` or raw `rent`, `rooms` and
    /// `occupants`. Regressors: intercept, s·r, (1−s)·r, s·d, (1−s)·d.
    Rent,
    /// Reaction data with `temperature`, `concentration`, `time` and the
    /// three responses `unchanged`, `converted`, `byproduct`.
    Chemical,
    /// Named response columns; covariates default to all other columns.
    Generic {
        responses: Vec<String>,
        #[serde(default)]
        covariates: Option<Vec<String>>,
        #[serde(default = "default_true")]
        intercept: bool,
    },
}

fn default_true() -> bool {
    true
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl RawTable {
    fn find(&self, aliases: &[&str]) -> Option<usize> {
        aliases.iter().find_map(|a| {
            self.headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(a))
        })
    }

    fn require(&self, aliases: &[&str]) -> Result<usize, IoError> {
        self.find(aliases)
            .ok_or_else(|| IoError::MissingColumn(aliases[0].to_string()))
    }

    fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }
}

fn parse_cell(field: &str, row: usize, column: &str) -> Result<f64, IoError> {
    let t = field.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Err(IoError::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    match t.to_ascii_lowercase().as_str() {
        "m" | "male" => return Ok(1.0),
        "f" | "female" => return Ok(0.0),
        _ => {}
    }
    let v: f64 = t.parse().map_err(|_| IoError::ParseError {
        row,
        column: column.to_string(),
        message: format!("not a number: {t:?}"),
    })?;
    if !v.is_finite() {
        return Err(IoError::ParseError {
            row,
            column: column.to_string(),
            message: "non-finite value".into(),
        });
    }
    Ok(v)
}

fn read_table(path: &Path) -> Result<RawTable, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| IoError::ParseError {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(IoError::ParseError {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        rows.push(
            rec.iter()
                .zip(&headers)
                .map(|(f, h)| parse_cell(f, row, h))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    if rows.is_empty() {
        return Err(IoError::Invalid(format!("{}: no data rows", path.display())));
    }
    Ok(RawTable { headers, rows })
}

fn with_intercept(cols: &[Vec<f64>], n: usize) -> Matrix {
    Matrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] })
}

fn from_columns(cols: &[Vec<f64>], n: usize) -> Matrix {
    Matrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

pub fn load_dataset(path: &Path, format: &DatasetFormat) -> Result<Dataset, IoError> {
    let t = read_table(path)?;
    let n = t.rows.len();
    match format {
        DatasetFormat::Rent => {
            let sex = t.column(t.require(&["sex", "s", "male"])?);
            let dist = t.column(t.require(&["distance", "dist", "d"])?);
            let (rent, rooms) = match (t.find(&["rent_per_person", "y"]), t.find(&["rooms_per_person", "r"])) {
                (Some(y), Some(r)) => (t.column(y), t.column(r)),
                _ => {
                    let rent = t.column(t.require(&["rent"])?);
                    let rooms = t.column(t.require(&["rooms"])?);
                    let occ = t.column(t.require(&["occupants", "no", "number"])?);
                    if let Some(i) = occ.iter().position(|o| *o <= 0.0) {
                        return Err(IoError::ParseError {
                            row: i + 1,
                            column: "occupants".into(),
                            message: "must be positive".into(),
                        });
                    }
                    (
                        rent.iter().zip(&occ).map(|(a, o)| a / o).collect(),
                        rooms.iter().zip(&occ).map(|(a, o)| a / o).collect(),
                    )
                }
            };
            if let Some(i) = sex.iter().position(|s| *s != 0.0 && *s != 1.0) {
                return Err(IoError::ParseError {
                    row: i + 1,
                    column: "sex".into(),
                    message: "expected 0/1 or M/F".into(),
                });
            }
            let cols: Vec<Vec<f64>> = vec![
                (0..n).map(|i| sex[i] * rooms[i]).collect(),
                (0..n).map(|i| (1.0 - sex[i]) * rooms[i]).collect(),
                (0..n).map(|i| sex[i] * dist[i]).collect(),
                (0..n).map(|i| (1.0 - sex[i]) * dist[i]).collect(),
            ];
            Ok(Dataset {
                x: with_intercept(&cols, n),
                y: from_columns(&[rent], n),
                x_labels: ["intercept", "male_rooms", "female_rooms", "male_distance", "female_distance"]
                    .map(String::from)
                    .to_vec(),
                y_labels: vec!["rent_per_person".into()],
                provenance: format!("rent survey, {}", path.display()),
            })
        }
        DatasetFormat::Chemical => {
            let xs = [
                t.require(&["temperature", "temp", "x1"])?,
                t.require(&["concentration", "conc", "x2"])?,
                t.require(&["time", "x3"])?,
            ];
            let ys = [
                t.require(&["unchanged", "y1"])?,
                t.require(&["converted", "y2"])?,
                t.require(&["byproduct", "unwanted", "y3"])?,
            ];
            let xc: Vec<Vec<f64>> = xs.iter().map(|&i| t.column(i)).collect();
            let yc: Vec<Vec<f64>> = ys.iter().map(|&i| t.column(i)).collect();
            Ok(Dataset {
                x: with_intercept(&xc, n),
                y: from_columns(&yc, n),
                x_labels: ["intercept", "temperature", "concentration", "time"]
                    .map(String::from)
                    .to_vec(),
                y_labels: ["unchanged", "converted", "byproduct"].map(String::from).to_vec(),
                provenance: format!("chemical reaction data, {}", path.display()),
            })
        }
        DatasetFormat::Generic {
            responses,
            covariates,
            intercept,
        } => {
            if responses.is_empty() {
                return Err(IoError::Invalid("at least one response column is required".into()));
            }
            let y_idx = responses
                .iter()
                .map(|r| t.require(&[r.as_str()]))
                .collect::<Result<Vec<_>, _>>()?;
            let x_idx: Vec<usize> = match covariates {
                Some(c) => c
                    .iter()
                    .map(|r| t.require(&[r.as_str()]))
                    .collect::<Result<_, _>>()?,
                None => (0..t.headers.len()).filter(|i| !y_idx.contains(i)).collect(),
            };
            let xc: Vec<Vec<f64>> = x_idx.iter().map(|&i| t.column(i)).collect();
            let yc: Vec<Vec<f64>> = y_idx.iter().map(|&i| t.column(i)).collect();
            let mut x_labels: Vec<String> = x_idx.iter().map(|&i| t.headers[i].clone()).collect();
            let x = if *intercept {
                x_labels.insert(0, "intercept".into());
                with_intercept(&xc, n)
            } else {
                from_columns(&xc, n)
            };
            if x.ncols() == 0 {
                return Err(IoError::Invalid("no covariates".into()));
            }
            Ok(Dataset {
                x,
                y: from_columns(&yc, n),
                x_labels,
                y_labels: responses.clone(),
                provenance: path.display().to_string(),
            })
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn write_rows<'a>(
    path: &Path,
    names: &[String],
    first_iter: usize,
    rows: impl Iterator<Item = Vec<f64>> + 'a,
) -> Result<(), IoError> {
    let mut w = create(path)?;
    let header = std::iter::once("iter".to_string())
        .chain(names.iter().cloned())
        .collect::<Vec<_>>()
        .join(",");
    writeln!(w, "{header}").map_err(|e| io_err(path, e))?;
    for (i, row) in rows.enumerate() {
        let mut line = (first_iter + i).to_string();
        for v in row {
            line.push(',');
            // shortest representation that parses back to the same bits
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Post-burn-in draws as `iter,sigma2,beta_1..beta_p`; `iter` is 1-based.
pub fn write_chain_csv(path: &Path, chain: &Chain) -> Result<(), IoError> {
    let rows = chain.kept().iter().map(|d| {
        std::iter::once(d.sigma2)
            .chain(d.beta.iter().copied())
            .collect()
    });
    write_rows(path, &univariate_names(chain.p()), chain.burn_in + 1, rows)
}

/// Post-burn-in draws as `iter,sigma_11..,beta_11..` (column-major).
pub fn write_chain_mv_csv(path: &Path, chain: &ChainMV) -> Result<(), IoError> {
    let rows = chain
        .kept()
        .iter()
        .map(|d| d.sigma.iter().chain(&d.beta).copied().collect());
    write_rows(path, &multivariate_names(chain.p, chain.k), chain.burn_in + 1, rows)
}

/// Reads a chain CSV back into a table; the `iter` column is dropped.
pub fn read_chain_csv(path: &Path) -> Result<DrawTable, IoError> {
    let t = read_table(path)?;
    let keep: Vec<usize> = (0..t.headers.len())
        .filter(|&i| !t.headers[i].eq_ignore_ascii_case("iter"))
        .collect();
    if keep.is_empty() {
        return Err(IoError::Invalid("chain file has no parameter columns".into()));
    }
    let names = keep.iter().map(|&i| t.headers[i].clone()).collect();
    let columns = keep.iter().map(|&i| t.column(i)).collect();
    DrawTable::new(names, columns).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_summary_json(path: &Path, summary: &[ParameterSummary]) -> Result<(), IoError> {
    write_json(path, summary)
}

/// `lag,rho` rows.
pub fn write_acf_csv(path: &Path, rho: &[f64]) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "lag,rho").map_err(|e| io_err(path, e))?;
    for (lag, r) in rho.iter().enumerate() {
        writeln!(w, "{lag},{r}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a header and rows of already formatted cells.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::summarize;
    use crate::univariate::{ChainTiming, Draw, SamplerConfig};

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn rent_raw_columns_derive_regressors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "rent.csv",
            "rent,occupants,rooms,distance,sex\n300,2,3,10,M\n200,1,1,4,F\n",
        );
        let d = load_dataset(&p, &DatasetFormat::Rent).unwrap();
        assert_eq!(d.x.shape(), (2, 5));
        assert_eq!(d.y[(0, 0)], 150.0);
        let row0: Vec<f64> = d.x.row(0).iter().copied().collect();
        assert_eq!(row0, vec![1.0, 1.5, 0.0, 10.0, 0.0]);
        let row1: Vec<f64> = d.x.row(1).iter().copied().collect();
        assert_eq!(row1, vec![1.0, 0.0, 1.0, 0.0, 4.0]);
    }

    #[test]
    fn chemical_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "chem.csv",
            "temperature,concentration,time,unchanged,converted,byproduct\n162,23,3,41.5,45.9,11.2\n162,23,8,33.8,53.3,11.2\n",
        );
        let d = load_dataset(&p, &DatasetFormat::Chemical).unwrap();
        assert_eq!(d.x.shape(), (2, 4));
        assert_eq!(d.y.shape(), (2, 3));
        assert_eq!(d.y[(1, 1)], 53.3);
        assert_eq!(d.x[(1, 3)], 8.0);
    }

    #[test]
    fn malformed_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", "y,x\n1,2\n3,abc\n");
        let fmt = DatasetFormat::Generic {
            responses: vec!["y".into()],
            covariates: None,
            intercept: true,
        };
        match load_dataset(&p, &fmt) {
            Err(IoError::ParseError { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "na.csv", "y,x\n1,\n");
        assert!(matches!(
            load_dataset(&p, &fmt),
            Err(IoError::MissingValue { row: 1, .. })
        ));
    }

    #[test]
    fn missing_file_and_column() {
        let fmt = DatasetFormat::Chemical;
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.csv"), &fmt),
            Err(IoError::Io { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "temperature,time\n1,2\n");
        assert!(matches!(load_dataset(&p, &fmt), Err(IoError::MissingColumn(_))));
    }

    #[test]
    fn chain_csv_round_trip_is_exact() {
        let draws: Vec<Draw> = (0..50)
            .map(|i| Draw {
                sigma2: 1.0 / (i as f64 + 3.0),
                beta: vec![(i as f64).sin(), 1e-300 * i as f64, -std::f64::consts::PI * i as f64],
            })
            .collect();
        let chain = Chain {
            draws,
            burn_in: 5,
            seed: 1,
            config: SamplerConfig::new(50, 1),
            timing: ChainTiming::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("chain.csv");
        write_chain_csv(&p, &chain).unwrap();
        let back = read_chain_csv(&p).unwrap();
        let orig = DrawTable::from(&chain);
        assert_eq!(back, orig);
        let a = summarize(&orig).unwrap();
        let b = summarize(&back).unwrap();
        assert_eq!(a, b);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iter,sigma2,beta_1,beta_2,beta_3\n6,"));
    }
}
