//! Spatial datasets, covariate standardization and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}, column '{column}': {message}")]
    Value { row: usize, column: String, message: String },
    #[error("column '{0}' has zero variance and cannot be standardized")]
    ZeroVariance(String),
    #[error("duplicate location at rows {0} and {1}")]
    DuplicateLocation(usize, usize),
    #[error("{0}")]
    Shape(String),
}

/// Mean and sample standard deviation (n - 1 denominator) of one covariate,
/// taken after the optional log transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub log: bool,
}

impl ColumnStats {
    /// Applies the stored transform to a raw value; `row` is used in errors.
    pub fn apply(&self, value: f64, row: usize) -> Result<f64, DataError> {
        let v = if self.log {
            if !(value > 0.0) {
                return Err(DataError::Value {
                    row,
                    column: self.name.clone(),
                    message: format!("log-transformed value must be positive, got {value}"),
                });
            }
            value.ln()
        } else {
            value
        };
        Ok((v - self.mean) / self.sd)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<ColumnStats>,
}

impl Standardization {
    /// Estimates the record from raw columns.
    pub fn fit(names: &[String], raw: &[Vec<f64>], log_flags: &[bool]) -> Result<Self, DataError> {
        let mut columns = Vec::with_capacity(names.len());
        for ((name, col), &log) in names.iter().zip(raw).zip(log_flags) {
            let mut values = Vec::with_capacity(col.len());
            for (row, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::Value { row, column: name.clone(), message: "non-finite value".into() });
                }
                if log {
                    if !(v > 0.0) {
                        return Err(DataError::Value {
                            row,
                            column: name.clone(),
                            message: format!("log-transformed value must be positive, got {v}"),
                        });
                    }
                    values.push(v.ln());
                } else {
                    values.push(v);
                }
            }
            let n = values.len();
            if n < 2 {
                return Err(DataError::ZeroVariance(name.clone()));
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(DataError::ZeroVariance(name.clone()));
            }
            columns.push(ColumnStats { name: name.clone(), mean, sd, log });
        }
        Ok(Self { columns })
    }

    /// Standardizes raw columns with the stored statistics.
    pub fn apply(&self, raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DataError> {
        if raw.len() != self.columns.len() {
            return Err(DataError::Shape(format!(
                "expected {} covariate columns, got {}",
                self.columns.len(),
                raw.len()
            )));
        }
        self.columns
            .iter()
            .zip(raw)
            .map(|(stats, col)| col.iter().enumerate().map(|(row, &v)| stats.apply(v, row)).collect())
            .collect()
    }

    /// Record for columns that are already on the standardized scale.
    pub fn identity(names: &[String]) -> Self {
        Self { columns: names.iter().map(|n| ColumnStats { name: n.clone(), mean: 0.0, sd: 1.0, log: false }).collect() }
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

/// Locations with standardized covariate columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Sites {
    pub locations: Vec<[f64; 2]>,
    /// Column-major: `covariates[c][i]`.
    pub covariates: Vec<Vec<f64>>,
}

impl Sites {
    pub fn new(locations: Vec<[f64; 2]>, covariates: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let n = locations.len();
        if let Some((c, col)) = covariates.iter().enumerate().find(|(_, col)| col.len() != n) {
            return Err(DataError::Shape(format!("covariate column {c} has {} rows, expected {n}", col.len())));
        }
        Ok(Self { locations, covariates })
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Sites {
        Sites {
            locations: idx.iter().map(|&i| self.locations[i]).collect(),
            covariates: self.covariates.iter().map(|col| idx.iter().map(|&i| col[i]).collect()).collect(),
        }
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, a) in self.locations.iter().enumerate() {
            for b in &self.locations[i + 1..] {
                d = d.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDataset {
    pub sites: Sites,
    pub response: Vec<f64>,
    /// 1 when the second coordinate is identically zero by construction.
    pub dim: usize,
    pub standardization: Standardization,
}

impl SpatialDataset {
    /// Builds a dataset from raw covariates, estimating the standardization.
    pub fn new(
        locations: Vec<[f64; 2]>,
        response: Vec<f64>,
        names: Vec<String>,
        raw: Vec<Vec<f64>>,
        log_flags: Vec<bool>,
    ) -> Result<Self, DataError> {
        if names.len() != raw.len() || log_flags.len() != raw.len() {
            return Err(DataError::Shape("covariate names, columns and log flags differ in length".into()));
        }
        let standardization = Standardization::fit(&names, &raw, &log_flags)?;
        let covariates = standardization.apply(&raw)?;
        Self::from_standardized(locations, response, covariates, standardization)
    }

    /// Builds a dataset from already standardized covariates.
    pub fn from_standardized(
        locations: Vec<[f64; 2]>,
        response: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        standardization: Standardization,
    ) -> Result<Self, DataError> {
        if response.len() != locations.len() {
            return Err(DataError::Shape(format!(
                "{} responses for {} locations",
                response.len(),
                locations.len()
            )));
        }
        if covariates.len() != standardization.columns.len() {
            return Err(DataError::Shape("covariate columns and standardization record differ".into()));
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Value { row, column: "response".into(), message: "non-finite value".into() });
        }
        check_distinct(&locations)?;
        let dim = if locations.iter().all(|l| l[1] == 0.0) { 1 } else { 2 };
        Ok(Self { sites: Sites::new(locations, covariates)?, response, dim, standardization })
    }

    /// Dataset over standardized covariates with an identity record.
    pub fn standardized(sites: Sites, response: Vec<f64>, names: &[String]) -> Result<Self, DataError> {
        Self::from_standardized(sites.locations, response, sites.covariates, Standardization::identity(names))
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.standardization.names()
    }

    pub fn subset(&self, idx: &[usize]) -> SpatialDataset {
        SpatialDataset {
            sites: self.sites.subset(idx),
            response: idx.iter().map(|&i| self.response[i]).collect(),
            dim: self.dim,
            standardization: self.standardization.clone(),
        }
    }
}

fn check_distinct(locations: &[[f64; 2]]) -> Result<(), DataError> {
    let mut order: Vec<usize> = (0..locations.len()).collect();
    order.sort_by(|&a, &b| {
        locations[a][0].total_cmp(&locations[b][0]).then(locations[a][1].total_cmp(&locations[b][1]))
    });
    for w in order.windows(2) {
        if locations[w[0]] == locations[w[1]] {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(DataError::DuplicateLocation(a, b));
        }
    }
    Ok(())
}

/// Column roles for reading a CSV file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub x: String,
    /// Absent for one-dimensional data.
    pub y: Option<String>,
    /// Absent for prediction-site files.
    pub response: Option<String>,
    pub covariates: Vec<String>,
}

/// Raw table read from CSV, before standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub locations: Vec<[f64; 2]>,
    pub response: Option<Vec<f64>>,
    pub covariates: Vec<Vec<f64>>,
}

pub fn read_csv(path: &Path, columns: &CsvColumns) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv_from(file, columns)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, columns: &CsvColumns) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &str| index.get(name).copied().ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let xi = find(&columns.x)?;
    let yi = columns.y.as_deref().map(find).transpose()?;
    let ri = columns.response.as_deref().map(find).transpose()?;
    let ci: Vec<usize> = columns.covariates.iter().map(|c| find(c)).collect::<Result<_, _>>()?;

    let mut table = RawTable {
        locations: Vec::new(),
        response: ri.map(|_| Vec::new()),
        covariates: vec![Vec::new(); ci.len()],
    };
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let get = |i: usize| -> Result<f64, DataError> {
            let field = record.get(i).unwrap_or("");
            field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::Value {
                row,
                column: headers.get(i).unwrap_or("?").to_string(),
                message: format!("cannot parse '{field}' as a finite number"),
            })
        };
        let x = get(xi)?;
        let y = yi.map(get).transpose()?.unwrap_or(0.0);
        table.locations.push([x, y]);
        if let (Some(i), Some(resp)) = (ri, table.response.as_mut()) {
            resp.push(get(i)?);
        }
        for (col, &i) in table.covariates.iter_mut().zip(&ci) {
            col.push(get(i)?);
        }
    }
    Ok(table)
}

/// Loads a training dataset and estimates the standardization record.
pub fn load_csv(path: &Path, columns: &CsvColumns, log_columns: &[String]) -> Result<SpatialDataset, DataError> {
    let table = read_csv(path, columns)?;
    let response = table.response.ok_or_else(|| DataError::MissingColumn("response".into()))?;
    let log_flags = columns.covariates.iter().map(|c| log_columns.contains(c)).collect();
    SpatialDataset::new(table.locations, response, columns.covariates.clone(), table.covariates, log_flags)
}

/// Loads prediction sites, standardizing with a stored training record.
pub fn load_sites_csv(path: &Path, columns: &CsvColumns, record: &Standardization) -> Result<(Sites, Option<Vec<f64>>), DataError> {
    let table = read_csv(path, columns)?;
    let covariates = record.apply(&table.covariates)?;
    Ok((Sites::new(table.locations, covariates)?, table.response))
}

/// Shortest representation that parses back to the identical float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes sites, optional response and raw-scale covariates as CSV.
pub fn write_csv(
    path: &Path,
    dim: usize,
    locations: &[[f64; 2]],
    columns: &[(String, Vec<f64>)],
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string()];
    if dim == 2 {
        header.push("y".to_string());
    }
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (i, loc) in locations.iter().enumerate() {
        let mut rec = vec![fmt_f64(loc[0])];
        if dim == 2 {
            rec.push(fmt_f64(loc[1]));
        }
        rec.extend(columns.iter().map(|(_, c)| fmt_f64(c[i])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn standardize_examples() {
        let s = Standardization::fit(&names(&["a"]), &[vec![1.0, 2.0, 3.0]], &[false]).unwrap();
        assert_eq!(s.apply(&[vec![1.0, 2.0, 3.0]]).unwrap(), vec![vec![-1.0, 0.0, 1.0]]);

        let e = std::f64::consts::E;
        let s = Standardization::fit(&names(&["b"]), &[vec![1.0, e, e * e]], &[true]).unwrap();
        let z = s.apply(&[vec![1.0, e, e * e]]).unwrap();
        for (got, want) in z[0].iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn standardization_errors() {
        assert!(matches!(
            Standardization::fit(&names(&["c"]), &[vec![2.0, 2.0, 2.0]], &[false]),
            Err(DataError::ZeroVariance(_))
        ));
        match Standardization::fit(&names(&["d"]), &[vec![1.0, 0.0, 3.0]], &[true]) {
            Err(DataError::Value { row, column, .. }) => assert_eq!((row, column.as_str()), (1, "d")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let raw: Vec<f64> = (0..57).map(|i| (i as f64 * 0.37).sin() * 4.0 + 11.0).collect();
        let ds = SpatialDataset::new(
            (0..57).map(|i| [i as f64, 0.5 * i as f64]).collect(),
            vec![0.0; 57],
            names(&["c"]),
            vec![raw],
            vec![false],
        )
        .unwrap();
        let col = &ds.sites.covariates[0];
        let mean = col.iter().sum::<f64>() / 57.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 56.0).sqrt();
        assert!(mean.abs() < 1e-8 && (sd - 1.0).abs() < 1e-8);
        assert_eq!(ds.dim, 2);
    }

    #[test]
    fn duplicate_locations_rejected() {
        let r = SpatialDataset::from_standardized(
            vec![[0.0, 1.0], [2.0, 0.0], [0.0, 1.0]],
            vec![1.0, 2.0, 3.0],
            vec![],
            Standardization::default(),
        );
        assert!(matches!(r, Err(DataError::DuplicateLocation(0, 2))));
    }

    #[test]
    fn csv_reading_reports_bad_cells() {
        let text = "x,y,z,elev\n0,0,1.5,10\n1,0,2.5,20\n0,1,3.5,abc\n";
        let cols = CsvColumns {
            x: "x".into(),
            y: Some("y".into()),
            response: Some("z".into()),
            covariates: vec!["elev".into()],
        };
        match read_csv_from(text.as_bytes(), &cols) {
            Err(DataError::Value { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "elev")),
            other => panic!("unexpected {other:?}"),
        }
        let cols_missing = CsvColumns { covariates: vec!["slope".into()], ..cols.clone() };
        assert!(matches!(read_csv_from(text.as_bytes(), &cols_missing), Err(DataError::MissingColumn(_))));
        let ok = "x,z\n0,1\n2,3\n";
        let t = read_csv_from(ok.as_bytes(), &CsvColumns { x: "x".into(), response: Some("z".into()), ..Default::default() }).unwrap();
        assert_eq!(t.locations, vec![[0.0, 0.0], [2.0, 0.0]]);
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, std::f64::consts::PI] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
