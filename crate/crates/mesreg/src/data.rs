//! Domain types and the CSV ingestion/validation layer.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-role map for [`load_csv`]. Covariate lists name CSV columns; the
/// token `"1"` in first position requests an intercept column of ones.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub y: String,
    pub x: String,
    pub z_v: Vec<String>,
    pub z_m: Vec<String>,
}

/// Observations for a joint (VaR, MES) regression: outcome `y`, distress
/// series `x` and one covariate matrix per model part.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    pub z_v: DMatrix<f64>,
    pub z_m: DMatrix<f64>,
}

impl Dataset {
    /// Validating constructor; rejects ragged shapes, non-finite entries and
    /// samples too small for the requested parameter count.
    pub fn new(
        y: Vec<f64>,
        x: Vec<f64>,
        z_v: DMatrix<f64>,
        z_m: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z_v.nrows() != n || z_m.nrows() != n {
            return Err(Error::Dimension(format!(
                "row mismatch: y has {n}, x has {}, z_v has {}, z_m has {}",
                x.len(),
                z_v.nrows(),
                z_m.nrows()
            )));
        }
        let p = z_v.ncols();
        let q = z_m.ncols();
        if n < p + q + 1 {
            return Err(Error::Dimension(format!(
                "n = {n} observations for p + q = {} parameters; need n >= p + q + 1",
                p + q
            )));
        }
        for (label, v) in [("y", &y), ("x", &x)] {
            if let Some(i) = v.iter().position(|e| !e.is_finite()) {
                return Err(Error::Parse {
                    row: i + 1,
                    column: label.to_string(),
                    message: "non-finite value".into(),
                });
            }
        }
        for (label, m) in [("z_v", &z_v), ("z_m", &z_m)] {
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    if !m[(i, j)].is_finite() {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: format!("{label}[{}]", j + 1),
                            message: "non-finite value".into(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            y: DVector::from_vec(y),
            x: DVector::from_vec(x),
            z_v,
            z_m,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Serialize numeric content back to CSV with shortest round-trip float
    /// formatting; columns are `y,x,zv_1..zv_p,zm_1..zm_q`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "x".to_string()];
        header.extend((1..=self.z_v.ncols()).map(|j| format!("zv_{j}")));
        header.extend((1..=self.z_m.ncols()).map(|j| format!("zm_{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.y[i].to_string(), self.x[i].to_string()];
            rec.extend((0..self.z_v.ncols()).map(|j| self.z_v[(i, j)].to_string()));
            rec.extend((0..self.z_m.ncols()).map(|j| self.z_m[(i, j)].to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A parsed numeric CSV table, kept column-major for cheap column pulls.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub n: usize,
}

impl NumericTable {
    pub fn read_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(file)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    row: i + 1,
                    column: String::new(),
                    message: format!(
                        "expected {} fields, found {}",
                        headers.len(),
                        record.len()
                    ),
                });
            }
            for (j, field) in record.iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: headers[j].clone(),
                    message: format!("cannot parse '{field}' as a number"),
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: headers[j].clone(),
                        message: format!("non-finite value '{field}'"),
                    });
                }
                columns[j].push(value);
            }
        }
        let n = columns.first().map_or(0, |c| c.len());
        Ok(Self { headers, columns, n })
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))?;
        Ok(&self.columns[idx])
    }

    /// Assemble a design matrix from column names; a leading `"1"` token
    /// prepends an intercept column of ones.
    pub fn design(&self, cols: &[String]) -> Result<DMatrix<f64>> {
        if cols.is_empty() {
            return Err(Error::Schema(
                "at least one covariate column (or the intercept token '1') is required".into(),
            ));
        }
        if cols.iter().skip(1).any(|c| c == "1") {
            return Err(Error::Schema(
                "the intercept token '1' must come first in a covariate list".into(),
            ));
        }
        let mut mat = DMatrix::zeros(self.n, cols.len());
        for (j, name) in cols.iter().enumerate() {
            if j == 0 && name == "1" {
                for i in 0..self.n {
                    mat[(i, 0)] = 1.0;
                }
            } else {
                let col = self.column(name)?;
                for i in 0..self.n {
                    mat[(i, j)] = col[i];
                }
            }
        }
        Ok(mat)
    }
}

/// Load and validate a dataset from a headered CSV file.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<Dataset> {
    let table = NumericTable::read_path(path)?;
    dataset_from_table(&table, schema)
}

/// Same as [`load_csv`] but from an already-parsed table.
pub fn dataset_from_table(table: &NumericTable, schema: &CsvSchema) -> Result<Dataset> {
    let y = table.column(&schema.y)?.to_vec();
    let x = table.column(&schema.x)?.to_vec();
    let z_v = table.design(&schema.z_v)?;
    let z_m = table.design(&schema.z_m)?;
    Dataset::new(y, x, z_v, z_m)
}

/// Model link: the conditional VaR or MES as a function of covariates.
///
/// Custom links supply a value/gradient pair and a starting point for the
/// optimizer; the linear link needs neither.
pub trait LinkFn: Send + Sync {
    fn value(&self, z_row: &[f64], theta: &[f64]) -> f64;
    fn gradient(&self, z_row: &[f64], theta: &[f64], out: &mut [f64]);
    fn param_dim(&self) -> usize;
}

#[derive(Clone)]
pub enum Link {
    Linear,
    Custom {
        f: Arc<dyn LinkFn>,
        start: Vec<f64>,
    },
}

impl std::fmt::Debug for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Link::Linear => write!(f, "Linear"),
            Link::Custom { start, .. } => write!(f, "Custom(dim {})", start.len()),
        }
    }
}

impl Link {
    pub fn param_dim(&self, z_cols: usize) -> usize {
        match self {
            Link::Linear => z_cols,
            Link::Custom { f, .. } => f.param_dim(),
        }
    }

    pub fn value(&self, z_row: &[f64], theta: &[f64]) -> f64 {
        match self {
            Link::Linear => z_row.iter().zip(theta).map(|(z, t)| z * t).sum(),
            Link::Custom { f, .. } => f.value(z_row, theta),
        }
    }

    pub fn gradient(&self, z_row: &[f64], theta: &[f64], out: &mut [f64]) {
        match self {
            Link::Linear => out.copy_from_slice(z_row),
            Link::Custom { f, .. } => f.gradient(z_row, theta, out),
        }
    }
}

/// Probability level plus the two link definitions.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub beta: f64,
    pub var_link: Link,
    pub mes_link: Link,
    pub p: usize,
    pub q: usize,
}

impl ModelSpec {
    /// Linear model for both parts; `p` and `q` are the covariate counts.
    pub fn linear(beta: f64, p: usize, q: usize) -> Self {
        Self {
            beta,
            var_link: Link::Linear,
            mes_link: Link::Linear,
            p,
            q,
        }
    }
}

/// Joint invariant check for a dataset/spec pair. Pure and deterministic;
/// every violation yields a distinct diagnostic.
pub fn validate(dataset: &Dataset, spec: &ModelSpec) -> Result<()> {
    if !(spec.beta > 0.0 && spec.beta < 1.0) {
        return Err(Error::Level(format!(
            "beta = {} outside the open interval (0, 1)",
            spec.beta
        )));
    }
    let p_expected = spec.var_link.param_dim(dataset.z_v.ncols());
    let q_expected = spec.mes_link.param_dim(dataset.z_m.ncols());
    if spec.p != p_expected {
        return Err(Error::Dimension(format!(
            "spec.p = {} but the VaR link implies {p_expected}",
            spec.p
        )));
    }
    if spec.q != q_expected {
        return Err(Error::Dimension(format!(
            "spec.q = {} but the MES link implies {q_expected}",
            spec.q
        )));
    }
    if let Link::Custom { f, start } = &spec.var_link {
        if start.len() != f.param_dim() {
            return Err(Error::Dimension(format!(
                "VaR link start has {} entries for {} parameters",
                start.len(),
                f.param_dim()
            )));
        }
    }
    if let Link::Custom { f, start } = &spec.mes_link {
        if start.len() != f.param_dim() {
            return Err(Error::Dimension(format!(
                "MES link start has {} entries for {} parameters",
                start.len(),
                f.param_dim()
            )));
        }
    }
    if dataset.n() < spec.p + spec.q + 1 {
        return Err(Error::Dimension(format!(
            "n = {} too small for p + q = {}",
            dataset.n(),
            spec.p + spec.q
        )));
    }
    Ok(())
}
