//! Covariate matrices and datasets, with CSV import/export.

use crate::error::{check_len, GaimError, Result};
use crate::links::{Family, LinkKind};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Row-major `n x d` covariate matrix. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn from_row_major(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(GaimError::InvalidArgument("covariate dimension is zero".into()));
        }
        check_len(n * d, values.len(), "covariate buffer length")?;
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            check_len(d, r.len(), "covariate row length")?;
            values.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.values)
    }
}

/// What generated a dataset. Informational; fitting never consults it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    pub family: Option<Family>,
    pub link: Option<LinkKind>,
    pub truth: Option<String>,
}

/// Covariates, responses and the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Covariates,
    pub y: Vec<f64>,
    pub seed: u64,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Covariates, y: Vec<f64>, seed: u64) -> Result<Self> {
        check_len(x.n(), y.len(), "response length")?;
        Ok(Self {
            x,
            y,
            seed,
            meta: DatasetMeta::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// Writes a CSV with header `x1,..,xd,y`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (row, y) in self.x.rows().zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. The seed is not stored in
    /// the file and is set to `seed`.
    pub fn read_csv<R: std::io::Read>(reader: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 2 || &header[cols - 1] != "y" {
            return Err(GaimError::InvalidArgument(
                "dataset CSV needs columns x1..xd,y".into(),
            ));
        }
        for (j, name) in header.iter().take(cols - 1).enumerate() {
            if name != format!("x{}", j + 1) {
                return Err(GaimError::InvalidArgument(format!(
                    "unexpected column name {name:?}"
                )));
            }
        }
        let d = cols - 1;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            check_len(cols, rec.len(), "dataset CSV record")?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    GaimError::InvalidArgument(format!("cannot parse {field:?} as a number"))
                })?;
                if j < d {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        let x = Covariates::from_row_major(ys.len(), d, xs)?;
        Dataset::new(x, ys, seed)
    }

    pub fn load_csv(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, seed)
    }
}
