//! Single-realization geostatistical datasets and their CSV form.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::gp::taper::Locations;
use crate::linalg::Matrix;

/// One realization y observed at `locations`, with an optional n × q design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    pub values: Vec<f64>,
    pub locations: Locations<f64>,
    pub covariates: Option<Matrix<f64>>,
}

impl GpDataset {
    pub fn new(values: Vec<f64>, locations: Locations<f64>, covariates: Option<Matrix<f64>>) -> Result<Self> {
        if values.len() != locations.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                found: values.len(),
            });
        }
        if let Some(x) = &covariates {
            if x.rows() != values.len() {
                return Err(Error::DimensionMismatch {
                    expected: values.len(),
                    found: x.rows(),
                });
            }
        }
        Ok(Self {
            values,
            locations,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// y − Xβ, or y itself when `beta` is `None`.
    pub fn residual(&self, beta: Option<&[f64]>) -> Result<Vec<f64>> {
        match beta {
            None => Ok(self.values.clone()),
            Some(b) => {
                let x = self
                    .covariates
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("mean coefficients given without covariates".into()))?;
                let fitted = x.matvec(b)?;
                Ok(self.values.iter().zip(&fitted).map(|(y, f)| y - f).collect())
            }
        }
    }

    /// Columns `x, y[, t], value[, x1, x2, ...]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["x".to_string(), "y".to_string()];
        if self.locations.times.is_some() {
            header.push("t".into());
        }
        header.push("value".into());
        let q = self.covariates.as_ref().map_or(0, Matrix::cols);
        header.extend((1..=q).map(|k| format!("x{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let c = self.locations.coords[i];
            let mut rec = vec![fmt(c[0]), fmt(c[1])];
            if let Some(t) = &self.locations.times {
                rec.push(fmt(t[i]));
            }
            rec.push(fmt(self.values[i]));
            if let Some(x) = &self.covariates {
                rec.extend(x.row(i).iter().map(|&v| fmt(v)));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (xi, yi, vi) = match (col("x"), col("y"), col("value")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Format("dataset CSV needs columns x, y, value".into())),
        };
        let ti = col("t");
        let cov_cols: Vec<usize> = (1..)
            .map_while(|k| col(&format!("x{k}")))
            .collect();
        let mut coords = Vec::new();
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut cov = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let get = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Format(format!("row {}: bad number in column {}", line + 2, header[k])))
            };
            coords.push([get(xi)?, get(yi)?]);
            if let Some(t) = ti {
                times.push(get(t)?);
            }
            values.push(get(vi)?);
            for &c in &cov_cols {
                cov.push(get(c)?);
            }
        }
        let n = values.len();
        let locations = Locations::new(coords, ti.map(|_| times))?;
        let covariates = if cov_cols.is_empty() {
            None
        } else {
            Some(Matrix::from_row_major(n, cov_cols.len(), cov)?)
        };
        Self::new(values, locations, covariates)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let locs = Locations::new(
            vec![[0.0, 0.1], [1.0 / 3.0, 2.5]],
            Some(vec![0.0, 7.0]),
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.2], vec![1.0, -1e-17]]).unwrap();
        let d = GpDataset::new(vec![std::f64::consts::PI, -2.0], locs, Some(x)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x,y,t,value,x1,x2"));
        assert_eq!(GpDataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn residual_subtracts_mean() {
        let locs = Locations::new(vec![[0.0, 0.0], [1.0, 0.0]], None).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let d = GpDataset::new(vec![1.0, 1.0], locs, Some(x)).unwrap();
        assert_eq!(d.residual(Some(&[0.5])).unwrap(), vec![0.5, 0.0]);
    }
}
