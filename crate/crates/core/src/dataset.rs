//! Role-tagged datasets and their CSV / sidecar formats.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::scalar::Scalar;
use crate::scenario::ScenarioSpec;

/// `n x w` samples laid out by [`BlockLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    layout: BlockLayout,
    values: Array2<T>,
    centered: bool,
    column_means: Array1<T>,
}

impl<T: Scalar> Dataset<T> {
    /// Wraps raw (uncentered) values and records their column means.
    pub fn from_raw(layout: BlockLayout, values: Array2<T>) -> Result<Self> {
        if values.ncols() != layout.width() {
            return Err(Error::Dimension(format!(
                "dataset has {} columns, layout needs {}",
                values.ncols(),
                layout.width()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        let column_means = column_means(&values);
        Ok(Self { layout, values, centered: false, column_means })
    }

    /// Rebuilds a dataset whose values are already centered, given the means
    /// that were subtracted.
    pub fn from_centered(layout: BlockLayout, values: Array2<T>, column_means: Array1<T>) -> Result<Self> {
        let mut ds = Self::from_raw(layout, values)?;
        if column_means.len() != layout.width() {
            return Err(Error::Dimension("column_means length".into()));
        }
        ds.column_means = column_means;
        ds.centered = true;
        Ok(ds)
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Means recorded before centering.
    pub fn column_means(&self) -> &Array1<T> {
        &self.column_means
    }

    /// Subtracts the recorded column means. Idempotent.
    pub fn center(&mut self) {
        if self.centered {
            return;
        }
        self.values -= &self.column_means.view().insert_axis(Axis(0));
        self.centered = true;
    }

    pub fn centered(mut self) -> Self {
        self.center();
        self
    }

    /// Values with the recorded means added back.
    pub fn raw_values(&self) -> Array2<T> {
        if self.centered {
            &self.values + &self.column_means.view().insert_axis(Axis(0))
        } else {
            self.values.clone()
        }
    }

    /// New dataset made of the given rows (with repetition), recentered when
    /// `self` is centered so that every column again has mean zero.
    pub fn resample(&self, rows: &[usize]) -> Self {
        let raw = self.raw_values().select(Axis(0), rows);
        let ds = Self::from_raw(self.layout, raw).expect("resampled rows keep the layout");
        if self.centered {
            ds.centered()
        } else {
            ds
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.layout.node_names().join(","))?;
        let mut line = String::new();
        for row in self.values.outer_iter() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:?}", v.as_f64()));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a CSV with a role-tagged header. Values are taken as given; the
    /// caller decides whether they are centered (see [`DatasetSidecar`]).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Err(Error::Parse("empty CSV".into())),
        };
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let layout = BlockLayout::from_names(&names)?;
        let w = layout.width();
        let mut flat = Vec::new();
        let mut n = 0;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != w {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {w}",
                    lineno + 2,
                    fields.len()
                )));
            }
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {f:?}", lineno + 2)))?;
                flat.push(T::of(v));
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Parse("CSV has no data rows".into()));
        }
        let values = Array2::from_shape_vec((n, w), flat).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_raw(layout, values)
    }

    pub fn sidecar(&self, spec: Option<&ScenarioSpec>) -> DatasetSidecar {
        DatasetSidecar {
            p: self.layout.p(),
            s: self.layout.s(),
            rows: self.rows(),
            centered: self.centered,
            column_means: self.column_means.iter().map(|v| v.as_f64()).collect(),
            seed: spec.map(|s| s.seed),
            spec: spec.cloned(),
        }
    }

    /// Applies a sidecar to a freshly read CSV: restores the recorded means
    /// and centering flag.
    pub fn with_sidecar(self, sidecar: &DatasetSidecar) -> Result<Self> {
        if sidecar.p != self.layout.p() || sidecar.s != self.layout.s() {
            return Err(Error::Dimension("sidecar layout disagrees with CSV header".into()));
        }
        if sidecar.centered {
            let means = Array1::from_iter(sidecar.column_means.iter().map(|&v| T::of(v)));
            Self::from_centered(self.layout, self.values, means)
        } else {
            Ok(self)
        }
    }
}

fn column_means<T: Scalar>(values: &Array2<T>) -> Array1<T> {
    let n = values.nrows();
    if n == 0 {
        return Array1::zeros(values.ncols());
    }
    values.sum_axis(Axis(0)) / T::of(n as f64)
}

/// JSON companion to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub p: usize,
    pub s: usize,
    pub rows: usize,
    pub centered: bool,
    pub column_means: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub spec: Option<ScenarioSpec>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip_is_exact() {
        let layout = BlockLayout::new(1, 1).unwrap();
        let values = array![
            [0.1, -2.5, 1.0 / 3.0, 1e-17, 7.0],
            [std::f64::consts::PI, 0.0, -0.0, 123456.789, -1.0]
        ];
        let ds = Dataset::from_raw(layout, values.clone()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("X1,A,XA1,M1,Y\n"));
        let back = Dataset::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values(), &values);
    }

    #[test]
    fn empty_csv_is_an_error() {
        assert!(Dataset::<f64>::read_csv(&b""[..]).is_err());
        assert!(Dataset::<f64>::read_csv(&b"X1,A,XA1,Y\n"[..]).is_err());
        assert!(Dataset::<f64>::read_csv(&b"X1,A,XA1,Y\n1,2,3\n"[..]).is_err());
    }

    #[test]
    fn centering_and_resampling() {
        let layout = BlockLayout::new(1, 0).unwrap();
        let values = array![[1.0, 2.0, 2.0, 0.0], [3.0, 4.0, 12.0, 1.0]];
        let ds = Dataset::from_raw(layout, values.clone()).unwrap().centered();
        assert_eq!(ds.column_means(), &array![2.0, 3.0, 7.0, 0.5]);
        assert!(ds.values().sum_axis(Axis(0)).iter().all(|v: &f64| v.abs() < 1e-12));
        assert_eq!(ds.raw_values(), values);
        let r = ds.resample(&[1, 1, 0]);
        assert!(r.is_centered());
        assert!(r.values().sum_axis(Axis(0)).iter().all(|v: &f64| v.abs() < 1e-12));
    }
}
