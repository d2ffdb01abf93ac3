//! The pairwise mutual-information graph and its CSV form.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Symmetric, nonnegative agent x agent matrix with a zero diagonal (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct MiMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl MiMatrix {
    /// Validates symmetry (exact), nonnegativity, finiteness and the zero diagonal.
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let n = ids.len();
        if values.dim() != (n, n) {
            return Err(Error::InvalidMatrix(format!(
                "{} ids for a {:?} matrix",
                n,
                values.dim()
            )));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("entry ({i},{j}) = {v}")));
                }
                if v != values[[j, i]] {
                    return Err(Error::InvalidMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { ids, values })
    }

    /// Matrix with ids `"0".."n-1"`.
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, values)
    }

    /// Builds a matrix from the upper triangle given by `f(i, j)` for `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
        }
        Self::from_array(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_array(Array2::zeros((n, n))).expect("zero matrix is valid")
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.values.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Induced subgraph on `indices`, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let k = indices.len();
        let mut values = Array2::zeros((k, k));
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                values[[a, b]] = self.values[[i, j]];
            }
        }
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Self { ids, values }
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.ids.clone(), &self.values * c)
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        self.submatrix(perm)
    }

    pub fn with_ids(self, ids: Vec<String>) -> Result<Self> {
        Self::new(ids, self.values)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.ids).map_err(csv_err)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|&v| format_sig9(v)))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads the header-plus-rows layout written by [`MiMatrix::write_csv`].
    ///
    /// Off-diagonal pairs may disagree by rounding (1e-9 relative); they are
    /// replaced by their mean.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let ids: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_owned)
            .collect();
        let n = ids.len();
        let mut values = Array2::zeros((n, n));
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if i >= n || rec.len() != n {
                return Err(Error::Csv(format!("expected {n}x{n} values")));
            }
            for (j, field) in rec.iter().enumerate() {
                values[[i, j]] = field
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("row {i} col {j}: {e}")))?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Csv(format!("expected {n} rows, got {rows}")));
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (values[[i, j]], values[[j, i]]);
                if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1e-300) {
                    return Err(Error::InvalidMatrix(format!("asymmetric at ({i},{j})")));
                }
                let m = 0.5 * (a + b);
                values[[i, j]] = m;
                values[[j, i]] = m;
            }
        }
        Self::new(ids, values)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Plain decimal with 9 significant digits; integers and zero print without
/// a fractional part only when exact.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_owned();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding may carry into a new leading digit (9.99999999995 -> 10.00000000).
    let digits = s.chars().filter(char::is_ascii_digit).skip_while(|&c| c == '0').count();
    if digits > 9 && decimals > 0 {
        let d = decimals - 1;
        format!("{v:.d$}")
    } else {
        s
    }
}
