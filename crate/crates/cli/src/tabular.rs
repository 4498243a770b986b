//! Coefficient tables sampled on a `(t, s)` tensor grid, interpolated bilinearly.

use std::path::Path;

use nalgebra::DMatrix;

/// Samples `M(t_a, s_b)` of a `rows × cols` matrix function on a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTable {
    ts: Vec<f64>,
    ss: Vec<f64>,
    rows: usize,
    cols: usize,
    /// Row-major over `(a, b)`.
    values: Vec<DMatrix<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {message}")]
    Shape { path: String, message: String },
}

impl MatrixTable {
    /// Reads a CSV with a header and columns `t, s, m11, m12, ..` (entries row-major).
    ///
    /// Every `(t, s)` pair of the distinct `t` and `s` values must appear exactly once.
    pub fn from_csv(path: &Path, rows: usize, cols: usize) -> Result<Self, TableError> {
        let name = path.display().to_string();
        let shape = |message: String| TableError::Shape { path: name.clone(), message };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| TableError::Csv { path: name.clone(), source })?;
        let mut samples = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|source| TableError::Csv { path: name.clone(), source })?;
            if record.len() != 2 + rows * cols {
                return Err(shape(format!(
                    "data row {} has {} columns, expected {}",
                    line + 1,
                    record.len(),
                    2 + rows * cols
                )));
            }
            let nums = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| shape(format!("data row {}: {e}", line + 1)))?;
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(shape(format!("data row {} contains a non-finite value", line + 1)));
            }
            samples.push(nums);
        }
        Self::from_samples(&samples, rows, cols).map_err(shape)
    }

    /// Builds a table from rows `[t, s, entries..]` in any order.
    pub fn from_samples(samples: &[Vec<f64>], rows: usize, cols: usize) -> Result<Self, String> {
        if samples.is_empty() {
            return Err("table has no samples".into());
        }
        let distinct = |k: usize| {
            let mut v: Vec<f64> = samples.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (ts, ss) = (distinct(0), distinct(1));
        if ts.len() * ss.len() != samples.len() {
            return Err(format!(
                "{} samples do not form a {} × {} tensor grid",
                samples.len(),
                ts.len(),
                ss.len()
            ));
        }
        let mut values = vec![None; ts.len() * ss.len()];
        for r in samples {
            let a = ts.binary_search_by(|v| v.total_cmp(&r[0])).unwrap_or_default();
            let b = ss.binary_search_by(|v| v.total_cmp(&r[1])).unwrap_or_default();
            let slot = &mut values[a * ss.len() + b];
            if slot.is_some() {
                return Err(format!("duplicate sample at t = {}, s = {}", r[0], r[1]));
            }
            *slot = Some(DMatrix::from_row_slice(rows, cols, &r[2..]));
        }
        Ok(Self { ts, ss, rows, cols, values: values.into_iter().map(Option::unwrap).collect() })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Largest absolute entry over all samples.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }

    /// Bilinear interpolation; arguments outside the sampled range are clamped.
    pub fn eval(&self, t: f64, s: f64) -> DMatrix<f64> {
        let (a, wa) = bracket(&self.ts, t);
        let (b, wb) = bracket(&self.ss, s);
        let at = |i: usize, j: usize| &self.values[i * self.ss.len() + j];
        let a1 = (a + 1).min(self.ts.len() - 1);
        let b1 = (b + 1).min(self.ss.len() - 1);
        at(a, b) * ((1.0 - wa) * (1.0 - wb))
            + at(a1, b) * (wa * (1.0 - wb))
            + at(a, b1) * ((1.0 - wa) * wb)
            + at(a1, b1) * (wa * wb)
    }
}

/// Index of the left bracket node and the weight of the right one.
fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
    let last = nodes.len() - 1;
    if last == 0 || x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[last] {
        return (last, 0.0);
    }
    let k = nodes.partition_point(|v| *v <= x) - 1;
    (k, (x - nodes[k]) / (nodes[k + 1] - nodes[k]))
}
