//! Uniform time grids and composite-trapezoid operators over the lower and
//! upper triangles of `[0, T]^2`.
//!
//! All sums run in increasing index order so repeated evaluations are
//! bitwise reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, FbvieError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T: Scalar> {
    horizon: T,
    intervals: usize,
    step: T,
}

impl<T: Scalar> TimeGrid<T> {
    /// Uniform partition of `[0, horizon]` into `intervals` cells.
    pub fn new(horizon: T, intervals: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive and finite, got {horizon}"));
        }
        if intervals < 2 {
            return invalid(format!("need at least 2 intervals, got {intervals}"));
        }
        Ok(Self {
            horizon,
            intervals,
            step: horizon / T::from_usize_lossy(intervals),
        })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Number of intervals `N`; the grid has `N + 1` nodes.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn last(&self) -> usize {
        self.intervals
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        if i == self.intervals {
            self.horizon
        } else {
            T::from_usize_lossy(i) * self.horizon / T::from_usize_lossy(self.intervals)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.intervals).map(|i| self.node(i)).collect()
    }

    /// Index of the node equal to `t` (within a small fraction of a step).
    pub fn index_of(&self, t: T) -> Option<usize> {
        let pos = (t / self.step).as_f64();
        if !pos.is_finite() || pos < -0.5 {
            return None;
        }
        let k = pos.round() as usize;
        if k > self.intervals {
            return None;
        }
        let tol = self.step * T::lit(1e-9);
        if (self.node(k) - t).abs() <= tol {
            Some(k)
        } else {
            None
        }
    }

    /// Weight of node `j` in the composite trapezoid over `[t_lo, t_hi]`.
    #[inline]
    pub fn weight(&self, lo: usize, hi: usize, j: usize) -> T {
        debug_assert!(lo <= j && j <= hi && hi <= self.intervals);
        if lo == hi {
            T::zero()
        } else if j == lo || j == hi {
            self.step * T::lit(0.5)
        } else {
            self.step
        }
    }

    /// Composite trapezoid weights for nodes `lo..=hi`.
    pub fn trap_weights(&self, lo: usize, hi: usize) -> Result<Vec<T>> {
        if lo > hi || hi > self.intervals {
            return invalid(format!(
                "weight range {lo}..={hi} outside grid with {} intervals",
                self.intervals
            ));
        }
        Ok((lo..=hi).map(|j| self.weight(lo, hi, j)).collect())
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.intervals == other.intervals && self.horizon == other.horizon
    }
}

/// Grid-sampled `R^n`-valued function.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPath<T: Scalar> {
    grid: TimeGrid<T>,
    dim: usize,
    values: Vec<DVector<T>>,
}

impl<T: Scalar> VectorPath<T> {
    pub fn new(grid: TimeGrid<T>, values: Vec<DVector<T>>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "path has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            ));
        }
        let dim = values[0].len();
        if dim == 0 {
            return invalid("path dimension must be positive");
        }
        for (i, v) in values.iter().enumerate() {
            if v.len() != dim {
                return invalid(format!("value {i} has dimension {} (expected {dim})", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FbvieError::Numerical { i, j: i, what: "path value" });
            }
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid<T>, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![DVector::zeros(dim); grid.len()],
        }
    }

    pub fn constant(grid: TimeGrid<T>, value: DVector<T>) -> Self {
        Self {
            grid,
            dim: value.len(),
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid<T>, dim: usize, mut f: impl FnMut(T) -> DVector<T>) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect::<Vec<_>>();
        let path = Self::new(grid, values)?;
        if path.dim != dim {
            return invalid(format!("path dimension {} but {dim} requested", path.dim));
        }
        Ok(path)
    }

    pub(crate) fn from_values_unchecked(grid: TimeGrid<T>, dim: usize, values: Vec<DVector<T>>) -> Self {
        Self { grid, dim, values }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[DVector<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<DVector<T>> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize) -> &DVector<T> {
        &self.values[i]
    }

    pub fn last(&self) -> &DVector<T> {
        &self.values[self.grid.last()]
    }

    /// Sup over nodes of the max-abs component norm.
    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.amax()))
    }

    pub fn sup_distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (a, b)| m.max((a - b).amax()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self::from_values_unchecked(self.grid, self.dim, values)
    }

    pub fn component(&self, k: usize) -> Vec<T> {
        self.values.iter().map(|v| v[k]).collect()
    }
}

fn check_finite<T: Scalar>(v: &DVector<T>, i: usize, j: usize, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FbvieError::Numerical { i, j, what })
    }
}

/// `result_i = sum_{j<=i} w_j(0,i) integrand(i, j)`, the discrete `int_0^t`.
pub fn integrate_lower<T: Scalar>(
    grid: &TimeGrid<T>,
    dim: usize,
    mut integrand: impl FnMut(usize, usize) -> DVector<T>,
) -> Result<VectorPath<T>> {
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut acc = DVector::zeros(dim);
        for j in 0..=i {
            let w = grid.weight(0, i, j);
            if w == T::zero() {
                continue;
            }
            let v = integrand(i, j);
            check_finite(&v, i, j, "lower integrand")?;
            if v.len() != dim {
                return invalid(format!("integrand at ({i},{j}) has dimension {}", v.len()));
            }
            acc.axpy(w, &v, T::one());
        }
        out.push(acc);
    }
    Ok(VectorPath::from_values_unchecked(*grid, dim, out))
}

/// `result_i = sum_{j>=i} w_j(i,N) integrand(i, j)`, the discrete `int_t^T`.
pub fn integrate_upper<T: Scalar>(
    grid: &TimeGrid<T>,
    dim: usize,
    mut integrand: impl FnMut(usize, usize) -> DVector<T>,
) -> Result<VectorPath<T>> {
    let n = grid.last();
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..=n {
        let mut acc = DVector::zeros(dim);
        for j in i..=n {
            let w = grid.weight(i, n, j);
            if w == T::zero() {
                continue;
            }
            let v = integrand(i, j);
            check_finite(&v, i, j, "upper integrand")?;
            if v.len() != dim {
                return invalid(format!("integrand at ({i},{j}) has dimension {}", v.len()));
            }
            acc.axpy(w, &v, T::one());
        }
        out.push(acc);
    }
    Ok(VectorPath::from_values_unchecked(*grid, dim, out))
}

/// `Z_i = sum_{j>=i} w_j(i,N) K(t_i, t_j) Y_j`.
pub fn kernel_convolve<T: Scalar>(
    grid: &TimeGrid<T>,
    kernel: impl Fn(T, T) -> DMatrix<T>,
    y: &VectorPath<T>,
) -> Result<VectorPath<T>> {
    if !grid.same_as(y.grid()) {
        return invalid("kernel_convolve: path lives on a different grid");
    }
    let n = grid.last();
    let mut out = Vec::with_capacity(grid.len());
    let mut rows = None;
    for i in 0..=n {
        let mut acc: Option<DVector<T>> = None;
        for j in i..=n {
            let k = kernel(grid.node(i), grid.node(j));
            if k.ncols() != y.dim() {
                return invalid(format!(
                    "kernel is {}x{} but path dimension is {}",
                    k.nrows(),
                    k.ncols(),
                    y.dim()
                ));
            }
            match rows {
                None => rows = Some(k.nrows()),
                Some(r) if r != k.nrows() => return invalid("kernel row count varies across the grid"),
                _ => {}
            }
            let acc = acc.get_or_insert_with(|| DVector::zeros(k.nrows()));
            let w = grid.weight(i, n, j);
            if w == T::zero() {
                continue;
            }
            let v = k * y.at(j);
            check_finite(&v, i, j, "kernel product")?;
            acc.axpy(w, &v, T::one());
        }
        out.push(acc.unwrap_or_else(|| DVector::zeros(rows.unwrap_or(y.dim()))));
    }
    let dim = rows.unwrap_or(y.dim());
    Ok(VectorPath::from_values_unchecked(*grid, dim, out))
}

/// Upper integral `I_i = sum_{j>=i} w_j(i,N) Y_j` computed by a backward running sum.
pub(crate) fn upper_running_integral<T: Scalar>(grid: &TimeGrid<T>, y: &[DVector<T>]) -> Vec<DVector<T>> {
    let n = grid.last();
    let half = grid.step() * T::lit(0.5);
    let mut out = vec![DVector::zeros(y[0].len()); n + 1];
    for i in (0..n).rev() {
        let mut acc = out[i + 1].clone();
        acc.axpy(half, &y[i], T::one());
        acc.axpy(half, &y[i + 1], T::one());
        out[i] = acc;
    }
    out
}
