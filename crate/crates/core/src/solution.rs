//! Diagonal solutions and two-parameter fields on the grid triangles.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::grid::{TimeGrid, VectorPath};
use crate::scalar::Scalar;

/// Grid values of `X(t)`, `Y(t)` and the kernel convolution `Z`.
#[derive(Debug, Clone)]
pub struct DiagonalSolution<T: Scalar> {
    pub x: VectorPath<T>,
    pub y: VectorPath<T>,
    pub z: VectorPath<T>,
    pub residual_forward: T,
    pub residual_backward: T,
}

impl<T: Scalar> DiagonalSolution<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        self.x.grid()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn max_residual(&self) -> T {
        self.residual_forward.max(self.residual_backward)
    }

    /// Sup distance over `(X, Y)` jointly.
    pub fn distance(&self, other: &Self) -> T {
        self.x.sup_distance(&other.x).max(self.y.sup_distance(&other.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Entries `(i, j)` with `j <= i`.
    Lower,
    /// Entries `(i, j)` with `j >= i`.
    Upper,
}

/// Values on one closed triangle of the grid square, stored row by row.
#[derive(Debug, Clone)]
pub struct TriangularField<T: Scalar> {
    grid: TimeGrid<T>,
    orientation: Orientation,
    dim: usize,
    rows: Vec<Vec<DVector<T>>>,
}

impl<T: Scalar> TriangularField<T> {
    pub fn zeros(grid: TimeGrid<T>, orientation: Orientation, dim: usize) -> Self {
        let n = grid.last();
        let rows = (0..=n)
            .map(|i| {
                let len = match orientation {
                    Orientation::Lower => i + 1,
                    Orientation::Upper => n - i + 1,
                };
                vec![DVector::zeros(dim); len]
            })
            .collect();
        Self { grid, orientation, dim, rows }
    }

    /// Fill from `value(i, j)` over the triangle.
    pub fn from_fn(
        grid: TimeGrid<T>,
        orientation: Orientation,
        dim: usize,
        mut value: impl FnMut(usize, usize) -> DVector<T>,
    ) -> Self {
        let n = grid.last();
        let rows = (0..=n)
            .map(|i| match orientation {
                Orientation::Lower => (0..=i).map(|j| value(i, j)).collect(),
                Orientation::Upper => (i..=n).map(|j| value(i, j)).collect(),
            })
            .collect();
        Self { grid, orientation, dim, rows }
    }

    pub(crate) fn from_rows(grid: TimeGrid<T>, orientation: Orientation, dim: usize, rows: Vec<Vec<DVector<T>>>) -> Self {
        Self { grid, orientation, dim, rows }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let n = self.grid.last();
        i <= n
            && j <= n
            && match self.orientation {
                Orientation::Lower => j <= i,
                Orientation::Upper => j >= i,
            }
    }

    /// Entry at `(t_i, s_j)`; panics outside the stored triangle.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &DVector<T> {
        debug_assert!(self.contains(i, j), "({i}, {j}) outside {:?} triangle", self.orientation);
        match self.orientation {
            Orientation::Lower => &self.rows[i][j],
            Orientation::Upper => &self.rows[i][j - i],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Result<&DVector<T>> {
        if self.contains(i, j) {
            Ok(self.at(i, j))
        } else {
            invalid(format!("({i}, {j}) outside the {:?} triangle", self.orientation))
        }
    }

    pub fn diagonal(&self) -> Vec<DVector<T>> {
        (0..=self.grid.last()).map(|i| self.at(i, i).clone()).collect()
    }

    /// Visit every stored entry as `(i, j, value)` in row-major order.
    pub fn for_each(&self, mut visit: impl FnMut(usize, usize, &DVector<T>)) {
        for (i, row) in self.rows.iter().enumerate() {
            let offset = match self.orientation {
                Orientation::Lower => 0,
                Orientation::Upper => i,
            };
            for (k, v) in row.iter().enumerate() {
                visit(i, k + offset, v);
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.orientation != other.orientation || !self.grid.same_as(&other.grid) || self.dim != other.dim {
            return invalid("field shapes differ");
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
            .collect();
        Ok(Self::from_rows(self.grid, self.orientation, self.dim, rows))
    }

    pub fn sup_norm(&self) -> T {
        let mut m = T::zero();
        self.for_each(|_, _, v| m = m.max(v.amax()));
        m
    }
}

/// Diagonal solution together with `𝒳` on the lower and `𝒴` on the upper triangle.
#[derive(Debug, Clone)]
pub struct FieldSolution<T: Scalar> {
    pub diagonal: DiagonalSolution<T>,
    pub x_field: TriangularField<T>,
    pub y_field: TriangularField<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_indexing() {
        let g = TimeGrid::<f64>::new(1.0, 4).unwrap();
        let lo = TriangularField::from_fn(g, Orientation::Lower, 1, |i, j| DVector::from_element(1, (10 * i + j) as f64));
        let up = TriangularField::from_fn(g, Orientation::Upper, 1, |i, j| DVector::from_element(1, (10 * i + j) as f64));
        assert_eq!(lo.at(3, 1)[0], 31.0);
        assert_eq!(up.at(1, 3)[0], 13.0);
        assert!(lo.get(1, 3).is_err());
        assert!(up.get(3, 1).is_err());
        let mut count = 0;
        lo.for_each(|i, j, v| {
            assert!(j <= i);
            assert_eq!(v[0], (10 * i + j) as f64);
            count += 1;
        });
        assert_eq!(count, 15);
        up.for_each(|i, j, v| {
            assert!(j >= i);
            assert_eq!(v[0], (10 * i + j) as f64);
        });
        assert_eq!(lo.diagonal()[2][0], 22.0);
        assert_eq!(up.diagonal()[4][0], 44.0);
        assert_eq!(lo.sub(&lo).unwrap().sup_norm(), 0.0);
        assert!(lo.sub(&up).is_err());
    }
}
