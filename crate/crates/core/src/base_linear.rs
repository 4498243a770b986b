//! Exact solver for the linear `α = 0` system and its off-diagonal fields.
//!
//! The discrete system is
//! `Y_i = X_i + h0(t_i) + Σ_{j≥i} w g0(t_i,t_j)` and
//! `X_i = x0(t_i) + Σ_{j≤i} w [f0(t_i,t_j) - G(X_N) - Σ_{r≥j} w Y_r]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, FbvieError, Result};
use crate::grid::{upper_running_integral, TimeGrid, VectorPath};
use crate::problem::{FbvieProblem, PathFn, TerminalMap};
use crate::scalar::Scalar;
use crate::solution::{DiagonalSolution, FieldSolution, Orientation, TriangularField};

/// Driver `(t, s) -> R^n`.
pub type DriverFn<T> = Arc<dyn Fn(T, T) -> DVector<T> + Send + Sync>;

/// Data of the linear system; absent drivers are zero.
#[derive(Clone)]
pub struct LinearDrivers<T: Scalar> {
    pub dim: usize,
    pub f0: Option<DriverFn<T>>,
    pub g0: Option<DriverFn<T>>,
    pub h0: Option<PathFn<T>>,
    pub x0: PathFn<T>,
    pub terminal: TerminalMap<T>,
    pub terminal_psd: DMatrix<T>,
}

impl<T: Scalar> fmt::Debug for LinearDrivers<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearDrivers")
            .field("dim", &self.dim)
            .field("f0", &self.f0.is_some())
            .field("g0", &self.g0.is_some())
            .field("h0", &self.h0.is_some())
            .field("terminal", &self.terminal)
            .finish()
    }
}

impl<T: Scalar> LinearDrivers<T> {
    /// Zero drivers with the initial path and terminal map of `problem`.
    pub fn from_problem(problem: &FbvieProblem<T>) -> Self {
        let x0 = problem.clone();
        Self {
            dim: problem.dim(),
            f0: None,
            g0: None,
            h0: None,
            x0: Arc::new(move |t| x0.x0(t)),
            terminal: problem.terminal().clone(),
            terminal_psd: problem.g0().clone(),
        }
    }

    pub fn zero(dim: usize, x0: DVector<T>) -> Self {
        Self {
            dim,
            f0: None,
            g0: None,
            h0: None,
            x0: Arc::new(move |_| x0.clone()),
            terminal: TerminalMap::zero(dim),
            terminal_psd: DMatrix::zeros(dim, dim),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.f0.is_none() && self.g0.is_none() && self.h0.is_none()
    }

    #[inline]
    pub fn f0_at(&self, t: T, s: T) -> DVector<T> {
        match &self.f0 {
            Some(f) => f(t, s),
            None => DVector::zeros(self.dim),
        }
    }

    #[inline]
    pub fn g0_at(&self, t: T, s: T) -> DVector<T> {
        match &self.g0 {
            Some(g) => g(t, s),
            None => DVector::zeros(self.dim),
        }
    }

    #[inline]
    pub fn h0_at(&self, t: T) -> DVector<T> {
        match &self.h0 {
            Some(h) => h(t),
            None => DVector::zeros(self.dim),
        }
    }
}

const OUTER_DAMPING: f64 = 0.5;
const OUTER_CAP: usize = 200;
const OUTER_TOL: f64 = 1e-12;

fn finite_or<T: Scalar>(v: DVector<T>, i: usize, j: usize, what: &'static str) -> Result<DVector<T>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(FbvieError::Numerical { i, j, what })
    }
}

/// `c_i = h0(t_i) + Σ_{j≥i} w g0(t_i, t_j)`.
fn backward_offsets<T: Scalar>(d: &LinearDrivers<T>, grid: &TimeGrid<T>) -> Result<Vec<DVector<T>>> {
    let n = grid.last();
    (0..=n)
        .map(|i| {
            let t = grid.node(i);
            let mut c = finite_or(d.h0_at(t), i, i, "h0")?;
            if d.g0.is_some() {
                for j in i..=n {
                    let w = grid.weight(i, n, j);
                    if w != T::zero() {
                        c.axpy(w, &finite_or(d.g0_at(t, grid.node(j)), i, j, "g0")?, T::one());
                    }
                }
            }
            Ok(c)
        })
        .collect()
}

/// `x0(t_i) + Σ_{j≤i} w f0(t_i, t_j)`.
fn forward_offsets<T: Scalar>(d: &LinearDrivers<T>, grid: &TimeGrid<T>) -> Result<Vec<DVector<T>>> {
    (0..grid.len())
        .map(|i| {
            let t = grid.node(i);
            let mut c = finite_or((d.x0)(t), i, i, "x0")?;
            if d.f0.is_some() {
                for j in 0..=i {
                    let w = grid.weight(0, i, j);
                    if w != T::zero() {
                        c.axpy(w, &finite_or(d.f0_at(t, grid.node(j)), i, j, "f0")?, T::one());
                    }
                }
            }
            Ok(c)
        })
        .collect()
}

fn condition_estimate<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let sv = m.clone().singular_values();
    let (mx, mn) = (sv.max().as_f64(), sv.min().as_f64());
    if mn == 0.0 {
        f64::INFINITY
    } else {
        mx / mn
    }
}

/// Sup defects of the two discrete identities.
fn base_defects<T: Scalar>(
    d: &LinearDrivers<T>,
    grid: &TimeGrid<T>,
    x: &[DVector<T>],
    y: &[DVector<T>],
    fwd_off: &[DVector<T>],
    bwd_off: &[DVector<T>],
) -> (T, T) {
    let n = grid.last();
    let iy = upper_running_integral(grid, y);
    let gx = d.terminal.apply(&x[n]);
    let mut fwd = T::zero();
    let mut bwd = T::zero();
    for i in 0..=n {
        let mut r = &x[i] - &fwd_off[i];
        for (j, iyj) in iy.iter().enumerate().take(i + 1) {
            let w = grid.weight(0, i, j);
            if w != T::zero() {
                r.axpy(w, &(&gx + iyj), T::one());
            }
        }
        fwd = fwd.max(r.amax());
        bwd = bwd.max((&y[i] - &x[i] - &bwd_off[i]).amax());
    }
    (fwd, bwd)
}

/// Solve the linear system by one dense factorization (plus a damped outer loop on `X_N` for nonlinear `G`).
pub fn solve_base_diagonal<T: Scalar>(drivers: &LinearDrivers<T>, grid: &TimeGrid<T>) -> Result<DiagonalSolution<T>> {
    let dim = drivers.dim;
    let n = grid.last();
    let len = grid.len();
    let fwd_off = forward_offsets(drivers, grid)?;
    let bwd_off = backward_offsets(drivers, grid)?;

    // Coefficient of Y_r in row i of the double sum, and the weight total multiplying G(X_N).
    let mut w = DMatrix::<T>::zeros(len, len);
    let mut tau = vec![T::zero(); len];
    for i in 0..len {
        for j in 0..=i {
            let wj = grid.weight(0, i, j);
            if wj == T::zero() {
                continue;
            }
            tau[i] += wj;
            for r in j..=n {
                let wr = grid.weight(j, n, r);
                if wr != T::zero() {
                    w[(i, r)] += wj * wr;
                }
            }
        }
    }

    let size = len * dim;
    let mut mat = DMatrix::<T>::identity(size, size);
    let mut rhs_base = DVector::<T>::zeros(size);
    for i in 0..len {
        let mut rhs = fwd_off[i].clone();
        for r in 0..len {
            let wir = w[(i, r)];
            if wir == T::zero() {
                continue;
            }
            rhs.axpy(-wir, &bwd_off[r], T::one());
            for k in 0..dim {
                mat[(i * dim + k, r * dim + k)] += wir;
            }
        }
        if let TerminalMap::Linear(g) = &drivers.terminal {
            let mut block = mat.view_mut((i * dim, n * dim), (dim, dim));
            block += g * tau[i];
        }
        rhs_base.rows_mut(i * dim, dim).copy_from(&rhs);
    }

    let lu = mat.clone().lu();
    let solve = |rhs: &DVector<T>| -> Result<DVector<T>> {
        let sol = lu.solve(rhs).ok_or_else(|| FbvieError::SolverFailure {
            reason: "assembled base matrix is singular".into(),
            condition: condition_estimate(&mat),
        })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(FbvieError::SolverFailure {
                reason: "non-finite base solution".into(),
                condition: condition_estimate(&mat),
            });
        }
        Ok(sol)
    };

    let flat = match &drivers.terminal {
        TerminalMap::Linear(_) => solve(&rhs_base)?,
        TerminalMap::General(g) => {
            let mut guess = fwd_off[n].clone();
            let mut converged = None;
            let mut last = T::zero();
            for _ in 0..OUTER_CAP {
                let gx = finite_or(g(&guess), n, n, "G")?;
                let mut rhs = rhs_base.clone();
                for (i, &ti) in tau.iter().enumerate() {
                    rhs.rows_mut(i * dim, dim).axpy(-ti, &gx, T::one());
                }
                let sol = solve(&rhs)?;
                let xn = sol.rows(n * dim, dim).into_owned();
                last = (&xn - &guess).amax();
                if last <= T::lit(OUTER_TOL) * (T::one() + xn.amax()) {
                    converged = Some(sol);
                    break;
                }
                guess = &xn * T::lit(OUTER_DAMPING) + &guess * T::lit(1.0 - OUTER_DAMPING);
            }
            converged.ok_or(FbvieError::NoConvergence {
                iterations: OUTER_CAP,
                last_change: last.as_f64(),
                ratio: f64::NAN,
            })?
        }
    };

    let x: Vec<DVector<T>> = (0..len).map(|i| flat.rows(i * dim, dim).into_owned()).collect();
    let y: Vec<DVector<T>> = x.iter().zip(&bwd_off).map(|(xi, ci)| xi + ci).collect();
    let (fwd, bwd) = base_defects(drivers, grid, &x, &y, &fwd_off, &bwd_off);
    let z = upper_running_integral(grid, &y);
    Ok(DiagonalSolution {
        x: VectorPath::from_values_unchecked(*grid, dim, x),
        y: VectorPath::from_values_unchecked(*grid, dim, y),
        z: VectorPath::from_values_unchecked(*grid, dim, z),
        residual_forward: fwd,
        residual_backward: bwd,
    })
}

/// Second-order derivative of `v` at `t` with step `h`; one-sided at the ends of `[0, T]`.
fn stencil_derivative<T: Scalar>(v: impl Fn(T) -> DVector<T>, t: T, h: T, horizon: T) -> DVector<T> {
    let two_h = h * T::lit(2.0);
    let eps = h * T::lit(1e-9);
    if t <= eps {
        (v(t) * T::lit(-3.0) + v(t + h) * T::lit(4.0) - v(t + two_h)) / two_h
    } else if t >= horizon - eps {
        (v(t) * T::lit(3.0) - v(t - h) * T::lit(4.0) + v(t - two_h)) / two_h
    } else {
        (v(t + h) - v(t - h)) / two_h
    }
}

/// Differentiated form: `X' = -P + a(t)`, `-P' = X + b(t)`, `X(0) = x0(0)`, `P(T) = G(X(T))`,
/// discretized by the trapezoid rule on the grid.
pub fn solve_base_fbde_crosscheck<T: Scalar>(
    drivers: &LinearDrivers<T>,
    grid: &TimeGrid<T>,
) -> Result<DiagonalSolution<T>> {
    let dim = drivers.dim;
    let n = grid.last();
    let len = grid.len();
    let h = grid.step();
    let horizon = grid.horizon();
    let half_h = h * T::lit(0.5);

    let drive: Vec<DVector<T>> = (0..len)
        .map(|i| {
            let t = grid.node(i);
            let mut a = stencil_derivative(|u| (drivers.x0)(u), t, h, horizon);
            if drivers.f0.is_some() {
                a += drivers.f0_at(t, t);
                for j in 0..=i {
                    let w = grid.weight(0, i, j);
                    if w != T::zero() {
                        let s = grid.node(j);
                        a.axpy(w, &stencil_derivative(|u| drivers.f0_at(u, s), t, h, horizon), T::one());
                    }
                }
            }
            finite_or(a, i, i, "forward drive")
        })
        .collect::<Result<_>>()?;
    let bwd_off = backward_offsets(drivers, grid)?;

    // Unknown layout: X_0..X_N then P_0..P_N.
    let size = 2 * len * dim;
    let xi = |i: usize, k: usize| i * dim + k;
    let pi = |i: usize, k: usize| (len + i) * dim + k;
    let mut mat = DMatrix::<T>::zeros(size, size);
    let mut rhs = DVector::<T>::zeros(size);
    let x00 = (drivers.x0)(T::zero());
    let mut row = 0;
    for k in 0..dim {
        mat[(row, xi(0, k))] = T::one();
        rhs[row] = x00[k];
        row += 1;
    }
    for i in 0..n {
        for k in 0..dim {
            mat[(row, xi(i + 1, k))] = T::one();
            mat[(row, xi(i, k))] = -T::one();
            mat[(row, pi(i, k))] = half_h;
            mat[(row, pi(i + 1, k))] = half_h;
            rhs[row] = half_h * (drive[i][k] + drive[i + 1][k]);
            row += 1;
        }
        for k in 0..dim {
            mat[(row, pi(i, k))] = T::one();
            mat[(row, pi(i + 1, k))] = -T::one();
            mat[(row, xi(i, k))] = -half_h;
            mat[(row, xi(i + 1, k))] = -half_h;
            rhs[row] = half_h * (bwd_off[i][k] + bwd_off[i + 1][k]);
            row += 1;
        }
    }
    let terminal_row = row;
    for k in 0..dim {
        mat[(row, pi(n, k))] = T::one();
        if let TerminalMap::Linear(g) = &drivers.terminal {
            for c in 0..dim {
                mat[(row, xi(n, c))] = -g[(k, c)];
            }
        }
        row += 1;
    }
    debug_assert_eq!(row, size);

    let lu = mat.clone().lu();
    let solve = |rhs: &DVector<T>| {
        lu.solve(rhs).ok_or_else(|| FbvieError::SolverFailure {
            reason: "differentiated base system is singular".into(),
            condition: condition_estimate(&mat),
        })
    };
    let sol = match &drivers.terminal {
        TerminalMap::Linear(_) => solve(&rhs)?,
        TerminalMap::General(g) => {
            let mut guess = (drivers.x0)(horizon);
            let mut out = None;
            let mut last = T::zero();
            for _ in 0..OUTER_CAP {
                let gx = finite_or(g(&guess), n, n, "G")?;
                let mut r = rhs.clone();
                r.rows_mut(terminal_row, dim).copy_from(&gx);
                let s = solve(&r)?;
                let xn = s.rows(xi(n, 0), dim).into_owned();
                last = (&xn - &guess).amax();
                if last <= T::lit(OUTER_TOL) * (T::one() + xn.amax()) {
                    out = Some(s);
                    break;
                }
                guess = &xn * T::lit(OUTER_DAMPING) + &guess * T::lit(1.0 - OUTER_DAMPING);
            }
            out.ok_or(FbvieError::NoConvergence {
                iterations: OUTER_CAP,
                last_change: last.as_f64(),
                ratio: f64::NAN,
            })?
        }
    };
    let x: Vec<DVector<T>> = (0..len).map(|i| sol.rows(xi(i, 0), dim).into_owned()).collect();
    let y: Vec<DVector<T>> = x.iter().zip(&bwd_off).map(|(a, c)| a + c).collect();
    let fwd_off = forward_offsets(drivers, grid)?;
    let (fwd, bwd) = base_defects(drivers, grid, &x, &y, &fwd_off, &bwd_off);
    let z = upper_running_integral(grid, &y);
    Ok(DiagonalSolution {
        x: VectorPath::from_values_unchecked(*grid, dim, x),
        y: VectorPath::from_values_unchecked(*grid, dim, y),
        z: VectorPath::from_values_unchecked(*grid, dim, z),
        residual_forward: fwd,
        residual_backward: bwd,
    })
}

/// `𝒳(t_i,s_j) = x0(t_i) + Σ_{k≤j} w [f0(t_i,t_k) - G(X_N) - Σ_{r≥k} w Y_r]` and
/// `𝒴(t_i,s_j) = X_i + h0(t_i) + Σ_{k≥j} w g0(t_i,t_k)`.
pub fn reconstruct_base_fields<T: Scalar>(
    drivers: &LinearDrivers<T>,
    diagonal: &DiagonalSolution<T>,
) -> Result<FieldSolution<T>> {
    let grid = *diagonal.grid();
    if diagonal.dim() != drivers.dim {
        return invalid("driver and solution dimensions differ");
    }
    let dim = drivers.dim;
    let n = grid.last();
    let half_h = grid.step() * T::lit(0.5);
    let iy = upper_running_integral(&grid, diagonal.y.values());
    let gx = drivers.terminal.apply(diagonal.x.last());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for i in 0..=n {
        let t = grid.node(i);
        let integrand = |k: usize| drivers.f0_at(t, grid.node(k)) - &gx - &iy[k];
        let mut row = Vec::with_capacity(i + 1);
        let mut acc = (drivers.x0)(t);
        let mut prev = integrand(0);
        row.push(acc.clone());
        for j in 1..=i {
            let cur = integrand(j);
            acc += (&prev + &cur) * half_h;
            row.push(acc.clone());
            prev = cur;
        }
        lower.push(row);

        let mut row = vec![DVector::zeros(dim); n - i + 1];
        let mut acc = diagonal.x.at(i) + drivers.h0_at(t);
        let mut prev = drivers.g0_at(t, grid.node(n));
        row[n - i] = acc.clone();
        for j in (i..n).rev() {
            let cur = drivers.g0_at(t, grid.node(j));
            acc += (&prev + &cur) * half_h;
            row[j - i] = acc.clone();
            prev = cur;
        }
        upper.push(row);
    }
    Ok(FieldSolution {
        diagonal: diagonal.clone(),
        x_field: TriangularField::from_rows(grid, Orientation::Lower, dim, lower),
        y_field: TriangularField::from_rows(grid, Orientation::Upper, dim, upper),
    })
}
