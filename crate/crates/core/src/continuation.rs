//! The α-homotopy from the linear base system to the target problem.

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::base_linear::{solve_base_diagonal, LinearDrivers};
use crate::error::{invalid, FbvieError, Result};
use crate::grid::{upper_running_integral, TimeGrid, VectorPath};
use crate::problem::FbvieProblem;
use crate::scalar::{tol_floor, Scalar};
use crate::solution::{DiagonalSolution, FieldSolution, Orientation, TriangularField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationParams {
    pub delta_init: f64,
    pub delta_min: f64,
    pub damping: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub residual_tol: f64,
    pub warm_start: bool,
}

impl Default for ContinuationParams {
    fn default() -> Self {
        Self {
            delta_init: 0.25,
            delta_min: 1.0 / 1024.0,
            damping: 0.5,
            picard_tol: 1e-11,
            picard_max_iter: 200,
            residual_tol: 1e-10,
            warm_start: true,
        }
    }
}

impl ContinuationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta_init && self.delta_init <= 1.0) {
            return invalid(format!(
                "need 0 < delta_min <= delta_init <= 1 (got delta_min = {}, delta_init = {})",
                self.delta_min, self.delta_init
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return invalid(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if !(self.picard_tol > 0.0) || !(self.residual_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        if self.picard_max_iter == 0 {
            return invalid("picard_max_iter must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub alpha: f64,
    pub step: f64,
    pub iterations: usize,
    pub contraction_ratio: f64,
    pub final_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedStep {
    pub alpha_from: f64,
    pub alpha_to: f64,
    pub iterations: usize,
    pub reason: String,
}

/// Trace of one continuation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub label: String,
    pub horizon: f64,
    pub intervals: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub rejected: Vec<RejectedStep>,
    pub halvings: usize,
    pub total_picard_iterations: usize,
    pub residual_forward: f64,
    pub residual_backward: f64,
    pub converged: bool,
    pub warning: Option<String>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl SolveReport {
    fn new(problem: &FbvieProblem<impl Scalar>, grid: &TimeGrid<impl Scalar>) -> Self {
        Self {
            label: problem.label().to_string(),
            horizon: grid.horizon().as_f64(),
            intervals: grid.intervals(),
            checkpoints: Vec::new(),
            rejected: Vec::new(),
            halvings: 0,
            total_picard_iterations: 0,
            residual_forward: f64::NAN,
            residual_backward: f64::NAN,
            converged: false,
            warning: problem.warning().map(str::to_string),
            wall_seconds: 0.0,
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.alpha).collect()
    }
}

/// The blended problem `f_α = α f + (1-α)(-∫ₛᵀY - G(x_T)) + f0`, `g_α = α g + g0`,
/// `h_α = α h + (1-α) x + h0`.
#[derive(Clone, Debug)]
pub struct ParaProblem<T: Scalar> {
    problem: FbvieProblem<T>,
    alpha: T,
    drivers: LinearDrivers<T>,
    identity: bool,
}

pub fn assemble_para<T: Scalar>(
    problem: &FbvieProblem<T>,
    alpha: T,
    drivers: &LinearDrivers<T>,
) -> Result<ParaProblem<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return invalid(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    if drivers.dim != problem.dim() {
        return invalid("driver and problem dimensions differ");
    }
    Ok(ParaProblem {
        problem: problem.clone(),
        alpha,
        drivers: drivers.clone(),
        identity: alpha == T::one() && drivers.is_zero(),
    })
}

impl<T: Scalar> ParaProblem<T> {
    /// The target problem itself (`α = 1`, zero drivers).
    pub fn identity(problem: &FbvieProblem<T>) -> Self {
        Self {
            problem: problem.clone(),
            alpha: T::one(),
            drivers: LinearDrivers::from_problem(problem),
            identity: true,
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn problem(&self) -> &FbvieProblem<T> {
        &self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// Whether `f` reads the upper integral of `Y`.
    pub fn uses_upper_integral(&self) -> bool {
        !self.identity && self.alpha < T::one()
    }

    #[inline]
    pub fn x0(&self, t: T) -> DVector<T> {
        if self.identity {
            self.problem.x0(t)
        } else {
            (self.drivers.x0)(t)
        }
    }

    #[inline]
    pub fn kernel(&self, s: T, r: T) -> DMatrix<T> {
        self.problem.kernel(s, r)
    }

    /// `iy` is `Σ_{r≥j} w Y_r` at the evaluation node `s`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn f(
        &self,
        t: T,
        s: T,
        x: &DVector<T>,
        y: &DVector<T>,
        z: &DVector<T>,
        xt: &DVector<T>,
        iy: &DVector<T>,
    ) -> DVector<T> {
        self.f_with(t, s, x, y, z, xt, iy, None)
    }

    /// `f` with the base terminal map at `xt` supplied by the caller.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn f_with(
        &self,
        t: T,
        s: T,
        x: &DVector<T>,
        y: &DVector<T>,
        z: &DVector<T>,
        xt: &DVector<T>,
        iy: &DVector<T>,
        terminal: Option<&DVector<T>>,
    ) -> DVector<T> {
        if self.identity {
            return self.problem.f(t, s, x, y, z, xt);
        }
        let beta = T::one() - self.alpha;
        let mut out = if self.alpha == T::zero() {
            DVector::zeros(self.dim())
        } else {
            let mut v = self.problem.f(t, s, x, y, z, xt);
            v *= self.alpha;
            v
        };
        if beta != T::zero() {
            out.axpy(-beta, iy, T::one());
            match terminal {
                Some(gx) => out.axpy(-beta, gx, T::one()),
                None => out.axpy(-beta, &self.drivers.terminal.apply(xt), T::one()),
            }
        }
        if self.drivers.f0.is_some() {
            out += self.drivers.f0_at(t, s);
        }
        out
    }

    #[inline]
    pub fn g(&self, t: T, s: T, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        if self.identity {
            return self.problem.g(t, s, x, y);
        }
        let mut out = if self.alpha == T::zero() {
            DVector::zeros(self.dim())
        } else {
            let mut v = self.problem.g(t, s, x, y);
            v *= self.alpha;
            v
        };
        if self.drivers.g0.is_some() {
            out += self.drivers.g0_at(t, s);
        }
        out
    }

    #[inline]
    pub fn h(&self, t: T, x: &DVector<T>, xt: &DVector<T>, z: &DVector<T>) -> DVector<T> {
        if self.identity {
            return self.problem.h(t, x, xt, z);
        }
        let beta = T::one() - self.alpha;
        let mut out = if self.alpha == T::zero() {
            DVector::zeros(self.dim())
        } else {
            let mut v = self.problem.h(t, x, xt, z);
            v *= self.alpha;
            v
        };
        if beta != T::zero() {
            out.axpy(beta, x, T::one());
        }
        if self.drivers.h0.is_some() {
            out += self.drivers.h0_at(t);
        }
        out
    }
}

/// `K(t_i, t_j)` for `j >= i`, evaluated once per solve.
pub(crate) struct KernelTable<T: Scalar> {
    grid: TimeGrid<T>,
    rows: Vec<Vec<DMatrix<T>>>,
    out_dim: usize,
}

impl<T: Scalar> KernelTable<T> {
    pub(crate) fn new(kernel: impl Fn(T, T) -> DMatrix<T>, grid: &TimeGrid<T>, dim: usize) -> Result<Self> {
        let n = grid.last();
        let mut out_dim = None;
        let mut rows = Vec::with_capacity(grid.len());
        for i in 0..=n {
            let mut row = Vec::with_capacity(n - i + 1);
            for j in i..=n {
                let k = kernel(grid.node(i), grid.node(j));
                if k.ncols() != dim || *out_dim.get_or_insert(k.nrows()) != k.nrows() {
                    return invalid(format!("kernel at ({i},{j}) has shape {:?}", k.shape()));
                }
                if k.iter().any(|v| !v.is_finite()) {
                    return Err(FbvieError::Numerical { i, j, what: "kernel" });
                }
                row.push(k);
            }
            rows.push(row);
        }
        Ok(Self { grid: *grid, rows, out_dim: out_dim.unwrap_or(dim) })
    }

    pub(crate) fn convolve(&self, y: &[DVector<T>]) -> Vec<DVector<T>> {
        let n = self.grid.last();
        (0..=n)
            .map(|i| {
                let mut acc = DVector::zeros(self.out_dim);
                for j in i..=n {
                    let w = self.grid.weight(i, n, j);
                    if w != T::zero() {
                        acc.gemv(w, &self.rows[i][j - i], &y[j], T::one());
                    }
                }
                acc
            })
            .collect()
    }
}

fn sup_dist<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (u, v)| m.max((u - v).amax()))
}

fn all_finite<T: Scalar>(a: &[DVector<T>]) -> Option<usize> {
    a.iter().position(|v| v.iter().any(|x| !x.is_finite()))
}

/// Sup defects of the forward and backward discrete equations of `para`.
pub(crate) fn para_residual<T: Scalar>(
    para: &ParaProblem<T>,
    grid: &TimeGrid<T>,
    x: &[DVector<T>],
    y: &[DVector<T>],
    z: &[DVector<T>],
) -> (T, T) {
    let n = grid.last();
    let iy = if para.uses_upper_integral() {
        upper_running_integral(grid, y)
    } else {
        vec![DVector::zeros(para.dim()); grid.len()]
    };
    let xn = &x[n];
    let mut fwd = T::zero();
    let mut bwd = T::zero();
    for i in 0..=n {
        let t = grid.node(i);
        let mut r = &x[i] - para.x0(t);
        for j in 0..=i {
            let w = grid.weight(0, i, j);
            if w != T::zero() {
                r.axpy(-w, &para.f(t, grid.node(j), &x[j], &y[j], &z[j], xn, &iy[j]), T::one());
            }
        }
        fwd = fwd.max(r.amax());
        let mut r = &y[i] - para.h(t, &x[i], xn, &z[i]);
        for j in i..=n {
            let w = grid.weight(i, n, j);
            if w != T::zero() {
                r.axpy(-w, &para.g(t, grid.node(j), &x[j], &y[j]), T::one());
            }
        }
        bwd = bwd.max(r.amax());
    }
    let nan = T::nan();
    let fix = |v: T| if v.is_finite() { v } else { nan };
    (fix(fwd), fix(bwd))
}

/// Outcome of one fixed-point solve.
#[derive(Debug, Clone)]
pub struct PicardOutcome<T: Scalar> {
    pub solution: DiagonalSolution<T>,
    pub iterations: usize,
    pub contraction_ratio: f64,
    pub final_change: f64,
}

const INNER_CAP: usize = 50;
const TERMINAL_CAP: usize = 50;

struct Sweeper<'a, T: Scalar> {
    para: &'a ParaProblem<T>,
    grid: TimeGrid<T>,
    x0: Vec<DVector<T>>,
    kernel: KernelTable<T>,
    inner_tol: T,
    terminal_tol: T,
    theta: T,
    chord: RefCell<Option<LU<T, Dyn, Dyn>>>,
}

impl<T: Scalar> Sweeper<'_, T> {
    /// Gauss–Seidel forward pass with frozen `Y`, `Z`, `I_Y` and terminal argument `xn`.
    fn forward(&self, x_old: &[DVector<T>], y: &[DVector<T>], z: &[DVector<T>], iy: &[DVector<T>], xn: &DVector<T>) -> Vec<DVector<T>> {
        let g = &self.grid;
        let n = g.last();
        let half_h = g.step() * T::lit(0.5);
        let gx_value = self.para.uses_upper_integral().then(|| self.para.drivers.terminal.apply(xn));
        let gx = gx_value.as_ref();
        let mut xs: Vec<DVector<T>> = Vec::with_capacity(g.len());
        xs.push(self.x0[0].clone());
        for i in 1..=n {
            let t = g.node(i);
            let mut acc = self.x0[i].clone();
            for j in 0..i {
                let w = g.weight(0, i, j);
                acc.axpy(w, &self.para.f_with(t, g.node(j), &xs[j], &y[j], &z[j], xn, &iy[j], gx), T::one());
            }
            let mut xi = x_old[i].clone();
            for _ in 0..INNER_CAP {
                let mut next = acc.clone();
                next.axpy(half_h, &self.para.f_with(t, t, &xi, &y[i], &z[i], xn, &iy[i], gx), T::one());
                let d = (&next - &xi).amax();
                xi = next;
                if !(d > self.inner_tol * (T::one() + xi.amax())) {
                    break;
                }
            }
            xs.push(xi);
        }
        xs
    }

    /// Backward pass from `i = N` down with frozen `Z`.
    fn backward(&self, xs: &[DVector<T>], y_old: &[DVector<T>], z: &[DVector<T>]) -> Vec<DVector<T>> {
        let g = &self.grid;
        let n = g.last();
        let half_h = g.step() * T::lit(0.5);
        let xn = &xs[n];
        let mut ys = vec![DVector::zeros(self.para.dim()); g.len()];
        for i in (0..=n).rev() {
            let t = g.node(i);
            let mut acc = self.para.h(t, &xs[i], xn, &z[i]);
            if i == n {
                ys[n] = acc;
                continue;
            }
            for j in i + 1..=n {
                let w = g.weight(i, n, j);
                acc.axpy(w, &self.para.g(t, g.node(j), &xs[j], &ys[j]), T::one());
            }
            let mut yi = y_old[i].clone();
            for _ in 0..INNER_CAP {
                let mut next = acc.clone();
                next.axpy(half_h, &self.para.g(t, t, &xs[i], &yi), T::one());
                let d = (&next - &yi).amax();
                yi = next;
                if !(d > self.inner_tol * (T::one() + yi.amax())) {
                    break;
                }
            }
            ys[i] = yi;
        }
        ys
    }

    /// Forward pass repeated until the terminal argument is self-consistent.
    ///
    /// Chord iteration on `g ↦ X_N(g) - g` with a forward-difference Jacobian kept across
    /// sweeps and refreshed when a few chord steps do not suffice; damped substitution if the
    /// Jacobian is singular.
    fn forward_consistent(&self, x: &[DVector<T>], y: &[DVector<T>], z: &[DVector<T>], iy: &[DVector<T>]) -> Vec<DVector<T>> {
        let n = self.grid.last();
        let mut guess = x[n].clone();
        let mut xs = self.forward(x, y, z, iy, &guess);
        let mut defect = &xs[n] - &guess;
        let mut fresh = false;
        let mut since_refresh = 0;
        for _ in 1..TERMINAL_CAP {
            if !(defect.amax() > self.terminal_tol) {
                break;
            }
            if !fresh && (self.chord.borrow().is_none() || since_refresh >= 3) {
                let lu = self.terminal_jacobian(&xs, y, z, iy, &guess, &defect);
                *self.chord.borrow_mut() = Some(lu);
                fresh = true;
            }
            let step = self.chord.borrow().as_ref().and_then(|lu| lu.solve(&defect));
            guess = match step {
                Some(d) if d.iter().all(|v| v.is_finite()) => &guess - d,
                _ => &xs[n] * self.theta + &guess * (T::one() - self.theta),
            };
            xs = self.forward(&xs, y, z, iy, &guess);
            defect = &xs[n] - &guess;
            since_refresh += 1;
        }
        xs
    }

    fn terminal_jacobian(
        &self,
        xs: &[DVector<T>],
        y: &[DVector<T>],
        z: &[DVector<T>],
        iy: &[DVector<T>],
        guess: &DVector<T>,
        defect: &DVector<T>,
    ) -> LU<T, Dyn, Dyn> {
        let n = self.grid.last();
        let dim = guess.len();
        let eps = T::lit(T::epsilon_f64().sqrt());
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let step = eps * (T::one() + guess[k].abs());
            let mut g = guess.clone();
            g[k] += step;
            let col = (&self.forward(xs, y, z, iy, &g)[n] - &g - defect) / step;
            jac.set_column(k, &col);
        }
        jac.lu()
    }

    fn upper_integral(&self, y: &[DVector<T>]) -> Vec<DVector<T>> {
        if self.para.uses_upper_integral() {
            upper_running_integral(&self.grid, y)
        } else {
            vec![DVector::zeros(self.para.dim()); self.grid.len()]
        }
    }
}

/// Damped Gauss–Seidel fixed-point iteration for `para`, starting from `guess`.
pub fn picard_solve<T: Scalar>(
    para: &ParaProblem<T>,
    guess: &DiagonalSolution<T>,
    params: &ContinuationParams,
) -> Result<PicardOutcome<T>> {
    params.validate()?;
    let grid = *guess.grid();
    let dim = para.dim();
    if guess.dim() != dim || guess.y.dim() != dim {
        return invalid("initial guess dimension does not match the problem");
    }
    let kernel = KernelTable::new(|s, r| para.kernel(s, r), &grid, dim)?;
    let tol: T = tol_floor(params.picard_tol);
    let res_tol: T = tol_floor(params.residual_tol);
    let sweeper = Sweeper {
        para,
        grid,
        x0: (0..grid.len()).map(|i| para.x0(grid.node(i))).collect(),
        kernel,
        inner_tol: tol * T::lit(1e-2),
        terminal_tol: tol,
        theta: T::lit(params.damping),
        chord: RefCell::new(None),
    };
    let theta = sweeper.theta;
    let keep = T::one() - theta;

    let mut x = guess.x.values().to_vec();
    let mut y = guess.y.values().to_vec();
    let mut z = sweeper.kernel.convolve(&y);
    let mut iy = sweeper.upper_integral(&y);
    let mut first_change = None;
    let mut history: Vec<f64> = Vec::new();
    let ratio_of = |hist: &[f64]| -> f64 {
        match hist {
            [] | [_] => 0.0,
            [first, .., last] => {
                if *first <= 0.0 || *last <= 0.0 {
                    0.0
                } else {
                    (last / first).powf(1.0 / (hist.len() - 1) as f64)
                }
            }
        }
    };
    for it in 1..=params.picard_max_iter {
        let xs = sweeper.forward_consistent(&x, &y, &z, &iy);
        let ys = sweeper.backward(&xs, &y, &z);
        if let Some(i) = all_finite(&xs).or_else(|| all_finite(&ys)) {
            return Err(FbvieError::Numerical { i, j: i, what: "Picard sweep" });
        }
        let change = sup_dist(&xs, &x).max(sup_dist(&ys, &y));
        let change_f = change.as_f64();
        first_change.get_or_insert(change_f);
        history.push(change_f);
        for (xi, si) in x.iter_mut().zip(&xs) {
            *xi = si * theta + &*xi * keep;
        }
        for (yi, si) in y.iter_mut().zip(&ys) {
            *yi = si * theta + &*yi * keep;
        }
        z = sweeper.kernel.convolve(&y);
        iy = sweeper.upper_integral(&y);

        let scale = 1.0 + x.iter().chain(&y).fold(0.0f64, |m, v| m.max(v.amax().as_f64()));
        if !change_f.is_finite() || change_f > 1e12 * scale {
            return Err(FbvieError::NoConvergence { iterations: it, last_change: change_f, ratio: ratio_of(&history) });
        }
        if history.len() >= 30 {
            let recent = &history[history.len() - 10..];
            if recent[9] >= recent[0] && change > tol {
                return Err(FbvieError::NoConvergence { iterations: it, last_change: change_f, ratio: ratio_of(recent) });
            }
        }
        if change <= tol {
            let (fwd, bwd) = para_residual(para, &grid, &x, &y, &z);
            if fwd <= res_tol && bwd <= res_tol {
                return Ok(PicardOutcome {
                    solution: DiagonalSolution {
                        x: VectorPath::from_values_unchecked(grid, dim, x),
                        y: VectorPath::from_values_unchecked(grid, dim, y),
                        z: VectorPath::from_values_unchecked(grid, sweeper.kernel.out_dim, z),
                        residual_forward: fwd,
                        residual_backward: bwd,
                    },
                    iterations: it,
                    contraction_ratio: ratio_of(&history),
                    final_change: change_f,
                });
            }
        }
    }
    Err(FbvieError::NoConvergence {
        iterations: params.picard_max_iter,
        last_change: history.last().copied().unwrap_or(f64::NAN),
        ratio: ratio_of(&history),
    })
}

/// The cold initial guess `X ≡ x0`, `Y ≡ 0`, `Z ≡ 0`.
pub fn cold_guess<T: Scalar>(problem: &FbvieProblem<T>, grid: &TimeGrid<T>) -> DiagonalSolution<T> {
    let n = problem.dim();
    let x = (0..grid.len()).map(|i| problem.x0(grid.node(i))).collect();
    DiagonalSolution {
        x: VectorPath::from_values_unchecked(*grid, n, x),
        y: VectorPath::zeros(*grid, n),
        z: VectorPath::zeros(*grid, problem.kernel_rows()),
        residual_forward: T::nan(),
        residual_backward: T::nan(),
    }
}

pub fn continuation_solve<T: Scalar>(
    problem: &FbvieProblem<T>,
    grid: &TimeGrid<T>,
    params: &ContinuationParams,
) -> Result<(DiagonalSolution<T>, SolveReport)> {
    continuation_solve_from(problem, grid, params, None)
}

/// As [`continuation_solve`], with an explicit guess used at every checkpoint when warm starts are off.
pub fn continuation_solve_from<T: Scalar>(
    problem: &FbvieProblem<T>,
    grid: &TimeGrid<T>,
    params: &ContinuationParams,
    cold: Option<&DiagonalSolution<T>>,
) -> Result<(DiagonalSolution<T>, SolveReport)> {
    let started = Instant::now();
    params.validate()?;
    problem.validate(grid)?;
    let mut report = SolveReport::new(problem, grid);
    let drivers = LinearDrivers::from_problem(problem);
    let base = solve_base_diagonal(&drivers, grid)?;
    report.checkpoints.push(Checkpoint {
        alpha: 0.0,
        step: 0.0,
        iterations: 0,
        contraction_ratio: 0.0,
        final_change: 0.0,
    });
    let cold = match cold {
        Some(c) => {
            if !c.grid().same_as(grid) || c.dim() != problem.dim() {
                return invalid("cold guess does not match the grid or dimension");
            }
            c.clone()
        }
        None => cold_guess(problem, grid),
    };

    let mut alpha = 0.0f64;
    let mut delta = params.delta_init;
    let mut current = base;
    while alpha < 1.0 {
        let next = if alpha + delta >= 1.0 - 1e-12 { 1.0 } else { alpha + delta };
        let para = assemble_para(problem, T::lit(next), &drivers)?;
        let para = if next == 1.0 { ParaProblem::identity(problem) } else { para };
        let guess = if params.warm_start { &current } else { &cold };
        match picard_solve(&para, guess, params) {
            Ok(out) => {
                report.total_picard_iterations += out.iterations;
                report.checkpoints.push(Checkpoint {
                    alpha: next,
                    step: next - alpha,
                    iterations: out.iterations,
                    contraction_ratio: out.contraction_ratio,
                    final_change: out.final_change,
                });
                alpha = next;
                current = out.solution;
            }
            Err(e @ (FbvieError::NoConvergence { .. } | FbvieError::Numerical { .. })) => {
                let iterations = match &e {
                    FbvieError::NoConvergence { iterations, .. } => *iterations,
                    _ => 0,
                };
                report.total_picard_iterations += iterations;
                report.rejected.push(RejectedStep {
                    alpha_from: alpha,
                    alpha_to: next,
                    iterations,
                    reason: e.to_string(),
                });
                delta *= 0.5;
                report.halvings += 1;
                if delta < params.delta_min {
                    report.wall_seconds = started.elapsed().as_secs_f64();
                    return Err(FbvieError::ContinuationFailure { alpha, report: Box::new(report) });
                }
            }
            Err(e) => return Err(e),
        }
    }
    report.residual_forward = current.residual_forward.as_f64();
    report.residual_backward = current.residual_backward.as_f64();
    report.converged = current.max_residual() <= tol_floor(params.residual_tol);
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((current, report))
}

/// `𝒳(t_i,s_j) = x0(t_i) + Σ_{k≤j} w f(t_i,t_k,·)` and `𝒴(t_i,s_j) = h(t_i,·) + Σ_{k≥j} w g(t_i,t_k,·)`.
pub fn extend_to_fields<T: Scalar>(problem: &FbvieProblem<T>, diagonal: &DiagonalSolution<T>) -> Result<FieldSolution<T>> {
    let grid = *diagonal.grid();
    let dim = problem.dim();
    if diagonal.dim() != dim {
        return invalid("solution dimension does not match the problem");
    }
    let n = grid.last();
    let half_h = grid.step() * T::lit(0.5);
    let (x, y, z) = (diagonal.x.values(), diagonal.y.values(), diagonal.z.values());
    let xn = &x[n];
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for i in 0..=n {
        let t = grid.node(i);
        let fk = |k: usize| problem.f(t, grid.node(k), &x[k], &y[k], &z[k], xn);
        let mut row = Vec::with_capacity(i + 1);
        let mut acc = problem.x0(t);
        let mut prev = fk(0);
        row.push(acc.clone());
        for j in 1..=i {
            let cur = fk(j);
            acc += (&prev + &cur) * half_h;
            row.push(acc.clone());
            prev = cur;
        }
        lower.push(row);

        let gk = |k: usize| problem.g(t, grid.node(k), &x[k], &y[k]);
        let mut row = vec![DVector::zeros(dim); n - i + 1];
        let mut acc = problem.h(t, &x[i], xn, &z[i]);
        row[n - i] = acc.clone();
        let mut prev = gk(n);
        for j in (i..n).rev() {
            let cur = gk(j);
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
