//! Coefficient bundles, the two builder families and the FBDE reduction.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, FbvieError, Result};
use crate::grid::{kernel_convolve, TimeGrid, VectorPath};
use crate::scalar::Scalar;
use crate::solution::{Orientation, TriangularField};

/// `f(t, s, x, y, z, x_T)`.
pub type ForwardFn<T> =
    Arc<dyn Fn(T, T, &DVector<T>, &DVector<T>, &DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync>;
/// `g(t, s, x, y)`.
pub type BackwardFn<T> = Arc<dyn Fn(T, T, &DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync>;
/// `h(t, x, x_T, z)`; `z` is the kernel convolution of `Y` at `t`.
pub type BoundaryFn<T> = Arc<dyn Fn(T, &DVector<T>, &DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync>;
/// Matrix-valued function of two times, e.g. `K(s, r)` or `A(t, s)`.
pub type MatrixFn2<T> = Arc<dyn Fn(T, T) -> DMatrix<T> + Send + Sync>;
pub type MatrixFn<T> = Arc<dyn Fn(T) -> DMatrix<T> + Send + Sync>;
pub type PathFn<T> = Arc<dyn Fn(T) -> DVector<T> + Send + Sync>;
pub type MapFn<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
/// `(t, x) -> R^k`.
pub type StateFn<T> = Arc<dyn Fn(T, &DVector<T>) -> DVector<T> + Send + Sync>;
/// `(t, s, x) -> R^k`.
pub type StateFn2<T> = Arc<dyn Fn(T, T, &DVector<T>) -> DVector<T> + Send + Sync>;

/// The terminal monotonicity map `G`.
#[derive(Clone)]
pub enum TerminalMap<T: Scalar> {
    Linear(DMatrix<T>),
    General(MapFn<T>),
}

impl<T: Scalar> TerminalMap<T> {
    pub fn zero(dim: usize) -> Self {
        Self::Linear(DMatrix::zeros(dim, dim))
    }

    #[inline]
    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            Self::Linear(m) => m * x,
            Self::General(f) => f(x),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear(_))
    }
}

impl<T: Scalar> fmt::Debug for TerminalMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(m) => f.debug_tuple("Linear").field(&m.shape()).finish(),
            Self::General(_) => f.write_str("General(..)"),
        }
    }
}

/// One FBVIE instance together with its declared structural constants.
#[derive(Clone)]
pub struct FbvieProblem<T: Scalar> {
    dim: usize,
    f: ForwardFn<T>,
    g: BackwardFn<T>,
    h: BoundaryFn<T>,
    kernel: MatrixFn2<T>,
    x0: PathFn<T>,
    terminal: TerminalMap<T>,
    g0: DMatrix<T>,
    gamma: T,
    k_g: T,
    lipschitz: T,
    holder_alpha: T,
    warning: Option<String>,
    label: String,
}

impl<T: Scalar> fmt::Debug for FbvieProblem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FbvieProblem")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("terminal", &self.terminal)
            .field("gamma", &self.gamma)
            .field("k_g", &self.k_g)
            .field("warning", &self.warning)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> FbvieProblem<T> {
    /// Problem with `G = 0`, `G0 = 0` and unit constants; adjust with the `with_*` methods.
    pub fn new(
        dim: usize,
        f: ForwardFn<T>,
        g: BackwardFn<T>,
        h: BoundaryFn<T>,
        kernel: MatrixFn2<T>,
        x0: PathFn<T>,
    ) -> Self {
        Self {
            dim,
            f,
            g,
            h,
            kernel,
            x0,
            terminal: TerminalMap::zero(dim),
            g0: DMatrix::zeros(dim, dim),
            gamma: T::one(),
            k_g: T::one(),
            lipschitz: T::one(),
            holder_alpha: T::one(),
            warning: None,
            label: String::from("custom"),
        }
    }

    /// All coefficients zero, identity kernel, constant initial path.
    pub fn zero(dim: usize, x0: DVector<T>) -> Self {
        Self::new(
            dim,
            Arc::new(move |_, _, _, _, _, _| DVector::zeros(dim)),
            Arc::new(move |_, _, _, _| DVector::zeros(dim)),
            Arc::new(move |_, _, _, _| DVector::zeros(dim)),
            Arc::new(move |_, _| DMatrix::identity(dim, dim)),
            Arc::new(move |_| x0.clone()),
        )
        .with_label("zero")
    }

    pub fn with_terminal(mut self, terminal: TerminalMap<T>, g0: DMatrix<T>, k_g: T) -> Self {
        self.terminal = terminal;
        self.g0 = g0;
        self.k_g = k_g;
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self.warning = if gamma > T::zero() {
            None
        } else {
            Some(format!("declared monotonicity margin {gamma} is not positive"))
        };
        self
    }

    pub fn with_regularity(mut self, lipschitz: T, holder_alpha: T) -> Self {
        self.lipschitz = lipschitz;
        self.holder_alpha = holder_alpha;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_initial_path(mut self, x0: PathFn<T>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows of `K`, i.e. the dimension of `Z`.
    pub fn kernel_rows(&self) -> usize {
        (self.kernel)(T::zero(), T::zero()).nrows()
    }

    #[inline]
    pub fn f(&self, t: T, s: T, x: &DVector<T>, y: &DVector<T>, z: &DVector<T>, xt: &DVector<T>) -> DVector<T> {
        (self.f)(t, s, x, y, z, xt)
    }

    #[inline]
    pub fn g(&self, t: T, s: T, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        (self.g)(t, s, x, y)
    }

    #[inline]
    pub fn h(&self, t: T, x: &DVector<T>, xt: &DVector<T>, z: &DVector<T>) -> DVector<T> {
        (self.h)(t, x, xt, z)
    }

    #[inline]
    pub fn kernel(&self, s: T, r: T) -> DMatrix<T> {
        (self.kernel)(s, r)
    }

    #[inline]
    pub fn x0(&self, t: T) -> DVector<T> {
        (self.x0)(t)
    }

    pub fn terminal(&self) -> &TerminalMap<T> {
        &self.terminal
    }

    pub fn g0(&self) -> &DMatrix<T> {
        &self.g0
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn k_g(&self) -> T {
        self.k_g
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn holder_alpha(&self) -> T {
        self.holder_alpha
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[cfg(test)]
    pub(crate) fn forward_fn(&self) -> &ForwardFn<T> {
        &self.f
    }

    #[cfg(test)]
    pub(crate) fn backward_fn(&self) -> &BackwardFn<T> {
        &self.g
    }

    pub(crate) fn kernel_fn(&self) -> &MatrixFn2<T> {
        &self.kernel
    }

    /// Structural checks: shapes, finiteness on the grid, `G0` symmetric PSD and positive constants.
    pub fn validate(&self, grid: &TimeGrid<T>) -> Result<()> {
        let n = self.dim;
        if n == 0 {
            return invalid("dimension must be positive");
        }
        if self.g0.shape() != (n, n) {
            return invalid(format!("G0 has shape {:?}, expected ({n}, {n})", self.g0.shape()));
        }
        psd_sqrt(&self.g0)?;
        if !(self.k_g > T::zero()) {
            return invalid(format!("K_G must be positive, got {}", self.k_g));
        }
        if !(self.lipschitz > T::zero()) {
            return invalid(format!("L must be positive, got {}", self.lipschitz));
        }
        if !(self.holder_alpha > T::zero() && self.holder_alpha <= T::one()) {
            return invalid(format!("holder exponent must lie in (0, 1], got {}", self.holder_alpha));
        }
        let m = self.kernel_rows();
        let probe = DVector::from_element(n, T::lit(0.5));
        let zp = DVector::from_element(m, T::lit(0.25));
        let samples = [0, grid.last() / 2, grid.last()];
        for &i in &samples {
            let t = grid.node(i);
            let x0 = self.x0(t);
            check_shape(&x0, n, i, i, "x0")?;
            let hv = self.h(t, &probe, &probe, &zp);
            check_shape(&hv, n, i, i, "h")?;
            for &j in &samples {
                let s = grid.node(j);
                let k = self.kernel(t, s);
                if k.ncols() != n || k.nrows() != m {
                    return invalid(format!("K({i},{j}) has shape {:?}", k.shape()));
                }
                if j <= i {
                    check_shape(&self.f(t, s, &probe, &probe, &zp, &probe), n, i, j, "f")?;
                }
                if j >= i {
                    check_shape(&self.g(t, s, &probe, &probe), n, i, j, "g")?;
                }
            }
        }
        check_shape(&self.terminal.apply(&probe), n, grid.last(), grid.last(), "G")?;
        Ok(())
    }
}

fn check_shape<T: Scalar>(v: &DVector<T>, n: usize, i: usize, j: usize, what: &'static str) -> Result<()> {
    if v.len() != n {
        return invalid(format!("{what} returned dimension {} at ({i},{j}), expected {n}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FbvieError::Numerical { i, j, what });
    }
    Ok(())
}

/// Symmetric square root of a PSD matrix; small negative eigenvalues are clamped.
pub fn psd_sqrt<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return invalid("matrix is not square");
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > T::lit(1e-12) * scale.max(T::one()) {
        return invalid(format!("matrix is not symmetric (asymmetry {asym})"));
    }
    if scale == T::zero() {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(m.clone());
    let floor = -T::lit(1e-12) * scale;
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            return invalid(format!("matrix is not positive semidefinite (eigenvalue {v})"));
        }
        *v = v.max(T::zero()).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Running cost gradient `Q_x(t, x)`.
#[derive(Clone)]
pub enum RunningCost<T: Scalar> {
    /// `Q(t, x) = <Q(t) x, x>`, so `Q_x = 2 Q(t) x`.
    Quadratic(MatrixFn<T>),
    Gradient(StateFn<T>),
}

/// Terminal cost gradient `M_x(x)`.
#[derive(Clone)]
pub enum TerminalCost<T: Scalar> {
    /// `M(x) = <G0 x, x>`, so `M_x = 2 G0 x`.
    Quadratic,
    Gradient(MapFn<T>),
}

/// Linear-convex Volterra control problem data.
#[derive(Clone)]
pub struct LqSpec<T: Scalar> {
    pub state_dim: usize,
    pub control_dim: usize,
    pub a: MatrixFn2<T>,
    pub b: MatrixFn2<T>,
    pub running: RunningCost<T>,
    pub r: MatrixFn<T>,
    pub terminal: TerminalCost<T>,
    pub g0: DMatrix<T>,
    pub x0: PathFn<T>,
    /// Strong convexity margin of `Q_x`, used as the monotonicity margin.
    pub delta: T,
    /// Lower bound `R(t) >= r_floor I` spot-checked on nodes.
    pub r_floor: T,
    pub k_g: T,
    pub lipschitz: T,
    pub label: String,
}

impl<T: Scalar> LqSpec<T> {
    pub fn is_quadratic(&self) -> bool {
        matches!(self.running, RunningCost::Quadratic(_)) && matches!(self.terminal, TerminalCost::Quadratic)
    }

    #[inline]
    pub fn qx(&self, t: T, x: &DVector<T>) -> DVector<T> {
        match &self.running {
            RunningCost::Quadratic(q) => q(t) * x * T::lit(2.0),
            RunningCost::Gradient(f) => f(t, x),
        }
    }

    #[inline]
    pub fn mx(&self, x: &DVector<T>) -> DVector<T> {
        match &self.terminal {
            TerminalCost::Quadratic => &self.g0 * x * T::lit(2.0),
            TerminalCost::Gradient(f) => f(x),
        }
    }

    pub fn q_matrix(&self, t: T) -> Option<DMatrix<T>> {
        match &self.running {
            RunningCost::Quadratic(q) => Some(q(t)),
            RunningCost::Gradient(_) => None,
        }
    }

    pub fn terminal_map(&self) -> TerminalMap<T> {
        match &self.terminal {
            TerminalCost::Quadratic => TerminalMap::Linear(&self.g0 * T::lit(2.0)),
            TerminalCost::Gradient(f) => TerminalMap::General(f.clone()),
        }
    }
}

/// Node-cached coefficients of the Hamiltonian system; unknown times fall back to direct evaluation.
struct LqCache<T: Scalar> {
    grid: TimeGrid<T>,
    spec: LqSpec<T>,
    a: Vec<DMatrix<T>>,
    b: Vec<DMatrix<T>>,
    half_b_rinv: Vec<DMatrix<T>>,
    bt_terminal: Vec<DMatrix<T>>,
    at_terminal: Vec<DMatrix<T>>,
}

impl<T: Scalar> LqCache<T> {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.grid.len() + j
    }

    fn rinv(&self, s: T) -> Option<DMatrix<T>> {
        (self.spec.r)(s).cholesky().map(|c| c.inverse())
    }

    fn forward(&self, t: T, s: T, x: &DVector<T>, z: &DVector<T>, xt: &DVector<T>) -> DVector<T> {
        let mx = self.spec.mx(xt);
        match (self.grid.index_of(t), self.grid.index_of(s)) {
            (Some(i), Some(j)) => {
                let k = self.idx(i, j);
                let mut w = &self.bt_terminal[j] * mx;
                w += z;
                let mut out = &self.a[k] * x;
                out.gemv(-T::one(), &self.half_b_rinv[k], &w, T::one());
                out
            }
            _ => {
                let big_t = self.grid.horizon();
                let b = (self.spec.b)(t, s);
                let rinv = self.rinv(s).unwrap_or_else(|| DMatrix::from_element(b.ncols(), b.ncols(), T::nan()));
                let w = (self.spec.b)(big_t, s).transpose() * mx + z;
                (self.spec.a)(t, s) * x - b * rinv * w * T::lit(0.5)
            }
        }
    }

    fn backward(&self, t: T, s: T, y: &DVector<T>) -> DVector<T> {
        match (self.grid.index_of(t), self.grid.index_of(s)) {
            (Some(i), Some(j)) => self.a[self.idx(j, i)].tr_mul(y),
            _ => (self.spec.a)(s, t).tr_mul(y),
        }
    }

    fn boundary(&self, t: T, x: &DVector<T>, xt: &DVector<T>) -> DVector<T> {
        let mx = self.spec.mx(xt);
        let mut out = self.spec.qx(t, x);
        match self.grid.index_of(t) {
            Some(i) => out.gemv(T::one(), &self.at_terminal[i], &mx, T::one()),
            None => out += (self.spec.a)(self.grid.horizon(), t).tr_mul(&mx),
        }
        out
    }

    fn kernel(&self, s: T, r: T) -> DMatrix<T> {
        match (self.grid.index_of(s), self.grid.index_of(r)) {
            (Some(i), Some(j)) => self.b[self.idx(j, i)].transpose(),
            _ => (self.spec.b)(r, s).transpose(),
        }
    }
}

/// Hamiltonian system of the linear-convex control problem as an FBVIE.
///
/// `f = A x - ½ B R⁻¹ z - ½ B R⁻¹ B(T,s)ᵀ M_x(x_T)`, `K(s,r) = B(r,s)ᵀ`,
/// `g = A(s,t)ᵀ y`, `h = Q_x(t,x) + A(T,t)ᵀ M_x(x_T)`, `G = M_x`.
pub fn build_lq_problem<T: Scalar>(spec: &LqSpec<T>, grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    let (n, m) = (spec.state_dim, spec.control_dim);
    if n == 0 || m == 0 {
        return invalid("state and control dimensions must be positive");
    }
    if spec.g0.shape() != (n, n) {
        return invalid(format!("G0 has shape {:?}, expected ({n}, {n})", spec.g0.shape()));
    }
    if !(spec.r_floor > T::zero()) {
        return invalid("R floor must be positive");
    }
    let len = grid.len();
    let mut rinv = Vec::with_capacity(len);
    for j in 0..len {
        let s = grid.node(j);
        let r = (spec.r)(s);
        if r.shape() != (m, m) {
            return invalid(format!("R at node {j} has shape {:?}, expected ({m}, {m})", r.shape()));
        }
        let min_eig = SymmetricEigen::new(r.clone()).eigenvalues.min();
        if !(min_eig >= spec.r_floor * (T::one() - T::lit(1e-12))) {
            return invalid(format!(
                "R(t) is singular or below the declared floor at node {j} (t = {s}, smallest eigenvalue {min_eig})"
            ));
        }
        let inv = r
            .cholesky()
            .ok_or_else(|| FbvieError::InvalidArgument(format!("R(t) is singular at node {j} (t = {s})")))?
            .inverse();
        rinv.push(inv);
    }
    let mut a = Vec::with_capacity(len * len);
    let mut b = Vec::with_capacity(len * len);
    let mut half_b_rinv = Vec::with_capacity(len * len);
    for i in 0..len {
        let t = grid.node(i);
        for (j, rj) in rinv.iter().enumerate() {
            let s = grid.node(j);
            let aij = (spec.a)(t, s);
            let bij = (spec.b)(t, s);
            if aij.shape() != (n, n) || bij.shape() != (n, m) {
                return invalid(format!("A or B has the wrong shape at ({i},{j})"));
            }
            half_b_rinv.push(&bij * rj * T::lit(0.5));
            a.push(aij);
            b.push(bij);
        }
    }
    let bt_terminal = (0..len).map(|j| b[grid.last() * len + j].transpose()).collect();
    let at_terminal = (0..len).map(|j| a[grid.last() * len + j].transpose()).collect();
    let cache = Arc::new(LqCache {
        grid: *grid,
        spec: spec.clone(),
        a,
        b,
        half_b_rinv,
        bt_terminal,
        at_terminal,
    });
    let (cf, cg, ch, ck) = (cache.clone(), cache.clone(), cache.clone(), cache);
    let problem = FbvieProblem::new(
        n,
        Arc::new(move |t, s, x, _y, z, xt| cf.forward(t, s, x, z, xt)),
        Arc::new(move |t, s, _x, y| cg.backward(t, s, y)),
        Arc::new(move |t, x, xt, _z| ch.boundary(t, x, xt)),
        Arc::new(move |s, r| ck.kernel(s, r)),
        spec.x0.clone(),
    )
    .with_terminal(spec.terminal_map(), spec.g0.clone(), spec.k_g)
    .with_gamma(spec.delta)
    .with_regularity(spec.lipschitz, T::one())
    .with_label(spec.label.clone());
    Ok(problem)
}

/// Nonlinear instance with Lipschitz data `a`, `b`, `φ`, `ψ`.
#[derive(Clone)]
pub struct NonlinearSpec<T: Scalar> {
    pub dim: usize,
    pub control_dim: usize,
    /// `a(s, x)`, entering the forward drift as `B(t,s) a(s, x)`.
    pub a_map: StateFn<T>,
    /// `b(t, x)`, the monotone part of `h`.
    pub b_map: StateFn<T>,
    /// `φ(t, z)` with `z = ∫ₜᵀ B(r,t)ᵀ Y(r) dr`.
    pub phi: StateFn<T>,
    /// `ψ(t, s, x)`, integrated over `s ∈ [t, T]` at `x = X(t)`.
    pub psi: StateFn2<T>,
    pub a: MatrixFn2<T>,
    pub b: MatrixFn2<T>,
    pub x0: PathFn<T>,
    pub lambda: T,
    pub l_a: T,
    pub l_b: T,
    pub l_phi: T,
    pub l_psi: T,
    pub label: String,
}

impl<T: Scalar> NonlinearSpec<T> {
    /// `λ - ½L_a² - ½L_φ² - L_ψ T`.
    pub fn margin(&self, horizon: T) -> T {
        let half = T::lit(0.5);
        self.lambda - half * self.l_a * self.l_a - half * self.l_phi * self.l_phi - self.l_psi * horizon
    }
}

/// `∫ₜᵀ v(s) ds` by the grid trapezoid when `t` is a node, else a uniform trapezoid of comparable width.
fn upper_quadrature<T: Scalar>(grid: &TimeGrid<T>, t: T, dim: usize, mut v: impl FnMut(T) -> DVector<T>) -> DVector<T> {
    let mut acc = DVector::zeros(dim);
    if let Some(i) = grid.index_of(t) {
        let n = grid.last();
        for j in i..=n {
            let w = grid.weight(i, n, j);
            if w != T::zero() {
                acc.axpy(w, &v(grid.node(j)), T::one());
            }
        }
        return acc;
    }
    let span = grid.horizon() - t;
    if span <= T::zero() {
        return acc;
    }
    let cells = (span / grid.step()).as_f64().ceil().max(1.0) as usize;
    let h = span / T::from_usize_lossy(cells);
    for k in 0..=cells {
        let w = if k == 0 || k == cells { h * T::lit(0.5) } else { h };
        acc.axpy(w, &v(t + h * T::from_usize_lossy(k)), T::one());
    }
    acc
}

/// `M(t_i, t_j)` on all node pairs; other arguments are evaluated directly.
struct NodeMatrices<T: Scalar> {
    grid: TimeGrid<T>,
    f: MatrixFn2<T>,
    values: Vec<DMatrix<T>>,
}

impl<T: Scalar> NodeMatrices<T> {
    fn new(f: MatrixFn2<T>, grid: &TimeGrid<T>) -> Self {
        let len = grid.len();
        let values = (0..len * len).map(|k| f(grid.node(k / len), grid.node(k % len))).collect();
        Self { grid: *grid, f, values }
    }

    fn get(&self, t: T, s: T) -> Cow<'_, DMatrix<T>> {
        match (self.grid.index_of(t), self.grid.index_of(s)) {
            (Some(i), Some(j)) => Cow::Borrowed(&self.values[i * self.grid.len() + j]),
            _ => Cow::Owned((self.f)(t, s)),
        }
    }
}

/// Nonlinear FBVIE: `f = A x + B a(s,x) - B z`, `K(s,r) = B(r,s)ᵀ`, `g = A(s,t)ᵀ y`,
/// `h = b(t,x) + φ(t,z) + ∫ₜᵀ ψ(t,s,x) ds`, `G = 0`.
pub fn build_nonlinear_problem<T: Scalar>(spec: &NonlinearSpec<T>, grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    let consts = [spec.lambda, spec.l_a, spec.l_b, spec.l_phi, spec.l_psi];
    if consts.iter().any(|c| !c.is_finite()) {
        return invalid("nonlinear constants must be finite");
    }
    let n = spec.dim;
    let gamma = spec.margin(grid.horizon());
    let a = Arc::new(NodeMatrices::new(spec.a.clone(), grid));
    let b = Arc::new(NodeMatrices::new(spec.b.clone(), grid));
    let (sf, sh) = (spec.clone(), spec.clone());
    let (af, ag, bf, bk) = (a.clone(), a, b.clone(), b);
    let grid_h = *grid;
    let lipschitz = [spec.l_a, spec.l_b, spec.l_phi, spec.l_psi, T::one()]
        .into_iter()
        .fold(T::zero(), |m, v| m.max(v));
    let problem = FbvieProblem::new(
        n,
        Arc::new(move |t, s, x, _y, z, _xt| {
            let mut out = &*af.get(t, s) * x;
            let drift = (sf.a_map)(s, x) - z;
            out.gemv(T::one(), &bf.get(t, s), &drift, T::one());
            out
        }),
        Arc::new(move |t, s, _x, y| ag.get(s, t).tr_mul(y)),
        Arc::new(move |t, x, _xt, z| {
            let mut out = (sh.b_map)(t, x) + (sh.phi)(t, z);
            out += upper_quadrature(&grid_h, t, x.len(), |s| (sh.psi)(t, s, x));
            out
        }),
        Arc::new(move |s, r| bk.get(r, s).transpose()),
        spec.x0.clone(),
    )
    .with_gamma(gamma)
    .with_regularity(lipschitz, T::one())
    .with_label(spec.label.clone());
    Ok(problem)
}

/// Which evaluator differs between two times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionWitness {
    pub evaluator: &'static str,
    pub t1: f64,
    pub t2: f64,
    pub s: Option<f64>,
    pub deviation: f64,
}

/// `t`-independent coefficients: `p = x + ∫₀ᵗ a ds`, `q`-side from `g` and `h` frozen at `t = 0`.
#[derive(Clone)]
pub struct FbdeBundle<T: Scalar> {
    pub dim: usize,
    pub initial: DVector<T>,
    problem: FbvieProblem<T>,
}

impl<T: Scalar> fmt::Debug for FbdeBundle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FbdeBundle").field("dim", &self.dim).field("initial", &self.initial).finish()
    }
}

impl<T: Scalar> FbdeBundle<T> {
    pub fn forward(&self, s: T, x: &DVector<T>, y: &DVector<T>, z: &DVector<T>, xt: &DVector<T>) -> DVector<T> {
        self.problem.f(s, s, x, y, z, xt)
    }

    pub fn backward(&self, s: T, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        self.problem.g(T::zero(), s, x, y)
    }

    pub fn boundary(&self, x: &DVector<T>, xt: &DVector<T>, z: &DVector<T>) -> DVector<T> {
        self.problem.h(T::zero(), x, xt, z)
    }

    pub fn kernel(&self, s: T, r: T) -> DMatrix<T> {
        self.problem.kernel(s, r)
    }

    pub fn problem(&self) -> &FbvieProblem<T> {
        &self.problem
    }
}

#[derive(Debug, Clone)]
pub enum Reduction<T: Scalar> {
    Reducible(FbdeBundle<T>),
    NotReducible(ReductionWitness),
}

impl<T: Scalar> Reduction<T> {
    pub fn bundle(self) -> Option<FbdeBundle<T>> {
        match self {
            Self::Reducible(b) => Some(b),
            Self::NotReducible(_) => None,
        }
    }
}

fn random_vec<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::lit(rng.gen_range(-1.0..1.0)))
}

/// Sample `f`, `g`, `h`, `K` and the initial path at paired nodes; reducible iff nothing moves with `t`.
pub fn reduce_to_fbde<T: Scalar>(problem: &FbvieProblem<T>, grid: &TimeGrid<T>, tol: T) -> Result<Reduction<T>> {
    let n = problem.dim();
    let m = problem.kernel_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_fbde);
    let samples: Vec<_> = (0..3)
        .map(|_| {
            (
                random_vec::<T>(&mut rng, n),
                random_vec::<T>(&mut rng, n),
                random_vec::<T>(&mut rng, m),
                random_vec::<T>(&mut rng, n),
            )
        })
        .collect();
    let last = grid.last();
    let mut nodes: Vec<usize> = vec![0, 1, last / 3, last / 2, (2 * last) / 3, last - 1, last];
    nodes.dedup();
    let witness = |evaluator, i: usize, k: usize, s: Option<usize>, dev: T| ReductionWitness {
        evaluator,
        t1: grid.node(i).as_f64(),
        t2: grid.node(k).as_f64(),
        s: s.map(|j| grid.node(j).as_f64()),
        deviation: dev.as_f64(),
    };
    for (a, &i) in nodes.iter().enumerate() {
        for &k in &nodes[a + 1..] {
            let (t1, t2) = (grid.node(i), grid.node(k));
            let dev = (problem.x0(t1) - problem.x0(t2)).amax();
            if dev > tol {
                return Ok(Reduction::NotReducible(witness("x0", i, k, None, dev)));
            }
            for (x, y, z, xt) in &samples {
                let dev = (problem.h(t1, x, xt, z) - problem.h(t2, x, xt, z)).amax();
                if dev > tol {
                    return Ok(Reduction::NotReducible(witness("h", i, k, None, dev)));
                }
                for &j in &nodes {
                    let s = grid.node(j);
                    if j <= i {
                        let dev = (problem.f(t1, s, x, y, z, xt) - problem.f(t2, s, x, y, z, xt)).amax();
                        if dev > tol {
                            return Ok(Reduction::NotReducible(witness("f", i, k, Some(j), dev)));
                        }
                    }
                    if j >= k {
                        let dev = (problem.g(t1, s, x, y) - problem.g(t2, s, x, y)).amax();
                        if dev > tol {
                            return Ok(Reduction::NotReducible(witness("g", i, k, Some(j), dev)));
                        }
                    }
                }
            }
        }
    }
    Ok(Reduction::Reducible(FbdeBundle {
        dim: n,
        initial: problem.x0(T::zero()),
        problem: problem.clone(),
    }))
}

/// Matrices of a linear Hamiltonian FBDE `p' = A p - S q`, `-q' = Q p + Aᵀ q`, `q(T) = G p(T)`.
#[derive(Debug, Clone)]
pub struct LinearFbde<T: Scalar> {
    pub a: DMatrix<T>,
    pub s: DMatrix<T>,
    pub q: DMatrix<T>,
    pub g: DMatrix<T>,
    pub initial: DVector<T>,
}

/// Read the Hamiltonian matrices off a reduced LQ problem by probing unit directions.
///
/// Uses the quadratic-cost scaling of the builder: `h = 2 Q x + ...` and `f = ... - ½ B R⁻¹ z`,
/// so `S = B R⁻¹ Bᵀ = -2 (∂f/∂z) K`. Fails if the probed maps are not affine.
pub fn lq_hamiltonian_fbde<T: Scalar>(bundle: &FbdeBundle<T>, at: T) -> Result<LinearFbde<T>> {
    let n = bundle.dim;
    let k = bundle.kernel(at, at);
    let m = k.nrows();
    let zn = DVector::zeros(n);
    let zm = DVector::zeros(m);
    let f0 = bundle.forward(at, &zn, &zn, &zm, &zn);
    let g0v = bundle.backward(at, &zn, &zn);
    let h0 = bundle.boundary(&zn, &zn, &zm);
    let tol = T::lit(1e-9) * (T::one() + f0.amax().max(g0v.amax()).max(h0.amax()));
    if f0.amax() > tol || g0v.amax() > tol || h0.amax() > tol {
        return Err(FbvieError::NotApplicable("coefficients are not linear (nonzero offset)".into()));
    }
    let mut a = DMatrix::zeros(n, n);
    let mut at_probe = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::zeros(n);
        e[c] = T::one();
        a.set_column(c, &bundle.forward(at, &e, &zn, &zm, &zn));
        at_probe.set_column(c, &bundle.backward(at, &zn, &e));
        q.set_column(c, &(bundle.boundary(&e, &zn, &zm) * T::lit(0.5)));
    }
    let mut fz = DMatrix::zeros(n, m);
    for c in 0..m {
        let mut e = DVector::zeros(m);
        e[c] = T::one();
        fz.set_column(c, &bundle.forward(at, &zn, &zn, &e, &zn));
    }
    let scale = T::one() + a.amax();
    if (a.transpose() - &at_probe).amax() > T::lit(1e-9) * scale {
        return Err(FbvieError::NotApplicable("backward drift is not the adjoint of the forward drift".into()));
    }
    let probe = DVector::from_fn(n, |i, _| T::lit(0.3 + 0.1 * i as f64));
    let lin = &a * &probe;
    if (bundle.forward(at, &probe, &zn, &zm, &zn) - lin).amax() > T::lit(1e-9) * scale {
        return Err(FbvieError::NotApplicable("forward drift is not linear in x".into()));
    }
    let s = -(fz * &k) * T::lit(2.0);
    Ok(LinearFbde {
        a,
        s,
        q,
        g: bundle.problem.g0().clone(),
        initial: bundle.initial.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceMode {
    /// Every argument of `f` comes from its own tuple.
    Full,
    /// Only the terminal argument of `f` differs.
    TerminalOnly,
}

/// Differences of the coefficients along two path pairs.
#[derive(Debug, Clone)]
pub struct Mc2Bundle<T: Scalar> {
    pub x_hat: VectorPath<T>,
    pub y_hat: VectorPath<T>,
    pub h_hat: VectorPath<T>,
    /// `ĝ(t_i, s_j)` for `j >= i`.
    pub g_hat: TriangularField<T>,
    /// `f̂(t_i, s_j)` for `j <= i`.
    pub f_hat: TriangularField<T>,
    /// `G(x1(T)) - G(x2(T))`.
    pub terminal_hat: DVector<T>,
    pub z1: VectorPath<T>,
    pub z2: VectorPath<T>,
}

/// Coefficient differences along `(x1, y1)` and `(x2, y2)`.
pub fn mc2_differences<T: Scalar>(
    problem: &FbvieProblem<T>,
    x1: &VectorPath<T>,
    y1: &VectorPath<T>,
    x2: &VectorPath<T>,
    y2: &VectorPath<T>,
    mode: DifferenceMode,
) -> Result<Mc2Bundle<T>> {
    let grid = *x1.grid();
    for p in [y1, x2, y2] {
        if !grid.same_as(p.grid()) {
            return invalid("paths live on different grids");
        }
    }
    let n = problem.dim();
    for p in [x1, y1, x2, y2] {
        if p.dim() != n {
            return invalid(format!("path dimension {} does not match problem dimension {n}", p.dim()));
        }
    }
    let kf = problem.kernel_fn().clone();
    let z1 = kernel_convolve(&grid, |s, r| kf(s, r), y1)?;
    let z2 = kernel_convolve(&grid, |s, r| kf(s, r), y2)?;
    let (x1n, x2n) = (x1.last(), x2.last());
    let h_hat = (0..grid.len())
        .map(|i| {
            let t = grid.node(i);
            problem.h(t, x1.at(i), x1n, z1.at(i)) - problem.h(t, x2.at(i), x2n, z2.at(i))
        })
        .collect();
    let h_hat = VectorPath::from_values_unchecked(grid, n, h_hat);
    let g_hat = TriangularField::from_fn(grid, Orientation::Upper, n, |i, j| {
        let (t, s) = (grid.node(i), grid.node(j));
        problem.g(t, s, x1.at(j), y1.at(j)) - problem.g(t, s, x2.at(j), y2.at(j))
    });
    let f_hat = TriangularField::from_fn(grid, Orientation::Lower, n, |i, j| {
        let (t, s) = (grid.node(i), grid.node(j));
        let first = problem.f(t, s, x1.at(j), y1.at(j), z1.at(j), x1n);
        match mode {
            DifferenceMode::Full => first - problem.f(t, s, x2.at(j), y2.at(j), z2.at(j), x2n),
            DifferenceMode::TerminalOnly => first - problem.f(t, s, x1.at(j), y1.at(j), z1.at(j), x2n),
        }
    });
    let terminal_hat = problem.terminal().apply(x1n) - problem.terminal().apply(x2n);
    Ok(Mc2Bundle {
        x_hat: x1.sub(x2),
        y_hat: y1.sub(y2),
        h_hat,
        g_hat,
        f_hat,
        terminal_hat,
        z1,
        z2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn scalar_spec() -> LqSpec<f64> {
        builtin::lq_scalar_spec(1.0)
    }

    #[test]
    fn lq_scalar_coefficients_match_hand_closures() {
        let grid = TimeGrid::<f64>::new(1.0, 8).unwrap();
        let p = build_lq_problem(&scalar_spec(), &grid).unwrap();
        for i in 0..=8 {
            for j in 0..=i {
                let (t, s) = (grid.node(i), grid.node(j));
                let (x, y, z, xt) = (v(0.3 + t), v(-0.7), v(1.3 * s - 0.2), v(2.0));
                assert!((p.f(t, s, &x, &y, &z, &xt)[0] - (-z[0] / 2.0)).abs() < 1e-15);
                assert_eq!(p.g(s, t, &x, &y)[0], 0.0);
                assert_eq!(p.kernel(s, t)[(0, 0)], 1.0);
            }
            let t = grid.node(i);
            assert!((p.h(t, &v(0.4), &v(9.0), &v(1.0))[0] - 0.8).abs() < 1e-15);
        }
        // Off-grid times take the uncached path and agree.
        let f = p.f(0.33, 0.21, &v(1.0), &v(0.0), &v(0.6), &v(0.0));
        assert!((f[0] + 0.3).abs() < 1e-15);
        assert_eq!(p.gamma(), 2.0);
        assert!(p.warning().is_none());
        p.validate(&grid).unwrap();
    }

    #[test]
    fn lq_with_zero_control_channel_is_decoupled() {
        let grid = TimeGrid::<f64>::new(1.0, 4).unwrap();
        let mut spec = scalar_spec();
        spec.b = Arc::new(|_, _| DMatrix::zeros(1, 1));
        spec.a = Arc::new(|t, s| DMatrix::from_element(1, 1, t - s));
        let p = build_lq_problem(&spec, &grid).unwrap();
        let f = p.f(1.0, 0.25, &v(2.0), &v(5.0), &v(7.0), &v(3.0));
        assert!((f[0] - 1.5).abs() < 1e-15);
        let mut spec = scalar_spec();
        spec.a = Arc::new(|_, _| DMatrix::zeros(1, 1));
        spec.terminal = TerminalCost::Gradient(Arc::new(|x: &DVector<f64>| x * 0.0));
        let p = build_lq_problem(&spec, &grid).unwrap();
        assert!((p.h(0.5, &v(1.5), &v(4.0), &v(0.0))[0] - 3.0).abs() < 1e-15);
        assert_eq!(p.g(0.0, 0.5, &v(1.0), &v(1.0))[0], 0.0);
    }

    #[test]
    fn singular_r_names_the_node() {
        let grid = TimeGrid::<f64>::new(1.0, 4).unwrap();
        let mut spec = scalar_spec();
        spec.r = Arc::new(|t| DMatrix::from_element(1, 1, if t > 0.6 { 0.0 } else { 1.0 }));
        let err = build_lq_problem(&spec, &grid).unwrap_err().to_string();
        assert!(err.contains("node 3"), "{err}");
    }

    #[test]
    fn nonlinear_gamma_and_warning() {
        let grid = TimeGrid::<f64>::new(1.0, 8).unwrap();
        let mut spec = builtin::nonlinear_spec(2.0, 0.0, 0.0, 0.0);
        let p = build_nonlinear_problem(&spec, &grid).unwrap();
        assert_eq!(p.gamma(), 2.0);
        assert!((p.h(0.5, &v(0.5), &v(0.0), &v(0.3))[0] - 1.0).abs() < 1e-15);
        assert_eq!(p.f(0.5, 0.2, &v(0.5), &v(0.0), &v(0.3), &v(0.0))[0], 0.0);
        spec.lambda = 1.0;
        spec.l_a = 1.0;
        spec.l_phi = 1.0;
        let p = build_nonlinear_problem(&spec, &grid).unwrap();
        assert_eq!(p.gamma(), 0.0);
        assert!(p.warning().is_some());
        let zero = builtin::nonlinear_spec(0.0, 0.0, 0.0, 0.0);
        let p = build_nonlinear_problem(&zero, &grid).unwrap();
        assert_eq!(p.gamma(), 0.0);
        assert!(p.warning().is_some());
    }

    #[test]
    fn psi_is_integrated_over_the_upper_interval() {
        let grid = TimeGrid::<f64>::new(1.0, 10).unwrap();
        let mut spec = builtin::nonlinear_spec(0.0, 0.0, 0.0, 0.0);
        spec.psi = Arc::new(|_, _, x: &DVector<f64>| x.clone());
        let p = build_nonlinear_problem(&spec, &grid).unwrap();
        for i in 0..=10 {
            let t = grid.node(i);
            assert!((p.h(t, &v(2.0), &v(0.0), &v(0.0))[0] - 2.0 * (1.0 - t)).abs() < 1e-14);
        }
        assert!((p.h(0.35, &v(2.0), &v(0.0), &v(0.0))[0] - 1.3).abs() < 1e-14);
    }

    #[test]
    fn reduction_detects_time_dependence() {
        let grid = TimeGrid::<f64>::new(1.0, 8).unwrap();
        let lq = build_lq_problem(&scalar_spec(), &grid).unwrap();
        let r = reduce_to_fbde(&lq, &grid, 1e-12).unwrap();
        assert!(matches!(r, Reduction::Reducible(_)));
        let r2 = reduce_to_fbde(r.bundle().unwrap().problem(), &grid, 1e-12).unwrap();
        assert!(matches!(r2, Reduction::Reducible(_)));

        let timed = FbvieProblem::<f64>::zero(1, v(1.0)).with_label("timed");
        let timed = FbvieProblem::new(
            1,
            timed.forward_fn().clone(),
            timed.backward_fn().clone(),
            Arc::new(|t, x: &DVector<f64>, _, _| x * t),
            timed.kernel_fn().clone(),
            Arc::new(|_| DVector::from_element(1, 1.0)),
        );
        match reduce_to_fbde(&timed, &grid, 1e-12).unwrap() {
            Reduction::NotReducible(w) => {
                assert_eq!(w.evaluator, "h");
                assert!(w.t1 != w.t2);
                assert!(w.deviation > 1e-12);
            }
            Reduction::Reducible(_) => panic!("t-dependent h reported reducible"),
        }
    }

    #[test]
    fn hamiltonian_matrices_of_scalar_lq() {
        let grid = TimeGrid::<f64>::new(1.0, 8).unwrap();
        let lq = build_lq_problem(&scalar_spec(), &grid).unwrap();
        let b = reduce_to_fbde(&lq, &grid, 1e-12).unwrap().bundle().unwrap();
        let fbde = lq_hamiltonian_fbde(&b, 0.0).unwrap();
        assert_eq!(fbde.a[(0, 0)], 0.0);
        assert!((fbde.s[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((fbde.q[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(fbde.g[(0, 0)], 0.0);
    }

    #[test]
    fn psd_sqrt_checks() {
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = psd_sqrt(&m).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14 && r[(1, 1)].abs() < 1e-14);
        assert!(psd_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(psd_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        let r = psd_sqrt(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!((&r * &r - DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).amax() < 1e-13);
    }

    fn lq_paths(grid: TimeGrid<f64>, c: f64) -> (VectorPath<f64>, VectorPath<f64>, VectorPath<f64>, VectorPath<f64>) {
        let x1 = VectorPath::from_fn(grid, 1, |t| v(t.sin() + c)).unwrap();
        let x2 = VectorPath::from_fn(grid, 1, |t| v(t.sin())).unwrap();
        let y = VectorPath::from_fn(grid, 1, |t| v(t * t)).unwrap();
        (x1, y.clone(), x2, y)
    }

    #[test]
    fn mc2_lq_constant_shift() {
        let grid = TimeGrid::<f64>::new(1.0, 8).unwrap();
        let mut spec = scalar_spec();
        spec.g0 = DMatrix::from_element(1, 1, 0.5);
        spec.a = Arc::new(|_, _| DMatrix::from_element(1, 1, 0.25));
        let p = build_lq_problem(&spec, &grid).unwrap();
        let (x1, y1, x2, y2) = lq_paths(grid, 0.7);
        let d = mc2_differences(&p, &x1, &y1, &x2, &y2, DifferenceMode::Full).unwrap();
        for i in 0..=8 {
            // ĥ = 2c + A(T,t)·2·G0·c
            let expect = 2.0 * 0.7 + 0.25 * 2.0 * 0.5 * 0.7;
            assert!((d.h_hat.at(i)[0] - expect).abs() < 1e-14);
            assert!((d.x_hat.at(i)[0] - 0.7).abs() < 1e-14);
            assert_eq!(d.y_hat.at(i)[0], 0.0);
        }
        assert!((d.terminal_hat[0] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn mc2_identical_inputs_and_inert_terminal() {
        let grid = TimeGrid::<f64>::new(1.0, 6).unwrap();
        let p = build_lq_problem(&scalar_spec(), &grid).unwrap();
        let (x1, y1, _, _) = lq_paths(grid, 0.0);
        for mode in [DifferenceMode::Full, DifferenceMode::TerminalOnly] {
            let d = mc2_differences(&p, &x1, &y1, &x1, &y1, mode).unwrap();
            assert_eq!(d.f_hat.sup_norm() + d.g_hat.sup_norm() + d.h_hat.sup_norm(), 0.0);
        }
        let (x1, y1, x2, y2) = lq_paths(grid, 0.4);
        let d = mc2_differences(&p, &x1, &y1, &x2, &y2, DifferenceMode::TerminalOnly).unwrap();
        assert_eq!(d.f_hat.sup_norm(), 0.0);
        let other = TimeGrid::<f64>::new(2.0, 6).unwrap();
        let bad = VectorPath::zeros(other, 1);
        assert!(mc2_differences(&p, &x1, &y1, &bad, &y2, DifferenceMode::Full).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn path(grid: TimeGrid<f64>, vals: &[f64]) -> VectorPath<f64> {
            VectorPath::new(grid, vals.iter().map(|&x| v(x)).collect()).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn mc2_is_antisymmetric(vals in proptest::collection::vec(-2.0f64..2.0, 28)) {
                let grid = TimeGrid::<f64>::new(1.0, 6).unwrap();
                let p = build_nonlinear_problem(&builtin::nonlinear_smooth_spec(), &grid).unwrap();
                let (x1, y1, x2, y2) = (path(grid, &vals[0..7]), path(grid, &vals[7..14]), path(grid, &vals[14..21]), path(grid, &vals[21..28]));
                let a = mc2_differences(&p, &x1, &y1, &x2, &y2, DifferenceMode::Full).unwrap();
                let b = mc2_differences(&p, &x2, &y2, &x1, &y1, DifferenceMode::Full).unwrap();
                let sum = |u: &VectorPath<f64>, w: &VectorPath<f64>| u.values().iter().zip(w.values()).fold(0.0f64, |m, (p, q)| m.max((p + q).amax()));
                prop_assert!(sum(&a.x_hat, &b.x_hat) < 1e-14);
                prop_assert!(sum(&a.y_hat, &b.y_hat) < 1e-14);
                prop_assert!(sum(&a.h_hat, &b.h_hat) < 1e-13);
                let mut worst = 0.0f64;
                a.f_hat.for_each(|i, j, u| worst = worst.max((u + b.f_hat.at(i, j)).amax()));
                a.g_hat.for_each(|i, j, u| worst = worst.max((u + b.g_hat.at(i, j)).amax()));
                prop_assert!(worst < 1e-13);
            }
        }
    }
}
