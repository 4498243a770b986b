//! Ready-made instances used by tests, the CLI and the acceptance suite.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::problem::{
    build_lq_problem, build_nonlinear_problem, FbvieProblem, LqSpec, NonlinearSpec, RunningCost, TerminalCost,
};
use crate::scalar::Scalar;

fn constant_matrix<T: Scalar>(rows: usize, cols: usize, v: f64) -> crate::problem::MatrixFn2<T> {
    Arc::new(move |_, _| DMatrix::from_element(rows, cols, T::lit(v)))
}

/// Scalar LQ: `A = 0`, `B = Q = R = 1`, `G0 = 0`, constant initial path `x0`.
///
/// The optimal state is `x0 cosh(T - t) / cosh(T)` and the optimal cost `x0² tanh(T)`.
pub fn lq_scalar_spec<T: Scalar>(x0: T) -> LqSpec<T> {
    LqSpec {
        state_dim: 1,
        control_dim: 1,
        a: constant_matrix(1, 1, 0.0),
        b: constant_matrix(1, 1, 1.0),
        running: RunningCost::Quadratic(Arc::new(|_| DMatrix::identity(1, 1))),
        r: Arc::new(|_| DMatrix::identity(1, 1)),
        terminal: TerminalCost::Quadratic,
        g0: DMatrix::zeros(1, 1),
        x0: Arc::new(move |_| DVector::from_element(1, x0)),
        delta: T::lit(2.0),
        r_floor: T::one(),
        k_g: T::lit(2.0),
        lipschitz: T::one(),
        label: "lq-scalar".into(),
    }
}

pub fn lq_scalar<T: Scalar>(grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    build_lq_problem(&lq_scalar_spec(T::one()), grid)
}

/// Two states, one control: a rotation drift `A0 = ½[[0,1],[-1,0]]` plus the memory term
/// `κ e^{-(t-s)} I`, `B = [0; 1]`, `Q = I`, `R = 1`, `G0 = diag(½, 0)`, `x0 = (1, 0)`.
pub fn lq_matrix_spec<T: Scalar>(kappa: T) -> LqSpec<T> {
    LqSpec {
        state_dim: 2,
        control_dim: 1,
        a: Arc::new(move |t: T, s: T| {
            let mut a = DMatrix::from_row_slice(2, 2, &[T::zero(), T::lit(0.5), T::lit(-0.5), T::zero()]);
            let mem = kappa * (s - t).exp();
            a[(0, 0)] += mem;
            a[(1, 1)] += mem;
            a
        }),
        b: Arc::new(|_, _| DMatrix::from_column_slice(2, 1, &[T::zero(), T::one()])),
        running: RunningCost::Quadratic(Arc::new(|_| DMatrix::identity(2, 2))),
        r: Arc::new(|_| DMatrix::identity(1, 1)),
        terminal: TerminalCost::Quadratic,
        g0: DMatrix::from_diagonal(&DVector::from_column_slice(&[T::lit(0.5), T::zero()])),
        x0: Arc::new(|_| DVector::from_column_slice(&[T::one(), T::zero()])),
        delta: T::lit(2.0),
        r_floor: T::one(),
        k_g: T::lit(2.0),
        lipschitz: T::lit(1.0) + kappa.abs(),
        label: "lq-matrix".into(),
    }
}

pub fn lq_matrix<T: Scalar>(grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    build_lq_problem(&lq_matrix_spec(T::lit(0.5)), grid)
}

/// Scalar nonlinear instance with only `b(t, x) = λx` active and the given declared constants.
pub fn nonlinear_spec<T: Scalar>(lambda: T, l_a: T, l_phi: T, l_psi: T) -> NonlinearSpec<T> {
    NonlinearSpec {
        dim: 1,
        control_dim: 1,
        a_map: Arc::new(|_, x: &DVector<T>| DVector::zeros(x.len())),
        b_map: Arc::new(move |_, x: &DVector<T>| x * lambda),
        phi: Arc::new(|_, z: &DVector<T>| DVector::zeros(z.len())),
        psi: Arc::new(|_, _, x: &DVector<T>| DVector::zeros(x.len())),
        a: constant_matrix(1, 1, 0.0),
        b: constant_matrix(1, 1, 0.0),
        x0: Arc::new(|_| DVector::from_element(1, T::one())),
        lambda,
        l_a,
        l_b: lambda,
        l_phi,
        l_psi,
        label: "nonlinear-custom".into(),
    }
}

/// `A = 0`, `B = 1`, `a = ½x`, `b = 2x`, `φ = -½z`, `ψ = -x/10`, `x0 = 1`.
///
/// Every bound is attained, so the sampled margin equals `λ - ½L_a² - ½L_φ² - L_ψT = 1.65` at `T = 1`.
pub fn nonlinear_extremal_spec<T: Scalar>() -> NonlinearSpec<T> {
    let mut spec = nonlinear_spec(T::lit(2.0), T::lit(0.5), T::lit(0.5), T::lit(0.1));
    spec.a_map = Arc::new(|_, x: &DVector<T>| x * T::lit(0.5));
    spec.phi = Arc::new(|_, z: &DVector<T>| z * T::lit(-0.5));
    spec.psi = Arc::new(|_, _, x: &DVector<T>| x * T::lit(-0.1));
    spec.b = constant_matrix(1, 1, 1.0);
    spec.label = "nonlinear-example".into();
    spec
}

pub fn nonlinear_extremal<T: Scalar>(grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    build_nonlinear_problem(&nonlinear_extremal_spec(), grid)
}

/// Smooth nonlinear instance with time-dependent `A`, `B` and bounded nonlinearities.
pub fn nonlinear_smooth_spec<T: Scalar>() -> NonlinearSpec<T> {
    let mut spec = nonlinear_spec(T::lit(1.8), T::lit(0.5), T::lit(0.5), T::lit(0.1));
    spec.a_map = Arc::new(|_, x: &DVector<T>| x.map(|v| v.tanh() * T::lit(0.5)));
    spec.b_map = Arc::new(|_, x: &DVector<T>| x.map(|v| v * T::lit(2.0) + v.sin() * T::lit(0.2)));
    spec.phi = Arc::new(|_, z: &DVector<T>| z.map(|v| v.sin() * T::lit(-0.5)));
    spec.psi = Arc::new(|t: T, s: T, x: &DVector<T>| x.map(|v| (t + s).cos() * v.sin() * T::lit(0.1)));
    spec.a = Arc::new(|t: T, s: T| DMatrix::from_element(1, 1, (t - s).cos() * T::lit(0.3)));
    spec.b = Arc::new(|t: T, s: T| DMatrix::from_element(1, 1, T::one() + (t - s) * T::lit(0.2)));
    spec.x0 = Arc::new(|t: T| DVector::from_element(1, T::one() + t.sin() * T::lit(0.5)));
    spec.label = "nonlinear-smooth".into();
    spec
}

pub fn nonlinear_smooth<T: Scalar>(grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    build_nonlinear_problem(&nonlinear_smooth_spec(), grid)
}

/// `λ = 0.1` with `ψ(t, s, x) = -x`, so `h` contains `-(T - t)x` and the declared margin is `-0.9`.
pub fn nonlinear_broken_spec<T: Scalar>() -> NonlinearSpec<T> {
    let mut spec = nonlinear_spec(T::lit(0.1), T::zero(), T::zero(), T::one());
    spec.psi = Arc::new(|_, _, x: &DVector<T>| -x);
    spec.label = "nonlinear-broken".into();
    spec
}

pub fn nonlinear_broken<T: Scalar>(grid: &TimeGrid<T>) -> Result<FbvieProblem<T>> {
    build_nonlinear_problem(&nonlinear_broken_spec(), grid)
}

/// Instances satisfying the monotonicity condition with a positive declared margin.
pub fn monotone_instances<T: Scalar>(grid: &TimeGrid<T>) -> Result<Vec<FbvieProblem<T>>> {
    Ok(vec![lq_scalar(grid)?, lq_matrix(grid)?, nonlinear_extremal(grid)?, nonlinear_smooth(grid)?])
}
