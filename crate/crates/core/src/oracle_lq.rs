//! Direct transcription of the linear-quadratic Volterra control problem on the solver's grid.
//!
//! The state `X = x̄ + S u` is eliminated, leaving the dense quadratic `J(u) = ½uᵀHu + cᵀu + J₀`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, FbvieError, Result};
use crate::grid::{TimeGrid, VectorPath};
use crate::problem::LqSpec;
use crate::scalar::Scalar;
use crate::solution::DiagonalSolution;
use crate::verify::{Check, VerificationReport};

/// Discretized control problem.
#[derive(Debug, Clone)]
pub struct DiscreteLq<T: Scalar> {
    pub grid: TimeGrid<T>,
    pub state_dim: usize,
    pub control_dim: usize,
    /// LU factors of `I - L_A`.
    resolvent: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
    /// `L_B`, so that `(I - L_A) X = x̃ + L_B u`.
    pub control_map: DMatrix<T>,
    /// `S = (I - L_A)⁻¹ L_B`.
    pub state_map: DMatrix<T>,
    /// `x̄ = (I - L_A)⁻¹ x̃`.
    pub free_state: DVector<T>,
    pub hessian: DMatrix<T>,
    pub gradient_offset: DVector<T>,
    pub constant: T,
    q_blocks: Vec<DMatrix<T>>,
    r_blocks: Vec<DMatrix<T>>,
    g0: DMatrix<T>,
    weights: Vec<T>,
}

/// Oracle optimum.
#[derive(Debug, Clone)]
pub struct DirectSolution<T: Scalar> {
    pub control: VectorPath<T>,
    pub state: VectorPath<T>,
    pub cost: T,
    /// `‖H u* + c‖∞`.
    pub gradient_residual: T,
}

fn stack<T: Scalar>(blocks: &[DVector<T>]) -> DVector<T> {
    let len = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.len()).copy_from(b);
        at += b.len();
    }
    out
}

fn unstack<T: Scalar>(v: &DVector<T>, dim: usize) -> Vec<DVector<T>> {
    (0..v.len() / dim).map(|i| v.rows(i * dim, dim).into_owned()).collect()
}

pub fn assemble_discrete_lq<T: Scalar>(spec: &LqSpec<T>, grid: &TimeGrid<T>) -> Result<DiscreteLq<T>> {
    if !spec.is_quadratic() {
        return invalid("the oracle needs a quadratic running and terminal cost");
    }
    let (n, m) = (spec.state_dim, spec.control_dim);
    let len = grid.len();
    let big = len * n;
    let mut la = DMatrix::zeros(big, big);
    let mut lb = DMatrix::zeros(big, len * m);
    for i in 0..len {
        let t = grid.node(i);
        for j in 0..=i {
            let w = grid.weight(0, i, j);
            if w == T::zero() {
                continue;
            }
            let s = grid.node(j);
            let a = (spec.a)(t, s);
            let b = (spec.b)(t, s);
            if a.shape() != (n, n) || b.shape() != (n, m) {
                return invalid(format!("A or B has the wrong shape at ({i},{j})"));
            }
            la.view_mut((i * n, j * n), (n, n)).copy_from(&(a * w));
            lb.view_mut((i * n, j * m), (n, m)).copy_from(&(b * w));
        }
    }
    let system = DMatrix::identity(big, big) - la;
    let resolvent = system.clone().lu();
    let singular = || {
        let sv = system.clone().singular_values();
        let cond = (sv.max() / sv.min()).as_f64();
        FbvieError::SolverFailure { reason: "I - L_A is singular".into(), condition: cond }
    };
    let state_map = resolvent.solve(&lb).ok_or_else(singular)?;
    let x_tilde = stack(&(0..len).map(|i| (spec.x0)(grid.node(i))).collect::<Vec<_>>());
    let free_state = resolvent.solve(&x_tilde).ok_or_else(singular)?;

    let weights: Vec<T> = (0..len).map(|i| grid.weight(0, grid.last(), i)).collect();
    let q_blocks: Vec<DMatrix<T>> = (0..len)
        .map(|i| spec.q_matrix(grid.node(i)).expect("quadratic running cost") * weights[i])
        .collect();
    let r_blocks: Vec<DMatrix<T>> = (0..len).map(|i| (spec.r)(grid.node(i)) * weights[i]).collect();

    let mut qs = DMatrix::zeros(big, len * m);
    let mut qx = DVector::zeros(big);
    for (i, q) in q_blocks.iter().enumerate() {
        qs.rows_mut(i * n, n).copy_from(&(q * state_map.rows(i * n, n)));
        qx.rows_mut(i * n, n).copy_from(&(q * free_state.rows(i * n, n)));
    }
    let last = grid.last() * n;
    let s_n = state_map.rows(last, n).into_owned();
    let x_n = free_state.rows(last, n).into_owned();
    let g0 = spec.g0.clone();
    let mut hessian = state_map.tr_mul(&qs) + s_n.tr_mul(&(&g0 * &s_n));
    for (j, r) in r_blocks.iter().enumerate() {
        let mut v = hessian.view_mut((j * m, j * m), (m, m));
        v += r;
    }
    hessian *= T::lit(2.0);
    hessian = (&hessian + hessian.transpose()) * T::lit(0.5);
    let gradient_offset = (state_map.tr_mul(&qx) + s_n.tr_mul(&(&g0 * &x_n))) * T::lit(2.0);
    let constant = free_state.dot(&qx) + x_n.dot(&(&g0 * &x_n));
    Ok(DiscreteLq {
        grid: *grid,
        state_dim: n,
        control_dim: m,
        resolvent,
        control_map: lb,
        state_map,
        free_state,
        hessian,
        gradient_offset,
        constant,
        q_blocks,
        r_blocks,
        g0,
        weights,
    })
}

impl<T: Scalar> DiscreteLq<T> {
    /// State of the discrete Volterra system driven by `u`.
    pub fn simulate(&self, control: &VectorPath<T>) -> Result<VectorPath<T>> {
        self.check_control(control)?;
        let u = stack(control.values());
        let rhs = self.resolvent.solve(&(&self.control_map * u)).ok_or_else(|| FbvieError::SolverFailure {
            reason: "I - L_A is singular".into(),
            condition: f64::INFINITY,
        })?;
        let x = rhs + &self.free_state;
        Ok(VectorPath::from_values_unchecked(self.grid, self.state_dim, unstack(&x, self.state_dim)))
    }

    /// Trapezoid cost of `u` evaluated along its simulated state.
    pub fn cost(&self, control: &VectorPath<T>) -> Result<T> {
        let x = self.simulate(control)?;
        Ok(self.cost_along(&x, control))
    }

    fn cost_along(&self, x: &VectorPath<T>, u: &VectorPath<T>) -> T {
        let mut j = T::zero();
        for i in 0..self.grid.len() {
            j += x.at(i).dot(&(&self.q_blocks[i] * x.at(i))) + u.at(i).dot(&(&self.r_blocks[i] * u.at(i)));
        }
        j + x.last().dot(&(&self.g0 * x.last()))
    }

    /// `½uᵀHu + cᵀu + J₀`.
    pub fn quadratic_cost(&self, control: &VectorPath<T>) -> Result<T> {
        self.check_control(control)?;
        let u = stack(control.values());
        Ok((&self.hessian * &u).dot(&u) * T::lit(0.5) + self.gradient_offset.dot(&u) + self.constant)
    }

    pub fn quadrature_weights(&self) -> &[T] {
        &self.weights
    }

    fn check_control(&self, control: &VectorPath<T>) -> Result<()> {
        if !control.grid().same_as(&self.grid) || control.dim() != self.control_dim {
            return invalid("control path does not match the oracle grid or control dimension");
        }
        Ok(())
    }
}

/// `u* = -H⁻¹c` by Cholesky, with the cost re-evaluated by forward simulation.
pub fn solve_direct<T: Scalar>(d: &DiscreteLq<T>) -> Result<DirectSolution<T>> {
    let chol = d
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| FbvieError::InvalidArgument("cost Hessian is not positive definite".into()))?;
    let u = -chol.solve(&d.gradient_offset);
    let gradient_residual = (&d.hessian * &u + &d.gradient_offset).amax();
    let control = VectorPath::from_values_unchecked(d.grid, d.control_dim, unstack(&u, d.control_dim));
    let state = d.simulate(&control)?;
    let cost = d.cost_along(&state, &control);
    Ok(DirectSolution { control, state, cost, gradient_residual })
}

/// `ū(s) = -½R(s)⁻¹(Z(s) + B(T,s)ᵀM_x(X(T)))` from an FBVIE solution of the Hamiltonian system.
pub fn fbvie_control<T: Scalar>(spec: &LqSpec<T>, diagonal: &DiagonalSolution<T>) -> Result<VectorPath<T>> {
    let grid = *diagonal.grid();
    let big_t = grid.horizon();
    let mx = spec.mx(diagonal.x.last());
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let s = grid.node(j);
        let rhs = diagonal.z.at(j) + (spec.b)(big_t, s).tr_mul(&mx);
        let chol = (spec.r)(s)
            .cholesky()
            .ok_or_else(|| FbvieError::InvalidArgument(format!("R(t) is singular at node {j}")))?;
        out.push(chol.solve(&rhs) * T::lit(-0.5));
    }
    Ok(VectorPath::from_values_unchecked(grid, spec.control_dim, out))
}

/// Sup defect of `2Rū + B(T,t)ᵀM_x(X̄(T)) + ∫ₜᵀB(s,t)ᵀȲ(s)ds`, with `X̄` simulated from `ū`
/// and `Ȳ` the discrete adjoint along `X̄`.
pub fn stationarity_defect<T: Scalar>(spec: &LqSpec<T>, d: &DiscreteLq<T>, control: &VectorPath<T>) -> Result<T> {
    let grid = d.grid;
    let n = spec.state_dim;
    let last = grid.last();
    let big_t = grid.horizon();
    let x = d.simulate(control)?;
    let mx = spec.mx(x.last());
    let mut y = vec![DVector::zeros(n); grid.len()];
    for i in (0..=last).rev() {
        let t = grid.node(i);
        let mut rhs = spec.qx(t, x.at(i)) + (spec.a)(big_t, t).tr_mul(&mx);
        for j in i + 1..=last {
            let w = grid.weight(i, last, j);
            rhs += (spec.a)(grid.node(j), t).tr_mul(&y[j]) * w;
        }
        let w = grid.weight(i, last, i);
        y[i] = if w == T::zero() {
            rhs
        } else {
            let lhs = DMatrix::identity(n, n) - (spec.a)(t, t).transpose() * w;
            lhs.lu().solve(&rhs).ok_or_else(|| FbvieError::SolverFailure {
                reason: format!("adjoint step singular at node {i}"),
                condition: f64::INFINITY,
            })?
        };
    }
    let mut worst = T::zero();
    for j in 0..=last {
        let s = grid.node(j);
        let mut g = (spec.r)(s) * control.at(j) * T::lit(2.0) + (spec.b)(big_t, s).tr_mul(&mx);
        for i in j..=last {
            let w = grid.weight(j, last, i);
            if w != T::zero() {
                g += (spec.b)(grid.node(i), s).tr_mul(&y[i]) * w;
            }
        }
        worst = worst.max(g.amax());
    }
    Ok(worst)
}

/// Agreement metrics between the FBVIE solution and the oracle optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMetrics {
    /// `‖ū − u*‖∞ / (1 + ‖u*‖∞)`.
    pub control_error: f64,
    /// `|J(ū) − J*| / (1 + |J*|)`.
    pub cost_error: f64,
    pub stationarity: f64,
    pub fbvie_cost: f64,
    pub oracle_cost: f64,
}

pub fn oracle_metrics<T: Scalar>(spec: &LqSpec<T>, diagonal: &DiagonalSolution<T>, d: &DiscreteLq<T>) -> Result<OracleMetrics> {
    if !diagonal.grid().same_as(&d.grid) {
        return invalid("FBVIE solution and oracle live on different grids");
    }
    let direct = solve_direct(d)?;
    let u_bar = fbvie_control(spec, diagonal)?;
    let control_error = u_bar.sup_distance(&direct.control).as_f64() / (1.0 + direct.control.sup_norm().as_f64());
    let j_bar = d.cost(&u_bar)?;
    let cost_error = (j_bar - direct.cost).abs().as_f64() / (1.0 + direct.cost.abs().as_f64());
    let stationarity = stationarity_defect(spec, d, &u_bar)?.as_f64();
    Ok(OracleMetrics {
        control_error,
        cost_error,
        stationarity,
        fbvie_cost: j_bar.as_f64(),
        oracle_cost: direct.cost.as_f64(),
    })
}

/// The three oracle checks with thresholds `C h² + C ε_res`, `C = 100`.
pub fn compare_with_fbvie<T: Scalar>(
    spec: &LqSpec<T>,
    diagonal: &DiagonalSolution<T>,
    d: &DiscreteLq<T>,
    residual_tol: f64,
) -> Result<VerificationReport> {
    let m = oracle_metrics(spec, diagonal, d)?;
    let h = d.grid.step().as_f64();
    let tol = 100.0 * h * h + 100.0 * residual_tol;
    let mut report = VerificationReport::new("oracle");
    report.push(Check::upper("control-agreement", m.control_error, tol));
    report.push(Check::upper("cost-agreement", m.cost_error, tol));
    report.push(Check::upper("stationarity", m.stationarity, tol));
    report.note(format!("fbvie cost {:.12e}, oracle cost {:.12e}", m.fbvie_cost, m.oracle_cost));
    Ok(report)
}
