//! Sampling falsification of the non-local monotonicity condition and the terminal condition.
//!
//! Reports say "no violation found in S samples"; they never certify.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FbvieError, Result};
use crate::grid::{TimeGrid, VectorPath};
use crate::problem::{mc2_differences, psd_sqrt, DifferenceMode, FbvieProblem, Mc2Bundle};
use crate::scalar::Scalar;

const MAX_RECORDED: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub num_samples: usize,
    pub seed: u64,
    /// Node values are drawn uniformly from `[-amplitude, amplitude]`.
    pub amplitude: f64,
    /// Number of linear pieces of each sample path.
    pub knots: usize,
    /// Relative size of an added high-frequency sine.
    pub roughness: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { num_samples: 1000, seed: 7, amplitude: 1.0, knots: 8, roughness: 0.2 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return invalid("num_samples must be at least 1");
        }
        if self.knots == 0 {
            return invalid("knots must be at least 1");
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) || !(self.roughness >= 0.0) {
            return invalid("amplitude must be positive and roughness non-negative");
        }
        Ok(())
    }

    /// Deterministic stream for sample `index`, independent of evaluation order.
    pub fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Random piecewise-linear path with a sine perturbation.
pub fn sample_path<T: Scalar>(grid: &TimeGrid<T>, dim: usize, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> VectorPath<T> {
    let k = cfg.knots;
    let amp = cfg.amplitude;
    let knots: Vec<Vec<f64>> = (0..=k).map(|_| (0..dim).map(|_| rng.gen_range(-amp..=amp)).collect()).collect();
    let max_freq = (grid.intervals() / 4).max(1);
    let waves: Vec<(f64, f64)> = (0..dim)
        .map(|_| (rng.gen_range(1..=max_freq) as f64, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let n = grid.intervals();
    let values = (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            let pos = u * k as f64;
            let seg = (pos.floor() as usize).min(k - 1);
            let frac = pos - seg as f64;
            DVector::from_fn(dim, |c, _| {
                let base = knots[seg][c] * (1.0 - frac) + knots[seg + 1][c] * frac;
                let (freq, phase) = waves[c];
                T::lit(base + cfg.roughness * amp * (std::f64::consts::TAU * freq * u + phase).sin())
            })
        })
        .collect();
    VectorPath::from_values_unchecked(*grid, dim, values)
}

/// The monotonicity expression at every node from precomputed differences.
pub fn mc1_profile<T: Scalar>(bundle: &Mc2Bundle<T>) -> Vec<T> {
    let grid = *bundle.x_hat.grid();
    let n = grid.last();
    (0..=n)
        .map(|i| {
            let mut acc = T::zero();
            for j in i..=n {
                let w = grid.weight(i, n, j);
                if w != T::zero() {
                    let yf = bundle.y_hat.at(j).dot(bundle.f_hat.at(j, i));
                    let gx = bundle.g_hat.at(i, j).dot(bundle.x_hat.at(i));
                    acc += w * (yf - gx);
                }
            }
            acc - bundle.h_hat.at(i).dot(bundle.x_hat.at(i)) + bundle.terminal_hat.dot(bundle.f_hat.at(n, i))
        })
        .collect()
}

/// `∫ₜᵀ⟨ŷ, f̂(s,t)⟩ds − ⟨ĥ(t) + ∫ₜᵀĝ(t,s)ds, x̂(t)⟩ + ⟨Ĝ, f̂(T,t)⟩` at node `t_index`.
pub fn mc1_lhs<T: Scalar>(
    problem: &FbvieProblem<T>,
    x1: &VectorPath<T>,
    y1: &VectorPath<T>,
    x2: &VectorPath<T>,
    y2: &VectorPath<T>,
    t_index: usize,
    mode: DifferenceMode,
) -> Result<T> {
    if t_index > x1.grid().last() {
        return invalid(format!("node {t_index} outside the grid"));
    }
    let bundle = mc2_differences(problem, x1, y1, x2, y2, mode)?;
    Ok(mc1_profile(&bundle)[t_index])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub sample: usize,
    pub node: usize,
    pub t: f64,
    pub margin: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub seed: u64,
    pub mode: DifferenceMode,
    /// The margin `γ` tested against; a non-positive declared margin is tested as `0`.
    pub gamma_tested: f64,
    pub gamma_declared: f64,
    /// Max over samples and nodes of `LHS + γ|x̂|²`.
    pub worst_margin: f64,
    /// Max over samples and nodes of `LHS + γ|x̂|² − tolerance`.
    pub worst_excess: f64,
    pub violation_count: usize,
    /// The first violations found (at most 64).
    pub violations: Vec<Violation>,
    /// Min of `−LHS/|x̂|²` over admissible points, if any.
    pub estimated_gamma: Option<f64>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    pub fn summary(&self) -> String {
        if self.passed() {
            format!("no violation found in {} samples", self.samples)
        } else {
            format!("{} violations found in {} samples", self.violation_count, self.samples)
        }
    }
}

struct SampleEval<T> {
    lhs: Vec<T>,
    xsq: Vec<T>,
    scale: T,
}

fn evaluate_sample<T: Scalar>(
    problem: &FbvieProblem<T>,
    grid: &TimeGrid<T>,
    cfg: &SamplerConfig,
    index: usize,
    mode: DifferenceMode,
) -> Result<SampleEval<T>> {
    let mut rng = cfg.rng(index);
    let n = problem.dim();
    let x1 = sample_path(grid, n, cfg, &mut rng);
    let y1 = sample_path(grid, n, cfg, &mut rng);
    let x2 = sample_path(grid, n, cfg, &mut rng);
    let y2 = sample_path(grid, n, cfg, &mut rng);
    let bundle = mc2_differences(problem, &x1, &y1, &x2, &y2, mode)?;
    let lhs = mc1_profile(&bundle);
    let xsq = bundle.x_hat.values().iter().map(|v| v.norm_squared()).collect();
    let s = bundle.x_hat.sup_norm() + bundle.y_hat.sup_norm();
    Ok(SampleEval { lhs, xsq, scale: s * s })
}

fn admissible<T: Scalar>(xsq: T, scale: T) -> bool {
    xsq > T::zero() && xsq >= T::lit(1e-8) * scale
}

pub fn check_mc1<T: Scalar>(problem: &FbvieProblem<T>, grid: &TimeGrid<T>, cfg: &SamplerConfig, mode: DifferenceMode) -> Result<MonotonicityReport> {
    cfg.validate()?;
    let declared = problem.gamma();
    let gamma = declared.max(T::zero());
    let tol_factor = T::lit(10.0) * grid.step() * grid.step();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut count = 0;
    let mut estimate: Option<f64> = None;
    for index in 0..cfg.num_samples {
        let ev = evaluate_sample(problem, grid, cfg, index, mode)?;
        let tol = tol_factor * ev.scale;
        for (i, (&lhs, &xsq)) in ev.lhs.iter().zip(&ev.xsq).enumerate() {
            let margin = lhs + gamma * xsq;
            if !margin.is_finite() {
                return Err(FbvieError::Numerical { i, j: i, what: "monotonicity expression" });
            }
            worst_margin = worst_margin.max(margin.as_f64());
            worst_excess = worst_excess.max((margin - tol).as_f64());
            if margin > tol {
                count += 1;
                if violations.len() < MAX_RECORDED {
                    violations.push(Violation {
                        sample: index,
                        node: i,
                        t: grid.node(i).as_f64(),
                        margin: margin.as_f64(),
                        tolerance: tol.as_f64(),
                    });
                }
            }
            if admissible(xsq, ev.scale) {
                let g = (-lhs / xsq).as_f64();
                estimate = Some(estimate.map_or(g, |e| e.min(g)));
            }
        }
    }
    Ok(MonotonicityReport {
        samples: cfg.num_samples,
        seed: cfg.seed,
        mode,
        gamma_tested: gamma.as_f64(),
        gamma_declared: declared.as_f64(),
        worst_margin,
        worst_excess,
        violation_count: count,
        violations,
        estimated_gamma: estimate,
    })
}

/// Empirical margin: min over samples and nodes of `−LHS(t)/|x̂(t)|²` where `|x̂(t)|² ≥ 1e-8·scale`.
pub fn estimate_gamma<T: Scalar>(problem: &FbvieProblem<T>, grid: &TimeGrid<T>, cfg: &SamplerConfig, mode: DifferenceMode) -> Result<T> {
    cfg.validate()?;
    let mut best: Option<T> = None;
    for index in 0..cfg.num_samples {
        let ev = evaluate_sample(problem, grid, cfg, index, mode)?;
        for (&lhs, &xsq) in ev.lhs.iter().zip(&ev.xsq) {
            if admissible(xsq, ev.scale) {
                let g = -lhs / xsq;
                best = Some(best.map_or(g, |b| b.min(g)));
            }
        }
    }
    best.ok_or_else(|| FbvieError::EstimationFailure("no sample point with a non-negligible state difference".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalReport {
    pub samples: usize,
    pub seed: u64,
    pub k_g: f64,
    /// Min over samples of `⟨Ĝ, d⟩ − |G0^{1/2} d|²`.
    pub worst_coercivity: f64,
    /// Max over samples of `|Ĝ| − K_G |G0^{1/2} d|`.
    pub worst_growth: f64,
    pub coercivity_violations: usize,
    pub growth_violations: usize,
}

impl TerminalReport {
    pub fn passed(&self) -> bool {
        self.coercivity_violations == 0 && self.growth_violations == 0
    }
}

/// Sample terminal pairs and test `⟨G(a)−G(b), a−b⟩ ≥ |G0^{1/2}(a−b)|²` and `|G(a)−G(b)| ≤ K_G|G0^{1/2}(a−b)|`.
pub fn check_mc3<T: Scalar>(problem: &FbvieProblem<T>, cfg: &SamplerConfig) -> Result<TerminalReport> {
    cfg.validate()?;
    let root = psd_sqrt(problem.g0())?;
    let n = problem.dim();
    let k_g = problem.k_g();
    let map = problem.terminal();
    let mut worst_coercivity = f64::INFINITY;
    let mut worst_growth = f64::NEG_INFINITY;
    let (mut first, mut second) = (0, 0);
    let amp = cfg.amplitude;
    for index in 0..cfg.num_samples {
        let mut rng = cfg.rng(index);
        let a = DVector::from_fn(n, |_, _| T::lit(rng.gen_range(-amp..=amp)));
        let mut b = DVector::from_fn(n, |_, _| T::lit(rng.gen_range(-amp..=amp)));
        if index % 4 == 3 {
            // Differences confined to one coordinate probe semidefinite directions.
            let c = rng.gen_range(0..n);
            b = a.clone();
            b[c] += T::lit(rng.gen_range(-amp..=amp));
        }
        let d = &a - &b;
        let gd = map.apply(&a) - map.apply(&b);
        let rd = (&root * &d).norm();
        let scale = T::one() + a.amax().max(b.amax()) + gd.amax();
        let tol = T::lit(1e-10) * scale * scale;
        let coercivity = gd.dot(&d) - rd * rd;
        let growth = gd.norm() - k_g * rd;
        if !(coercivity.is_finite() && growth.is_finite()) {
            return Err(FbvieError::Numerical { i: index, j: index, what: "terminal map" });
        }
        worst_coercivity = worst_coercivity.min(coercivity.as_f64());
        worst_growth = worst_growth.max(growth.as_f64());
        if coercivity < -tol {
            first += 1;
        }
        if growth > tol {
            second += 1;
        }
    }
    Ok(TerminalReport {
        samples: cfg.num_samples,
        seed: cfg.seed,
        k_g: k_g.as_f64(),
        worst_coercivity,
        worst_growth,
        coercivity_violations: first,
        growth_violations: second,
    })
}
