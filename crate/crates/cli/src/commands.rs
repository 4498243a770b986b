//! The four subcommands. Each returns an exit status and writes its artifacts into the output directory.

use std::path::{Path, PathBuf};

use fbvie::monotonicity::{check_mc1, check_mc3, estimate_gamma, MonotonicityReport, TerminalReport};
use fbvie::oracle_lq::{assemble_discrete_lq, compare_with_fbvie, solve_direct};
use fbvie::verify::{
    bridge_monotonicity_check, constant_path, fbvie_residual, hu_peng_transform_check, lq_value_identity,
    resolve_value_convention, uniqueness_probe, Check, ValueConvention, VerificationReport,
};
use fbvie::{
    continuation_solve, extend_to_fields, reduce_to_fbde, DiagonalSolution, DifferenceMode, FbvieError, Grid, Reduction,
    SolveReport,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{BuiltProblem, ConfigError, LoadedConfig, ProblemConfig, RunConfig};
use crate::output::{self, Envelope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exit {
    Success = 0,
    ConfigError = 1,
    CheckFailure = 2,
    NumericalError = 3,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Exit status for a library error.
    pub fn of(err: &FbvieError) -> Self {
        match err {
            FbvieError::InvalidArgument(_) | FbvieError::NotApplicable(_) => Exit::ConfigError,
            FbvieError::ContinuationFailure { .. }
            | FbvieError::NoConvergence { .. }
            | FbvieError::EstimationFailure(_) => Exit::CheckFailure,
            FbvieError::Numerical { .. } | FbvieError::SolverFailure { .. } => Exit::NumericalError,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] FbvieError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Config(_) => Exit::ConfigError,
            CliError::Library(e) => Exit::of(e),
            CliError::Io { .. } => Exit::NumericalError,
        }
    }
}

/// Result of one command: its status, a one-line summary and the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit: Exit,
    pub summary: String,
    pub written: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    CheckMono,
    Convergence,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::CheckMono => "check-mono",
            Command::Convergence => "convergence",
        }
    }
}

/// Loads the configuration, applies overrides and runs `command`; errors become exit statuses.
pub fn run(command: Command, config_path: &Path, out: Option<PathBuf>, seed: Option<u64>, intervals: Option<Vec<usize>>) -> Outcome {
    let loaded = match RunConfig::load(config_path) {
        Ok(mut l) => {
            l.config = l.config.resolve(seed, out);
            if let Some(list) = intervals {
                l.config.convergence.intervals = list;
            }
            match l.config.validate() {
                Ok(()) => l,
                Err(e) => return failure(CliError::Config(e)),
            }
        }
        Err(e) => return failure(CliError::Config(e)),
    };
    let result = match command {
        Command::Solve => cmd_solve(&loaded),
        Command::Verify => cmd_verify(&loaded),
        Command::CheckMono => cmd_check_mono(&loaded),
        Command::Convergence => cmd_convergence(&loaded),
    };
    result.unwrap_or_else(failure)
}

fn failure(e: CliError) -> Outcome {
    Outcome { exit: e.exit(), summary: e.to_string(), written: Vec::new() }
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(config: &'a RunConfig) -> Self {
        Self { dir: &config.output.dir, written: Vec::new() }
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        output::write_atomic(&path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        self.written.push(path);
        Ok(())
    }

    fn json<R: Serialize>(&mut self, name: &str, command: Command, config: &RunConfig, exit: Exit, report: R) -> Result<(), CliError> {
        let env = Envelope {
            tool: "fbvie",
            library_version: fbvie::VERSION,
            command: command.name(),
            config,
            exit_code: exit.code(),
            report,
        };
        self.put(name, &output::json_bytes(&env))
    }
}

fn setup(loaded: &LoadedConfig) -> Result<(Grid, BuiltProblem), CliError> {
    let grid = loaded.grid()?;
    let built = loaded.build(&grid)?;
    Ok((grid, built))
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    solve: &'a SolveReport,
    failure: Option<String>,
}

pub fn cmd_solve(loaded: &LoadedConfig) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let (grid, built) = setup(loaded)?;
    let mut w = Writer::new(cfg);
    match continuation_solve(&built.problem, &grid, &cfg.continuation) {
        Ok((sol, report)) => {
            let ok = sol.max_residual() <= cfg.continuation.residual_tol;
            let exit = if ok { Exit::Success } else { Exit::CheckFailure };
            let fields = extend_to_fields(&built.problem, &sol)?;
            let (fx, fy) = output::field_csvs(&fields);
            w.put("solution.csv", &output::solution_csv(&sol))?;
            w.put("fields_x.csv", &fx)?;
            w.put("fields_y.csv", &fy)?;
            let failure = (!ok).then(|| format!("residual {:.3e} above target", sol.max_residual()));
            w.json("report.json", Command::Solve, cfg, exit, SolveOutput { solve: &report, failure })?;
            let summary = format!(
                "{}: reached alpha = 1 with {} Picard iterations and {} halvings, residual {:.3e}",
                report.label,
                report.total_picard_iterations,
                report.halvings,
                sol.max_residual()
            );
            Ok(Outcome { exit, summary, written: w.written })
        }
        Err(FbvieError::ContinuationFailure { alpha, report }) => {
            let failure = format!("continuation stalled at alpha = {alpha}");
            w.json("report.json", Command::Solve, cfg, Exit::CheckFailure, SolveOutput { solve: &report, failure: Some(failure.clone()) })?;
            Ok(Outcome { exit: Exit::CheckFailure, summary: failure, written: w.written })
        }
        Err(e) => Err(e.into()),
    }
}

/// The solution stored by a previous `solve` in the output directory, if it matches the configuration.
fn stored_solution(loaded: &LoadedConfig, built: &BuiltProblem, grid: &Grid) -> Option<DiagonalSolution<f64>> {
    let bytes = std::fs::read(loaded.config.output.dir.join("solution.csv")).ok()?;
    let n = built.problem.dim();
    output::read_solution_csv(&bytes, grid, n, built.problem.kernel_rows())
}

#[derive(Serialize)]
struct VerifyOutput {
    solution_source: &'static str,
    verification: VerificationReport,
    value_convention: Option<ValueConvention>,
}

fn record(report: &mut VerificationReport, name: &str, result: fbvie::Result<VerificationReport>) {
    match result {
        Ok(r) => report.extend(r),
        Err(FbvieError::NotApplicable(why)) => report.note(format!("{name}: not applicable ({why})")),
        Err(e) => {
            report.push(Check { name: name.into(), status: fbvie::verify::Status::Fail, measured: f64::NAN, tolerance: f64::NAN });
            report.note(format!("{name}: {e}"));
        }
    }
}

pub fn cmd_verify(loaded: &LoadedConfig) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let params = &cfg.continuation;
    let (grid, built) = setup(loaded)?;
    let problem = &built.problem;
    let (sol, source) = match stored_solution(loaded, &built, &grid) {
        Some(s) => (s, "solution.csv"),
        None => (continuation_solve(problem, &grid, params)?.0, "solved"),
    };
    let mut report = VerificationReport::new("verify");
    let (fwd, bwd) = fbvie_residual(problem, &sol);
    let mut residual = VerificationReport::new("residual");
    residual.push(Check::upper("forward", fwd, params.residual_tol));
    residual.push(Check::upper("backward", bwd, params.residual_tol));
    report.extend(residual);

    let n = problem.dim();
    let a = cfg.verify.bridge_a.clone().map(DVector::from_vec).unwrap_or_else(|| problem.x0(0.0));
    let b = cfg.verify.bridge_b.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(n));
    if a.len() != n || b.len() != n {
        return Err(ConfigError::Invalid(format!("verify.bridge_a and verify.bridge_b need {n} entries")).into());
    }
    record(&mut report, "bridge", bridge_monotonicity_check(problem, &grid, constant_path(a), constant_path(b), params));
    record(&mut report, "uniqueness", uniqueness_probe(problem, &grid, params, cfg.verify.probe_starts, cfg.seed()));

    let mut convention = None;
    if let Some(spec) = &built.lq {
        match reduce_to_fbde(problem, &grid, 1e-12)? {
            Reduction::Reducible(_) => {
                record(&mut report, "hu-peng", hu_peng_transform_check(problem, &sol, params.residual_tol));
            }
            Reduction::NotReducible(w) => report.note(format!(
                "hu-peng: not applicable ({} depends on t between {} and {})",
                w.evaluator, w.t1, w.t2
            )),
        }
        let d = assemble_discrete_lq(spec, &grid)?;
        if spec.is_quadratic() {
            let conv = resolve_value_convention(cfg.verify.convention_intervals)?;
            let direct = solve_direct(&d)?;
            let fields = extend_to_fields(problem, &sol)?;
            record(&mut report, "value-identity", lq_value_identity(spec, &fields, direct.cost, &conv));
            convention = Some(conv);
        }
        record(&mut report, "oracle", compare_with_fbvie(spec, &sol, &d, params.residual_tol));
    } else {
        report.note("oracle checks: not applicable (no control problem)");
    }

    let exit = if report.passed() { Exit::Success } else { Exit::CheckFailure };
    let failed: Vec<&str> = report.checks.iter().filter(|c| c.status == fbvie::verify::Status::Fail).map(|c| c.name.as_str()).collect();
    let summary = if failed.is_empty() {
        format!("{} checks, none failed", report.checks.len())
    } else {
        format!("{} of {} checks failed: {}", failed.len(), report.checks.len(), failed.join(", "))
    };
    let mut w = Writer::new(cfg);
    w.json(
        "verify.json",
        Command::Verify,
        cfg,
        exit,
        VerifyOutput { solution_source: source, verification: report, value_convention: convention },
    )?;
    Ok(Outcome { exit, summary, written: w.written })
}

#[derive(Serialize)]
struct MonotonicityOutput {
    full: MonotonicityReport,
    terminal_only: MonotonicityReport,
    terminal_condition: TerminalReport,
    estimated_gamma: Option<f64>,
    summary: String,
}

pub fn cmd_check_mono(loaded: &LoadedConfig) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let (grid, built) = setup(loaded)?;
    let p = &built.problem;
    let full = check_mc1(p, &grid, &cfg.sampler, DifferenceMode::Full)?;
    let terminal_only = check_mc1(p, &grid, &cfg.sampler, DifferenceMode::TerminalOnly)?;
    let terminal_condition = check_mc3(p, &cfg.sampler)?;
    let estimated_gamma = match estimate_gamma(p, &grid, &cfg.sampler, DifferenceMode::Full) {
        Ok(g) => Some(g),
        Err(FbvieError::EstimationFailure(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let exit = if full.passed() { Exit::Success } else { Exit::CheckFailure };
    let summary = format!("full mode: {}", full.summary());
    let mut w = Writer::new(cfg);
    w.json(
        "monotonicity.json",
        Command::CheckMono,
        cfg,
        exit,
        MonotonicityOutput { full, terminal_only, terminal_condition, estimated_gamma, summary: summary.clone() },
    )?;
    Ok(Outcome { exit, summary, written: w.written })
}

/// One row of `convergence.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub intervals: usize,
    pub step: f64,
    pub sup_error: f64,
    pub observed_order: Option<f64>,
}

/// Sup error of `X` against the closed form (scalar LQ) or the finest grid of the list.
pub fn convergence_table(loaded: &LoadedConfig) -> Result<(Vec<ConvergenceRow>, &'static str), CliError> {
    let cfg = &loaded.config;
    let list = &cfg.convergence.intervals;
    let horizon = cfg.grid.horizon;
    let mut solutions = Vec::new();
    for &n in list {
        let grid = loaded.grid_with(n)?;
        let built = loaded.build(&grid)?;
        let (sol, _) = continuation_solve(&built.problem, &grid, &cfg.continuation)?;
        solutions.push(sol);
    }
    let (reference, count): (&'static str, usize) = match cfg.problem {
        ProblemConfig::LqScalar { .. } => ("closed-form", list.len()),
        _ => ("finest-grid", list.len() - 1),
    };
    if count < 2 {
        return Err(ConfigError::Invalid("convergence.intervals needs at least three entries without a closed form".into()).into());
    }
    let finest = *list.last().expect("validated non-empty");
    if reference == "finest-grid" {
        if let Some(n) = list.iter().find(|&&n| !finest.is_multiple_of(n)) {
            return Err(ConfigError::Invalid(format!("the finest grid {finest} is not a refinement of {n}")).into());
        }
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (k, sol) in solutions.iter().enumerate().take(count) {
        let n = list[k];
        let grid = *sol.grid();
        let mut err = 0.0f64;
        for i in 0..grid.len() {
            let exact = match cfg.problem {
                ProblemConfig::LqScalar { x0 } => {
                    DVector::from_element(1, x0 * (horizon - grid.node(i)).cosh() / horizon.cosh())
                }
                _ => solutions[list.len() - 1].x.at(i * (finest / n)).clone(),
            };
            err = err.max((sol.x.at(i) - exact).amax());
        }
        let observed_order = rows.last().map(|prev| (prev.sup_error / err).ln() / (n as f64 / prev.intervals as f64).ln());
        rows.push(ConvergenceRow { intervals: n, step: grid.step(), sup_error: err, observed_order });
    }
    Ok((rows, reference))
}

pub fn cmd_convergence(loaded: &LoadedConfig) -> Result<Outcome, CliError> {
    let cfg = &loaded.config;
    let (rows, reference) = convergence_table(loaded)?;
    let min_order = rows.iter().filter_map(|r| r.observed_order).fold(f64::INFINITY, f64::min);
    let gated = cfg.is_smooth_builtin();
    let exit = if !gated || min_order >= cfg.convergence.min_order { Exit::Success } else { Exit::CheckFailure };
    let header = ["N", "h", "sup_error", "observed_order", "reference"].map(String::from);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(&header).expect("writing to memory");
    for r in &rows {
        wtr.write_record([
            r.intervals.to_string(),
            output::float(r.step),
            output::float(r.sup_error),
            r.observed_order.map(output::float).unwrap_or_default(),
            reference.to_string(),
        ])
        .expect("writing to memory");
    }
    let bytes = wtr.into_inner().expect("writing to memory");
    let mut w = Writer::new(cfg);
    w.put("convergence.csv", &bytes)?;
    let summary = format!(
        "observed order {min_order:.3} against the {reference}{}",
        if gated { format!(" (required {})", cfg.convergence.min_order) } else { String::new() }
    );
    Ok(Outcome { exit, summary, written: w.written })
}
