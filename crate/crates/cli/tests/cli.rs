use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fbvie(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbvie")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SCALAR: &str = "seed = 5\n[problem]\nkind = \"lq-scalar\"\n[grid]\nhorizon = 1.0\nintervals = 200\n[output]\ndir = \"out\"\n";

#[test]
fn solve_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCALAR);
    let o = fbvie(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,X_1,Y_1,Z_1");
    assert_eq!(lines.count(), 201);
    for name in ["fields_x.csv", "fields_y.csv", "report.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["library_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config"]["grid"]["intervals"], 200);
    assert_eq!(report["report"]["solve"]["converged"], true);
    assert!(report["report"]["solve"]["halvings"].as_u64().unwrap() <= 3);
}

#[test]
fn inverted_step_bounds_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SCALAR}[continuation]\ndelta_init = 0.01\ndelta_min = 0.1\n");
    let cfg = write_config(dir.path(), &body);
    let o = fbvie(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta_min"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_reports_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let body = SCALAR.replace("intervals = 200", "intervals = 200\nnodes = 3");
    let cfg = write_config(dir.path(), &body);
    let o = fbvie(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nodes") && err.contains("line 7"), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fbvie(&["solve"], dir.path())), 1);
    assert_eq!(code(&fbvie(&["integrate", "--config", "x"], dir.path())), 1);
    assert_eq!(code(&fbvie(&["solve", "--config", "missing.toml"], dir.path())), 1);
}

#[test]
fn negative_margin_is_recorded_as_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[problem]\nkind = \"nonlinear-example\"\nlambda = 0.1\n[grid]\nhorizon = 1.0\nintervals = 40\n[output]\ndir = \"out\"\n";
    let cfg = write_config(dir.path(), body);
    let o = fbvie(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(matches!(code(&o), 0 | 2), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["report"]["solve"]["warning"].is_string());
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = SCALAR.replace("intervals = 200", "intervals = 60");
    let cfg = write_config(dir.path(), &body);
    let cfg = cfg.to_str().unwrap();
    let read = |name: &str| std::fs::read(dir.path().join("out").join(name)).unwrap();
    assert_eq!(code(&fbvie(&["solve", "--config", cfg, "--seed", "11"], dir.path())), 0);
    let first: Vec<Vec<u8>> = ["solution.csv", "report.json", "fields_x.csv"].map(read).to_vec();
    assert_eq!(code(&fbvie(&["solve", "--config", cfg, "--seed", "11"], dir.path())), 0);
    let second: Vec<Vec<u8>> = ["solution.csv", "report.json", "fields_x.csv"].map(read).to_vec();
    assert_eq!(first, second);
}

#[test]
fn verify_passes_on_the_scalar_instance() {
    let dir = tempfile::tempdir().unwrap();
    let body = SCALAR.replace("intervals = 200", "intervals = 50");
    let cfg = write_config(dir.path(), &body);
    let cfg = cfg.to_str().unwrap();
    let o = fbvie(&["verify", "--config", cfg], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["solution_source"], "solved");
    let names: Vec<&str> =
        v["report"]["verification"]["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for expected in ["residual/forward", "bridge/chain-rule-equality", "uniqueness/max-pairwise-distance", "hu-peng/integral-form", "value-identity/relative-deviation", "oracle/stationarity"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert_eq!(code(&fbvie(&["solve", "--config", cfg], dir.path())), 0);
    assert_eq!(code(&fbvie(&["verify", "--config", cfg], dir.path())), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["solution_source"], "solution.csv");
}

#[test]
fn check_mono_separates_monotone_and_broken_instances() {
    let dir = tempfile::tempdir().unwrap();
    let good = "[problem]\nkind = \"nonlinear-example\"\n[grid]\nhorizon = 1.0\nintervals = 32\n[sampler]\nnum_samples = 100\n[output]\ndir = \"good\"\n";
    let cfg = write_config(dir.path(), good);
    let o = fbvie(&["check-mono", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("good/monotonicity.json")).unwrap()).unwrap();
    assert_eq!(m["report"]["full"]["violation_count"], 0);
    assert!((m["report"]["estimated_gamma"].as_f64().unwrap() - 1.65).abs() < 1e-2);

    let broken = good.replace("kind = \"nonlinear-example\"", "kind = \"nonlinear-example\"\nvariant = \"broken\"").replace("good", "broken");
    let cfg = write_config(dir.path(), &broken);
    assert_eq!(code(&fbvie(&["check-mono", "--config", cfg.to_str().unwrap()], dir.path())), 2);
}

#[test]
fn convergence_reports_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCALAR);
    let o = fbvie(&["convergence", "--config", cfg.to_str().unwrap(), "--intervals", "16,32,64"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][3], "");
    for r in &rows[1..] {
        let order: f64 = r[3].parse().unwrap();
        assert!((1.7..2.5).contains(&order), "{order}");
        assert_eq!(r[4], "closed-form");
    }
}

#[test]
fn tabular_problem_solves_from_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "t,s,a\n0,0,0.1\n0,1,0.2\n1,0,0.3\n1,1,0.1\n").unwrap();
    std::fs::write(dir.path().join("b.csv"), "t,s,b\n0,0,1\n0,1,1\n1,0,1\n1,1,1\n").unwrap();
    let body = "[problem]\nkind = \"custom-tabular\"\nstate_dim = 1\ncontrol_dim = 1\na = \"a.csv\"\nb = \"b.csv\"\n\
                q = [[1.0]]\nr = [[1.0]]\ng0 = [[0.5]]\nx0 = [1.0]\n[grid]\nhorizon = 1.0\nintervals = 40\n[output]\ndir = \"out\"\n";
    let cfg = write_config(dir.path(), body);
    let o = fbvie(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let missing = body.replace("a.csv", "nope.csv");
    let cfg = write_config(dir.path(), &missing);
    assert_eq!(code(&fbvie(&["solve", "--config", cfg.to_str().unwrap()], dir.path())), 1);
}
