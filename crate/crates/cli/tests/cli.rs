use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regime-hinf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("REGIME_HINF_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(path: &Path) -> toml::Value {
    toml::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_tables_and_plots() {
    let dir = TempDir::new().unwrap();
    let o = run(&["solve", "example_sec5.toml", "--gamma", "1", "--dt", "1e-3", "--plot"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let riccati = fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    assert_eq!(riccati.lines().count(), 1 + 2 * 3501);
    assert!(riccati.starts_with("s,regime,Pi_11,P_11"));
    for f in ["gains.csv", "certificates.csv", "riccati.svg", "gains.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(dir.path().join("riccati.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert!(stdout(&o).contains("0.304690912"));
}

#[test]
fn infeasible_gamma_exits_with_condition_report() {
    let dir = TempDir::new().unwrap();
    let o = run(&["solve", "example_sec5.toml", "--gamma", "0.05"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("violated at s =") && err.contains("regime") && err.contains("margin"), "{err}");
}

#[test]
fn zero_scenario_gives_zero_solution() {
    let dir = TempDir::new().unwrap();
    let o = run(&["solve", "zero_scenario.toml", "--dt", "0.01"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let cols: Vec<usize> =
        (0..header.len()).filter(|&c| ["Pi_", "P_", "eta_"].iter().any(|p| header[c].starts_with(p))).collect();
    assert!(!cols.is_empty());
    for line in text.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert!(cols.iter().all(|&c| fields[c] == 0.0), "{line}");
    }
    let gains = fs::read_to_string(dir.path().join("gains.csv")).unwrap();
    for line in gains.lines().skip(1) {
        assert!(line.split(',').skip(2).all(|f| f.parse::<f64>().unwrap() == 0.0), "{line}");
    }
}

#[test]
fn usage_and_io_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["solve", "no_such_file.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["solve", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["solve", "--dt", "-1"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--paths", "0"], dir.path()).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "gamma = [").unwrap();
    assert_eq!(run(&["solve", bad.to_str().unwrap()], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn gamma_star_brackets_within_tolerance() {
    let dir = TempDir::new().unwrap();
    let o = run(&["gamma-star", "example_sec5.toml", "--lo", "0.01", "--hi", "3", "--tol", "1e-3", "--dt", "1e-2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&dir.path().join("gamma_star.toml"));
    let b = &r["gamma_star_bracket"];
    let (lo, hi) = (b["lo"].as_float().unwrap(), b["hi"].as_float().unwrap());
    assert!(hi - lo <= 1e-3 && lo < 0.8502 && 0.8502 <= hi + 1e-4, "[{lo}, {hi}]");
    assert!(stdout(&o).contains("up-interval: true"));
    let sweep = fs::read_to_string(dir.path().join("gamma_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 21);
}

#[test]
fn bracket_search_widens_an_unsolvable_upper_end() {
    let dir = TempDir::new().unwrap();
    let o = run(&["gamma-star", "example_sec5.toml", "--lo", "0.01", "--hi", "0.5", "--dt", "0.1", "--sweep", "0"], dir.path());
    assert!(o.status.success(), "widening should find a solvable gamma: {}", stderr(&o));
}

#[test]
fn evaluate_at_origin_has_zero_value() {
    let dir = TempDir::new().unwrap();
    let text = regime_hinf::scenario::EXAMPLE_SCENARIO.replace("xi = [1.0]", "xi = [0.0]");
    let path = dir.path().join("origin.toml");
    fs::write(&path, text).unwrap();
    let o = run(&["evaluate", path.to_str().unwrap(), "--dt", "1e-2", "--paths", "200"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&dir.path().join("evaluate.toml"));
    assert_eq!(r["value_formula"].as_float(), Some(0.0));
    assert_eq!(r["mc_under_saddle"]["mean"].as_float(), Some(0.0));
}

#[test]
fn saddle_check_passes_on_the_example() {
    let dir = TempDir::new().unwrap();
    let o = run(&["saddle-check", "example_sec5.toml", "--dt", "1e-2", "--paths", "3000", "--threads", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("all pass"), "{}", stdout(&o));
    let r = report(&dir.path().join("saddle_check.toml"));
    let verdicts = r["saddle"]["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 20);
    assert!(verdicts.iter().all(|v| v["pass"].as_bool() == Some(true)));
}

#[test]
fn hinf_check_reports_margin() {
    let dir = TempDir::new().unwrap();
    let o = run(&["hinf-check", "--dt", "1e-2", "--paths", "500", "--random", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&dir.path().join("hinf_check.toml"));
    let ratio = r["hinf"]["max_ratio"].as_float().unwrap();
    assert!(ratio > 0.0 && ratio < 1.0);
    assert!((r["hinf"]["margin"].as_float().unwrap() - (1.0 - ratio)).abs() < 1e-12);
}

#[test]
fn simulation_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["simulate", "--dt", "1e-2", "--paths", "3", "--seed", "9", "--plot"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    for f in ["path_0.csv", "path_2.csv", "chain_1.csv", "paths.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = TempDir::new().unwrap();
    assert!(run(&["simulate", "--dt", "1e-2", "--paths", "3", "--seed", "10"], c.path()).status.success());
    assert_ne!(fs::read(a.path().join("path_0.csv")).unwrap(), fs::read(c.path().join("path_0.csv")).unwrap());
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_regime-hinf"))
        .args(["solve", "--dt", "1e-2"])
        .env("REGIME_HINF_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("riccati.csv").exists());
}

#[test]
fn example_reproduces_both_gamma_levels() {
    let dir = TempDir::new().unwrap();
    let o = run(&["example", "--dt", "1e-2", "--paths", "2000", "--plot"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for (gamma, bound) in [(1, 1.0), (2, 4.0)] {
        let r = report(&dir.path().join(format!("gamma_{gamma}/report.toml")));
        assert!(r["hinf"]["max_ratio"].as_float().unwrap() < bound);
        assert!(r["saddle"]["verdicts"].as_array().unwrap().iter().all(|v| v["pass"].as_bool() == Some(true)));
    }
    let comparison = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        comparison.lines().skip(1).map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1][5] < rows[0][5], "disturbance intensity should fall with gamma");
    for f in ["gains_vs_gamma.svg", "disturbance_gains_vs_gamma.svg", "states_vs_gamma.svg", "policies_vs_gamma.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let again = TempDir::new().unwrap();
    assert!(run(&["example", "--dt", "1e-2", "--paths", "2000"], again.path()).status.success());
    for f in ["comparison.csv", "gamma_1/gains.csv", "gamma_2/path.csv", "gamma_sweep.csv"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }
}
