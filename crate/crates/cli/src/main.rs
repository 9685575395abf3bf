mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use regime_hinf::error::{Error, Result};
use regime_hinf::eval::{
    cost_mc, default_candidates, default_perturbations, gamma_star, gamma_sweep, hinf_ratio, intensity_mc, is_up_set,
    saddle_check, value_formula, write_sweep_csv, EvalReport, Intensity, SweepRow,
};
use regime_hinf::gains::{synthesize, IntervalTable, SaddleGains};
use regime_hinf::model::GameModel;
use regime_hinf::policy::outcome_policies;
use regime_hinf::riccati::{solve_all, RiccatiOptions, RiccatiSolution};
use regime_hinf::scenario::{bundled, load_scenario_file, load_scenario_with, EXAMPLE_SCENARIO};
use regime_hinf::sim::{simulate_seeded, SimPath};

use svg::{Plot, Series};

const OUT_ENV: &str = "REGIME_HINF_OUT";

#[derive(Parser)]
#[command(name = "regime-hinf", version, about = "Stochastic H-infinity control of regime-switching systems under partial information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati system and synthesize the saddle-point gains.
    Solve(Common),
    /// Simulate sample paths under the saddle-point strategies.
    Simulate(Common),
    /// Compare the closed-form value with a Monte-Carlo estimate.
    Evaluate(Common),
    /// Check both saddle inequalities under perturbed gains.
    SaddleCheck {
        #[command(flatten)]
        common: Common,
        /// Perturbation sizes applied with both signs to every gain block.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25")]
        eps: Vec<f64>,
    },
    /// Estimate the worst disturbance-to-output ratio over a candidate family.
    HinfCheck {
        #[command(flatten)]
        common: Common,
        /// Number of random feedback candidates.
        #[arg(long, default_value_t = 4)]
        random: usize,
    },
    /// Bracket the Riccati solvability threshold in gamma.
    GammaStar {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bracket: Bracket,
    },
    /// Run the bundled two-regime example at gamma = 1 and 2.
    Example {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bracket: Bracket,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML file or bundled scenario name.
    #[arg(default_value = "example_sec5.toml")]
    scenario: String,
    /// Override the scenario's gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Grid step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Monte-Carlo paths (command-specific default when omitted).
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory (default: $REGIME_HINF_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Load scenarios that fail validation.
    #[arg(long)]
    allow_invalid: bool,
}

#[derive(Args, Clone, Copy)]
struct Bracket {
    #[arg(long, default_value_t = 0.01)]
    lo: f64,
    #[arg(long, default_value_t = 3.0)]
    hi: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Points in the solvability sweep over [lo, hi].
    #[arg(long, default_value_t = 20)]
    sweep: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_infeasibility() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    let common = match &command {
        Command::Solve(c) | Command::Simulate(c) | Command::Evaluate(c) => c,
        Command::SaddleCheck { common, .. } | Command::HinfCheck { common, .. } => common,
        Command::GammaStar { common, .. } | Command::Example { common, .. } => common,
    };
    check_common(common)?;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::OutOfRange { what: "thread count", detail: e.to_string() })?;
    }
    match &command {
        Command::Solve(c) => cmd_solve(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::SaddleCheck { common, eps } => cmd_saddle_check(common, eps),
        Command::HinfCheck { common, random } => cmd_hinf_check(common, *random),
        Command::GammaStar { common, bracket } => cmd_gamma_star(common, *bracket),
        Command::Example { common, bracket } => cmd_example(common, *bracket),
    }
}

fn check_common(c: &Common) -> Result<()> {
    if !(c.dt > 0.0) {
        return Err(Error::OutOfRange { what: "grid step", detail: format!("{} is not positive", c.dt) });
    }
    if c.paths == Some(0) {
        return Err(Error::OutOfRange { what: "path count", detail: "at least one path is required".into() });
    }
    Ok(())
}

fn load(c: &Common) -> Result<GameModel> {
    let path = Path::new(&c.scenario);
    let model = if path.exists() {
        load_scenario_file(path, c.allow_invalid)?
    } else if let Some(text) = bundled(&c.scenario) {
        load_scenario_with(text, c.allow_invalid)?
    } else {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("scenario '{}' is neither a file nor a bundled name", c.scenario),
        )));
    };
    Ok(match c.gamma {
        Some(g) => model.with_gamma(g),
        None => model,
    })
}

fn out_dir(c: &Common) -> Result<PathBuf> {
    let dir = c.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| "out".into());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

struct Solved {
    sol: RiccatiSolution,
    gains: Arc<SaddleGains>,
}

fn solve(model: &GameModel, dt: f64) -> Result<Solved> {
    let grid = model.grid(dt)?;
    let sol = solve_all(model, &grid, &RiccatiOptions::default())?;
    let gains = Arc::new(synthesize(&sol, model)?);
    Ok(Solved { sol, gains })
}

fn write_solution(dir: &Path, s: &Solved, plot: bool) -> Result<()> {
    let mut w = create(dir, "riccati.csv")?;
    s.sol.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "certificates.csv")?;
    s.sol.write_certificates_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "gains.csv")?;
    s.gains.write_csv(&mut w)?;
    w.flush()?;
    if plot {
        write_text(dir, "riccati.svg", &riccati_plot(&s.sol).render())?;
        write_text(dir, "gains.svg", &gains_plot(&s.gains, "").render())?;
    }
    Ok(())
}

fn riccati_plot(sol: &RiccatiSolution) -> Plot {
    let nodes = sol.grid.nodes();
    let n = sol.pi[0][0].nrows();
    let mut plot = Plot::new(format!("Riccati solutions (gamma = {})", sol.gamma), "s", "value");
    for (name, table) in [("Pi", &sol.pi), ("P", &sol.p)] {
        for i in 0..table[0].len() {
            for r in 0..n {
                let label = if n == 1 { format!("{name} regime {}", i + 1) } else { format!("{name}_{}{} regime {}", r + 1, r + 1, i + 1) };
                let pts = nodes.iter().zip(table).map(|(&s, row)| (s, row[i][(r, r)])).collect();
                let series = Series::new(label, pts);
                plot.add(if name == "P" { series.dashed() } else { series });
            }
        }
    }
    plot
}

fn table_series(plot: &mut Plot, g: &SaddleGains, table: &IntervalTable, name: &str, suffix: &str, dashed: bool) {
    let (rows, cols) = table.shape();
    for i in 0..table.regimes() {
        for r in 0..rows {
            for c in 0..cols {
                let entry = if rows * cols == 1 { String::new() } else { format!("_{}{}", r + 1, c + 1) };
                let pts = (0..g.grid.nodes().len()).map(|k| (g.grid.nodes()[k], table.at_node(k, i)[(r, c)])).collect();
                let s = Series::new(format!("{name}{entry} regime {}{suffix}", i + 1), pts);
                plot.add(if dashed { s.dashed() } else { s });
            }
        }
    }
}

fn gains_plot(g: &SaddleGains, suffix: &str) -> Plot {
    let mut plot = Plot::new(format!("Saddle-point gains (gamma = {})", g.gamma), "s", "gain");
    table_series(&mut plot, g, &g.theta_hat1, "control", suffix, false);
    table_series(&mut plot, g, &g.theta_hat2, "dist. xhat", suffix, true);
    table_series(&mut plot, g, &g.theta_tilde2, "dist. xtilde", suffix, true);
    plot
}

fn print_solution(s: &Solved, model: &GameModel) -> Result<()> {
    let i0 = model.initial_regime;
    println!("gamma = {}, grid step {}, {} nodes", s.sol.gamma, s.sol.grid.step(), s.sol.grid.nodes().len());
    println!("smallest certificate margin {:.6e}", s.sol.min_margin());
    for i in 0..model.n_regimes() {
        println!(
            "regime {}: Pi(t) = {:.6}  P(t) = {:.6}  control gain(t) = {:.6}",
            i + 1,
            s.sol.pi[0][i][(0, 0)],
            s.sol.p[0][i][(0, 0)],
            s.gains.theta_hat1.at_node(0, i)[(0, 0)]
        );
    }
    println!("value at (t, xi, regime {}) = {:.9}", i0 + 1, value_formula(&s.sol, model)?);
    Ok(())
}

fn cmd_solve(c: &Common) -> Result<()> {
    let model = load(c)?;
    let s = solve(&model, c.dt)?;
    let dir = out_dir(c)?;
    write_solution(&dir, &s, c.plot)?;
    print_solution(&s, &model)?;
    println!("wrote riccati.csv, gains.csv, certificates.csv to {}", dir.display());
    Ok(())
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let model = load(c)?;
    let s = solve(&model, c.dt)?;
    let (control, dist) = outcome_policies(&s.gains);
    let dir = out_dir(c)?;
    let n = c.paths.unwrap_or(10);
    let mut costs = Vec::with_capacity(n);
    let mut plot = Plot::new(format!("Sample paths (gamma = {})", model.gamma), "s", "x");
    for p in 0..n {
        let path = simulate_seeded(&model, &s.sol.grid, &control, &dist, c.seed, p as u64)?;
        let mut w = create(&dir, &format!("path_{p}.csv"))?;
        path.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&dir, &format!("chain_{p}.csv"))?;
        path.chain.write_csv(&mut w)?;
        w.flush()?;
        costs.push(path.cost.j_gamma);
        if c.plot && p < 8 {
            plot.add(Series::new(format!("path {p}"), state_points(&path)));
        }
    }
    if c.plot {
        write_text(&dir, "paths.svg", &plot.render())?;
    }
    let (mean, se) = regime_hinf::eval::mean_stderr(&costs);
    println!("{n} paths, soft-constrained cost {mean:.6} ± {se:.6}");
    println!("wrote path_*.csv and chain_*.csv to {}", dir.display());
    Ok(())
}

fn state_points(path: &SimPath) -> Vec<(f64, f64)> {
    path.times.iter().zip(&path.x).map(|(&s, x)| (s, x[0])).collect()
}

fn evaluate(model: &GameModel, s: &Solved, paths: usize, seed: u64) -> Result<EvalReport> {
    let (control, dist) = outcome_policies(&s.gains);
    Ok(EvalReport {
        gamma: model.gamma,
        value_formula: Some(value_formula(&s.sol, model)?),
        mc_under_saddle: Some(cost_mc(model, &s.sol.grid, &control, &dist, Some(model.gamma), paths, seed)?),
        ..Default::default()
    })
}

fn emit(dir: &Path, name: &str, report: &EvalReport) -> Result<()> {
    write_text(dir, name, &report.to_toml())?;
    print!("{}", report.table());
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

fn cmd_evaluate(c: &Common) -> Result<()> {
    let model = load(c)?;
    let s = solve(&model, c.dt)?;
    let report = evaluate(&model, &s, c.paths.unwrap_or(50_000), c.seed)?;
    emit(&out_dir(c)?, "evaluate.toml", &report)
}

fn cmd_saddle_check(c: &Common, eps: &[f64]) -> Result<()> {
    let model = load(c)?;
    let s = solve(&model, c.dt)?;
    let perts = default_perturbations(eps);
    let saddle = saddle_check(&model, &s.sol.grid, &s.gains, &perts, c.paths.unwrap_or(50_000), c.seed)?;
    let pass = saddle.all_pass();
    let report = EvalReport { gamma: model.gamma, saddle: Some(saddle), ..Default::default() };
    emit(&out_dir(c)?, "saddle_check.toml", &report)?;
    println!("saddle inequalities: {}", if pass { "all pass" } else { "FAILED" });
    Ok(())
}

fn cmd_hinf_check(c: &Common, random: usize) -> Result<()> {
    let model = load(c)?;
    let family = default_candidates(model.horizon() - model.initial_time, random);
    let hinf = hinf_ratio(&model, c.dt, &RiccatiOptions::default(), &family, c.paths.unwrap_or(20_000), c.seed)?;
    let report = EvalReport { gamma: model.gamma, hinf: Some(hinf), ..Default::default() };
    emit(&out_dir(c)?, "hinf_check.toml", &report)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn sweep_and_bracket(model: &GameModel, dt: f64, b: Bracket, dir: &Path) -> Result<(Vec<SweepRow>, EvalReport)> {
    let opts = RiccatiOptions::default();
    let rows = gamma_sweep(model, dt, &linspace(b.lo, b.hi, b.sweep), &opts)?;
    let mut w = create(dir, "gamma_sweep.csv")?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    println!("{:>10}  {:>9}  {:>14}", "gamma", "solvable", "min margin");
    for r in &rows {
        println!("{:>10.4}  {:>9}  {:>14.6e}", r.gamma, r.solvable, r.min_margin);
    }
    println!("solvable set is an up-interval: {}", is_up_set(&rows));
    let bracket = gamma_star(model, dt, b.lo, b.hi, b.tol, &opts)?;
    println!("solvability threshold in [{:.6}, {:.6}] after {} solves", bracket.lo, bracket.hi, bracket.evaluations);
    let report =
        EvalReport { gamma: model.gamma, gamma_star_bracket: Some(bracket), sweep: rows.clone(), ..Default::default() };
    Ok((rows, report))
}

fn cmd_gamma_star(c: &Common, b: Bracket) -> Result<()> {
    let model = load(c)?;
    let dir = out_dir(c)?;
    let (_, report) = sweep_and_bracket(&model, c.dt, b, &dir)?;
    write_text(&dir, "gamma_star.toml", &report.to_toml())?;
    println!("wrote gamma_sweep.csv and gamma_star.toml to {}", dir.display());
    Ok(())
}

fn cmd_example(c: &Common, b: Bracket) -> Result<()> {
    let base = if c.scenario == "example_sec5.toml" {
        load_scenario_with(EXAMPLE_SCENARIO, false)?
    } else {
        load(c)?
    };
    let dir = out_dir(c)?;
    let paths = c.paths.unwrap_or(10_000);
    let mut intensities: Vec<(f64, Intensity)> = vec![];
    let mut gains: Vec<Arc<SaddleGains>> = vec![];
    let mut samples: Vec<SimPath> = vec![];
    for gamma in [1.0, 2.0] {
        let model = base.with_gamma(gamma);
        let sub = dir.join(format!("gamma_{gamma}"));
        fs::create_dir_all(&sub)?;
        println!("== gamma = {gamma} ==");
        let s = solve(&model, c.dt)?;
        write_solution(&sub, &s, c.plot)?;
        let mut report = evaluate(&model, &s, paths, c.seed)?;
        report.saddle =
            Some(saddle_check(&model, &s.sol.grid, &s.gains, &default_perturbations(&[0.1, 0.25]), paths, c.seed)?);
        let family = default_candidates(model.horizon() - model.initial_time, 4);
        report.hinf = Some(hinf_ratio(&model, c.dt, &RiccatiOptions::default(), &family, paths, c.seed)?);
        emit(&sub, "report.toml", &report)?;
        let (control, dist) = outcome_policies(&s.gains);
        let path = simulate_seeded(&model, &s.sol.grid, &control, &dist, c.seed, 0)?;
        let mut w = create(&sub, "path.csv")?;
        path.write_csv(&mut w)?;
        w.flush()?;
        intensities.push((gamma, intensity_mc(&model, &s.sol.grid, &control, &dist, paths, c.seed)?));
        gains.push(s.gains.clone());
        samples.push(path);
        println!();
    }

    let mut w = create(&dir, "comparison.csv")?;
    writeln!(w, "gamma,state,state_stderr,control,control_stderr,disturbance,disturbance_stderr")?;
    println!("{:>6}  {:>22}  {:>22}  {:>22}", "gamma", "E int |x|^2", "E int |u|^2", "E int |v|^2");
    for (gamma, it) in &intensities {
        writeln!(
            w,
            "{gamma},{},{},{},{},{},{}",
            it.state, it.state_stderr, it.control, it.control_stderr, it.disturbance, it.disturbance_stderr
        )?;
        println!(
            "{gamma:>6}  {:>12.6} ± {:<8.6}  {:>12.6} ± {:<8.6}  {:>12.6} ± {:<8.6}",
            it.state, it.state_stderr, it.control, it.control_stderr, it.disturbance, it.disturbance_stderr
        );
    }
    w.flush()?;
    println!();

    let (_, bracket_report) = sweep_and_bracket(&base, c.dt.max(1e-2), b, &dir)?;
    write_text(&dir, "gamma_star.toml", &bracket_report.to_toml())?;

    if c.plot {
        let mut plot = Plot::new("Control gain vs gamma", "s", "gain");
        for (g, suffix) in gains.iter().zip([" (gamma 1)", " (gamma 2)"]) {
            table_series(&mut plot, g, &g.theta_hat1, "control", suffix, suffix.contains('2'));
        }
        write_text(&dir, "gains_vs_gamma.svg", &plot.render())?;
        let mut plot = Plot::new("Disturbance gains vs gamma", "s", "gain");
        for (g, suffix) in gains.iter().zip([" (gamma 1)", " (gamma 2)"]) {
            table_series(&mut plot, g, &g.theta_hat2, "xhat", suffix, suffix.contains('2'));
            table_series(&mut plot, g, &g.theta_tilde2, "xtilde", suffix, suffix.contains('2'));
        }
        write_text(&dir, "disturbance_gains_vs_gamma.svg", &plot.render())?;
        let mut plot = Plot::new("State vs gamma (common noise)", "s", "x");
        for (p, gamma) in samples.iter().zip([1, 2]) {
            plot.add(Series::new(format!("x (gamma {gamma})"), state_points(p)));
        }
        write_text(&dir, "states_vs_gamma.svg", &plot.render())?;
        let mut plot = Plot::new("Policies vs gamma (common noise)", "s", "value");
        for (p, gamma) in samples.iter().zip([1, 2]) {
            plot.add(Series::new(format!("u (gamma {gamma})"), p.times.iter().zip(&p.u).map(|(&s, u)| (s, u[0])).collect()));
            plot.add(
                Series::new(format!("v (gamma {gamma})"), p.times.iter().zip(&p.v).map(|(&s, v)| (s, v[0])).collect())
                    .dashed(),
            );
        }
        write_text(&dir, "policies_vs_gamma.svg", &plot.render())?;
    }
    println!("wrote example outputs to {}", dir.display());
    Ok(())
}
