mod common;

use common::{lq_model, lq_regime, random_inhomogeneous, rel_err, Scalar};
use nalgebra::DMatrix;
use regime_hinf::error::Error;
use regime_hinf::linalg::asymmetry;
use regime_hinf::riccati::{solve_all, solve_eta, solve_p, solve_pi, ConditionSet, EtaForm, PForm, RiccatiOptions};
use regime_hinf::scenario::{bundled, example_model, load_scenario};

/// Scalar LQ pair (Π, P) by fine-step RK4: Π has a closed form, P is integrated.
fn lq_reference(r: &Scalar, horizon: f64, steps: usize) -> Vec<(f64, f64)> {
    let k = 2.0 * r.a + r.c * r.c + r.cbar * r.cbar;
    let pi = |s: f64| {
        let e = (k * (horizon - s)).exp();
        r.g * e + r.q * (e - 1.0) / k
    };
    let rhs = |s: f64, p: f64| {
        let pi = pi(s);
        let sh = r.b1 * p + r.d1 * p * r.c + r.d1bar * pi * r.cbar + r.s1;
        let rh = r.r1 + r.d1 * r.d1 * p + r.d1bar * r.d1bar * pi;
        -(2.0 * r.a * p + r.c * r.c * p + r.cbar * r.cbar * pi + r.q - sh * sh / rh)
    };
    let h = horizon / steps as f64;
    let mut out = vec![(0.0, 0.0); steps + 1];
    let mut p = r.g;
    out[steps] = (pi(horizon), p);
    for j in (0..steps).rev() {
        let s = (j + 1) as f64 * h;
        let k1 = rhs(s, p);
        let k2 = rhs(s - h / 2.0, p - h / 2.0 * k1);
        let k3 = rhs(s - h / 2.0, p - h / 2.0 * k2);
        let k4 = rhs(s - h, p - h * k3);
        p -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out[j] = (pi(j as f64 * h), p);
    }
    out
}

#[test]
fn lq_reduction_matches_fine_reference() {
    let model = lq_model(10.0);
    let grid = model.grid(1e-3).unwrap();
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    let reference = lq_reference(&lq_regime(), 1.0, 100_000);
    let mut worst: f64 = 0.0;
    for (k, _) in grid.nodes().iter().enumerate() {
        let (pi, p) = reference[k * 100];
        for i in 0..2 {
            worst = worst.max((sol.pi[k][i][(0, 0)] - pi).abs() / pi.abs());
            worst = worst.max((sol.p[k][i][(0, 0)] - p).abs() / p.abs());
        }
    }
    assert!(worst <= 1e-6, "relative error {worst:e}");
}

#[test]
fn rearranged_p_agrees_with_full_form() {
    let model = example_model();
    let grid = model.grid(1e-3).unwrap();
    let opts = RiccatiOptions { conditions: ConditionSet::I, ..RiccatiOptions::default() };
    let pi = solve_pi(&model, &grid, &opts).unwrap();
    let full = solve_p(&model, &grid, &pi, PForm::Full, &opts).unwrap();
    let rearranged = solve_p(&model, &grid, &pi, PForm::Rearranged, &opts).unwrap();
    let diff = full
        .iter()
        .flatten()
        .zip(rearranged.iter().flatten())
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-8, "max |P - P'| = {diff:e}");
}

#[test]
fn eta_forms_agree_on_random_inhomogeneous_scenarios() {
    for seed in 0..5 {
        let model = random_inhomogeneous(seed);
        let grid = model.grid(1e-3).unwrap();
        let opts = RiccatiOptions::default();
        let pi = solve_pi(&model, &grid, &opts).unwrap();
        let p = solve_p(&model, &grid, &pi, PForm::Full, &opts).unwrap();
        let forms = [EtaForm::ControlFirst, EtaForm::DisturbanceFirst, EtaForm::Compact]
            .map(|f| solve_eta(&model, &grid, &pi, &p, f).unwrap());
        assert!(forms[2][0].iter().any(|e| e[0].abs() > 1e-3), "seed {seed}: eta should be nontrivial");
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let diff = forms[a]
                .iter()
                .flatten()
                .zip(forms[b].iter().flatten())
                .map(|(x, y)| (x - y).amax())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8, "seed {seed}: forms {a}/{b} differ by {diff:e}");
        }
    }
}

fn two_dim_model() -> regime_hinf::model::GameModel {
    let text = r#"
gamma = 2.0
generator = [[-1.5, 1.5], [0.5, -0.5]]
[dims]
n = 2
m = 1
n_v = 2
D = 2
T = 1.0
[initial]
t = 0.0
xi = [1.0, -0.5]
regime = 1
[[regime]]
A = [[0.1, 0.3], [-0.2, 0.05]]
B1 = [[1.0], [0.4]]
B2 = [[0.2, -0.1], [0.0, 0.3]]
C = [[0.1, 0.0], [0.05, 0.2]]
D1 = [[0.2], [0.1]]
D2 = [[0.1, 0.0], [0.0, -0.1]]
Cbar = [[0.2, 0.1], [0.0, 0.1]]
D1bar = [[0.1], [0.0]]
D2bar = [[0.0, 0.1], [0.1, 0.0]]
Q = [[1.0, 0.2], [0.2, 0.5]]
R1 = [[0.5]]
R2 = [[0.3, 0.05], [0.05, 0.2]]
S1 = [[0.1, 0.0]]
S2 = [[0.0, 0.05], [-0.05, 0.0]]
G = [[0.4, 0.1], [0.1, 0.3]]
b = [0.2, -0.1]
sigma = [0.1, 0.2]
sigmabar = [0.05, 0.0]
q = [0.1, 0.1]
rho1 = [0.2]
rho2 = [0.0, -0.1]
g = [0.3, 0.0]
[[regime]]
A = [[-0.3, 0.1], [0.0, 0.2]]
B1 = [[0.5], [1.0]]
B2 = [[0.1, 0.0], [0.2, 0.1]]
C = [[0.0, 0.1], [0.1, 0.0]]
D1 = [[0.0], [0.2]]
D2 = [[0.05, 0.0], [0.0, 0.05]]
Cbar = [[0.1, 0.0], [0.0, 0.1]]
D1bar = [[0.0], [0.1]]
D2bar = [[0.1, 0.0], [0.0, 0.1]]
Q = [[0.6, 0.0], [0.0, 0.8]]
R1 = [[1.0]]
R2 = [[0.2, 0.0], [0.0, 0.4]]
S1 = [[0.0, 0.1]]
S2 = [[0.05, 0.0], [0.0, 0.05]]
G = [[0.2, 0.0], [0.0, 0.2]]
g = [0.0, 0.1]
"#;
    load_scenario(text).unwrap()
}

#[test]
fn terminal_values_exact_and_solutions_symmetric() {
    let model = two_dim_model();
    let grid = model.grid(1e-2).unwrap();
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    let last = grid.intervals();
    for i in 0..2 {
        assert_eq!(sol.pi[last][i], model.terminal[i].g);
        assert_eq!(sol.p[last][i], model.terminal[i].g);
        assert_eq!(sol.eta[last][i], model.terminal[i].g_lin);
    }
    let worst = sol.pi.iter().chain(&sol.p).flatten().map(asymmetry).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "asymmetry {worst:e}");
    assert!(sol.min_margin() > 0.0);
}

fn node_values(model: &regime_hinf::model::GameModel, step: f64) -> Vec<f64> {
    let grid = model.grid(step).unwrap();
    let sol = solve_all(model, &grid, &RiccatiOptions::default()).unwrap();
    // values at s = 0 and s = T/2, both grid nodes for every step used below
    let half = grid.intervals() / 2;
    let mut out = Vec::new();
    for k in [0, half] {
        for i in 0..model.n_regimes() {
            out.extend(sol.pi[k][i].iter().chain(sol.p[k][i].iter()).chain(sol.eta[k][i].iter()));
        }
    }
    out
}

#[test]
fn halving_the_step_shows_fourth_order_convergence() {
    let model = random_inhomogeneous(3);
    let (h, h2, h4) = (node_values(&model, 0.1), node_values(&model, 0.05), node_values(&model, 0.025));
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ratio = diff(&h, &h2) / diff(&h2, &h4);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_scenario_gives_zero_solution() {
    let model = load_scenario(bundled("zero_scenario.toml").unwrap()).unwrap();
    let grid = model.grid(1e-2).unwrap();
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    for k in 0..=grid.intervals() {
        for i in 0..model.n_regimes() {
            assert!(sol.pi[k][i].iter().all(|x| *x == 0.0));
            assert!(sol.p[k][i].iter().all(|x| *x == 0.0));
            assert!(sol.eta[k][i].iter().all(|x| *x == 0.0));
        }
    }
}

#[test]
fn example_riccati_values_at_start() {
    let model = example_model();
    let grid = model.grid(1e-3).unwrap();
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    let pi = [2.811054438474959, 2.632562964022677];
    let p = [0.3046909118691778, 0.3044310172443716];
    for i in 0..2 {
        assert!((sol.pi[0][i][(0, 0)] - pi[i]).abs() <= 1e-10 * pi[i]);
        assert!((sol.p[0][i][(0, 0)] - p[i]).abs() <= 1e-10 * p[i]);
    }
    assert!((sol.min_margin() - 0.1).abs() < 1e-12);
    let last = grid.intervals();
    for k in 0..=last {
        for i in 0..2 {
            assert!(sol.pi[k][i][(0, 0)] >= 0.0);
            assert!(sol.p[k][i][(0, 0)].is_finite());
            assert_eq!(sol.eta[k][i][0], 0.0);
        }
    }
    assert_eq!(sol.pi[last][0][(0, 0)], 0.0);
    // P decreases toward T on the last stretch
    assert!(sol.p[last - 100][0][(0, 0)] > sol.p[last][0][(0, 0)]);
}

#[test]
fn example_at_gamma_two() {
    let model = example_model().with_gamma(2.0);
    let grid = model.grid(1e-3).unwrap();
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    let pi = [1.984421032301724, 2.031346241416598];
    let p = [0.2786995903518947, 0.2828678273600284];
    for i in 0..2 {
        assert!((sol.pi[0][i][(0, 0)] - pi[i]).abs() <= 1e-10 * pi[i]);
        assert!((sol.p[0][i][(0, 0)] - p[i]).abs() <= 1e-10 * p[i]);
    }
}

#[test]
fn condition_sets_give_the_same_solution_on_the_example() {
    let model = example_model();
    let grid = model.grid(1e-2).unwrap();
    let sols: Vec<_> = [ConditionSet::I, ConditionSet::II, ConditionSet::IAndII]
        .iter()
        .map(|&conditions| solve_all(&model, &grid, &RiccatiOptions { conditions, ..RiccatiOptions::default() }).unwrap())
        .collect();
    for s in &sols[1..] {
        assert_eq!(s.p, sols[0].p);
        assert_eq!(s.pi, sols[0].pi);
    }
}

#[test]
fn gamma_below_threshold_is_a_condition_violation() {
    let model = example_model().with_gamma(0.05);
    let grid = model.grid(1e-3).unwrap();
    match solve_all(&model, &grid, &RiccatiOptions::default()) {
        Err(e @ Error::ConditionViolation { .. }) => {
            assert!(e.is_infeasibility());
            if let Error::ConditionViolation { margin, time, .. } = e {
                assert!(margin < 1e-8);
                assert!((0.0..=3.5).contains(&time));
            }
        }
        other => panic!("expected a condition violation, got {other:?}"),
    }
}

#[test]
fn stricter_margin_rejects_the_example() {
    let model = example_model();
    let grid = model.grid(1e-2).unwrap();
    let opts = RiccatiOptions { delta_cond: 0.5, ..RiccatiOptions::default() };
    assert!(matches!(solve_all(&model, &grid, &opts), Err(Error::ConditionViolation { .. })));
}

#[test]
fn grid_must_end_at_horizon() {
    let model = example_model();
    let grid = regime_hinf::grid::TimeGrid::new(0.0, 3.0, 0.1, &[]).unwrap();
    assert!(matches!(solve_all(&model, &grid, &RiccatiOptions::default()), Err(Error::OutOfRange { .. })));
}

#[test]
fn csv_exports_have_one_row_per_node_and_regime() {
    let model = example_model();
    let grid = model.grid(0.05).unwrap();
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().next().unwrap().starts_with("s,regime"));
    assert_eq!(text.lines().count(), 1 + grid.nodes().len() * 2);
    let mut buf = Vec::new();
    sol.write_certificates_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + grid.nodes().len() * 2);
}

#[test]
fn relative_metric_floors_at_one() {
    let a = DMatrix::from_element(1, 1, 1e-3);
    let b = DMatrix::from_element(1, 1, 2e-3);
    assert!((rel_err(&a, &b) - 1e-3).abs() < 1e-15);
}
