mod common;

use std::sync::Arc;

use common::{random_inhomogeneous, scalar_game, two_state, Scalar};
use nalgebra::DVector;
use regime_hinf::chain::transition_matrix;
use regime_hinf::error::Error;
use regime_hinf::eval::{
    cost_mc, cost_samples, default_candidates, default_perturbations, gamma_star, gamma_sweep, hinf_ratio, is_up_set,
    mean_stderr, occupation_probabilities, saddle_check, value_formula, write_sweep_csv, Block, Candidate, EvalReport,
    Perturbation, SIGMA_RULE,
};
use regime_hinf::gains::{synthesize, SaddleGains};
use regime_hinf::grid::TimeGrid;
use regime_hinf::model::GameModel;
use regime_hinf::policy::{outcome_policies, ControlPolicy, DisturbancePolicy, Signal};
use regime_hinf::riccati::{solve_all, RiccatiOptions, RiccatiSolution};
use regime_hinf::scenario::example_model;

fn solved(model: &GameModel, step: f64) -> (TimeGrid, RiccatiSolution, Arc<SaddleGains>) {
    let grid = model.grid(step).unwrap();
    let sol = solve_all(model, &grid, &RiccatiOptions::default()).unwrap();
    let gains = Arc::new(synthesize(&sol, model).unwrap());
    (grid, sol, gains)
}

#[test]
fn zero_weights_give_zero_cost() {
    let r = Scalar { a: 0.4, c: 0.3, cbar: 0.2, b: 0.1, sigma: 0.5, sigmabar: 0.3, ..Scalar::default() };
    let model = scalar_game(&[r, r], two_state(1.0, 1.0), 1.0, 1.0, 2.0);
    let grid = model.grid(0.01).unwrap();
    let est = cost_mc(&model, &grid, &ControlPolicy::Zero, &DisturbancePolicy::Zero, None, 50, 3).unwrap();
    assert_eq!(est.mean, 0.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn soft_constrained_cost_is_output_minus_weighted_energy() {
    let model = random_inhomogeneous(4);
    let (grid, _, gains) = solved(&model, 0.01);
    let (c, d) = outcome_policies(&gains);
    let with = cost_samples(&model, &grid, &c, &d, model.gamma, 100, 5).unwrap();
    let without = cost_samples(&model, &grid, &c, &d, 0.0, 100, 5).unwrap();
    let g2 = model.gamma * model.gamma;
    for (a, b) in with.iter().zip(&without) {
        assert_eq!(a.j, b.j);
        assert_eq!(b.j_gamma, b.j);
        assert!((a.j_gamma - (a.j - g2 * a.v_energy)).abs() <= 1e-12 * (1.0 + a.j.abs()));
    }
    let none = cost_mc(&model, &grid, &c, &d, None, 100, 5).unwrap();
    let zero = cost_mc(&model, &grid, &c, &d, Some(0.0), 100, 5).unwrap();
    assert_eq!(none.mean, zero.mean);
}

#[test]
fn homogeneous_value_is_the_quadratic_form() {
    let model = example_model();
    let (_, sol, _) = solved(&model, 1e-3);
    let v = value_formula(&sol, &model).unwrap();
    assert_eq!(v, sol.p[0][0][(0, 0)]);
    assert!((v - 0.3046909118691778).abs() < 1e-12);
    let mut at_origin = model.clone();
    at_origin.xi = DVector::zeros(1);
    assert_eq!(value_formula(&sol, &at_origin).unwrap(), 0.0);
}

#[test]
fn inhomogeneous_value_matches_monte_carlo() {
    let model = random_inhomogeneous(1);
    let (grid, sol, gains) = solved(&model, 2e-3);
    let v = value_formula(&sol, &model).unwrap();
    let (c, d) = outcome_policies(&gains);
    let est = cost_mc(&model, &grid, &c, &d, Some(model.gamma), 100_000, 21).unwrap();
    let z = (est.mean - v).abs() / est.stderr;
    assert!(z <= SIGMA_RULE, "value {v}, MC {est}, z {z}");
}

#[test]
fn zero_perturbation_changes_nothing() {
    let model = example_model();
    let (grid, _, gains) = solved(&model, 1e-2);
    let perts: Vec<_> = Block::ALL.iter().map(|&block| Perturbation { block, epsilon: 0.0 }).collect();
    let report = saddle_check(&model, &grid, &gains, &perts, 200, 1).unwrap();
    for v in &report.verdicts {
        assert_eq!(v.delta, 0.0, "{}", v.description);
        assert!(v.pass);
    }
}

#[test]
fn saddle_inequalities_hold_across_seeds() {
    let model = example_model();
    let (grid, _, gains) = solved(&model, 1e-2);
    let perts = default_perturbations(&[0.1, 0.5]);
    for seed in 0..5 {
        let report = saddle_check(&model, &grid, &gains, &perts, 2000, seed).unwrap();
        assert!(report.all_pass(), "seed {seed}: {}", EvalReport { saddle: Some(report.clone()), ..Default::default() }.table());
    }
}

#[test]
fn large_perturbations_are_detected_with_the_right_sign() {
    let model = example_model();
    let (grid, _, gains) = solved(&model, 1e-2);
    let perts = [
        Perturbation { block: Block::ControlGain, epsilon: 1.0 },
        Perturbation { block: Block::DisturbanceOffset, epsilon: 1.0 },
    ];
    let report = saddle_check(&model, &grid, &gains, &perts, 2000, 2).unwrap();
    assert!(report.verdicts[0].delta > SIGMA_RULE * report.verdicts[0].stderr);
    assert!(report.verdicts[1].delta < -SIGMA_RULE * report.verdicts[1].stderr);
}

#[test]
fn hinf_ratio_is_monotone_in_the_candidate_family() {
    let model = example_model();
    let family = default_candidates(model.horizon(), 2);
    let opts = RiccatiOptions::default();
    let mut previous = f64::NEG_INFINITY;
    for k in [1, 4, family.len()] {
        let report = hinf_ratio(&model, 1e-2, &opts, &family[..k], 500, 9).unwrap();
        assert!(report.max_ratio >= previous);
        assert!(report.below_gamma_squared(), "{report:?}");
        previous = report.max_ratio;
    }
}

#[test]
fn zero_energy_candidate_is_rejected() {
    let model = example_model();
    let r = hinf_ratio(&model, 1e-2, &RiccatiOptions::default(), &[Candidate::Pulse { start: 1.0, end: 1.0 }], 10, 0);
    assert!(matches!(r, Err(Error::Validation(_))));
    let r = hinf_ratio(&model, 1e-2, &RiccatiOptions::default(), &[], 10, 0);
    assert!(matches!(r, Err(Error::Validation(_))));
}

#[test]
fn solvability_threshold_of_the_example() {
    let model = example_model();
    let b = gamma_star(&model, 1e-2, 0.01, 3.0, 1e-3, &RiccatiOptions::default()).unwrap();
    assert!(b.hi - b.lo <= 1e-3);
    assert!(b.hi < 1.0 && b.lo > 0.5, "{b:?}");
}

#[test]
fn solvability_threshold_is_stable_under_refinement() {
    // Coarse steps must not jump across the finite escape just below the threshold.
    let model = example_model();
    let opts = RiccatiOptions::default();
    let brackets: Vec<_> =
        [2e-2, 1e-2, 1e-3].iter().map(|&h| gamma_star(&model, h, 0.5, 1.0, 1e-4, &opts).unwrap()).collect();
    for b in &brackets {
        assert!((b.hi - 0.8502).abs() < 5e-4, "{b:?}");
    }
    let gammas: Vec<f64> = (0..41).map(|k| 0.76 + 0.0025 * k as f64).collect();
    let rows = gamma_sweep(&model, 1e-2, &gammas, &opts).unwrap();
    assert!(is_up_set(&rows));
    assert!(rows.iter().all(|r| r.solvable == (r.gamma > 0.8502)));
}

#[test]
fn decoupled_disturbance_threshold_is_the_weight_bound() {
    // With no disturbance channel the only γ-dependence is the sign of R₂ − γ²I.
    let r = Scalar { a: 0.2, b1: 0.5, c: 0.1, d1: 0.2, q: 1.0, r1: 1.0, r2: 0.09, ..Scalar::default() };
    let s = Scalar { r2: 0.25, ..r };
    let model = scalar_game(&[r, s], two_state(1.0, 1.0), 1.0, 1.0, 1.0);
    let b = gamma_star(&model, 1e-2, 0.1, 2.0, 1e-6, &RiccatiOptions::default()).unwrap();
    assert!(b.lo <= 0.5 && b.hi >= 0.5 && b.hi - b.lo <= 1e-6, "{b:?}");
}

#[test]
fn sweep_is_an_up_set() {
    let model = example_model();
    let gammas: Vec<f64> = (1..=30).map(|k| 0.1 * k as f64).collect();
    let rows = gamma_sweep(&model, 1e-2, &gammas, &RiccatiOptions::default()).unwrap();
    assert!(is_up_set(&rows));
    assert!(!rows[0].solvable && rows.last().unwrap().solvable);
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 31);
}

#[test]
fn unsolvable_everywhere_gives_no_bracket() {
    // R₂ − γ²I stays positive for every γ the search can reach.
    let r = Scalar { b2: 1.0, q: 1.0, r2: 1e20, ..Scalar::default() };
    let model = scalar_game(&[r, r], two_state(1.0, 1.0), 1.0, 1.0, 1.0);
    let r = gamma_star(&model, 0.1, 0.5, 1.0, 1e-3, &RiccatiOptions::default());
    assert!(matches!(r, Err(Error::NoBracket { .. })), "{r:?}");
    assert!(matches!(
        gamma_star(&model, 0.1, 1.0, 0.5, 1e-3, &RiccatiOptions::default()),
        Err(Error::OutOfRange { .. })
    ));
}

#[test]
fn report_serializes_to_parseable_toml() {
    let model = example_model();
    let (grid, sol, gains) = solved(&model, 1e-2);
    let (c, d) = outcome_policies(&gains);
    let report = EvalReport {
        gamma: model.gamma,
        value_formula: Some(value_formula(&sol, &model).unwrap()),
        mc_under_saddle: Some(cost_mc(&model, &grid, &c, &d, Some(model.gamma), 100, 0).unwrap()),
        saddle: Some(saddle_check(&model, &grid, &gains, &default_perturbations(&[0.1]), 100, 0).unwrap()),
        sweep: gamma_sweep(&model, 1e-2, &[0.5, 1.0], &RiccatiOptions::default()).unwrap(),
        ..Default::default()
    };
    let parsed: toml::Value = toml::from_str(&report.to_toml()).unwrap();
    assert_eq!(parsed["gamma"].as_float(), Some(1.0));
    assert_eq!(parsed["saddle"]["verdicts"].as_array().unwrap().len(), 10);
    assert!(report.table().contains("saddle inequalities"));
}

#[test]
fn occupation_probabilities_follow_the_transition_matrix() {
    let model = example_model();
    let grid = model.grid(0.01).unwrap();
    let probs = occupation_probabilities(&model.generator, &grid, 0);
    for (k, s) in grid.nodes().iter().enumerate() {
        let exact = transition_matrix(&model.generator, *s).row(0).transpose();
        assert!((&probs[k] - exact).amax() < 1e-8);
    }
}

#[test]
fn paths_are_required() {
    let model = example_model();
    let grid = model.grid(0.1).unwrap();
    let r = cost_mc(&model, &grid, &ControlPolicy::Zero, &DisturbancePolicy::Zero, None, 0, 0);
    assert!(matches!(r, Err(Error::OutOfRange { .. })));
}

#[test]
fn mean_and_standard_error() {
    assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
    let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
}

#[test]
fn frozen_monte_carlo_estimates() {
    let model = example_model();
    for (gamma, mean, stderr) in [(1.0, 0.3079719808579934, 0.0036519099959783203), (2.0, 0.282544279181713, 0.002890561130189581)] {
        let m = model.with_gamma(gamma);
        let (grid, _, gains) = solved(&m, 1e-3);
        let (c, d) = outcome_policies(&gains);
        let est = cost_mc(&m, &grid, &c, &d, Some(gamma), 2000, 11).unwrap();
        assert_eq!(est.mean, mean);
        assert_eq!(est.stderr, stderr);
    }
}

#[test]
fn open_loop_signal_evaluates() {
    let model = example_model();
    let grid = model.grid(0.05).unwrap();
    let d = DisturbancePolicy::OpenLoop(Signal::constant(DVector::from_element(1, 0.2), 2));
    let a = cost_mc(&model, &grid, &ControlPolicy::Zero, &d, Some(1.0), 300, 3).unwrap();
    let b = cost_mc(&model, &grid, &ControlPolicy::Zero, &DisturbancePolicy::Zero, Some(1.0), 300, 3).unwrap();
    assert!(a.mean != b.mean);
}
