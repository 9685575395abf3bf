use regime_hinf::error::Error;
use regime_hinf::model::{validate, CHECK_Q_SCHUR, CHECK_R_PD};
use regime_hinf::riccati::{solve_all, RiccatiOptions};
use regime_hinf::scenario::{bundled, example_model, load_scenario, load_scenario_with};

const ONE_REGIME_BODY: &str = r#"
A = 0.1
B1 = 0.3
B2 = -0.2
C = 0.3
D1 = 0.3
D2 = -0.25
Cbar = 0.1
D1bar = 0.3
D2bar = -0.2
Q = 0.3
R1 = 0.2
R2 = 0.1
S1 = 0.2
S2 = -0.1
G = 0.0
"#;

fn header(d: usize, generator: &str) -> String {
    format!(
        "gamma = 1.0\ngenerator = {generator}\n[dims]\nn = 1\nm = 1\nn_v = 1\nD = {d}\nT = 2.0\n[initial]\nxi = [1.0]\nregime = 1\n"
    )
}

#[test]
fn example_passes_every_check() {
    let model = example_model();
    let report = validate(&model);
    assert!(report.passed(), "{report}");
    // regime 1: Q − SᵀR⁻¹S = 0.3 − (0.04/0.2 + 0.01/0.1) = 0 sits on the boundary
    assert!(report.check(CHECK_Q_SCHUR).unwrap().passed);
    assert!(report.check(CHECK_R_PD).unwrap().passed);
}

#[test]
fn example_data() {
    let model = example_model();
    assert_eq!(model.horizon(), 3.5);
    assert_eq!(model.generator.lambda().as_slice(), &[-1.0, 2.0, 1.0, -2.0]);
    assert_eq!(model.gamma, 1.0);
    assert_eq!(model.xi[0], 1.0);
    assert_eq!(model.initial_regime, 0);
    assert!(model.is_homogeneous());
    assert_eq!(model.segments.len(), 1);
}

#[test]
fn stacked_weights_of_the_example() {
    let model = example_model();
    let r = model.stacked_views(0.0, 0).unwrap().r_gamma;
    assert_eq!((r[(0, 0)], r[(1, 1)], r[(0, 1)]), (0.2, 0.1 - 1.0, 0.0));
    let r = model.with_gamma(2.0).stacked_views(1.0, 1).unwrap().r_gamma;
    assert_eq!((r[(0, 0)], r[(1, 1)]), (0.1, 0.05 - 4.0));
    assert!(matches!(model.stacked_views(4.0, 0), Err(Error::OutOfRange { .. })));
    assert!(matches!(model.stacked_views(1.0, 2), Err(Error::OutOfRange { .. })));
}

#[test]
fn single_state_chain_is_rejected() {
    let text = header(1, "[[0.0]]") + "[[regime]]\n" + ONE_REGIME_BODY;
    assert!(matches!(load_scenario(&text), Err(Error::Validation(_))));
}

#[test]
fn generator_rows_must_sum_to_zero() {
    let text = header(2, "[[-1.0, 1.0], [2.0, -1.0]]") + "[[regime]]\n" + ONE_REGIME_BODY + "[[regime]]\n" + ONE_REGIME_BODY;
    assert!(matches!(load_scenario(&text), Err(Error::Validation(_))));
}

#[test]
fn missing_required_matrix_is_a_parse_error() {
    let body = ONE_REGIME_BODY.replace("Q = 0.3\n", "");
    let text = header(2, "[[-1.0, 1.0], [2.0, -2.0]]") + "[[regime]]\n" + &body + "[[regime]]\n" + ONE_REGIME_BODY;
    let err = load_scenario(&text).unwrap_err();
    assert!(matches!(err, Error::Parse(_)), "{err}");
}

#[test]
fn malformed_document_is_a_parse_error() {
    assert!(matches!(load_scenario("gamma = [1"), Err(Error::Parse(_))));
    assert!(matches!(load_scenario("gamma = 1.0\nunknown = 3"), Err(Error::Parse(_))));
}

#[test]
fn wrong_shape_is_a_dimension_mismatch() {
    let body = ONE_REGIME_BODY.replace("A = 0.1", "A = [[0.1, 0.2]]");
    let text = header(2, "[[-1.0, 1.0], [2.0, -2.0]]") + "[[regime]]\n" + &body + "[[regime]]\n" + ONE_REGIME_BODY;
    assert!(matches!(load_scenario(&text), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn indefinite_weight_is_reported_unless_allowed() {
    let body = ONE_REGIME_BODY.replace("R1 = 0.2", "R1 = -0.2");
    let text = header(2, "[[-1.0, 1.0], [2.0, -2.0]]") + "[[regime]]\n" + &body + "[[regime]]\n" + ONE_REGIME_BODY;
    assert!(matches!(load_scenario(&text), Err(Error::Validation(_))));
    let model = load_scenario_with(&text, true).unwrap();
    let report = validate(&model);
    assert!(!report.check(CHECK_R_PD).unwrap().passed);
    assert!(report.failures().count() >= 1);
}

#[test]
fn piecewise_coefficients_create_segments_and_breakpoints() {
    let body = ONE_REGIME_BODY.replace("Q = 0.3", "Q = { breaks = [0.75], values = [0.3, 0.6] }");
    let text = header(2, "[[-1.0, 1.0], [2.0, -2.0]]") + "[[regime]]\n" + &body + "[[regime]]\n" + ONE_REGIME_BODY;
    let model = load_scenario(&text).unwrap();
    assert_eq!(model.breakpoints(), vec![0.75]);
    assert_eq!(model.weights(0, 0).q[(0, 0)], 0.3);
    assert_eq!(model.weights(1, 0).q[(0, 0)], 0.6);
    assert_eq!(model.weights(1, 1).q[(0, 0)], 0.3);
    assert_eq!(model.segment_index(0.75), 1);
    let grid = model.grid(0.1).unwrap();
    assert!(grid.nodes().contains(&0.75));
    let sol = solve_all(&model, &grid, &RiccatiOptions::default()).unwrap();
    assert!(sol.min_margin() > 0.0);
}

#[test]
fn homogeneous_variant_drops_every_affine_term() {
    let body = ONE_REGIME_BODY.to_string() + "b = 0.2\nsigma = 0.1\nsigmabar = 0.3\nq = 0.4\nrho1 = 0.1\nrho2 = 0.2\ng = 1.0\n";
    let text = header(2, "[[-1.0, 1.0], [2.0, -2.0]]") + "[[regime]]\n" + &body + "[[regime]]\n" + ONE_REGIME_BODY;
    let model = load_scenario(&text).unwrap();
    assert!(!model.is_homogeneous());
    let hom = model.homogeneous_variant();
    assert!(hom.is_homogeneous());
    assert_eq!(hom.xi[0], 0.0);
    assert_eq!(hom.segments[0].weights[0].q, model.segments[0].weights[0].q);
}

#[test]
fn bundled_names() {
    assert!(bundled("example_sec5.toml").is_some());
    assert!(bundled("zero_scenario.toml").is_some());
    assert!(bundled("missing.toml").is_none());
    let zero = load_scenario(bundled("zero_scenario.toml").unwrap()).unwrap();
    assert!(zero.is_homogeneous());
}
