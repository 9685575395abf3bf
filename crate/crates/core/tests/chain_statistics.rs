use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regime_hinf::chain::{sample_path, stationary_distribution, transition_matrix};
use regime_hinf::eval::mean_stderr;
use regime_hinf::grid::TimeGrid;
use regime_hinf::model::Generator;
use regime_hinf::scenario::example_model;

const SAMPLES: usize = 100_000;

fn example_generator() -> Generator {
    example_model().generator
}

fn three_state() -> Generator {
    Generator::new(DMatrix::from_row_slice(3, 3, &[-1.5, 1.0, 0.5, 0.2, -0.7, 0.5, 2.0, 1.0, -3.0])).unwrap()
}

fn holding_time_mean(g: &Generator, i: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a first holding time beyond 40 mean lifetimes has probability e^-40
    let horizon = 40.0 / g.rate(i);
    let total: f64 = (0..SAMPLES)
        .map(|_| sample_path(g, i, 0.0, horizon, &mut rng).jump_times[0])
        .sum();
    total / SAMPLES as f64
}

/// Largest |frequency − exp(ΛΔt)_ij| in units of the binomial standard error.
fn one_step_z(g: &Generator, dt: f64, seed: u64) -> f64 {
    let d = g.d();
    let p = transition_matrix(g, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let mut counts = vec![0usize; d];
        for _ in 0..SAMPLES {
            let path = sample_path(g, i, 0.0, dt, &mut rng);
            counts[*path.states.last().unwrap()] += 1;
        }
        for j in 0..d {
            let freq = counts[j] as f64 / SAMPLES as f64;
            let se = (p[(i, j)] * (1.0 - p[(i, j)]) / SAMPLES as f64).sqrt();
            worst = worst.max((freq - p[(i, j)]).abs() / se);
        }
    }
    worst
}

#[test]
fn holding_times_match_exponential_means() {
    for (g, seed) in [(example_generator(), 1), (three_state(), 2)] {
        for i in 0..g.d() {
            let mean = holding_time_mean(&g, i, seed + 10 * i as u64);
            let expected = 1.0 / g.rate(i);
            assert!((mean - expected).abs() <= 0.02 * expected, "regime {i}: {mean} vs {expected}");
        }
    }
}

#[test]
fn one_step_frequencies_match_transition_matrix() {
    assert!(one_step_z(&example_generator(), 0.1, 3) <= 3.0);
    assert!(one_step_z(&three_state(), 0.25, 4) <= 3.0);
}

#[test]
fn transition_matrix_closed_form_entry() {
    let p = transition_matrix(&example_generator(), 0.1);
    assert!((p[(0, 0)] - (2.0 + (-0.3f64).exp()) / 3.0).abs() < 1e-14);
}

#[test]
fn long_run_occupancy_matches_stationary_distribution() {
    let g = example_generator();
    let pi = stationary_distribution(&g);
    assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let path = sample_path(&g, 0, 0.0, 10_000.0, &mut rng);
    let share = path.occupancy()[0] / 10_000.0;
    assert!((share - 2.0 / 3.0).abs() <= 0.02, "{share}");
}

#[test]
fn grid_node_fraction_in_first_regime() {
    let g = example_generator();
    let grid = TimeGrid::new(0.0, 3.5, 0.01, &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut hits, mut total) = (0usize, 0usize);
    for _ in 0..2000 {
        // start from the stationary law so every node is stationary
        let i0 = usize::from(rand::Rng::random::<f64>(&mut rng) >= 2.0 / 3.0);
        let path = sample_path(&g, i0, 0.0, 3.5, &mut rng);
        for &s in grid.nodes() {
            hits += usize::from(path.regime_at(s, false).unwrap() == 0);
            total += 1;
        }
    }
    let share = hits as f64 / total as f64;
    assert!((share - 2.0 / 3.0).abs() <= 0.02, "{share}");
}

#[test]
fn compensated_counts_are_centred() {
    let g = three_state();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let paths: Vec<_> = (0..10_000).map(|_| sample_path(&g, 0, 0.0, 2.0, &mut rng)).collect();
    let comp: Vec<DMatrix<f64>> = paths.iter().map(|p| p.compensated_counts(&g)).collect();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let xs: Vec<f64> = comp.iter().map(|c| c[(i, j)]).collect();
            let (mean, se) = mean_stderr(&xs);
            assert!(mean.abs() <= 3.0 * se, "({i},{j}): {mean} ± {se}");
        }
    }
}

#[test]
fn paths_are_consistent() {
    let g = three_state();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let p = sample_path(&g, 2, 1.0, 4.0, &mut rng);
        assert_eq!(p.states.len(), p.jumps() + 1);
        assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(p.jump_times.iter().all(|&t| t > 1.0 && t < 4.0));
        assert!(p.states.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(p.counts.iter().map(|&c| c as usize).sum::<usize>(), p.jumps());
        assert!((p.occupancy().sum() - 3.0).abs() < 1e-12);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3 + 2 * p.jumps());
    }
}
