#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regime_hinf::model::{Dims, GameModel, Generator, RegimeCoeffs, RegimeWeights, Terminal};

/// Scalar (n = m = n_v = 1) coefficients of one regime.
#[derive(Clone, Copy, Debug)]
pub struct Scalar {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
    pub d1: f64,
    pub d2: f64,
    pub cbar: f64,
    pub d1bar: f64,
    pub d2bar: f64,
    pub b: f64,
    pub sigma: f64,
    pub sigmabar: f64,
    pub q: f64,
    pub r1: f64,
    pub r2: f64,
    pub s1: f64,
    pub s2: f64,
    pub q_lin: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub g: f64,
    pub g_lin: f64,
}

impl Default for Scalar {
    fn default() -> Self {
        Self {
            a: 0.0,
            b1: 0.0,
            b2: 0.0,
            c: 0.0,
            d1: 0.0,
            d2: 0.0,
            cbar: 0.0,
            d1bar: 0.0,
            d2bar: 0.0,
            b: 0.0,
            sigma: 0.0,
            sigmabar: 0.0,
            q: 0.0,
            r1: 1.0,
            r2: 0.1,
            s1: 0.0,
            s2: 0.0,
            q_lin: 0.0,
            rho1: 0.0,
            rho2: 0.0,
            g: 0.0,
            g_lin: 0.0,
        }
    }
}

fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

pub fn scalar_game(regimes: &[Scalar], lambda: DMatrix<f64>, horizon: f64, gamma: f64, xi: f64) -> GameModel {
    let d = regimes.len();
    let dims = Dims::new(1, 1, 1, d, horizon).unwrap();
    let coeffs = regimes
        .iter()
        .map(|r| RegimeCoeffs {
            a: m1(r.a),
            b1: m1(r.b1),
            b2: m1(r.b2),
            c: m1(r.c),
            d1: m1(r.d1),
            d2: m1(r.d2),
            cbar: m1(r.cbar),
            d1bar: m1(r.d1bar),
            d2bar: m1(r.d2bar),
            b: v1(r.b),
            sigma: v1(r.sigma),
            sigmabar: v1(r.sigmabar),
        })
        .collect();
    let weights = regimes
        .iter()
        .map(|r| RegimeWeights {
            q: m1(r.q),
            r1: m1(r.r1),
            r2: m1(r.r2),
            s1: m1(r.s1),
            s2: m1(r.s2),
            q_lin: v1(r.q_lin),
            rho1: v1(r.rho1),
            rho2: v1(r.rho2),
        })
        .collect();
    let terminal = regimes.iter().map(|r| Terminal { g: m1(r.g), g_lin: v1(r.g_lin) }).collect();
    let mut model = GameModel::constant(dims, Generator::new(lambda).unwrap(), coeffs, weights, terminal, gamma);
    model.xi = v1(xi);
    model
}

pub fn two_state(l12: f64, l21: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-l12, l12, l21, -l21])
}

/// Coefficients of the single-regime LQ problem: every disturbance channel and the
/// disturbance cross weight are zero.
pub fn lq_regime() -> Scalar {
    Scalar {
        a: 0.3,
        b1: 1.0,
        c: 0.2,
        d1: 0.3,
        cbar: 0.25,
        d1bar: 0.15,
        q: 1.0,
        r1: 0.5,
        r2: 0.1,
        s1: 0.1,
        g: 0.5,
        ..Scalar::default()
    }
}

/// Single regime represented by two identical regimes (a chain needs two states).
pub fn lq_model(gamma: f64) -> GameModel {
    let r = lq_regime();
    scalar_game(&[r, r], two_state(1.0, 2.0), 1.0, gamma, 1.0)
}

/// Scalar two-regime game with every inhomogeneous term nonzero, drawn from `seed`.
pub fn random_inhomogeneous(seed: u64) -> GameModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut regimes = Vec::new();
    for _ in 0..2 {
        regimes.push(Scalar {
            a: draw(-0.5, 0.5),
            b1: draw(-0.5, 0.5),
            b2: draw(-0.5, 0.5),
            c: draw(-0.3, 0.3),
            d1: draw(-0.3, 0.3),
            d2: draw(-0.3, 0.3),
            cbar: draw(-0.3, 0.3),
            d1bar: draw(-0.3, 0.3),
            d2bar: draw(-0.3, 0.3),
            b: draw(-0.5, 0.5),
            sigma: draw(-0.5, 0.5),
            sigmabar: draw(-0.5, 0.5),
            q: draw(0.2, 1.0),
            r1: draw(0.3, 1.0),
            r2: draw(0.1, 0.5),
            s1: draw(-0.1, 0.1),
            s2: draw(-0.1, 0.1),
            q_lin: draw(-0.5, 0.5),
            rho1: draw(-0.5, 0.5),
            rho2: draw(-0.5, 0.5),
            g: draw(0.0, 0.5),
            g_lin: draw(-0.5, 0.5),
        });
    }
    let lambda = two_state(draw(0.5, 2.0), draw(0.5, 2.0));
    scalar_game(&regimes, lambda, 1.0, 2.0, draw(-1.0, 1.0))
}

/// Largest |a − b| / max(1, |b|) over matching entries.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
