//! Problem datum: dynamics coefficients, cost weights, regime generator, horizon and γ.
//!
//! Time-varying data is piecewise constant: the horizon is cut into segments and
//! every coefficient is constant on each segment.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{asymmetry, block_diag, eig_range, hstack, stack, stack_vec, SymSolver};

/// Default lower bound for λ_min of the control/disturbance weight R.
pub const DEFAULT_DELTA: f64 = 1e-8;
/// Tolerance on λ_min for semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub n_v: usize,
    pub d: usize,
    pub horizon: f64,
}

impl Dims {
    pub fn new(n: usize, m: usize, n_v: usize, d: usize, horizon: f64) -> Result<Self> {
        if n == 0 || m == 0 || n_v == 0 || d == 0 {
            return Err(Error::Validation("all dimensions must be >= 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { n, m, n_v, d, horizon })
    }
}

/// Transition intensities of the regime chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    lambda: DMatrix<f64>,
}

impl Generator {
    /// Accepts a matrix with positive off-diagonals whose rows sum to zero up to
    /// rounding; the diagonal is then reset so that row sums are exactly zero.
    pub fn new(lambda: DMatrix<f64>) -> Result<Self> {
        let d = lambda.nrows();
        if lambda.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "generator".into(),
                expected: format!("{d}x{d}"),
                found: format!("{}x{}", d, lambda.ncols()),
            });
        }
        if d < 2 {
            return Err(Error::Validation(
                "generator needs at least two regimes (a one-state chain has λ_11 = 0)".into(),
            ));
        }
        let mut lambda = lambda;
        for i in 0..d {
            let mut off = 0.0;
            for j in 0..d {
                if i != j {
                    let l = lambda[(i, j)];
                    if !(l > 0.0 && l.is_finite()) {
                        return Err(Error::Validation(format!(
                            "generator entry ({},{}) = {l} must be strictly positive",
                            i + 1,
                            j + 1
                        )));
                    }
                    off += l;
                }
            }
            let diag = lambda[(i, i)];
            if !(diag < 0.0) || (diag + off).abs() > 1e-9 * off.max(1.0) {
                return Err(Error::Validation(format!(
                    "generator row {} does not sum to zero (sum = {:e})",
                    i + 1,
                    diag + off
                )));
            }
            // Summing in a fixed order keeps the row sum at exactly zero in floating point
            // for the common case; residual rounding is far below 1e-12.
            lambda[(i, i)] = -off;
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn d(&self) -> usize {
        self.lambda.nrows()
    }

    /// Total jump rate out of regime `i`, |λ_ii|.
    pub fn rate(&self, i: usize) -> f64 {
        -self.lambda[(i, i)]
    }

    pub fn max_row_sum(&self) -> f64 {
        self.lambda.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }
}

/// State-equation coefficients of one regime on one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeCoeffs {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub cbar: DMatrix<f64>,
    pub d1bar: DMatrix<f64>,
    pub d2bar: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: DVector<f64>,
    pub sigmabar: DVector<f64>,
}

impl RegimeCoeffs {
    pub fn zeros(dims: &Dims) -> Self {
        let (n, m, k) = (dims.n, dims.m, dims.n_v);
        Self {
            a: DMatrix::zeros(n, n),
            b1: DMatrix::zeros(n, m),
            b2: DMatrix::zeros(n, k),
            c: DMatrix::zeros(n, n),
            d1: DMatrix::zeros(n, m),
            d2: DMatrix::zeros(n, k),
            cbar: DMatrix::zeros(n, n),
            d1bar: DMatrix::zeros(n, m),
            d2bar: DMatrix::zeros(n, k),
            b: DVector::zeros(n),
            sigma: DVector::zeros(n),
            sigmabar: DVector::zeros(n),
        }
    }

    fn matrices(&self) -> [(&'static str, &DMatrix<f64>, Side); 9] {
        [
            ("A", &self.a, Side::N),
            ("B1", &self.b1, Side::M),
            ("B2", &self.b2, Side::V),
            ("C", &self.c, Side::N),
            ("D1", &self.d1, Side::M),
            ("D2", &self.d2, Side::V),
            ("Cbar", &self.cbar, Side::N),
            ("D1bar", &self.d1bar, Side::M),
            ("D2bar", &self.d2bar, Side::V),
        ]
    }
}

/// Running-cost weights of one regime on one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeWeights {
    pub q: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub rho1: DVector<f64>,
    pub rho2: DVector<f64>,
}

impl RegimeWeights {
    pub fn zeros(dims: &Dims) -> Self {
        let (n, m, k) = (dims.n, dims.m, dims.n_v);
        Self {
            q: DMatrix::zeros(n, n),
            r1: DMatrix::zeros(m, m),
            r2: DMatrix::zeros(k, k),
            s1: DMatrix::zeros(m, n),
            s2: DMatrix::zeros(k, n),
            q_lin: DVector::zeros(n),
            rho1: DVector::zeros(m),
            rho2: DVector::zeros(k),
        }
    }
}

/// Terminal weights G, g of one regime.
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    pub g: DMatrix<f64>,
    pub g_lin: DVector<f64>,
}

impl Terminal {
    pub fn zeros(dims: &Dims) -> Self {
        Self { g: DMatrix::zeros(dims.n, dims.n), g_lin: DVector::zeros(dims.n) }
    }
}

/// A time interval `[start, end)` on which all data is constant.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub coeffs: Vec<RegimeCoeffs>,
    pub weights: Vec<RegimeWeights>,
}

#[derive(Clone, Debug)]
pub struct GameModel {
    pub dims: Dims,
    pub generator: Generator,
    /// Consecutive segments covering `[0, T]`.
    pub segments: Vec<Segment>,
    pub terminal: Vec<Terminal>,
    pub gamma: f64,
    pub xi: DVector<f64>,
    /// Zero-based index of the initial regime.
    pub initial_regime: usize,
    pub initial_time: f64,
    /// Lower bound for λ_min(diag(R1, R2)).
    pub delta: f64,
}

/// Stacked notation at a fixed (s, i): B = [B1 B2], D = [D1 D2], D̄ = [D̄1 D̄2],
/// R_γ = diag(R1, R2 − γ²I), S = [S1; S2], ρ = [ρ1; ρ2].
#[derive(Clone, Debug, PartialEq)]
pub struct StackedCoeffs {
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dbar: DMatrix<f64>,
    pub r_gamma: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub rho: DVector<f64>,
}

impl GameModel {
    /// Model whose coefficients are constant over the whole horizon.
    pub fn constant(
        dims: Dims,
        generator: Generator,
        coeffs: Vec<RegimeCoeffs>,
        weights: Vec<RegimeWeights>,
        terminal: Vec<Terminal>,
        gamma: f64,
    ) -> Self {
        let n = dims.n;
        let horizon = dims.horizon;
        Self {
            dims,
            generator,
            segments: vec![Segment { start: 0.0, end: horizon, coeffs, weights }],
            terminal,
            gamma,
            xi: DVector::zeros(n),
            initial_regime: 0,
            initial_time: 0.0,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dims.horizon
    }

    pub fn n_regimes(&self) -> usize {
        self.dims.d
    }

    /// Interior segment boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// Index of the segment containing `s` (right-continuous; `s = T` maps to the last one).
    pub fn segment_index(&self, s: f64) -> usize {
        let last = self.segments.len() - 1;
        self.segments[..last].iter().position(|seg| s < seg.end).unwrap_or(last)
    }

    pub fn coeffs(&self, segment: usize, i: usize) -> &RegimeCoeffs {
        &self.segments[segment].coeffs[i]
    }

    pub fn weights(&self, segment: usize, i: usize) -> &RegimeWeights {
        &self.segments[segment].weights[i]
    }

    fn check_time_regime(&self, s: f64, i: usize) -> Result<()> {
        if !(0.0..=self.horizon()).contains(&s) {
            return Err(Error::OutOfRange { what: "time", detail: format!("s = {s} not in [0, {}]", self.horizon()) });
        }
        if i >= self.n_regimes() {
            return Err(Error::OutOfRange {
                what: "regime",
                detail: format!("regime {} not in 1..={}", i + 1, self.n_regimes()),
            });
        }
        Ok(())
    }

    pub fn coeffs_at(&self, s: f64, i: usize) -> Result<(&RegimeCoeffs, &RegimeWeights)> {
        self.check_time_regime(s, i)?;
        let k = self.segment_index(s);
        Ok((self.coeffs(k, i), self.weights(k, i)))
    }

    pub fn stacked_views(&self, s: f64, i: usize) -> Result<StackedCoeffs> {
        let (c, w) = self.coeffs_at(s, i)?;
        Ok(stacked(c, w, self.gamma))
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    /// Same model with every inhomogeneous term and the initial state set to zero, started at t = 0.
    pub fn homogeneous_variant(&self) -> Self {
        let mut out = self.clone();
        for seg in &mut out.segments {
            for c in &mut seg.coeffs {
                c.b.fill(0.0);
                c.sigma.fill(0.0);
                c.sigmabar.fill(0.0);
            }
            for w in &mut seg.weights {
                w.q_lin.fill(0.0);
                w.rho1.fill(0.0);
                w.rho2.fill(0.0);
            }
        }
        for t in &mut out.terminal {
            t.g_lin.fill(0.0);
        }
        out.xi.fill(0.0);
        out.initial_time = 0.0;
        out
    }

    pub fn is_homogeneous(&self) -> bool {
        let zero = |v: &DVector<f64>| v.iter().all(|x| *x == 0.0);
        self.segments.iter().all(|seg| {
            seg.coeffs.iter().all(|c| zero(&c.b) && zero(&c.sigma) && zero(&c.sigmabar))
                && seg.weights.iter().all(|w| zero(&w.q_lin) && zero(&w.rho1) && zero(&w.rho2))
        }) && self.terminal.iter().all(|t| zero(&t.g_lin))
    }

    /// Uniform grid on `[initial_time, T]` with all segment boundaries inserted.
    pub fn grid(&self, step: f64) -> Result<TimeGrid> {
        TimeGrid::new(self.initial_time, self.horizon(), step, &self.breakpoints())
    }
}

pub fn stacked(c: &RegimeCoeffs, w: &RegimeWeights, gamma: f64) -> StackedCoeffs {
    let k = w.r2.nrows();
    let r2g = &w.r2 - DMatrix::identity(k, k) * (gamma * gamma);
    StackedCoeffs {
        b: hstack(&c.b1, &c.b2),
        d: hstack(&c.d1, &c.d2),
        dbar: hstack(&c.d1bar, &c.d2bar),
        r_gamma: block_diag(&w.r1, &r2g),
        s: stack(&w.s1, &w.s2),
        rho: stack_vec(&w.rho1, &w.rho2),
    }
}

#[derive(Clone, Copy, Debug)]
enum Side {
    N,
    M,
    V,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub regime: usize,
    pub time: f64,
    pub matrix: String,
    pub eigenvalue: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "[{}] {}", if c.passed { "ok" } else { "FAIL" }, c.name)?;
            if !c.detail.is_empty() {
                write!(f, ": {}", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub const CHECK_DIMS: &str = "dimensions";
pub const CHECK_GENERATOR: &str = "generator";
pub const CHECK_SEGMENTS: &str = "segments cover [0, T]";
pub const CHECK_SHAPES: &str = "coefficient shapes";
pub const CHECK_SYMMETRY: &str = "symmetric weights";
pub const CHECK_INTEGRABILITY: &str = "(H1)-(H2) integrability";
pub const CHECK_G_PSD: &str = "(H3) G >= 0";
pub const CHECK_R_PD: &str = "(H3) R >> 0";
pub const CHECK_Q_SCHUR: &str = "(H3) Q - S'R^-1 S >= 0";
pub const CHECK_GAMMA: &str = "gamma > 0";
pub const CHECK_INITIAL: &str = "initial data";

struct Checker {
    checks: Vec<Check>,
}

impl Checker {
    fn push(&mut self, name: &'static str, result: std::result::Result<String, (String, Option<Violation>)>) {
        let check = match result {
            Ok(detail) => Check { name, passed: true, detail, violation: None },
            Err((detail, violation)) => Check { name, passed: false, detail, violation },
        };
        self.checks.push(check);
    }
}

/// Checks the standing assumptions. Never fails; the report lists every violation found.
pub fn validate(model: &GameModel) -> ValidationReport {
    let mut ck = Checker { checks: Vec::new() };
    let dims = &model.dims;

    ck.push(
        CHECK_DIMS,
        if dims.n >= 1 && dims.m >= 1 && dims.n_v >= 1 && dims.d >= 1 && dims.horizon > 0.0 {
            Ok(String::new())
        } else {
            Err((format!("{dims:?}"), None))
        },
    );

    let lam = model.generator.lambda();
    let gen_ok = lam.nrows() == dims.d
        && lam.ncols() == dims.d
        && dims.d >= 2
        && (0..dims.d).all(|i| lam[(i, i)] < 0.0 && (0..dims.d).all(|j| i == j || lam[(i, j)] > 0.0))
        && model.generator.max_row_sum() <= 1e-12 * lam.amax().max(1.0);
    ck.push(
        CHECK_GENERATOR,
        if gen_ok { Ok(String::new()) } else { Err(("generator invariants violated".into(), None)) },
    );

    let covered = !model.segments.is_empty()
        && model.segments[0].start == 0.0
        && model.segments.last().unwrap().end == dims.horizon
        && model.segments.windows(2).all(|w| w[0].end == w[1].start && w[0].start < w[0].end)
        && model.segments.iter().all(|s| s.start < s.end);
    ck.push(
        CHECK_SEGMENTS,
        if covered { Ok(format!("{} segment(s)", model.segments.len())) } else { Err(("segments do not tile [0, T]".into(), None)) },
    );

    let shapes = shape_errors(model);
    let shapes_ok = shapes.is_empty();
    ck.push(CHECK_SHAPES, if shapes_ok { Ok(String::new()) } else { Err((shapes.join("; "), None)) });

    ck.push(CHECK_INTEGRABILITY, Ok("satisfied by construction (piecewise-constant data)".into()));

    if !shapes_ok {
        ck.push(CHECK_GAMMA, gamma_check(model));
        ck.push(CHECK_INITIAL, initial_check(model));
        return ValidationReport { checks: ck.checks };
    }

    // Symmetry.
    let mut sym_err = None;
    for seg in &model.segments {
        for (i, w) in seg.weights.iter().enumerate() {
            for (name, m) in [("Q", &w.q), ("R1", &w.r1), ("R2", &w.r2)] {
                if asymmetry(m) > 1e-12 * m.amax().max(1.0) && sym_err.is_none() {
                    sym_err = Some(Violation { regime: i, time: seg.start, matrix: name.into(), eigenvalue: None });
                }
            }
        }
    }
    for (i, t) in model.terminal.iter().enumerate() {
        if asymmetry(&t.g) > 1e-12 * t.g.amax().max(1.0) && sym_err.is_none() {
            sym_err = Some(Violation { regime: i, time: dims.horizon, matrix: "G".into(), eigenvalue: None });
        }
    }
    ck.push(
        CHECK_SYMMETRY,
        match sym_err {
            None => Ok(String::new()),
            Some(v) => Err((format!("{} not symmetric in regime {}", v.matrix, v.regime + 1), Some(v))),
        },
    );

    // G ⪰ 0.
    let mut g_err = None;
    for (i, t) in model.terminal.iter().enumerate() {
        let (lo, _) = eig_range(&t.g);
        if lo < -PSD_TOL && g_err.is_none() {
            g_err = Some(Violation { regime: i, time: dims.horizon, matrix: "G".into(), eigenvalue: Some(lo) });
        }
    }
    ck.push(CHECK_G_PSD, violation_result(g_err, "G"));

    // R ≫ 0 and Q − SᵀR⁻¹S ⪰ 0.
    let mut r_err = None;
    let mut q_err = None;
    for seg in &model.segments {
        for (i, w) in seg.weights.iter().enumerate() {
            let r = block_diag(&w.r1, &w.r2);
            let (lo, _) = eig_range(&r);
            if lo < model.delta {
                if r_err.is_none() {
                    r_err = Some(Violation { regime: i, time: seg.start, matrix: "diag(R1, R2)".into(), eigenvalue: Some(lo) });
                }
                continue;
            }
            let s = stack(&w.s1, &w.s2);
            let solver = SymSolver::new(&r).expect("positive definite");
            let schur = &w.q - s.transpose() * solver.solve(&s);
            let (lo, _) = eig_range(&schur);
            if lo < -PSD_TOL && q_err.is_none() {
                q_err = Some(Violation { regime: i, time: seg.start, matrix: "Q - S'R^-1 S".into(), eigenvalue: Some(lo) });
            }
        }
    }
    ck.push(CHECK_R_PD, violation_result(r_err, "diag(R1, R2)"));
    ck.push(CHECK_Q_SCHUR, violation_result(q_err, "Q - S'R^-1 S"));
    ck.push(CHECK_GAMMA, gamma_check(model));
    ck.push(CHECK_INITIAL, initial_check(model));
    ValidationReport { checks: ck.checks }
}

fn violation_result(v: Option<Violation>, what: &str) -> std::result::Result<String, (String, Option<Violation>)> {
    match v {
        None => Ok(String::new()),
        Some(v) => Err((
            format!(
                "{what} violated in regime {} at s = {} (eigenvalue {:e})",
                v.regime + 1,
                v.time,
                v.eigenvalue.unwrap_or(f64::NAN)
            ),
            Some(v),
        )),
    }
}

fn gamma_check(model: &GameModel) -> std::result::Result<String, (String, Option<Violation>)> {
    if model.gamma > 0.0 && model.gamma.is_finite() {
        Ok(String::new())
    } else {
        Err((format!("gamma = {}", model.gamma), None))
    }
}

fn initial_check(model: &GameModel) -> std::result::Result<String, (String, Option<Violation>)> {
    let d = &model.dims;
    if model.initial_regime >= d.d {
        return Err((format!("initial regime {} not in 1..={}", model.initial_regime + 1, d.d), None));
    }
    if !(model.initial_time >= 0.0 && model.initial_time < d.horizon) {
        return Err((format!("initial time {} not in [0, T)", model.initial_time), None));
    }
    if model.xi.len() != d.n {
        return Err((format!("xi has length {}, expected {}", model.xi.len(), d.n), None));
    }
    Ok(String::new())
}

fn shape_errors(model: &GameModel) -> Vec<String> {
    let d = &model.dims;
    let mut errs = Vec::new();
    let cols = |side: Side| match side {
        Side::N => d.n,
        Side::M => d.m,
        Side::V => d.n_v,
    };
    if model.terminal.len() != d.d {
        errs.push(format!("{} terminal blocks for {} regimes", model.terminal.len(), d.d));
    }
    for seg in &model.segments {
        if seg.coeffs.len() != d.d || seg.weights.len() != d.d {
            errs.push(format!("segment at s = {} has wrong regime count", seg.start));
            continue;
        }
        for (i, c) in seg.coeffs.iter().enumerate() {
            for (name, m, side) in c.matrices() {
                if m.shape() != (d.n, cols(side)) {
                    errs.push(format!("{name} (regime {}) is {:?}, expected {:?}", i + 1, m.shape(), (d.n, cols(side))));
                }
            }
            for (name, v) in [("b", &c.b), ("sigma", &c.sigma), ("sigmabar", &c.sigmabar)] {
                if v.len() != d.n {
                    errs.push(format!("{name} (regime {}) has length {}", i + 1, v.len()));
                }
            }
        }
        for (i, w) in seg.weights.iter().enumerate() {
            let want = [
                ("Q", &w.q, (d.n, d.n)),
                ("R1", &w.r1, (d.m, d.m)),
                ("R2", &w.r2, (d.n_v, d.n_v)),
                ("S1", &w.s1, (d.m, d.n)),
                ("S2", &w.s2, (d.n_v, d.n)),
            ];
            for (name, m, shape) in want {
                if m.shape() != shape {
                    errs.push(format!("{name} (regime {}) is {:?}, expected {:?}", i + 1, m.shape(), shape));
                }
            }
            for (name, v, len) in [("q", &w.q_lin, d.n), ("rho1", &w.rho1, d.m), ("rho2", &w.rho2, d.n_v)] {
                if v.len() != len {
                    errs.push(format!("{name} (regime {}) has length {}, expected {len}", i + 1, v.len()));
                }
            }
        }
    }
    for (i, t) in model.terminal.iter().enumerate() {
        if t.g.shape() != (d.n, d.n) || t.g_lin.len() != d.n {
            errs.push(format!("terminal weights of regime {} have wrong shape", i + 1));
        }
    }
    errs
}
