//! Control and disturbance policies.
//!
//! A control policy is evaluated on `(s, α(s), x̂)` only: it never receives `x̃` or
//! the `W̄` increments, so every control built here is adapted to the controller's
//! information by construction. Disturbance policies additionally see `x̃` and must
//! report the split `v = v̂ + ṽ` with `v̂ = E[v | controller information]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gains::{IntervalTable, SaddleGains};

/// Where a policy is being evaluated: time, grid interval with linear weight, regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct At {
    pub s: f64,
    pub k: usize,
    pub w: f64,
    pub regime: usize,
}

/// Matrix gain as a deterministic function of (s, i).
#[derive(Clone, Debug)]
pub enum Gain {
    Zero,
    /// One constant matrix per regime.
    Constant(Vec<DMatrix<f64>>),
    /// Interpolated table scaled by a factor.
    Table { table: Arc<IntervalTable>, scale: f64 },
}

impl Gain {
    #[inline]
    fn apply_acc(&self, at: &At, x: &[f64], out: &mut [f64]) {
        match self {
            Gain::Zero => {}
            Gain::Constant(ms) => {
                let m = &ms[at.regime];
                let (rows, cols) = m.shape();
                let data = m.as_slice();
                for (c, xc) in x.iter().enumerate().take(cols) {
                    for (r, o) in out.iter_mut().enumerate().take(rows) {
                        *o += data[c * rows + r] * xc;
                    }
                }
            }
            Gain::Table { table, scale } => table.apply_acc(at.k, at.w, at.regime, *scale, x, out),
        }
    }

    /// The gain matrix at `at` (`rows × cols` zeros for `Zero`).
    pub fn matrix(&self, at: &At, rows: usize, cols: usize) -> DMatrix<f64> {
        match self {
            Gain::Zero => DMatrix::zeros(rows, cols),
            Gain::Constant(ms) => ms[at.regime].clone(),
            Gain::Table { table, scale } => table_matrix(table, at, *scale),
        }
    }

    fn shape(&self) -> Option<(usize, usize)> {
        match self {
            Gain::Zero => None,
            Gain::Constant(ms) => ms.first().map(|m| m.shape()),
            Gain::Table { table, .. } => Some(table.shape()),
        }
    }

    fn table_intervals(&self) -> Option<usize> {
        match self {
            Gain::Table { table, .. } => Some(table.intervals()),
            _ => None,
        }
    }
}

type SignalFn = Arc<dyn Fn(f64, usize, &mut [f64]) + Send + Sync>;

/// Vector-valued deterministic function of (s, i).
#[derive(Clone)]
pub enum Signal {
    Zero,
    /// One constant vector per regime.
    Constant(Vec<DVector<f64>>),
    /// Interpolated column table scaled by a factor.
    Table { table: Arc<IntervalTable>, scale: f64 },
    /// `amplitude · sin(omega·s + phase)`.
    Sinusoid { amplitude: DVector<f64>, omega: f64, phase: f64 },
    /// `±amplitude`, switching sign every half period (positive first).
    Square { amplitude: DVector<f64>, period: f64 },
    /// `amplitude` on `[start, end)`, zero elsewhere.
    Pulse { amplitude: DVector<f64>, start: f64, end: f64 },
    Sum(Vec<Signal>),
    /// Arbitrary deterministic function; adds its value into the output slice.
    Custom(SignalFn),
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Zero => write!(f, "Zero"),
            Signal::Constant(v) => write!(f, "Constant({v:?})"),
            Signal::Table { scale, .. } => write!(f, "Table(scale = {scale})"),
            Signal::Sinusoid { amplitude, omega, phase } => write!(f, "Sinusoid({amplitude:?}, {omega}, {phase})"),
            Signal::Square { amplitude, period } => write!(f, "Square({amplitude:?}, {period})"),
            Signal::Pulse { amplitude, start, end } => write!(f, "Pulse({amplitude:?}, {start}, {end})"),
            Signal::Sum(v) => write!(f, "Sum({v:?})"),
            Signal::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn add_scaled(out: &mut [f64], v: &DVector<f64>, a: f64) {
    for (o, x) in out.iter_mut().zip(v.iter()) {
        *o += a * x;
    }
}

impl Signal {
    /// Same constant vector in every regime.
    pub fn constant(v: DVector<f64>, regimes: usize) -> Self {
        Signal::Constant(vec![v; regimes])
    }

    #[inline]
    fn add_into(&self, at: &At, out: &mut [f64]) {
        match self {
            Signal::Zero => {}
            Signal::Constant(vs) => add_scaled(out, &vs[at.regime], 1.0),
            Signal::Table { table, scale } => table.add_col(at.k, at.w, at.regime, *scale, out),
            Signal::Sinusoid { amplitude, omega, phase } => add_scaled(out, amplitude, (omega * at.s + phase).sin()),
            Signal::Square { amplitude, period } => {
                let sign = if (at.s / period).rem_euclid(1.0) < 0.5 { 1.0 } else { -1.0 };
                add_scaled(out, amplitude, sign)
            }
            Signal::Pulse { amplitude, start, end } => {
                if at.s >= *start && at.s < *end {
                    add_scaled(out, amplitude, 1.0)
                }
            }
            Signal::Sum(parts) => parts.iter().for_each(|p| p.add_into(at, out)),
            Signal::Custom(f) => f(at.s, at.regime, out),
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            Signal::Zero | Signal::Custom(_) => None,
            Signal::Constant(vs) => vs.first().map(|v| v.len()),
            Signal::Table { table, .. } => Some(table.shape().0),
            Signal::Sinusoid { amplitude, .. } | Signal::Square { amplitude, .. } | Signal::Pulse { amplitude, .. } => {
                Some(amplitude.len())
            }
            Signal::Sum(parts) => parts.iter().find_map(Signal::len),
        }
    }

    fn table_intervals(&self) -> Vec<usize> {
        match self {
            Signal::Table { table, .. } => vec![table.intervals()],
            Signal::Sum(parts) => parts.iter().flat_map(Signal::table_intervals).collect(),
            _ => vec![],
        }
    }

    /// Value at `at` as a fresh vector of length `len`.
    pub fn value(&self, at: &At, len: usize) -> DVector<f64> {
        let mut out = DVector::zeros(len);
        self.add_into(at, out.as_mut_slice());
        out
    }
}

/// Control `u(s) = K(s, α)x̂ + k(s, α)`, or an open-loop signal.
#[derive(Clone, Debug)]
pub enum ControlPolicy {
    Zero,
    /// u = Θ̂₁*x̂ + v₁*
    Saddle(Arc<SaddleGains>),
    LinearFeedback { gain: Gain, offset: Signal },
    OpenLoop(Signal),
}

type StateFeedbackFn = Arc<dyn Fn(f64, usize, &[f64], &mut [f64]) + Send + Sync>;

/// Disturbance policies. All but `StateFeedback` have a closed-form split v = v̂ + ṽ.
#[derive(Clone)]
pub enum DisturbancePolicy {
    Zero,
    /// v = Θ̂₂*x̂ + Θ̃₂*x̃ + v₂*
    Saddle(Arc<SaddleGains>),
    /// v̂ = K̂x̂ + offset, ṽ = K̃x̃.
    LinearFeedback { hat_gain: Gain, tilde_gain: Gain, offset: Signal },
    /// Deterministic signal: v̂ = v, ṽ = 0.
    OpenLoop(Signal),
    /// General feedback on the full state x; its conditional mean given the
    /// controller's information is not available in closed form, so it cannot be simulated.
    StateFeedback(StateFeedbackFn),
}

impl fmt::Debug for DisturbancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisturbancePolicy::Zero => write!(f, "Zero"),
            DisturbancePolicy::Saddle(_) => write!(f, "Saddle"),
            DisturbancePolicy::LinearFeedback { hat_gain, tilde_gain, offset } => {
                write!(f, "LinearFeedback({hat_gain:?}, {tilde_gain:?}, {offset:?})")
            }
            DisturbancePolicy::OpenLoop(s) => write!(f, "OpenLoop({s:?})"),
            DisturbancePolicy::StateFeedback(_) => write!(f, "StateFeedback"),
        }
    }
}

impl ControlPolicy {
    /// Writes u into `u` (overwritten). Only x̂ is visible here.
    #[inline]
    pub fn eval(&self, at: &At, xhat: &[f64], u: &mut [f64]) {
        u.fill(0.0);
        match self {
            ControlPolicy::Zero => {}
            ControlPolicy::Saddle(g) => {
                g.theta_hat1.apply_acc(at.k, at.w, at.regime, 1.0, xhat, u);
                g.v1.add_col(at.k, at.w, at.regime, 1.0, u);
            }
            ControlPolicy::LinearFeedback { gain, offset } => {
                gain.apply_acc(at, xhat, u);
                offset.add_into(at, u);
            }
            ControlPolicy::OpenLoop(sig) => sig.add_into(at, u),
        }
    }

    /// `(K, k)` with `u = K x̂ + k` at `at`.
    pub fn affine(&self, at: &At, m: usize, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            ControlPolicy::Zero => (DMatrix::zeros(m, n), DVector::zeros(m)),
            ControlPolicy::Saddle(g) => (
                table_matrix(&g.theta_hat1, at, 1.0),
                table_column(&g.v1, at, m),
            ),
            ControlPolicy::LinearFeedback { gain, offset } => (gain.matrix(at, m, n), offset.value(at, m)),
            ControlPolicy::OpenLoop(sig) => (DMatrix::zeros(m, n), sig.value(at, m)),
        }
    }

    /// Saddle control with Θ̂₁* scaled by `scale` and `extra` added to the offset.
    pub fn perturbed_saddle(gains: &Arc<SaddleGains>, scale: f64, extra: Signal) -> Self {
        ControlPolicy::LinearFeedback {
            gain: Gain::Table { table: Arc::new(gains.theta_hat1.clone()), scale },
            offset: Signal::Sum(vec![Signal::Table { table: Arc::new(gains.v1.clone()), scale: 1.0 }, extra]),
        }
    }

    pub(crate) fn check(&self, m: usize, n: usize, intervals: usize) -> Result<()> {
        let (gain, offset) = match self {
            ControlPolicy::Zero => return Ok(()),
            ControlPolicy::Saddle(g) => return check_tables(&[g.theta_hat1.intervals(), g.v1.intervals()], intervals),
            ControlPolicy::LinearFeedback { gain, offset } => (Some(gain), offset),
            ControlPolicy::OpenLoop(sig) => (None, sig),
        };
        if let Some(shape) = gain.and_then(Gain::shape) {
            check_shape("control gain", shape, (m, n))?;
        }
        if let Some(len) = offset.len() {
            check_shape("control offset", (len, 1), (m, 1))?;
        }
        let mut tabs = offset.table_intervals();
        tabs.extend(gain.and_then(Gain::table_intervals));
        check_tables(&tabs, intervals)
    }
}

impl DisturbancePolicy {
    /// Writes v̂ and ṽ (overwritten).
    #[inline]
    pub fn eval(&self, at: &At, xhat: &[f64], xtilde: &[f64], vhat: &mut [f64], vtilde: &mut [f64]) {
        vhat.fill(0.0);
        vtilde.fill(0.0);
        match self {
            DisturbancePolicy::Zero => {}
            DisturbancePolicy::Saddle(g) => {
                g.theta_hat2.apply_acc(at.k, at.w, at.regime, 1.0, xhat, vhat);
                g.v2.add_col(at.k, at.w, at.regime, 1.0, vhat);
                g.theta_tilde2.apply_acc(at.k, at.w, at.regime, 1.0, xtilde, vtilde);
            }
            DisturbancePolicy::LinearFeedback { hat_gain, tilde_gain, offset } => {
                hat_gain.apply_acc(at, xhat, vhat);
                offset.add_into(at, vhat);
                tilde_gain.apply_acc(at, xtilde, vtilde);
            }
            DisturbancePolicy::OpenLoop(sig) => sig.add_into(at, vhat),
            DisturbancePolicy::StateFeedback(_) => unreachable!("rejected before simulation"),
        }
    }

    /// `(K̂, K̃, k)` with `v̂ = K̂ x̂ + k`, `ṽ = K̃ x̃` at `at`.
    pub fn affine(&self, at: &At, n_v: usize, n: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let z = || DMatrix::zeros(n_v, n);
        match self {
            DisturbancePolicy::Zero => (z(), z(), DVector::zeros(n_v)),
            DisturbancePolicy::Saddle(g) => (
                table_matrix(&g.theta_hat2, at, 1.0),
                table_matrix(&g.theta_tilde2, at, 1.0),
                table_column(&g.v2, at, n_v),
            ),
            DisturbancePolicy::LinearFeedback { hat_gain, tilde_gain, offset } => {
                (hat_gain.matrix(at, n_v, n), tilde_gain.matrix(at, n_v, n), offset.value(at, n_v))
            }
            DisturbancePolicy::OpenLoop(sig) => (z(), z(), sig.value(at, n_v)),
            DisturbancePolicy::StateFeedback(_) => unreachable!("rejected before simulation"),
        }
    }

    /// Saddle disturbance with Θ̂₂*, Θ̃₂* scaled and `extra` added to the offset.
    pub fn perturbed_saddle(gains: &Arc<SaddleGains>, hat_scale: f64, tilde_scale: f64, extra: Signal) -> Self {
        DisturbancePolicy::LinearFeedback {
            hat_gain: Gain::Table { table: Arc::new(gains.theta_hat2.clone()), scale: hat_scale },
            tilde_gain: Gain::Table { table: Arc::new(gains.theta_tilde2.clone()), scale: tilde_scale },
            offset: Signal::Sum(vec![Signal::Table { table: Arc::new(gains.v2.clone()), scale: 1.0 }, extra]),
        }
    }

    pub(crate) fn check(&self, n_v: usize, n: usize, intervals: usize) -> Result<()> {
        match self {
            DisturbancePolicy::Zero => Ok(()),
            DisturbancePolicy::Saddle(g) => check_tables(
                &[g.theta_hat2.intervals(), g.theta_tilde2.intervals(), g.v2.intervals()],
                intervals,
            ),
            DisturbancePolicy::LinearFeedback { hat_gain, tilde_gain, offset } => {
                for (what, g) in [("disturbance gain on xhat", hat_gain), ("disturbance gain on xtilde", tilde_gain)] {
                    if let Some(shape) = g.shape() {
                        check_shape(what, shape, (n_v, n))?;
                    }
                }
                if let Some(len) = offset.len() {
                    check_shape("disturbance offset", (len, 1), (n_v, 1))?;
                }
                let mut tabs = offset.table_intervals();
                tabs.extend(hat_gain.table_intervals());
                tabs.extend(tilde_gain.table_intervals());
                check_tables(&tabs, intervals)
            }
            DisturbancePolicy::OpenLoop(sig) => {
                if let Some(len) = sig.len() {
                    check_shape("disturbance signal", (len, 1), (n_v, 1))?;
                }
                check_tables(&sig.table_intervals(), intervals)
            }
            DisturbancePolicy::StateFeedback(_) => Err(Error::UnsupportedDisturbance(
                "feedback on the full state has no closed-form conditional mean given (W, alpha)".into(),
            )),
        }
    }
}

fn table_matrix(t: &IntervalTable, at: &At, scale: f64) -> DMatrix<f64> {
    t.eval(at.k, at.w, at.regime) * scale
}

fn table_column(t: &IntervalTable, at: &At, len: usize) -> DVector<f64> {
    let mut out = DVector::zeros(len);
    t.add_col(at.k, at.w, at.regime, 1.0, out.as_mut_slice());
    out
}

fn check_shape(what: &str, found: (usize, usize), expected: (usize, usize)) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what: what.into(), expected: format!("{expected:?}"), found: format!("{found:?}") })
    }
}

fn check_tables(found: &[usize], intervals: usize) -> Result<()> {
    match found.iter().find(|&&k| k != intervals) {
        Some(k) => Err(Error::DimensionMismatch {
            what: "gain table grid".into(),
            expected: format!("{intervals} intervals"),
            found: format!("{k} intervals"),
        }),
        None => Ok(()),
    }
}

/// The saddle outcome pair (u*, v*).
pub fn outcome_policies(gains: &Arc<SaddleGains>) -> (ControlPolicy, DisturbancePolicy) {
    (ControlPolicy::Saddle(gains.clone()), DisturbancePolicy::Saddle(gains.clone()))
}
