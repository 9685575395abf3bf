//! Monte-Carlo cost estimates, the closed-form game value, saddle-point and H∞ checks,
//! and the solvability threshold in γ.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gains::{synthesize, SaddleGains};
use crate::grid::TimeGrid;
use crate::linalg::BlockFactor;
use crate::model::{GameModel, Generator};
use crate::policy::{ControlPolicy, DisturbancePolicy, Gain, Signal};
use crate::riccati::{blocks_with, solve_all, RiccatiOptions, RiccatiSolution};
use rayon::prelude::*;

use crate::sim::{PathCost, PathDraw, Simulator, Snapshot};

/// Standard-error multiple used by every Monte-Carlo verdict.
pub const SIGMA_RULE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub gamma_used: f64,
    /// Estimated on a model without inhomogeneous terms (J⁰ rather than J).
    pub homogeneous: bool,
}

impl fmt::Display for CostEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6} (n = {}, γ = {})", self.mean, self.stderr, self.n_paths, self.gamma_used)
    }
}

/// Sample mean and standard error, summed in index order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn estimate(xs: &[f64], gamma: f64, homogeneous: bool) -> CostEstimate {
    let (mean, stderr) = mean_stderr(xs);
    CostEstimate { mean, stderr, n_paths: xs.len(), gamma_used: gamma, homogeneous }
}

/// Per-path costs of one policy pair on the seeded path stream.
pub fn cost_samples(
    model: &GameModel,
    grid: &TimeGrid,
    control: &ControlPolicy,
    disturbance: &DisturbancePolicy,
    gamma: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathCost>> {
    check_paths(n_paths)?;
    let sim = Simulator::new(model, grid)?;
    Ok(sim.batch_costs(&[(control.clone(), disturbance.clone())], gamma, n_paths, seed)?.remove(0))
}

/// Monte-Carlo estimate of J_γ, or of J when `gamma` is `None`.
pub fn cost_mc(
    model: &GameModel,
    grid: &TimeGrid,
    control: &ControlPolicy,
    disturbance: &DisturbancePolicy,
    gamma: Option<f64>,
    n_paths: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let g = gamma.unwrap_or(0.0);
    let costs = cost_samples(model, grid, control, disturbance, g, n_paths, seed)?;
    let xs: Vec<f64> = costs.iter().map(|c| if gamma.is_some() { c.j_gamma } else { c.j }).collect();
    Ok(estimate(&xs, g, model.is_homogeneous()))
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::OutOfRange { what: "path count", detail: "at least one path is required".into() });
    }
    Ok(())
}

/// Mean time integrals ∫|x|², ∫|u|², ∫|v|² along the closed loop, with standard errors
/// (trapezoid over step boundaries).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Intensity {
    pub n_paths: usize,
    pub state: f64,
    pub state_stderr: f64,
    pub control: f64,
    pub control_stderr: f64,
    pub disturbance: f64,
    pub disturbance_stderr: f64,
}

pub fn intensity_mc(
    model: &GameModel,
    grid: &TimeGrid,
    control: &ControlPolicy,
    disturbance: &DisturbancePolicy,
    n_paths: usize,
    seed: u64,
) -> Result<Intensity> {
    check_paths(n_paths)?;
    let sim = Simulator::new(model, grid)?;
    let prepared = sim.prepare(&[(control.clone(), disturbance.clone())])?;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let per_path: Vec<[f64; 3]> = (0..n_paths)
        .into_par_iter()
        .map_init(PathDraw::default, |draw, p| {
            sim.draw(seed, p as u64, draw);
            let mut acc = [0.0; 3];
            let mut prev: Option<(f64, [f64; 3])> = None;
            let mut observe = |_: usize, s: Snapshot<'_>| {
                let x: Vec<f64> = s.xhat.iter().zip(s.xtilde).map(|(a, b)| a + b).collect();
                let v: Vec<f64> = s.vhat.iter().zip(s.vtilde).map(|(a, b)| a + b).collect();
                let cur = [sq(&x), sq(s.u), sq(&v)];
                if let Some((t, last)) = prev {
                    for c in 0..3 {
                        acc[c] += 0.5 * (s.s - t) * (last[c] + cur[c]);
                    }
                }
                prev = Some((s.s, cur));
            };
            prepared.run(draw, model.gamma, &mut [PathCost::default()], Some(&mut observe))?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let stat = |c: usize| mean_stderr(&per_path.iter().map(|a| a[c]).collect::<Vec<_>>());
    let ((state, state_stderr), (control, control_stderr), (dist, dist_stderr)) = (stat(0), stat(1), stat(2));
    Ok(Intensity {
        n_paths,
        state,
        state_stderr,
        control,
        control_stderr,
        disturbance: dist,
        disturbance_stderr: dist_stderr,
    })
}

/// Regime occupation probabilities p(s_k) on the grid from ṗ = Λᵀp, p(t) = e_i (RK4).
pub fn occupation_probabilities(generator: &Generator, grid: &TimeGrid, initial: usize) -> Vec<DVector<f64>> {
    let lt = generator.lambda().transpose();
    let mut p = DVector::zeros(generator.d());
    p[initial] = 1.0;
    let mut out = Vec::with_capacity(grid.nodes().len());
    out.push(p.clone());
    for k in 0..grid.intervals() {
        let h = grid.width(k);
        let k1 = &lt * &p;
        let k2 = &lt * (&p + &k1 * (h / 2.0));
        let k3 = &lt * (&p + &k2 * (h / 2.0));
        let k4 = &lt * (&p + &k3 * h);
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(p.clone());
    }
    out
}

/// Closed-form value V_γ(t, ξ, i) for deterministic ξ:
/// ⟨P ξ, ξ⟩ + 2⟨η, ξ⟩ + Σ_j ∫ p_j [σᵀPσ + σ̄ᵀΠσ̄ + 2ηᵀb − ΨᵀR̂⁻¹Ψ] ds.
pub fn value_formula(sol: &RiccatiSolution, model: &GameModel) -> Result<f64> {
    let grid = &sol.grid;
    let i0 = model.initial_regime;
    let xi = &model.xi;
    let mut value = (&sol.p[0][i0] * xi).dot(xi) + 2.0 * sol.eta[0][i0].dot(xi);
    if model.is_homogeneous() {
        return Ok(value);
    }
    let probs = occupation_probabilities(&model.generator, grid, i0);
    let m = model.dims.m;
    let integrand = |node: usize, seg: usize, j: usize| -> Result<f64> {
        let (c, w) = (model.coeffs(seg, j), model.weights(seg, j));
        let (pi, p, eta) = (&sol.pi[node][j], &sol.p[node][j], &sol.eta[node][j]);
        let b = blocks_with(c, w, sol.gamma, m, pi, p, eta);
        let s = grid.nodes()[node];
        let f = BlockFactor::new(&b.rhat, m).ok_or(Error::Singular { what: "R-hat", time: s, regime: j })?;
        let psi = &b.psi_full;
        Ok((p * &c.sigma).dot(&c.sigma) + (pi * &c.sigmabar).dot(&c.sigmabar) + 2.0 * eta.dot(&c.b)
            - f.solve_vec(psi).dot(psi))
    };
    for k in 0..grid.intervals() {
        let seg = sol.interval_segments[k];
        for j in 0..model.n_regimes() {
            let left = probs[k][j] * integrand(k, seg, j)?;
            let right = probs[k + 1][j] * integrand(k + 1, seg, j)?;
            value += 0.5 * grid.width(k) * (left + right);
        }
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Player {
    Control,
    Disturbance,
}

/// Which part of the saddle strategy is perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Block {
    /// Θ̂₁* scaled by 1 + ε.
    ControlGain,
    /// ε added to every component of v₁*.
    ControlOffset,
    /// Θ̂₂* scaled by 1 + ε.
    DisturbanceHatGain,
    /// Θ̃₂* scaled by 1 + ε.
    DisturbanceTildeGain,
    /// ε added to every component of v₂*.
    DisturbanceOffset,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::ControlGain,
        Block::ControlOffset,
        Block::DisturbanceHatGain,
        Block::DisturbanceTildeGain,
        Block::DisturbanceOffset,
    ];

    pub fn player(self) -> Player {
        match self {
            Block::ControlGain | Block::ControlOffset => Player::Control,
            _ => Player::Disturbance,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Block::ControlGain => "control gain",
            Block::ControlOffset => "control offset",
            Block::DisturbanceHatGain => "disturbance gain on xhat",
            Block::DisturbanceTildeGain => "disturbance gain on xtilde",
            Block::DisturbanceOffset => "disturbance offset",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Perturbation {
    pub block: Block,
    /// Signed size: scales become 1 + epsilon, offsets shift by epsilon.
    pub epsilon: f64,
}

impl Perturbation {
    pub fn description(&self) -> String {
        format!("{} {:+}", self.block.name(), self.epsilon)
    }

    /// The perturbed (control, disturbance) pair; the unperturbed player keeps its saddle strategy.
    pub fn policies(&self, gains: &Arc<SaddleGains>, m: usize, n_v: usize) -> (ControlPolicy, DisturbancePolicy) {
        let d = gains.regimes();
        let e = self.epsilon;
        let shift = |len| Signal::constant(DVector::from_element(len, e), d);
        let zero = |len| Signal::constant(DVector::zeros(len), d);
        let saddle_u = ControlPolicy::Saddle(gains.clone());
        let saddle_v = DisturbancePolicy::Saddle(gains.clone());
        match self.block {
            Block::ControlGain => (ControlPolicy::perturbed_saddle(gains, 1.0 + e, zero(m)), saddle_v),
            Block::ControlOffset => (ControlPolicy::perturbed_saddle(gains, 1.0, shift(m)), saddle_v),
            Block::DisturbanceHatGain => (saddle_u, DisturbancePolicy::perturbed_saddle(gains, 1.0 + e, 1.0, zero(n_v))),
            Block::DisturbanceTildeGain => (saddle_u, DisturbancePolicy::perturbed_saddle(gains, 1.0, 1.0 + e, zero(n_v))),
            Block::DisturbanceOffset => (saddle_u, DisturbancePolicy::perturbed_saddle(gains, 1.0, 1.0, shift(n_v))),
        }
    }
}

/// Every block perturbed by ±ε for each ε.
pub fn default_perturbations(epsilons: &[f64]) -> Vec<Perturbation> {
    let mut out = vec![];
    for &block in &Block::ALL {
        for &e in epsilons {
            out.push(Perturbation { block, epsilon: e });
            out.push(Perturbation { block, epsilon: -e });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SaddleVerdict {
    pub description: String,
    pub perturbation: Perturbation,
    /// Mean paired difference J_γ(perturbed) − J_γ(saddle).
    pub delta: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SaddleReport {
    pub base: CostEstimate,
    pub verdicts: Vec<SaddleVerdict>,
}

impl SaddleReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Paired common-random-number test of both saddle inequalities: a control deviation
/// must not lower J_γ, a disturbance deviation must not raise it (each within 3 stderr).
pub fn saddle_check(
    model: &GameModel,
    grid: &TimeGrid,
    gains: &Arc<SaddleGains>,
    perturbations: &[Perturbation],
    n_paths: usize,
    seed: u64,
) -> Result<SaddleReport> {
    check_paths(n_paths)?;
    let (m, n_v) = (model.dims.m, model.dims.n_v);
    let mut pairs = vec![(ControlPolicy::Saddle(gains.clone()), DisturbancePolicy::Saddle(gains.clone()))];
    pairs.extend(perturbations.iter().map(|p| p.policies(gains, m, n_v)));
    let sim = Simulator::new(model, grid)?;
    let costs = sim.batch_costs(&pairs, gains.gamma, n_paths, seed)?;
    let base: Vec<f64> = costs[0].iter().map(|c| c.j_gamma).collect();
    let verdicts = perturbations
        .iter()
        .zip(&costs[1..])
        .map(|(p, cs)| {
            let diffs: Vec<f64> = cs.iter().zip(&base).map(|(c, b)| c.j_gamma - b).collect();
            let (delta, stderr) = mean_stderr(&diffs);
            let pass = match p.block.player() {
                Player::Control => delta >= -SIGMA_RULE * stderr,
                Player::Disturbance => delta <= SIGMA_RULE * stderr,
            };
            SaddleVerdict { description: p.description(), perturbation: *p, delta, stderr, pass }
        })
        .collect();
    Ok(SaddleReport { base: estimate(&base, gains.gamma, model.is_homogeneous()), verdicts })
}

/// Disturbance candidates for the H∞ ratio. Feedback members carry a unit constant
/// excitation because the homogeneous state starts at zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Candidate {
    /// Θ̂₂*, Θ̃₂* (of the homogeneous game) scaled by `scale`, plus excitation.
    WorstCaseScaled { scale: f64 },
    /// Standard-normal constant gains per regime (from `seed`), plus excitation.
    RandomFeedback { seed: u64 },
    Sinusoid { omega: f64 },
    Square { period: f64 },
    Pulse { start: f64, end: f64 },
    Constant,
}

impl Candidate {
    pub fn description(&self) -> String {
        match self {
            Candidate::WorstCaseScaled { scale } => format!("worst-case feedback x{scale} + unit excitation"),
            Candidate::RandomFeedback { seed } => format!("random feedback #{seed} + unit excitation"),
            Candidate::Sinusoid { omega } => format!("sinusoid omega={omega:.4}"),
            Candidate::Square { period } => format!("square wave period={period:.4}"),
            Candidate::Pulse { start, end } => format!("pulse on [{start:.4}, {end:.4})"),
            Candidate::Constant => "constant unit".into(),
        }
    }

    fn policy(&self, gains: &Arc<SaddleGains>, n: usize, n_v: usize) -> DisturbancePolicy {
        let d = gains.regimes();
        let ones = DVector::from_element(n_v, 1.0);
        let excitation = Signal::constant(ones.clone(), d);
        match *self {
            Candidate::WorstCaseScaled { scale } => DisturbancePolicy::LinearFeedback {
                hat_gain: Gain::Table { table: Arc::new(gains.theta_hat2.clone()), scale },
                tilde_gain: Gain::Table { table: Arc::new(gains.theta_tilde2.clone()), scale },
                offset: excitation,
            },
            Candidate::RandomFeedback { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = || {
                    (0..d)
                        .map(|_| DMatrix::from_fn(n_v, n, |_, _| rng.sample::<f64, _>(StandardNormal)))
                        .collect::<Vec<_>>()
                };
                let (hat, tilde) = (draw(), draw());
                DisturbancePolicy::LinearFeedback {
                    hat_gain: Gain::Constant(hat),
                    tilde_gain: Gain::Constant(tilde),
                    offset: excitation,
                }
            }
            Candidate::Sinusoid { omega } => {
                DisturbancePolicy::OpenLoop(Signal::Sinusoid { amplitude: ones, omega, phase: 0.0 })
            }
            Candidate::Square { period } => DisturbancePolicy::OpenLoop(Signal::Square { amplitude: ones, period }),
            Candidate::Pulse { start, end } => DisturbancePolicy::OpenLoop(Signal::Pulse { amplitude: ones, start, end }),
            Candidate::Constant => DisturbancePolicy::OpenLoop(excitation),
        }
    }
}

/// Scaled worst-case feedbacks, `n_random` random feedbacks and open-loop signals on `[0, horizon]`.
pub fn default_candidates(horizon: f64, n_random: usize) -> Vec<Candidate> {
    let mut out: Vec<Candidate> =
        [0.0, 0.5, 1.0, 1.5, 2.0].iter().map(|&scale| Candidate::WorstCaseScaled { scale }).collect();
    out.extend((0..n_random as u64).map(|seed| Candidate::RandomFeedback { seed }));
    let w = std::f64::consts::PI / horizon;
    out.extend([0.5, 1.0, 2.0, 4.0].iter().map(|k| Candidate::Sinusoid { omega: k * w }));
    out.extend([horizon / 2.0, horizon / 4.0].iter().map(|&period| Candidate::Square { period }));
    out.extend([(0.0, horizon / 4.0), (horizon * 0.75, horizon)].iter().map(|&(start, end)| Candidate::Pulse { start, end }));
    out.push(Candidate::Constant);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRatio {
    pub description: String,
    pub candidate: Candidate,
    /// Estimate of J⁰(0, 0, i; u*, v).
    pub output: CostEstimate,
    /// Mean of ∫|v|².
    pub energy: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HinfReport {
    pub gamma: f64,
    pub candidates: Vec<CandidateRatio>,
    /// Largest ratio over the family: a lower bound on the induced-norm square.
    pub max_ratio: f64,
    pub argmax: String,
    /// γ² − max_ratio.
    pub margin: f64,
}

impl HinfReport {
    pub fn below_gamma_squared(&self) -> bool {
        self.max_ratio < self.gamma * self.gamma
    }
}

/// Largest Monte-Carlo ratio J⁰ / E∫|v|² over `candidates` under the saddle control of the
/// homogeneous game at `model.gamma`, started from ξ = 0 at t = 0.
pub fn hinf_ratio(
    model: &GameModel,
    step: f64,
    options: &RiccatiOptions,
    candidates: &[Candidate],
    n_paths: usize,
    seed: u64,
) -> Result<HinfReport> {
    check_paths(n_paths)?;
    if candidates.is_empty() {
        return Err(Error::Validation("empty candidate family".into()));
    }
    let hom = model.homogeneous_variant();
    let grid = hom.grid(step)?;
    let sol = solve_all(&hom, &grid, options)?;
    let gains = Arc::new(synthesize(&sol, &hom)?);
    let control = ControlPolicy::Saddle(gains.clone());
    let pairs: Vec<_> = candidates
        .iter()
        .map(|c| (control.clone(), c.policy(&gains, hom.dims.n, hom.dims.n_v)))
        .collect();
    let sim = Simulator::new(&hom, &grid)?;
    let costs = sim.batch_costs(&pairs, 0.0, n_paths, seed)?;
    let mut rows = Vec::with_capacity(candidates.len());
    for (c, cs) in candidates.iter().zip(&costs) {
        let j: Vec<f64> = cs.iter().map(|p| p.j).collect();
        let e: Vec<f64> = cs.iter().map(|p| p.v_energy).collect();
        let energy = mean_stderr(&e).0;
        if !(energy > 0.0) {
            return Err(Error::Validation(format!("candidate '{}' has zero disturbance energy", c.description())));
        }
        let output = estimate(&j, 0.0, true);
        rows.push(CandidateRatio {
            description: c.description(),
            candidate: c.clone(),
            output,
            energy,
            ratio: output.mean / energy,
        });
    }
    let best = rows.iter().enumerate().fold(0, |b, (k, r)| if r.ratio > rows[b].ratio { k } else { b });
    let g2 = model.gamma * model.gamma;
    Ok(HinfReport {
        gamma: model.gamma,
        max_ratio: rows[best].ratio,
        argmax: rows[best].description.clone(),
        margin: g2 - rows[best].ratio,
        candidates: rows,
    })
}

/// Whether the Riccati system is solvable at `gamma`, with the smallest required margin
/// (or the violating margin when not solvable).
pub fn solvable(model: &GameModel, grid: &TimeGrid, gamma: f64, options: &RiccatiOptions) -> Result<(bool, f64)> {
    match solve_all(&model.with_gamma(gamma), grid, options) {
        Ok(sol) => Ok((true, sol.min_margin())),
        Err(Error::ConditionViolation { margin, .. }) => Ok((false, margin)),
        Err(e) if e.is_infeasibility() => Ok((false, f64::NAN)),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub solvable: bool,
    pub min_margin: f64,
}

pub fn gamma_sweep(model: &GameModel, step: f64, gammas: &[f64], options: &RiccatiOptions) -> Result<Vec<SweepRow>> {
    let grid = model.grid(step)?;
    gammas
        .iter()
        .map(|&gamma| {
            let (ok, margin) = solvable(model, &grid, gamma, options)?;
            Ok(SweepRow { gamma, solvable: ok, min_margin: margin })
        })
        .collect()
}

/// Solvable γ values form an up-set on the (sorted) sweep.
pub fn is_up_set(rows: &[SweepRow]) -> bool {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    sorted.windows(2).all(|w| !w[0].solvable || w[1].solvable)
}

pub fn write_sweep_csv(rows: &[SweepRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "gamma,solvable,min_margin")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.gamma, r.solvable, r.min_margin)?;
    }
    Ok(())
}

/// Bracket of the Riccati solvability threshold in γ (an upper proxy for the optimal
/// attenuation level; the two are not claimed to coincide).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaBracket {
    /// Largest tested γ that is not solvable (0 when every tested γ was solvable).
    pub lo: f64,
    /// Smallest tested γ that is solvable.
    pub hi: f64,
    pub evaluations: usize,
}

const MAX_WIDENINGS: usize = 30;

/// Bisection on solvable(γ) until `hi − lo ≤ tol`. An unsolvable `lo` and a solvable `hi`
/// are established first, halving `lo` or doubling `hi` as needed.
pub fn gamma_star(
    model: &GameModel,
    step: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    options: &RiccatiOptions,
) -> Result<GammaBracket> {
    if !(lo > 0.0 && hi > lo && tol > 0.0) {
        return Err(Error::OutOfRange {
            what: "bracket",
            detail: format!("need 0 < lo < hi and tol > 0, got lo = {lo}, hi = {hi}, tol = {tol}"),
        });
    }
    let grid = model.grid(step)?;
    let mut evaluations = 0;
    let mut test = |g: f64| -> Result<bool> {
        evaluations += 1;
        Ok(solvable(model, &grid, g, options)?.0)
    };
    let (mut lo, mut hi) = (lo, hi);
    let mut widened = 0;
    while !test(hi)? {
        widened += 1;
        if widened > MAX_WIDENINGS {
            return Err(Error::NoBracket { lo, hi });
        }
        lo = hi;
        hi *= 2.0;
    }
    let mut widened = 0;
    while test(lo)? {
        widened += 1;
        hi = lo;
        if widened > MAX_WIDENINGS || lo <= tol {
            lo = 0.0;
            break;
        }
        lo /= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if test(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(GammaBracket { lo, hi, evaluations })
}

/// Everything one evaluation run produced; absent parts were not requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_formula: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_under_saddle: Option<CostEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saddle: Option<SaddleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hinf: Option<HinfReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_star_bracket: Option<GammaBracket>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRow>,
}

impl EvalReport {
    /// Machine-readable key-value document (TOML).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report fields are serializable")
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = format!("gamma = {}\n", self.gamma);
        if let Some(v) = self.value_formula {
            out += &format!("value (closed form)        {v:.6}\n");
        }
        if let Some(c) = &self.mc_under_saddle {
            out += &format!("cost under saddle (MC)     {c}\n");
        }
        if let (Some(v), Some(c)) = (self.value_formula, &self.mc_under_saddle) {
            let z = (c.mean - v).abs() / c.stderr.max(f64::MIN_POSITIVE);
            out += &format!("|MC - value| / stderr      {z:.3}\n");
        }
        if let Some(s) = &self.saddle {
            out += &format!("\nsaddle inequalities (base J_gamma = {})\n", s.base);
            out += &format!("{:<34} {:>12} {:>12}  verdict\n", "perturbation", "delta", "stderr");
            for v in &s.verdicts {
                let verdict = if v.pass { "pass" } else { "FAIL" };
                out += &format!("{:<34} {:>12.4e} {:>12.4e}  {verdict}\n", v.description, v.delta, v.stderr);
            }
        }
        if let Some(h) = &self.hinf {
            out += &format!("\nH-infinity ratio J0 / E int |v|^2 (gamma^2 = {})\n", h.gamma * h.gamma);
            for c in &h.candidates {
                out += &format!("{:<44} {:>10.5}\n", c.description, c.ratio);
            }
            out += &format!("max ratio {:.5} ({}), margin {:.5}\n", h.max_ratio, h.argmax, h.margin);
        }
        if let Some(b) = &self.gamma_star_bracket {
            out += &format!("\nsolvability threshold in [{:.6}, {:.6}] ({} solves)\n", b.lo, b.hi, b.evaluations);
        }
        if !self.sweep.is_empty() {
            out += "\ngamma sweep\n";
            for r in &self.sweep {
                out += &format!("{:>10.5} {:>6} {:>12.4e}\n", r.gamma, r.solvable, r.min_margin);
            }
        }
        out
    }
}
