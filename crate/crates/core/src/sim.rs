//! Euler–Maruyama co-integration of the filtered state x̂ and the difference x̃ = x − x̂.
//!
//! One path's randomness (regime chain plus both Brownian increments) is drawn once
//! and can be replayed under any number of policy pairs, which gives common random
//! numbers for paired cost comparisons.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::chain::{sample_path, ChainPath};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{self, Kernel, Observer};
use crate::model::{GameModel, RegimeCoeffs, RegimeWeights};
use crate::policy::{At, ControlPolicy, DisturbancePolicy};
use crate::riccati::interval_segments;

const NO_NODE: u32 = u32::MAX;
const CHANNEL_CHAIN: u64 = 0x6368_6169_6e00_0001;
const CHANNEL_NOISE: u64 = 0x6e6f_6973_6500_0002;

/// One Euler step on `[s0, s1]` inside grid interval `k`, in a single regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub s0: f64,
    pub s1: f64,
    pub k: u32,
    pub w0: f64,
    pub w1: f64,
    pub regime: u32,
    pub dw: f64,
    pub dwbar: f64,
    /// Policies and running cost must be re-evaluated at `s0` (regime jump or coefficient breakpoint).
    pub fresh: bool,
    /// Grid node index at `s0`, or `u32::MAX` for an inserted jump time.
    pub node: u32,
    /// `s1` is the grid node closing interval `k`.
    pub end_node: bool,
}

impl Step {
    pub fn node_index(&self) -> Option<usize> {
        (self.node != NO_NODE).then_some(self.node as usize)
    }
}

/// All randomness of one path: the chain and the merged step sequence with increments.
#[derive(Clone, Debug, Default)]
pub struct PathDraw {
    pub chain: Option<ChainPath>,
    pub steps: Vec<Step>,
}

impl PathDraw {
    pub fn terminal_regime(&self) -> usize {
        *self.chain.as_ref().expect("drawn path").states.last().unwrap()
    }
}

/// Merges chain jump times into the grid and draws ΔW, ΔW̄ for every step (in that order).
pub fn build_steps(grid: &TimeGrid, chain: &ChainPath, rng: &mut ChaCha8Rng, steps: &mut Vec<Step>) {
    steps.clear();
    let nodes = grid.nodes();
    let (jumps, states) = (&chain.jump_times, &chain.states);
    let mut j = 0;
    let mut regime = states[0];
    let mut fresh = true;
    for k in 0..grid.intervals() {
        let (a, b) = (nodes[k], nodes[k + 1]);
        let h = b - a;
        while j < jumps.len() && jumps[j] <= a {
            regime = states[j + 1];
            j += 1;
            fresh = true;
        }
        let mut s0 = a;
        loop {
            let s1 = if j < jumps.len() && jumps[j] < b { jumps[j] } else { b };
            let sq = (s1 - s0).sqrt();
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            steps.push(Step {
                s0,
                s1,
                k: k as u32,
                w0: (s0 - a) / h,
                w1: if s1 == b { 1.0 } else { (s1 - a) / h },
                regime: regime as u32,
                dw: sq * z1,
                dwbar: sq * z2,
                fresh,
                node: if s0 == a { k as u32 } else { NO_NODE },
                end_node: s1 == b,
            });
            fresh = false;
            if s1 == b {
                break;
            }
            regime = states[j + 1];
            j += 1;
            fresh = true;
            s0 = s1;
        }
        if grid.is_breakpoint(k + 1) {
            fresh = true;
        }
    }
}

/// Per-path cost functionals: J (γ = 0), ∫|v|², and J_γ accumulated with R₂ − γ²I.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PathCost {
    pub j: f64,
    pub v_energy: f64,
    pub j_gamma: f64,
}

/// State and policy values at one recorded instant.
#[derive(Clone, Copy, Debug)]
pub struct Snapshot<'a> {
    pub s: f64,
    pub node: Option<usize>,
    pub regime: usize,
    pub xhat: &'a [f64],
    pub xtilde: &'a [f64],
    pub u: &'a [f64],
    pub vhat: &'a [f64],
    pub vtilde: &'a [f64],
}

/// Per-pair buffers of the dimension-generic kernel.
#[derive(Clone, Debug)]
struct Work {
    xh: Vec<f64>,
    xt: Vec<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
    vh: Vec<f64>,
    vt: Vec<f64>,
    v: Vec<f64>,
    dh: Vec<f64>,
    gh: Vec<f64>,
    dt: Vec<f64>,
    gt: Vec<f64>,
    gb: Vec<f64>,
    l_prev: (f64, f64),
}

impl Work {
    fn new(n: usize, m: usize, n_v: usize) -> Self {
        let z = |k| vec![0.0; k];
        Self {
            xh: z(n),
            xt: z(n),
            x: z(n),
            u: z(m),
            vh: z(n_v),
            vt: z(n_v),
            v: z(n_v),
            dh: z(n),
            gh: z(n),
            dt: z(n),
            gt: z(n),
            gb: z(n),
            l_prev: (0.0, 0.0),
        }
    }

    fn snapshot(&self, s: f64, node: Option<usize>, regime: usize) -> Snapshot<'_> {
        Snapshot { s, node, regime, xhat: &self.xh, xtilde: &self.xt, u: &self.u, vhat: &self.vh, vtilde: &self.vt }
    }
}

/// out += M x (column-major M).
#[inline(always)]
fn gemv_acc(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    let data = m.as_slice();
    for (c, &xc) in x.iter().enumerate() {
        if xc != 0.0 {
            let col = &data[c * rows..(c + 1) * rows];
            for (o, &a) in out.iter_mut().zip(col) {
                *o += a * xc;
            }
        }
    }
}

/// ⟨M x, y⟩.
#[inline(always)]
fn bilinear(m: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let rows = m.nrows();
    let data = m.as_slice();
    let mut acc = 0.0;
    for (c, &xc) in x.iter().enumerate() {
        let col = &data[c * rows..(c + 1) * rows];
        let mut t = 0.0;
        for (&a, &yr) in col.iter().zip(y) {
            t += a * yr;
        }
        acc += t * xc;
    }
    acc
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Running cost without the γ penalty, and |v|².
#[inline(always)]
fn running(w: &RegimeWeights, x: &[f64], u: &[f64], v: &[f64]) -> (f64, f64) {
    let l = bilinear(&w.q, x, x)
        + bilinear(&w.r1, u, u)
        + bilinear(&w.r2, v, v)
        + 2.0 * (bilinear(&w.s1, x, u) + bilinear(&w.s2, x, v))
        + 2.0 * (dot(w.q_lin.as_slice(), x) + dot(w.rho1.as_slice(), u) + dot(w.rho2.as_slice(), v));
    (l, dot(v, v))
}

/// Model data laid out for the path kernel.
#[derive(Debug)]
pub struct Simulator<'a> {
    model: &'a GameModel,
    grid: &'a TimeGrid,
    segments: Vec<usize>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a GameModel, grid: &'a TimeGrid) -> Result<Self> {
        let horizon = model.horizon();
        if (grid.start() - model.initial_time).abs() > 1e-12 || (grid.end() - horizon).abs() > 1e-12 {
            return Err(Error::OutOfRange {
                what: "grid",
                detail: format!("[{}, {}] does not span [{}, {}]", grid.start(), grid.end(), model.initial_time, horizon),
            });
        }
        Ok(Self { model, grid, segments: interval_segments(model, grid) })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.grid
    }

    fn work(&self) -> Work {
        let d = &self.model.dims;
        Work::new(d.n, d.m, d.n_v)
    }

    pub fn check(&self, control: &ControlPolicy, disturbance: &DisturbancePolicy) -> Result<()> {
        let d = &self.model.dims;
        control.check(d.m, d.n, self.grid.intervals())?;
        disturbance.check(d.n_v, d.n, self.grid.intervals())
    }

    /// Draws path number `index` of the stream identified by `seed`.
    pub fn draw(&self, seed: u64, index: u64, out: &mut PathDraw) {
        let mut chain_rng = substream(seed, CHANNEL_CHAIN, index);
        let chain = sample_path(
            &self.model.generator,
            self.model.initial_regime,
            self.grid.start(),
            self.grid.end(),
            &mut chain_rng,
        );
        let mut noise_rng = substream(seed, CHANNEL_NOISE, index);
        build_steps(self.grid, &chain, &mut noise_rng, &mut out.steps);
        out.chain = Some(chain);
    }

    #[inline(always)]
    fn coeffs(&self, k: usize, i: usize) -> (&RegimeCoeffs, &RegimeWeights) {
        let seg = self.segments[k];
        (self.model.coeffs(seg, i), self.model.weights(seg, i))
    }

    /// Validates and compiles policy pairs for repeated path runs.
    pub fn prepare(&self, pairs: &[(ControlPolicy, DisturbancePolicy)]) -> Result<Prepared<'_, 'a>> {
        for (u, v) in pairs {
            self.check(u, v)?;
        }
        Ok(Prepared {
            sim: self,
            pairs: pairs.to_vec(),
            kernel: kernel::compile(self.model, self.grid, &self.segments, pairs),
        })
    }

    /// Like [`Simulator::prepare`] but always runs the dimension-generic path (for cross-checks).
    pub fn prepare_generic(&self, pairs: &[(ControlPolicy, DisturbancePolicy)]) -> Result<Prepared<'_, 'a>> {
        let mut out = self.prepare(pairs)?;
        out.kernel = None;
        Ok(out)
    }

    fn run_dynamic(
        &self,
        draw: &PathDraw,
        pairs: &[(ControlPolicy, DisturbancePolicy)],
        gamma: f64,
        out: &mut [PathCost],
        mut observe: Observer<'_>,
    ) -> Result<()> {
        let g2 = gamma * gamma;
        let mut works = vec![self.work(); pairs.len()];
        for wk in works.iter_mut() {
            wk.xh.copy_from_slice(self.model.xi.as_slice());
            wk.x.copy_from_slice(&wk.xh);
        }
        out.fill(PathCost::default());
        let mut last = None;
        for st in &draw.steps {
            let (k, i) = (st.k as usize, st.regime as usize);
            let (c, w) = self.coeffs(k, i);
            let h = st.s1 - st.s0;
            let at0 = At { s: st.s0, k, w: st.w0, regime: i };
            let at1 = At { s: st.s1, k, w: st.w1, regime: i };
            for (p, (((control, dist), wk), cost)) in pairs.iter().zip(works.iter_mut()).zip(out.iter_mut()).enumerate() {
                if st.fresh {
                    eval_policies(control, dist, &at0, wk);
                    wk.l_prev = running(w, &wk.x, &wk.u, &wk.v);
                }
                if let Some(f) = observe.as_mut() {
                    f(p, wk.snapshot(st.s0, st.node_index(), i));
                }
                euler(c, wk, h, st.dw, st.dwbar);
                eval_policies(control, dist, &at1, wk);
                let l = running(w, &wk.x, &wk.u, &wk.v);
                let lp = wk.l_prev;
                cost.j += 0.5 * h * (lp.0 + l.0);
                cost.v_energy += 0.5 * h * (lp.1 + l.1);
                cost.j_gamma += 0.5 * h * ((lp.0 - g2 * lp.1) + (l.0 - g2 * l.1));
                wk.l_prev = l;
            }
            last = Some((st.s1, i));
        }
        let final_regime = draw.terminal_regime();
        let term = &self.model.terminal[final_regime];
        for (p, (wk, cost)) in works.iter().zip(out.iter_mut()).enumerate() {
            if let Some(f) = observe.as_mut() {
                let (s, regime) = last.unwrap_or((self.grid.end(), final_regime));
                f(p, wk.snapshot(s, Some(self.grid.intervals()), regime));
            }
            let tc = bilinear(&term.g, &wk.x, &wk.x) + 2.0 * dot(term.g_lin.as_slice(), &wk.x);
            cost.j += tc;
            cost.j_gamma += tc;
            if !(cost.j.is_finite() && cost.j_gamma.is_finite() && cost.v_energy.is_finite()) {
                return Err(Error::NonFiniteValue { time: self.grid.end(), regime: final_regime });
            }
        }
        Ok(())
    }

    /// Costs of `n_paths` common-random-number paths under every policy pair, indexed `[pair][path]`.
    pub fn batch_costs(
        &self,
        pairs: &[(ControlPolicy, DisturbancePolicy)],
        gamma: f64,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<Vec<PathCost>>> {
        let prepared = self.prepare(pairs)?;
        let per_path: Vec<Vec<PathCost>> = (0..n_paths)
            .into_par_iter()
            .map_init(PathDraw::default, |draw, p| {
                self.draw(seed, p as u64, draw);
                let mut out = vec![PathCost::default(); pairs.len()];
                prepared.run(draw, gamma, &mut out, None)?;
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok((0..pairs.len()).map(|q| per_path.iter().map(|row| row[q]).collect()).collect())
    }
}

/// Policy pairs bound to a simulator, ready to be run on drawn paths.
pub struct Prepared<'s, 'a> {
    sim: &'s Simulator<'a>,
    pairs: Vec<(ControlPolicy, DisturbancePolicy)>,
    kernel: Option<Box<dyn Kernel>>,
}

impl Prepared<'_, '_> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Runs every pair on one drawn path; `out` has one entry per pair. `observe`
    /// receives (pair index, snapshot) at every step start and once at the terminal time.
    pub fn run(&self, draw: &PathDraw, gamma: f64, out: &mut [PathCost], observe: Observer<'_>) -> Result<()> {
        assert_eq!(out.len(), self.pairs.len());
        match &self.kernel {
            Some(k) => k.run(draw, gamma, out, observe),
            None => self.sim.run_dynamic(draw, &self.pairs, gamma, out, observe),
        }
    }
}

#[inline(always)]
fn eval_policies(control: &ControlPolicy, dist: &DisturbancePolicy, at: &At, wk: &mut Work) {
    control.eval(at, &wk.xh, &mut wk.u);
    dist.eval(at, &wk.xh, &wk.xt, &mut wk.vh, &mut wk.vt);
    for ((v, a), b) in wk.v.iter_mut().zip(&wk.vh).zip(&wk.vt) {
        *v = a + b;
    }
}

#[inline(always)]
fn euler(c: &RegimeCoeffs, wk: &mut Work, h: f64, dw: f64, dwbar: f64) {
    let Work { xh, xt, x, u, vh, vt, v, dh, gh, dt, gt, gb, .. } = wk;
    dh.copy_from_slice(c.b.as_slice());
    gh.copy_from_slice(c.sigma.as_slice());
    dt.fill(0.0);
    gt.fill(0.0);
    gb.copy_from_slice(c.sigmabar.as_slice());
    gemv_acc(&c.a, xh, dh);
    gemv_acc(&c.b1, u, dh);
    gemv_acc(&c.b2, vh, dh);
    gemv_acc(&c.c, xh, gh);
    gemv_acc(&c.d1, u, gh);
    gemv_acc(&c.d2, vh, gh);
    gemv_acc(&c.a, xt, dt);
    gemv_acc(&c.b2, vt, dt);
    gemv_acc(&c.c, xt, gt);
    gemv_acc(&c.d2, vt, gt);
    gemv_acc(&c.cbar, x, gb);
    gemv_acc(&c.d1bar, u, gb);
    gemv_acc(&c.d2bar, v, gb);
    for r in 0..xh.len() {
        xh[r] += dh[r] * h + gh[r] * dw;
        xt[r] += dt[r] * h + gt[r] * dw + gb[r] * dwbar;
        x[r] = xh[r] + xt[r];
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for (seed, channel, path).
pub fn substream(seed: u64, channel: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(channel)));
    rng.set_stream(path);
    rng
}

/// Recorded trajectory at every step boundary (grid nodes plus inserted jump times).
#[derive(Clone, Debug)]
pub struct SimPath {
    pub times: Vec<f64>,
    /// Grid node index of each record, if it is one.
    pub nodes: Vec<Option<usize>>,
    pub regimes: Vec<usize>,
    pub chain: ChainPath,
    pub dw: Vec<f64>,
    pub dwbar: Vec<f64>,
    pub xhat: Vec<DVector<f64>>,
    pub xtilde: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub vhat: Vec<DVector<f64>>,
    pub vtilde: Vec<DVector<f64>>,
    pub cost: PathCost,
}

impl SimPath {
    fn empty(chain: ChainPath) -> Self {
        Self {
            times: vec![],
            nodes: vec![],
            regimes: vec![],
            chain,
            dw: vec![],
            dwbar: vec![],
            xhat: vec![],
            xtilde: vec![],
            x: vec![],
            u: vec![],
            v: vec![],
            vhat: vec![],
            vtilde: vec![],
            cost: PathCost::default(),
        }
    }

    fn record(&mut self, snap: Snapshot<'_>) {
        let vec = |s: &[f64]| DVector::from_column_slice(s);
        let (xh, xt) = (vec(snap.xhat), vec(snap.xtilde));
        let (vh, vt) = (vec(snap.vhat), vec(snap.vtilde));
        self.times.push(snap.s);
        self.nodes.push(snap.node);
        self.regimes.push(snap.regime);
        self.x.push(&xh + &xt);
        self.xhat.push(xh);
        self.xtilde.push(xt);
        self.u.push(vec(snap.u));
        self.v.push(&vh + &vt);
        self.vhat.push(vh);
        self.vtilde.push(vt);
    }

    /// Rows `s, regime, x, xhat, xtilde, u, v, vhat, vtilde` (regimes 1-based).
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = vec!["s".to_string(), "regime".to_string()];
        let cols: [(&str, &Vec<DVector<f64>>); 7] = [
            ("x", &self.x),
            ("xhat", &self.xhat),
            ("xtilde", &self.xtilde),
            ("u", &self.u),
            ("v", &self.v),
            ("vhat", &self.vhat),
            ("vtilde", &self.vtilde),
        ];
        for (name, vals) in &cols {
            let len = vals.first().map_or(0, |v| v.len());
            header.extend((1..=len).map(|r| format!("{name}_{r}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[t]), format!("{}", self.regimes[t] + 1)];
            for (_, vals) in &cols {
                row.extend(vals[t].iter().map(|x| format!("{x}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates one path on `grid` under the given chain; increments are drawn from `rng`.
pub fn simulate(
    model: &GameModel,
    grid: &TimeGrid,
    control: &ControlPolicy,
    disturbance: &DisturbancePolicy,
    chain: &ChainPath,
    rng: &mut ChaCha8Rng,
) -> Result<SimPath> {
    let sim = Simulator::new(model, grid)?;
    let prepared = sim.prepare(&[(control.clone(), disturbance.clone())])?;
    if chain.start != grid.start() || chain.end != grid.end() {
        return Err(Error::OutOfRange {
            what: "chain path",
            detail: format!("[{}, {}] differs from the grid span", chain.start, chain.end),
        });
    }
    let mut draw = PathDraw::default();
    build_steps(grid, chain, rng, &mut draw.steps);
    draw.chain = Some(chain.clone());
    let mut out = SimPath::empty(chain.clone());
    out.dw = draw.steps.iter().map(|s| s.dw).collect();
    out.dwbar = draw.steps.iter().map(|s| s.dwbar).collect();
    let mut cost = [PathCost::default()];
    prepared.run(&draw, model.gamma, &mut cost, Some(&mut |_, s| out.record(s)))?;
    out.cost = cost[0];
    Ok(out)
}

/// Path number `index` of the seeded stream used by the Monte-Carlo estimators.
pub fn simulate_seeded(
    model: &GameModel,
    grid: &TimeGrid,
    control: &ControlPolicy,
    disturbance: &DisturbancePolicy,
    seed: u64,
    index: u64,
) -> Result<SimPath> {
    let mut chain_rng = substream(seed, CHANNEL_CHAIN, index);
    let chain = sample_path(&model.generator, model.initial_regime, grid.start(), grid.end(), &mut chain_rng);
    let mut noise_rng = substream(seed, CHANNEL_NOISE, index);
    simulate(model, grid, control, disturbance, &chain, &mut noise_rng)
}

/// Monte-Carlo orthogonality diagnostics at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterRow {
    pub time: f64,
    pub node: usize,
    /// ‖E x̃‖ and the root-sum-square of the component standard errors.
    pub xtilde_mean: f64,
    pub xtilde_stderr: f64,
    /// |E⟨x̂, x̃⟩| and its standard error.
    pub inner_mean: f64,
    pub inner_stderr: f64,
    /// ‖E ṽ‖ (covers E⟨h, ṽ⟩ for every fixed h) and its standard error.
    pub vtilde_mean: f64,
    pub vtilde_stderr: f64,
}

impl FilterRow {
    /// All three means within `k` standard errors of zero.
    pub fn within(&self, k: f64) -> bool {
        self.xtilde_mean <= k * self.xtilde_stderr
            && self.inner_mean <= k * self.inner_stderr
            && self.vtilde_mean <= k * self.vtilde_stderr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterReport {
    pub n_paths: usize,
    pub rows: Vec<FilterRow>,
}

impl FilterReport {
    pub fn within(&self, k: f64) -> bool {
        self.rows.iter().all(|r| r.within(k))
    }
}

/// Per-path samples at one checkpoint: x̃ components, ⟨x̂, x̃⟩, ṽ components.
type Sample = (Vec<f64>, f64, Vec<f64>);

fn mean_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

fn vector_stats(samples: &[&Vec<f64>]) -> (f64, f64) {
    let dim = samples.first().map_or(0, |v| v.len());
    let (mut m2, mut s2) = (0.0, 0.0);
    for c in 0..dim {
        let (m, s) = mean_se(samples.iter().map(|v| v[c]), samples.len());
        m2 += m * m;
        s2 += s * s;
    }
    (m2.sqrt(), s2.sqrt())
}

fn filter_rows(grid: &TimeGrid, checkpoints: &[usize], per_path: &[Vec<Sample>]) -> Vec<FilterRow> {
    let n = per_path.len();
    checkpoints
        .iter()
        .enumerate()
        .map(|(c, &node)| {
            let xt: Vec<_> = per_path.iter().map(|p| &p[c].0).collect();
            let vt: Vec<_> = per_path.iter().map(|p| &p[c].2).collect();
            let (xm, xs) = vector_stats(&xt);
            let (vm, vs) = vector_stats(&vt);
            let (im, is) = mean_se(per_path.iter().map(|p| p[c].1), n);
            FilterRow {
                time: grid.nodes()[node],
                node,
                xtilde_mean: xm,
                xtilde_stderr: xs,
                inner_mean: im.abs(),
                inner_stderr: is,
                vtilde_mean: vm,
                vtilde_stderr: vs,
            }
        })
        .collect()
}

/// Orthogonality statistics from recorded paths at the given grid nodes.
pub fn filter_consistency_stats(paths: &[SimPath], grid: &TimeGrid, checkpoints: &[usize]) -> Result<FilterReport> {
    let per_path = paths
        .iter()
        .map(|p| {
            checkpoints
                .iter()
                .map(|&node| {
                    let r = p.nodes.iter().position(|&k| k == Some(node)).ok_or(Error::OutOfRange {
                        what: "checkpoint",
                        detail: format!("node {node} not recorded"),
                    })?;
                    Ok((p.xtilde[r].as_slice().to_vec(), p.xhat[r].dot(&p.xtilde[r]), p.vtilde[r].as_slice().to_vec()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterReport { n_paths: paths.len(), rows: filter_rows(grid, checkpoints, &per_path) })
}

/// Streaming version of [`filter_consistency_stats`] over `n_paths` seeded paths.
pub fn filter_consistency_mc(
    model: &GameModel,
    grid: &TimeGrid,
    control: &ControlPolicy,
    disturbance: &DisturbancePolicy,
    checkpoints: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<FilterReport> {
    let sim = Simulator::new(model, grid)?;
    let prepared = sim.prepare(&[(control.clone(), disturbance.clone())])?;
    if let Some(&bad) = checkpoints.iter().find(|&&k| k > grid.intervals()) {
        return Err(Error::OutOfRange { what: "checkpoint", detail: format!("node {bad}") });
    }
    let per_path: Vec<Vec<Sample>> = (0..n_paths)
        .into_par_iter()
        .map_init(
            PathDraw::default,
            |draw, p| {
                sim.draw(seed, p as u64, draw);
                let mut samples: Vec<Option<Sample>> = vec![None; checkpoints.len()];
                let mut observe = |_: usize, s: Snapshot<'_>| {
                    if let Some(node) = s.node {
                        for (c, &k) in checkpoints.iter().enumerate() {
                            if k == node && samples[c].is_none() {
                                samples[c] = Some((s.xtilde.to_vec(), dot(s.xhat, s.xtilde), s.vtilde.to_vec()));
                            }
                        }
                    }
                };
                prepared.run(draw, model.gamma, &mut [PathCost::default()], Some(&mut observe))?;
                Ok(samples.into_iter().map(|s| s.expect("every node is recorded")).collect())
            },
        )
        .collect::<Result<_>>()?;
    Ok(FilterReport { n_paths, rows: filter_rows(grid, checkpoints, &per_path) })
}
