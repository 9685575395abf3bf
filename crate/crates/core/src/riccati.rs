//! Coupled backward Riccati systems for Π and P, the affine BODE for η, and
//! node-wise certificates of the definiteness conditions.
//!
//! Backward classical RK4 on the grid; every stage of an interval uses that
//! interval's (constant) coefficients. `solve_p` and `solve_eta` read the already
//! computed Π (and P) trajectories; their midpoint values come from cubic Hermite
//! interpolation with node derivatives taken from the ODE right-hand sides, which
//! keeps the scheme fourth order.
//!
//! Conditions are enforced at grid nodes and at the intermediate RK4 stage states (a coarse
//! step can otherwise jump across a finite escape); certificates are reported per node.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{eig_range, is_finite, symmetrize, BlockFactor, SymSolver};
use crate::model::{stacked, GameModel, RegimeCoeffs, RegimeWeights, StackedCoeffs};

/// Default eigenvalue margin for the strict definiteness conditions.
pub const DEFAULT_DELTA_COND: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConditionSet {
    /// R̂₂₂ ≪ 0 and R̂₁₁ − R̂₁₂R̂₂₂⁻¹R̂₁₂ᵀ ≫ 0.
    I,
    /// R̂₁₁ ≫ 0 and R̂₂₂ − R̂₁₂ᵀR̂₁₁⁻¹R̂₁₂ ≪ 0.
    II,
    /// R̂₁₁ ≫ 0 and R̂₂₂ ≪ 0.
    IAndII,
}

/// Which of the three equivalent η equations to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaForm {
    /// Minimizer-first completion of squares (Schur complement of R̂₂₂).
    ControlFirst,
    /// Maximizer-first completion of squares (Schur complement of R̂₁₁).
    DisturbanceFirst,
    /// Closed-loop form with the full R̂ solve.
    Compact,
}

/// Which of the two equivalent P equations to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PForm {
    /// −ŜᵀR̂⁻¹Ŝ with the full R̂ solve.
    Full,
    /// Closed loop under the control gain Θ̂₁* with the residual −𝕊₂ᵀR̂₂₂⁻¹𝕊₂.
    Rearranged,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiOptions {
    pub conditions: ConditionSet,
    pub delta_cond: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { conditions: ConditionSet::IAndII, delta_cond: DEFAULT_DELTA_COND }
    }
}

/// Eigenvalue margins at one (node, regime); positive means the condition holds.
/// `NEG_INFINITY` marks a Schur complement that could not be formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Margins {
    /// −λ_max(R̄₂)
    pub rbar2: f64,
    /// λ_min(R̂₁₁)
    pub r11: f64,
    /// −λ_max(R̂₂₂)
    pub r22: f64,
    /// λ_min(R̂₁₁ − R̂₁₂R̂₂₂⁻¹R̂₁₂ᵀ)
    pub schur_i: f64,
    /// −λ_max(R̂₂₂ − R̂₁₂ᵀR̂₁₁⁻¹R̂₁₂)
    pub schur_ii: f64,
}

impl Margins {
    pub fn from_blocks(b: &BlockData) -> Self {
        let r11 = b.rhat11();
        let r12 = b.rhat12();
        let r22 = b.rhat22();
        let schur_i = SymSolver::new(&r22)
            .map(|f| eig_range(&(&r11 - &r12 * f.solve(&r12.transpose()))).0)
            .unwrap_or(f64::NEG_INFINITY);
        let schur_ii = SymSolver::new(&r11)
            .map(|f| -eig_range(&(&r22 - r12.transpose() * f.solve(&r12))).1)
            .unwrap_or(f64::NEG_INFINITY);
        Self {
            rbar2: -eig_range(&b.rbar2).1,
            r11: eig_range(&r11).0,
            r22: -eig_range(&r22).1,
            schur_i,
            schur_ii,
        }
    }

    /// The margins that make up a condition set.
    pub fn required(&self, set: ConditionSet) -> [(&'static str, f64); 3] {
        let rb = ("Rbar2 << 0", self.rbar2);
        match set {
            ConditionSet::I => [rb, ("Rhat22 << 0", self.r22), ("Rhat11 - Rhat12 Rhat22^-1 Rhat12' >> 0", self.schur_i)],
            ConditionSet::II => [rb, ("Rhat11 >> 0", self.r11), ("Rhat22 - Rhat12' Rhat11^-1 Rhat12 << 0", self.schur_ii)],
            ConditionSet::IAndII => [rb, ("Rhat11 >> 0", self.r11), ("Rhat22 << 0", self.r22)],
        }
    }

    /// First violated condition, if any.
    pub fn violation(&self, set: ConditionSet, delta: f64) -> Option<(&'static str, f64)> {
        self.required(set).into_iter().find(|(_, m)| !(*m >= delta))
    }

    pub fn min_required(&self, set: ConditionSet) -> f64 {
        self.required(set).iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min)
    }
}

/// Coefficient blocks at one (s, i) for given Π, P, η.
#[derive(Clone, Debug)]
pub struct BlockData {
    pub m: usize,
    /// S̄₂ = B₂ᵀΠ + D₂ᵀΠC + D̄₂ᵀΠC̄ + S₂
    pub sbar2: DMatrix<f64>,
    /// R̄₂ = R₂ − γ²I + D₂ᵀΠD₂ + D̄₂ᵀΠD̄₂
    pub rbar2: DMatrix<f64>,
    /// Ŝ = BᵀP + DᵀPC + D̄ᵀΠC̄ + S
    pub shat: DMatrix<f64>,
    /// R̂ = R_γ + DᵀPD + D̄ᵀΠD̄
    pub rhat: DMatrix<f64>,
    /// Ψ = Bᵀη + DᵀPσ + D̄ᵀΠσ̄ + ρ = [ψ̄; ψ]
    pub psi_full: DVector<f64>,
    /// ψ = lower block of Ψ
    pub psi: DVector<f64>,
    /// ψ̄ = upper block of Ψ
    pub psibar: DVector<f64>,
    /// φ = ψ̄ − R̂₁₂R̂₂₂⁻¹ψ (when R̂₂₂ is invertible)
    pub phi: Option<DVector<f64>>,
    /// φ̄ = ψ − R̂₁₂ᵀR̂₁₁⁻¹ψ̄ (when R̂₁₁ is invertible)
    pub phibar: Option<DVector<f64>>,
    /// 𝕊₂ = Ŝ₂ + R̂₁₂ᵀΘ̂₁* (when Condition (I) blocks are invertible)
    pub s2_closed: Option<DMatrix<f64>>,
}

impl BlockData {
    pub fn rhat11(&self) -> DMatrix<f64> {
        self.rhat.view((0, 0), (self.m, self.m)).into_owned()
    }
    pub fn rhat12(&self) -> DMatrix<f64> {
        let k = self.rhat.nrows() - self.m;
        self.rhat.view((0, self.m), (self.m, k)).into_owned()
    }
    pub fn rhat22(&self) -> DMatrix<f64> {
        let k = self.rhat.nrows() - self.m;
        self.rhat.view((self.m, self.m), (k, k)).into_owned()
    }
    pub fn shat1(&self) -> DMatrix<f64> {
        self.shat.rows(0, self.m).into_owned()
    }
    pub fn shat2(&self) -> DMatrix<f64> {
        self.shat.rows(self.m, self.shat.nrows() - self.m).into_owned()
    }
}

struct Core {
    sbar2: DMatrix<f64>,
    rbar2: DMatrix<f64>,
}

fn pi_blocks(pi: &DMatrix<f64>, c: &RegimeCoeffs, w: &RegimeWeights, gamma: f64) -> Core {
    let k = w.r2.nrows();
    let sbar2 = c.b2.transpose() * pi + c.d2.transpose() * pi * &c.c + c.d2bar.transpose() * pi * &c.cbar + &w.s2;
    let mut rbar2 = &w.r2 - DMatrix::identity(k, k) * (gamma * gamma)
        + c.d2.transpose() * pi * &c.d2
        + c.d2bar.transpose() * pi * &c.d2bar;
    symmetrize(&mut rbar2);
    Core { sbar2, rbar2 }
}

fn hat_blocks(pi: &DMatrix<f64>, p: &DMatrix<f64>, c: &RegimeCoeffs, st: &StackedCoeffs) -> (DMatrix<f64>, DMatrix<f64>) {
    let shat = st.b.transpose() * p + st.d.transpose() * p * &c.c + st.dbar.transpose() * pi * &c.cbar + &st.s;
    let mut rhat = &st.r_gamma + st.d.transpose() * p * &st.d + st.dbar.transpose() * pi * &st.dbar;
    symmetrize(&mut rhat);
    (shat, rhat)
}

fn psi_full(pi: &DMatrix<f64>, p: &DMatrix<f64>, eta: &DVector<f64>, c: &RegimeCoeffs, st: &StackedCoeffs) -> DVector<f64> {
    st.b.transpose() * eta + st.d.transpose() * (p * &c.sigma) + st.dbar.transpose() * (pi * &c.sigmabar) + &st.rho
}

/// All blocks at one (s, i).
pub fn blocks(
    model: &GameModel,
    s: f64,
    i: usize,
    pi: &DMatrix<f64>,
    p: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> Result<BlockData> {
    let (c, w) = model.coeffs_at(s, i)?;
    Ok(blocks_with(c, w, model.gamma, model.dims.m, pi, p, eta))
}

pub fn blocks_with(
    c: &RegimeCoeffs,
    w: &RegimeWeights,
    gamma: f64,
    m: usize,
    pi: &DMatrix<f64>,
    p: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> BlockData {
    let st = stacked(c, w, gamma);
    let Core { sbar2, rbar2 } = pi_blocks(pi, c, w, gamma);
    let (shat, rhat) = hat_blocks(pi, p, c, &st);
    let psi_full = psi_full(pi, p, eta, c, &st);
    let k = psi_full.len() - m;
    let psibar = psi_full.rows(0, m).into_owned();
    let psi = psi_full.rows(m, k).into_owned();
    let mut out = BlockData {
        m,
        sbar2,
        rbar2,
        shat,
        rhat,
        psi_full,
        psi,
        psibar,
        phi: None,
        phibar: None,
        s2_closed: None,
    };
    let r11 = out.rhat11();
    let r12 = out.rhat12();
    let r22 = out.rhat22();
    if let Some(f22) = SymSolver::new(&r22) {
        out.phi = Some(&out.psibar - &r12 * f22.solve_vec(&out.psi));
        let schur = &r11 - &r12 * f22.solve(&r12.transpose());
        if let Some(fs) = SymSolver::new(&schur) {
            let x = out.shat1() - &r12 * f22.solve(&out.shat2());
            let theta1 = -fs.solve(&x);
            out.s2_closed = Some(out.shat2() + r12.transpose() * theta1);
        }
    }
    if let Some(f11) = SymSolver::new(&r11) {
        out.phibar = Some(&out.psi - r12.transpose() * f11.solve_vec(&out.psibar));
    }
    out
}

/// Residuals ‖ŜᵀR̂⁻¹Ŝ − form(i)‖_F and ‖ŜᵀR̂⁻¹Ŝ − form(ii)‖_F of the two block decompositions
///
/// form(i)  = Ŝ₂ᵀR̂₂₂⁻¹Ŝ₂ + (Ŝ₁ − R̂₁₂R̂₂₂⁻¹Ŝ₂)ᵀ(R̂₁₁ − R̂₁₂R̂₂₂⁻¹R̂₁₂ᵀ)⁻¹(Ŝ₁ − R̂₁₂R̂₂₂⁻¹Ŝ₂)
/// form(ii) = Ŝ₁ᵀR̂₁₁⁻¹Ŝ₁ + (Ŝ₂ − R̂₁₂ᵀR̂₁₁⁻¹Ŝ₁)ᵀ(R̂₂₂ − R̂₁₂ᵀR̂₁₁⁻¹R̂₁₂)⁻¹(Ŝ₂ − R̂₁₂ᵀR̂₁₁⁻¹Ŝ₁)
///
/// against a direct LU solve with the full R̂.
pub fn lemma42_identity_check(rhat: &DMatrix<f64>, shat: &DMatrix<f64>, m: usize) -> Result<(f64, f64)> {
    let k = rhat.nrows() - m;
    let singular = |what| Error::Singular { what, time: f64::NAN, regime: 0 };
    let full = shat.transpose() * rhat.clone().lu().solve(shat).ok_or_else(|| singular("Rhat"))?;
    let r11 = rhat.view((0, 0), (m, m)).into_owned();
    let r12 = rhat.view((0, m), (m, k)).into_owned();
    let r22 = rhat.view((m, m), (k, k)).into_owned();
    let s1 = shat.rows(0, m).into_owned();
    let s2 = shat.rows(m, k).into_owned();
    let lu = |a: &DMatrix<f64>, b: &DMatrix<f64>, what| a.clone().lu().solve(b).ok_or_else(|| singular(what));

    let x = &s1 - &r12 * lu(&r22, &s2, "Rhat22")?;
    let schur_i = &r11 - &r12 * lu(&r22, &r12.transpose(), "Rhat22")?;
    let form_i = s2.transpose() * lu(&r22, &s2, "Rhat22")? + x.transpose() * lu(&schur_i, &x, "Schur complement (I)")?;

    let y = &s2 - r12.transpose() * lu(&r11, &s1, "Rhat11")?;
    let schur_ii = &r22 - r12.transpose() * lu(&r11, &r12, "Rhat11")?;
    let form_ii = s1.transpose() * lu(&r11, &s1, "Rhat11")? + y.transpose() * lu(&schur_ii, &y, "Schur complement (II)")?;

    Ok(((&full - form_i).norm(), (&full - form_ii).norm()))
}

type Traj<T> = Vec<Vec<T>>;

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub gamma: f64,
    pub options: RiccatiOptions,
    /// `pi[node][regime]`
    pub pi: Traj<DMatrix<f64>>,
    pub p: Traj<DMatrix<f64>>,
    pub eta: Traj<DVector<f64>>,
    pub certificates: Traj<Margins>,
    /// Model segment used on each grid interval.
    pub interval_segments: Vec<usize>,
}

impl RiccatiSolution {
    /// Segment whose coefficients are attached to `node` (its right interval; the last interval at T).
    pub fn node_segment(&self, node: usize) -> usize {
        self.interval_segments[node.min(self.interval_segments.len() - 1)]
    }

    pub fn blocks_at(&self, model: &GameModel, node: usize, i: usize) -> BlockData {
        let seg = self.node_segment(node);
        blocks_with(
            model.coeffs(seg, i),
            model.weights(seg, i),
            self.gamma,
            model.dims.m,
            &self.pi[node][i],
            &self.p[node][i],
            &self.eta[node][i],
        )
    }

    /// Smallest required margin over all nodes and regimes.
    pub fn min_margin(&self) -> f64 {
        self.certificates
            .iter()
            .flatten()
            .map(|m| m.min_required(self.options.conditions))
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-node rows: s, regime, vec(Π), vec(P), η, margins.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let n = self.pi[0][0].nrows();
        let mut header = vec!["s".to_string(), "regime".to_string()];
        for name in ["Pi", "P"] {
            for c in 0..n {
                for r in 0..n {
                    header.push(format!("{name}_{}{}", r + 1, c + 1));
                }
            }
        }
        header.extend((0..n).map(|r| format!("eta_{}", r + 1)));
        header.extend(["margin_rbar2", "margin_r11", "margin_r22", "margin_schur_i", "margin_schur_ii"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for (k, s) in self.grid.nodes().iter().enumerate() {
            for i in 0..self.pi[k].len() {
                let mut row = vec![s.to_string(), (i + 1).to_string()];
                row.extend(self.pi[k][i].iter().map(f64::to_string));
                row.extend(self.p[k][i].iter().map(f64::to_string));
                row.extend(self.eta[k][i].iter().map(f64::to_string));
                let c = &self.certificates[k][i];
                row.extend([c.rbar2, c.r11, c.r22, c.schur_i, c.schur_ii].map(|x| x.to_string()));
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    /// Per-node certificate rows with the pass flag for the configured condition set.
    pub fn write_certificates_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "s,regime,rbar2,r11,r22,schur_i,schur_ii,min_required,pass")?;
        let (set, delta) = (self.options.conditions, self.options.delta_cond);
        for (k, s) in self.grid.nodes().iter().enumerate() {
            for (i, c) in self.certificates[k].iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    s,
                    i + 1,
                    c.rbar2,
                    c.r11,
                    c.r22,
                    c.schur_i,
                    c.schur_ii,
                    c.min_required(set),
                    c.violation(set, delta).is_none()
                )?;
            }
        }
        Ok(())
    }
}

/// Model segment used on each interval of `grid`.
pub fn interval_segments(model: &GameModel, grid: &TimeGrid) -> Vec<usize> {
    (0..grid.intervals()).map(|k| model.segment_index(grid.midpoint(k))).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Start,
    Mid,
    End,
}

/// One backward RK4 step from s_{k+1} to s_k; `f` returns d/ds of the state.
fn rk4_back<F>(y: &[DMatrix<f64>], h: f64, sym: bool, mut f: F) -> Result<Vec<DMatrix<f64>>>
where
    F: FnMut(Stage, &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>>,
{
    let axpy = |y: &[DMatrix<f64>], k: &[DMatrix<f64>], a: f64| -> Vec<DMatrix<f64>> {
        y.iter()
            .zip(k)
            .map(|(y, k)| {
                let mut out = y + k * a;
                if sym {
                    symmetrize(&mut out);
                }
                out
            })
            .collect()
    };
    let k1 = f(Stage::End, y)?;
    let k2 = f(Stage::Mid, &axpy(y, &k1, -0.5 * h))?;
    let k3 = f(Stage::Mid, &axpy(y, &k2, -0.5 * h))?;
    let k4 = f(Stage::Start, &axpy(y, &k3, -h))?;
    let incr: Vec<DMatrix<f64>> = (0..y.len()).map(|i| &k1[i] + (&k2[i] + &k3[i]) * 2.0 + &k4[i]).collect();
    Ok(axpy(y, &incr, -h / 6.0))
}

/// Cubic Hermite value at the interval midpoint.
fn hermite_mid(y0: &DMatrix<f64>, y1: &DMatrix<f64>, d0: &DMatrix<f64>, d1: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    (y0 + y1) * 0.5 + (d0 - d1) * (h / 8.0)
}

struct Ctx<'a> {
    model: &'a GameModel,
    seg: usize,
    gamma: f64,
}

impl<'a> Ctx<'a> {
    fn c(&self, i: usize) -> &'a RegimeCoeffs {
        self.model.coeffs(self.seg, i)
    }
    fn w(&self, i: usize) -> &'a RegimeWeights {
        self.model.weights(self.seg, i)
    }
    fn st(&self, i: usize) -> StackedCoeffs {
        stacked(self.c(i), self.w(i), self.gamma)
    }
    fn lambda(&self) -> &'a DMatrix<f64> {
        self.model.generator.lambda()
    }
    fn coupling(&self, i: usize, y: &[DMatrix<f64>]) -> DMatrix<f64> {
        let lam = self.lambda();
        let mut out = DMatrix::zeros(y[i].nrows(), y[i].ncols());
        for (j, yj) in y.iter().enumerate() {
            out += yj * lam[(i, j)];
        }
        out
    }
}

fn singular(what: &'static str, time: f64, regime: usize) -> Error {
    Error::Singular { what, time, regime }
}

/// dΠ/ds for all regimes.
fn pi_rhs(ctx: &Ctx, pi: &[DMatrix<f64>], s: f64) -> Result<Vec<DMatrix<f64>>> {
    (0..pi.len())
        .map(|i| {
            let (c, w) = (ctx.c(i), ctx.w(i));
            let p = &pi[i];
            let Core { sbar2, rbar2 } = pi_blocks(p, c, w, ctx.gamma);
            let solver = SymSolver::new(&rbar2).ok_or_else(|| singular("Rbar2", s, i))?;
            let f = p * &c.a + c.a.transpose() * p + c.c.transpose() * p * &c.c + c.cbar.transpose() * p * &c.cbar
                - sbar2.transpose() * solver.solve(&sbar2)
                + &w.q
                + ctx.coupling(i, pi);
            Ok(-f)
        })
        .collect()
}

/// dP/ds for all regimes.
fn p_rhs(ctx: &Ctx, form: PForm, pi: &[DMatrix<f64>], p: &[DMatrix<f64>], s: f64) -> Result<Vec<DMatrix<f64>>> {
    let m = ctx.model.dims.m;
    (0..p.len())
        .map(|i| {
            let (c, w) = (ctx.c(i), ctx.w(i));
            let st = ctx.st(i);
            let (pii, pi_i) = (&p[i], &pi[i]);
            let (shat, rhat) = hat_blocks(pi_i, pii, c, &st);
            let common = c.cbar.transpose() * pi_i * &c.cbar + &w.q + ctx.coupling(i, p);
            let f = match form {
                PForm::Full => {
                    let fac = BlockFactor::new(&rhat, m).ok_or_else(|| singular("Rhat", s, i))?;
                    pii * &c.a + c.a.transpose() * pii + c.c.transpose() * pii * &c.c - shat.transpose() * fac.solve(&shat)
                        + common
                }
                PForm::Rearranged => {
                    let k = rhat.nrows() - m;
                    let r11 = rhat.view((0, 0), (m, m)).into_owned();
                    let r12 = rhat.view((0, m), (m, k)).into_owned();
                    let r22 = rhat.view((m, m), (k, k)).into_owned();
                    let s1 = shat.rows(0, m).into_owned();
                    let s2 = shat.rows(m, k).into_owned();
                    let f22 = SymSolver::new(&r22).ok_or_else(|| singular("Rhat22", s, i))?;
                    let schur = &r11 - &r12 * f22.solve(&r12.transpose());
                    let fs = SymSolver::new(&schur).ok_or_else(|| singular("Schur complement (I)", s, i))?;
                    let theta1 = -fs.solve(&(&s1 - &r12 * f22.solve(&s2)));
                    let s2c = &s2 + r12.transpose() * &theta1;
                    let acl = &c.a + &c.b1 * &theta1;
                    let ccl = &c.c + &c.d1 * &theta1;
                    let cbcl = &c.cbar + &c.d1bar * &theta1;
                    let ts1 = theta1.transpose() * &w.s1;
                    pii * &acl + acl.transpose() * pii + ccl.transpose() * pii * &ccl + cbcl.transpose() * pi_i * &cbcl
                        - c.cbar.transpose() * pi_i * &c.cbar
                        + theta1.transpose() * &w.r1 * &theta1
                        + &ts1
                        + ts1.transpose()
                        - s2c.transpose() * f22.solve(&s2c)
                        + common
                }
            };
            Ok(-f)
        })
        .collect()
}

/// dη/ds for all regimes (η stored as n×1 matrices).
fn eta_rhs(
    ctx: &Ctx,
    form: EtaForm,
    pi: &[DMatrix<f64>],
    p: &[DMatrix<f64>],
    eta: &[DMatrix<f64>],
    s: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let m = ctx.model.dims.m;
    (0..eta.len())
        .map(|i| {
            let (c, w) = (ctx.c(i), ctx.w(i));
            let st = ctx.st(i);
            let (pii, pi_i) = (&p[i], &pi[i]);
            let e = DVector::from_column_slice(eta[i].as_slice());
            let (shat, rhat) = hat_blocks(pi_i, pii, c, &st);
            let p_sigma = pii * &c.sigma;
            let pi_sigmabar = pi_i * &c.sigmabar;
            let coupling = ctx.coupling(i, eta);
            let coupling = DVector::from_column_slice(coupling.as_slice());
            let forcing = pii * &c.b + &w.q_lin + coupling;
            let k = rhat.nrows() - m;
            let f: DVector<f64> = match form {
                EtaForm::Compact => {
                    let fac = BlockFactor::new(&rhat, m).ok_or_else(|| singular("Rhat", s, i))?;
                    let theta = -fac.solve(&shat);
                    (&c.a + &st.b * &theta).transpose() * &e
                        + (&c.c + &st.d * &theta).transpose() * &p_sigma
                        + (&c.cbar + &st.dbar * &theta).transpose() * &pi_sigmabar
                        + theta.transpose() * &st.rho
                        + forcing
                }
                EtaForm::ControlFirst | EtaForm::DisturbanceFirst => {
                    let psi_all = psi_full(pi_i, pii, &e, c, &st);
                    let psibar = psi_all.rows(0, m).into_owned();
                    let psi = psi_all.rows(m, k).into_owned();
                    let r11 = rhat.view((0, 0), (m, m)).into_owned();
                    let r12 = rhat.view((0, m), (m, k)).into_owned();
                    let r22 = rhat.view((m, m), (k, k)).into_owned();
                    let s1 = shat.rows(0, m).into_owned();
                    let s2 = shat.rows(m, k).into_owned();
                    let base = c.a.transpose() * &e + c.c.transpose() * &p_sigma + c.cbar.transpose() * &pi_sigmabar + forcing;
                    if form == EtaForm::ControlFirst {
                        let f22 = SymSolver::new(&r22).ok_or_else(|| singular("Rhat22", s, i))?;
                        let schur = &r11 - &r12 * f22.solve(&r12.transpose());
                        let fs = SymSolver::new(&schur).ok_or_else(|| singular("Schur complement (I)", s, i))?;
                        let phi = &psibar - &r12 * f22.solve_vec(&psi);
                        let x = &s1 - &r12 * f22.solve(&s2);
                        base - s2.transpose() * f22.solve_vec(&psi) - x.transpose() * fs.solve_vec(&phi)
                    } else {
                        let f11 = SymSolver::new(&r11).ok_or_else(|| singular("Rhat11", s, i))?;
                        let schur = &r22 - r12.transpose() * f11.solve(&r12);
                        let fs = SymSolver::new(&schur).ok_or_else(|| singular("Schur complement (II)", s, i))?;
                        let phibar = &psi - r12.transpose() * f11.solve_vec(&psibar);
                        let y = &s2 - r12.transpose() * f11.solve(&s1);
                        base - s1.transpose() * f11.solve_vec(&psibar) - y.transpose() * fs.solve_vec(&phibar)
                    }
                }
            };
            Ok(-DMatrix::from_column_slice(f.len(), 1, f.as_slice()))
        })
        .collect()
}

fn check_finite(y: &[DMatrix<f64>], time: f64) -> Result<()> {
    match y.iter().position(|m| !is_finite(m)) {
        Some(regime) => Err(Error::NonFiniteValue { time, regime }),
        None => Ok(()),
    }
}

fn node_seg(segs: &[usize], node: usize) -> usize {
    segs[node.min(segs.len() - 1)]
}

fn check_grid(model: &GameModel, grid: &TimeGrid) -> Result<()> {
    if grid.end() != model.horizon() || grid.start() < 0.0 {
        return Err(Error::OutOfRange {
            what: "grid",
            detail: format!("grid [{}, {}] must end at T = {}", grid.start(), grid.end(), model.horizon()),
        });
    }
    Ok(())
}

/// Π(·, i) for all regimes, `[node][regime]`. Fails at the first node where R̄₂ ≪ 0 is lost.
pub fn solve_pi(model: &GameModel, grid: &TimeGrid, opts: &RiccatiOptions) -> Result<Traj<DMatrix<f64>>> {
    check_grid(model, grid)?;
    let segs = interval_segments(model, grid);
    let nodes = grid.nodes();
    let kk = grid.intervals();
    let d = model.n_regimes();
    let mut out = vec![Vec::new(); kk + 1];
    out[kk] = model.terminal.iter().map(|t| t.g.clone()).collect();
    let check_at = |y: &[DMatrix<f64>], seg: usize, node: usize, time: f64| -> Result<()> {
        check_finite(y, time)?;
        for i in 0..d {
            let core = pi_blocks(&y[i], model.coeffs(seg, i), model.weights(seg, i), model.gamma);
            let margin = -eig_range(&core.rbar2).1;
            if !(margin >= opts.delta_cond) {
                return Err(Error::ConditionViolation { condition: "Rbar2 << 0", node, time, regime: i, margin });
            }
        }
        Ok(())
    };
    let check = |y: &[DMatrix<f64>], node: usize| check_at(y, node_seg(&segs, node), node, nodes[node]);
    check(&out[kk], kk)?;
    for k in (0..kk).rev() {
        let ctx = Ctx { model, seg: segs[k], gamma: model.gamma };
        let (s0, s1) = (nodes[k], nodes[k + 1]);
        let h = s1 - s0;
        let next = rk4_back(&out[k + 1], h, true, |stage, y| {
            let s = match stage {
                Stage::Start => s0,
                Stage::Mid => 0.5 * (s0 + s1),
                Stage::End => s1,
            };
            // a step can jump across a finite escape, so stage states are certified as well
            if stage != Stage::End {
                check_at(y, segs[k], k, s)?;
            }
            pi_rhs(&ctx, y, s)
        })?;
        check(&next, k)?;
        out[k] = next;
    }
    Ok(out)
}

fn pi_interval(ctx: &Ctx, pi: &Traj<DMatrix<f64>>, k: usize, h: f64, s0: f64, s1: f64) -> Result<[Vec<DMatrix<f64>>; 3]> {
    let d0 = pi_rhs(ctx, &pi[k], s0)?;
    let d1 = pi_rhs(ctx, &pi[k + 1], s1)?;
    let mid = (0..pi[k].len()).map(|i| hermite_mid(&pi[k][i], &pi[k + 1][i], &d0[i], &d1[i], h)).collect();
    Ok([pi[k].clone(), mid, pi[k + 1].clone()])
}

fn pick<T>(v: &[T; 3], stage: Stage) -> &T {
    match stage {
        Stage::Start => &v[0],
        Stage::Mid => &v[1],
        Stage::End => &v[2],
    }
}

/// P(·, i) for all regimes given Π on the same grid; enforces `opts.conditions` at every node
/// and RK4 stage.
pub fn solve_p(
    model: &GameModel,
    grid: &TimeGrid,
    pi: &Traj<DMatrix<f64>>,
    form: PForm,
    opts: &RiccatiOptions,
) -> Result<Traj<DMatrix<f64>>> {
    check_grid(model, grid)?;
    let segs = interval_segments(model, grid);
    let nodes = grid.nodes();
    let kk = grid.intervals();
    let d = model.n_regimes();
    let zero_eta = DVector::zeros(model.dims.n);
    let mut out = vec![Vec::new(); kk + 1];
    out[kk] = model.terminal.iter().map(|t| t.g.clone()).collect();
    let check_at = |y: &[DMatrix<f64>], pi: &[DMatrix<f64>], seg: usize, node: usize, time: f64| -> Result<()> {
        check_finite(y, time)?;
        for i in 0..d {
            let b = blocks_with(model.coeffs(seg, i), model.weights(seg, i), model.gamma, model.dims.m, &pi[i], &y[i], &zero_eta);
            if let Some((condition, margin)) = Margins::from_blocks(&b).violation(opts.conditions, opts.delta_cond) {
                return Err(Error::ConditionViolation { condition, node, time, regime: i, margin });
            }
        }
        Ok(())
    };
    let check = |y: &[DMatrix<f64>], node: usize| check_at(y, &pi[node], node_seg(&segs, node), node, nodes[node]);
    check(&out[kk], kk)?;
    for k in (0..kk).rev() {
        let ctx = Ctx { model, seg: segs[k], gamma: model.gamma };
        let (s0, s1) = (nodes[k], nodes[k + 1]);
        let h = s1 - s0;
        let pis = pi_interval(&ctx, pi, k, h, s0, s1)?;
        let next = rk4_back(&out[k + 1], h, true, |stage, y| {
            let s = [s0, 0.5 * (s0 + s1), s1][stage as usize];
            if stage != Stage::End {
                check_at(y, pick(&pis, stage), segs[k], k, s)?;
            }
            p_rhs(&ctx, form, pick(&pis, stage), y, s)
        })?;
        check(&next, k)?;
        out[k] = next;
    }
    Ok(out)
}

/// η(·, i) for all regimes given Π and P on the same grid.
pub fn solve_eta(
    model: &GameModel,
    grid: &TimeGrid,
    pi: &Traj<DMatrix<f64>>,
    p: &Traj<DMatrix<f64>>,
    form: EtaForm,
) -> Result<Traj<DVector<f64>>> {
    check_grid(model, grid)?;
    let segs = interval_segments(model, grid);
    let nodes = grid.nodes();
    let kk = grid.intervals();
    let n = model.dims.n;
    let as_col = |v: &DVector<f64>| DMatrix::from_column_slice(n, 1, v.as_slice());
    let mut cur: Vec<DMatrix<f64>> = model.terminal.iter().map(|t| as_col(&t.g_lin)).collect();
    let mut out = vec![Vec::new(); kk + 1];
    out[kk] = model.terminal.iter().map(|t| t.g_lin.clone()).collect();
    for k in (0..kk).rev() {
        let ctx = Ctx { model, seg: segs[k], gamma: model.gamma };
        let (s0, s1) = (nodes[k], nodes[k + 1]);
        let h = s1 - s0;
        let pis = pi_interval(&ctx, pi, k, h, s0, s1)?;
        let dp0 = p_rhs(&ctx, PForm::Full, &pi[k], &p[k], s0)?;
        let dp1 = p_rhs(&ctx, PForm::Full, &pi[k + 1], &p[k + 1], s1)?;
        let pmid = (0..p[k].len()).map(|i| hermite_mid(&p[k][i], &p[k + 1][i], &dp0[i], &dp1[i], h)).collect();
        let ps = [p[k].clone(), pmid, p[k + 1].clone()];
        cur = rk4_back(&cur, h, false, |stage, y| {
            let s = [s0, 0.5 * (s0 + s1), s1][stage as usize];
            eta_rhs(&ctx, form, pick(&pis, stage), pick(&ps, stage), y, s)
        })?;
        check_finite(&cur, s0)?;
        out[k] = cur.iter().map(|m| DVector::from_column_slice(m.as_slice())).collect();
    }
    Ok(out)
}

/// Π, P (full form), η (compact form) and node certificates.
pub fn solve_all(model: &GameModel, grid: &TimeGrid, opts: &RiccatiOptions) -> Result<RiccatiSolution> {
    let pi = solve_pi(model, grid, opts)?;
    let p = solve_p(model, grid, &pi, PForm::Full, opts)?;
    let eta = solve_eta(model, grid, &pi, &p, EtaForm::Compact)?;
    let interval_segments = interval_segments(model, grid);
    let mut sol = RiccatiSolution {
        grid: grid.clone(),
        gamma: model.gamma,
        options: *opts,
        pi,
        p,
        eta,
        certificates: Vec::new(),
        interval_segments,
    };
    sol.certificates = (0..=grid.intervals())
        .map(|k| (0..model.n_regimes()).map(|i| Margins::from_blocks(&sol.blocks_at(model, k, i))).collect())
        .collect();
    Ok(sol)
}
