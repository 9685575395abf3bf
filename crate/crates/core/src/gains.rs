//! Saddle-point feedback gains and the player-wise control-strategy pairs.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{stack, stack_vec, BlockFactor, SymSolver};
use crate::model::GameModel;
use crate::riccati::{blocks_with, BlockData, RiccatiSolution};

/// Matrix-valued function of (s, i) stored at both ends of every grid interval and
/// linearly interpolated inside. Keeping both ends separate lets the function jump
/// at coefficient breakpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalTable {
    rows: usize,
    cols: usize,
    regimes: usize,
    left: Vec<DMatrix<f64>>,
    right: Vec<DMatrix<f64>>,
}

impl IntervalTable {
    fn new(rows: usize, cols: usize, regimes: usize, intervals: usize) -> Self {
        let z = DMatrix::zeros(rows, cols);
        Self { rows, cols, regimes, left: vec![z.clone(); intervals * regimes], right: vec![z; intervals * regimes] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn intervals(&self) -> usize {
        self.left.len() / self.regimes
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn left(&self, k: usize, i: usize) -> &DMatrix<f64> {
        &self.left[k * self.regimes + i]
    }

    pub fn right(&self, k: usize, i: usize) -> &DMatrix<f64> {
        &self.right[k * self.regimes + i]
    }

    /// Value at a grid node (from the interval starting there; the last interval at T).
    pub fn at_node(&self, node: usize, i: usize) -> &DMatrix<f64> {
        if node < self.intervals() {
            self.left(node, i)
        } else {
            self.right(node - 1, i)
        }
    }

    pub fn eval(&self, k: usize, w: f64, i: usize) -> DMatrix<f64> {
        self.left(k, i) * (1.0 - w) + self.right(k, i) * w
    }

    /// `out += scale · M(k, w, i) · x` without allocating.
    #[inline]
    pub fn apply_acc(&self, k: usize, w: f64, i: usize, scale: f64, x: &[f64], out: &mut [f64]) {
        let l = self.left[k * self.regimes + i].as_slice();
        let r = self.right[k * self.regimes + i].as_slice();
        let (a, b) = (scale * (1.0 - w), scale * w);
        for c in 0..self.cols {
            let xc = x[c];
            let base = c * self.rows;
            for (row, o) in out.iter_mut().enumerate().take(self.rows) {
                *o += (a * l[base + row] + b * r[base + row]) * xc;
            }
        }
    }

    /// `out += scale · m(k, w, i)` for column tables.
    #[inline]
    pub fn add_col(&self, k: usize, w: f64, i: usize, scale: f64, out: &mut [f64]) {
        let l = self.left[k * self.regimes + i].as_slice();
        let r = self.right[k * self.regimes + i].as_slice();
        let (a, b) = (scale * (1.0 - w), scale * w);
        for (row, o) in out.iter_mut().enumerate().take(self.rows) {
            *o += a * l[row] + b * r[row];
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.left.iter().chain(&self.right).map(|m| m.amax()).fold(0.0, f64::max)
    }
}

/// Closed-loop saddle point: Θ̂* = −R̂⁻¹Ŝ (split into Θ̂₁*, Θ̂₂*), Θ̃₂* = −R̄₂⁻¹S̄₂,
/// v̄* = −R̂⁻¹Ψ (split into v₁*, v₂*).
#[derive(Clone, Debug)]
pub struct SaddleGains {
    pub grid: TimeGrid,
    pub gamma: f64,
    pub theta_hat1: IntervalTable,
    pub theta_hat2: IntervalTable,
    pub theta_tilde2: IntervalTable,
    pub v1: IntervalTable,
    pub v2: IntervalTable,
}

impl SaddleGains {
    pub fn regimes(&self) -> usize {
        self.theta_hat1.regimes()
    }

    /// Θ̂*(s_node, i) as the stacked (m+n_v)×n matrix.
    pub fn theta_hat(&self, node: usize, i: usize) -> DMatrix<f64> {
        stack(self.theta_hat1.at_node(node, i), self.theta_hat2.at_node(node, i))
    }

    pub fn vbar(&self, node: usize, i: usize) -> DVector<f64> {
        let a = DVector::from_column_slice(self.v1.at_node(node, i).as_slice());
        let b = DVector::from_column_slice(self.v2.at_node(node, i).as_slice());
        stack_vec(&a, &b)
    }

    pub fn theta_tilde2(&self, node: usize, i: usize) -> &DMatrix<f64> {
        self.theta_tilde2.at_node(node, i)
    }

    /// Rows `s, regime, vec(Θ̂₁*), vec(Θ̂₂*), vec(Θ̃₂*), v̄*` at every node.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = vec!["s".to_string(), "regime".to_string()];
        for (name, t) in [("theta_hat1", &self.theta_hat1), ("theta_hat2", &self.theta_hat2), ("theta_tilde2", &self.theta_tilde2)] {
            let (r, c) = t.shape();
            for cc in 0..c {
                for rr in 0..r {
                    header.push(format!("{name}_{}{}", rr + 1, cc + 1));
                }
            }
        }
        header.extend((0..self.v1.shape().0).map(|r| format!("v1_{}", r + 1)));
        header.extend((0..self.v2.shape().0).map(|r| format!("v2_{}", r + 1)));
        writeln!(w, "{}", header.join(","))?;
        for (k, s) in self.grid.nodes().iter().enumerate() {
            for i in 0..self.regimes() {
                let mut row = vec![s.to_string(), (i + 1).to_string()];
                for t in [&self.theta_hat1, &self.theta_hat2, &self.theta_tilde2, &self.v1, &self.v2] {
                    row.extend(t.at_node(k, i).iter().map(f64::to_string));
                }
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

fn singular(what: &'static str, time: f64, regime: usize) -> Error {
    Error::Singular { what, time, regime }
}

fn node_blocks(sol: &RiccatiSolution, model: &GameModel, seg: usize, node: usize, i: usize) -> BlockData {
    blocks_with(
        model.coeffs(seg, i),
        model.weights(seg, i),
        sol.gamma,
        model.dims.m,
        &sol.pi[node][i],
        &sol.p[node][i],
        &sol.eta[node][i],
    )
}

/// Saddle gains at both ends of every interval by block solves against R̂ and R̄₂.
pub fn synthesize(sol: &RiccatiSolution, model: &GameModel) -> Result<SaddleGains> {
    let (n, m, k) = (model.dims.n, model.dims.m, model.dims.n_v);
    let d = model.n_regimes();
    let kk = sol.grid.intervals();
    let nodes = sol.grid.nodes();
    let mut out = SaddleGains {
        grid: sol.grid.clone(),
        gamma: sol.gamma,
        theta_hat1: IntervalTable::new(m, n, d, kk),
        theta_hat2: IntervalTable::new(k, n, d, kk),
        theta_tilde2: IntervalTable::new(k, n, d, kk),
        v1: IntervalTable::new(m, 1, d, kk),
        v2: IntervalTable::new(k, 1, d, kk),
    };
    for iv in 0..kk {
        let seg = sol.interval_segments[iv];
        for i in 0..d {
            for (end, node) in [(0, iv), (1, iv + 1)] {
                let b = node_blocks(sol, model, seg, node, i);
                let fac = BlockFactor::new(&b.rhat, m).ok_or_else(|| singular("Rhat", nodes[node], i))?;
                let theta = -fac.solve(&b.shat);
                let vbar = -fac.solve_vec(&b.psi_full);
                let rbar = SymSolver::new(&b.rbar2).ok_or_else(|| singular("Rbar2", nodes[node], i))?;
                let tilde = -rbar.solve(&b.sbar2);
                let idx = iv * d + i;
                let put = |t: &mut IntervalTable, v: DMatrix<f64>| {
                    if end == 0 {
                        t.left[idx] = v;
                    } else {
                        t.right[idx] = v;
                    }
                };
                put(&mut out.theta_hat1, theta.rows(0, m).into_owned());
                put(&mut out.theta_hat2, theta.rows(m, k).into_owned());
                put(&mut out.theta_tilde2, tilde);
                put(&mut out.v1, DMatrix::from_column_slice(m, 1, &vbar.as_slice()[..m]));
                put(&mut out.v2, DMatrix::from_column_slice(k, 1, &vbar.as_slice()[m..]));
            }
        }
    }
    Ok(out)
}

/// Largest node-wise saddle residuals, each scaled by 1 + ‖right-hand side‖_F:
/// ‖R̂Θ̂* + Ŝ‖, ‖R̄₂Θ̃₂* + S̄₂‖, ‖R̂v̄* + Ψ‖.
pub fn saddle_residuals(gains: &SaddleGains, sol: &RiccatiSolution, model: &GameModel) -> (f64, f64, f64) {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for node in 0..=sol.grid.intervals() {
        for i in 0..model.n_regimes() {
            let b = sol.blocks_at(model, node, i);
            let r1 = (&b.rhat * gains.theta_hat(node, i) + &b.shat).norm() / (1.0 + b.shat.norm());
            let r2 = (&b.rbar2 * gains.theta_tilde2(node, i) + &b.sbar2).norm() / (1.0 + b.sbar2.norm());
            let r3 = (&b.rhat * gains.vbar(node, i) + &b.psi_full).norm() / (1.0 + b.psi_full.norm());
            worst = (worst.0.max(r1), worst.1.max(r2), worst.2.max(r3));
        }
    }
    worst
}

/// Affine feedback `x̂ ↦ gain·x̂ + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

/// Minimizer-first pair at one node: u* = −Σ_I⁻¹[(Ŝ₁ − R̂₁₂R̂₂₂⁻¹Ŝ₂)x̂ + φ] with
/// Σ_I = R̂₁₁ − R̂₁₂R̂₂₂⁻¹R̂₁₂ᵀ, the response α̂₂*(u) = −R̂₂₂⁻¹[R̂₁₂ᵀu + Ŝ₂x̂ + ψ], and ṽ* = Θ̃₂*x̃.
#[derive(Clone, Debug)]
pub struct Player1Node {
    pub control: Affine,
    /// Coefficient of u in α̂₂*(u).
    pub resp_u: DMatrix<f64>,
    /// Coefficient of x̂ in α̂₂*(u).
    pub resp_x: DMatrix<f64>,
    pub resp_offset: DVector<f64>,
    pub tilde_gain: DMatrix<f64>,
}

impl Player1Node {
    /// v̂ induced by substituting u* into the response strategy.
    pub fn induced_vhat(&self) -> Affine {
        Affine {
            gain: &self.resp_u * &self.control.gain + &self.resp_x,
            offset: &self.resp_u * &self.control.offset + &self.resp_offset,
        }
    }
}

/// Maximizer-first pair at one node: α₁*(v̂) = −R̂₁₁⁻¹[R̂₁₂v̂ + Ŝ₁x̂ + ψ̄],
/// v̂* = −Σ_II⁻¹[(Ŝ₂ − R̂₁₂ᵀR̂₁₁⁻¹Ŝ₁)x̂ + φ̄] with Σ_II = R̂₂₂ − R̂₁₂ᵀR̂₁₁⁻¹R̂₁₂, and ṽ* = Θ̃₂*x̃.
#[derive(Clone, Debug)]
pub struct Player2Node {
    pub disturbance: Affine,
    /// Coefficient of v̂ in α₁*(v̂).
    pub resp_v: DMatrix<f64>,
    /// Coefficient of x̂ in α₁*(v̂).
    pub resp_x: DMatrix<f64>,
    pub resp_offset: DVector<f64>,
    pub tilde_gain: DMatrix<f64>,
}

impl Player2Node {
    /// u induced by substituting v̂* into the response strategy.
    pub fn induced_u(&self) -> Affine {
        Affine {
            gain: &self.resp_v * &self.disturbance.gain + &self.resp_x,
            offset: &self.resp_v * &self.disturbance.offset + &self.resp_offset,
        }
    }
}

fn tilde_gain(b: &BlockData, time: f64, i: usize) -> Result<DMatrix<f64>> {
    let f = SymSolver::new(&b.rbar2).ok_or_else(|| singular("Rbar2", time, i))?;
    Ok(-f.solve(&b.sbar2))
}

pub fn player1_node(b: &BlockData, time: f64, i: usize) -> Result<Player1Node> {
    let (r11, r12, r22) = (b.rhat11(), b.rhat12(), b.rhat22());
    let (s1, s2) = (b.shat1(), b.shat2());
    let f22 = SymSolver::new(&r22).ok_or_else(|| singular("Rhat22", time, i))?;
    let schur = &r11 - &r12 * f22.solve(&r12.transpose());
    let fs = SymSolver::new(&schur).ok_or_else(|| singular("Schur complement (I)", time, i))?;
    let x = &s1 - &r12 * f22.solve(&s2);
    let phi = &b.psibar - &r12 * f22.solve_vec(&b.psi);
    Ok(Player1Node {
        control: Affine { gain: -fs.solve(&x), offset: -fs.solve_vec(&phi) },
        resp_u: -f22.solve(&r12.transpose()),
        resp_x: -f22.solve(&s2),
        resp_offset: -f22.solve_vec(&b.psi),
        tilde_gain: tilde_gain(b, time, i)?,
    })
}

pub fn player2_node(b: &BlockData, time: f64, i: usize) -> Result<Player2Node> {
    let (r11, r12, r22) = (b.rhat11(), b.rhat12(), b.rhat22());
    let (s1, s2) = (b.shat1(), b.shat2());
    let f11 = SymSolver::new(&r11).ok_or_else(|| singular("Rhat11", time, i))?;
    let schur = &r22 - r12.transpose() * f11.solve(&r12);
    let fs = SymSolver::new(&schur).ok_or_else(|| singular("Schur complement (II)", time, i))?;
    let y = &s2 - r12.transpose() * f11.solve(&s1);
    let phibar = &b.psi - r12.transpose() * f11.solve_vec(&b.psibar);
    Ok(Player2Node {
        disturbance: Affine { gain: -fs.solve(&y), offset: -fs.solve_vec(&phibar) },
        resp_v: -f11.solve(&r12),
        resp_x: -f11.solve(&s1),
        resp_offset: -f11.solve_vec(&b.psibar),
        tilde_gain: tilde_gain(b, time, i)?,
    })
}

/// Minimizer-first pair at every node, `[node][regime]`.
pub fn player1_pair(sol: &RiccatiSolution, model: &GameModel) -> Result<Vec<Vec<Player1Node>>> {
    let nodes = sol.grid.nodes();
    (0..nodes.len())
        .map(|k| (0..model.n_regimes()).map(|i| player1_node(&sol.blocks_at(model, k, i), nodes[k], i)).collect())
        .collect()
}

/// Maximizer-first pair at every node, `[node][regime]`.
pub fn player2_pair(sol: &RiccatiSolution, model: &GameModel) -> Result<Vec<Vec<Player2Node>>> {
    let nodes = sol.grid.nodes();
    (0..nodes.len())
        .map(|k| (0..model.n_regimes()).map(|i| player2_node(&sol.blocks_at(model, k, i), nodes[k], i)).collect())
        .collect()
}

/// Solves R̂ [u; v̂] + Ŝx̂ + Ψ = 0 by a direct LU solve.
pub fn algebraic_system_solve(
    rhat: &DMatrix<f64>,
    shat: &DMatrix<f64>,
    offsets: &DVector<f64>,
    xhat: &DVector<f64>,
    m: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let rhs = -(shat * xhat + offsets);
    let z = rhat
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|z| z.iter().all(|x| x.is_finite()))
        .ok_or_else(|| singular("Rhat", f64::NAN, 0))?;
    let k = z.len() - m;
    Ok((z.rows(0, m).into_owned(), z.rows(m, k).into_owned()))
}

/// (u, v̂) affine maps of x̂ recovered from [`algebraic_system_solve`].
pub fn algebraic_affine(b: &BlockData, n: usize) -> Result<(Affine, Affine)> {
    let m = b.m;
    let (u0, v0) = algebraic_system_solve(&b.rhat, &b.shat, &b.psi_full, &DVector::zeros(n), m)?;
    let k = v0.len();
    let mut ug = DMatrix::zeros(m, n);
    let mut vg = DMatrix::zeros(k, n);
    for j in 0..n {
        let (u, v) = algebraic_system_solve(&b.rhat, &b.shat, &b.psi_full, &DVector::from_fn(n, |r, _| f64::from(r == j)), m)?;
        ug.set_column(j, &(u - &u0));
        vg.set_column(j, &(v - &v0));
    }
    Ok((Affine { gain: ug, offset: u0 }, Affine { gain: vg, offset: v0 }))
}

/// ‖a − b‖ / max(1, ‖b‖) over gain and offset together.
pub fn affine_discrepancy(a: &Affine, b: &Affine) -> f64 {
    let num = ((&a.gain - &b.gain).norm_squared() + (&a.offset - &b.offset).norm_squared()).sqrt();
    let den = (b.gain.norm_squared() + b.offset.norm_squared()).sqrt().max(1.0);
    num / den
}

/// Largest discrepancy between the two player pairs, the direct algebraic solve and
/// the saddle gains, over all nodes and regimes.
#[derive(Clone, Copy, Debug, Default)]
pub struct PairConsistency {
    pub player1_vs_algebraic: f64,
    pub player2_vs_algebraic: f64,
    pub player1_vs_player2: f64,
    pub saddle_vs_algebraic: f64,
}

impl PairConsistency {
    pub fn max(&self) -> f64 {
        self.player1_vs_algebraic
            .max(self.player2_vs_algebraic)
            .max(self.player1_vs_player2)
            .max(self.saddle_vs_algebraic)
    }
}

pub fn pair_consistency(sol: &RiccatiSolution, model: &GameModel, gains: &SaddleGains) -> Result<PairConsistency> {
    let p1 = player1_pair(sol, model)?;
    let p2 = player2_pair(sol, model)?;
    let m = model.dims.m;
    let mut out = PairConsistency::default();
    for node in 0..=sol.grid.intervals() {
        for i in 0..model.n_regimes() {
            let b = sol.blocks_at(model, node, i);
            let (ua, va) = algebraic_affine(&b, model.dims.n)?;
            let (a, c) = (&p1[node][i], &p2[node][i]);
            let (u1, v1) = (a.control.clone(), a.induced_vhat());
            let (u2, v2) = (c.induced_u(), c.disturbance.clone());
            let theta = gains.theta_hat(node, i);
            let vbar = gains.vbar(node, i);
            let us = Affine { gain: theta.rows(0, m).into_owned(), offset: vbar.rows(0, m).into_owned() };
            let vs = Affine { gain: theta.rows(m, theta.nrows() - m).into_owned(), offset: vbar.rows(m, vbar.len() - m).into_owned() };
            let upd = |x: &mut f64, v: f64| *x = x.max(v);
            upd(&mut out.player1_vs_algebraic, affine_discrepancy(&u1, &ua).max(affine_discrepancy(&v1, &va)));
            upd(&mut out.player2_vs_algebraic, affine_discrepancy(&u2, &ua).max(affine_discrepancy(&v2, &va)));
            upd(&mut out.player1_vs_player2, affine_discrepancy(&u1, &u2).max(affine_discrepancy(&v1, &v2)));
            upd(&mut out.saddle_vs_algebraic, affine_discrepancy(&us, &ua).max(affine_discrepancy(&vs, &va)));
        }
    }
    Ok(out)
}
