//! Fixed-dimension path kernel. Model coefficients and policy gains at grid nodes are
//! compiled into stack matrices once per batch; only steps that start or end at an
//! inserted jump time evaluate the policies dynamically.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::GameModel;
use crate::policy::{At, ControlPolicy, DisturbancePolicy};
use crate::sim::{PathCost, PathDraw, Snapshot};

type Mat<const R: usize, const C: usize> = SMatrix<f64, R, C>;
type Col<const R: usize> = SVector<f64, R>;

pub(crate) type Observer<'o> = Option<&'o mut dyn FnMut(usize, Snapshot<'_>)>;

pub(crate) trait Kernel: Send + Sync {
    fn run(&self, draw: &PathDraw, gamma: f64, out: &mut [PathCost], observe: Observer<'_>) -> Result<()>;
}

fn sm<const R: usize, const C: usize>(m: &DMatrix<f64>) -> Mat<R, C> {
    Mat::from_column_slice(m.as_slice())
}

fn sv<const R: usize>(v: &DVector<f64>) -> Col<R> {
    Col::from_column_slice(v.as_slice())
}

#[derive(Clone, Copy)]
struct Coeffs<const N: usize, const M: usize, const V: usize> {
    a: Mat<N, N>,
    b1: Mat<N, M>,
    b2: Mat<N, V>,
    c: Mat<N, N>,
    d1: Mat<N, M>,
    d2: Mat<N, V>,
    cbar: Mat<N, N>,
    d1bar: Mat<N, M>,
    d2bar: Mat<N, V>,
    b: Col<N>,
    sigma: Col<N>,
    sigmabar: Col<N>,
    q: Mat<N, N>,
    r1: Mat<M, M>,
    r2: Mat<V, V>,
    s1: Mat<M, N>,
    s2: Mat<V, N>,
    q_lin: Col<N>,
    rho1: Col<M>,
    rho2: Col<V>,
}

/// `u = ku x̂ + ou`, `v̂ = kh x̂ + ov`, `ṽ = kt x̃`.
#[derive(Clone, Copy)]
struct Affine<const N: usize, const M: usize, const V: usize> {
    ku: Mat<M, N>,
    ou: Col<M>,
    kh: Mat<V, N>,
    kt: Mat<V, N>,
    ov: Col<V>,
}

struct Pair<const N: usize, const M: usize, const V: usize> {
    /// `[(k·d + i)·2 + side]`, side 0 at the interval start, 1 at its end.
    nodes: Vec<Affine<N, M, V>>,
    control: ControlPolicy,
    dist: DisturbancePolicy,
}

impl<const N: usize, const M: usize, const V: usize> Pair<N, M, V> {
    fn affine(control: &ControlPolicy, dist: &DisturbancePolicy, at: &At) -> Affine<N, M, V> {
        let (ku, ou) = control.affine(at, M, N);
        let (kh, kt, ov) = dist.affine(at, V, N);
        Affine { ku: sm(&ku), ou: sv(&ou), kh: sm(&kh), kt: sm(&kt), ov: sv(&ov) }
    }
}

#[derive(Clone, Copy)]
struct State<const N: usize, const M: usize, const V: usize> {
    xh: Col<N>,
    xt: Col<N>,
    u: Col<M>,
    vh: Col<V>,
    vt: Col<V>,
    l: (f64, f64),
}

impl<const N: usize, const M: usize, const V: usize> State<N, M, V> {
    #[inline(always)]
    fn apply(&mut self, f: &Affine<N, M, V>) {
        self.u = f.ku * self.xh + f.ou;
        self.vh = f.kh * self.xh + f.ov;
        self.vt = f.kt * self.xt;
    }

    #[inline(always)]
    fn running(&self, c: &Coeffs<N, M, V>) -> (f64, f64) {
        let x = self.xh + self.xt;
        let (u, v) = (&self.u, self.vh + self.vt);
        let l = x.dot(&(c.q * x))
            + u.dot(&(c.r1 * u))
            + v.dot(&(c.r2 * v))
            + 2.0 * (u.dot(&(c.s1 * x)) + v.dot(&(c.s2 * x)))
            + 2.0 * (c.q_lin.dot(&x) + c.rho1.dot(u) + c.rho2.dot(&v));
        (l, v.dot(&v))
    }

    #[inline(always)]
    fn euler(&mut self, c: &Coeffs<N, M, V>, h: f64, dw: f64, dwbar: f64) {
        let x = self.xh + self.xt;
        let v = self.vh + self.vt;
        let dh = c.a * self.xh + c.b1 * self.u + c.b2 * self.vh + c.b;
        let gh = c.c * self.xh + c.d1 * self.u + c.d2 * self.vh + c.sigma;
        let dt = c.a * self.xt + c.b2 * self.vt;
        let gt = c.c * self.xt + c.d2 * self.vt;
        let gb = c.cbar * x + c.d1bar * self.u + c.d2bar * v + c.sigmabar;
        self.xh += dh * h + gh * dw;
        self.xt += dt * h + gt * dw + gb * dwbar;
    }

    fn snapshot(&self, s: f64, node: Option<usize>, regime: usize) -> Snapshot<'_> {
        Snapshot {
            s,
            node,
            regime,
            xhat: self.xh.as_slice(),
            xtilde: self.xt.as_slice(),
            u: self.u.as_slice(),
            vhat: self.vh.as_slice(),
            vtilde: self.vt.as_slice(),
        }
    }
}

struct StaticKernel<const N: usize, const M: usize, const V: usize> {
    coeffs: Vec<Coeffs<N, M, V>>,
    segments: Vec<usize>,
    d: usize,
    xi: Col<N>,
    terminal: Vec<(Mat<N, N>, Col<N>)>,
    pairs: Vec<Pair<N, M, V>>,
    end: f64,
    intervals: usize,
}

impl<const N: usize, const M: usize, const V: usize> StaticKernel<N, M, V> {
    fn new(model: &GameModel, grid: &TimeGrid, segments: &[usize], pairs: &[(ControlPolicy, DisturbancePolicy)]) -> Self {
        let d = model.n_regimes();
        let coeffs = model
            .segments
            .iter()
            .flat_map(|seg| seg.coeffs.iter().zip(&seg.weights))
            .map(|(c, w)| Coeffs {
                a: sm(&c.a),
                b1: sm(&c.b1),
                b2: sm(&c.b2),
                c: sm(&c.c),
                d1: sm(&c.d1),
                d2: sm(&c.d2),
                cbar: sm(&c.cbar),
                d1bar: sm(&c.d1bar),
                d2bar: sm(&c.d2bar),
                b: sv(&c.b),
                sigma: sv(&c.sigma),
                sigmabar: sv(&c.sigmabar),
                q: sm(&w.q),
                r1: sm(&w.r1),
                r2: sm(&w.r2),
                s1: sm(&w.s1),
                s2: sm(&w.s2),
                q_lin: sv(&w.q_lin),
                rho1: sv(&w.rho1),
                rho2: sv(&w.rho2),
            })
            .collect();
        let nodes = grid.nodes();
        let pairs = pairs
            .iter()
            .map(|(control, dist)| {
                let mut table = Vec::with_capacity(grid.intervals() * d * 2);
                for k in 0..grid.intervals() {
                    for i in 0..d {
                        for (s, w) in [(nodes[k], 0.0), (nodes[k + 1], 1.0)] {
                            table.push(Pair::affine(control, dist, &At { s, k, w, regime: i }));
                        }
                    }
                }
                Pair { nodes: table, control: control.clone(), dist: dist.clone() }
            })
            .collect();
        Self {
            coeffs,
            segments: segments.to_vec(),
            d,
            xi: sv(&model.xi),
            terminal: model.terminal.iter().map(|t| (sm(&t.g), sv(&t.g_lin))).collect(),
            pairs,
            end: grid.end(),
            intervals: grid.intervals(),
        }
    }
}

impl<const N: usize, const M: usize, const V: usize> Kernel for StaticKernel<N, M, V> {
    fn run(&self, draw: &PathDraw, gamma: f64, out: &mut [PathCost], mut observe: Observer<'_>) -> Result<()> {
        let g2 = gamma * gamma;
        let init = State { xh: self.xi, xt: Col::zeros(), u: Col::zeros(), vh: Col::zeros(), vt: Col::zeros(), l: (0.0, 0.0) };
        let mut states = vec![init; self.pairs.len()];
        out.fill(PathCost::default());
        let mut last = None;
        for st in &draw.steps {
            let (k, i) = (st.k as usize, st.regime as usize);
            let c = &self.coeffs[self.segments[k] * self.d + i];
            let base = (k * self.d + i) * 2;
            let h = st.s1 - st.s0;
            let node = st.node_index();
            for (p, ((pair, s), cost)) in self.pairs.iter().zip(states.iter_mut()).zip(out.iter_mut()).enumerate() {
                if st.fresh {
                    if node.is_some() {
                        s.apply(&pair.nodes[base]);
                    } else {
                        let at = At { s: st.s0, k, w: st.w0, regime: i };
                        s.apply(&Pair::affine(&pair.control, &pair.dist, &at));
                    }
                    s.l = s.running(c);
                }
                if let Some(f) = observe.as_mut() {
                    f(p, s.snapshot(st.s0, node, i));
                }
                s.euler(c, h, st.dw, st.dwbar);
                if st.end_node {
                    s.apply(&pair.nodes[base + 1]);
                } else {
                    let at = At { s: st.s1, k, w: st.w1, regime: i };
                    s.apply(&Pair::affine(&pair.control, &pair.dist, &at));
                }
                let l = s.running(c);
                let lp = s.l;
                cost.j += 0.5 * h * (lp.0 + l.0);
                cost.v_energy += 0.5 * h * (lp.1 + l.1);
                cost.j_gamma += 0.5 * h * ((lp.0 - g2 * lp.1) + (l.0 - g2 * l.1));
                s.l = l;
            }
            last = Some((st.s1, i));
        }
        let final_regime = draw.terminal_regime();
        let (g, g_lin) = &self.terminal[final_regime];
        for (p, (s, cost)) in states.iter().zip(out.iter_mut()).enumerate() {
            if let Some(f) = observe.as_mut() {
                let (t, regime) = last.unwrap_or((self.end, final_regime));
                f(p, s.snapshot(t, Some(self.intervals), regime));
            }
            let x = s.xh + s.xt;
            let tc = x.dot(&(g * x)) + 2.0 * g_lin.dot(&x);
            cost.j += tc;
            cost.j_gamma += tc;
            if !(cost.j.is_finite() && cost.j_gamma.is_finite() && cost.v_energy.is_finite()) {
                return Err(Error::NonFiniteValue { time: self.end, regime: final_regime });
            }
        }
        Ok(())
    }
}

/// A compiled kernel when the dimensions are small enough to be specialized.
pub(crate) fn compile(
    model: &GameModel,
    grid: &TimeGrid,
    segments: &[usize],
    pairs: &[(ControlPolicy, DisturbancePolicy)],
) -> Option<Box<dyn Kernel>> {
    let d = &model.dims;
    macro_rules! build {
        ($(($n:literal, $m:literal, $v:literal)),* $(,)?) => {
            match (d.n, d.m, d.n_v) {
                $(($n, $m, $v) => Some(Box::new(StaticKernel::<$n, $m, $v>::new(model, grid, segments, pairs)) as Box<dyn Kernel>),)*
                _ => None,
            }
        };
    }
    build!(
        (1, 1, 1), (1, 1, 2), (1, 2, 1), (1, 2, 2),
        (2, 1, 1), (2, 1, 2), (2, 2, 1), (2, 2, 2),
        (3, 1, 1), (3, 1, 2), (3, 2, 1), (3, 2, 2),
        (4, 1, 1), (4, 1, 2), (4, 2, 1), (4, 2, 2),
    )
}
