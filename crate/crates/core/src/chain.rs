//! Continuous-time Markov chain paths with exact (event-driven) jump sampling.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::Generator;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainPath {
    pub start: f64,
    pub end: f64,
    /// Strictly increasing jump times in `(start, end)`.
    pub jump_times: Vec<f64>,
    /// Visited regimes; `states[0]` is the initial regime, `states[k+1]` is entered at `jump_times[k]`.
    pub states: Vec<usize>,
    /// `counts[(i, j)]` = number of i → j transitions.
    pub counts: DMatrix<u32>,
}

impl ChainPath {
    pub fn constant(regime: usize, d: usize, start: f64, end: f64) -> Self {
        Self { start, end, jump_times: vec![], states: vec![regime], counts: DMatrix::zeros(d, d) }
    }

    /// α(s) (right-continuous), or α(s−) when `left` is set.
    pub fn regime_at(&self, s: f64, left: bool) -> Result<usize> {
        if !(s >= self.start && s <= self.end) {
            return Err(Error::OutOfRange {
                what: "time",
                detail: format!("s = {s} not in [{}, {}]", self.start, self.end),
            });
        }
        let k = if left {
            self.jump_times.partition_point(|&t| t < s)
        } else {
            self.jump_times.partition_point(|&t| t <= s)
        };
        Ok(self.states[k])
    }

    pub fn jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Time spent in each regime over `[start, end]`.
    pub fn occupancy(&self) -> DVector<f64> {
        let d = self.counts.nrows();
        let mut occ = DVector::zeros(d);
        let mut prev = self.start;
        for (k, &t) in self.jump_times.iter().enumerate() {
            occ[self.states[k]] += t - prev;
            prev = t;
        }
        occ[*self.states.last().unwrap()] += self.end - prev;
        occ
    }

    /// Compensated counts Ñ_ij(T) = N_ij(T) − λ_ij ∫ 1{α(s−) = i} ds (zero on the diagonal).
    pub fn compensated_counts(&self, generator: &Generator) -> DMatrix<f64> {
        let occ = self.occupancy();
        let lam = generator.lambda();
        DMatrix::from_fn(lam.nrows(), lam.ncols(), |i, j| {
            if i == j {
                0.0
            } else {
                self.counts[(i, j)] as f64 - lam[(i, j)] * occ[i]
            }
        })
    }

    /// Step-function samples `(time, regime)` with regimes 1-based.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time,regime")?;
        writeln!(w, "{},{}", self.start, self.states[0] + 1)?;
        for (k, &t) in self.jump_times.iter().enumerate() {
            writeln!(w, "{},{}", t, self.states[k] + 1)?;
            writeln!(w, "{},{}", t, self.states[k + 1] + 1)?;
        }
        writeln!(w, "{},{}", self.end, self.states.last().unwrap() + 1)
    }
}

/// Exact sampling: exponential holding times with rate |λ_ii|, jump to j with probability λ_ij/|λ_ii|.
pub fn sample_path<R: Rng + ?Sized>(generator: &Generator, i0: usize, start: f64, end: f64, rng: &mut R) -> ChainPath {
    let d = generator.d();
    assert!(i0 < d && start < end);
    let lam = generator.lambda();
    let mut path = ChainPath::constant(i0, d, start, end);
    let mut s = start;
    let mut i = i0;
    loop {
        let rate = generator.rate(i);
        let hold = Exp::new(rate).expect("positive rate").sample(rng);
        s += hold;
        if s >= end {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let mut next = i;
        for j in (0..d).filter(|&j| j != i) {
            next = j;
            u -= lam[(i, j)];
            if u < 0.0 {
                break;
            }
        }
        path.counts[(i, next)] += 1;
        path.jump_times.push(s);
        path.states.push(next);
        i = next;
    }
    path
}

/// exp(Λ·dt).
pub fn transition_matrix(generator: &Generator, dt: f64) -> DMatrix<f64> {
    assert!(dt >= 0.0);
    (generator.lambda() * dt).exp()
}

/// Stationary distribution π with πΛ = 0, Σπ = 1.
pub fn stationary_distribution(generator: &Generator) -> DVector<f64> {
    let d = generator.d();
    let mut a = generator.lambda().transpose();
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(d);
    rhs[d - 1] = 1.0;
    a.lu().solve(&rhs).expect("irreducible generator")
}
