use crate::error::{Error, Result};

/// Integration grid `t = s_0 < … < s_K = T`: uniform, with coefficient breakpoints inserted.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    step: f64,
    /// Node indices that coincide with coefficient breakpoints.
    breaks: Vec<usize>,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, step: f64, breakpoints: &[f64]) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::OutOfRange { what: "step", detail: format!("step = {step} must be positive") });
        }
        if !(start < end) {
            return Err(Error::OutOfRange { what: "time", detail: format!("need start < end, got [{start}, {end}]") });
        }
        let span = end - start;
        let k = ((span / step - 1e-9).ceil() as usize).max(2);
        let h = span / k as f64;
        let mut nodes: Vec<f64> = (0..k).map(|j| start + j as f64 * h).collect();
        nodes.push(end);

        let mut inserted = Vec::new();
        for &b in breakpoints {
            if b <= start || b >= end {
                continue;
            }
            let pos = nodes.partition_point(|&x| x < b);
            let snap = 1e-9 * h;
            if (nodes[pos] - b).abs() <= snap {
                nodes[pos] = b;
            } else if pos > 0 && (b - nodes[pos - 1]).abs() <= snap {
                nodes[pos - 1] = b;
            } else {
                nodes.insert(pos, b);
            }
            inserted.push(b);
        }
        let breaks = inserted
            .iter()
            .map(|b| nodes.iter().position(|x| x == b).expect("inserted"))
            .collect();
        Ok(Self { nodes, step, breaks })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of intervals K.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.nodes[k] + self.nodes[k + 1])
    }

    pub fn is_breakpoint(&self, node: usize) -> bool {
        self.breaks.contains(&node)
    }

    /// Interval index and linear weight of `s`; right-continuous except at the end node.
    pub fn locate(&self, s: f64) -> Option<(usize, f64)> {
        if !(s >= self.start() && s <= self.end()) {
            return None;
        }
        let k = (self.nodes.partition_point(|&x| x <= s).max(1) - 1).min(self.intervals() - 1);
        let w = ((s - self.nodes[k]) / self.width(k)).clamp(0.0, 1.0);
        Some((k, w))
    }

    /// Index of the first node at or after `s`.
    pub fn node_at_or_after(&self, s: f64) -> usize {
        self.nodes.partition_point(|&x| x < s - 1e-12).min(self.intervals())
    }
}
