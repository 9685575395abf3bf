//! Scenario documents (TOML).
//!
//! ```toml
//! gamma = 1.0
//! generator = [[-1.0, 1.0], [2.0, -2.0]]
//! [dims]
//! n = 1
//! m = 1
//! n_v = 1
//! D = 2
//! T = 3.5
//! [initial]
//! t = 0.0
//! xi = [1.0]
//! regime = 1            # 1-based
//! [[regime]]
//! A = [[0.1]]
//! B1 = 0.3              # bare numbers are accepted for 1x1 data
//! Q = { breaks = [1.0], values = [0.3, 0.4] }   # piecewise constant in time
//! # ... remaining matrices; b, sigma, sigmabar, q, rho1, rho2, g default to zero
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{validate, Dims, GameModel, Generator, RegimeCoeffs, RegimeWeights, Segment, Terminal, DEFAULT_DELTA};

pub const EXAMPLE_SCENARIO: &str = include_str!("../scenarios/example_sec5.toml");
pub const ZERO_SCENARIO: &str = include_str!("../scenarios/zero_scenario.toml");

/// Bundled scenarios addressable by file name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "example_sec5.toml" => Some(EXAMPLE_SCENARIO),
        "zero_scenario.toml" => Some(ZERO_SCENARIO),
        _ => None,
    }
}

pub fn example_model() -> GameModel {
    load_scenario(EXAMPLE_SCENARIO).expect("bundled scenario is valid")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    dims: DimsDoc,
    generator: Value,
    gamma: f64,
    initial: InitialDoc,
    #[serde(default)]
    regime: Vec<RegimeDoc>,
    delta: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsDoc {
    n: usize,
    m: usize,
    n_v: usize,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "T")]
    horizon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialDoc {
    #[serde(default)]
    t: f64,
    xi: Option<Value>,
    regime: usize,
}

#[derive(Deserialize, Clone)]
#[serde(untagged)]
enum Value {
    Scalar(f64),
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
    Piecewise { breaks: Vec<f64>, values: Vec<Value> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RegimeDoc {
    A: Option<Value>,
    B1: Option<Value>,
    B2: Option<Value>,
    C: Option<Value>,
    D1: Option<Value>,
    D2: Option<Value>,
    Cbar: Option<Value>,
    D1bar: Option<Value>,
    D2bar: Option<Value>,
    Q: Option<Value>,
    R1: Option<Value>,
    R2: Option<Value>,
    S1: Option<Value>,
    S2: Option<Value>,
    G: Option<Value>,
    b: Option<Value>,
    sigma: Option<Value>,
    sigmabar: Option<Value>,
    q: Option<Value>,
    rho1: Option<Value>,
    rho2: Option<Value>,
    g: Option<Value>,
}

fn mismatch(what: impl Into<String>, expected: impl Into<String>, found: impl Into<String>) -> Error {
    Error::DimensionMismatch { what: what.into(), expected: expected.into(), found: found.into() }
}

/// Constant matrix from a non-piecewise value.
fn to_matrix(v: &Value, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    match v {
        Value::Scalar(x) if rows == 1 && cols == 1 => Ok(DMatrix::from_element(1, 1, *x)),
        Value::Flat(xs) if xs.len() == rows * cols => Ok(DMatrix::from_row_slice(rows, cols, xs)),
        Value::Nested(r) if r.len() == rows && r.iter().all(|row| row.len() == cols) => {
            Ok(DMatrix::from_row_iterator(rows, cols, r.iter().flatten().copied()))
        }
        Value::Piecewise { .. } => Err(Error::Parse(format!("{what}: piecewise value not allowed here"))),
        other => Err(mismatch(what, format!("{rows}x{cols}"), describe(other))),
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Scalar(_) => "scalar".into(),
        Value::Flat(x) => format!("flat array of {}", x.len()),
        Value::Nested(r) => format!("{}x{:?}", r.len(), r.iter().map(Vec::len).collect::<Vec<_>>()),
        Value::Piecewise { .. } => "piecewise table".into(),
    }
}

/// Piecewise-constant matrix-valued function of time.
struct Piecewise {
    breaks: Vec<f64>,
    values: Vec<DMatrix<f64>>,
}

impl Piecewise {
    fn parse(v: Option<&Value>, rows: usize, cols: usize, what: &str, horizon: f64, required: bool) -> Result<Self> {
        let Some(v) = v else {
            if required {
                return Err(Error::Parse(format!("missing required entry {what}")));
            }
            return Ok(Self { breaks: vec![], values: vec![DMatrix::zeros(rows, cols)] });
        };
        match v {
            Value::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(mismatch(
                        format!("{what} piecewise values"),
                        format!("{}", breaks.len() + 1),
                        format!("{}", values.len()),
                    ));
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) || breaks.iter().any(|b| !(*b > 0.0 && *b < horizon)) {
                    return Err(Error::Parse(format!("{what}: breaks must be increasing and inside (0, T)")));
                }
                let values = values.iter().map(|x| to_matrix(x, rows, cols, what)).collect::<Result<_>>()?;
                Ok(Self { breaks: breaks.clone(), values })
            }
            other => Ok(Self { breaks: vec![], values: vec![to_matrix(other, rows, cols, what)?] }),
        }
    }

    fn at(&self, s: f64) -> DMatrix<f64> {
        let k = self.breaks.partition_point(|&b| b <= s);
        self.values[k].clone()
    }
}

fn col(m: DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

struct RegimeFields {
    mats: BTreeMap<&'static str, Piecewise>,
    terminal: Terminal,
}

fn parse_regime(doc: &RegimeDoc, dims: &Dims, idx: usize) -> Result<RegimeFields> {
    let (n, m, k, t) = (dims.n, dims.m, dims.n_v, dims.horizon);
    let name = |f: &str| format!("regime[{}].{f}", idx + 1);
    let mut mats = BTreeMap::new();
    let entries: [(&'static str, Option<&Value>, usize, usize, bool); 21] = [
        ("A", doc.A.as_ref(), n, n, true),
        ("B1", doc.B1.as_ref(), n, m, true),
        ("B2", doc.B2.as_ref(), n, k, true),
        ("C", doc.C.as_ref(), n, n, true),
        ("D1", doc.D1.as_ref(), n, m, true),
        ("D2", doc.D2.as_ref(), n, k, true),
        ("Cbar", doc.Cbar.as_ref(), n, n, true),
        ("D1bar", doc.D1bar.as_ref(), n, m, true),
        ("D2bar", doc.D2bar.as_ref(), n, k, true),
        ("Q", doc.Q.as_ref(), n, n, true),
        ("R1", doc.R1.as_ref(), m, m, true),
        ("R2", doc.R2.as_ref(), k, k, true),
        ("S1", doc.S1.as_ref(), m, n, true),
        ("S2", doc.S2.as_ref(), k, n, true),
        ("b", doc.b.as_ref(), n, 1, false),
        ("sigma", doc.sigma.as_ref(), n, 1, false),
        ("sigmabar", doc.sigmabar.as_ref(), n, 1, false),
        ("q", doc.q.as_ref(), n, 1, false),
        ("rho1", doc.rho1.as_ref(), m, 1, false),
        ("rho2", doc.rho2.as_ref(), k, 1, false),
        ("G", doc.G.as_ref(), n, n, true),
    ];
    for (key, v, r, c, req) in entries {
        mats.insert(key, Piecewise::parse(v, r, c, &name(key), t, req)?);
    }
    let g = mats.remove("G").unwrap();
    if !g.breaks.is_empty() {
        return Err(Error::Parse(format!("{}: terminal weight must be constant", name("G"))));
    }
    let g_lin = match &doc.g {
        None => DVector::zeros(n),
        Some(v) => col(to_matrix(v, n, 1, &name("g"))?),
    };
    Ok(RegimeFields { mats, terminal: Terminal { g: g.values.into_iter().next().unwrap(), g_lin } })
}

fn build_segment_data(f: &RegimeFields, s: f64) -> (RegimeCoeffs, RegimeWeights) {
    let at = |k: &str| f.mats[k].at(s);
    (
        RegimeCoeffs {
            a: at("A"),
            b1: at("B1"),
            b2: at("B2"),
            c: at("C"),
            d1: at("D1"),
            d2: at("D2"),
            cbar: at("Cbar"),
            d1bar: at("D1bar"),
            d2bar: at("D2bar"),
            b: col(at("b")),
            sigma: col(at("sigma")),
            sigmabar: col(at("sigmabar")),
        },
        RegimeWeights {
            q: at("Q"),
            r1: at("R1"),
            r2: at("R2"),
            s1: at("S1"),
            s2: at("S2"),
            q_lin: col(at("q")),
            rho1: col(at("rho1")),
            rho2: col(at("rho2")),
        },
    )
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<GameModel> {
    load_scenario_with(text, false)
}

/// Like [`load_scenario`]; with `allow_invalid` the validation report is not enforced.
pub fn load_scenario_with(text: &str, allow_invalid: bool) -> Result<GameModel> {
    let doc: Doc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let d = &doc.dims;
    let dims = Dims::new(d.n, d.m, d.n_v, d.d, d.horizon)?;
    if doc.regime.len() != dims.d {
        return Err(mismatch("regime blocks", format!("{}", dims.d), format!("{}", doc.regime.len())));
    }
    let generator = Generator::new(to_matrix(&doc.generator, dims.d, dims.d, "generator")?)?;
    let fields = doc
        .regime
        .iter()
        .enumerate()
        .map(|(i, r)| parse_regime(r, &dims, i))
        .collect::<Result<Vec<_>>>()?;

    let mut breaks: Vec<f64> = fields.iter().flat_map(|f| f.mats.values().flat_map(|p| p.breaks.clone())).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut bounds = vec![0.0];
    bounds.extend(breaks);
    bounds.push(dims.horizon);
    let segments = bounds
        .windows(2)
        .map(|w| {
            let (coeffs, weights) = fields.iter().map(|f| build_segment_data(f, w[0])).unzip();
            Segment { start: w[0], end: w[1], coeffs, weights }
        })
        .collect();

    let xi = match &doc.initial.xi {
        None => DVector::zeros(dims.n),
        Some(v) => col(to_matrix(v, dims.n, 1, "initial.xi")?),
    };
    if doc.initial.regime == 0 || doc.initial.regime > dims.d {
        return Err(Error::OutOfRange {
            what: "regime",
            detail: format!("initial regime {} not in 1..={}", doc.initial.regime, dims.d),
        });
    }
    let terminal = fields.into_iter().map(|f| f.terminal).collect();
    let mut model = GameModel {
        dims,
        generator,
        segments,
        terminal,
        gamma: doc.gamma,
        xi,
        initial_regime: doc.initial.regime - 1,
        initial_time: doc.initial.t,
        delta: doc.delta.unwrap_or(DEFAULT_DELTA),
    };
    let report = validate(&model);
    if !report.passed() && !allow_invalid {
        let msg: Vec<String> = report.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        return Err(Error::Validation(msg.join("; ")));
    }
    symmetrize_weights(&mut model);
    Ok(model)
}

pub fn load_scenario_file(path: &Path, allow_invalid: bool) -> Result<GameModel> {
    let text = std::fs::read_to_string(path)?;
    load_scenario_with(&text, allow_invalid)
}

fn symmetrize_weights(model: &mut GameModel) {
    use crate::linalg::symmetrize;
    for seg in &mut model.segments {
        for w in &mut seg.weights {
            symmetrize(&mut w.q);
            symmetrize(&mut w.r1);
            symmetrize(&mut w.r2);
        }
    }
    for t in &mut model.terminal {
        symmetrize(&mut t.g);
    }
}
