//! Problem configuration: a small TOML document.
//!
//! ```toml
//! [dims]
//! p = 1
//! q = 2
//!
//! [domain]            # optional, defaults to [-1, 1]^n
//! lower = [-1.0, -1.0, -1.0]
//! upper = [1.0, 1.0, 1.0]
//!
//! [connection]        # 1-based, symmetric entries mirrored, unlisted = 0
//! "Gamma[1][2][3]" = "y1 + 0.5"
//!
//! [symbol]
//! degree = 2
//! "S[2][3]" = "y1"    # tuple of 1-based indices
//!
//! [function]
//! f = "sin(y1) + y2^2"
//!
//! [points]
//! at = [[0.1, 0.2, 0.3]]
//! ```

use std::collections::BTreeMap;

use foliquant::chart::{AdaptedConnection, FoliatedChart, FunctionField};
use foliquant::cartan::ConnKind;
use foliquant::exprlang::ScalarFieldExpr;
use foliquant::quant::SymbolField;
use foliquant::symtensor::MultiIndex;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    dims: Dims,
    domain: Option<Domain>,
    #[serde(default)]
    connection: BTreeMap<String, String>,
    symbol: Option<toml::Table>,
    function: Option<FunctionSection>,
    points: Option<Points>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    p: usize,
    q: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionSection {
    f: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Points {
    at: Vec<Vec<f64>>,
}

/// Parsed but not yet validated problem.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub p: usize,
    pub q: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// 0-based `(i, k, l)` with `k <= l`.
    pub connection: Vec<((usize, usize, usize), ScalarFieldExpr)>,
    pub symbol: Option<(usize, Vec<(MultiIndex, ScalarFieldExpr)>)>,
    pub function: Option<ScalarFieldExpr>,
    pub points: Vec<Vec<f64>>,
}

fn parse_err(msg: impl Into<String>) -> CliError {
    CliError::Parse(msg.into())
}

fn expr(section: &str, key: &str, text: &str, p: usize, q: usize) -> Result<ScalarFieldExpr, CliError> {
    ScalarFieldExpr::parse(text, p, q).map_err(|e| parse_err(format!("[{section}] {key}: {e}")))
}

/// `Name[a][b]...` to 1-based indices.
fn bracket_indices(key: &str, name: &str, n: usize) -> Result<Vec<usize>, CliError> {
    let bad = || parse_err(format!("malformed key `{key}`, expected {name}[..][..] with indices 1..={n}"));
    let rest = key.strip_prefix(name).ok_or_else(bad)?;
    let mut out = Vec::new();
    let mut s = rest;
    while !s.is_empty() {
        let inner = s.strip_prefix('[').ok_or_else(bad)?;
        let close = inner.find(']').ok_or_else(bad)?;
        let i: usize = inner[..close].trim().parse().map_err(|_| bad())?;
        if i == 0 || i > n {
            return Err(bad());
        }
        out.push(i - 1);
        s = &inner[close + 1..];
    }
    Ok(out)
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: Raw = toml::from_str(text).map_err(|e| parse_err(format!("config: {}", e.message())))?;
        let (p, q) = (raw.dims.p, raw.dims.q);
        let n = p + q;
        if q < 2 {
            return Err(foliquant::Error::CodimensionOne { q }.into());
        }
        let (lower, upper) = match raw.domain {
            Some(d) => (d.lower, d.upper),
            None => (vec![-1.0; n], vec![1.0; n]),
        };
        if lower.len() != n || upper.len() != n {
            return Err(parse_err(format!("[domain] bounds need {n} entries")));
        }
        let mut connection = Vec::new();
        let mut seen = BTreeMap::new();
        for (key, text) in &raw.connection {
            let idx = bracket_indices(key, "Gamma", n)?;
            let [i, k, l] = idx[..] else {
                return Err(parse_err(format!("[connection] `{key}` needs three indices")));
            };
            let (k, l) = (k.min(l), k.max(l));
            if let Some(prev) = seen.insert((i, k, l), key.clone()) {
                return Err(parse_err(format!("[connection] `{key}` repeats `{prev}`")));
            }
            connection.push(((i, k, l), expr("connection", key, text, p, q)?));
        }
        let symbol = match raw.symbol {
            None => None,
            Some(table) => {
                let degree = table
                    .get("degree")
                    .and_then(toml::Value::as_integer)
                    .filter(|d| *d >= 0)
                    .ok_or_else(|| parse_err("[symbol] needs a non-negative integer `degree`"))?
                    as usize;
                let mut comps: Vec<(MultiIndex, ScalarFieldExpr)> = Vec::new();
                for (key, value) in &table {
                    if key == "degree" {
                        continue;
                    }
                    let text = value
                        .as_str()
                        .ok_or_else(|| parse_err(format!("[symbol] `{key}` must be an expression string")))?;
                    let idx = bracket_indices(key, "S", n)?;
                    if idx.len() != degree {
                        return Err(parse_err(format!("[symbol] `{key}` needs {degree} indices")));
                    }
                    let g = MultiIndex::from_tuple(n, &idx);
                    if comps.iter().any(|(h, _)| *h == g) {
                        return Err(parse_err(format!("[symbol] `{key}` repeats a component")));
                    }
                    comps.push((g, expr("symbol", key, text, p, q)?));
                }
                Some((degree, comps))
            }
        };
        let function = raw
            .function
            .map(|f| expr("function", "f", &f.f, p, q))
            .transpose()?;
        let points = raw.points.map(|pt| pt.at).unwrap_or_default();
        if let Some(bad) = points.iter().find(|m| m.len() != n) {
            return Err(parse_err(format!("[points] {bad:?} needs {n} coordinates")));
        }
        Ok(ProblemConfig {
            p,
            q,
            lower,
            upper,
            connection,
            symbol,
            function,
            points,
        })
    }

    pub fn chart(&self) -> Result<FoliatedChart, CliError> {
        Ok(FoliatedChart::new(self.p, self.q, self.lower.clone(), self.upper.clone())?)
    }

    pub fn connection(&self, chart: &FoliatedChart) -> Result<AdaptedConnection, CliError> {
        Ok(AdaptedConnection::from_entries(chart.clone(), &self.connection)?)
    }

    pub fn symbol(&self, chart: &FoliatedChart, kind: ConnKind) -> Result<SymbolField, CliError> {
        let (degree, comps) = self
            .symbol
            .clone()
            .ok_or_else(|| parse_err("config has no [symbol] section"))?;
        Ok(SymbolField::from_exprs(chart.clone(), degree, kind, comps)?)
    }

    pub fn function(&self, chart: &FoliatedChart) -> Result<FunctionField, CliError> {
        let f = self
            .function
            .clone()
            .ok_or_else(|| parse_err("config has no [function] section"))?;
        Ok(FunctionField::from_expr(chart.clone(), f))
    }

    pub fn point(&self, index: usize) -> Result<&[f64], CliError> {
        self.points.get(index).map(Vec::as_slice).ok_or_else(|| {
            parse_err(format!("point index {index} out of range ({} points configured)", self.points.len()))
        })
    }
}
