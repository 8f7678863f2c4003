//! Structure and report documents: the canonical on-disk forms.
//!
//! Documents are sparse (zero entries omitted), keys are sorted, and field
//! payloads are either canonical expression text or an embedded lattice
//! table, so a given structure serializes to exactly one byte sequence.

use algebroid::chart::Chart;
use algebroid::courant::CourantStructure;
use algebroid::expr;
use algebroid::field::ScalarField;
use algebroid::grid::{GridAxis, GridTable};
use algebroid::loday::LodayStructure;
use algebroid::report::CheckReport;
use algebroid::zoo::{self, ZooEntry, ZooStructure};
use algebroid::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ChartDoc {
    pub dim: usize,
    pub names: Vec<String>,
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
}

/// A tensor entry: expression text in the public grammar, or lattice samples
/// (row-major, last axis fastest) spanning the whole box.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum FieldRepr {
    Expr(String),
    Grid { counts: Vec<usize>, values: Vec<f64> },
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ZooRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SpecDocument {
    pub chart: ChartDoc,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gamma: BTreeMap<String, FieldRepr>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub theta: BTreeMap<String, FieldRepr>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lambda: BTreeMap<String, FieldRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<BTreeMap<String, FieldRepr>>,
    /// When present, the named constructor overrides the tensor maps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoo: Option<ZooRef>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct EntryDoc {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub version: String,
    pub command: String,
    pub input_digest: String,
    pub passed: bool,
    pub entries: Vec<EntryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<BTreeMap<String, bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<ProfilePoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<SpecDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<BTreeMap<String, FieldRepr>>,
}

impl ReportDocument {
    pub fn new(command: &str, digest: String) -> ReportDocument {
        ReportDocument {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            input_digest: digest,
            passed: true,
            entries: Vec::new(),
            label: None,
            expected: None,
            names: None,
            profile: None,
            output: None,
            transform: None,
        }
    }

    /// Fold a check report in, applying the tolerance scale; `passed` is the
    /// conjunction over every folded entry.
    pub fn push_report(&mut self, report: &CheckReport, scale: f64) {
        for e in &report.entries {
            let tolerance = e.tolerance * scale;
            let pass = e.max_residual <= tolerance;
            self.passed &= pass;
            self.entries.push(EntryDoc {
                name: e.name.clone(),
                max_residual: e.max_residual,
                tolerance,
                worst_point: e.worst_point.clone(),
                pass,
            });
        }
    }
}

pub enum Built {
    Loday(LodayStructure),
    Courant(CourantStructure),
}

impl Built {
    pub fn base(&self) -> &LodayStructure {
        match self {
            Built::Loday(a) => a,
            Built::Courant(c) => c.base(),
        }
    }

    pub fn courant(&self) -> Result<&CourantStructure> {
        match self {
            Built::Courant(c) => Ok(c),
            Built::Loday(_) => Err(Error::Precondition(
                "this command needs a pairing; the document has no metric".into(),
            )),
        }
    }

    pub fn from_entry(entry: ZooEntry) -> Built {
        match entry.structure {
            ZooStructure::Loday(a) => Built::Loday(a),
            ZooStructure::Courant(c) => Built::Courant(c),
        }
    }
}

fn parse_key(key: &str, arity: usize, limits: &[usize]) -> Result<Vec<usize>> {
    let parts: Vec<&str> = key.split(',').collect();
    if parts.len() != arity {
        return Err(Error::InvalidInput(format!(
            "key {key:?} must have {arity} comma-separated indices"
        )));
    }
    parts
        .iter()
        .zip(limits)
        .map(|(s, lim)| {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("key {key:?}: bad index {s:?}")))?;
            if v >= *lim {
                return Err(Error::InvalidInput(format!(
                    "key {key:?}: index {v} out of range (< {lim})"
                )));
            }
            Ok(v)
        })
        .collect()
}

fn build_field(chart: &Arc<Chart>, repr: &FieldRepr) -> Result<ScalarField> {
    match repr {
        FieldRepr::Expr(src) => ScalarField::parse(chart, src),
        FieldRepr::Grid { counts, values } => {
            if counts.len() != chart.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "grid spans {} axes on a {}-dim chart",
                    counts.len(),
                    chart.dim()
                )));
            }
            let axes = (0..chart.dim())
                .map(|d| {
                    let (lo, hi) = chart.interval(d);
                    GridAxis { chart_axis: d, lo, hi, count: counts[d] }
                })
                .collect();
            ScalarField::from_grid(chart, GridTable::new(axes, values.clone())?)
        }
    }
}

/// Build the structure a document describes. A zoo reference wins over the
/// tensor maps; otherwise every entry is parsed, bounds-checked against its
/// key, and missing entries default to zero.
pub fn build(doc: &SpecDocument) -> Result<Built> {
    if let Some(z) = &doc.zoo {
        let params: Vec<&str> = z.params.iter().map(String::as_str).collect();
        return Ok(Built::from_entry(zoo::build_entry(&z.name, &params)?));
    }
    if doc.chart.names.len() != doc.chart.dim || doc.chart.bounds.len() != doc.chart.dim {
        return Err(Error::ShapeMismatch(format!(
            "chart says dim {}, has {} names and {} intervals",
            doc.chart.dim,
            doc.chart.names.len(),
            doc.chart.bounds.len()
        )));
    }
    let chart = Chart::new(doc.chart.names.clone(), doc.chart.bounds.clone())?;
    let (r, n) = (doc.rank, chart.dim());
    if r == 0 {
        return Err(Error::InvalidInput("rank must be positive".into()));
    }
    let context = |slot: &str, key: &str, e: Error| {
        Error::InvalidInput(format!("{slot}[{key}]: {e}"))
    };
    let mut gamma = vec![vec![vec![ScalarField::zero(&chart); r]; r]; r];
    for (key, repr) in &doc.gamma {
        let ix = parse_key(key, 3, &[r, r, r]).map_err(|e| context("gamma", key, e))?;
        gamma[ix[0]][ix[1]][ix[2]] =
            build_field(&chart, repr).map_err(|e| context("gamma", key, e))?;
    }
    let mut theta = vec![vec![ScalarField::zero(&chart); n]; r];
    for (key, repr) in &doc.theta {
        let ix = parse_key(key, 2, &[r, n]).map_err(|e| context("theta", key, e))?;
        theta[ix[0]][ix[1]] = build_field(&chart, repr).map_err(|e| context("theta", key, e))?;
    }
    let mut lambda = vec![vec![vec![vec![ScalarField::zero(&chart); r]; r]; r]; n];
    for (key, repr) in &doc.lambda {
        let ix = parse_key(key, 4, &[n, r, r, r]).map_err(|e| context("lambda", key, e))?;
        lambda[ix[0]][ix[1]][ix[2]][ix[3]] =
            build_field(&chart, repr).map_err(|e| context("lambda", key, e))?;
    }
    let base = LodayStructure::new(chart.clone(), r, gamma, theta, lambda)?;
    match &doc.metric {
        None => Ok(Built::Loday(base)),
        Some(map) => {
            // Upper-triangle keys only; both mirror entries share one field.
            let mut metric = vec![vec![ScalarField::zero(&chart); r]; r];
            for (key, repr) in map {
                let ix = parse_key(key, 2, &[r, r]).map_err(|e| context("metric", key, e))?;
                if ix[0] > ix[1] {
                    return Err(Error::InvalidInput(format!(
                        "metric[{key}]: keys must have i <= j (upper triangle)"
                    )));
                }
                let f = build_field(&chart, repr).map_err(|e| context("metric", key, e))?;
                metric[ix[0]][ix[1]] = f.clone();
                metric[ix[1]][ix[0]] = f;
            }
            Ok(Built::Courant(CourantStructure::new(base, metric)?))
        }
    }
}

/// Canonical payload for one field: expression text when the tree is in the
/// public grammar, otherwise lattice samples at `counts`; `None` for zero.
pub fn field_repr(f: &ScalarField, counts: &[usize]) -> Result<Option<FieldRepr>> {
    if f.is_zero() {
        return Ok(None);
    }
    if let Some(src) = expr::print(f.repr(), f.chart()) {
        return Ok(Some(FieldRepr::Expr(src)));
    }
    // A field already backed by a full-chart lattice at the requested counts
    // keeps its node values verbatim; re-interpolation would cost a few ulps
    // and break byte-stable round trips.
    if let algebroid::expr::Expr::Grid(t) = f.repr() {
        let exact = t.axes().len() == counts.len()
            && t.axes().iter().zip(counts).enumerate().all(|(i, (a, &c))| {
                a.chart_axis == i && a.count == c && (a.lo, a.hi) == f.chart().interval(i)
            });
        if exact {
            return Ok(Some(FieldRepr::Grid {
                counts: counts.to_vec(),
                values: t.values().to_vec(),
            }));
        }
    }
    let resampled = f.resample(counts)?;
    match resampled.repr() {
        algebroid::expr::Expr::Grid(t) => Ok(Some(FieldRepr::Grid {
            counts: t.axes().iter().map(|a| a.count).collect(),
            values: t.values().to_vec(),
        })),
        _ => Err(Error::InvalidInput("resampling did not produce a lattice".into())),
    }
}

fn chart_doc(chart: &Chart) -> ChartDoc {
    ChartDoc {
        dim: chart.dim(),
        names: (0..chart.dim()).map(|i| chart.name(i).to_string()).collect(),
        bounds: (0..chart.dim()).map(|i| chart.interval(i)).collect(),
    }
}

pub fn from_loday(a: &LodayStructure, counts: &[usize]) -> Result<SpecDocument> {
    let (r, n) = (a.rank(), a.dim());
    let mut gamma = BTreeMap::new();
    let mut theta = BTreeMap::new();
    let mut lambda = BTreeMap::new();
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                if let Some(repr) = field_repr(a.gamma(i, j, k), counts)? {
                    gamma.insert(format!("{i},{j},{k}"), repr);
                }
            }
        }
        for m in 0..n {
            if let Some(repr) = field_repr(a.theta(i, m), counts)? {
                theta.insert(format!("{i},{m}"), repr);
            }
        }
    }
    for m in 0..n {
        for i in 0..r {
            for j in 0..r {
                for l in 0..r {
                    if let Some(repr) = field_repr(a.lambda(m, i, j, l), counts)? {
                        lambda.insert(format!("{m},{i},{j},{l}"), repr);
                    }
                }
            }
        }
    }
    Ok(SpecDocument {
        chart: chart_doc(a.chart()),
        rank: r,
        gamma,
        theta,
        lambda,
        metric: None,
        zoo: None,
    })
}

pub fn from_courant(c: &CourantStructure, counts: &[usize]) -> Result<SpecDocument> {
    let mut doc = from_loday(c.base(), counts)?;
    let mut metric = BTreeMap::new();
    let g = c.metric_fields();
    for i in 0..c.rank() {
        for j in i..c.rank() {
            if let Some(repr) = field_repr(&g[i][j], counts)? {
                metric.insert(format!("{i},{j}"), repr);
            }
        }
    }
    doc.metric = Some(metric);
    Ok(doc)
}

pub fn from_built(b: &Built, counts: &[usize]) -> Result<SpecDocument> {
    match b {
        Built::Loday(a) => from_loday(a, counts),
        Built::Courant(c) => from_courant(c, counts),
    }
}
