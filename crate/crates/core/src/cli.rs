//! Command-line front end: configuration merging, the five subcommands and
//! their JSON/CSV documents.
//!
//! Settings come from three layers, later ones winning: built-in defaults, a
//! `key=value` file given by `--config`, then command-line flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::channels::{quotient_dimension, ExtensionSpec, DEFAULT_S_MAX};
use crate::error::{Error, Result};
use crate::geometry::{catalog_cross_section, normal_form, OperatorKind, SpinStructure, DEFAULT_CUTOFF};
use crate::homotopy::{
    channel_index_stability, graph_sigma_scan, hs_continuity_scan, DeformationGrid, DEFAULT_BETA_SAMPLES, GRAPH_TOL,
};
use crate::index::{
    cone_dirac_index, horn_dirac_index, horn_gb_index, horn_signature_index, skip_phenomenon_scan, skip_table_csv,
    surface_euler_breakdown, IndexReport,
};
use crate::kernels::{
    check_mls1_bounds, check_normp_bound, check_schur_bounds, BoundCheckReport, BOUND_TOL,
};
use crate::oracle::{oracle_report, OracleMesh, DEFAULT_CELLS, DEFAULT_X_MIN, SV_TOL};
use crate::quad::{logspace, GradedMesh};
use crate::report::{fmt_float, to_csv, to_json};
use crate::warp::{coefficient, make_power_horn, pure_power, CoefficientKind, WarpProfile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Kernel mesh for HS differences in `homotopy`.
const HS_MESH: usize = 64;
/// Mild oracle mesh for graph-operator singular values.
const GRAPH_CELLS: usize = 96;
const GRAPH_X_MIN: f64 = 1e-3;
const DEFAULT_DELTA0: f64 = 0.2;
const HOMOTOPY_S_MAX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Classify,
    Index,
    Bounds,
    Homotopy,
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Lemma {
    Mls1,
    Schur,
    Normp,
    Mls2,
}

/// Warping function for `surface`: `pow:a` is `x^a` on `(0, 1]`, `horn:a` the
/// standard horn profile with a blended end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "exponent", rename_all = "lowercase")]
pub enum ProfileSpec {
    Pow(f64),
    Horn(f64),
}

impl ProfileSpec {
    fn parse(text: &str) -> Result<Self> {
        let (kind, a) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("profile `{text}` must look like pow:<a> or horn:<a>")))?;
        let a: f64 = parse_num("h", a)?;
        match kind.trim() {
            "pow" => Ok(Self::Pow(a)),
            "horn" => Ok(Self::Horn(a)),
            other => Err(Error::Config(format!("unknown profile kind `{other}`"))),
        }
    }

    fn build(&self) -> Result<WarpProfile> {
        match *self {
            Self::Pow(a) => pure_power(a, 1.0),
            Self::Horn(a) => make_power_horn(a, 0.25, 1.0, true),
        }
    }
}

/// `a:b` range (sampled at Chebyshev points) or an explicit `b1,b2,...` list.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSpec {
    Range(f64, f64),
    List(Vec<f64>),
}

impl BetaSpec {
    fn parse(text: &str) -> Result<Self> {
        if let Some((a, b)) = text.split_once(':') {
            let (a, b) = (parse_num("beta", a)?, parse_num("beta", b)?);
            if a > b {
                return Err(Error::Config(format!("beta range {a}:{b} is reversed")));
            }
            return Ok(Self::Range(a, b));
        }
        let list = text.split(',').map(|t| parse_num("beta", t)).collect::<Result<Vec<f64>>>()?;
        Ok(Self::List(list))
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Self::Range(a, b) if a == b => vec![*a],
            Self::Range(a, b) => vec![*a, *b],
            Self::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshSpec {
    pub n: usize,
    /// `None` picks the grading that suits the kernel.
    pub grading: Option<f64>,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub op: OperatorKind,
    pub cross_section: String,
    pub alpha: f64,
    pub extension: String,
    pub cone: bool,
    pub spin: Option<SpinStructure>,
    pub mesh: MeshSpec,
    pub s_max: f64,
    pub tol: f64,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub ahat: f64,
    pub euler: f64,
    pub l: f64,
    pub eta: f64,
    pub lemma: Lemma,
    pub gb: f64,
    pub beta: BetaSpec,
    pub steps: usize,
    pub delta0: f64,
    pub h: ProfileSpec,
    pub delta: f64,
    pub eps: f64,
    pub interior: f64,
    pub skip: bool,
    pub chi: i64,
    pub k: i64,
}

/// Keys accepted in config files; each matches the long flag of the same name.
pub const CONFIG_KEYS: [&str; 28] = [
    "op", "n", "alpha", "ext", "cone", "spin", "mesh", "grading", "smax", "tol", "format", "out", "ahat", "euler", "l",
    "eta", "lemma", "gb", "beta", "steps", "delta0", "h", "delta", "eps", "interior", "skip", "chi", "k",
];

fn parse_num<T: std::str::FromStr>(key: &str, text: &str) -> Result<T> {
    text.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{}`", text.trim())))
}

fn parse_bool(key: &str, text: &str) -> Result<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

/// Parses the flat `key = value` format; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        let key = key.trim().to_ascii_lowercase();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(map)
}

fn finite_in(key: &str, v: f64, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64> {
    if v.is_finite() && ok(v) {
        Ok(v)
    } else {
        Err(Error::Config(format!("{key} must be {what}, got {v}")))
    }
}

impl RunConfig {
    /// Applies defaults and range checks to merged settings.
    pub fn from_settings(command: Command, settings: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(bad) = settings.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{bad}`")));
        }
        let get = |k: &str| settings.get(k).map(String::as_str);
        let num = |k: &str, default: f64| -> Result<f64> { get(k).map_or(Ok(default), |v| parse_num(k, v)) };

        let op: OperatorKind = get("op").unwrap_or("gb").parse()?;
        let default_n = if op == OperatorKind::Signature { "torus3" } else { "torus2" };
        let cross_section = get("n").unwrap_or(default_n).trim().to_string();
        catalog_cross_section(&cross_section, DEFAULT_CUTOFF)?;
        let cone = get("cone").map_or(Ok(false), |v| parse_bool("cone", v))?;
        let alpha = finite_in("alpha", num("alpha", 2.0)?, |a| a > 1.0, "> 1 (use cone for the cone case)")?;
        let spin = get("spin").map(str::parse).transpose()?;
        let mesh_n = get("mesh").map_or(Ok(None), |v| parse_num::<usize>("mesh", v).map(Some))?;
        let default_mesh = match command {
            Command::Homotopy | Command::Classify => DEFAULT_CELLS,
            _ => 256,
        };
        let mesh_n = mesh_n.unwrap_or(default_mesh);
        if !(8..=1 << 16).contains(&mesh_n) {
            return Err(Error::Config(format!("mesh must lie in [8, 65536], got {mesh_n}")));
        }
        let grading = get("grading").map(|v| parse_num::<f64>("grading", v)).transpose()?;
        if let Some(g) = grading {
            finite_in("grading", g, |g| (1.0..=16.0).contains(&g), "in [1, 16]")?;
        }
        let default_smax = if command == Command::Homotopy { HOMOTOPY_S_MAX } else { DEFAULT_S_MAX };
        let s_max = finite_in("smax", num("smax", default_smax)?, |s| s > 0.0 && s <= 1e4, "in (0, 1e4]")?;
        let default_tol = if command == Command::Bounds { BOUND_TOL } else { SV_TOL };
        let tol = finite_in("tol", num("tol", default_tol)?, |t| t > 0.0 && t < 1e-2, "in (0, 1e-2)")?;
        let format = match get("format").unwrap_or("json").trim().to_ascii_lowercase().as_str() {
            "json" => OutputFormat::Json,
            "csv" => OutputFormat::Csv,
            other => return Err(Error::Config(format!("format must be json or csv, got `{other}`"))),
        };
        let lemma = match get("lemma").unwrap_or("mls1").trim().to_ascii_lowercase().as_str() {
            "mls1" => Lemma::Mls1,
            "schur" => Lemma::Schur,
            "normp" => Lemma::Normp,
            "mls2" => Lemma::Mls2,
            other => return Err(Error::Config(format!("lemma must be mls1, schur, normp or mls2, got `{other}`"))),
        };
        let default_beta = if command == Command::Surface { "1,1.5,2" } else { "1:2" };
        let beta = BetaSpec::parse(get("beta").unwrap_or(default_beta))?;
        if beta.values().iter().any(|b| !(b.is_finite() && *b >= 1.0)) {
            return Err(Error::Config("beta values must be >= 1".into()));
        }
        let steps: usize = get("steps").map_or(Ok(DEFAULT_BETA_SAMPLES), |v| parse_num("steps", v))?;
        if !(1..=200).contains(&steps) {
            return Err(Error::Config(format!("steps must lie in [1, 200], got {steps}")));
        }
        let delta = num("delta", 0.1)?;
        let eps = num("eps", 0.5)?;
        if !(delta > 0.0 && delta < eps && eps <= 1.0) {
            return Err(Error::Config(format!("need 0 < delta < eps <= 1, got delta={delta}, eps={eps}")));
        }
        let gb = finite_in("gb", num("gb", 0.0)?, |_| true, "finite")?;
        let h = ProfileSpec::parse(get("h").unwrap_or("pow:2"))?;
        let chi: i64 = get("chi").map_or(Ok(2), |v| parse_num("chi", v))?;
        let k: i64 = get("k").map_or(Ok(1), |v| parse_num("k", v))?;
        if k < 0 {
            return Err(Error::Config(format!("k counts horns and must be >= 0, got {k}")));
        }
        Ok(Self {
            command,
            op,
            cross_section,
            alpha,
            extension: get("ext").unwrap_or("max").trim().to_string(),
            cone,
            spin,
            mesh: MeshSpec { n: mesh_n, grading },
            s_max,
            tol,
            format,
            out: get("out").map(PathBuf::from),
            ahat: finite_in("ahat", num("ahat", 0.0)?, |_| true, "finite")?,
            euler: finite_in("euler", num("euler", 0.0)?, |_| true, "finite")?,
            l: finite_in("l", num("l", 0.0)?, |_| true, "finite")?,
            eta: finite_in("eta", num("eta", 0.0)?, |_| true, "finite")?,
            lemma,
            gb,
            beta,
            steps,
            delta0: finite_in("delta0", num("delta0", DEFAULT_DELTA0)?, |d| d > 0.0, "positive")?,
            h,
            delta,
            eps,
            interior: finite_in("interior", num("interior", 0.0)?, |_| true, "finite")?,
            skip: get("skip").map_or(Ok(false), |v| parse_bool("skip", v))?,
            chi,
            k,
        })
    }

    fn spin_for(&self, section: &crate::geometry::CrossSection) -> SpinStructure {
        self.spin.unwrap_or_else(|| section.default_spin())
    }
}

/// Result of a command: the JSON document, its CSV rendering and the verdict.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub document: Value,
    pub csv: String,
    /// Name of the violated statement when an assertion fails.
    pub failure: Option<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failure.is_some() {
            EXIT_ASSERTION
        } else {
            EXIT_OK
        }
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Json => to_json(&self.document),
            OutputFormat::Csv => Ok(self.csv.clone()),
        }
    }
}

fn header(cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(cfg.command));
    m
}

fn key_value_csv(pairs: &[(&str, String)]) -> Result<String> {
    let rows: Vec<Vec<String>> = pairs.iter().map(|(k, v)| vec![k.to_string(), v.clone()]).collect();
    to_csv(&["key", "value"], &rows)
}

fn to_val<T: Serialize>(t: &T) -> Result<Value> {
    serde_json::to_value(t).map_err(|e| Error::Io(e.to_string()))
}

/// Quotient dimension, channel table and uniqueness verdict, cross-checked by the oracle.
pub fn cmd_classify(cfg: &RunConfig) -> Result<Outcome> {
    let section = catalog_cross_section(&cfg.cross_section, DEFAULT_CUTOFF)?;
    let model = normal_form(cfg.op, &section, cfg.alpha, Some(cfg.spin_for(&section)))?;
    let quotient = quotient_dimension(&model);
    let oracle = oracle_report(&model, cfg.tol)?;
    let unique = quotient.unique_extension();
    let verdict = if unique {
        "unique closed extension".to_string()
    } else {
        format!("closed extensions form a {}-dimensional family", quotient.dim)
    };
    let agree = oracle.dim == quotient.dim;
    let mut doc = header(cfg);
    doc.insert("quotient".into(), to_val(&quotient)?);
    doc.insert("unique_extension".into(), json!(unique));
    doc.insert("verdict".into(), json!(verdict));
    doc.insert("oracle".into(), to_val(&oracle)?);
    doc.insert("oracle_agrees".into(), json!(agree));
    let failure = (!agree).then(|| {
        format!("closed-extension classification: oracle dim {} vs analytic {}", oracle.dim, quotient.dim)
    });
    Ok(Outcome { document: Value::Object(doc), csv: oracle.to_csv()?, failure })
}

fn index_report(cfg: &RunConfig) -> Result<IndexReport> {
    let section = catalog_cross_section(&cfg.cross_section, DEFAULT_CUTOFF)?;
    match cfg.op {
        OperatorKind::Dirac => {
            let spin = cfg.spin_for(&section);
            if cfg.cone {
                let model = crate::index::cone_dirac_model(&section, spin)?;
                let w = ExtensionSpec::parse(&cfg.extension, &model)?;
                cone_dirac_index(&section, spin, &w, cfg.ahat)
            } else {
                let model = crate::geometry::dirac_normal_form(&section, cfg.alpha, spin)?;
                let w = ExtensionSpec::parse(&cfg.extension, &model)?;
                horn_dirac_index(&section, spin, &w, cfg.ahat, cfg.alpha)
            }
        }
        OperatorKind::GaussBonnet => horn_gb_index(&section, cfg.euler),
        OperatorKind::Signature => horn_signature_index(&section, cfg.l, cfg.eta),
    }
}

/// Index with its term breakdown; a non-integral term sum is an assertion failure.
pub fn cmd_index(cfg: &RunConfig) -> Result<Outcome> {
    let mut doc = header(cfg);
    match index_report(cfg) {
        Ok(r) => {
            let t = &r.terms;
            let csv = key_value_csv(&[
                ("index", r.index.to_string()),
                ("geometric_integral", fmt_float(t.geometric_integral)),
                ("eta_term", fmt_float(t.eta_term)),
                ("kernel_term", fmt_float(t.kernel_term)),
                ("extension_term", fmt_float(t.extension_term)),
                ("betti_term", fmt_float(t.betti_term)),
            ])?;
            doc.insert("report".into(), to_val(&r)?);
            Ok(Outcome { document: Value::Object(doc), csv, failure: None })
        }
        Err(Error::NotIntegral(v)) => {
            doc.insert("term_sum".into(), json!(v));
            let failure = Some(format!("index integrality: term sum {v} is not an integer"));
            Ok(Outcome { document: Value::Object(doc), csv: key_value_csv(&[("term_sum", fmt_float(v))])?, failure })
        }
        Err(e) => Err(e),
    }
}

fn signed_grid(s_max: f64, count: usize) -> Vec<f64> {
    let pos = logspace(0.25, s_max.max(0.5), count);
    pos.iter().map(|s| -s).rev().chain(pos.iter().copied()).collect()
}

fn bound_report(cfg: &RunConfig) -> Result<Value> {
    let horn = make_power_horn(cfg.alpha, 0.25, 1.0, false)?;
    let r: BoundCheckReport = match cfg.lemma {
        Lemma::Mls1 => {
            let s: Vec<f64> = signed_grid(cfg.s_max, 8);
            let xs = logspace(1e-3 * cfg.eps, cfg.eps, 8);
            check_mls1_bounds(&horn, &s, &xs, cfg.mesh.n)?
        }
        Lemma::Schur => {
            let s = signed_grid(cfg.s_max, 50);
            check_schur_bounds(&horn, cfg.gb, &s, cfg.eps, cfg.mesh.n)?
        }
        Lemma::Normp => {
            let coeff = coefficient(&horn, CoefficientKind::HornRatio)?;
            let c0 = 1.0 / coeff.lower_bound;
            let grading = cfg.mesh.grading.unwrap_or(2.0);
            let mesh = GradedMesh::new(cfg.mesh.n, grading, coeff.eps)?;
            check_normp_bound(&coeff, c0, &signed_grid(cfg.s_max, 25), &mesh)?
        }
        Lemma::Mls2 => {
            let section = catalog_cross_section(&cfg.cross_section, DEFAULT_CUTOFF)?;
            let model = normal_form(cfg.op, &section, cfg.alpha, Some(cfg.spin_for(&section)))?;
            let p = crate::channels::perturbation_norm_bound(&model, cfg.eps, cfg.s_max, cfg.mesh.n, cfg.tol)?;
            return Ok(json!({ "lemma": "mls2", "pass": p.pass, "report": to_val(&p)? }));
        }
    };
    Ok(to_val(&r)?)
}

/// Pass/fail of a bound suite with its worst margin.
pub fn cmd_bounds(cfg: &RunConfig) -> Result<Outcome> {
    let report = bound_report(cfg)?;
    let pass = report.get("pass").and_then(Value::as_bool).unwrap_or(false);
    let csv = match cfg.lemma {
        Lemma::Mls2 => {
            let r = &report["report"];
            let field = |k: &str| r.get(k).and_then(Value::as_f64).map_or("nan".into(), fmt_float);
            key_value_csv(&[
                ("value", field("value")),
                ("value_half", field("value_half")),
                ("ratio", field("ratio")),
                ("target", field("target")),
                ("envelope", field("envelope")),
                ("pass", pass.to_string()),
            ])?
        }
        _ => bound_csv(&report)?,
    };
    let lemma = format!("{:?}", cfg.lemma).to_ascii_lowercase();
    let mut doc = header(cfg);
    doc.insert("lemma".into(), json!(lemma));
    doc.insert("pass".into(), json!(pass));
    doc.insert("report".into(), report);
    let failure = (!pass).then(|| format!("bound {lemma} violated"));
    Ok(Outcome { document: Value::Object(doc), csv, failure })
}

fn bound_csv(report: &Value) -> Result<String> {
    let lemma = report.get("lemma").and_then(Value::as_str).unwrap_or("");
    let rows: Vec<Vec<String>> = report["samples"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|s| {
                    let f = |k: &str| s.get(k).and_then(Value::as_f64).map_or("nan".into(), fmt_float);
                    vec![lemma.to_string(), f("s"), f("x"), f("lhs"), f("rhs"), f("margin")]
                })
                .collect()
        })
        .unwrap_or_default();
    to_csv(&["lemma", "s", "x", "lhs", "rhs", "margin"], &rows)
}

/// HS continuity, graph-operator bound and per-channel index stability along the family.
pub fn cmd_homotopy(cfg: &RunConfig) -> Result<Outcome> {
    let section = catalog_cross_section(&cfg.cross_section, DEFAULT_CUTOFF)?;
    let model = normal_form(cfg.op, &section, cfg.alpha, Some(cfg.spin_for(&section)))?;
    let grid = match &cfg.beta {
        BetaSpec::Range(a, b) => DeformationGrid::chebyshev(*a, *b, cfg.steps, cfg.s_max, HS_MESH)?,
        BetaSpec::List(list) if list.len() == 1 => DeformationGrid::chebyshev(list[0], list[0], 1, cfg.s_max, HS_MESH)?,
        BetaSpec::List(list) => {
            let (a, b) = (list[0], list[list.len() - 1]);
            let family = crate::homotopy::standard_family(a, b)?;
            DeformationGrid::new(crate::homotopy::Deformation::Family(family), list.clone(), cfg.s_max, HS_MESH)?
        }
    };
    let continuity = hs_continuity_scan(&grid, cfg.delta0)?;
    let graph_mesh = OracleMesh::new(GRAPH_CELLS, GRAPH_X_MIN, 1.0)?;
    let sigma = graph_sigma_scan(&model, &grid, &graph_mesh)?;
    let sigma_ok = sigma.iter().all(|r| r.sigma_min >= 1.0 - GRAPH_TOL);
    let mesh = OracleMesh::new(cfg.mesh.n, DEFAULT_X_MIN, 1.0)?;
    let stability = channel_index_stability(&model, &grid, &mesh)?;
    let verdict = if stability.stable { "stable" } else { "unstable" };

    let mut failures = Vec::new();
    if !continuity.pass {
        failures.push("HS continuity of the boundary parametrix");
    }
    if !sigma_ok {
        failures.push("graph-operator lower bound");
    }
    if !stability.stable {
        failures.push("index stability along the horn family");
    }
    let mut doc = header(cfg);
    doc.insert("betas".into(), json!(grid.betas));
    doc.insert("continuity".into(), to_val(&continuity)?);
    doc.insert("graph_sigma_min".into(), to_val(&sigma)?);
    doc.insert("graph_bound_ok".into(), json!(sigma_ok));
    doc.insert("stability".into(), to_val(&stability)?);
    doc.insert("verdict".into(), json!(verdict));
    let failure = (!failures.is_empty()).then(|| failures.join("; "));
    Ok(Outcome { document: Value::Object(doc), csv: stability.to_csv()?, failure })
}

/// Collar Euler integral with its boundary terms, or the skip table with `skip`.
pub fn cmd_surface(cfg: &RunConfig) -> Result<Outcome> {
    let mut doc = header(cfg);
    if cfg.skip {
        let rows = skip_phenomenon_scan(cfg.chi, cfg.k, &cfg.beta.values())?;
        doc.insert("chi".into(), json!(cfg.chi));
        doc.insert("k".into(), json!(cfg.k));
        doc.insert("skip".into(), to_val(&rows)?);
        return Ok(Outcome { document: Value::Object(doc), csv: skip_table_csv(&rows)?, failure: None });
    }
    let profile = cfg.h.build()?;
    let b = surface_euler_breakdown(&profile, cfg.delta, cfg.eps, cfg.interior)?;
    let ok = b.residual.abs() <= 1e-8;
    doc.insert("profile".into(), to_val(&cfg.h)?);
    doc.insert("delta".into(), json!(cfg.delta));
    doc.insert("eps".into(), json!(cfg.eps));
    doc.insert("breakdown".into(), to_val(&b)?);
    let csv = key_value_csv(&[
        ("interior", fmt_float(b.interior)),
        ("collar", fmt_float(b.collar)),
        ("closed_form", fmt_float(b.closed_form)),
        ("residual", fmt_float(b.residual)),
    ])?;
    let failure = (!ok).then(|| format!("warped-collar Euler integral: residual {}", b.residual));
    Ok(Outcome { document: Value::Object(doc), csv, failure })
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command {
        Command::Classify => cmd_classify(cfg),
        Command::Index => cmd_index(cfg),
        Command::Bounds => cmd_bounds(cfg),
        Command::Homotopy => cmd_homotopy(cfg),
        Command::Surface => cmd_surface(cfg),
    }
}

#[derive(Debug, Parser)]
#[command(name = "horn", version, about = "Channel analysis and index formulas for operators on manifolds with horns")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Quotient dimension and uniqueness of closed extensions
    Classify(Flags),
    /// Index with its term breakdown
    Index(Flags),
    /// Check one of the kernel estimates on a sample grid
    Bounds(Flags),
    /// Continuity and index stability along a horn family
    Homotopy(Flags),
    /// Collar Euler integrals and the skip table
    Surface(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// key=value settings file, overridden by flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// dirac | gb | signature
    #[arg(long)]
    op: Option<String>,
    /// cross-section: circle, torus2, torus3, sphere2, sphere3
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// min | max | delta | W:s1,s2,...
    #[arg(long)]
    ext: Option<String>,
    /// use the cone formula (Dirac index)
    #[arg(long)]
    cone: bool,
    /// trivial | nontrivial
    #[arg(long)]
    spin: Option<String>,
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    grading: Option<String>,
    #[arg(long)]
    smax: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    /// json | csv
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    ahat: Option<String>,
    #[arg(long)]
    euler: Option<String>,
    #[arg(long)]
    l: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    /// mls1 | schur | normp | mls2
    #[arg(long)]
    lemma: Option<String>,
    #[arg(long)]
    gb: Option<String>,
    /// a:b range or b1,b2,... list
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    delta0: Option<String>,
    /// pow:<a> | horn:<a>
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    interior: Option<String>,
    #[arg(long)]
    skip: bool,
    #[arg(long, allow_hyphen_values = true)]
    chi: Option<String>,
    #[arg(long)]
    k: Option<String>,
}

impl Flags {
    fn settings(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let fields: [(&str, &Option<String>); 26] = [
            ("op", &self.op),
            ("n", &self.n),
            ("alpha", &self.alpha),
            ("ext", &self.ext),
            ("spin", &self.spin),
            ("mesh", &self.mesh),
            ("grading", &self.grading),
            ("smax", &self.smax),
            ("tol", &self.tol),
            ("format", &self.format),
            ("out", &self.out),
            ("ahat", &self.ahat),
            ("euler", &self.euler),
            ("l", &self.l),
            ("eta", &self.eta),
            ("lemma", &self.lemma),
            ("gb", &self.gb),
            ("beta", &self.beta),
            ("steps", &self.steps),
            ("delta0", &self.delta0),
            ("h", &self.h),
            ("delta", &self.delta),
            ("eps", &self.eps),
            ("interior", &self.interior),
            ("chi", &self.chi),
            ("k", &self.k),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        }
        if self.cone {
            m.insert("cone".into(), "true".into());
        }
        if self.skip {
            m.insert("skip".into(), "true".into());
        }
        m
    }
}

/// Parses arguments, merges config layers and resolves the run.
pub fn resolve<I, T>(args: I) -> std::result::Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    let (command, flags) = match &cli.command {
        Sub::Classify(f) => (Command::Classify, f),
        Sub::Index(f) => (Command::Index, f),
        Sub::Bounds(f) => (Command::Bounds, f),
        Sub::Homotopy(f) => (Command::Homotopy, f),
        Sub::Surface(f) => (Command::Surface, f),
    };
    let mut settings = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    settings.extend(flags.settings());
    Ok(RunConfig::from_settings(command, &settings)?)
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

/// Exit code for a library error: numerical breakdowns are assertion failures,
/// everything else is a configuration problem.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::NotIntegral(_) | Error::NoConvergence(_) => EXIT_ASSERTION,
        _ => EXIT_CONFIG,
    }
}

/// Runs the CLI on `args`, writing the document to `--out` or stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match resolve(args) {
        Ok(c) => c,
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit_code(&e);
        }
    };
    let text = match outcome.render(cfg.format) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match &cfg.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        }
        None => print!("{text}"),
    }
    if let Some(f) = &outcome.failure {
        eprintln!("assertion failed: {f}");
    }
    outcome.exit_code()
}
