//! Channel-wise model of the operator near the horn: classification of closed
//! extensions, boundary values, parametrix assembly and perturbation norms.

use std::collections::BTreeMap;

use num_rational::Rational64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GeometricOperatorModel, Perturbation};
use crate::kernels::{top_singular_value, Branch, KernelOperator};
use crate::quad::{fit_slope, logspace, GradedMesh};
use crate::warp::{coefficient, pure_power, CoefficientKind, WarpProfile};

pub const DEFAULT_S_MAX: f64 = 32.0;
/// Geometric nodes used to extrapolate boundary values.
pub const PHI_NODES: usize = 8;
pub const PHI_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Coefficient `h'/h`, operator `S`.
    #[serde(rename = "T_FAMILY")]
    T,
    /// Coefficient `1/h`, operator `S̃`.
    #[serde(rename = "TILDE_FAMILY")]
    Tilde,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Harmonic { degree: usize },
    Spinor,
    /// Coclosed `degree`-forms paired with their differentials.
    Pair { degree: usize, level: u64 },
    Block { id: u8, j: usize, level: u64 },
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralChannel {
    pub s: f64,
    /// Exact value when the eigenvalue is rational.
    #[serde(skip)]
    pub exact: Option<Rational64>,
    pub mult: usize,
    pub family: Family,
    pub origin: Origin,
}

impl SpectralChannel {
    pub fn t_exact(s: Rational64, mult: usize, origin: Origin) -> Self {
        Self { s: *s.numer() as f64 / *s.denom() as f64, exact: Some(s), mult, family: Family::T, origin }
    }

    pub fn t(s: f64, mult: usize, origin: Origin) -> Self {
        Self { s, exact: None, mult, family: Family::T, origin }
    }

    pub fn tilde(s: f64, mult: usize, origin: Origin) -> Result<Self> {
        if s == 0.0 || !s.is_finite() {
            return Err(Error::ChannelRejected("tilde channels need a nonzero finite eigenvalue".into()));
        }
        if mult == 0 {
            return Err(Error::ChannelRejected("multiplicity must be at least 1".into()));
        }
        Ok(Self { s, exact: None, mult, family: Family::Tilde, origin })
    }

    /// `|alpha s| < 1/2`, exact when the eigenvalue is rational.
    pub fn in_quotient(&self, alpha: f64) -> bool {
        self.family == Family::T && below_half(self.s, self.exact, alpha)
    }
}

fn below_half(s: f64, exact: Option<Rational64>, alpha: f64) -> bool {
    match exact {
        Some(r) => 2.0 * (r.numer().unsigned_abs() as f64) * alpha < *r.denom() as f64,
        None => (alpha * s).abs() < 0.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Membership {
    /// Contributes a dimension to `D(D_max)/D(D_min)`.
    pub contributes: bool,
    /// `x^(-alpha s)` is square integrable near 0.
    pub l2_near_zero: bool,
}

pub fn classify_channel(s: f64, alpha: f64, family: Family) -> Result<Membership> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be >= 1, got {alpha}")));
    }
    match family {
        Family::Tilde if s == 0.0 => Err(Error::ChannelRejected("tilde channels have s != 0".into())),
        Family::Tilde => Ok(Membership { contributes: false, l2_near_zero: false }),
        Family::T => Ok(Membership { contributes: (alpha * s).abs() < 0.5, l2_near_zero: alpha * s < 0.5 }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCount {
    pub s: f64,
    pub mult: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotientReport {
    pub operator: String,
    pub cross_section: String,
    pub alpha: f64,
    pub channels: Vec<ChannelCount>,
    pub dim: usize,
}

impl QuotientReport {
    pub fn unique_extension(&self) -> bool {
        self.dim == 0
    }
}

/// Quotient channels of a model, merged by eigenvalue and sorted.
fn quotient_channels(model: &GeometricOperatorModel) -> Vec<ChannelCount> {
    let mut m: BTreeMap<i64, ChannelCount> = BTreeMap::new();
    for c in model.t_channels.iter().filter(|c| c.in_quotient(model.alpha)) {
        let key = (c.s * 1e12).round() as i64;
        m.entry(key).or_insert(ChannelCount { s: c.s, mult: 0 }).mult += c.mult;
    }
    m.into_values().collect()
}

pub fn quotient_dimension(model: &GeometricOperatorModel) -> QuotientReport {
    let channels = quotient_channels(model);
    QuotientReport {
        operator: model.kind.to_string(),
        cross_section: model.cross_section.clone(),
        alpha: model.alpha,
        dim: channels.iter().map(|c| c.mult).sum(),
        channels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExtensionVariant {
    Min,
    Max,
    Delta,
    Subspace,
}

/// A closed extension, given by the selected part `W` of the quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionSpec {
    pub variant: ExtensionVariant,
    pub selection: Vec<ChannelCount>,
}

fn same_s(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs())
}

impl ExtensionSpec {
    pub fn min() -> Self {
        Self { variant: ExtensionVariant::Min, selection: Vec::new() }
    }

    pub fn max(model: &GeometricOperatorModel) -> Self {
        Self { variant: ExtensionVariant::Max, selection: quotient_channels(model) }
    }

    /// `W` = quotient channels with `-1/(2 alpha) < s < 0`.
    pub fn delta(model: &GeometricOperatorModel) -> Self {
        let selection = quotient_channels(model).into_iter().filter(|c| c.s < 0.0).collect();
        Self { variant: ExtensionVariant::Delta, selection }
    }

    /// Arbitrary sub-multiplicities of quotient channels.
    pub fn subspace(model: &GeometricOperatorModel, picks: &[ChannelCount]) -> Result<Self> {
        let q = quotient_channels(model);
        let mut selection: Vec<ChannelCount> = Vec::new();
        for p in picks {
            let Some(avail) = q.iter().find(|c| same_s(c.s, p.s)) else {
                return Err(Error::ChannelRejected(format!(
                    "s = {} is not a quotient channel (|alpha s| < 1/2) of this model",
                    p.s
                )));
            };
            match selection.iter_mut().find(|c| same_s(c.s, p.s)) {
                Some(c) => c.mult += p.mult,
                None => selection.push(ChannelCount { s: avail.s, mult: p.mult }),
            }
            let chosen = selection.iter().find(|c| same_s(c.s, p.s)).map_or(0, |c| c.mult);
            if chosen > avail.mult {
                return Err(Error::ChannelRejected(format!("s = {} has multiplicity {} < {chosen}", p.s, avail.mult)));
            }
        }
        selection.retain(|c| c.mult > 0);
        selection.sort_by(|a, b| a.s.total_cmp(&b.s));
        Ok(Self { variant: ExtensionVariant::Subspace, selection })
    }

    /// Parses `min`, `max`, `delta` or `W:s1,s2:m,...` (`:m` picks a sub-multiplicity).
    pub fn parse(text: &str, model: &GeometricOperatorModel) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Self::min()),
            "max" => Ok(Self::max(model)),
            "delta" => Ok(Self::delta(model)),
            other => {
                let Some(list) = other.strip_prefix("w:") else {
                    return Err(Error::Config(format!("unknown extension `{text}`")));
                };
                let q = quotient_channels(model);
                let mut picks = Vec::new();
                for item in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                    let (s, m) = match item.split_once(':') {
                        Some((s, m)) => (s, Some(m)),
                        None => (item, None),
                    };
                    let s: f64 = s.parse().map_err(|_| Error::Config(format!("bad channel `{item}`")))?;
                    let mult = match m {
                        Some(m) => m.parse().map_err(|_| Error::Config(format!("bad multiplicity `{item}`")))?,
                        None => q.iter().find(|c| same_s(c.s, s)).map_or(1, |c| c.mult),
                    };
                    picks.push(ChannelCount { s, mult });
                }
                Self::subspace(model, &picks)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.selection.iter().map(|c| c.mult).sum()
    }

    pub fn selected(&self, s: f64) -> usize {
        self.selection.iter().find(|c| same_s(c.s, s)).map_or(0, |c| c.mult)
    }

    pub fn tag(&self) -> String {
        match self.variant {
            ExtensionVariant::Min => "min".into(),
            ExtensionVariant::Max => "max".into(),
            ExtensionVariant::Delta => "delta".into(),
            ExtensionVariant::Subspace => {
                let parts: Vec<String> = self.selection.iter().map(|c| format!("{}:{}", c.s, c.mult)).collect();
                format!("W:{}", parts.join(","))
            }
        }
    }
}

/// `V` with `D^t_V = (D_W)^*`: the channel-wise complement of `W` in the quotient.
pub fn adjoint_extension(w: &ExtensionSpec, model: &GeometricOperatorModel) -> ExtensionSpec {
    let q = quotient_channels(model);
    let selection: Vec<ChannelCount> = q
        .iter()
        .map(|c| ChannelCount { s: c.s, mult: c.mult - w.selected(c.s).min(c.mult) })
        .filter(|c| c.mult > 0)
        .collect();
    let total: usize = q.iter().map(|c| c.mult).sum();
    let dim: usize = selection.iter().map(|c| c.mult).sum();
    let variant = if dim == 0 {
        ExtensionVariant::Min
    } else if dim == total {
        ExtensionVariant::Max
    } else {
        ExtensionVariant::Subspace
    };
    ExtensionSpec { variant, selection }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParametrixVariant {
    Max,
    Min,
    Delta,
    Custom(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParametrixSpec {
    pub variant: ParametrixVariant,
}

impl BoundaryParametrixSpec {
    pub fn new(variant: ParametrixVariant) -> Self {
        Self { variant }
    }

    /// Branch of the parametrix on a channel.
    pub fn branch(&self, channel: &SpectralChannel, alpha: f64) -> Branch {
        let s = channel.s;
        if channel.family == Family::Tilde {
            return if s > 0.0 { Branch::FromZero } else { Branch::FromOne };
        }
        let edge = 0.5 / alpha;
        let zero = match self.variant {
            ParametrixVariant::Max => s >= edge,
            ParametrixVariant::Min => s > -edge,
            ParametrixVariant::Delta => s >= 0.0,
            ParametrixVariant::Custom(s1) => s > s1,
        };
        if zero {
            Branch::FromZero
        } else {
            Branch::FromOne
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembledChannel {
    pub channel: SpectralChannel,
    pub branch: Branch,
}

#[derive(Debug, Clone)]
pub struct ParametrixAssembly {
    pub channels: Vec<AssembledChannel>,
    pub operators: Vec<KernelOperator>,
    /// `C0 / s_max` with `C0 = h(eps)`, bounding every omitted tilde channel.
    pub tail_bound: f64,
}

/// One kernel operator per channel with `|s| <= s_max`, on the model's pure power horn.
pub fn assemble_parametrix(
    model: &GeometricOperatorModel,
    spec: &BoundaryParametrixSpec,
    s_max: f64,
    profile: &WarpProfile,
    mesh_n: usize,
) -> Result<ParametrixAssembly> {
    if !(s_max > 0.0) {
        return Err(Error::InvalidParameter(format!("s_max must be positive, got {s_max}")));
    }
    let alpha = model.alpha;
    if let ParametrixVariant::Custom(s1) = spec.variant {
        if s1.abs() > 0.5 / alpha {
            return Err(Error::InvalidParameter(format!("s1 = {s1} lies outside [-1/(2 alpha), 1/(2 alpha)]")));
        }
        if model.t_channels.iter().any(|c| same_s(c.s, s1)) {
            return Err(Error::InvalidParameter(format!("s1 = {s1} is an eigenvalue of S")));
        }
    }
    let mesh = GradedMesh::new(mesh_n, GradedMesh::inverse_grading(alpha), profile.eps())?;
    let horn = coefficient(profile, CoefficientKind::HornRatio)?;
    let inverse = coefficient(profile, CoefficientKind::Inverse)?;
    let mut channels = Vec::new();
    let mut operators = Vec::new();
    for c in model.channels().filter(|c| c.s.abs() <= s_max) {
        let branch = spec.branch(c, alpha);
        let coeff = if c.family == Family::T { horn.clone() } else { inverse.clone() };
        operators.push(KernelOperator::new(branch, c.s, coeff, mesh.clone())?);
        channels.push(AssembledChannel { channel: c.clone(), branch });
    }
    Ok(ParametrixAssembly { channels, operators, tail_bound: profile.h(profile.eps()) / s_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhiSide {
    /// `lim x^(alpha s) f(x)`
    Phi,
    /// `lim x^(-alpha s) f(x)`
    PhiPrime,
}

/// Boundary value at 0 by iterated Aitken extrapolation over `x_min 2^k`, `k < 8`.
pub fn boundary_value_phi(f: &dyn Fn(f64) -> f64, x_min: f64, s: f64, alpha: f64, side: PhiSide) -> Result<f64> {
    if (alpha * s).abs() >= 0.5 {
        return Err(Error::InvalidParameter(format!("boundary values need |alpha s| < 1/2, got {}", alpha * s)));
    }
    if !(x_min > 0.0) {
        return Err(Error::InvalidParameter("x_min must be positive".into()));
    }
    let w = match side {
        PhiSide::Phi => alpha * s,
        PhiSide::PhiPrime => -alpha * s,
    };
    // Ordered towards 0.
    let seq: Vec<f64> = (0..PHI_NODES)
        .rev()
        .map(|k| {
            let x = x_min * 2f64.powi(k as i32);
            x.powf(w) * f(x)
        })
        .collect();
    if seq.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("non-finite samples near 0".into()));
    }
    let scale = seq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut col = seq;
    let mut estimates = vec![*col.last().unwrap()];
    while col.len() >= 3 {
        let next: Vec<f64> = col
            .windows(3)
            .map(|t| {
                let d1 = t[1] - t[0];
                let d2 = t[2] - t[1];
                let den = d2 - d1;
                if den.abs() <= 1e-13 * scale {
                    t[2]
                } else {
                    t[2] - d2 * d2 / den
                }
            })
            .collect();
        estimates.push(*next.last().unwrap());
        col = next;
    }
    let n = estimates.len();
    let value = estimates[n - 1];
    let change = (estimates[n - 1] - estimates[n - 2]).abs();
    let spread = (estimates[n - 2] - estimates[n - 3]).abs();
    if change > PHI_TOL * scale.max(1.0) && change >= spread {
        return Err(Error::NoConvergence(format!("boundary value extrapolation oscillates (last change {change:e})")));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub threshold: f64,
    pub pass: bool,
    pub points: usize,
}

/// Log-log slope of `|f|` over the decade above the smallest sample.
pub fn check_decay(xs: &[f64], values: &[f64], alpha: f64) -> Result<DecayFit> {
    if xs.len() != values.len() {
        return Err(Error::InvalidParameter("sample lengths differ".into()));
    }
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(values)
        .filter(|(&x, &v)| x <= 10.0 * x_min * (1.0 + 1e-12) && v != 0.0 && v.is_finite())
        .map(|(&x, &v)| (x.ln(), v.abs().ln()))
        .unzip();
    if lx.len() < 3 {
        return Err(Error::InvalidParameter("insufficient dynamic range for a decay fit".into()));
    }
    let slope = fit_slope(&lx, &ly).ok_or_else(|| Error::InvalidParameter("degenerate decay samples".into()))?;
    let threshold = alpha / 2.0 - 0.1;
    Ok(DecayFit { slope, threshold, pass: slope >= threshold, points: lx.len() })
}

/// Max-domain solution `P f` of a tilde channel, sampled over the decade `[x_min, 10 x_min]`.
pub fn tilde_solution(alpha: f64, s: f64, f: &dyn Fn(f64) -> f64, x_min: f64, mesh_n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let profile = pure_power(alpha, 1.0)?;
    let coeff = coefficient(&profile, CoefficientKind::Inverse)?;
    let branch = if s > 0.0 { Branch::FromZero } else { Branch::FromOne };
    let mesh = GradedMesh::new(mesh_n, GradedMesh::inverse_grading(alpha), 1.0)?;
    let k = KernelOperator::new(branch, s, coeff, mesh)?;
    let xs = logspace(x_min, 10.0 * x_min, 12);
    let ys = k.apply_many(f, &xs)?;
    Ok((xs, ys))
}

/// Smallest decay slope over a probing family of L² inputs (constant, `x^-0.4`, sine).
pub fn max_domain_decay(alpha: f64, s: f64, x_min: f64, mesh_n: usize) -> Result<DecayFit> {
    let probes: [&dyn Fn(f64) -> f64; 3] = [&|_| 1.0, &|x: f64| x.powf(-0.4), &|x: f64| (3.0 * x).sin() + 2.0];
    let mut worst: Option<DecayFit> = None;
    for f in probes {
        let (xs, ys) = tilde_solution(alpha, s, f, x_min, mesh_n)?;
        let fit = check_decay(&xs, &ys, alpha)?;
        if worst.as_ref().map_or(true, |w| fit.slope < w.slope) {
            worst = Some(fit);
        }
    }
    Ok(worst.expect("nonempty probe family"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub eps: f64,
    pub value: f64,
    pub value_half: f64,
    pub ratio: f64,
    /// `2^-(alpha-1)`
    pub target: f64,
    /// `‖Ã‖ eps^(alpha-1) / s_min`, from the single-operator Schur bound.
    pub envelope: f64,
    pub within_envelope: bool,
    pub pass: bool,
}

/// `‖X^-1 Ã P‖` for one perturbation term on `(0, eps)`, `h = x^alpha`.
fn perturbation_term_norm(term: &Perturbation, alpha: f64, eps: f64, mesh_n: usize) -> Result<f64> {
    let profile = pure_power(alpha, 1.0)?;
    let coeff = coefficient(&profile, CoefficientKind::Inverse)?;
    let mesh = GradedMesh::new(mesh_n, GradedMesh::inverse_grading(alpha), eps)?;
    let op = |s: f64| -> Result<KernelOperator> {
        let branch = if s > 0.0 { Branch::FromZero } else { Branch::FromOne };
        Ok(KernelOperator::new(branch, s, coeff.clone(), mesh.clone())?.with_weights(-1.0, 0.0))
    };
    match term {
        Perturbation::Scalar { s, horn, .. } => Ok(horn.abs() * op(*s)?.op_norm_estimate()?),
        Perturbation::Pair(p) => {
            let r = p.coupling.abs();
            let plus = op(r)?;
            let minus = op(-r)?;
            let (dp, dm) = (plus.cell_data(), minus.cell_data());
            // Ã in the eigenbasis (1, ±1)/√2 of the coupling matrix.
            let a = 0.5 * (p.horn[0] + p.horn[1]);
            let b = 0.5 * (p.horn[0] - p.horn[1]);
            let n = mesh.cells();
            top_singular_value(2 * n, |v| {
                let up = plus.galerkin_apply(&dp, &v[..n], false);
                let um = minus.galerkin_apply(&dm, &v[n..], false);
                let wp: Vec<f64> = up.iter().zip(&um).map(|(x, y)| a * x + b * y).collect();
                let wm: Vec<f64> = up.iter().zip(&um).map(|(x, y)| b * x + a * y).collect();
                let zp: Vec<f64> = wp.iter().zip(&wm).map(|(x, y)| a * x + b * y).collect();
                let zm: Vec<f64> = wp.iter().zip(&wm).map(|(x, y)| b * x + a * y).collect();
                let mut out = plus.galerkin_apply(&dp, &zp, true);
                out.extend(minus.galerkin_apply(&dm, &zm, true));
                out
            })
        }
    }
}

fn perturbation_value(model: &GeometricOperatorModel, eps: f64, s_max: f64, mesh_n: usize) -> Result<(f64, f64)> {
    let terms: Vec<&Perturbation> = model.perturbation.iter().filter(|p| p.norm() > 0.0 && p.min_abs_s() <= s_max).collect();
    if terms.is_empty() {
        return Ok((0.0, 0.0));
    }
    let norms: Vec<f64> = terms
        .par_iter()
        .map(|t| perturbation_term_norm(t, model.alpha, eps, mesh_n))
        .collect::<Result<Vec<_>>>()?;
    let value = norms.iter().cloned().fold(0.0, f64::max);
    let envelope = terms
        .iter()
        .map(|t| t.norm() * eps.powf(model.alpha - 1.0) / t.min_abs_s())
        .fold(0.0, f64::max);
    Ok((value, envelope))
}

/// Discretized `‖X^-1 Ã P_bd‖` on `(0, eps)` and its scaling under `eps -> eps/2`.
pub fn perturbation_norm_bound(model: &GeometricOperatorModel, eps: f64, s_max: f64, mesh_n: usize, tol: f64) -> Result<PerturbationReport> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1], got {eps}")));
    }
    let (value, envelope) = perturbation_value(model, eps, s_max, mesh_n)?;
    let (value_half, _) = perturbation_value(model, eps / 2.0, s_max, mesh_n)?;
    let target = 2f64.powf(-(model.alpha - 1.0));
    let ratio = if value > 0.0 { value_half / value } else { 0.0 };
    Ok(PerturbationReport {
        eps,
        value,
        value_half,
        ratio,
        target,
        envelope,
        within_envelope: value <= envelope * (1.0 + tol),
        pass: ratio <= target * (1.0 + tol),
    })
}

/// `⟨T f, g⟩ - ⟨f, T^t g⟩` for `T = d/dx + (alpha s)/x` on `(0, eps)`.
pub fn green_pairing_defect(
    alpha: f64,
    s: f64,
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
    dg: &dyn Fn(f64) -> f64,
    eps: f64,
) -> f64 {
    let c = alpha * s;
    let integrand = |x: f64| {
        let tf = df(x) + c / x * f(x);
        let ttg = -dg(x) + c / x * g(x);
        tf * g(x) - f(x) * ttg
    };
    // Geometric panels resolve the x^(±c) behaviour at 0.
    let mut total = 0.0;
    let mut r = eps;
    for _ in 0..120 {
        let l = r / 2.0;
        total += crate::quad::gl8_composite(l, r, 16, integrand);
        r = l;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{catalog_cross_section, dirac_normal_form, gb_normal_form, signature_normal_form, SpinStructure, DEFAULT_CUTOFF};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(op: &str, name: &str, alpha: f64) -> GeometricOperatorModel {
        let cs = catalog_cross_section(name, DEFAULT_CUTOFF).unwrap();
        match op {
            "gb" => gb_normal_form(&cs, alpha).unwrap(),
            "signature" => signature_normal_form(&cs, alpha).unwrap(),
            _ => dirac_normal_form(&cs, alpha, SpinStructure::Trivial).unwrap(),
        }
    }

    #[test]
    fn classify_examples() {
        let m = classify_channel(0.0, 2.0, Family::T).unwrap();
        assert!(m.contributes && m.l2_near_zero);
        assert!(classify_channel(0.2, 2.0, Family::T).unwrap().contributes);
        assert!(!classify_channel(0.5, 1.5, Family::T).unwrap().contributes);
        assert!(!classify_channel(1.0, 2.0, Family::Tilde).unwrap().contributes);
        assert!(classify_channel(0.0, 2.0, Family::Tilde).is_err());
        assert!(classify_channel(0.1, 0.5, Family::T).is_err());
    }

    #[test]
    fn quotient_table() {
        assert_eq!(quotient_dimension(&model("gb", "torus2", 1.5)).dim, 2);
        assert_eq!(quotient_dimension(&model("signature", "torus3", 2.0)).dim, 0);
        assert_eq!(quotient_dimension(&model("dirac", "torus3", 2.0)).dim, 2);
        assert_eq!(quotient_dimension(&model("gb", "circle", 2.0)).dim, 0);
        assert_eq!(quotient_dimension(&model("gb", "sphere2", 2.0)).dim, 0);
    }

    #[test]
    fn quotient_json_fields() {
        let v = crate::report::to_value(&quotient_dimension(&model("gb", "torus2", 1.5))).unwrap();
        for k in ["operator", "cross_section", "alpha", "channels", "dim"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn extensions_and_adjoints() {
        let m = model("gb", "torus2", 1.5);
        let max = ExtensionSpec::max(&m);
        let min = ExtensionSpec::min();
        assert_eq!(adjoint_extension(&max, &m).variant, ExtensionVariant::Min);
        assert_eq!(adjoint_extension(&min, &m).variant, ExtensionVariant::Max);
        let delta = ExtensionSpec::delta(&m);
        assert_eq!(delta.dim(), 0);
        let v = adjoint_extension(&delta, &m);
        assert_eq!(v.selection, vec![ChannelCount { s: 0.0, mult: 2 }]);
        let w = ExtensionSpec::parse("W:0:1", &m).unwrap();
        assert_eq!(w.dim() + adjoint_extension(&w, &m).dim(), 2);
        assert!(ExtensionSpec::parse("W:1", &m).is_err());
        assert!(ExtensionSpec::parse("W:0:3", &m).is_err());
        assert!(ExtensionSpec::parse("other", &m).is_err());
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<ExtensionSpec>(&json).unwrap(), w);
    }

    #[test]
    fn synthetic_delta() {
        let m = GeometricOperatorModel::synthetic(2.0, vec![SpectralChannel::t(-0.2, 1, Origin::Synthetic), SpectralChannel::t(0.1, 2, Origin::Synthetic)], vec![]);
        let d = ExtensionSpec::delta(&m);
        assert_eq!(d.selection, vec![ChannelCount { s: -0.2, mult: 1 }]);
    }

    #[test]
    fn parametrix_branches() {
        let m = model("dirac", "torus3", 2.0);
        let profile = pure_power(2.0, 1.0).unwrap();
        let a = assemble_parametrix(&m, &BoundaryParametrixSpec::new(ParametrixVariant::Delta), 10.0, &profile, 32).unwrap();
        for c in &a.channels {
            match c.channel.family {
                Family::T => assert_eq!(c.branch, Branch::FromZero),
                Family::Tilde => assert_eq!(c.branch == Branch::FromZero, c.channel.s > 0.0),
            }
        }
        assert_eq!(a.operators.len(), a.channels.len());
        assert_relative_eq!(a.tail_bound, 0.1);
    }

    #[test]
    fn max_and_min_differ_on_quotient() {
        let m = GeometricOperatorModel::synthetic(
            2.0,
            [-0.5, -0.2, 0.0, 0.1, 0.25, 0.7].iter().map(|&s| SpectralChannel::t(s, 1, Origin::Synthetic)).collect(),
            vec![],
        );
        let max = BoundaryParametrixSpec::new(ParametrixVariant::Max);
        let min = BoundaryParametrixSpec::new(ParametrixVariant::Min);
        let differ: Vec<f64> = m.t_channels.iter().filter(|c| max.branch(c, 2.0) != min.branch(c, 2.0)).map(|c| c.s).collect();
        let q: Vec<f64> = quotient_dimension(&m).channels.iter().map(|c| c.s).collect();
        assert_eq!(differ, q);
    }

    #[test]
    fn custom_split_rejects_spectrum() {
        let m = model("gb", "torus2", 2.0);
        let profile = pure_power(2.0, 1.0).unwrap();
        let spec = BoundaryParametrixSpec::new(ParametrixVariant::Custom(0.0));
        assert!(assemble_parametrix(&m, &spec, 10.0, &profile, 16).is_err());
        let spec = BoundaryParametrixSpec::new(ParametrixVariant::Custom(0.1));
        assert!(assemble_parametrix(&m, &spec, 10.0, &profile, 16).is_ok());
        let empty = GeometricOperatorModel::synthetic(2.0, vec![], vec![]);
        let a = assemble_parametrix(&empty, &BoundaryParametrixSpec::new(ParametrixVariant::Max), 10.0, &profile, 16).unwrap();
        assert!(a.operators.is_empty());
    }

    #[test]
    fn phi_examples() {
        let (alpha, s) = (2.0, 0.2);
        let phi = |x: f64| if x < 0.25 { 1.0 } else { 0.0 };
        let f = |x: f64| x.powf(-alpha * s) * phi(x);
        assert_relative_eq!(boundary_value_phi(&f, 1e-6, s, alpha, PhiSide::Phi).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(boundary_value_phi(&|_| 0.0, 1e-6, s, alpha, PhiSide::Phi).unwrap(), 0.0);
        let g = |x: f64| x.powf(-alpha * s) + x.powf(alpha * s);
        let v = boundary_value_phi(&g, 1e-3, s, alpha, PhiSide::Phi).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
        assert!(boundary_value_phi(&g, 1e-3, 0.3, 2.0, PhiSide::Phi).is_err());
    }

    #[test]
    fn phi_vanishes_on_min_parametrix_output() {
        let alpha = 2.0;
        let profile = pure_power(alpha, 1.0).unwrap();
        let coeff = coefficient(&profile, CoefficientKind::HornRatio).unwrap();
        for s in [-0.2, 0.0, 0.15] {
            let c = SpectralChannel::t(s, 1, Origin::Synthetic);
            let branch = BoundaryParametrixSpec::new(ParametrixVariant::Min).branch(&c, alpha);
            assert_eq!(branch, Branch::FromZero);
            let k = KernelOperator::new(branch, s, coeff.clone(), GradedMesh::new(256, 2.0, 1.0).unwrap()).unwrap();
            let f = |x: f64| k.apply(&|y: f64| 1.0 + y, x).unwrap();
            let v = boundary_value_phi(&f, 1e-6, s, alpha, PhiSide::Phi).unwrap();
            assert!(v.abs() < 1e-4, "s={s}: {v}");
        }
    }

    #[test]
    fn green_pairing() {
        let (alpha, s) = (2.0, 0.15);
        let c = alpha * s;
        // Smooth cutoff with φ(0) = 1, negligible at 1.
        let phi = |x: f64| (-(x / 0.3).powi(4)).exp();
        let dphi = |x: f64| -4.0 * x.powi(3) / 0.3f64.powi(4) * phi(x);
        let f = |x: f64| x.powf(-c) * phi(x);
        let df = |x: f64| -c * x.powf(-c - 1.0) * phi(x) + x.powf(-c) * dphi(x);
        let g = |x: f64| x.powf(c) * phi(x);
        let dg = |x: f64| c * x.powf(c - 1.0) * phi(x) + x.powf(c) * dphi(x);
        let defect = green_pairing_defect(alpha, s, &f, &df, &g, &dg, 1.0);
        let phi_f = boundary_value_phi(&f, 1e-6, s, alpha, PhiSide::Phi).unwrap();
        let phi_g = boundary_value_phi(&g, 1e-6, s, alpha, PhiSide::PhiPrime).unwrap();
        assert!((defect + phi_f * phi_g).abs() < 1e-8, "{defect}");
    }

    #[test]
    fn decay_examples() {
        let fit = max_domain_decay(2.0, 1.0, 1e-3, 256).unwrap();
        assert!(fit.slope >= 0.9, "{fit:?}");
        let fit = max_domain_decay(3.0, 1.0, 1e-2, 256).unwrap();
        assert!(fit.slope >= 1.4, "{fit:?}");
        let xs = logspace(1e-3, 1e-2, 10);
        assert!(check_decay(&xs, &vec![0.0; 10], 2.0).is_err());
    }

    #[test]
    fn perturbation_norms() {
        let dirac = model("dirac", "torus3", 2.0);
        let r = perturbation_norm_bound(&dirac, 0.5, 10.0, 64, 1e-8).unwrap();
        assert_eq!(r.value, 0.0);
        let gb = model("gb", "torus2", 2.0);
        let r = perturbation_norm_bound(&gb, 0.5, 7.0, 128, 1e-8).unwrap();
        assert!(r.value > 0.0 && r.value < 0.5);
        assert!(r.within_envelope, "{r:?}");
        assert!(r.ratio < 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn quotient_is_alpha_invariant(a in 1.01f64..4.0, b in 1.01f64..4.0) {
            for (op, name) in [("gb", "torus2"), ("gb", "sphere3"), ("signature", "torus3"), ("dirac", "torus3"), ("gb", "circle")] {
                let m = model(op, name, a);
                let qa = quotient_dimension(&m).dim;
                let qb = quotient_dimension(&m.with_alpha(b).unwrap()).dim;
                prop_assert_eq!(qa, qb);
            }
        }

        #[test]
        fn complement_is_involutive(k in 0usize..=2) {
            let m = model("gb", "torus2", 1.5);
            let w = ExtensionSpec::subspace(&m, &[ChannelCount { s: 0.0, mult: k }]).unwrap();
            let v = adjoint_extension(&w, &m);
            prop_assert_eq!(w.dim() + v.dim(), quotient_dimension(&m).dim);
            prop_assert_eq!(adjoint_extension(&v, &m).dim(), w.dim());
        }

        #[test]
        fn synthetic_max_minus_min(ss in proptest::collection::vec(-1.0f64..1.0, 1..8), alpha in 1.0f64..3.0) {
            let m = GeometricOperatorModel::synthetic(alpha, ss.iter().map(|&s| SpectralChannel::t(s, 1, Origin::Synthetic)).collect(), vec![]);
            let q = quotient_dimension(&m).dim;
            prop_assert_eq!(ExtensionSpec::max(&m).dim() - ExtensionSpec::min().dim(), q);
        }
    }
}
