//! Warping functions `h`, the channel coefficients `h'/h` and `1/h`, the
//! antiderivative `mu(x) = ∫_x^1 dy/h(y)` and the deformation family `h_beta`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::quad::{chebyshev_points, gl8, logspace};

/// Dense validation grid size.
pub const VALIDATION_POINTS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// `x^beta` near 0, cubic blend, `x^2` beyond `eps1`.
    Horn,
    /// Same construction with `beta = 1`.
    Cone,
    /// `x^beta` on all of `(0, 1]`.
    Pure,
    /// Member `h_beta` of a deformation family.
    Member,
}

#[derive(Debug)]
struct MemberData {
    eps_tilde: f64,
    eps0: f64,
    weight: f64,
    left: WarpProfile,
    right: WarpProfile,
}

#[derive(Debug, Clone)]
enum Shape {
    Blend { eps1: f64, coeffs: [f64; 4] },
    Pure,
    Member(Arc<MemberData>),
}

/// Cumulative table of `∫_x^1 dy/h` on `[pure_end, 1]`.
#[derive(Debug, Default)]
struct MuTable {
    breaks: Vec<f64>,
    tail: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WarpProfile {
    kind: ProfileKind,
    beta: f64,
    pure_end: f64,
    eps: f64,
    shape: Shape,
    gamma: f64,
    table: Arc<MuTable>,
}

fn smoothstep(t: f64) -> (f64, f64, f64) {
    let t = t.clamp(0.0, 1.0);
    (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t), 6.0 - 12.0 * t)
}

/// `∫_y^x c t^{-p} dt` for `0 <= y`, `0 < x`, computed without cancellation.
pub fn power_integral(c: f64, p: f64, y: f64, x: f64) -> f64 {
    if y == x {
        return 0.0;
    }
    if y == 0.0 {
        return if p < 1.0 { c * x.powf(1.0 - p) / (1.0 - p) } else { f64::INFINITY };
    }
    let r = (x / y).ln();
    if p == 1.0 {
        c * r
    } else {
        c * y.powf(1.0 - p) * ((1.0 - p) * r).exp_m1() / (1.0 - p)
    }
}

impl WarpProfile {
    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    /// Exponent of the pure-power region.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Right end of the interval on which `h = x^beta` exactly.
    pub fn pure_end(&self) -> f64 {
        self.pure_end
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Largest recorded `gamma` with `h(x) <= x^gamma` on `(0, eps]`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eps1(&self) -> f64 {
        match &self.shape {
            Shape::Blend { eps1, .. } => *eps1,
            Shape::Pure => 1.0,
            Shape::Member(m) => m.left.eps1(),
        }
    }

    pub fn blend_coeffs(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Blend { coeffs, .. } => coeffs.to_vec(),
            Shape::Pure => Vec::new(),
            Shape::Member(m) => vec![0.0, 0.0, 3.0, -2.0, m.weight],
        }
    }

    pub fn h(&self, x: f64) -> f64 {
        if x <= self.pure_end {
            return x.powf(self.beta);
        }
        match &self.shape {
            Shape::Pure => x.powf(self.beta),
            Shape::Blend { eps1, coeffs } => {
                if x <= *eps1 {
                    let t = x - self.pure_end;
                    coeffs[0] + t * (coeffs[1] + t * (coeffs[2] + t * coeffs[3]))
                } else {
                    x * x
                }
            }
            Shape::Member(m) => {
                let mix = m.weight * m.left.h(x) + (1.0 - m.weight) * m.right.h(x);
                if x >= m.eps0 {
                    mix
                } else {
                    let (phi, _, _) = smoothstep((x - m.eps_tilde) / (m.eps0 - m.eps_tilde));
                    let phi = 1.0 - phi;
                    phi * x.powf(self.beta) + (1.0 - phi) * mix
                }
            }
        }
    }

    pub fn dh(&self, x: f64) -> f64 {
        if x <= self.pure_end {
            return self.beta * x.powf(self.beta - 1.0);
        }
        match &self.shape {
            Shape::Pure => self.beta * x.powf(self.beta - 1.0),
            Shape::Blend { eps1, coeffs } => {
                if x <= *eps1 {
                    let t = x - self.pure_end;
                    coeffs[1] + t * (2.0 * coeffs[2] + 3.0 * t * coeffs[3])
                } else {
                    2.0 * x
                }
            }
            Shape::Member(m) => {
                let dmix = m.weight * m.left.dh(x) + (1.0 - m.weight) * m.right.dh(x);
                if x >= m.eps0 {
                    dmix
                } else {
                    let w = m.eps0 - m.eps_tilde;
                    let (s, ds, _) = smoothstep((x - m.eps_tilde) / w);
                    let phi = 1.0 - s;
                    let dphi = -ds / w;
                    let mix = m.weight * m.left.h(x) + (1.0 - m.weight) * m.right.h(x);
                    let p = x.powf(self.beta);
                    dphi * (p - mix) + phi * self.beta * x.powf(self.beta - 1.0) + (1.0 - phi) * dmix
                }
            }
        }
    }

    pub fn d2h(&self, x: f64) -> f64 {
        let b = self.beta;
        if x <= self.pure_end {
            return b * (b - 1.0) * x.powf(b - 2.0);
        }
        match &self.shape {
            Shape::Pure => b * (b - 1.0) * x.powf(b - 2.0),
            Shape::Blend { eps1, coeffs } => {
                if x <= *eps1 {
                    let t = x - self.pure_end;
                    2.0 * coeffs[2] + 6.0 * t * coeffs[3]
                } else {
                    2.0
                }
            }
            Shape::Member(m) => {
                let mix = |f: &dyn Fn(&WarpProfile) -> f64| m.weight * f(&m.left) + (1.0 - m.weight) * f(&m.right);
                let d2mix = mix(&|p| p.d2h(x));
                if x >= m.eps0 {
                    d2mix
                } else {
                    let w = m.eps0 - m.eps_tilde;
                    let (s, ds, dds) = smoothstep((x - m.eps_tilde) / w);
                    let phi = 1.0 - s;
                    let dphi = -ds / w;
                    let ddphi = -dds / (w * w);
                    let p = x.powf(b);
                    let dp = b * x.powf(b - 1.0);
                    let ddp = b * (b - 1.0) * x.powf(b - 2.0);
                    let m0 = mix(&|q| q.h(x));
                    let m1 = mix(&|q| q.dh(x));
                    ddphi * (p - m0) + 2.0 * dphi * (dp - m1) + phi * ddp + (1.0 - phi) * d2mix
                }
            }
        }
    }

    /// Points where `h''` may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![self.pure_end];
        match &self.shape {
            Shape::Blend { eps1, .. } => b.push(*eps1),
            Shape::Pure => {}
            Shape::Member(m) => {
                b.push(m.eps0);
                b.extend(m.left.breakpoints());
                b.extend(m.right.breakpoints());
            }
        }
        b.retain(|v| *v > 0.0 && *v < 1.0);
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup();
        b
    }

    /// `∫_x^1 dy/h(y)`.
    pub fn mu(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) || x > 1.0 {
            return Err(Error::InvalidParameter(format!("mu needs 0 < x <= 1, got {x}")));
        }
        Ok(self.mu_unchecked(x))
    }

    pub(crate) fn mu_unchecked(&self, x: f64) -> f64 {
        if x >= 1.0 {
            return 0.0;
        }
        let pe = self.pure_end.min(1.0);
        if x < pe {
            return power_integral(1.0, self.beta, x, pe) + self.mu_outer(pe);
        }
        self.mu_outer(x)
    }

    fn mu_outer(&self, x: f64) -> f64 {
        let t = &self.table;
        if t.breaks.is_empty() {
            return power_integral(1.0, self.beta, x, 1.0);
        }
        let k = match t.breaks.binary_search_by(|b| b.partial_cmp(&x).unwrap()) {
            Ok(k) => return t.tail[k],
            Err(k) => k,
        };
        let k = k.clamp(1, t.breaks.len() - 1);
        t.tail[k] + gl8(x, t.breaks[k], |y| 1.0 / self.h(y))
    }

    /// `∫_y^x dt/h(t)`, stable for nearby arguments in the pure-power region.
    pub fn inverse_integral(&self, y: f64, x: f64) -> f64 {
        if x < y {
            return -self.inverse_integral(x, y);
        }
        let pe = self.pure_end;
        if x <= pe || matches!(self.shape, Shape::Pure) {
            return power_integral(1.0, self.beta, y, x);
        }
        if y >= pe {
            return self.mu_outer(y) - self.mu_outer(x);
        }
        power_integral(1.0, self.beta, y, pe) + self.mu_outer(pe) - self.mu_outer(x)
    }

    /// `ln h(x) - ln h(y)`.
    pub fn log_ratio(&self, y: f64, x: f64) -> f64 {
        if y == x {
            return 0.0;
        }
        if y == 0.0 {
            return f64::INFINITY;
        }
        if x == 0.0 {
            return f64::NEG_INFINITY;
        }
        let pe = self.pure_end;
        if (x <= pe && y <= pe) || matches!(self.shape, Shape::Pure) {
            return self.beta * (x / y).ln();
        }
        (self.h(x) / self.h(y)).ln()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "kind": self.kind,
            "beta": self.beta,
            "eps0": self.pure_end,
            "eps": self.eps,
            "blend_coeffs": self.blend_coeffs(),
        })
    }

    fn finish(mut self) -> Result<Self> {
        self.table = Arc::new(build_table(&self));
        self.gamma = record_gamma(&self);
        check_monotone(&self)?;
        Ok(self)
    }
}

fn build_table(p: &WarpProfile) -> MuTable {
    if matches!(p.shape, Shape::Pure) || p.pure_end >= 1.0 {
        return MuTable::default();
    }
    let mut breaks = logspace(p.pure_end, 1.0, 257);
    breaks.extend(p.breakpoints());
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let n = breaks.len();
    let mut tail = vec![0.0; n];
    for k in (0..n - 1).rev() {
        tail[k] = tail[k + 1] + gl8(breaks[k], breaks[k + 1], |y| 1.0 / p.h(y));
    }
    MuTable { breaks, tail }
}

fn record_gamma(p: &WarpProfile) -> f64 {
    let top = p.eps.min(1.0 - 1e-9);
    let mut g = p.beta;
    if top > p.pure_end {
        for x in logspace(p.pure_end, top, VALIDATION_POINTS) {
            let r = p.h(x).ln() / x.ln();
            if r.is_finite() {
                g = g.min(r);
            }
        }
    }
    g
}

fn check_monotone(p: &WarpProfile) -> Result<()> {
    if p.pure_end >= 1.0 || matches!(p.shape, Shape::Pure) {
        return Ok(());
    }
    for x in logspace(p.pure_end, 1.0, VALIDATION_POINTS) {
        let d = p.dh(x);
        if !(d > 0.0) || !(p.h(x) > 0.0) {
            return Err(Error::InvalidProfile(format!("h is not increasing near x={x} (h'={d})")));
        }
    }
    Ok(())
}

fn hermite(x0: f64, x1: f64, p0: f64, m0: f64, p1: f64, m1: f64) -> [f64; 4] {
    let l = x1 - x0;
    let d = (p1 - p0) / l;
    [p0, m0, (3.0 * d - 2.0 * m0 - m1) / l, (m0 + m1 - 2.0 * d) / (l * l)]
}

/// `h = x^alpha` on `(0, eps0)`, a C¹ cubic blend on `[eps0, eps1]` and `x^2`
/// beyond, with `eps1 = eps0 + 9(eps - eps0)/10`.
pub fn make_power_horn(alpha: f64, eps0: f64, eps: f64, allow_cone: bool) -> Result<WarpProfile> {
    let eps1 = eps0 + 0.9 * (eps - eps0);
    make_power_horn_with(alpha, eps0, eps1, eps, allow_cone)
}

pub fn make_power_horn_with(alpha: f64, eps0: f64, eps1: f64, eps: f64, allow_cone: bool) -> Result<WarpProfile> {
    if !alpha.is_finite() || alpha < 1.0 || (alpha == 1.0 && !allow_cone) {
        return Err(Error::InvalidParameter(format!(
            "horn exponent must exceed 1 (cone alpha=1 needs the cone flag), got {alpha}"
        )));
    }
    if !(eps0 > 0.0 && eps0 < eps && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < eps0 < eps <= 1, got eps0={eps0}, eps={eps}")));
    }
    if !(eps1 > eps0 && eps1 <= eps) {
        return Err(Error::InvalidParameter(format!("need eps0 < eps1 <= eps, got eps1={eps1}")));
    }
    let coeffs = hermite(
        eps0,
        eps1,
        eps0.powf(alpha),
        alpha * eps0.powf(alpha - 1.0),
        eps1 * eps1,
        2.0 * eps1,
    );
    WarpProfile {
        kind: if alpha == 1.0 { ProfileKind::Cone } else { ProfileKind::Horn },
        beta: alpha,
        pure_end: eps0,
        eps,
        shape: Shape::Blend { eps1, coeffs },
        gamma: alpha,
        table: Arc::default(),
    }
    .finish()
}

/// `h = x^beta` on `(0, 1]`.
pub fn pure_power(beta: f64, eps: f64) -> Result<WarpProfile> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("exponent must be positive, got {beta}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < eps <= 1, got {eps}")));
    }
    WarpProfile {
        kind: ProfileKind::Pure,
        beta,
        pure_end: 1.0,
        eps,
        shape: Shape::Pure,
        gamma: beta,
        table: Arc::default(),
    }
    .finish()
}

/// Deformation `beta -> h_beta` between two horn profiles.
#[derive(Debug, Clone)]
pub struct HomotopyFamily {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_tilde: f64,
    left: WarpProfile,
    right: WarpProfile,
}

pub fn make_homotopy(h_b1: &WarpProfile, h_b2: &WarpProfile, eps_tilde: f64) -> Result<HomotopyFamily> {
    let (b1, b2) = (h_b1.beta(), h_b2.beta());
    if !(b1 >= 1.0 && b1 < b2) {
        return Err(Error::IncompatibleEndpoints(format!("need 1 <= beta1 < beta2, got {b1}, {b2}")));
    }
    for p in [h_b1, h_b2] {
        if !matches!(p.shape, Shape::Blend { .. }) {
            return Err(Error::IncompatibleEndpoints("endpoints must be horn or cone profiles".into()));
        }
    }
    let eps0 = h_b1.pure_end();
    if (h_b2.pure_end() - eps0).abs() > 1e-15 || (h_b1.eps() - h_b2.eps()).abs() > 1e-15 {
        return Err(Error::IncompatibleEndpoints("endpoints use different eps0 or eps".into()));
    }
    let eps1 = h_b1.eps1().max(h_b2.eps1());
    for x in logspace(eps1, h_b1.eps(), 64) {
        if (h_b1.h(x) - h_b2.h(x)).abs() > 1e-12 * h_b1.h(x).abs().max(1.0) {
            return Err(Error::IncompatibleEndpoints(format!("profiles differ at x={x} beyond eps1")));
        }
    }
    if !(eps_tilde > 0.0 && eps_tilde < eps0) {
        return Err(Error::InvalidParameter(format!("need 0 < eps_tilde < eps0, got {eps_tilde}")));
    }
    Ok(HomotopyFamily { beta1: b1, beta2: b2, eps_tilde, left: h_b1.clone(), right: h_b2.clone() })
}

impl HomotopyFamily {
    pub fn eps0(&self) -> f64 {
        self.left.pure_end()
    }

    pub fn eps(&self) -> f64 {
        self.left.eps()
    }

    /// Mixing weight `a_beta = (eps0^beta - eps0^beta2) / (eps0^beta1 - eps0^beta2)`.
    pub fn weight(&self, beta: f64) -> f64 {
        let e = self.eps0();
        if beta == self.beta1 {
            return 1.0;
        }
        if beta == self.beta2 {
            return 0.0;
        }
        (e.powf(beta) - e.powf(self.beta2)) / (e.powf(self.beta1) - e.powf(self.beta2))
    }

    pub fn member(&self, beta: f64) -> Result<WarpProfile> {
        if !(beta >= self.beta1 && beta <= self.beta2) {
            return Err(Error::InvalidParameter(format!(
                "beta={beta} outside [{}, {}]",
                self.beta1, self.beta2
            )));
        }
        if beta == self.beta1 {
            return Ok(self.left.clone());
        }
        if beta == self.beta2 {
            return Ok(self.right.clone());
        }
        WarpProfile {
            kind: ProfileKind::Member,
            beta,
            pure_end: self.eps_tilde,
            eps: self.eps(),
            shape: Shape::Member(Arc::new(MemberData {
                eps_tilde: self.eps_tilde,
                eps0: self.eps0(),
                weight: self.weight(beta),
                left: self.left.clone(),
                right: self.right.clone(),
            })),
            gamma: beta,
            table: Arc::default(),
        }
        .finish()
    }

    pub fn endpoints(&self) -> (&WarpProfile, &WarpProfile) {
        (&self.left, &self.right)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps_tilde": self.eps_tilde,
            "endpoints": [self.left.to_json(), self.right.to_json()],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub beta: f64,
    pub x: f64,
    pub coefficient: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupDifference {
    pub gap: f64,
    pub sup_ratio: f64,
    pub sup_inverse: f64,
    pub sup_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub lower_bound: f64,
    pub x_range: (f64, f64),
    pub betas: Vec<f64>,
    pub min_ratio: f64,
    pub min_inverse: f64,
    pub min_derivative: f64,
    pub violations: Vec<BoundViolation>,
    pub sup_differences: Vec<SupDifference>,
    pub differences_decrease: bool,
    pub pass: bool,
}

/// Checks `F_beta, 1/h_beta >= c` on a grid in `[x1, x2]` and the sup-norm
/// convergence of the coefficients as the gap in `beta` shrinks.
pub fn validate_family(family: &HomotopyFamily, c: f64, x_range: (f64, f64), points: usize) -> Result<FamilyReport> {
    let (x1, x2) = x_range;
    if !(c > 0.0) || !(x1 > 0.0 && x1 < x2 && x2 <= family.eps()) {
        return Err(Error::InvalidParameter("need c > 0 and 0 < x1 < x2 <= eps".into()));
    }
    let grid = logspace(x1, x2, points.max(2));
    let betas = chebyshev_points(family.beta1, family.beta2, 9);
    let mut violations = Vec::new();
    let (mut min_ratio, mut min_inverse, mut min_derivative) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for &b in &betas {
        let h = family.member(b)?;
        for &x in &grid {
            let (hv, dv) = (h.h(x), h.dh(x));
            let ratio = dv / hv;
            let inverse = 1.0 / hv;
            min_ratio = min_ratio.min(ratio);
            min_inverse = min_inverse.min(inverse);
            min_derivative = min_derivative.min(dv);
            if ratio < c {
                violations.push(BoundViolation { beta: b, x, coefficient: "ratio", value: ratio });
            }
            if inverse < c {
                violations.push(BoundViolation { beta: b, x, coefficient: "inverse", value: inverse });
            }
        }
    }
    let base = 0.5 * (family.beta1 + family.beta2);
    let span = family.beta2 - family.beta1;
    let mut sup_differences = Vec::new();
    for k in 0..4 {
        let gap = span * 0.2 / 2f64.powi(k);
        let hb = family.member(base)?;
        let hg = family.member((base + gap).min(family.beta2))?;
        let (mut sr, mut si, mut sh) = (0.0f64, 0.0f64, 0.0f64);
        for &x in &grid {
            sr = sr.max((hb.dh(x) / hb.h(x) - hg.dh(x) / hg.h(x)).abs());
            si = si.max((1.0 / hb.h(x) - 1.0 / hg.h(x)).abs());
            sh = sh.max((hb.h(x) - hg.h(x)).abs() + (hb.dh(x) - hg.dh(x)).abs());
        }
        sup_differences.push(SupDifference { gap, sup_ratio: sr, sup_inverse: si, sup_h: sh });
    }
    let differences_decrease = sup_differences
        .windows(2)
        .all(|w| w[1].sup_ratio <= w[0].sup_ratio && w[1].sup_inverse <= w[0].sup_inverse);
    let pass = violations.is_empty() && differences_decrease && min_derivative > 0.0;
    Ok(FamilyReport {
        lower_bound: c,
        x_range,
        betas,
        min_ratio,
        min_inverse,
        min_derivative,
        violations,
        sup_differences,
        differences_decrease,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// `h'/h`
    HornRatio,
    /// `1/h`
    Inverse,
    Custom,
}

#[derive(Debug, Clone)]
pub enum Source {
    Warp { profile: WarpProfile, inverse: bool },
    /// `scale * x^(-exponent)`
    Power { scale: f64, exponent: f64 },
    Sum(Box<Source>, Box<Source>),
}

impl Source {
    fn value(&self, x: f64) -> f64 {
        match self {
            Source::Warp { profile, inverse: false } => profile.dh(x) / profile.h(x),
            Source::Warp { profile, inverse: true } => 1.0 / profile.h(x),
            Source::Power { scale, exponent } => scale * x.powf(-exponent),
            Source::Sum(a, b) => a.value(x) + b.value(x),
        }
    }

    fn integral(&self, y: f64, x: f64) -> f64 {
        match self {
            Source::Warp { profile, inverse: false } => profile.log_ratio(y, x),
            Source::Warp { profile, inverse: true } => profile.inverse_integral(y, x),
            Source::Power { scale, exponent } => {
                if x >= y {
                    power_integral(*scale, *exponent, y, x)
                } else {
                    -power_integral(*scale, *exponent, x, y)
                }
            }
            Source::Sum(a, b) => a.integral(y, x) + b.integral(y, x),
        }
    }

    fn near_zero(&self) -> (f64, f64) {
        match self {
            Source::Warp { profile, inverse: false } => (profile.beta(), 1.0),
            Source::Warp { profile, inverse: true } => (1.0, profile.beta()),
            Source::Power { scale, exponent } => (*scale, *exponent),
            Source::Sum(a, b) => {
                let (ca, pa) = a.near_zero();
                let (cb, pb) = b.near_zero();
                if pa == pb {
                    (ca + cb, pa)
                } else if pa > pb {
                    (ca, pa)
                } else {
                    (cb, pb)
                }
            }
        }
    }

    fn pure_end(&self) -> f64 {
        match self {
            Source::Warp { profile, .. } => profile.pure_end(),
            Source::Power { .. } => f64::INFINITY,
            Source::Sum(a, b) => a.pure_end().min(b.pure_end()),
        }
    }
}

/// Coefficient `F` of a channel operator `d/dx + s F`.
#[derive(Debug, Clone)]
pub struct ChannelCoefficient {
    pub kind: CoefficientKind,
    pub source: Source,
    /// `F >= lower_bound` on `(0, eps)`.
    pub lower_bound: f64,
    /// `F(x) >= growth / x` near 0, when available.
    pub growth: Option<f64>,
    pub eps: f64,
}

impl ChannelCoefficient {
    pub fn value(&self, x: f64) -> f64 {
        self.source.value(x)
    }

    /// `∫_y^x F`, signed.
    pub fn integral(&self, y: f64, x: f64) -> f64 {
        self.source.integral(y, x)
    }

    /// `(c, p)` with `F(x) = c x^(-p)` near 0.
    pub fn near_zero(&self) -> (f64, f64) {
        self.source.near_zero()
    }

    pub fn pure_end(&self) -> f64 {
        self.source.pure_end()
    }

    /// `scale * x^(-exponent)` on `(0, eps)`.
    pub fn power(scale: f64, exponent: f64, eps: f64) -> Result<Self> {
        if !(scale > 0.0) || !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidParameter("power coefficient needs scale > 0 and 0 < eps <= 1".into()));
        }
        let lower_bound = scale * eps.powf(-exponent);
        let growth = (exponent >= 1.0).then_some(scale);
        Ok(Self {
            kind: CoefficientKind::Custom,
            source: Source::Power { scale, exponent },
            lower_bound,
            growth,
            eps,
        })
    }

    pub fn sum(a: &ChannelCoefficient, b: &ChannelCoefficient) -> Self {
        let growth = match (a.growth, b.growth) {
            (Some(x), Some(y)) => Some(x + y),
            (Some(x), None) | (None, Some(x)) => Some(x),
            _ => None,
        };
        Self {
            kind: CoefficientKind::Custom,
            source: Source::Sum(Box::new(a.source.clone()), Box::new(b.source.clone())),
            lower_bound: a.lower_bound + b.lower_bound,
            growth,
            eps: a.eps.min(b.eps),
        }
    }

    pub fn scaled_lower_bound_ok(&self, c: f64) -> bool {
        self.lower_bound >= c
    }
}

/// Builds `h'/h` or `1/h` for a profile, recording its lower bound on `(0, eps)`.
pub fn coefficient(profile: &WarpProfile, kind: CoefficientKind) -> Result<ChannelCoefficient> {
    let inverse = match kind {
        CoefficientKind::HornRatio => false,
        CoefficientKind::Inverse => true,
        CoefficientKind::Custom => {
            return Err(Error::InvalidParameter("custom coefficients are built with ChannelCoefficient::power".into()))
        }
    };
    let eps = profile.eps();
    let pe = profile.pure_end().min(eps);
    let b = profile.beta();
    let source = Source::Warp { profile: profile.clone(), inverse };
    let mut lower = if inverse { pe.powf(-b) } else { b / pe };
    if eps > pe {
        for x in logspace(pe, eps, VALIDATION_POINTS) {
            lower = lower.min(source.value(x));
        }
    }
    let growth = Some(if inverse { 1.0 } else { b });
    Ok(ChannelCoefficient { kind, source, lower_bound: lower, growth, eps })
}
