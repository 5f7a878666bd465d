//! Deformation of the horn exponent: HS continuity of the boundary parametrix,
//! the contraction certificate, graph-operator lower bounds, per-channel index
//! stability and removal of the horn perturbation.

use rayon::prelude::*;
use serde::Serialize;

use crate::channels::Family;
use crate::error::{Error, Result};
use crate::geometry::GeometricOperatorModel;
use crate::kernels::{hs_difference, Branch, KernelOperator};
use crate::oracle::{
    delta_condition, graph_sigma_min, model_systems, stable_counts, ChannelSystem, Cutoff, OracleMesh, SV_TOL,
};
use crate::quad::{chebyshev_points, gl8_composite, logspace, GradedMesh};
use crate::report::{fmt_float, to_csv};
use crate::warp::{coefficient, make_homotopy, make_power_horn, pure_power, CoefficientKind, HomotopyFamily, WarpProfile};

pub const DEFAULT_BETA_SAMPLES: usize = 9;
pub const GRAPH_TOL: f64 = 1e-8;
/// Probes with a larger perturbation-to-graph-norm ratio fail the removal check.
pub const RELATIVE_BOUND_LIMIT: f64 = 1e3;
const MINORANT_POINTS: usize = 16000;
const MINORANT_DECADES: f64 = 14.0;

/// Source of the profiles `h_beta`.
#[derive(Debug, Clone)]
pub enum Deformation {
    Family(HomotopyFamily),
    /// `h = x^beta` on `(0, eps]`.
    PurePowers { eps: f64 },
    Fixed(WarpProfile),
}

impl Deformation {
    pub fn member(&self, beta: f64) -> Result<WarpProfile> {
        match self {
            Deformation::Family(f) => f.member(beta),
            Deformation::PurePowers { eps } => pure_power(beta, *eps),
            Deformation::Fixed(p) if (p.beta() - beta).abs() < 1e-12 => Ok(p.clone()),
            Deformation::Fixed(p) => Err(Error::InvalidParameter(format!(
                "fixed profile has beta={}, asked for {beta}",
                p.beta()
            ))),
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            Deformation::Family(f) => f.eps(),
            Deformation::PurePowers { eps } => *eps,
            Deformation::Fixed(p) => p.eps(),
        }
    }
}

/// Horn family between `beta1` and `beta2` with `eps0 = 1/4`, `eps = 1`, `eps_tilde = 1/8`.
pub fn standard_family(beta1: f64, beta2: f64) -> Result<HomotopyFamily> {
    let left = make_power_horn(beta1, 0.25, 1.0, true)?;
    let right = make_power_horn(beta2, 0.25, 1.0, true)?;
    make_homotopy(&left, &right, 0.125)
}

#[derive(Debug, Clone)]
pub struct DeformationGrid {
    pub deformation: Deformation,
    pub betas: Vec<f64>,
    pub s_values: Vec<f64>,
    pub s_max: f64,
    pub mesh_n: usize,
}

fn dyadic_s(s_max: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut s = 0.125;
    while s <= s_max {
        v.push(s);
        s *= 2.0;
    }
    v
}

impl DeformationGrid {
    pub fn new(deformation: Deformation, betas: Vec<f64>, s_max: f64, mesh_n: usize) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter("deformation grid needs at least one beta".into()));
        }
        if betas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("beta samples must increase".into()));
        }
        if let Deformation::Family(f) = &deformation {
            if betas.iter().any(|&b| b < f.beta1 || b > f.beta2) {
                return Err(Error::InvalidParameter(format!("beta samples must lie in [{}, {}]", f.beta1, f.beta2)));
            }
        }
        if betas.iter().any(|&b| !(b >= 1.0)) {
            return Err(Error::InvalidParameter("beta samples must be >= 1".into()));
        }
        if !(s_max > 0.0) || mesh_n == 0 {
            return Err(Error::InvalidParameter("need s_max > 0 and a nonempty mesh".into()));
        }
        Ok(Self { deformation, betas, s_values: dyadic_s(s_max), s_max, mesh_n })
    }

    /// `count` Chebyshev points of `[beta1, beta2]` of a standard horn family.
    pub fn chebyshev(beta1: f64, beta2: f64, count: usize, s_max: f64, mesh_n: usize) -> Result<Self> {
        if beta1 == beta2 {
            let p = make_power_horn(beta1, 0.25, 1.0, true)?;
            return Self::new(Deformation::Fixed(p), vec![beta1], s_max, mesh_n);
        }
        let family = standard_family(beta1, beta2)?;
        Self::new(Deformation::Family(family), chebyshev_points(beta1, beta2, count), s_max, mesh_n)
    }

    /// Adds `|s|` of every model channel up to `s_max` to the s grid.
    pub fn with_channels(mut self, model: &GeometricOperatorModel) -> Self {
        for c in model.channels() {
            let s = c.s.abs();
            if s > 0.0 && s <= self.s_max && !self.s_values.iter().any(|v| (v - s).abs() < 1e-12) {
                self.s_values.push(s);
            }
        }
        self.s_values.sort_by(f64::total_cmp);
        self
    }

    fn lowest_beta(&self) -> f64 {
        match &self.deformation {
            Deformation::Family(f) => f.beta1,
            _ => self.betas[0],
        }
    }
}

/// Smallest integer `s` with `s (1-w)^(s-1) < 1`: `x ↦ x^s` contracts `[0, 1-w]`.
pub fn contraction_threshold(w: f64) -> Result<u32> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < w < 1, got {w}")));
    }
    let mut s = 1u32;
    while (s as f64) * (1.0 - w).powi(s as i32 - 1) >= 1.0 {
        s += 1;
        if s > 1_000_000 {
            return Err(Error::NoConvergence("contraction threshold beyond 10^6".into()));
        }
    }
    Ok(s)
}

/// Lower envelope `min(beta1/x, min_beta F_beta)` tabulated on a log grid.
#[derive(Debug, Clone)]
pub struct Minorant {
    beta1: f64,
    log_x: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Minorant {
    pub fn new(grid: &DeformationGrid) -> Result<Self> {
        let beta1 = grid.lowest_beta();
        if !(beta1 >= 1.0) {
            return Err(Error::Config(format!("minorant needs F >= 1/x near 0; lowest beta is {beta1}")));
        }
        let eps = grid.deformation.eps();
        let coeffs = grid
            .betas
            .iter()
            .map(|&b| coefficient(&grid.deformation.member(b)?, CoefficientKind::HornRatio))
            .collect::<Result<Vec<_>>>()?;
        let xs = logspace(eps * 10f64.powf(-MINORANT_DECADES), eps, MINORANT_POINTS);
        let f: Vec<f64> = xs
            .iter()
            .map(|&x| coeffs.iter().map(|c| c.value(x)).fold(beta1 / x, f64::min))
            .collect();
        let log_x: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let mut cumulative = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            let dt = log_x[i] - log_x[i - 1];
            cumulative[i] = cumulative[i - 1] + 0.5 * dt * (f[i] * xs[i] + f[i - 1] * xs[i - 1]);
        }
        Ok(Self { beta1, log_x, cumulative })
    }

    /// `G(t) = ∫ F dx` as a function of `t = ln x`, extended by `beta1 t` below the table.
    fn g_at(&self, t: f64) -> f64 {
        let t0 = self.log_x[0];
        if t <= t0 {
            return self.beta1 * (t - t0);
        }
        let i = self.log_x.partition_point(|&v| v < t).clamp(1, self.log_x.len() - 1);
        let (a, b) = (self.log_x[i - 1], self.log_x[i]);
        let u = (t - a) / (b - a);
        self.cumulative[i - 1] + u * (self.cumulative[i] - self.cumulative[i - 1])
    }

    fn t_at(&self, g: f64) -> f64 {
        let t0 = self.log_x[0];
        if g <= 0.0 {
            return t0 + g / self.beta1;
        }
        let i = self.cumulative.partition_point(|&v| v < g).clamp(1, self.cumulative.len() - 1);
        let (a, b) = (self.cumulative[i - 1], self.cumulative[i]);
        let u = if b > a { (g - a) / (b - a) } else { 0.0 };
        self.log_x[i - 1] + u * (self.log_x[i] - self.log_x[i - 1])
    }

    /// Area of `{y < x : exp(-∫_y^x F) > 1 - w}`.
    pub fn volume(&self, w: f64) -> f64 {
        let l = -(1.0 - w).ln();
        let x0 = self.log_x[0].exp();
        let below = 0.5 * x0 * x0 * (1.0 - (-l / self.beta1).exp());
        let gap = |t: f64| {
            let x = t.exp();
            let y = self.t_at(self.g_at(t) - l).exp();
            (x - y) * x
        };
        let mut v = below;
        for i in 1..self.log_x.len() {
            let (a, b) = (self.log_x[i - 1], self.log_x[i]);
            v += 0.5 * (b - a) * (gap(a) + gap(b));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub beta: f64,
    pub gamma: f64,
    pub sup_hs: f64,
    pub s_w: u32,
    pub hs_at_one: f64,
    /// `sqrt(HS²(s=1) + delta0/2)`, valid for every `s >= s_w`.
    pub tail_bound: f64,
    pub certificate_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub pairs: Vec<PairRow>,
    pub w: f64,
    pub volume: f64,
    pub s_w: u32,
    pub modulus: f64,
    pub contraction_violations: usize,
    pub pass: bool,
}

fn parametrix(profile: &WarpProfile, s: f64, mesh: &GradedMesh) -> Result<KernelOperator> {
    KernelOperator::new(Branch::FromZero, s, coefficient(profile, CoefficientKind::HornRatio)?, mesh.clone())
}

fn hs_gap(grid: &DeformationGrid, beta: f64, gamma: f64, s: f64) -> Result<f64> {
    let mesh = GradedMesh::new(grid.mesh_n, 2.0, grid.deformation.eps())?;
    let a = parametrix(&grid.deformation.member(beta)?, s, &mesh)?;
    let b = parametrix(&grid.deformation.member(gamma)?, s, &mesh)?;
    hs_difference(&a, &b)
}

/// `|k_β^s - k_γ^s| <= |k_β - k_γ|` wherever both kernels are at most `1 - w`.
fn contraction_violations(grid: &DeformationGrid, beta: f64, gamma: f64, w: f64, s_w: u32) -> Result<usize> {
    let fb = coefficient(&grid.deformation.member(beta)?, CoefficientKind::HornRatio)?;
    let fg = coefficient(&grid.deformation.member(gamma)?, CoefficientKind::HornRatio)?;
    let xs = logspace(1e-6 * grid.deformation.eps(), grid.deformation.eps(), 40);
    let mut bad = 0;
    for (i, &x) in xs.iter().enumerate() {
        for &y in &xs[..i] {
            let (kb, kg) = ((-fb.integral(y, x)).exp(), (-fg.integral(y, x)).exp());
            if kb > 1.0 - w || kg > 1.0 - w {
                continue;
            }
            for s in [s_w as f64, s_w as f64 + 0.5, 2.0 * s_w as f64, 4.0 * s_w as f64] {
                if (kb.powf(s) - kg.powf(s)).abs() > (kb - kg).abs() * (1.0 + 1e-12) {
                    bad += 1;
                }
            }
        }
    }
    Ok(bad)
}

/// HS continuity over explicit `(beta, gamma)` pairs.
pub fn hs_continuity_pairs(grid: &DeformationGrid, pairs: &[(f64, f64)], delta0: f64) -> Result<ContinuityReport> {
    if !(delta0 > 0.0) {
        return Err(Error::InvalidParameter(format!("delta0 must be positive, got {delta0}")));
    }
    let minorant = Minorant::new(grid)?;
    let mut w = 0.5;
    while minorant.volume(w) >= 0.5 * delta0 {
        w *= 0.5;
        if w < 1e-9 {
            return Err(Error::NoConvergence("no w with vol A(w) < delta0/2".into()));
        }
    }
    let volume = minorant.volume(w);
    let s_w = contraction_threshold(w)?;
    let rows = pairs
        .par_iter()
        .map(|&(beta, gamma)| {
            let gaps = grid
                .s_values
                .iter()
                .map(|&s| Ok((s, hs_gap(grid, beta, gamma, s)?)))
                .collect::<Result<Vec<_>>>()?;
            let sup_hs = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
            let hs_at_one = hs_gap(grid, beta, gamma, 1.0)?;
            let tail_sq = hs_at_one * hs_at_one + 0.5 * delta0;
            let certificate_ok = gaps
                .iter()
                .filter(|(s, _)| *s >= s_w as f64)
                .all(|(_, v)| v * v <= tail_sq * (1.0 + 1e-9));
            Ok(PairRow { beta, gamma, sup_hs, s_w, hs_at_one, tail_bound: tail_sq.sqrt(), certificate_ok })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut violations = 0;
    for &(b, g) in pairs {
        violations += contraction_violations(grid, b, g, w, s_w)?;
    }
    let modulus = rows
        .iter()
        .filter(|r| r.gamma != r.beta)
        .map(|r| r.sup_hs / (r.gamma - r.beta).abs())
        .fold(0.0, f64::max);
    let pass = violations == 0 && rows.iter().all(|r| r.certificate_ok);
    Ok(ContinuityReport { pairs: rows, w, volume, s_w, modulus, contraction_violations: violations, pass })
}

/// HS continuity between consecutive beta samples.
pub fn hs_continuity_scan(grid: &DeformationGrid, delta0: f64) -> Result<ContinuityReport> {
    let pairs: Vec<(f64, f64)> = if grid.betas.len() == 1 {
        vec![(grid.betas[0], grid.betas[0])]
    } else {
        grid.betas.windows(2).map(|w| (w[0], w[1])).collect()
    };
    hs_continuity_pairs(grid, &pairs, delta0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRow {
    pub beta: f64,
    pub sigma_min: f64,
}

/// `min σ(E_β)` over the truncated channels of the unperturbed model on `h_beta`.
pub fn graph_operator_sigma_min(
    model: &GeometricOperatorModel,
    profile: &WarpProfile,
    s_max: f64,
    mesh: &OracleMesh,
) -> Result<f64> {
    let systems = model_systems(model, profile, s_max, None)?;
    let values = systems
        .par_iter()
        .map(|sys| graph_sigma_min(sys, mesh))
        .collect::<Result<Vec<_>>>()?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

pub fn graph_sigma_scan(model: &GeometricOperatorModel, grid: &DeformationGrid, mesh: &OracleMesh) -> Result<Vec<SigmaRow>> {
    grid.betas
        .iter()
        .map(|&beta| {
            let profile = grid.deformation.member(beta)?;
            Ok(SigmaRow { beta, sigma_min: graph_operator_sigma_min(model, &profile, grid.s_max, mesh)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub beta: f64,
    pub channel_s: f64,
    pub family: Family,
    pub mult: usize,
    pub index: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// `Σ mult · index` per beta sample.
    pub totals: Vec<(f64, i64)>,
    /// Channels whose index changes along the grid.
    pub flips: Vec<String>,
    pub stable: bool,
}

impl StabilityReport {
    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![fmt_float(r.beta), fmt_float(r.channel_s), r.mult.to_string(), r.index.to_string()])
            .collect();
        to_csv(&["beta", "channel_s", "mult", "index"], &rows)
    }
}

fn collect_stability(betas: &[f64], per_beta: Vec<Vec<StabilityRow>>) -> StabilityReport {
    let mut flips = Vec::new();
    if let Some(first) = per_beta.first() {
        for (k, base) in first.iter().enumerate() {
            if per_beta.iter().any(|rows| rows.get(k).map(|r| r.index) != Some(base.index)) {
                flips.push(format!("{:?} s={}", base.family, base.channel_s));
            }
        }
    }
    let totals: Vec<(f64, i64)> = betas
        .iter()
        .zip(&per_beta)
        .map(|(&b, rows)| (b, rows.iter().map(|r| r.mult as i64 * r.index).sum()))
        .collect();
    let same_shape = per_beta.windows(2).all(|w| w[0].len() == w[1].len());
    let stable = flips.is_empty() && same_shape && totals.windows(2).all(|w| w[0].1 == w[1].1);
    StabilityReport { rows: per_beta.into_iter().flatten().collect(), totals, flips, stable }
}

fn system_rows(beta: f64, systems: &[ChannelSystem], mesh: &OracleMesh, tol: f64) -> Result<Vec<StabilityRow>> {
    systems
        .par_iter()
        .map(|sys| {
            let c = stable_counts(sys, mesh, delta_condition(sys), tol)?;
            Ok(StabilityRow { beta, channel_s: sys.s, family: sys.family, mult: sys.mult, index: c.index })
        })
        .collect()
}

/// Per-channel DELTA indices of the unperturbed model along the grid; each count is
/// also taken on the doubled mesh and must agree there.
pub fn channel_index_stability(
    model: &GeometricOperatorModel,
    grid: &DeformationGrid,
    mesh: &OracleMesh,
) -> Result<StabilityReport> {
    let per_beta = grid
        .betas
        .iter()
        .map(|&beta| {
            let profile = grid.deformation.member(beta)?;
            let systems = model_systems(model, &profile, grid.s_max, None)?;
            system_rows(beta, &systems, mesh, SV_TOL)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_stability(&grid.betas, per_beta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalReport {
    pub alpha: f64,
    pub mu: Vec<f64>,
    pub totals: Vec<i64>,
    pub flips: Vec<String>,
    /// `sup ‖ψ0 (h'/h) Ã f‖ / ‖f‖_graph` over bump probes.
    pub relative_bound: f64,
    pub constant: bool,
    pub pass: bool,
}

fn bump(t: f64) -> (f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - t * t;
    (q.powi(4), -8.0 * t * q.powi(3))
}

/// `(coupling, horn)` matrices of each perturbation block.
fn blocks(model: &GeometricOperatorModel) -> Vec<([[f64; 2]; 2], [f64; 2], usize)> {
    use crate::geometry::Perturbation;
    model
        .perturbation
        .iter()
        .map(|p| match p {
            Perturbation::Pair(b) => ([[0.0, b.coupling], [b.coupling, 0.0]], [b.horn[0], b.horn[1]], 2),
            Perturbation::Scalar { s, horn, .. } => ([[*s, 0.0], [0.0, 0.0]], [*horn, 0.0], 1),
        })
        .collect()
}

fn relative_bound(model: &GeometricOperatorModel, profile: &WarpProfile, cut: Cutoff, s_max: f64) -> f64 {
    let centers = logspace(1e-4, 0.5 * cut.start, 12);
    let mut worst = 0.0f64;
    for (coupling, horn, dim) in blocks(model) {
        if coupling[0][1].abs().max(coupling[0][0].abs()) > s_max {
            continue;
        }
        let dirs: Vec<[f64; 2]> = if dim == 2 {
            let r = std::f64::consts::FRAC_1_SQRT_2;
            vec![[1.0, 0.0], [0.0, 1.0], [r, r], [r, -r]]
        } else {
            vec![[1.0, 0.0]]
        };
        for &c in &centers {
            let width = 0.5 * c;
            for v in &dirs {
                let integrand = |x: f64, part: u8| {
                    let (phi, dphi) = bump((x - c) / width);
                    let f = [phi * v[0], phi * v[1]];
                    let df = [dphi / width * v[0], dphi / width * v[1]];
                    let inv = 1.0 / profile.h(x);
                    let ratio = profile.dh(x) / profile.h(x);
                    let mut acc = 0.0;
                    for r in 0..dim {
                        let d = df[r] + inv * (coupling[r][0] * f[0] + coupling[r][1] * f[1]);
                        let p = cut.value(x) * ratio * horn[r] * f[r];
                        acc += match part {
                            0 => f[r] * f[r] + d * d,
                            _ => p * p,
                        };
                    }
                    acc
                };
                let graph = gl8_composite(c - width, c + width, 16, |x| integrand(x, 0)).sqrt();
                let pert = gl8_composite(c - width, c + width, 16, |x| integrand(x, 1)).sqrt();
                if graph > 0.0 {
                    worst = worst.max(pert / graph);
                }
            }
        }
    }
    worst
}

/// Indices of `D_{0,δ} + μ Ã_ψ0` over `mu_grid` and the relative bound of the perturbation.
pub fn remove_perturbation_check(
    model: &GeometricOperatorModel,
    cut: Cutoff,
    mu_grid: &[f64],
    s_max: f64,
    mesh: &OracleMesh,
) -> Result<RemovalReport> {
    let alpha = model.alpha;
    if !(alpha > 1.0) {
        return Err(Error::Precondition(format!("perturbation removal needs alpha > 1, got {alpha}")));
    }
    let profile = make_power_horn(alpha, 0.25, 1.0, false)?;
    if cut.end > profile.eps() {
        return Err(Error::InvalidParameter("cutoff must end inside (0, eps)".into()));
    }
    let per_mu = mu_grid
        .iter()
        .map(|&mu| {
            let systems = model_systems(model, &profile, s_max, Some((mu, cut)))?;
            let mut all = model_systems(model, &profile, s_max, None)?;
            all.retain(|s| s.family == Family::T);
            all.extend(systems.into_iter().filter(|s| s.family == Family::Tilde));
            system_rows(mu, &all, mesh, SV_TOL)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = collect_stability(mu_grid, per_mu);
    let relative_bound = relative_bound(model, &profile, cut, s_max);
    let constant = report.stable;
    Ok(RemovalReport {
        alpha,
        mu: mu_grid.to_vec(),
        totals: report.totals.iter().map(|t| t.1).collect(),
        flips: report.flips,
        relative_bound,
        constant,
        pass: constant && relative_bound.is_finite() && relative_bound <= RELATIVE_BOUND_LIMIT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{catalog_cross_section, normal_form, OperatorKind, SpinStructure};
    use crate::oracle::graph_block_sigma_min;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn pure_grid(betas: Vec<f64>) -> DeformationGrid {
        DeformationGrid::new(Deformation::PurePowers { eps: 1.0 }, betas, 32.0, 48).unwrap()
    }

    #[test]
    fn contraction_examples() {
        assert_eq!(contraction_threshold(0.5).unwrap(), 3);
        assert_eq!(contraction_threshold(0.9).unwrap(), 2);
        assert_eq!(contraction_threshold(0.999).unwrap(), 2);
        assert!(contraction_threshold(1.0).is_err());
        assert!(contraction_threshold(0.0).is_err());
    }

    #[test]
    fn pure_power_hs_difference() {
        let g = pure_grid(vec![1.0, 1.5]);
        let v = hs_gap(&g, 1.0, 1.5, 1.0).unwrap();
        assert_abs_diff_eq!(v, (0.5f64 * (1.0 / 3.0 + 0.25 - 2.0 / 3.5)).sqrt(), epsilon = 1e-9);
        assert_eq!(hs_gap(&g, 1.5, 1.5, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn minorant_volume_of_pure_powers() {
        let g = pure_grid(vec![1.0, 2.0]);
        let m = Minorant::new(&g).unwrap();
        assert_abs_diff_eq!(m.volume(0.5), 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(m.volume(0.25), 0.125, epsilon = 1e-6);
    }

    #[test]
    fn minorant_needs_singular_growth() {
        let g = DeformationGrid {
            deformation: Deformation::PurePowers { eps: 1.0 },
            betas: vec![0.5],
            s_values: vec![1.0],
            s_max: 1.0,
            mesh_n: 8,
        };
        assert!(matches!(Minorant::new(&g), Err(Error::Config(_))));
    }

    #[test]
    fn continuity_shrinks_with_gap() {
        let g = pure_grid(vec![1.0, 1.2]);
        let pairs: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025].iter().map(|d| (1.0, 1.0 + d)).collect();
        let r = hs_continuity_pairs(&g, &pairs, 1.01).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.s_w, 3);
        assert!(r.pairs.windows(2).all(|w| w[1].sup_hs < w[0].sup_hs));
        let same = hs_continuity_pairs(&g, &[(1.1, 1.1)], 1.01).unwrap();
        assert_eq!(same.pairs[0].sup_hs, 0.0);
    }

    #[test]
    fn family_continuity_certificate() {
        let g = DeformationGrid::chebyshev(1.0, 2.0, 5, 16.0, 32).unwrap();
        let r = hs_continuity_scan(&g, 0.2).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.volume < 0.1);
    }

    #[test]
    fn zero_block_graph_is_identity() {
        let v = graph_block_sigma_min(&DMatrix::zeros(5, 6)).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn dirac_graph_bound() {
        let n = catalog_cross_section("torus3", 100.0).unwrap();
        let model = normal_form(OperatorKind::Dirac, &n, 1.5, Some(SpinStructure::Trivial)).unwrap();
        let family = standard_family(1.0, 2.0).unwrap();
        let mesh = OracleMesh::new(96, 1e-3, 1.0).unwrap();
        let v = graph_operator_sigma_min(&model, &family.member(1.5).unwrap(), 10.0, &mesh).unwrap();
        assert!(v >= 1.0 - GRAPH_TOL, "{v}");
    }

    #[test]
    fn single_channel_is_trivially_stable() {
        let model = GeometricOperatorModel::synthetic(
            1.5,
            vec![crate::channels::SpectralChannel::t(0.0, 1, crate::channels::Origin::Synthetic)],
            vec![],
        );
        let g = DeformationGrid::chebyshev(1.0, 2.0, 3, 4.0, 16).unwrap();
        let r = channel_index_stability(&model, &g, &OracleMesh::new(60, 1e-6, 1.0).unwrap()).unwrap();
        assert!(r.stable);
        assert!(r.totals.iter().all(|t| t.1 == 0));
    }

    #[test]
    fn degenerate_grid_is_single_point() {
        let g = DeformationGrid::chebyshev(1.5, 1.5, 9, 4.0, 16).unwrap();
        assert_eq!(g.betas, vec![1.5]);
    }

    #[test]
    fn gb_removal_constant() {
        let n = catalog_cross_section("torus2", 100.0).unwrap();
        let model = normal_form(OperatorKind::GaussBonnet, &n, 2.0, None).unwrap();
        let cut = Cutoff::new(0.125, 0.25).unwrap();
        let r = remove_perturbation_check(&model, cut, &[0.0, 0.5, 1.0], 7.0, &OracleMesh::new(120, 1e-6, 1.0).unwrap())
            .unwrap();
        assert!(r.constant, "{r:?}");
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn near_cone_relative_bound_finite() {
        let n = catalog_cross_section("torus2", 100.0).unwrap();
        let cut = Cutoff::new(0.125, 0.25).unwrap();
        let prof = |a| make_power_horn(a, 0.25, 1.0, false).unwrap();
        let m2 = normal_form(OperatorKind::GaussBonnet, &n, 2.0, None).unwrap();
        let m105 = normal_form(OperatorKind::GaussBonnet, &n, 1.05, None).unwrap();
        let b2 = relative_bound(&m2, &prof(2.0), cut, 7.0);
        let b105 = relative_bound(&m105, &prof(1.05), cut, 7.0);
        assert!(b105.is_finite() && b105 > b2, "{b2} {b105}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn contraction_holds_pointwise(w in 0.05f64..0.95, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let s = contraction_threshold(w).unwrap() as f64;
            let (x, y) = (a * (1.0 - w), b * (1.0 - w));
            prop_assert!((x.powf(s) - y.powf(s)).abs() <= (x - y).abs() * (1.0 + 1e-12));
        }

        #[test]
        fn hs_gap_symmetric(b in 1.0f64..2.0, d in 0.0f64..0.5, s in 0.2f64..8.0) {
            let g = pure_grid(vec![1.0]);
            let x = hs_gap(&g, b, b + d, s).unwrap();
            let y = hs_gap(&g, b + d, b, s).unwrap();
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
