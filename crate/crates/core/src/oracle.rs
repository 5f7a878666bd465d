//! Brute-force channel discretizations used to cross-check the analytic
//! classification: exponentially fitted difference rows on a geometric mesh,
//! boundary rows at 0 chosen from measured growth exponents, and SVD rank counts.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{Family, SpectralChannel};
use crate::error::{Error, Result};
use crate::geometry::{GeometricOperatorModel, Perturbation};
use crate::quad::gl8_composite;
use crate::warp::{coefficient, pure_power, ChannelCoefficient, CoefficientKind, WarpProfile};

/// Relative singular-value threshold for rank decisions.
pub const SV_TOL: f64 = 1e-7;
/// Exponents this close to `±1/2` are refused.
pub const CRITICAL_HALF_WIDTH: f64 = 0.05;
pub const DEFAULT_CELLS: usize = 240;
pub const DEFAULT_X_MIN: f64 = 1e-6;

/// Geometric nodes `x_min (eps/x_min)^(i/n)`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMesh {
    pub cells: usize,
    pub x_min: f64,
    pub eps: f64,
}

impl OracleMesh {
    pub fn new(cells: usize, x_min: f64, eps: f64) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidParameter("oracle mesh needs at least one cell".into()));
        }
        if !(x_min > 0.0 && x_min < eps && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 0 < x_min < eps, got {x_min}, {eps}")));
        }
        Ok(Self { cells, x_min, eps })
    }

    pub fn standard(eps: f64) -> Self {
        Self { cells: DEFAULT_CELLS, x_min: DEFAULT_X_MIN, eps }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let ratio = (self.eps / self.x_min).ln();
        (0..=self.cells)
            .map(|i| {
                if i == self.cells {
                    self.eps
                } else {
                    self.x_min * (ratio * i as f64 / self.cells as f64).exp()
                }
            })
            .collect()
    }

    pub fn refined(&self) -> Self {
        Self { cells: 2 * self.cells, ..self.clone() }
    }

    /// Cells covering `[x_min, 10 x_min]`.
    fn first_decade(&self) -> usize {
        let per = (self.eps / self.x_min).ln() / self.cells as f64;
        ((10f64.ln() / per).ceil() as usize).clamp(1, self.cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NearZero {
    /// Maximal domain: keeps every square-integrable solution class.
    Free,
    /// Minimal domain: keeps only classes decaying faster than `x^(1/2)`.
    KillSingular,
    /// Keeps the quotient class of a channel selected by `W`.
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AtEnd {
    Dirichlet,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub at_zero: NearZero,
    pub at_end: AtEnd,
}

impl BoundaryCondition {
    pub const MAX: Self = Self { at_zero: NearZero::Free, at_end: AtEnd::Free };
    pub const MIN: Self = Self { at_zero: NearZero::KillSingular, at_end: AtEnd::Free };

    pub fn new(at_zero: NearZero, at_end: AtEnd) -> Self {
        Self { at_zero, at_end }
    }
}

/// Smooth cutoff equal to 1 on `(0, start]` and 0 beyond `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub start: f64,
    pub end: f64,
}

impl Cutoff {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start > 0.0 && start < end) {
            return Err(Error::InvalidParameter(format!("cutoff needs 0 < start < end, got {start}, {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn value(&self, x: f64) -> f64 {
        if x <= self.start {
            1.0
        } else if x >= self.end {
            0.0
        } else {
            let t = (x - self.start) / (self.end - self.start);
            1.0 - t * t * (3.0 - 2.0 * t)
        }
    }
}

/// Scalar weight multiplying a constant matrix in the channel system.
#[derive(Debug, Clone)]
pub enum Weight {
    Plain(ChannelCoefficient),
    Cut(ChannelCoefficient, Cutoff),
}

impl Weight {
    fn value(&self, x: f64) -> f64 {
        match self {
            Weight::Plain(c) => c.value(x),
            Weight::Cut(c, cut) => cut.value(x) * c.value(x),
        }
    }

    /// `∫_a^b` of the weight.
    fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Weight::Plain(c) => c.integral(a, b),
            Weight::Cut(c, cut) => {
                if a >= cut.end {
                    return 0.0;
                }
                let plain_end = b.min(cut.start);
                let mut v = if plain_end > a { c.integral(a, plain_end) } else { 0.0 };
                let lo = a.max(cut.start);
                let hi = b.min(cut.end);
                if hi > lo {
                    v += gl8_composite(lo, hi, 4, |x| cut.value(x) * c.value(x));
                }
                v
            }
        }
    }
}

/// `u' + M(x) u` with `M = Σ weight_t(x) C_t` acting on `R^dim`.
#[derive(Debug, Clone)]
pub struct ChannelSystem {
    pub label: String,
    pub s: f64,
    pub family: Family,
    pub mult: usize,
    pub dim: usize,
    pub terms: Vec<(Weight, DMatrix<f64>)>,
    /// Square-integrable quotient classes may be selected (Euler-type channel with `|c s| < 1/2`).
    pub selectable: bool,
}

impl ChannelSystem {
    pub fn scalar(s: f64, coeff: &ChannelCoefficient, family: Family, mult: usize) -> Self {
        let (c, p) = coeff.near_zero();
        Self {
            label: format!("{family:?} s={s}"),
            s,
            family,
            mult,
            dim: 1,
            terms: vec![(Weight::Plain(coeff.clone()), DMatrix::from_element(1, 1, s))],
            selectable: p == 1.0 && (c * s).abs() < 0.5,
        }
    }

    pub fn with_term(mut self, weight: Weight, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != self.dim || matrix.ncols() != self.dim {
            return Err(Error::InvalidParameter("term matrix does not match the system size".into()));
        }
        self.terms.push((weight, matrix));
        Ok(self)
    }

    fn cell_matrix(&self, a: f64, b: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (w, c) in &self.terms {
            let i = w.integral(a, b);
            if i != 0.0 {
                m += c * i;
            }
        }
        m
    }

    pub fn apply(&self, x: f64, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, c) in &self.terms {
            let v = w.value(x);
            for r in 0..self.dim {
                for k in 0..self.dim {
                    out[r] += v * c[(r, k)] * u[k];
                }
            }
        }
        out
    }
}

/// `exp(-A)` as `(T̂, l)` with `exp(-A) = e^l T̂` and `T̂` of unit spectral size.
fn scaled_transfer(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    match a.nrows() {
        1 => (DMatrix::from_element(1, 1, 1.0), -a[(0, 0)]),
        2 => {
            let b = -a;
            let tau = 0.5 * (b[(0, 0)] + b[(1, 1)]);
            let det = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
            let d2 = tau * tau - det;
            let c = &b - DMatrix::identity(2, 2) * tau;
            if d2 >= 0.0 {
                let d = d2.sqrt();
                let e = (-2.0 * d).exp();
                let sh = if d < 1e-8 { 1.0 - d } else { -(-2.0 * d).exp_m1() / (2.0 * d) };
                (DMatrix::identity(2, 2) * (0.5 * (1.0 + e)) + c * sh, tau + d)
            } else {
                let w = (-d2).sqrt();
                (DMatrix::identity(2, 2) * w.cos() + c * (w.sin() / w), tau)
            }
        }
        _ => unreachable!("channel systems have size 1 or 2"),
    }
}

/// Rows `L u_i + R u_{i+1} = 0` equivalent to `u_{i+1} = exp(-A) u_i`, scaled so
/// that growing and decaying directions both keep unit size. The last value is
/// the scalar factor applied to the difference row (scalar channels).
fn row_block(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let k = a.nrows();
    if k == 2 {
        let b = -a;
        let tau = 0.5 * (b[(0, 0)] + b[(1, 1)]);
        let det = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
        let d2 = tau * tau - det;
        if d2 > 6.25 {
            let d = d2.sqrt();
            let (m1, m2) = (tau + d, tau - d);
            let p1 = (&b - DMatrix::identity(2, 2) * m2) / (2.0 * d);
            let p2 = DMatrix::identity(2, 2) - &p1;
            let left = -(&p1 * m1.min(0.0).exp() + &p2 * m2.min(0.0).exp());
            let right = &p1 * (-m1).min(0.0).exp() + &p2 * (-m2).min(0.0).exp();
            return (left, right, f64::NAN);
        }
    }
    let (t, l) = scaled_transfer(a);
    if l >= 0.0 {
        (-t, DMatrix::identity(k, k) * (-l).exp(), (-l).exp())
    } else {
        (-t * l.exp(), DMatrix::identity(k, k), 1.0)
    }
}

/// Growth exponents `p` (solutions `~ x^p` near 0), largest first, and the
/// matching directions at the first node.
#[derive(Debug, Clone)]
pub struct ExponentFit {
    pub exponents: Vec<f64>,
    pub frame: DMatrix<f64>,
}

fn measure_exponents(sys: &ChannelSystem, nodes: &[f64], decade: usize) -> ExponentFit {
    let k = sys.dim;
    let mut q = DMatrix::<f64>::identity(k, k);
    let mut logs = vec![0.0; k];
    for i in (0..nodes.len() - 1).rev() {
        let a = sys.cell_matrix(nodes[i], nodes[i + 1]);
        let (t, l) = scaled_transfer(&a);
        let z = t.transpose() * &q;
        let log_det = -a.trace();
        if k == 1 {
            if i < decade {
                logs[0] += l + z[(0, 0)].abs().ln();
            }
            q[(0, 0)] = z[(0, 0)].signum();
            if q[(0, 0)] == 0.0 {
                q[(0, 0)] = 1.0;
            }
            continue;
        }
        let c0 = z.column(0).into_owned();
        let r11 = c0.norm();
        let first = if r11 > 0.0 { c0 / r11 } else { q.column(0).into_owned() };
        if i < decade {
            let g1 = l + r11.ln();
            logs[0] += g1;
            logs[1] += log_det - g1;
        }
        q.set_column(0, &first);
        q[(0, 1)] = -first[1];
        q[(1, 1)] = first[0];
    }
    let span = (nodes[decade] / nodes[0]).ln();
    let mut exponents: Vec<f64> = logs.iter().map(|g| g / span).collect();
    if k == 2 && exponents[1] > exponents[0] {
        exponents.swap(0, 1);
        q.swap_columns(0, 1);
    }
    ExponentFit { exponents, frame: q }
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub label: String,
    pub s: f64,
    pub family: Family,
    pub mult: usize,
    pub dim: usize,
    pub bc: BoundaryCondition,
    pub mesh: OracleMesh,
    pub nodes: Vec<f64>,
    /// Row-normalized first-order rows followed by boundary rows.
    pub matrix: DMatrix<f64>,
    /// Scale per difference row: `row / (h_i scale_i)` is the difference quotient.
    pub row_scale: Vec<f64>,
    pub weights_in: Vec<f64>,
    pub weights_out: Vec<f64>,
    pub exponents: Vec<f64>,
    pub kept_classes: usize,
    system: ChannelSystem,
}

fn critical(p: f64) -> bool {
    let d = (p.abs() - 0.5).abs();
    p.is_finite() && d < CRITICAL_HALF_WIDTH - 1e-9
}

/// Number of solution classes kept at 0 by the encoding.
fn kept(fit: &ExponentFit, rule: NearZero, selectable: bool) -> Result<usize> {
    for &p in &fit.exponents {
        if critical(p) {
            return Err(Error::Precondition(format!(
                "measured exponent {p:.4} lies in the critical band around ±1/2; refine the model away from |alpha s| = 1/2"
            )));
        }
    }
    let threshold = match rule {
        NearZero::Free => -0.5,
        NearZero::KillSingular => 0.5,
        NearZero::Select => {
            if !selectable {
                return Err(Error::ChannelRejected("SELECT needs a quotient channel (|alpha s| < 1/2)".into()));
            }
            -0.5
        }
    };
    Ok(fit.exponents.iter().filter(|&&p| p > threshold).count())
}

pub fn discretize_system(sys: &ChannelSystem, mesh: &OracleMesh, bc: BoundaryCondition) -> Result<DiscreteOperator> {
    if sys.dim == 0 || sys.dim > 2 {
        return Err(Error::InvalidParameter("channel systems have size 1 or 2".into()));
    }
    let k = sys.dim;
    let nodes = mesh.nodes();
    let n = mesh.cells;
    let fit = measure_exponents(sys, &nodes, mesh.first_decade());
    let keep = kept(&fit, bc.at_zero, sys.selectable)?;
    let kill = k - keep;
    let end_rows = if bc.at_end == AtEnd::Dirichlet { k } else { 0 };
    let rows = k * n + kill + end_rows;
    let cols = k * (n + 1);
    let mut m = DMatrix::zeros(rows, cols);
    let mut row_scale = Vec::with_capacity(n);
    for i in 0..n {
        let (left, right, scale) = row_block(&sys.cell_matrix(nodes[i], nodes[i + 1]));
        row_scale.push(scale);
        for r in 0..k {
            for c in 0..k {
                m[(k * i + r, k * i + c)] = left[(r, c)];
                m[(k * i + r, k * (i + 1) + c)] = right[(r, c)];
            }
        }
    }
    for j in 0..kill {
        let dir = fit.frame.column(keep + j);
        for c in 0..k {
            m[(k * n + j, c)] = dir[c];
        }
    }
    for r in 0..end_rows {
        m[(k * n + kill + r, k * n + r)] = 1.0;
    }
    let mut weights_in = Vec::with_capacity(cols);
    for i in 0..=n {
        let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
        let right = if i < n { nodes[i + 1] - nodes[i] } else { 0.0 };
        weights_in.extend(std::iter::repeat(0.5 * (left + right)).take(k));
    }
    let mut weights_out = Vec::with_capacity(rows);
    for i in 0..n {
        weights_out.extend(std::iter::repeat(nodes[i + 1] - nodes[i]).take(k));
    }
    weights_out.extend(std::iter::repeat(1.0).take(kill + end_rows));
    Ok(DiscreteOperator {
        label: sys.label.clone(),
        s: sys.s,
        family: sys.family,
        mult: sys.mult,
        dim: k,
        bc,
        mesh: mesh.clone(),
        nodes,
        matrix: m,
        row_scale,
        weights_in,
        weights_out,
        exponents: fit.exponents,
        kept_classes: keep,
        system: sys.clone(),
    })
}

/// Scalar channel `d/dx + s F`.
pub fn discretize_channel(
    s: f64,
    coeff: &ChannelCoefficient,
    mesh: &OracleMesh,
    bc: BoundaryCondition,
) -> Result<DiscreteOperator> {
    discretize_system(&ChannelSystem::scalar(s, coeff, Family::T, 1), mesh, bc)
}

impl DiscreteOperator {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Difference quotients `(u_{i+1} - T_i u_i) / h_i` (scalar channels).
    pub fn apply_difference(&self, u: &[f64]) -> Vec<f64> {
        let k = self.dim;
        (0..self.mesh.cells * k)
            .map(|r| {
                let i = r / k;
                let h = self.nodes[i + 1] - self.nodes[i];
                let v: f64 = (0..self.cols()).map(|c| self.matrix[(r, c)] * u[c]).sum();
                v / (h * self.row_scale[i])
            })
            .collect()
    }

    /// Max residual of the rows against `u' + M u` at cell midpoints.
    pub fn consistency_residual(&self, u: &dyn Fn(f64) -> f64, du: &dyn Fn(f64) -> f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::InvalidParameter("consistency residual is defined for scalar channels".into()));
        }
        let vals: Vec<f64> = self.nodes.iter().map(|&x| u(x)).collect();
        let d = self.apply_difference(&vals);
        let mut worst = 0.0f64;
        for (i, di) in d.iter().enumerate() {
            let xm = 0.5 * (self.nodes[i] + self.nodes[i + 1]);
            let g = du(xm) + self.system.apply(xm, &[u(xm)])[0];
            worst = worst.max((di - g).abs());
        }
        Ok(worst)
    }

    /// `W_in^{-1} Aᵀ W_out`.
    pub fn adjoint_matrix(&self) -> DMatrix<f64> {
        let mut a = self.matrix.transpose();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                a[(r, c)] *= self.weights_out[c] / self.weights_in[r];
            }
        }
        a
    }

    /// Relative defect of `<Au, v>_out = <u, A* v>_in`.
    pub fn adjoint_defect(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != self.cols() || v.len() != self.rows() {
            return Err(Error::InvalidParameter("vector sizes do not match the operator".into()));
        }
        let au = &self.matrix * nalgebra::DVector::from_column_slice(u);
        let asv = self.adjoint_matrix() * nalgebra::DVector::from_column_slice(v);
        let lhs: f64 = (0..self.rows()).map(|i| au[i] * v[i] * self.weights_out[i]).sum();
        let rhs: f64 = (0..self.cols()).map(|i| u[i] * asv[i] * self.weights_in[i]).sum();
        let scale: f64 = (0..self.rows()).map(|i| (au[i] * v[i] * self.weights_out[i]).abs()).sum::<f64>().max(1e-300);
        Ok((lhs - rhs).abs() / scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankCount {
    pub kernel: usize,
    pub cokernel: usize,
    /// A singular value sits within a factor 10 of the threshold.
    pub borderline: bool,
}

fn rank_count(a: &DMatrix<f64>, tol: f64) -> RankCount {
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let cut = tol * top;
    let rank = sv.iter().filter(|&&v| v >= cut).count();
    let borderline = sv.iter().any(|&v| v > 0.1 * cut && v < 10.0 * cut);
    RankCount { kernel: a.ncols() - rank, cokernel: a.nrows() - rank, borderline }
}

/// Singular values below `tol σ_max`, plus the columns beyond the row count.
pub fn numeric_kernel_dim(op: &DiscreteOperator, tol: f64) -> Result<usize> {
    let r = rank_count(&op.matrix, tol);
    if r.borderline {
        return Err(Error::NoConvergence(format!("borderline singular value for {}; refine", op.label)));
    }
    Ok(r.kernel)
}

/// `ker A - ker A*`; the weighted adjoint has the null space of `Aᵀ` up to the weights.
pub fn channel_index(op: &DiscreteOperator, tol: f64) -> Result<i64> {
    let r = rank_count(&op.matrix, tol);
    if r.borderline {
        return Err(Error::NoConvergence(format!("borderline singular value for {}; refine", op.label)));
    }
    Ok(r.kernel as i64 - r.cokernel as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChannelCounts {
    pub kernel: usize,
    pub index: i64,
}

/// Counts on `mesh` and on its refinement; they must agree.
pub fn stable_counts(sys: &ChannelSystem, mesh: &OracleMesh, bc: BoundaryCondition, tol: f64) -> Result<ChannelCounts> {
    let mut out = None;
    for m in [mesh.clone(), mesh.refined()] {
        let op = discretize_system(sys, &m, bc)?;
        let c = ChannelCounts { kernel: numeric_kernel_dim(&op, tol)?, index: channel_index(&op, tol)? };
        match out {
            None => out = Some(c),
            Some(prev) if prev != c => {
                return Err(Error::NoConvergence(format!(
                    "{}: counts change under mesh doubling ({prev:?} vs {c:?})",
                    sys.label
                )))
            }
            _ => {}
        }
    }
    Ok(out.expect("two meshes were counted"))
}

/// Analytic count of square-integrable solutions `x^(-alpha s)` near 0.
pub fn l2_solution_count(s: f64, alpha: f64) -> usize {
    usize::from(alpha * s < 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub channel_s: f64,
    pub family: Family,
    pub mult: usize,
    pub ker_max: usize,
    pub ker_min: usize,
    pub index_max: i64,
    pub index_min: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub operator: String,
    pub cross_section: String,
    pub alpha: f64,
    pub rows: Vec<OracleRow>,
    pub dim: usize,
}

impl OracleReport {
    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    crate::report::fmt_float(r.channel_s),
                    match r.family {
                        Family::T => "T_FAMILY".into(),
                        Family::Tilde => "TILDE_FAMILY".into(),
                    },
                    r.mult.to_string(),
                    r.ker_max.to_string(),
                    r.ker_min.to_string(),
                    r.index_max.to_string(),
                    r.index_min.to_string(),
                ]
            })
            .collect();
        crate::report::to_csv(
            &["channel_s", "family", "mult", "ker_max", "ker_min", "index_max", "index_min"],
            &rows,
        )
    }
}

/// Distinct T-channel eigenvalues with summed multiplicities.
fn merged_t_channels(model: &GeometricOperatorModel) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = Vec::new();
    for c in &model.t_channels {
        match v.iter_mut().find(|(s, _)| (s - c.s).abs() < 1e-12) {
            Some(e) => e.1 += c.mult,
            None => v.push((c.s, c.mult)),
        }
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Per T-channel MAX/MIN kernel dimensions on `h = x^alpha`.
pub fn oracle_report(model: &GeometricOperatorModel, tol: f64) -> Result<OracleReport> {
    let profile = pure_power(model.alpha, 1.0)?;
    let coeff = coefficient(&profile, CoefficientKind::HornRatio)?;
    let mesh = OracleMesh::standard(1.0);
    let rows = merged_t_channels(model)
        .into_par_iter()
        .map(|(s, mult)| {
            let sys = ChannelSystem::scalar(s, &coeff, Family::T, mult);
            let max = stable_counts(&sys, &mesh, BoundaryCondition::MAX, tol)?;
            let min = stable_counts(&sys, &mesh, BoundaryCondition::MIN, tol)?;
            Ok(OracleRow {
                channel_s: s,
                family: Family::T,
                mult,
                ker_max: max.kernel,
                ker_min: min.kernel,
                index_max: max.index,
                index_min: min.index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = rows.iter().map(|r| (r.ker_max - r.ker_min.min(r.ker_max)) * r.mult).sum();
    Ok(OracleReport {
        operator: model.kind.to_string(),
        cross_section: model.cross_section.clone(),
        alpha: model.alpha,
        rows,
        dim,
    })
}

pub fn oracle_quotient_dim(model: &GeometricOperatorModel, tol: f64) -> Result<usize> {
    Ok(oracle_report(model, tol)?.dim)
}

/// Channel systems of a model on the warp `profile`.
///
/// Without `perturbation` tilde channels are scalar; with it, the horn part
/// `mu psi0 (h'/h) Ã` is added to each pair or scalar block.
pub fn model_systems(
    model: &GeometricOperatorModel,
    profile: &WarpProfile,
    s_max: f64,
    perturbation: Option<(f64, Cutoff)>,
) -> Result<Vec<ChannelSystem>> {
    let horn = coefficient(profile, CoefficientKind::HornRatio)?;
    let inv = coefficient(profile, CoefficientKind::Inverse)?;
    let mut out = Vec::new();
    for c in model.t_channels.iter().filter(|c| c.s.abs() <= s_max) {
        out.push(ChannelSystem::scalar(c.s, &horn, Family::T, c.mult));
    }
    match perturbation {
        None => {
            for c in model.tilde_channels.iter().filter(|c| c.s.abs() <= s_max) {
                out.push(ChannelSystem::scalar(c.s, &inv, Family::Tilde, c.mult));
            }
        }
        Some((mu, cut)) => {
            for p in model.perturbation.iter().filter(|p| p.min_abs_s() <= s_max) {
                out.push(perturbed_system(p, &horn, &inv, mu, cut)?);
            }
            if model.perturbation.is_empty() {
                for c in model.tilde_channels.iter().filter(|c| c.s.abs() <= s_max) {
                    out.push(ChannelSystem::scalar(c.s, &inv, Family::Tilde, c.mult));
                }
            }
        }
    }
    Ok(out)
}

fn perturbed_system(
    p: &Perturbation,
    horn: &ChannelCoefficient,
    inv: &ChannelCoefficient,
    mu: f64,
    cut: Cutoff,
) -> Result<ChannelSystem> {
    match p {
        Perturbation::Pair(b) => {
            let base = ChannelSystem {
                label: format!("pair degrees {:?} lambda={}", b.degrees, b.lambda),
                s: b.coupling,
                family: Family::Tilde,
                mult: b.mult,
                dim: 2,
                terms: vec![(
                    Weight::Plain(inv.clone()),
                    DMatrix::from_row_slice(2, 2, &[0.0, b.coupling, b.coupling, 0.0]),
                )],
                selectable: false,
            };
            base.with_term(
                Weight::Cut(horn.clone(), cut),
                DMatrix::from_row_slice(2, 2, &[mu * b.horn[0], 0.0, 0.0, mu * b.horn[1]]),
            )
        }
        Perturbation::Scalar { s, horn: c, mult, .. } => {
            let mut sys = ChannelSystem::scalar(*s, inv, Family::Tilde, *mult);
            sys.selectable = false;
            sys.with_term(Weight::Cut(horn.clone(), cut), DMatrix::from_element(1, 1, mu * c))
        }
    }
}

/// DELTA encoding: quotient channels with negative eigenvalue are selected.
pub fn delta_condition(sys: &ChannelSystem) -> BoundaryCondition {
    let at_zero = if sys.dim == 1 && sys.selectable && sys.s < 0.0 { NearZero::Select } else { NearZero::KillSingular };
    BoundaryCondition::new(at_zero, AtEnd::Free)
}

/// Smallest singular value of `[[I, -D̃ᵀ], [D̃, I]]`, `D̃ = W_out^{1/2} D W_in^{-1/2}`.
pub fn graph_sigma_min(sys: &ChannelSystem, mesh: &OracleMesh) -> Result<f64> {
    let op = discretize_system(sys, mesh, BoundaryCondition::MAX)?;
    let k = op.dim;
    let rows = k * mesh.cells;
    let cols = op.cols();
    let mut d = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let i = r / k;
        let h = op.nodes[i + 1] - op.nodes[i];
        for c in 0..cols {
            let v = op.matrix[(r, c)];
            if v != 0.0 {
                d[(r, c)] = v / h * op.weights_out[r].sqrt() / op.weights_in[c].sqrt();
            }
        }
    }
    graph_block_sigma_min(&d)
}

/// Smallest singular value of `[[I, -Dᵀ], [D, I]]` for an already weighted `D`.
pub fn graph_block_sigma_min(d: &DMatrix<f64>) -> Result<f64> {
    let (rows, cols) = d.shape();
    let size = rows + cols;
    let mut e = DMatrix::<f64>::identity(size, size);
    e.view_mut((0, cols), (cols, rows)).copy_from(&(-d.transpose()));
    e.view_mut((cols, 0), (rows, cols)).copy_from(d);
    let sv = e.svd(false, false).singular_values;
    if sv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("SVD of the graph operator failed".into()));
    }
    Ok(sv.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Model channel used by the oracle for a single synthetic channel.
pub fn channel_system(channel: &SpectralChannel, profile: &WarpProfile) -> Result<ChannelSystem> {
    let kind = match channel.family {
        Family::T => CoefficientKind::HornRatio,
        Family::Tilde => CoefficientKind::Inverse,
    };
    Ok(ChannelSystem::scalar(channel.s, &coefficient(profile, kind)?, channel.family, channel.mult))
}
