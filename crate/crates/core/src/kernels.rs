//! Volterra-type integral operators `P_{j,s}^F` inverting `d/dx + s F` on `(0, eps)`.
//!
//! `FROM_ZERO`: `Pf(x) = ∫_0^x k(x,y) f(y) dy`; `FROM_ONE`: `Pf(x) = -∫_x^eps k(x,y) f(y) dy`,
//! with `k(x,y) = exp(-s ∫_y^x F)`. Kernels factor as `k(x,y) = k(x,z) k(z,y)`, which
//! turns every discretized quantity into a linear recurrence over mesh cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{fd_weights, gl8_composite, gl8_nodes, layered, GradedMesh};
use crate::warp::{coefficient, ChannelCoefficient, CoefficientKind, WarpProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Branch {
    FromZero,
    FromOne,
}

const KRYLOV_CAP: usize = 400;
const NORM_TOL: f64 = 1e-10;
/// Outer panels for cells touching 0.
const GEOMETRIC_PANELS: i32 = 50;

#[derive(Debug, Clone)]
pub struct KernelOperator {
    branch: Branch,
    s: f64,
    coeff: ChannelCoefficient,
    mesh: GradedMesh,
    out_power: f64,
    in_power: f64,
}

/// Per-cell integrals of the factored kernel.
#[derive(Debug, Clone)]
pub struct CellData {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub diag: Vec<f64>,
    pub width: Vec<f64>,
}

fn log_power(p: f64, x: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * x.ln()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}

fn safe_exp(e: f64) -> f64 {
    if e < -745.0 {
        0.0
    } else {
        e.exp()
    }
}

impl KernelOperator {
    pub fn new(branch: Branch, s: f64, coeff: ChannelCoefficient, mesh: GradedMesh) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::InvalidParameter(format!("channel weight must be finite, got {s}")));
        }
        if mesh.eps > coeff.eps * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "mesh length {} exceeds the coefficient domain {}",
                mesh.eps, coeff.eps
            )));
        }
        let (c, p) = coeff.near_zero();
        let growing = match branch {
            Branch::FromZero => s < 0.0,
            Branch::FromOne => s > 0.0,
        };
        if growing {
            let ok = p < 1.0 || (p == 1.0 && (s * c).abs() < 0.5);
            if !ok {
                return Err(Error::NonIntegrable(format!(
                    "{branch:?} with s={s} and F ~ {c} x^-{p} near 0 is not bounded on L²"
                )));
            }
        }
        Ok(Self { branch, s, coeff, mesh, out_power: 0.0, in_power: 0.0 })
    }

    /// Multiplies the kernel by `x^out_power y^in_power`.
    pub fn with_weights(mut self, out_power: f64, in_power: f64) -> Self {
        self.out_power = out_power;
        self.in_power = in_power;
        self
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn eps(&self) -> f64 {
        self.mesh.eps
    }

    pub fn mesh(&self) -> &GradedMesh {
        &self.mesh
    }

    pub fn coefficient(&self) -> &ChannelCoefficient {
        &self.coeff
    }

    pub fn with_mesh(&self, mesh: GradedMesh) -> Self {
        Self { mesh, ..self.clone() }
    }

    /// `ln k(x, y)`, valid on either side of the diagonal.
    pub fn log_kernel(&self, x: f64, y: f64) -> f64 {
        if self.s == 0.0 || x == y {
            return 0.0;
        }
        let i = self.coeff.integral(y, x);
        if i == 0.0 {
            0.0
        } else {
            -self.s * i
        }
    }

    pub fn kernel_eval(&self, x: f64, y: f64) -> Result<f64> {
        let eps = self.eps();
        let inside = x > 0.0
            && y > 0.0
            && x <= eps
            && y <= eps
            && match self.branch {
                Branch::FromZero => y <= x,
                Branch::FromOne => y >= x,
            };
        if !inside {
            return Err(Error::OutOfTriangle { x, y });
        }
        Ok(safe_exp(self.log_kernel(x, y)) * x.powf(self.out_power) * y.powf(self.in_power))
    }

    /// `∫_p^q k(x, y) y^b f(y) dy` with `x` the anchor end of the segment.
    fn segment(&self, x: f64, p: f64, q: f64, f: &dyn Fn(f64) -> f64) -> f64 {
        let b = self.in_power;
        layered(p, q, &|y| log_add(self.log_kernel(x, y), log_power(b, y)), &|y| f(y))
    }

    /// `Pf` at each of `xs`, in the input order.
    pub fn apply_many(&self, f: &dyn Fn(f64) -> f64, xs: &[f64]) -> Result<Vec<f64>> {
        let eps = self.eps();
        if let Some(bad) = xs.iter().find(|x| !(**x > 0.0 && **x <= eps * (1.0 + 1e-14))) {
            return Err(Error::InvalidParameter(format!("evaluation point {bad} outside (0, {eps}]")));
        }
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|a, b| xs[*a].partial_cmp(&xs[*b]).unwrap());
        let mut pts: Vec<(f64, Option<usize>)> = self.mesh.nodes()[1..].iter().map(|v| (*v, None)).collect();
        pts.extend(order.iter().map(|&k| (xs[k].min(eps), Some(k))));
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut out = vec![0.0; xs.len()];
        match self.branch {
            Branch::FromZero => {
                let (mut prev, mut u) = (0.0, 0.0);
                for (p, tag) in pts {
                    if p > prev {
                        let carry = if u == 0.0 { 0.0 } else { safe_exp(self.log_kernel(p, prev)) * u };
                        u = carry + self.segment(p, prev, p, f);
                        prev = p;
                    }
                    if let Some(k) = tag {
                        out[k] = u;
                    }
                }
            }
            Branch::FromOne => {
                let (mut prev, mut u) = (eps, 0.0);
                for (p, tag) in pts.into_iter().rev() {
                    if p < prev {
                        let carry = if u == 0.0 { 0.0 } else { safe_exp(self.log_kernel(p, prev)) * u };
                        u = carry + self.segment(p, p, prev, f);
                        prev = p;
                    }
                    if let Some(k) = tag {
                        out[k] = -u;
                    }
                }
            }
        }
        let a = self.out_power;
        if a != 0.0 {
            for (o, x) in out.iter_mut().zip(xs) {
                *o *= x.powf(a);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, f: &dyn Fn(f64) -> f64, x: f64) -> Result<f64> {
        Ok(self.apply_many(f, &[x])?[0])
    }

    /// `(∫ |k(x, y)|² dy)^{1/2}` over the branch segment: the supremum of `|Pf(x)|` over unit `f`.
    pub fn row_norm(&self, x: f64) -> f64 {
        let b2 = 2.0 * self.in_power;
        let phi = |y: f64| log_add(2.0 * self.log_kernel(x, y), log_power(b2, y));
        let nodes = self.mesh.nodes();
        let mut total = 0.0;
        for w in nodes.windows(2) {
            let (l, r) = (w[0], w[1]);
            let (p, q) = match self.branch {
                Branch::FromZero => (l, r.min(x)),
                Branch::FromOne => (l.max(x), r),
            };
            if q > p {
                total += layered(p, q, &phi, &|_| 1.0);
            }
        }
        total.sqrt() * x.powf(self.out_power)
    }

    fn outer_breaks(&self, l: f64, r: f64) -> Vec<f64> {
        let layer_at_left = self.branch == Branch::FromZero;
        let anchor = if layer_at_left { l } else { r };
        let rate = self.s.abs() * self.coeff.value(anchor);
        let w = if anchor > 0.0 && rate.is_finite() && rate > 0.0 { 1.0 / rate } else { r - l };
        let mut b = vec![l, r];
        if w < r - l && anchor > 0.0 {
            let mut step = w;
            let mut k = 0;
            while step < r - l && k < 64 {
                b.push(if layer_at_left { l + step } else { r - step });
                step *= 2.0;
                k += 1;
            }
        }
        if l == 0.0 {
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let first = b[1];
            for k in 1..=GEOMETRIC_PANELS {
                b.push(first * 2f64.powi(-k));
            }
        }
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.dedup();
        b
    }

    /// Double integral of the weighted kernel over the part of `[l,r]²` inside the branch triangle.
    fn diagonal(&self, l: f64, r: f64) -> f64 {
        let a = self.out_power;
        let inner = |x: f64| -> f64 {
            match self.branch {
                Branch::FromZero => self.segment(x, l, x, &|_| 1.0),
                Branch::FromOne => self.segment(x, x, r, &|_| 1.0),
            }
        };
        let breaks = self.outer_breaks(l, r);
        let mut total = 0.0;
        for w in breaks.windows(2) {
            for (x, wt) in gl8_nodes(w[0], w[1]) {
                let v = inner(x);
                if v != 0.0 {
                    total += wt * v * if a == 0.0 { 1.0 } else { x.powf(a) };
                }
            }
        }
        total
    }

    fn cell_entry(&self, i: usize) -> (f64, f64, f64, f64) {
        let (l, r) = self.mesh.cell(i);
        let a = self.out_power;
        let b = self.in_power;
        let one = |_: f64| 1.0;
        let diag = self.diagonal(l, r);
        match self.branch {
            Branch::FromZero => {
                let beta = layered(l, r, &|y| log_add(self.log_kernel(r, y), log_power(b, y)), &one);
                if i == 0 {
                    return (0.0, beta, 0.0, diag);
                }
                let alpha = layered(l, r, &|x| log_add(self.log_kernel(x, l), log_power(a, x)), &one);
                (alpha, beta, safe_exp(self.log_kernel(r, l)), diag)
            }
            Branch::FromOne => {
                let alpha = layered(l, r, &|x| log_add(self.log_kernel(x, r), log_power(a, x)), &one);
                if i == 0 {
                    return (alpha, 0.0, 0.0, diag);
                }
                let beta = layered(l, r, &|y| log_add(self.log_kernel(l, y), log_power(b, y)), &one);
                (alpha, beta, safe_exp(self.log_kernel(l, r)), diag)
            }
        }
    }

    pub fn cell_data(&self) -> CellData {
        let n = self.mesh.cells();
        let rows: Vec<(f64, f64, f64, f64)> = (0..n).into_par_iter().map(|i| self.cell_entry(i)).collect();
        let width = (0..n).map(|i| {
            let (l, r) = self.mesh.cell(i);
            r - l
        });
        CellData {
            alpha: rows.iter().map(|r| r.0).collect(),
            beta: rows.iter().map(|r| r.1).collect(),
            kappa: rows.iter().map(|r| r.2).collect(),
            diag: rows.iter().map(|r| r.3).collect(),
            width: width.collect(),
        }
    }

    /// Galerkin matrix on normalized cell indicators, applied to `w`.
    pub fn galerkin_apply(&self, d: &CellData, w: &[f64], transpose: bool) -> Vec<f64> {
        let n = w.len();
        let mut out = vec![0.0; n];
        let sq: Vec<f64> = d.width.iter().map(|h| h.sqrt()).collect();
        let mut acc = 0.0;
        match (self.branch, transpose) {
            (Branch::FromZero, false) => {
                for i in 0..n {
                    let wt = w[i] / sq[i];
                    out[i] = (d.alpha[i] * acc + d.diag[i] * wt) / sq[i];
                    acc = d.kappa[i] * acc + d.beta[i] * wt;
                }
            }
            (Branch::FromZero, true) => {
                for j in (0..n).rev() {
                    let ut = w[j] / sq[j];
                    out[j] = (d.beta[j] * acc + d.diag[j] * ut) / sq[j];
                    acc = d.alpha[j] * ut + d.kappa[j] * acc;
                }
            }
            (Branch::FromOne, false) => {
                for i in (0..n).rev() {
                    let wt = w[i] / sq[i];
                    out[i] = -(d.alpha[i] * acc + d.diag[i] * wt) / sq[i];
                    acc = d.beta[i] * wt + d.kappa[i] * acc;
                }
            }
            (Branch::FromOne, true) => {
                for j in 0..n {
                    let ut = w[j] / sq[j];
                    out[j] = -(d.beta[j] * acc + d.diag[j] * ut) / sq[j];
                    acc = d.kappa[j] * acc + d.alpha[j] * ut;
                }
            }
        }
        out
    }

    /// `∫∫` of the weighted kernel over the whole branch triangle.
    pub fn triangle_integral(&self) -> f64 {
        let d = self.cell_data();
        let n = d.diag.len();
        let mut acc = 0.0;
        let mut total = 0.0;
        match self.branch {
            Branch::FromZero => {
                for i in 0..n {
                    total += d.alpha[i] * acc + d.diag[i];
                    acc = d.kappa[i] * acc + d.beta[i];
                }
            }
            Branch::FromOne => {
                for i in (0..n).rev() {
                    total += d.alpha[i] * acc + d.diag[i];
                    acc = d.beta[i] + d.kappa[i] * acc;
                }
            }
        }
        total
    }

    /// Operator with kernel `k²` (and squared weights).
    fn squared(&self) -> Self {
        Self {
            s: 2.0 * self.s,
            out_power: 2.0 * self.out_power,
            in_power: 2.0 * self.in_power,
            ..self.clone()
        }
    }

    pub fn hs_norm(&self) -> f64 {
        let v = self.squared().triangle_integral();
        if v.is_finite() {
            v.max(0.0).sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Largest singular value of the Galerkin matrix.
    pub fn op_norm_estimate(&self) -> Result<f64> {
        let d = self.cell_data();
        let n = d.diag.len();
        top_singular_value(n, |q| {
            let mq = self.galerkin_apply(&d, q, false);
            self.galerkin_apply(&d, &mq, true)
        })
    }
}

/// Largest singular value of an operator given `v ↦ MᵀM v` on `R^n`.
///
/// Krylov (Lanczos) iteration with full reorthogonalization; the Ritz value is
/// accepted once it moves by less than `1e-10` relative.
pub fn top_singular_value<G: Fn(&[f64]) -> Vec<f64>>(n: usize, gram: G) -> Result<f64> {
    let steps = n.min(KRYLOV_CAP);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut q = vec![1.0 / (n as f64).sqrt(); n];
    let mut last = 0.0;
    for k in 0..steps {
        let mut w = gram(&q);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoConvergence("Krylov iteration produced a non-finite value".into()));
        }
        let a: f64 = w.iter().zip(&q).map(|(x, y)| x * y).sum();
        alphas.push(a);
        basis.push(q.clone());
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let top = largest_tridiagonal_eigenvalue(&alphas, &betas);
        let sigma = top.max(0.0).sqrt();
        let nb = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let settled = k > 0 && (sigma - last).abs() <= NORM_TOL * sigma;
        if sigma == 0.0 || settled || nb <= 1e-14 * top.abs().max(f64::MIN_POSITIVE) || k + 1 == n {
            return Ok(sigma);
        }
        last = sigma;
        betas.push(nb);
        q = w.into_iter().map(|x| x / nb).collect();
    }
    Err(Error::NoConvergence(format!("norm estimate did not settle in {steps} Krylov steps")))
}

fn largest_tridiagonal_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let k = diag.len();
    let mut t = nalgebra::DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = diag[i];
        if i + 1 < k {
            t[(i, i + 1)] = off[i];
            t[(i + 1, i)] = off[i];
        }
    }
    t.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `‖P^{F_1}_{0,s} - P^{F_2}_{0,s}‖_HS` on a common mesh.
pub fn hs_difference(a: &KernelOperator, b: &KernelOperator) -> Result<f64> {
    if a.branch != b.branch || a.s != b.s || a.mesh != b.mesh {
        return Err(Error::InvalidParameter("HS difference needs a common branch, weight and mesh".into()));
    }
    let cross = KernelOperator {
        coeff: ChannelCoefficient::sum(&a.coeff, &b.coeff),
        ..a.clone()
    };
    let v = a.squared().triangle_integral() + b.squared().triangle_integral() - 2.0 * cross.triangle_integral();
    Ok(v.max(0.0).sqrt())
}

/// Probing functions on `(0, eps)`, normalized in `L²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: String,
    kind: TestKind,
    eps: f64,
    scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TestKind {
    Constant,
    Linear,
    Sine(u32),
    Bump { center: f64, width: f64 },
    Parabola,
}

impl TestFunction {
    fn new(name: String, kind: TestKind, eps: f64) -> Self {
        let mut t = Self { name, kind, eps, scale: 1.0 };
        let norm2 = gl8_composite(0.0, eps, 256, |x| t.raw(x).powi(2));
        t.scale = 1.0 / norm2.sqrt();
        t
    }

    pub fn bump(center: f64, width: f64, eps: f64) -> Self {
        Self::new(format!("bump({center},{width})"), TestKind::Bump { center, width }, eps)
    }

    fn raw(&self, x: f64) -> f64 {
        match self.kind {
            TestKind::Constant => 1.0,
            TestKind::Linear => x,
            TestKind::Sine(k) => (k as f64 * std::f64::consts::PI * x / self.eps).sin(),
            TestKind::Bump { center, width } => {
                let t = (x - center) / width;
                if t.abs() < 1.0 {
                    (-1.0 / (1.0 - t * t)).exp()
                } else {
                    0.0
                }
            }
            TestKind::Parabola => x * (self.eps - x),
        }
    }

    fn raw_derivative(&self, x: f64) -> f64 {
        match self.kind {
            TestKind::Constant => 0.0,
            TestKind::Linear => 1.0,
            TestKind::Sine(k) => {
                let w = k as f64 * std::f64::consts::PI / self.eps;
                w * (w * x).cos()
            }
            TestKind::Bump { center, width } => {
                let t = (x - center) / width;
                if t.abs() < 1.0 {
                    let q = 1.0 - t * t;
                    (-1.0 / q).exp() * (-2.0 * t / (q * q)) / width
                } else {
                    0.0
                }
            }
            TestKind::Parabola => self.eps - 2.0 * x,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.scale * self.raw(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.scale * self.raw_derivative(x)
    }

    /// Support is a compact subset of `(0, eps)`.
    pub fn compact(&self) -> bool {
        matches!(self.kind, TestKind::Bump { .. })
    }
}

/// `{1, x, sin(kπx/eps) k ≤ 8, bump at eps/2, x(eps - x)}`, normalized.
pub fn test_family(eps: f64) -> Vec<TestFunction> {
    let mut v = vec![
        TestFunction::new("one".into(), TestKind::Constant, eps),
        TestFunction::new("x".into(), TestKind::Linear, eps),
    ];
    for k in 1..=8 {
        v.push(TestFunction::new(format!("sin{k}"), TestKind::Sine(k), eps));
    }
    v.push(TestFunction::bump(0.5 * eps, 0.25 * eps, eps));
    v.push(TestFunction::new("parabola".into(), TestKind::Parabola, eps));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseResidual {
    /// `max |(d/dx + sF)(Pf) - f|` over interior nodes.
    pub right: f64,
    /// `max |P((d/dx + sF) f) - f|`, for compactly supported `f`.
    pub left: Option<f64>,
}

/// Checks `(d/dx + sF) P f = f` by five-point differences at interior mesh nodes,
/// and `P (d/dx + sF) f = f` when `f` has compact support.
pub fn verify_inverse_identity(k: &KernelOperator, f: &TestFunction) -> Result<InverseResidual> {
    let nodes = k.mesh.nodes();
    let n = nodes.len() - 1;
    if n < 5 {
        return Err(Error::InvalidParameter("inverse identity needs at least 5 cells".into()));
    }
    if k.out_power != 0.0 || k.in_power != 0.0 {
        return Err(Error::Precondition("inverse identities hold for the unweighted operator".into()));
    }
    let xs = &nodes[1..];
    let fv = |x: f64| f.value(x);
    let u = k.apply_many(&fv, xs)?;
    let s = k.s;
    let mut right = 0.0f64;
    for i in 2..xs.len() - 2 {
        let w = fd_weights(xs[i], &xs[i - 2..=i + 2], 1);
        let du: f64 = w.iter().zip(&u[i - 2..=i + 2]).map(|(a, b)| a * b).sum();
        let r = (du + s * k.coeff.value(xs[i]) * u[i] - f.value(xs[i])).abs();
        right = right.max(r);
    }
    let left = if f.compact() {
        let g = |x: f64| f.derivative(x) + s * k.coeff.value(x) * f.value(x);
        let v = k.apply_many(&g, xs)?;
        Some(xs.iter().zip(&v).map(|(x, v)| (v - f.value(*x)).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(InverseResidual { right, left })
}

fn inner_product(mesh: &GradedMesh, u: &dyn Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(8 * mesh.cells());
    let mut ws = Vec::with_capacity(8 * mesh.cells());
    for i in 0..mesh.cells() {
        let (l, r) = mesh.cell(i);
        for (x, w) in gl8_nodes(l, r) {
            xs.push(x);
            ws.push(w * u(x));
        }
    }
    (xs, ws)
}

/// `|⟨P_{0,s} f, g⟩ + ⟨f, P_{1,-s} g⟩|`.
pub fn adjoint_pair_residual(
    s: f64,
    coeff: &ChannelCoefficient,
    mesh: &GradedMesh,
    f: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    let p0 = KernelOperator::new(Branch::FromZero, s, coeff.clone(), mesh.clone())?;
    let p1 = KernelOperator::new(Branch::FromOne, -s, coeff.clone(), mesh.clone())?;
    let (xs, wg) = inner_product(mesh, g);
    let (_, wf) = inner_product(mesh, f);
    let pf = p0.apply_many(f, &xs)?;
    let pg = p1.apply_many(g, &xs)?;
    let a: f64 = pf.iter().zip(&wg).map(|(p, w)| p * w).sum();
    let b: f64 = pg.iter().zip(&wf).map(|(p, w)| p * w).sum();
    Ok((a + b).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSample {
    pub s: f64,
    pub x: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedConstant {
    pub s: f64,
    pub slope: Option<f64>,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckReport {
    pub lemma: String,
    pub samples: Vec<BoundSample>,
    pub pass: bool,
    pub worst_margin: f64,
    pub tol: f64,
    /// Informational constants for the branches without explicit bounds.
    pub fitted: Vec<FittedConstant>,
    pub notes: Vec<String>,
}

/// Relative slack on bound checks.
pub const BOUND_TOL: f64 = 1e-8;

impl BoundCheckReport {
    pub fn new(lemma: &str, samples: Vec<BoundSample>) -> Self {
        let pass = samples.iter().all(|s| s.lhs <= s.rhs * (1.0 + BOUND_TOL));
        let worst_margin = samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
        Self {
            lemma: lemma.to_string(),
            samples,
            pass,
            worst_margin,
            tol: BOUND_TOL,
            fitted: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn violations(&self) -> usize {
        self.samples.iter().filter(|s| s.lhs > s.rhs * (1.0 + self.tol)).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lemma", "s", "x", "lhs", "rhs", "margin"]).map_err(csv_err)?;
        for s in &self.samples {
            w.write_record([
                self.lemma.clone(),
                crate::report::fmt_float(s.s),
                crate::report::fmt_float(s.x),
                crate::report::fmt_float(s.lhs),
                crate::report::fmt_float(s.rhs),
                crate::report::fmt_float(s.margin),
            ])
            .map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn sample(s: f64, x: f64, lhs: f64, rhs: f64) -> BoundSample {
    BoundSample { s, x, lhs, rhs, margin: rhs - lhs }
}

/// Mesh for `1/h` kernels: grading resolves the layer `exp(-s μ)`.
pub fn inverse_mesh(h: &WarpProfile, n: usize, eps: f64) -> Result<GradedMesh> {
    GradedMesh::new(n, GradedMesh::inverse_grading(h.beta()), eps)
}

/// Pointwise estimates for `P^{1/h}`: `|P_{0,s} f(x)| ≤ √h(x) ‖f‖ / √(2s)` for `s > 0`;
/// for `s < 0` the constant and decay exponent of `|P_{1,s} f(x)|` are fitted.
pub fn check_mls1_bounds(h: &WarpProfile, s_grid: &[f64], x_grid: &[f64], mesh_n: usize) -> Result<BoundCheckReport> {
    let eps = x_grid.iter().cloned().fold(0.0, f64::max).max(h.eps().min(1.0));
    let eps = eps.min(h.eps());
    let coeff = coefficient(h, CoefficientKind::Inverse)?;
    let mesh = inverse_mesh(h, mesh_n, eps)?;
    let gamma = h.gamma();
    let mut samples = Vec::new();
    let mut fitted = Vec::new();
    for &s in s_grid {
        if s > 0.0 {
            let k = KernelOperator::new(Branch::FromZero, s, coeff.clone(), mesh.clone())?;
            for &x in x_grid {
                samples.push(sample(s, x, k.row_norm(x), (h.h(x) / (2.0 * s)).sqrt()));
            }
        } else if s < 0.0 {
            let k = KernelOperator::new(Branch::FromOne, s, coeff.clone(), mesh.clone())?;
            let vals: Vec<f64> = x_grid.iter().map(|&x| k.row_norm(x)).collect();
            let lx: Vec<f64> = x_grid.iter().map(|x| x.ln()).collect();
            let ly: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
            let constant = x_grid
                .iter()
                .zip(&vals)
                .map(|(x, v)| v * s.abs().sqrt() / x.powf(gamma / 2.0))
                .fold(0.0, f64::max);
            fitted.push(FittedConstant { s, slope: crate::quad::fit_slope(&lx, &ly), constant });
        }
    }
    let mut r = BoundCheckReport::new("mls1", samples);
    r.fitted = fitted;
    r.notes.push("lhs is the kernel row norm, the supremum of |Pf(x)| over unit f".into());
    Ok(r)
}

/// Weighted norms `‖X^gb P_{0,s}^{1/h}‖ + ‖P_{1,-s}^{1/h} X^gb‖` against `eps^{γ+gb}/s`.
///
/// The per-operator form `max(...) ≤ eps^{γ+gb}/s` is recorded in `notes` and in
/// [`schur_per_operator`].
pub fn check_schur_bounds(h: &WarpProfile, gb: f64, s_grid: &[f64], eps: f64, mesh_n: usize) -> Result<BoundCheckReport> {
    let (sum, _) = schur_samples(h, gb, s_grid, eps, mesh_n)?;
    let per = schur_per_operator(h, gb, s_grid, eps, mesh_n)?;
    let mut r = BoundCheckReport::new("schur", sum.0);
    r.fitted = sum.1;
    r.notes.push(format!(
        "per-operator form: {} of {} samples within eps^(gamma+gb)/s",
        per.samples.len() - per.violations(),
        per.samples.len()
    ));
    Ok(r)
}

type SchurSamples = ((Vec<BoundSample>, Vec<FittedConstant>), (Vec<BoundSample>, ()));

fn schur_samples(h: &WarpProfile, gb: f64, s_grid: &[f64], eps: f64, mesh_n: usize) -> Result<SchurSamples> {
    let gamma = h.gamma();
    if !(gb > -gamma) {
        return Err(Error::Precondition(format!("need gb > -gamma = {}", -gamma)));
    }
    if !(eps > 0.0 && eps <= h.eps()) {
        return Err(Error::InvalidParameter(format!("need 0 < eps <= {}", h.eps())));
    }
    let coeff = coefficient(h, CoefficientKind::Inverse)?;
    let mesh = inverse_mesh(h, mesh_n, eps)?;
    let rows: Vec<Result<(f64, f64, f64)>> = s_grid
        .par_iter()
        .map(|&s| {
            let (j0, j1) = if s > 0.0 { (Branch::FromZero, Branch::FromOne) } else { (Branch::FromOne, Branch::FromZero) };
            let a = KernelOperator::new(j0, s, coeff.clone(), mesh.clone())?.with_weights(gb, 0.0);
            let b = KernelOperator::new(j1, -s, coeff.clone(), mesh.clone())?.with_weights(0.0, gb);
            Ok((s, a.op_norm_estimate()?, b.op_norm_estimate()?))
        })
        .collect();
    let mut sum = Vec::new();
    let mut per = Vec::new();
    let mut fitted = Vec::new();
    for row in rows {
        let (s, a, b) = row?;
        if s > 0.0 {
            let rhs = eps.powf(gamma + gb) / s;
            sum.push(sample(s, eps, a + b, rhs));
            per.push(sample(s, eps, a.max(b), rhs));
        } else {
            fitted.push(FittedConstant { s, slope: None, constant: s.abs() * (a + b) });
        }
    }
    Ok(((sum, fitted), (per, ())))
}

/// Each of the two weighted operators separately against `eps^{γ+gb}/s`.
pub fn schur_per_operator(h: &WarpProfile, gb: f64, s_grid: &[f64], eps: f64, mesh_n: usize) -> Result<BoundCheckReport> {
    let (_, per) = schur_samples(h, gb, s_grid, eps, mesh_n)?;
    Ok(BoundCheckReport::new("schur_per_operator", per.0))
}

/// `‖P_{j,s}^F‖ ≤ C0/|s|` for `(-1)^j s > 0`, given `F ≥ 1/C0`.
pub fn check_normp_bound(coeff: &ChannelCoefficient, c0: f64, s_grid: &[f64], mesh: &GradedMesh) -> Result<BoundCheckReport> {
    if !(c0 > 0.0) || coeff.lower_bound * c0 < 1.0 - 1e-12 {
        return Err(Error::Precondition(format!(
            "need F >= 1/C0: lower bound {} vs 1/C0 = {}",
            coeff.lower_bound,
            1.0 / c0
        )));
    }
    let rows: Vec<Result<BoundSample>> = s_grid
        .par_iter()
        .filter(|s| **s != 0.0)
        .map(|&s| {
            let branch = if s > 0.0 { Branch::FromZero } else { Branch::FromOne };
            let k = KernelOperator::new(branch, s, coeff.clone(), mesh.clone())?;
            Ok(sample(s, mesh.eps, k.op_norm_estimate()?, c0 / s.abs()))
        })
        .collect();
    let samples = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BoundCheckReport::new("normp", samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{make_power_horn, pure_power};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ratio(beta: f64, eps: f64) -> ChannelCoefficient {
        ChannelCoefficient::power(beta, 1.0, eps).unwrap()
    }

    fn op(branch: Branch, s: f64, c: ChannelCoefficient, n: usize, g: f64) -> KernelOperator {
        let eps = c.eps;
        KernelOperator::new(branch, s, c, GradedMesh::new(n, g, eps).unwrap()).unwrap()
    }

    #[test]
    fn kernel_values() {
        let k = op(Branch::FromZero, 1.0, ratio(1.0, 1.0), 8, 1.0);
        assert_relative_eq!(k.kernel_eval(0.5, 0.25).unwrap(), 0.5, max_relative = 1e-15);
        assert_eq!(k.kernel_eval(0.3, 0.3).unwrap(), 1.0);
        assert!(k.kernel_eval(0.25, 0.5).is_err());
        let k = op(Branch::FromZero, 1.0, ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap(), 8, 2.0);
        assert_relative_eq!(k.kernel_eval(0.5, 0.25).unwrap(), (-2.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn apply_examples() {
        let k = op(Branch::FromZero, 1.0, ratio(1.0, 1.0), 64, 2.0);
        assert_relative_eq!(k.apply(&|_| 1.0, 0.5).unwrap(), 0.25, max_relative = 1e-13);
        assert_eq!(k.apply(&|_| 0.0, 0.5).unwrap(), 0.0);
        let k = op(Branch::FromOne, 0.0, ratio(1.0, 1.0), 64, 2.0);
        assert_relative_eq!(k.apply(&|_| 1.0, 0.5).unwrap(), -0.5, max_relative = 1e-13);
    }

    #[test]
    fn non_integrable_rejected() {
        let c = ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap();
        let m = GradedMesh::new(8, 2.0, 1.0).unwrap();
        assert!(KernelOperator::new(Branch::FromZero, -0.1, c.clone(), m.clone()).is_err());
        assert!(KernelOperator::new(Branch::FromOne, 0.1, c, m.clone()).is_err());
        assert!(KernelOperator::new(Branch::FromZero, -0.6, ratio(1.0, 1.0), m.clone()).is_err());
        assert!(KernelOperator::new(Branch::FromZero, -0.4, ratio(1.0, 1.0), m).is_ok());
    }

    #[test]
    fn hs_closed_form() {
        let k = op(Branch::FromZero, 1.0, ratio(1.0, 1.0), 32, 2.0);
        assert_relative_eq!(k.hs_norm(), (1.0f64 / 6.0).sqrt(), max_relative = 1e-10);
        let k = op(Branch::FromZero, 3.0, ratio(1.0, 0.5), 32, 2.0);
        assert_relative_eq!(k.hs_norm(), 0.5 / (2.0 * 7.0f64).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn hs_difference_closed_form() {
        let a = op(Branch::FromZero, 1.0, ratio(1.0, 1.0), 32, 2.0);
        let b = op(Branch::FromZero, 1.0, ratio(1.5, 1.0), 32, 2.0);
        let v = hs_difference(&a, &b).unwrap();
        let exact = (0.5f64 * (1.0 / 3.0 + 0.25 - 2.0 / 3.5)).sqrt();
        assert_relative_eq!(v, exact, max_relative = 1e-9);
        assert!((v - 0.077152).abs() < 1e-5);
        assert!(hs_difference(&a, &a.clone()).unwrap() < 1e-7);
    }

    #[test]
    fn hardy_norm() {
        let k = op(Branch::FromZero, 4.0, ratio(2.0, 1.0), 256, 3.0);
        // Dense SVD of the same Galerkin matrix, assembled from closed-form cell integrals.
        let v = k.op_norm_estimate().unwrap();
        assert!((v - 0.085764939900).abs() < 1e-9, "{v}");
        assert!(v <= 0.125);
        assert!(v <= k.hs_norm());
    }

    #[test]
    fn large_weight_kills_norm() {
        let k = op(Branch::FromZero, 1e6, ratio(1.0, 1.0), 64, 2.0);
        assert!(k.op_norm_estimate().unwrap() < 1e-5);
    }

    #[test]
    fn adjoint_closed_form() {
        let m = GradedMesh::new(64, 2.0, 1.0).unwrap();
        let r = adjoint_pair_residual(1.0, &ratio(1.0, 1.0), &m, &|_| 1.0, &|_| 1.0).unwrap();
        assert!(r < 1e-8, "{r}");
        let r = adjoint_pair_residual(1.0, &ratio(1.0, 1.0), &m, &|_| 0.0, &|_| 1.0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn adjoint_inverse_power() {
        let c = ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap();
        let m = GradedMesh::new(256, 2.0, 1.0).unwrap();
        let f = |x: f64| (3.0 * x).sin() + 0.5 * (7.0 * x).cos();
        let g = |x: f64| (5.0 * x).cos() - 0.3 * (2.0 * x).sin();
        let r = adjoint_pair_residual(0.5, &c, &m, &f, &g).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn galerkin_transpose_is_adjoint() {
        for branch in [Branch::FromZero, Branch::FromOne] {
            let s = if branch == Branch::FromZero { 1.5 } else { -1.5 };
            let k = op(branch, s, ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap(), 40, 2.0).with_weights(0.5, 0.0);
            let d = k.cell_data();
            let u: Vec<f64> = (0..40).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let v: Vec<f64> = (0..40).map(|i| ((i * 3 % 7) as f64) - 3.0).collect();
            let mu = k.galerkin_apply(&d, &u, false);
            let mtv = k.galerkin_apply(&d, &v, true);
            let a: f64 = mu.iter().zip(&v).map(|(x, y)| x * y).sum();
            let b: f64 = u.iter().zip(&mtv).map(|(x, y)| x * y).sum();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn inverse_identity_examples() {
        let k = op(Branch::FromZero, 1.0, ratio(1.0, 1.0), 512, 2.0);
        let fam = test_family(1.0);
        let parabola = fam.iter().find(|t| t.name == "parabola").unwrap();
        let r = verify_inverse_identity(&k, parabola).unwrap();
        assert!(r.right < 1e-6, "{r:?}");
        let bump = fam.iter().find(|t| t.compact()).unwrap();
        let c = ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap();
        let k = op(Branch::FromZero, 2.0, c, 1024, 2.0);
        let r = verify_inverse_identity(&k, bump).unwrap();
        assert!(r.right < 1e-5, "{r:?}");
        assert!(r.left.unwrap() < 1e-8, "{r:?}");
    }

    #[test]
    fn from_one_identity() {
        let h = make_power_horn(2.0, 0.25, 1.0, false).unwrap();
        let c = coefficient(&h, CoefficientKind::Inverse).unwrap();
        let k = op(Branch::FromOne, -1.0, c, 1024, 2.0);
        for f in test_family(1.0) {
            let r = verify_inverse_identity(&k, &f).unwrap();
            assert!(r.right < 1e-5, "{} {r:?}", f.name);
        }
    }

    #[test]
    fn row_norm_dominates_probes() {
        let h = pure_power(2.0, 1.0).unwrap();
        let c = coefficient(&h, CoefficientKind::Inverse).unwrap();
        let k = op(Branch::FromZero, 1.0, c, 128, 2.0);
        let x = 0.5;
        let rn = k.row_norm(x);
        for f in test_family(1.0) {
            let v = k.apply(&|y| f.value(y), x).unwrap().abs();
            assert!(v <= rn * (1.0 + 1e-10), "{} {v} {rn}", f.name);
        }
        assert!(rn <= (0.25f64 / 2.0).sqrt());
    }

    #[test]
    fn mls1_passes_and_fits() {
        let h = make_power_horn(1.5, 0.25, 1.0, false).unwrap();
        let xs = crate::quad::logspace(1e-3, 0.01, 8);
        let r = check_mls1_bounds(&h, &[0.5, 2.0, -1.0], &xs, 128).unwrap();
        assert!(r.pass);
        let fit = &r.fitted[0];
        assert!(fit.slope.unwrap() >= 0.75 - 1e-3, "{fit:?}");
    }

    #[test]
    fn schur_example_single_operator() {
        let h = make_power_horn(2.0, 0.25, 1.0, false).unwrap();
        let r = schur_per_operator(&h, 0.0, &[2.0], 0.5, 256).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.samples[0].lhs <= 0.125);
    }

    #[test]
    fn schur_exponent_cancellation() {
        let h = pure_power(2.0, 1.0).unwrap();
        let r = schur_per_operator(&h, -2.0 + 1e-9, &[4.0], 0.5, 128);
        assert!(r.is_ok(), "{r:?}");
        assert!(schur_per_operator(&h, -2.5, &[4.0], 0.5, 128).is_err());
    }

    #[test]
    fn normp_example() {
        let c = ratio(2.0, 1.0);
        let m = GradedMesh::new(256, 2.0, 1.0).unwrap();
        let r = check_normp_bound(&c, 0.5, &[4.0, 8.0, -4.0], &m).unwrap();
        assert!(r.pass, "{r:?}");
        assert_relative_eq!(r.samples[0].rhs, 0.125);
        assert!(r.samples[1].lhs < r.samples[0].lhs);
        assert_relative_eq!(r.samples[0].lhs, r.samples[2].lhs, max_relative = 1e-8);
        assert!(check_normp_bound(&c, 0.4, &[4.0], &m).is_err());
    }

    #[test]
    fn bound_report_csv() {
        let r = BoundCheckReport::new("normp", vec![sample(1.0, 0.5, 0.25, 0.5)]);
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("lemma,s,x,lhs,rhs,margin\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hs_monotone_in_s(s in 0.1f64..5.0, ds in 0.05f64..2.0) {
            let c = ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap();
            let a = op(Branch::FromZero, s, c.clone(), 24, 2.0).hs_norm();
            let b = op(Branch::FromZero, s + ds, c, 24, 2.0).hs_norm();
            prop_assert!(b <= a * (1.0 + 1e-12));
        }

        #[test]
        fn kernel_in_unit_interval(s in 0.0f64..10.0, y in 0.01f64..1.0, t in 0.0f64..1.0) {
            let c = ChannelCoefficient::power(1.0, 2.0, 1.0).unwrap();
            let k = op(Branch::FromZero, s, c, 4, 1.0);
            let x = y + t * (1.0 - y);
            let v = k.kernel_eval(x, y).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn norm_below_hs(s in 0.2f64..6.0, beta in 1.0f64..3.0) {
            let k = op(Branch::FromZero, s, ChannelCoefficient::power(1.0, beta, 1.0).unwrap(), 48, 2.0);
            prop_assert!(k.op_norm_estimate().unwrap() <= k.hs_norm() * (1.0 + 1e-10));
        }

        #[test]
        fn norm_stable_under_refinement(s in 0.5f64..4.0) {
            let k = op(Branch::FromZero, s, ratio(1.0, 1.0), 64, 2.0);
            let a = k.op_norm_estimate().unwrap();
            let b = k.with_mesh(k.mesh().refined()).op_norm_estimate().unwrap();
            prop_assert!((a - b).abs() <= 0.02 * b);
        }
    }
}
