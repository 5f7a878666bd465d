//! Quadrature rules, graded meshes and small numerical helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Gauss-Legendre nodes of order 8 mapped to `[a, b]`, ascending.
pub fn gl8_nodes(a: f64, b: f64) -> [(f64, f64); 8] {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[3 - k] = (c - r * GL8_X[k], r * GL8_W[k]);
        out[4 + k] = (c + r * GL8_X[k], r * GL8_W[k]);
    }
    out
}

pub fn gl8<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    gl8_nodes(a, b).iter().map(|&(x, w)| w * f(x)).sum()
}

/// Composite order-8 rule on `panels` equal panels.
pub fn gl8_composite<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| gl8(a + i as f64 * h, a + (i + 1) as f64 * h, &f))
        .sum()
}

/// Exponents below this are treated as a vanishing kernel.
pub(crate) const NEGLIGIBLE: f64 = -45.0;
/// Largest exponent variation integrated by a single order-8 panel.
const SPREAD: f64 = 2.0;
const MAX_DEPTH: u32 = 64;

/// `∫_u^v exp(phi(t)) g(t) dt` for a monotone exponent `phi`.
///
/// Subintervals are halved (geometrically away from 0) until the exponent
/// varies by at most two units, so boundary layers of stiff kernels are resolved.
pub fn layered<P, G>(u: f64, v: f64, phi: &P, g: &G) -> f64
where
    P: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if v <= u {
        return 0.0;
    }
    let pu = phi(u);
    let pv = phi(v);
    layered_rec(u, v, pu, pv, phi, g, MAX_DEPTH)
}

fn layered_rec<P, G>(u: f64, v: f64, pu: f64, pv: f64, phi: &P, g: &G, depth: u32) -> f64
where
    P: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let hi = pu.max(pv);
    if hi < NEGLIGIBLE || (pu.is_nan() && pv < NEGLIGIBLE) {
        return 0.0;
    }
    let spread = (pu - pv).abs();
    if depth == 0 || spread <= SPREAD {
        return gl8_nodes(u, v)
            .iter()
            .map(|&(t, w)| {
                let e = phi(t);
                if e < -745.0 {
                    0.0
                } else {
                    w * e.exp() * g(t)
                }
            })
            .sum();
    }
    let m = if u > 0.0 && v > 4.0 * u { (u * v).sqrt() } else { 0.5 * (u + v) };
    let pm = phi(m);
    layered_rec(u, m, pu, pm, phi, g, depth - 1) + layered_rec(m, v, pm, pv, phi, g, depth - 1)
}

/// Nodes `x_i = eps (i/N)^g`, `i = 0..=N`. The node at 0 only bounds the first cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedMesh {
    pub n: usize,
    pub grading: f64,
    pub eps: f64,
    nodes: Vec<f64>,
}

impl GradedMesh {
    pub fn new(n: usize, grading: f64, eps: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("mesh needs at least one cell".into()));
        }
        if !(grading >= 1.0) || !grading.is_finite() {
            return Err(Error::InvalidParameter(format!("grading must be >= 1, got {grading}")));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("mesh length must be positive, got {eps}")));
        }
        let nodes = (0..=n)
            .map(|i| {
                if i == n {
                    eps
                } else {
                    eps * (i as f64 / n as f64).powf(grading)
                }
            })
            .collect();
        Ok(Self { n, grading, eps, nodes })
    }

    /// Default grading for kernels with coefficient `1/h`, `h = x^alpha`.
    pub fn inverse_grading(alpha: f64) -> f64 {
        if alpha > 1.0 {
            (2.0 / (alpha - 1.0)).max(2.0)
        } else {
            2.0
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.nodes[i], self.nodes[i + 1])
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn refined(&self) -> Self {
        Self::new(2 * self.n, self.grading, self.eps).expect("refinement of a valid mesh")
    }
}

/// Finite-difference weights for the `m`-th derivative at `z` (Fornberg).
pub fn fd_weights(z: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Chebyshev-Lobatto points on `[a, b]`, ascending, endpoints included.
pub fn chebyshev_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 || a == b {
        return vec![a];
    }
    (0..n)
        .map(|k| {
            let t = (k as f64 * std::f64::consts::PI / (n - 1) as f64).cos();
            let x = 0.5 * (a + b) - 0.5 * (b - a) * t;
            if k == 0 {
                a
            } else if k == n - 1 {
                b
            } else {
                x
            }
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    slope.is_finite().then_some(slope)
}
