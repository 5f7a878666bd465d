//! Model cross-sections with closed-form spectra, and the normal forms of the
//! Dirac, Gauss-Bonnet and Signature operators over them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::channels::{Family, Origin, SpectralChannel};
use crate::error::{Error, Result};

pub const DEFAULT_CUTOFF: f64 = 100.0;
pub const CATALOG: [&str; 5] = ["circle", "torus2", "torus3", "sphere2", "sphere3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormType {
    Closed,
    Coclosed,
}

/// One eigenspace of the form Laplacian restricted to closed or coclosed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormEigenspace {
    pub lambda: f64,
    /// Exact integer label of the eigenvalue (`|k|²` on tori, `λ` on spheres).
    #[serde(skip)]
    pub level: u64,
    #[serde(rename = "j")]
    pub degree: usize,
    #[serde(rename = "type")]
    pub kind: FormType,
    pub mult: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Torus,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Positive,
    Zero,
}

/// Spin structure tag. On the circle `Trivial` is the non-bounding (periodic)
/// structure and `Nontrivial` the bounding one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinStructure {
    Trivial,
    Nontrivial,
}

impl std::str::FromStr for SpinStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trivial" | "nonbounding" | "periodic" => Ok(Self::Trivial),
            "nontrivial" | "bounding" | "antiperiodic" => Ok(Self::Nontrivial),
            _ => Err(Error::Config(format!("unknown spin structure `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiracData {
    pub b: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub name: String,
    pub n: usize,
    pub shape: Shape,
    pub betti: Vec<usize>,
    pub harmonic: Vec<usize>,
    pub orientable: bool,
    pub spin: bool,
    pub scalar_curvature: Option<Curvature>,
    pub cutoff: f64,
    pub spectrum: Vec<FormEigenspace>,
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn factorial(n: u64) -> u128 {
    (1..=n as u128).product()
}

/// Lattice points of `Z^n` grouped by `|k + shift|²`, scaled by 4 to stay integral.
fn lattice_levels(n: usize, shift: &[f64], max_norm2: f64) -> BTreeMap<u64, usize> {
    let r = max_norm2.sqrt().ceil() as i64 + 1;
    let mut out = BTreeMap::new();
    let mut k = vec![-r; n];
    loop {
        let q: f64 = k.iter().zip(shift).map(|(&a, &e)| (a as f64 + e).powi(2)).sum();
        if q <= max_norm2 + 1e-9 {
            *out.entry((4.0 * q).round() as u64).or_insert(0) += 1;
        }
        let mut i = 0;
        loop {
            if i == n {
                return out;
            }
            k[i] += 1;
            if k[i] > r {
                k[i] = -r;
                i += 1;
            } else {
                break;
            }
        }
    }
}

/// Multiplicity of coclosed `p`-eigenforms on the round `S^n` at `λ = (k+p)(k+n-p-1)`.
pub fn sphere_coclosed_mult(n: usize, p: usize, k: u64) -> usize {
    let n = n as u64;
    let p = p as u64;
    let num = factorial(k + n - 1) * (2 * k + n - 1) as u128;
    let den = factorial(p) * factorial(n - p - 1) * factorial(k - 1) * ((k + p) * (k + n - p - 1)) as u128;
    (num / den) as usize
}

fn torus_spectrum(n: usize, cutoff: f64) -> Vec<FormEigenspace> {
    let levels = lattice_levels(n, &vec![0.0; n], cutoff / (4.0 * PI * PI));
    let mut out = Vec::new();
    for (&l4, &count) in &levels {
        if l4 == 0 {
            continue;
        }
        let level = l4 / 4;
        let lambda = 4.0 * PI * PI * level as f64;
        for j in 0..=n {
            if j >= 1 {
                out.push(FormEigenspace { lambda, level, degree: j, kind: FormType::Closed, mult: count * binomial(n - 1, j - 1) });
            }
            if j < n {
                out.push(FormEigenspace { lambda, level, degree: j, kind: FormType::Coclosed, mult: count * binomial(n - 1, j) });
            }
        }
    }
    out
}

fn sphere_spectrum(n: usize, cutoff: f64) -> Vec<FormEigenspace> {
    let mut out = Vec::new();
    for p in 0..n {
        let mut k = 1u64;
        loop {
            let level = (k + p as u64) * (k + (n - p) as u64 - 1);
            if level as f64 > cutoff {
                break;
            }
            let mult = sphere_coclosed_mult(n, p, k);
            let lambda = level as f64;
            out.push(FormEigenspace { lambda, level, degree: p, kind: FormType::Coclosed, mult });
            out.push(FormEigenspace { lambda, level, degree: p + 1, kind: FormType::Closed, mult });
            k += 1;
        }
    }
    out.sort_by(|a, b| (a.level, a.degree, a.kind as u8).cmp(&(b.level, b.degree, b.kind as u8)));
    out
}

/// Looks up a catalog cross-section with its form spectrum up to `λ <= cutoff`.
pub fn catalog_cross_section(name: &str, cutoff: f64) -> Result<CrossSection> {
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return Err(Error::InvalidParameter(format!("spectrum cutoff must be positive, got {cutoff}")));
    }
    let (n, shape) = match name {
        "circle" => (1, Shape::Torus),
        "torus2" => (2, Shape::Torus),
        "torus3" => (3, Shape::Torus),
        "sphere2" => (2, Shape::Sphere),
        "sphere3" => (3, Shape::Sphere),
        _ => return Err(Error::UnknownCrossSection(name.to_string())),
    };
    let betti: Vec<usize> = match shape {
        Shape::Torus => (0..=n).map(|j| binomial(n, j)).collect(),
        Shape::Sphere => (0..=n).map(|j| usize::from(j == 0 || j == n)).collect(),
    };
    let spectrum = match shape {
        Shape::Torus => torus_spectrum(n, cutoff),
        Shape::Sphere => sphere_spectrum(n, cutoff),
    };
    let scalar_curvature = Some(match shape {
        Shape::Torus => Curvature::Zero,
        Shape::Sphere => Curvature::Positive,
    });
    Ok(CrossSection {
        name: name.to_string(),
        n,
        shape,
        harmonic: betti.clone(),
        betti,
        orientable: true,
        spin: true,
        scalar_curvature,
        cutoff,
        spectrum,
    })
}

impl CrossSection {
    pub fn euler_characteristic(&self) -> i64 {
        self.betti.iter().enumerate().map(|(j, &b)| if j % 2 == 0 { b as i64 } else { -(b as i64) }).sum()
    }

    pub fn default_spin(&self) -> SpinStructure {
        SpinStructure::Trivial
    }

    fn spin_shift(&self, spin: SpinStructure) -> Result<Vec<f64>> {
        if !self.spin {
            return Err(Error::Precondition(format!("{} carries no spin structure", self.name)));
        }
        let mut shift = vec![0.0; self.n];
        if spin == SpinStructure::Nontrivial {
            if self.shape == Shape::Sphere {
                return Err(Error::Precondition(format!("{} has a unique spin structure", self.name)));
            }
            shift[0] = 0.5;
        }
        Ok(shift)
    }

    /// `b = dim ker D_N` and `η(0)`.
    pub fn dirac(&self, spin: SpinStructure) -> Result<DiracData> {
        let shift = self.spin_shift(spin)?;
        let b = match self.shape {
            Shape::Sphere => 0,
            Shape::Torus if shift.iter().all(|&e| e == 0.0) => 1 << (self.n / 2),
            Shape::Torus => 0,
        };
        // Every catalog spectrum is symmetric under s -> -s.
        Ok(DiracData { b, eta: 0.0 })
    }

    /// Nonzero eigenvalues of `D_N` with `|s| <= s_max`, ascending, with multiplicities.
    pub fn dirac_spectrum(&self, spin: SpinStructure, s_max: f64) -> Result<Vec<(f64, usize)>> {
        let shift = self.spin_shift(spin)?;
        let rank = 1usize << (self.n / 2);
        let mut out: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
        let mut add = |s: f64, m: usize| {
            let key = (s * 1e9).round() as i64;
            out.entry(key).or_insert((s, 0)).1 += m;
        };
        match self.shape {
            Shape::Torus if self.n == 1 => {
                let r = (s_max / (2.0 * PI)).ceil() as i64 + 1;
                for k in -r..=r {
                    let s = 2.0 * PI * (k as f64 + shift[0]);
                    if s != 0.0 && s.abs() <= s_max {
                        add(s, 1);
                    }
                }
            }
            Shape::Torus => {
                let levels = lattice_levels(self.n, &shift, (s_max / (2.0 * PI)).powi(2));
                for (&l4, &count) in &levels {
                    if l4 == 0 {
                        continue;
                    }
                    let s = PI * (l4 as f64).sqrt();
                    add(s, count * rank / 2);
                    add(-s, count * rank / 2);
                }
            }
            Shape::Sphere => {
                let n = self.n as f64;
                let mut k = 0u64;
                while n / 2.0 + k as f64 <= s_max {
                    let m = rank * binomial(k as usize + self.n - 1, k as usize);
                    add(n / 2.0 + k as f64, m);
                    add(-(n / 2.0 + k as f64), m);
                    k += 1;
                }
            }
        }
        Ok(out.into_values().collect())
    }

    /// Eigenspaces of closed or coclosed `j`-forms.
    pub fn forms(&self, degree: usize, kind: FormType) -> impl Iterator<Item = &FormEigenspace> {
        self.spectrum.iter().filter(move |e| e.degree == degree && e.kind == kind)
    }

    /// `(level, λ)` of every eigenvalue present, ascending.
    pub fn levels(&self) -> Vec<(u64, f64)> {
        let mut m: BTreeMap<u64, f64> = BTreeMap::new();
        for e in &self.spectrum {
            m.insert(e.level, e.lambda);
        }
        m.into_iter().collect()
    }

    pub fn mult_at(&self, level: u64, degree: usize, kind: FormType) -> usize {
        self.spectrum
            .iter()
            .filter(|e| e.level == level && e.degree == degree && e.kind == kind)
            .map(|e| e.mult)
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let dirac = self.dirac(self.default_spin()).ok();
        serde_json::json!({
            "name": self.name,
            "n": self.n,
            "betti": self.betti,
            "dirac": dirac.map(|d| serde_json::json!({"b": d.b, "eta": d.eta})),
            "spectrum": self.spectrum,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Dirac,
    #[serde(rename = "gb")]
    GaussBonnet,
    Signature,
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirac" => Ok(Self::Dirac),
            "gb" | "gauss-bonnet" | "gauss_bonnet" => Ok(Self::GaussBonnet),
            "signature" => Ok(Self::Signature),
            _ => Err(Error::Config(format!("unknown operator `{s}`"))),
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dirac => "dirac",
            Self::GaussBonnet => "gb",
            Self::Signature => "signature",
        })
    }
}

/// Coupled pair of tilde channels: `∂x + (h'/h) diag(horn) + (1/h) [[0, coupling], [coupling, 0]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBlock {
    pub degrees: [usize; 2],
    pub lambda: f64,
    pub mult: usize,
    pub horn: [f64; 2],
    pub coupling: f64,
}

/// Bounded part `Ã` of the operator on the tilde channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    Pair(PairBlock),
    /// `∂x + (horn h' + s)/h` on a single channel.
    Scalar { degree: usize, s: f64, horn: f64, mult: usize },
}

impl Perturbation {
    /// Spectral norm of the `h'/h` coefficient.
    pub fn norm(&self) -> f64 {
        match self {
            Perturbation::Pair(p) => p.horn[0].abs().max(p.horn[1].abs()),
            Perturbation::Scalar { horn, .. } => horn.abs(),
        }
    }

    pub fn mult(&self) -> usize {
        match self {
            Perturbation::Pair(p) => p.mult,
            Perturbation::Scalar { mult, .. } => *mult,
        }
    }

    /// Smallest `|s|` among the channels this term couples.
    pub fn min_abs_s(&self) -> f64 {
        match self {
            Perturbation::Pair(p) => p.coupling.abs(),
            Perturbation::Scalar { s, .. } => s.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricOperatorModel {
    pub kind: OperatorKind,
    pub cross_section: String,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub spin: Option<SpinStructure>,
    pub t_channels: Vec<SpectralChannel>,
    pub tilde_channels: Vec<SpectralChannel>,
    pub perturbation: Vec<Perturbation>,
    pub blocks: Vec<SignatureBlock>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub section: Option<CrossSection>,
}

impl GeometricOperatorModel {
    /// Model with only the given channels; useful for synthetic studies.
    pub fn synthetic(alpha: f64, t_channels: Vec<SpectralChannel>, tilde_channels: Vec<SpectralChannel>) -> Self {
        Self {
            kind: OperatorKind::Dirac,
            cross_section: "synthetic".into(),
            n: 0,
            m: 1,
            alpha,
            spin: None,
            t_channels,
            tilde_channels,
            perturbation: Vec::new(),
            blocks: Vec::new(),
            notes: Vec::new(),
            section: None,
        }
    }

    pub fn has_perturbation(&self) -> bool {
        self.perturbation.iter().any(|p| p.norm() > 0.0)
    }

    pub fn channels(&self) -> impl Iterator<Item = &SpectralChannel> {
        self.t_channels.iter().chain(self.tilde_channels.iter())
    }

    /// Same model with a different singular exponent.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, ..self.clone() })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be >= 1, got {alpha}")));
    }
    Ok(())
}

fn half(num: i64) -> Rational64 {
    Rational64::new(num, 2)
}

fn sort_channels(v: &mut [SpectralChannel]) {
    v.sort_by(|a, b| a.s.total_cmp(&b.s).then_with(|| a.origin.cmp(&b.origin)));
}

fn base_model(kind: OperatorKind, section: &CrossSection, alpha: f64) -> Result<GeometricOperatorModel> {
    check_alpha(alpha)?;
    Ok(GeometricOperatorModel {
        kind,
        cross_section: section.name.clone(),
        n: section.n,
        m: section.n + 1,
        alpha,
        spin: None,
        t_channels: Vec::new(),
        tilde_channels: Vec::new(),
        perturbation: Vec::new(),
        blocks: Vec::new(),
        notes: Vec::new(),
        section: Some(section.clone()),
    })
}

/// `c_j = (-1)^j (j - n/2)`.
pub fn gb_coefficient(n: usize, j: usize) -> Rational64 {
    let c = half(2 * j as i64 - n as i64);
    if j % 2 == 0 {
        c
    } else {
        -c
    }
}

/// `n/2 - j`.
pub fn signature_coefficient(n: usize, j: usize) -> Rational64 {
    half(n as i64 - 2 * j as i64)
}

fn to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn push_pair(model: &mut GeometricOperatorModel, block: PairBlock, origin: Origin) -> Result<()> {
    let s = block.coupling.abs();
    for sign in [1.0, -1.0] {
        model.tilde_channels.push(SpectralChannel::tilde(sign * s, block.mult, origin.clone())?);
    }
    model.perturbation.push(Perturbation::Pair(block));
    Ok(())
}

pub fn gb_normal_form(section: &CrossSection, alpha: f64) -> Result<GeometricOperatorModel> {
    let mut model = base_model(OperatorKind::GaussBonnet, section, alpha)?;
    let n = section.n;
    for (j, &b) in section.harmonic.iter().enumerate() {
        if b > 0 {
            model.t_channels.push(SpectralChannel::t_exact(gb_coefficient(n, j), b, Origin::Harmonic { degree: j }));
        }
    }
    for j in 0..n {
        let cj = to_f64(gb_coefficient(n, j));
        let cj1 = to_f64(gb_coefficient(n, j + 1));
        for e in section.forms(j, FormType::Coclosed) {
            let block = PairBlock { degrees: [j, j + 1], lambda: e.lambda, mult: e.mult, horn: [cj, cj1], coupling: e.lambda.sqrt() };
            push_pair(&mut model, block, Origin::Pair { degree: j, level: e.level })?;
        }
    }
    sort_channels(&mut model.t_channels);
    sort_channels(&mut model.tilde_channels);
    Ok(model)
}

pub fn signature_normal_form(section: &CrossSection, alpha: f64) -> Result<GeometricOperatorModel> {
    let mut model = base_model(OperatorKind::Signature, section, alpha)?;
    let n = section.n;
    for (j, &b) in section.harmonic.iter().enumerate() {
        if b > 0 {
            model.t_channels.push(SpectralChannel::t_exact(signature_coefficient(n, j), b, Origin::Harmonic { degree: j }));
        }
    }
    if model.m % 4 != 0 {
        model.notes.push(format!("m = {} is not divisible by 4; tilde channels omitted", model.m));
    } else {
        let k = model.m / 4;
        let blocks = signature_block_decomposition(section, section.cutoff, k)?;
        for b in &blocks {
            let origin = Origin::Block { id: b.id, j: b.j, level: b.level };
            match b.coefficients {
                BlockMatrix::Pair { horn, coupling } => {
                    let pair = PairBlock { degrees: [b.degrees[0], b.degrees[1]], lambda: b.lambda, mult: b.mult, horn, coupling };
                    push_pair(&mut model, pair, origin)?;
                }
                BlockMatrix::Scalar { horn, s } => {
                    model.tilde_channels.push(SpectralChannel::tilde(s, b.mult, origin)?);
                    model.perturbation.push(Perturbation::Scalar { degree: b.degrees[0], s, horn, mult: b.mult });
                }
            }
        }
        model.blocks = blocks;
    }
    sort_channels(&mut model.t_channels);
    sort_channels(&mut model.tilde_channels);
    Ok(model)
}

pub fn dirac_normal_form(section: &CrossSection, alpha: f64, spin: SpinStructure) -> Result<GeometricOperatorModel> {
    let mut model = base_model(OperatorKind::Dirac, section, alpha)?;
    if model.m % 2 != 0 {
        return Err(Error::Precondition(format!(
            "the Dirac normal form needs even m = n + 1; {} gives m = {}",
            section.name, model.m
        )));
    }
    let data = section.dirac(spin)?;
    model.spin = Some(spin);
    if data.b > 0 {
        model.t_channels.push(SpectralChannel::t_exact(Rational64::from_integer(0), data.b, Origin::Spinor));
    }
    for (s, mult) in section.dirac_spectrum(spin, section.cutoff.sqrt())? {
        model.tilde_channels.push(SpectralChannel::tilde(s, mult, Origin::Spinor)?);
    }
    Ok(model)
}

/// Builds the model for any operator kind; the spin structure only matters for Dirac.
pub fn normal_form(kind: OperatorKind, section: &CrossSection, alpha: f64, spin: Option<SpinStructure>) -> Result<GeometricOperatorModel> {
    match kind {
        OperatorKind::Dirac => dirac_normal_form(section, alpha, spin.unwrap_or(section.default_spin())),
        OperatorKind::GaussBonnet => gb_normal_form(section, alpha),
        OperatorKind::Signature => signature_normal_form(section, alpha),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockMatrix {
    /// `(h'/h) diag(horn) + (1/h) [[0, coupling], [coupling, 0]]`.
    Pair { horn: [f64; 2], coupling: f64 },
    /// `(horn h' + s)/h`.
    Scalar { horn: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureBlock {
    pub id: u8,
    pub j: usize,
    pub lambda: f64,
    #[serde(skip)]
    pub level: u64,
    pub degrees: Vec<usize>,
    pub coefficients: BlockMatrix,
    pub mult: usize,
}

impl SignatureBlock {
    pub fn horn_matrix(&self) -> [[f64; 2]; 2] {
        match self.coefficients {
            BlockMatrix::Pair { horn, .. } => [[horn[0], 0.0], [0.0, horn[1]]],
            BlockMatrix::Scalar { horn, .. } => [[horn, 0.0], [0.0, 0.0]],
        }
    }

    pub fn inverse_matrix(&self) -> [[f64; 2]; 2] {
        match self.coefficients {
            BlockMatrix::Pair { coupling, .. } => [[0.0, coupling], [coupling, 0.0]],
            BlockMatrix::Scalar { s, .. } => [[s, 0.0], [0.0, 0.0]],
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let h = self.horn_matrix();
        let i = self.inverse_matrix();
        h[0][1] == h[1][0] && i[0][1] == i[1][0]
    }

    /// Dimension of the space the block acts on, counted with multiplicity.
    pub fn dimension(&self) -> usize {
        match self.coefficients {
            BlockMatrix::Pair { .. } => 2 * self.mult,
            BlockMatrix::Scalar { .. } => self.mult,
        }
    }

    /// Eigenvalues of the `1/h` part.
    pub fn inverse_eigenvalues(&self) -> Vec<f64> {
        match self.coefficients {
            BlockMatrix::Pair { coupling, .. } => vec![-coupling.abs(), coupling.abs()],
            BlockMatrix::Scalar { s, .. } => vec![s],
        }
    }
}

struct BlockRule {
    id: u8,
    /// `η1` degree and type, partner degree, given `(k, j)`.
    first: fn(usize, usize) -> i64,
    second: fn(usize, usize) -> i64,
    kind: FormType,
    j_max: fn(usize) -> i64,
    /// `true` when the off-diagonal carries `(-1)^(j+1)`.
    odd_sign: bool,
}

const BLOCK_RULES: [BlockRule; 4] = [
    BlockRule { id: 1, first: |k, j| 2 * k as i64 - 2 * j as i64 - 2, second: |k, j| 2 * k as i64 + 2 * j as i64 + 2, kind: FormType::Closed, j_max: |k| k as i64 - 2, odd_sign: true },
    BlockRule { id: 2, first: |k, j| 2 * k as i64 - 2 * j as i64 - 3, second: |k, j| 2 * k as i64 + 2 * j as i64 + 1, kind: FormType::Coclosed, j_max: |k| k as i64 - 2, odd_sign: true },
    BlockRule { id: 3, first: |k, j| 2 * k as i64 - 2 * j as i64 - 1, second: |k, j| 2 * k as i64 + 2 * j as i64 + 1, kind: FormType::Closed, j_max: |k| k as i64 - 1, odd_sign: false },
    BlockRule { id: 4, first: |k, j| 2 * k as i64 - 2 * j as i64 - 2, second: |k, j| 2 * k as i64 + 2 * j as i64, kind: FormType::Coclosed, j_max: |k| k as i64 - 1, odd_sign: false },
];

/// Expected `h'` coefficients of a pair block: `((2j+a), -(2j+b))`.
fn table_horn(id: u8, j: usize) -> [f64; 2] {
    let j = j as f64;
    match id {
        1 => [2.0 * j + 1.5, -(2.0 * j + 2.5)],
        2 => [2.0 * j + 2.5, -(2.0 * j + 1.5)],
        3 => [2.0 * j + 0.5, -(2.0 * j + 1.5)],
        _ => [2.0 * j + 1.5, -(2.0 * j + 0.5)],
    }
}

fn table_sign(rule_odd: bool, j: usize) -> f64 {
    let e = if rule_odd { j + 1 } else { j };
    if e % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Splits the non-harmonic forms of an `n = 4k - 1` dimensional cross-section
/// into the 2×2 and scalar blocks of the Signature operator.
pub fn signature_block_decomposition(section: &CrossSection, lambda_cutoff: f64, k: usize) -> Result<Vec<SignatureBlock>> {
    if k == 0 || section.n != 4 * k - 1 {
        return Err(Error::Precondition(format!("block decomposition needs n = 4k - 1; got n = {}, k = {k}", section.n)));
    }
    let mut blocks = Vec::new();
    for (level, lambda) in section.levels() {
        if lambda > lambda_cutoff {
            continue;
        }
        let root = lambda.sqrt();
        for rule in &BLOCK_RULES {
            let jm = (rule.j_max)(k);
            for j in 0..=jm {
                let j = j as usize;
                let d1 = (rule.first)(k, j);
                let d2 = (rule.second)(k, j);
                if d1 < 0 || d2 as usize > section.n {
                    continue;
                }
                let mult = section.mult_at(level, d1 as usize, rule.kind);
                if mult == 0 {
                    continue;
                }
                blocks.push(SignatureBlock {
                    id: rule.id,
                    j,
                    lambda,
                    level,
                    degrees: vec![d1 as usize, d2 as usize],
                    coefficients: BlockMatrix::Pair { horn: table_horn(rule.id, j), coupling: table_sign(rule.odd_sign, j) * root },
                    mult,
                });
            }
        }
        for (id, degree, kind, horn) in [(5u8, 2 * k, FormType::Closed, -0.5), (6u8, 2 * k - 1, FormType::Coclosed, 0.5)] {
            let mult = section.mult_at(level, degree, kind);
            if mult == 0 {
                continue;
            }
            if mult % 2 != 0 {
                return Err(Error::Precondition(format!("odd multiplicity {mult} cannot split into ± eigenspaces")));
            }
            for sign in [1.0, -1.0] {
                blocks.push(SignatureBlock {
                    id,
                    j: 0,
                    lambda,
                    level,
                    degrees: vec![degree],
                    coefficients: BlockMatrix::Scalar { horn, s: sign * root },
                    mult: mult / 2,
                });
            }
        }
    }
    if blocks.is_empty() {
        return Err(Error::InvalidParameter(format!("cutoff {lambda_cutoff} is below the first eigenvalue of {}", section.name)));
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAssemblyReport {
    pub pass: bool,
    pub checked: usize,
    pub mismatches: Vec<String>,
}

/// Compares each block with `∂x + (h'/h)S₁ + (1/h)S₂` and checks the dimension count per eigenvalue.
pub fn verify_block_assembly(blocks: &[SignatureBlock], model: &GeometricOperatorModel) -> BlockAssemblyReport {
    let mut mismatches = Vec::new();
    let half_n = model.n as f64 / 2.0;
    for b in blocks {
        let tag = format!("block {} (j={}, λ={:.6})", b.id, b.j, b.lambda);
        if !b.is_symmetric() {
            mismatches.push(format!("{tag}: not symmetric"));
        }
        if !(b.lambda > 0.0) {
            mismatches.push(format!("{tag}: overlaps the harmonic channels"));
        }
        let root = b.lambda.sqrt();
        match b.coefficients {
            BlockMatrix::Pair { horn, coupling } => {
                for (i, &d) in b.degrees.iter().enumerate() {
                    if (horn[i] - (half_n - d as f64)).abs() > 1e-12 {
                        mismatches.push(format!("{tag}: h' coefficient {} differs from S₁ = {}", horn[i], half_n - d as f64));
                    }
                }
                if (coupling.abs() - root).abs() > 1e-12 * root.max(1.0) {
                    mismatches.push(format!("{tag}: coupling {coupling} is not ±√λ"));
                }
                if let Some(rule) = BLOCK_RULES.iter().find(|r| r.id == b.id) {
                    if coupling.signum() != table_sign(rule.odd_sign, b.j) {
                        mismatches.push(format!("{tag}: coupling sign differs from the table"));
                    }
                }
            }
            BlockMatrix::Scalar { horn, s } => {
                let d = b.degrees[0] as f64;
                if (horn - (half_n - d)).abs() > 1e-12 {
                    mismatches.push(format!("{tag}: h' coefficient {horn} differs from S₁ = {}", half_n - d));
                }
                if (s.abs() - root).abs() > 1e-12 * root.max(1.0) {
                    mismatches.push(format!("{tag}: channel {s} is not ±√λ"));
                }
            }
        }
    }
    if let Some(section) = &model.section {
        let mut per_level: BTreeMap<u64, usize> = BTreeMap::new();
        for b in blocks {
            *per_level.entry(b.level).or_insert(0) += b.dimension();
        }
        for (level, dim) in per_level {
            let total: usize = section.spectrum.iter().filter(|e| e.level == level).map(|e| e.mult).sum();
            if dim != total {
                mismatches.push(format!("level {level}: blocks span {dim} dimensions, eigenforms span {total}"));
            }
        }
    }
    for c in &model.t_channels {
        if c.family != Family::T {
            mismatches.push(format!("harmonic channel {} is not in the T family", c.s));
        }
    }
    BlockAssemblyReport { pass: mismatches.is_empty(), checked: blocks.len(), mismatches }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cs(name: &str) -> CrossSection {
        catalog_cross_section(name, DEFAULT_CUTOFF).unwrap()
    }

    #[test]
    fn betti_numbers() {
        assert_eq!(cs("torus2").betti, vec![1, 2, 1]);
        assert_eq!(cs("circle").betti, vec![1, 1]);
        assert_eq!(cs("sphere3").betti, vec![1, 0, 0, 1]);
        assert_eq!(cs("torus3").betti, vec![1, 3, 3, 1]);
        for name in CATALOG {
            let c = cs(name);
            assert_eq!(c.harmonic, c.betti);
            for j in 0..=c.n {
                assert_eq!(c.betti[j], c.betti[c.n - j]);
            }
            if c.n % 2 == 1 {
                assert_eq!(c.euler_characteristic(), 0);
            }
        }
        assert!(matches!(catalog_cross_section("klein", 10.0), Err(Error::UnknownCrossSection(_))));
    }

    #[test]
    fn dirac_data() {
        let c = cs("circle");
        assert_eq!(c.dirac("nonbounding".parse().unwrap()).unwrap().b, 1);
        assert_eq!(c.dirac("bounding".parse().unwrap()).unwrap().b, 0);
        let t = cs("torus3");
        assert_eq!(t.dirac(SpinStructure::Trivial).unwrap(), DiracData { b: 2, eta: 0.0 });
        assert_eq!(t.dirac(SpinStructure::Nontrivial).unwrap().b, 0);
        assert_eq!(cs("sphere3").dirac(SpinStructure::Trivial).unwrap(), DiracData { b: 0, eta: 0.0 });
        assert!(cs("sphere3").dirac(SpinStructure::Nontrivial).is_err());
    }

    #[test]
    fn circle_bounding_spectrum_is_half_integral() {
        let c = cs("circle");
        let sp = c.dirac_spectrum(SpinStructure::Nontrivial, 20.0).unwrap();
        for (s, m) in sp {
            assert_eq!(m, 1);
            let k = s / (2.0 * PI) - 0.5;
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn torus3_dirac_spectrum() {
        let sp = cs("torus3").dirac_spectrum(SpinStructure::Trivial, 10.0).unwrap();
        assert_eq!(sp.len(), 4);
        assert!((sp[2].0 - 2.0 * PI).abs() < 1e-12 && sp[2].1 == 6);
        assert!((sp[3].0 - 2.0 * PI * 2f64.sqrt()).abs() < 1e-12 && sp[3].1 == 12);
        assert_eq!(sp[0].1, sp[3].1);
    }

    #[test]
    fn sphere_dirac_spectrum() {
        let sp = cs("sphere3").dirac_spectrum(SpinStructure::Trivial, 3.0).unwrap();
        assert_eq!(sp, vec![(-2.5, 6), (-1.5, 2), (1.5, 2), (2.5, 6)]);
    }

    /// Rank of `v ↦ k ∧ v` from `Λ^(j-1)` to `Λ^j`, computed numerically.
    fn wedge_rank(k: &[f64], j: usize) -> usize {
        let n = k.len();
        let subsets = |d: usize| -> Vec<Vec<usize>> {
            (0u32..(1 << n)).filter(|m| m.count_ones() as usize == d).map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect()).collect()
        };
        let src = subsets(j - 1);
        let dst = subsets(j);
        let mut a = DMatrix::<f64>::zeros(dst.len(), src.len());
        for (c, s) in src.iter().enumerate() {
            for i in 0..n {
                if s.contains(&i) {
                    continue;
                }
                let mut t = s.clone();
                t.push(i);
                t.sort();
                let sign = if s.iter().filter(|&&x| x < i).count() % 2 == 0 { 1.0 } else { -1.0 };
                let r = dst.iter().position(|d| *d == t).unwrap();
                a[(r, c)] += sign * k[i];
            }
        }
        a.svd(false, false).singular_values.iter().filter(|&&v| v > 1e-9).count()
    }

    #[test]
    fn torus_multiplicities_match_fourier_truncation() {
        for name in ["circle", "torus2", "torus3"] {
            let c = cs(name);
            let n = c.n;
            let r = 3i64;
            let mut counts: BTreeMap<(u64, usize, u8), usize> = BTreeMap::new();
            let total = (2 * r + 1).pow(n as u32);
            for idx in 0..total {
                let mut k = vec![0.0; n];
                let mut t = idx;
                for slot in k.iter_mut() {
                    *slot = (t % (2 * r + 1) - r) as f64;
                    t /= 2 * r + 1;
                }
                let m2: f64 = k.iter().map(|x| x * x).sum();
                if m2 == 0.0 || 4.0 * PI * PI * m2 > DEFAULT_CUTOFF {
                    continue;
                }
                for j in 1..=n {
                    let exact = wedge_rank(&k, j);
                    *counts.entry((m2 as u64, j, 0)).or_insert(0) += exact;
                    *counts.entry((m2 as u64, j - 1, 1)).or_insert(0) += exact;
                }
            }
            for e in &c.spectrum {
                let key = (e.level, e.degree, if e.kind == FormType::Closed { 0 } else { 1 });
                assert_eq!(counts.get(&key).copied().unwrap_or(0), e.mult, "{name} {e:?}");
            }
        }
    }

    #[test]
    fn sphere_functions_match_harmonic_polynomials() {
        for n in [2usize, 3] {
            let c = cs(&format!("sphere{n}"));
            for e in c.forms(0, FormType::Coclosed) {
                let k = ((-(n as f64 - 1.0) + ((n as f64 - 1.0).powi(2) + 4.0 * e.lambda).sqrt()) / 2.0).round() as usize;
                let dim = binomial(k + n, n) - if k >= 2 { binomial(k - 2 + n, n) } else { 0 };
                assert_eq!(e.mult, dim);
            }
        }
    }

    #[test]
    fn sphere3_one_forms() {
        // Coclosed 1-forms on S³: λ = (k+1)², multiplicity 2k(k+2).
        for k in 1..6u64 {
            assert_eq!(sphere_coclosed_mult(3, 1, k), (2 * k * (k + 2)) as usize);
        }
        // Hodge star pairs coclosed p-forms with coclosed (n-1-p)-forms.
        for k in 1..6 {
            assert_eq!(sphere_coclosed_mult(3, 0, k), sphere_coclosed_mult(3, 2, k));
        }
    }

    #[test]
    fn gb_torus2_channels() {
        let m = gb_normal_form(&cs("torus2"), 1.5).unwrap();
        let c: Vec<(f64, usize)> = m.t_channels.iter().map(|c| (c.s, c.mult)).collect();
        assert_eq!(c, vec![(-1.0, 1), (0.0, 2), (1.0, 1)]);
        assert!(m.tilde_channels.iter().all(|c| c.s != 0.0));
        assert!(m.has_perturbation());
    }

    #[test]
    fn gb_circle_channels() {
        let m = gb_normal_form(&cs("circle"), 2.0).unwrap();
        // c_j = (-1)^j (j - 1/2) gives -1/2 in both degrees.
        let c: Vec<f64> = m.t_channels.iter().map(|c| c.s).collect();
        assert_eq!(c, vec![-0.5, -0.5]);
    }

    #[test]
    fn signature_torus3_channels() {
        let m = signature_normal_form(&cs("torus3"), 2.0).unwrap();
        let c: Vec<(f64, usize)> = m.t_channels.iter().map(|c| (c.s, c.mult)).collect();
        assert_eq!(c, vec![(-1.5, 1), (-0.5, 3), (0.5, 3), (1.5, 1)]);
        let m = signature_normal_form(&cs("sphere3"), 2.0).unwrap();
        let c: Vec<f64> = m.t_channels.iter().map(|c| c.s).collect();
        assert_eq!(c, vec![-1.5, 1.5]);
        let m = signature_normal_form(&cs("torus2"), 2.0).unwrap();
        assert!(!m.notes.is_empty());
    }

    #[test]
    fn dirac_models() {
        let m = dirac_normal_form(&cs("torus3"), 2.0, SpinStructure::Trivial).unwrap();
        assert_eq!(m.t_channels.len(), 1);
        assert_eq!((m.t_channels[0].s, m.t_channels[0].mult), (0.0, 2));
        assert!(m.perturbation.is_empty());
        let m = dirac_normal_form(&cs("circle"), 2.0, SpinStructure::Nontrivial).unwrap();
        assert!(m.t_channels.is_empty());
        assert!(matches!(dirac_normal_form(&cs("sphere2"), 2.0, SpinStructure::Trivial), Err(Error::Precondition(_))));
    }

    #[test]
    fn block_table_arithmetic() {
        for j in 0..4 {
            let h = table_horn(1, j);
            assert_eq!(h[0] + h[1], -1.0);
        }
        let m = signature_normal_form(&cs("torus3"), 2.0).unwrap();
        assert!(!m.blocks.is_empty());
        for b in &m.blocks {
            assert!(b.is_symmetric());
            let ev = b.inverse_eigenvalues();
            assert!(ev.iter().all(|e| (e.abs() - b.lambda.sqrt()).abs() < 1e-12));
        }
    }

    #[test]
    fn block_assembly_passes() {
        for name in ["torus3", "sphere3"] {
            let m = signature_normal_form(&cs(name), 2.0).unwrap();
            let r = verify_block_assembly(&m.blocks, &m);
            assert!(r.pass, "{name}: {:?}", r.mismatches);
        }
        let m = signature_normal_form(&catalog_cross_section("torus3", 50.0).unwrap(), 2.0).unwrap();
        assert!(verify_block_assembly(&m.blocks, &m).pass);
        let empty = GeometricOperatorModel { blocks: vec![], ..m.clone() };
        assert!(verify_block_assembly(&[], &empty).pass);
    }

    #[test]
    fn corrupted_block_is_reported() {
        let m = signature_normal_form(&cs("torus3"), 2.0).unwrap();
        let mut blocks = m.blocks.clone();
        if let BlockMatrix::Pair { horn, .. } = &mut blocks[0].coefficients {
            horn[1] = -horn[1];
        }
        let r = verify_block_assembly(&blocks, &m);
        assert!(!r.pass);
        let mut blocks = m.blocks.clone();
        if let BlockMatrix::Pair { coupling, .. } = &mut blocks[0].coefficients {
            *coupling = -*coupling;
        }
        assert!(!verify_block_assembly(&blocks, &m).pass);
    }

    #[test]
    fn block_needs_matching_dimension() {
        assert!(signature_block_decomposition(&cs("torus2"), 100.0, 1).is_err());
        assert!(signature_block_decomposition(&cs("torus3"), 1.0, 1).is_err());
    }

    #[test]
    fn catalog_json_shape() {
        let v = cs("torus2").to_json();
        assert_eq!(v["n"], 2);
        assert_eq!(v["dirac"]["b"], 2);
        assert!(v["spectrum"][0]["lambda"].is_number());
        assert!(v["spectrum"][0]["type"].is_string());
    }
}
