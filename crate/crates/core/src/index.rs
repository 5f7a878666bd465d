//! Index formulas for the Dirac, Gauss-Bonnet and signature operators on
//! manifolds with horns or cones, L² Euler characteristics and collar Euler integrals.

use serde::Serialize;

use crate::channels::{ChannelCount, ExtensionSpec, ExtensionVariant};
use crate::error::{Error, Result};
use crate::geometry::{dirac_normal_form, CrossSection, Curvature, GeometricOperatorModel, SpinStructure};
use crate::quad::{gl8, logspace};
use crate::report::{fmt_float, to_csv};
use crate::warp::WarpProfile;

/// Distance from an integer tolerated in term sums.
pub const INTEGRALITY_TOL: f64 = 1e-6;
const COLLAR_PANELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IndexTerms {
    pub geometric_integral: f64,
    pub eta_term: f64,
    pub kernel_term: f64,
    pub extension_term: f64,
    pub betti_term: f64,
}

impl IndexTerms {
    pub fn sum(&self) -> f64 {
        self.geometric_integral + self.eta_term + self.kernel_term + self.extension_term + self.betti_term
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub operator: String,
    pub extension: String,
    pub index: i64,
    pub terms: IndexTerms,
    pub cross_section: String,
    pub alpha: Option<f64>,
    pub notes: Vec<String>,
}

/// Rounds the term sum, failing when it is not an integer.
fn integral_index(terms: &IndexTerms) -> Result<i64> {
    let v = terms.sum();
    let r = v.round();
    if !v.is_finite() || (v - r).abs() >= INTEGRALITY_TOL {
        return Err(Error::NotIntegral(v));
    }
    Ok(r as i64)
}

impl IndexReport {
    fn build(
        operator: &str,
        extension: String,
        terms: IndexTerms,
        section: &str,
        alpha: Option<f64>,
        notes: Vec<String>,
    ) -> Result<Self> {
        Ok(Self {
            operator: operator.into(),
            extension,
            index: integral_index(&terms)?,
            terms,
            cross_section: section.into(),
            alpha,
            notes,
        })
    }
}

fn require_even_spin(section: &CrossSection) -> Result<()> {
    if !section.spin {
        return Err(Error::Precondition(format!("{} is not spin", section.name)));
    }
    if (section.n + 1) % 2 != 0 {
        return Err(Error::Precondition(format!(
            "the Dirac formulas need even total dimension; {} gives m = {}",
            section.name,
            section.n + 1
        )));
    }
    Ok(())
}

/// Cone model: the channels `ker(D_N - s)` with `|s| < 1/2` form the quotient.
pub fn cone_dirac_model(section: &CrossSection, spin: SpinStructure) -> Result<GeometricOperatorModel> {
    require_even_spin(section)?;
    let mut model = dirac_normal_form(section, 1.0, spin)?;
    let (small, rest): (Vec<_>, Vec<_>) = model.tilde_channels.drain(..).partition(|c| c.s.abs() < 0.5);
    for mut c in small {
        c.family = crate::channels::Family::T;
        c.exact = None;
        model.t_channels.push(c);
    }
    model.tilde_channels = rest;
    Ok(model)
}

fn check_selection(w: &ExtensionSpec, available: &[ChannelCount]) -> Result<()> {
    for c in &w.selection {
        if c.s.abs() >= 0.5 {
            return Err(Error::ChannelRejected(format!("W uses s = {} with |s| >= 1/2", c.s)));
        }
        let avail = available.iter().filter(|a| (a.s - c.s).abs() < 1e-9).map(|a| a.mult).sum::<usize>();
        if c.mult > avail {
            return Err(Error::ChannelRejected(format!("W asks for {} modes at s = {}, only {avail} exist", c.mult, c.s)));
        }
    }
    Ok(())
}

fn quotient_of(model: &GeometricOperatorModel) -> Vec<ChannelCount> {
    crate::channels::quotient_dimension(model).channels
}

/// `ahat - (eta + b)/2 + dim W - Σ_{-1/2<s<0} dim E_s` for a metric cone.
pub fn cone_dirac_index(
    section: &CrossSection,
    spin: SpinStructure,
    w: &ExtensionSpec,
    ahat_integral: f64,
) -> Result<IndexReport> {
    if section.n < 3 {
        return Err(Error::Precondition(format!(
            "cone Dirac formula is evaluated for cross-sections of dimension >= 3; {} is formal only",
            section.name
        )));
    }
    let model = cone_dirac_model(section, spin)?;
    let q = quotient_of(&model);
    check_selection(w, &q)?;
    let d = section.dirac(spin)?;
    let negative: usize = q.iter().filter(|c| c.s < 0.0 && c.s > -0.5).map(|c| c.mult).sum();
    let terms = IndexTerms {
        geometric_integral: ahat_integral,
        eta_term: -0.5 * d.eta,
        kernel_term: -0.5 * d.b as f64,
        extension_term: w.dim() as f64 - negative as f64,
        betti_term: 0.0,
    };
    let mut notes = vec!["cone rule alpha = 1; the correction term (*) is taken to vanish".to_string()];
    if w.variant == ExtensionVariant::Delta {
        notes.push("DELTA extension: dim W cancels the negative small eigenvalues".into());
    }
    IndexReport::build("dirac", w.tag(), terms, &section.name, Some(1.0), notes)
}

/// `ahat - eta/2 + dim W - b/2` for a metric horn.
pub fn horn_dirac_index(
    section: &CrossSection,
    spin: SpinStructure,
    w: &ExtensionSpec,
    ahat_integral: f64,
    alpha: f64,
) -> Result<IndexReport> {
    require_even_spin(section)?;
    let model = dirac_normal_form(section, alpha, spin)?;
    check_selection(w, &quotient_of(&model))?;
    let d = section.dirac(spin)?;
    let terms = IndexTerms {
        geometric_integral: ahat_integral,
        eta_term: -0.5 * d.eta,
        kernel_term: -0.5 * d.b as f64,
        extension_term: w.dim() as f64,
        betti_term: 0.0,
    };
    let mut notes = Vec::new();
    if d.b == 0 {
        notes.push("ker D_N = 0: unique closed extension".into());
    }
    IndexReport::build("dirac", w.tag(), terms, &section.name, Some(alpha), notes)
}

/// `(Σ_{j<m/2} (-1)^j b_j, -Σ_{j>=m/2} (-1)^j b_j)` for the cone over `N`, `m = n + 1`.
pub fn l2_euler_characteristics(section: &CrossSection, m: usize) -> Result<(i64, i64)> {
    if m != section.n + 1 {
        return Err(Error::InvalidParameter(format!("m must be n + 1 = {}, got {m}", section.n + 1)));
    }
    let signed = |j: usize| if j % 2 == 0 { section.betti[j] as i64 } else { -(section.betti[j] as i64) };
    let half = m / 2 + m % 2;
    let lower = (0..half.min(section.betti.len())).map(signed).sum();
    let upper = -(half..section.betti.len()).map(signed).sum::<i64>();
    Ok((lower, upper))
}

/// `euler_integral + (χ₂(CN) + χ₂(CN, N))/2`, `m = n + 1` even.
pub fn horn_gb_index(section: &CrossSection, euler_integral: f64) -> Result<IndexReport> {
    let m = section.n + 1;
    if m % 2 != 0 {
        return Err(Error::Precondition(format!("Gauss-Bonnet formula needs even m, {} gives m = {m}", section.name)));
    }
    let (lo, hi) = l2_euler_characteristics(section, m)?;
    let terms = IndexTerms {
        geometric_integral: euler_integral,
        betti_term: 0.5 * (lo + hi) as f64,
        ..IndexTerms::default()
    };
    IndexReport::build("gb", "unique".into(), terms, &section.name, None, Vec::new())
}

/// `l_integral - eta_N` for `m = 4k`; a formula evaluator only.
pub fn horn_signature_index(section: &CrossSection, l_integral: f64, eta_n: f64) -> Result<IndexReport> {
    let m = section.n + 1;
    if m % 4 != 0 {
        return Err(Error::Precondition(format!("signature formula needs m = 4k, {} gives m = {m}", section.name)));
    }
    let terms = IndexTerms { geometric_integral: l_integral, eta_term: -eta_n, ..IndexTerms::default() };
    IndexReport::build(
        "signature",
        "unique".into(),
        terms,
        &section.name,
        None,
        vec!["formula evaluator; no independent verification of the signature theorem".into()],
    )
}

/// Collar Euler integral `(1/2π)∫∫ K dA = -∫_δ^ε h''` for `dx² + h² dθ²`, by quadrature.
pub fn warped_surface_euler_integral(h: &WarpProfile, delta: f64, eps: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < eps && eps <= h.eps()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < delta < eps <= {}, got delta={delta}, eps={eps}",
            h.eps()
        )));
    }
    let mut cuts = vec![delta];
    cuts.extend(h.breakpoints().into_iter().filter(|&b| b > delta && b < eps));
    cuts.push(eps);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let pts = logspace(w[0], w[1], COLLAR_PANELS + 1);
        for p in pts.windows(2) {
            total += gl8(p[0], p[1], |x| h.d2h(x));
        }
    }
    Ok(-total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryTerm {
    pub k: usize,
    /// `(h'(δ))^{2k+1}`
    pub inner: f64,
    /// `(h'(ε))^{2k+1}`
    pub outer: f64,
    /// `∫_N α_k`
    pub form_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EulerTermBreakdown {
    pub interior: f64,
    pub collar: f64,
    pub closed_form: f64,
    pub boundary_terms: Vec<BoundaryTerm>,
    pub residual: f64,
}

/// Surface collar with the single boundary term `k = 0`, `∫_N α_0 = -1`.
pub fn surface_euler_breakdown(h: &WarpProfile, delta: f64, eps: f64, interior: f64) -> Result<EulerTermBreakdown> {
    let collar = warped_surface_euler_integral(h, delta, eps)?;
    let term = BoundaryTerm { k: 0, inner: h.dh(delta), outer: h.dh(eps), form_integral: -1.0 };
    let closed_form = (term.outer - term.inner) * term.form_integral;
    Ok(EulerTermBreakdown {
        interior,
        collar,
        closed_form,
        boundary_terms: vec![term],
        residual: (collar - closed_form).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkipRow {
    pub beta: f64,
    pub euler_integral: f64,
    pub gb_index: i64,
}

/// `h_β'(0+)` for `h = x^β`: 1 on the cone, 0 on a horn.
fn slope_at_tip(beta: f64) -> Result<f64> {
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be >= 1, got {beta}")));
    }
    Ok(if beta == 1.0 { 1.0 } else { 0.0 })
}

/// Euler integral and Gauss-Bonnet index of a closed surface with `k` tips of exponent `β`.
pub fn skip_phenomenon_scan(base_chi: i64, k_horns: i64, betas: &[f64]) -> Result<Vec<SkipRow>> {
    let circle = crate::geometry::catalog_cross_section("circle", 1.0)?;
    let (lo, hi) = l2_euler_characteristics(&circle, 2)?;
    let per_horn = 0.5 * (lo + hi) as f64;
    betas
        .iter()
        .map(|&beta| {
            let defect = 1.0 - slope_at_tip(beta)?;
            let euler = base_chi as f64 - k_horns as f64 * defect;
            let terms = IndexTerms {
                geometric_integral: euler,
                betti_term: k_horns as f64 * defect * per_horn,
                ..IndexTerms::default()
            };
            Ok(SkipRow { beta, euler_integral: euler, gb_index: integral_index(&terms)? })
        })
        .collect()
}

pub fn skip_table_csv(rows: &[SkipRow]) -> Result<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![fmt_float(r.beta), fmt_float(r.euler_integral), r.gb_index.to_string()])
        .collect();
    to_csv(&["beta", "euler_integral", "gb_index"], &body)
}

/// `ind D_W - ind D_min`.
pub fn index_difference_law(_model: &GeometricOperatorModel, w: &ExtensionSpec) -> usize {
    w.dim()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessVerdict {
    pub unique: bool,
    pub via_curvature: bool,
    pub b: usize,
    pub note: String,
}

/// Positive scalar curvature forces `ker D_N = 0` and hence a unique closed extension.
pub fn lichnerowicz_uniqueness(section: &CrossSection, spin: SpinStructure) -> Result<UniquenessVerdict> {
    let curvature = section
        .scalar_curvature
        .ok_or_else(|| Error::Precondition(format!("{} has no scalar curvature metadata", section.name)))?;
    let b = section.dirac(spin)?.b;
    match curvature {
        Curvature::Positive if b != 0 => Err(Error::Precondition(format!(
            "{} has positive scalar curvature but ker D_N has dimension {b}",
            section.name
        ))),
        Curvature::Positive => Ok(UniquenessVerdict {
            unique: true,
            via_curvature: true,
            b,
            note: "positive scalar curvature: unique closed extension".into(),
        }),
        _ if b == 0 => Ok(UniquenessVerdict {
            unique: true,
            via_curvature: false,
            b,
            note: "unique, not via Lichnerowicz".into(),
        }),
        _ => Ok(UniquenessVerdict {
            unique: false,
            via_curvature: false,
            b,
            note: format!("ker D_N has dimension {b}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{adjoint_extension, quotient_dimension};
    use crate::geometry::{catalog_cross_section, gb_normal_form, DEFAULT_CUTOFF};
    use crate::warp::{make_power_horn, pure_power};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn section(name: &str) -> CrossSection {
        catalog_cross_section(name, DEFAULT_CUTOFF).unwrap()
    }

    #[test]
    fn cone_dirac_torus3() {
        let n = section("torus3");
        let model = cone_dirac_model(&n, SpinStructure::Trivial).unwrap();
        let delta = cone_dirac_index(&n, SpinStructure::Trivial, &ExtensionSpec::delta(&model), 0.0).unwrap();
        assert_eq!(delta.index, -1);
        let max = cone_dirac_index(&n, SpinStructure::Trivial, &ExtensionSpec::max(&model), 0.0).unwrap();
        assert_eq!(max.index, 1);
    }

    #[test]
    fn cone_dirac_rejects_odd_m() {
        let n = section("circle");
        let r = cone_dirac_index(&n, SpinStructure::Nontrivial, &ExtensionSpec::min(), 0.0);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn cone_rejects_large_channels() {
        let n = section("torus3");
        let w = ExtensionSpec {
            variant: ExtensionVariant::Subspace,
            selection: vec![ChannelCount { s: 0.7, mult: 1 }],
        };
        assert!(matches!(
            cone_dirac_index(&n, SpinStructure::Trivial, &w, 0.0),
            Err(Error::ChannelRejected(_))
        ));
    }

    #[test]
    fn horn_dirac_torus3() {
        let n = section("torus3");
        let model = dirac_normal_form(&n, 2.0, SpinStructure::Trivial).unwrap();
        let max = horn_dirac_index(&n, SpinStructure::Trivial, &ExtensionSpec::max(&model), 0.0, 2.0).unwrap();
        let min = horn_dirac_index(&n, SpinStructure::Trivial, &ExtensionSpec::min(), 0.0, 2.0).unwrap();
        assert_eq!((max.index, min.index), (1, -1));
        let nt = horn_dirac_index(&n, SpinStructure::Nontrivial, &ExtensionSpec::min(), 0.0, 2.0).unwrap();
        assert_eq!(nt.index, 0);
    }

    #[test]
    fn dirac_max_minus_min_is_b() {
        for (name, spin) in [
            ("torus3", SpinStructure::Trivial),
            ("torus3", SpinStructure::Nontrivial),
            ("circle", SpinStructure::Trivial),
            ("circle", SpinStructure::Nontrivial),
        ] {
            let n = section(name);
            let model = dirac_normal_form(&n, 1.5, spin).unwrap();
            let ahat = 0.5 * n.dirac(spin).unwrap().b as f64;
            let max = horn_dirac_index(&n, spin, &ExtensionSpec::max(&model), ahat, 1.5).unwrap();
            let min = horn_dirac_index(&n, spin, &ExtensionSpec::min(), ahat, 1.5).unwrap();
            assert_eq!((max.index - min.index) as usize, n.dirac(spin).unwrap().b, "{name}");
        }
    }

    #[test]
    fn gb_examples() {
        assert_eq!(horn_gb_index(&section("circle"), 1.0).unwrap().index, 2);
        assert_eq!(horn_gb_index(&section("sphere3"), 0.0).unwrap().index, 1);
        assert_eq!(horn_gb_index(&section("sphere3"), 3.0).unwrap().index, 4);
        assert!(horn_gb_index(&section("torus2"), 0.0).is_err());
        let mut zero = section("sphere3");
        zero.betti = vec![0; 4];
        assert_eq!(horn_gb_index(&zero, 0.0).unwrap().index, 0);
    }

    #[test]
    fn signature_examples() {
        let n = section("sphere3");
        assert_eq!(horn_signature_index(&n, 0.0, 0.0).unwrap().index, 0);
        assert_eq!(horn_signature_index(&n, 1.25, 0.25).unwrap().index, 1);
        assert!(matches!(horn_signature_index(&n, 0.3, 0.0), Err(Error::NotIntegral(_))));
        assert!(horn_signature_index(&section("torus2"), 0.0, 0.0).is_err());
    }

    #[test]
    fn l2_euler_examples() {
        assert_eq!(l2_euler_characteristics(&section("sphere3"), 4).unwrap(), (1, 1));
        assert_eq!(l2_euler_characteristics(&section("circle"), 2).unwrap(), (1, 1));
        let mut zero = section("torus3");
        zero.betti = vec![0; 4];
        assert_eq!(l2_euler_characteristics(&zero, 4).unwrap(), (0, 0));
    }

    #[test]
    fn l2_euler_difference_is_chi_of_odd_sections() {
        for name in ["circle", "torus3", "sphere3"] {
            let n = section(name);
            let (lo, hi) = l2_euler_characteristics(&n, n.n + 1).unwrap();
            assert_eq!(lo - hi, n.euler_characteristic());
            assert_eq!(n.euler_characteristic(), 0);
        }
    }

    #[test]
    fn collar_integrals() {
        let h = pure_power(2.0, 1.0).unwrap();
        let v = warped_surface_euler_integral(&h, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(v, -0.8, epsilon = 1e-12);
        let lin = pure_power(1.0, 1.0).unwrap();
        assert_eq!(warped_surface_euler_integral(&lin, 0.1, 0.5).unwrap(), 0.0);
        let h15 = pure_power(1.5, 1.0).unwrap();
        let near = warped_surface_euler_integral(&h15, 1e-10, 0.5).unwrap();
        assert_abs_diff_eq!(near, -h15.dh(0.5), epsilon = 2e-5);
    }

    #[test]
    fn collar_on_blended_horn_matches_closed_form() {
        let h = make_power_horn(2.5, 0.2, 1.0, false).unwrap();
        let b = surface_euler_breakdown(&h, 0.05, 0.95, 0.0).unwrap();
        assert!(b.residual < 1e-8, "{}", b.residual);
    }

    #[test]
    fn skip_examples() {
        let rows = skip_phenomenon_scan(2, 1, &[1.0, 1.5, 2.0]).unwrap();
        let euler: Vec<f64> = rows.iter().map(|r| r.euler_integral).collect();
        assert_eq!(euler, vec![2.0, 1.0, 1.0]);
        assert!(rows.iter().all(|r| r.gb_index == 2));
        let none = skip_phenomenon_scan(2, 0, &[1.0, 3.0]).unwrap();
        assert!(none.iter().all(|r| r.euler_integral == 2.0));
        assert_eq!(skip_phenomenon_scan(2, 2, &[2.0]).unwrap()[0].euler_integral, 0.0);
        assert!(skip_phenomenon_scan(2, 1, &[0.5]).is_err());
        let teardrop = &skip_phenomenon_scan(2, 1, &[1.5]).unwrap()[0];
        assert_eq!(teardrop.gb_index, horn_gb_index(&section("circle"), teardrop.euler_integral).unwrap().index);
    }

    #[test]
    fn difference_law() {
        let t3 = section("torus3");
        let dirac = dirac_normal_form(&t3, 2.0, SpinStructure::Trivial).unwrap();
        assert_eq!(index_difference_law(&dirac, &ExtensionSpec::min()), 0);
        assert_eq!(index_difference_law(&dirac, &ExtensionSpec::max(&dirac)), 2);
        let gb = gb_normal_form(&section("torus2"), 2.0).unwrap();
        assert_eq!(index_difference_law(&gb, &ExtensionSpec::delta(&gb)), 0);
        let w = ExtensionSpec::max(&dirac);
        let v = adjoint_extension(&w, &dirac);
        assert_eq!(w.dim() + v.dim(), quotient_dimension(&dirac).dim);
    }

    #[test]
    fn lichnerowicz_cases() {
        let s3 = lichnerowicz_uniqueness(&section("sphere3"), SpinStructure::Trivial).unwrap();
        assert!(s3.unique && s3.via_curvature);
        let t3 = lichnerowicz_uniqueness(&section("torus3"), SpinStructure::Trivial).unwrap();
        assert!(!t3.unique);
        let t3n = lichnerowicz_uniqueness(&section("torus3"), SpinStructure::Nontrivial).unwrap();
        assert!(t3n.unique && !t3n.via_curvature);
        assert_eq!(t3n.note, "unique, not via Lichnerowicz");
        let mut bare = section("torus3");
        bare.scalar_curvature = None;
        assert!(lichnerowicz_uniqueness(&bare, SpinStructure::Trivial).is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = horn_gb_index(&section("circle"), 1.0).unwrap();
        let v = crate::report::to_value(&r).unwrap();
        for key in ["operator", "extension", "index", "terms", "cross_section", "alpha"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn gb_index_independent_of_alpha(alpha in 1.01f64..4.0, euler in -3i64..4) {
            let n = section("sphere3");
            let model = crate::geometry::gb_normal_form(&n, alpha).unwrap();
            prop_assert_eq!(quotient_dimension(&model).dim, 0);
            prop_assert_eq!(horn_gb_index(&n, euler as f64).unwrap().index, 1 + euler);
        }

        #[test]
        fn collar_closed_form(alpha in 1.0f64..3.0, delta in 0.01f64..0.3, span in 0.1f64..0.6) {
            let h = pure_power(alpha, 1.0).unwrap();
            let eps = delta + span;
            let b = surface_euler_breakdown(&h, delta, eps, 0.0).unwrap();
            prop_assert!(b.residual < 1e-8);
        }

        #[test]
        fn skip_index_constant(chi in -4i64..3, k in 0i64..4, beta in 1.0f64..3.0) {
            let rows = skip_phenomenon_scan(chi, k, &[1.0, beta]).unwrap();
            prop_assert_eq!(rows[0].gb_index, rows[1].gb_index);
        }
    }
}
