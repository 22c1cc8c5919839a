//! Stratified Radon measures on R^n (n <= 3) with exact box masses.

use crate::cantor::{CantorSet, CantorVariant, GAUSS2};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{clip_polygon, clip_segment, polygon_rule, AaBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratumKind {
    AcDensity,
    Simplex,
    Cantor,
    PointMass,
    Product,
}

/// One building block of a stratified measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Stratum {
    /// Density w.r.t. Lebesgue measure on an axis-aligned box.
    AcDensity { region: AaBox, density: Expr },
    /// Density w.r.t. k-dimensional Hausdorff measure on a k-simplex.
    Simplex { vertices: Vec<Vec<f64>>, density: Expr },
    /// Cantor-type measure on the line through `anchor` parallel to `axis`.
    Cantor { set: CantorSet, axis: usize, anchor: Vec<f64> },
    PointMass { point: Vec<f64>, weight: f64 },
    /// `a ⊗ b`, with `a` on the first `a.ambient_dim()` coordinates.
    Product { a: Box<Stratum>, b: Box<Stratum> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LebesgueClass {
    AbsolutelyContinuous,
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LebesgueLabel {
    pub class: LebesgueClass,
    pub rationale: String,
}

impl Stratum {
    pub fn kind(&self) -> StratumKind {
        match self {
            Stratum::AcDensity { .. } => StratumKind::AcDensity,
            Stratum::Simplex { .. } => StratumKind::Simplex,
            Stratum::Cantor { .. } => StratumKind::Cantor,
            Stratum::PointMass { .. } => StratumKind::PointMass,
            Stratum::Product { .. } => StratumKind::Product,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Stratum::AcDensity { region, .. } => region.dim(),
            Stratum::Simplex { vertices, .. } => vertices[0].len(),
            Stratum::Cantor { anchor, .. } => anchor.len(),
            Stratum::PointMass { point, .. } => point.len(),
            Stratum::Product { a, b } => a.ambient_dim() + b.ambient_dim(),
        }
    }

    /// Intrinsic (integer) dimension; ternary Cantor sets count as 0.
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Stratum::AcDensity { region, .. } => region.dim(),
            Stratum::Simplex { vertices, .. } => vertices.len() - 1,
            Stratum::Cantor { set, .. } => match set.variant {
                CantorVariant::Ternary => 0,
                CantorVariant::SmithVolterra => 1,
            },
            Stratum::PointMass { .. } => 0,
            Stratum::Product { a, b } => a.intrinsic_dim() + b.intrinsic_dim(),
        }
    }

    pub fn support_box(&self) -> AaBox {
        match self {
            Stratum::AcDensity { region, .. } => region.clone(),
            Stratum::Simplex { vertices, .. } => AaBox::bounding(vertices),
            Stratum::Cantor { set, axis, anchor } => {
                let mut lo = anchor.clone();
                let mut hi = anchor.clone();
                lo[*axis] = set.lo;
                hi[*axis] = set.hi;
                AaBox::new(lo, hi)
            }
            Stratum::PointMass { point, .. } => AaBox::new(point.clone(), point.clone()),
            Stratum::Product { a, b } => a.support_box().product(&b.support_box()),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_in_box(&self.support_box())
    }

    /// Exact μ-mass of the closed box `bx`.
    pub fn mass_in_box(&self, bx: &AaBox) -> f64 {
        match self {
            Stratum::AcDensity { region, density } => {
                let cut = region.intersect(bx);
                if cut.is_empty() {
                    return 0.0;
                }
                tensor_gauss(&cut).iter().map(|(x, w)| w * density.eval(x)).sum()
            }
            Stratum::Simplex { vertices, density } => simplex_pieces(vertices, bx)
                .into_iter()
                .map(|(x, w)| w * density.eval(&x))
                .sum(),
            Stratum::Cantor { set, axis, anchor } => {
                for k in 0..anchor.len() {
                    if k != *axis && (anchor[k] < bx.lo[k] || anchor[k] > bx.hi[k]) {
                        return 0.0;
                    }
                }
                set.mass_in(bx.lo[*axis], bx.hi[*axis])
            }
            Stratum::PointMass { point, weight } => {
                if bx.contains_point(point, 0.0) {
                    *weight
                } else {
                    0.0
                }
            }
            Stratum::Product { a, b } => {
                let na = a.ambient_dim();
                let ma = a.mass_in_box(&bx.project(0..na));
                if ma == 0.0 {
                    return 0.0;
                }
                ma * b.mass_in_box(&bx.project(na..bx.dim()))
            }
        }
    }

    pub fn lebesgue_label(&self) -> LebesgueLabel {
        use LebesgueClass::*;
        let (class, rationale) = match self {
            Stratum::AcDensity { .. } => (AbsolutelyContinuous, "density w.r.t. ambient Lebesgue measure".to_string()),
            Stratum::Simplex { vertices, .. } => {
                let k = vertices.len() - 1;
                let n = vertices[0].len();
                if k == n {
                    (AbsolutelyContinuous, format!("full-dimensional {k}-simplex"))
                } else {
                    (Singular, format!("{k}-dimensional Hausdorff measure in R^{n}"))
                }
            }
            Stratum::Cantor { set, anchor, .. } => match (set.variant, anchor.len()) {
                (CantorVariant::SmithVolterra, 1) => {
                    (AbsolutelyContinuous, "Lebesgue measure restricted to a fat Cantor set".to_string())
                }
                (CantorVariant::SmithVolterra, n) => (Singular, format!("supported on a line in R^{n}")),
                (CantorVariant::Ternary, _) => (Singular, "supported on a Lebesgue-null Cantor set".to_string()),
            },
            Stratum::PointMass { .. } => (Singular, "Dirac mass".to_string()),
            Stratum::Product { a, b } => {
                let (la, lb) = (a.lebesgue_label(), b.lebesgue_label());
                if la.class == AbsolutelyContinuous && lb.class == AbsolutelyContinuous {
                    (AbsolutelyContinuous, "product of absolutely continuous factors".to_string())
                } else {
                    (Singular, format!("product with a singular factor ({} / {})", la.rationale, lb.rationale))
                }
            }
        };
        LebesgueLabel { class, rationale }
    }

    /// Coordinate `c` if the whole support lies in the hyperplane `x_axis = c`.
    pub fn flat_coordinate(&self, axis: usize) -> Option<f64> {
        let sb = self.support_box();
        if sb.hi[axis] - sb.lo[axis] <= 1e-14 * (1.0 + sb.lo[axis].abs()) {
            Some(sb.lo[axis])
        } else {
            None
        }
    }

    /// Permute coordinates (`new[perm[k]] = old[k]`) and translate by `shift`.
    pub fn moved(&self, perm: &[usize], shift: &[f64]) -> Result<Stratum> {
        let mv = |p: &[f64]| {
            let mut q = vec![0.0; p.len()];
            for k in 0..p.len() {
                q[perm[k]] = p[k] + shift[perm[k]];
            }
            q
        };
        Ok(match self {
            Stratum::AcDensity { region, density } => {
                if !density_is_constant(density) {
                    return Err(Error::Validation("only constant densities can be moved".into()));
                }
                Stratum::AcDensity { region: AaBox::new(mv(&region.lo), mv(&region.hi)), density: density.clone() }
            }
            Stratum::Simplex { vertices, density } => {
                if !density_is_constant(density) {
                    return Err(Error::Validation("only constant densities can be moved".into()));
                }
                Stratum::Simplex { vertices: vertices.iter().map(|v| mv(v)).collect(), density: density.clone() }
            }
            Stratum::Cantor { set, axis, anchor } => {
                let s = shift[perm[*axis]];
                let moved_set = CantorSet::new(set.variant, set.lo + s, set.hi + s, set.generations, set.weight);
                Stratum::Cantor { set: moved_set, axis: perm[*axis], anchor: mv(anchor) }
            }
            Stratum::PointMass { point, weight } => Stratum::PointMass { point: mv(point), weight: *weight },
            Stratum::Product { .. } => {
                return Err(Error::Validation("product strata cannot be moved coordinate-wise".into()))
            }
        })
    }
}

fn density_is_constant(e: &Expr) -> bool {
    e.polynomial_degree() == Some(0)
}

/// Tensor two-point Gauss nodes on a box (exact for degree 3 per axis).
pub(crate) fn tensor_gauss(bx: &AaBox) -> Vec<(Vec<f64>, f64)> {
    let n = bx.dim();
    let vol = bx.volume();
    let w = vol / (1 << n) as f64;
    (0..(1usize << n))
        .map(|bits| {
            let x = (0..n)
                .map(|k| {
                    let g = GAUSS2[(bits >> k) & 1];
                    bx.lo[k] + g * (bx.hi[k] - bx.lo[k])
                })
                .collect();
            (x, w)
        })
        .collect()
}

/// Quadrature nodes (Hausdorff-measure weights, density not applied) of
/// `simplex ∩ box`, exact for polynomials of degree <= 3.
pub(crate) fn simplex_pieces(vertices: &[Vec<f64>], bx: &AaBox) -> Vec<(Vec<f64>, f64)> {
    match vertices.len() {
        1 => {
            if bx.contains_point(&vertices[0], 0.0) {
                vec![(vertices[0].clone(), 1.0)]
            } else {
                vec![]
            }
        }
        2 => {
            let (a, b) = (&vertices[0], &vertices[1]);
            let Some((t0, t1)) = clip_segment(a, b, bx) else { return vec![] };
            let len: f64 = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt() * (t1 - t0);
            GAUSS2
                .iter()
                .map(|g| {
                    let t = t0 + g * (t1 - t0);
                    (a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect(), 0.5 * len)
                })
                .collect()
        }
        3 => polygon_rule(&clip_polygon(vertices, bx)),
        _ => vec![],
    }
}

/// A validated stratified measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpec {
    pub name: String,
    pub ambient_dim: usize,
    pub strata: Vec<Stratum>,
    pub bbox: AaBox,
    pub provenance: Option<(String, String)>,
    /// Default Cantor truncation depth used when a config omits it.
    pub cantor_default_generations: u32,
}

pub const DEFAULT_CANTOR_GENERATIONS: u32 = 30;

impl MeasureSpec {
    pub fn new(name: impl Into<String>, bbox: AaBox, strata: Vec<Stratum>) -> Result<Self> {
        let spec = MeasureSpec {
            name: name.into(),
            ambient_dim: bbox.dim(),
            strata,
            bbox,
            provenance: None,
            cantor_default_generations: DEFAULT_CANTOR_GENERATIONS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ambient_dim;
        if !(1..=3).contains(&n) {
            return Err(Error::Dimension(format!("ambient dimension {n} not in 1..=3")));
        }
        if self.strata.is_empty() {
            return Err(Error::Validation("measure has no strata".into()));
        }
        if self.bbox.is_empty() {
            return Err(Error::Validation("bounding box is empty".into()));
        }
        let scale = self.bbox.lo.iter().zip(&self.bbox.hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        for (i, s) in self.strata.iter().enumerate() {
            if s.ambient_dim() != n {
                return Err(Error::Dimension(format!("stratum {i} lives in R^{}, expected R^{n}", s.ambient_dim())));
            }
            validate_stratum(s, scale).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("stratum {i}: {m}")),
                other => other,
            })?;
            if !self.bbox.contains_box(&s.support_box(), 1e-12 * scale) {
                return Err(Error::Validation(format!("stratum {i} leaves the bounding box")));
            }
        }
        let total = self.total_mass();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Validation(format!("total mass {total} is not in (0, inf)")));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.strata.iter().map(Stratum::total_mass).sum()
    }

    pub fn cell_mass(&self, bx: &AaBox) -> f64 {
        self.strata.iter().map(|s| s.mass_in_box(bx)).sum()
    }

    pub fn lebesgue_labels(&self) -> Vec<LebesgueLabel> {
        self.strata.iter().map(Stratum::lebesgue_label).collect()
    }

    pub fn has_singular_part(&self) -> bool {
        self.lebesgue_labels().iter().any(|l| l.class == LebesgueClass::Singular)
    }

    /// Worst-case cell-mass error from truncating Cantor constructions.
    pub fn truncation_bound(&self) -> f64 {
        fn walk(s: &Stratum) -> f64 {
            match s {
                Stratum::Cantor { set, .. } => set.truncation_bound(),
                Stratum::Product { a, b } => walk(a) * b.total_mass() + walk(b) * a.total_mass(),
                _ => 0.0,
            }
        }
        self.strata.iter().map(walk).sum()
    }

    pub fn moved(&self, perm: &[usize], shift: &[f64]) -> Result<MeasureSpec> {
        let strata = self.strata.iter().map(|s| s.moved(perm, shift)).collect::<Result<Vec<_>>>()?;
        let mv = |p: &[f64]| {
            let mut q = vec![0.0; p.len()];
            for k in 0..p.len() {
                q[perm[k]] = p[k] + shift[perm[k]];
            }
            q
        };
        let mut out = MeasureSpec::new(
            format!("{}-moved", self.name),
            AaBox::new(mv(&self.bbox.lo), mv(&self.bbox.hi)),
            strata,
        )?;
        out.cantor_default_generations = self.cantor_default_generations;
        Ok(out)
    }
}

fn validate_stratum(s: &Stratum, scale: f64) -> Result<()> {
    match s {
        Stratum::AcDensity { region, density } => {
            if region.is_empty() {
                return Err(Error::Validation("density box is empty".into()));
            }
            check_density(density, region.dim())?;
            let corners: Vec<Vec<f64>> = (0..(1usize << region.dim()))
                .map(|bits| (0..region.dim()).map(|k| if bits >> k & 1 == 1 { region.hi[k] } else { region.lo[k] }).collect())
                .collect();
            check_nonnegative(density, &corners, 8)
        }
        Stratum::Simplex { vertices, density } => {
            let k = vertices.len().checked_sub(1).ok_or_else(|| Error::Validation("simplex without vertices".into()))?;
            let n = vertices[0].len();
            if vertices.iter().any(|v| v.len() != n) {
                return Err(Error::Validation("simplex vertices have mixed dimensions".into()));
            }
            if k > n || k > 2 {
                return Err(Error::Validation(format!("{k}-simplices in R^{n} are not supported")));
            }
            if k >= 1 && simplex_volume(vertices) <= 1e-12 * scale.powi(k as i32) {
                return Err(Error::Validation("simplex vertices are affinely dependent".into()));
            }
            check_density(density, n)?;
            check_nonnegative(density, vertices, 8)
        }
        Stratum::Cantor { set, axis, anchor } => {
            if set.generations < 1 {
                return Err(Error::Validation("Cantor generations must be >= 1".into()));
            }
            if set.hi <= set.lo || *axis >= anchor.len() {
                return Err(Error::Validation("bad Cantor interval or axis".into()));
            }
            if set.weight < 0.0 {
                return Err(Error::Validation("negative density".into()));
            }
            Ok(())
        }
        Stratum::PointMass { weight, .. } => {
            if *weight < 0.0 {
                Err(Error::Validation("negative point mass".into()))
            } else {
                Ok(())
            }
        }
        Stratum::Product { a, b } => {
            validate_stratum(a, scale)?;
            validate_stratum(b, scale)
        }
    }
}

fn check_density(d: &Expr, n: usize) -> Result<()> {
    match d.polynomial_degree() {
        Some(deg) if deg <= 2 => {}
        _ => return Err(Error::Validation(format!("density `{d}` must be a polynomial of degree <= 2"))),
    }
    if d.max_var() > n {
        return Err(Error::Validation(format!("density `{d}` uses variables beyond x{n}")));
    }
    Ok(())
}

/// Density sign check on a barycentric lattice of the convex hull of `pts`.
fn check_nonnegative(d: &Expr, pts: &[Vec<f64>], m: usize) -> Result<()> {
    let n = pts[0].len();
    let probe = |x: &[f64]| -> Result<()> {
        let v = d.try_eval(x)?;
        if v < -1e-12 {
            Err(Error::Validation(format!("negative density {v:.3e} at {x:?}")))
        } else {
            Ok(())
        }
    };
    for i in 0..pts.len() {
        for j in i..pts.len() {
            for s in 0..=m {
                let t = s as f64 / m as f64;
                let x: Vec<f64> = (0..n).map(|k| (1.0 - t) * pts[i][k] + t * pts[j][k]).collect();
                probe(&x)?;
            }
        }
    }
    let centroid: Vec<f64> = (0..n).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64).collect();
    probe(&centroid)
}

fn simplex_volume(vertices: &[Vec<f64>]) -> f64 {
    let k = vertices.len() - 1;
    let n = vertices[0].len();
    let edges: Vec<Vec<f64>> = (1..=k).map(|i| (0..n).map(|c| vertices[i][c] - vertices[0][c]).collect()).collect();
    let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| edges[i].iter().zip(&edges[j]).map(|(a, b)| a * b).sum::<f64>());
    gram.determinant().max(0.0).sqrt()
}

/// `a ⊗ b`: all pairwise products of strata.
pub fn product_measure(a: &MeasureSpec, b: &MeasureSpec) -> Result<MeasureSpec> {
    let n = a.ambient_dim + b.ambient_dim;
    if n > 3 {
        return Err(Error::Dimension(format!("product lives in R^{n}, at most R^3 is supported")));
    }
    let strata = a
        .strata
        .iter()
        .flat_map(|sa| b.strata.iter().map(move |sb| Stratum::Product { a: Box::new(sa.clone()), b: Box::new(sb.clone()) }))
        .collect();
    let mut spec = MeasureSpec::new(format!("{}x{}", a.name, b.name), a.bbox.product(&b.bbox), strata)?;
    spec.provenance = Some((a.name.clone(), b.name.clone()));
    spec.cantor_default_generations = a.cantor_default_generations.max(b.cantor_default_generations);
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_segment() -> MeasureSpec {
        MeasureSpec::new(
            "seg",
            AaBox::new(vec![0.0, -0.5], vec![1.0, 0.5]),
            vec![Stratum::Simplex { vertices: vec![vec![0.0, 0.0], vec![1.0, 0.0]], density: Expr::constant(1.0) }],
        )
        .unwrap()
    }

    fn lebesgue_interval() -> MeasureSpec {
        let bx = AaBox::new(vec![0.0], vec![1.0]);
        MeasureSpec::new("leb1", bx.clone(), vec![Stratum::AcDensity { region: bx, density: Expr::constant(1.0) }]).unwrap()
    }

    fn ternary() -> MeasureSpec {
        MeasureSpec::new(
            "ternary",
            AaBox::new(vec![0.0], vec![1.0]),
            vec![Stratum::Cantor {
                set: CantorSet::new(CantorVariant::Ternary, 0.0, 1.0, 20, 1.0),
                axis: 0,
                anchor: vec![0.0],
            }],
        )
        .unwrap()
    }

    #[test]
    fn segment_half_box() {
        let h = 0.1;
        let m = unit_segment().cell_mass(&AaBox::new(vec![0.0, -h], vec![0.5, h]));
        assert!((m - 0.5).abs() < 1e-14);
    }

    #[test]
    fn product_factorises() {
        let p = product_measure(&lebesgue_interval(), &ternary()).unwrap();
        assert_eq!(p.ambient_dim, 2);
        let m = p.cell_mass(&AaBox::new(vec![0.0, 0.0], vec![1.0, 1.0 / 3.0]));
        assert!((m - 0.5).abs() < 1e-12);
        let sq = product_measure(&lebesgue_interval(), &lebesgue_interval()).unwrap();
        assert!((sq.total_mass() - 1.0).abs() < 1e-14);
        let cube = product_measure(&sq, &sq);
        assert!(matches!(cube, Err(Error::Dimension(_))));
    }

    #[test]
    fn labels() {
        assert_eq!(unit_segment().lebesgue_labels()[0].class, LebesgueClass::Singular);
        assert_eq!(ternary().lebesgue_labels()[0].class, LebesgueClass::Singular);
        let svc = MeasureSpec::new(
            "svc",
            AaBox::new(vec![0.0], vec![1.0]),
            vec![Stratum::Cantor {
                set: CantorSet::new(CantorVariant::SmithVolterra, 0.0, 1.0, 10, 1.0),
                axis: 0,
                anchor: vec![0.0],
            }],
        )
        .unwrap();
        assert_eq!(svc.lebesgue_labels()[0].class, LebesgueClass::AbsolutelyContinuous);
        let p = product_measure(&lebesgue_interval(), &ternary()).unwrap();
        assert_eq!(p.lebesgue_labels()[0].class, LebesgueClass::Singular);
        let sq = product_measure(&lebesgue_interval(), &lebesgue_interval()).unwrap();
        assert_eq!(sq.lebesgue_labels()[0].class, LebesgueClass::AbsolutelyContinuous);
    }

    #[test]
    fn degenerate_simplex_rejected() {
        let r = MeasureSpec::new(
            "bad",
            AaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            vec![Stratum::Simplex { vertices: vec![vec![0.5, 0.5], vec![0.5, 0.5]], density: Expr::constant(1.0) }],
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn negative_density_rejected() {
        let bx = AaBox::new(vec![0.0], vec![1.0]);
        let r = MeasureSpec::new(
            "neg",
            bx.clone(),
            vec![Stratum::AcDensity { region: bx, density: Expr::parse("x1 - 0.5").unwrap() }],
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn quadratic_density_on_triangle() {
        let bx = AaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let spec = MeasureSpec::new(
            "tri",
            bx,
            vec![Stratum::Simplex {
                vertices: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
                density: Expr::parse("x1*x1").unwrap(),
            }],
        )
        .unwrap();
        // ∫_T x² = 1/12
        assert!((spec.total_mass() - 1.0 / 12.0).abs() < 1e-14);
        let left = spec.cell_mass(&AaBox::new(vec![0.0, 0.0], vec![0.5, 1.0]));
        let right = spec.cell_mass(&AaBox::new(vec![0.5, 0.0], vec![1.0, 1.0]));
        assert!((left + right - 1.0 / 12.0).abs() < 1e-14);
        // ∫_0^{1/2} x²(1-x) dx = 1/24 - 1/64
        assert!((left - (1.0 / 24.0 - 1.0 / 64.0)).abs() < 1e-14);
    }
}
