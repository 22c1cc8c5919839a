use proptest::prelude::*;
use std::sync::{Arc, OnceLock};
use weighted_sobolev::cantor::{CantorSet, CantorVariant};
use weighted_sobolev::discretization::{assemble_mass, assemble_stiffness, build_space, GridSpace};
use weighted_sobolev::fibers::{local_tangent_field, DistributionField, FiberParams};
use weighted_sobolev::harness::library;
use weighted_sobolev::sobolev::relaxed_stiffness;
use weighted_sobolev::sparse::CsrMatrix;
use weighted_sobolev::subspace::{grassmann_distance, norm, Subspace, Vector};

struct Forms {
    m: CsrMatrix,
    g: CsrMatrix,
    gt: CsrMatrix,
}

fn forms_for(space: GridSpace) -> Forms {
    let space = Arc::new(space);
    let t: DistributionField = local_tangent_field(space.clone(), &FiberParams::for_spec(&space.spec)).unwrap();
    Forms { m: assemble_mass(&space).matrix, g: assemble_stiffness(&space).matrix, gt: relaxed_stiffness(&space, &t) }
}

fn segment_forms() -> &'static Forms {
    static F: OnceLock<Forms> = OnceLock::new();
    F.get_or_init(|| forms_for(build_space(&library::segment([0.1, 0.2], [0.8, 0.7]), 1.0 / 16.0).unwrap()))
}

fn cross_forms() -> &'static Forms {
    static F: OnceLock<Forms> = OnceLock::new();
    F.get_or_init(|| forms_for(build_space(&library::cross(), 1.0 / 16.0).unwrap()))
}

fn vector3() -> impl Strategy<Value = Vector> {
    prop::array::uniform3(-1.0..1.0f64)
}

fn subspace3() -> impl Strategy<Value = Subspace> {
    prop::collection::vec(vector3(), 0..4).prop_map(|vs| Subspace::span(3, &vs, 1e-6))
}

fn coeffs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len)
}

fn sub(a: &Vector, b: &Vector) -> Vector {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent_and_contractive(s in subspace3(), v in vector3(), w in vector3()) {
        let p = s.project(&v);
        prop_assert!(norm(&sub(&s.project(&p), &p)) <= 1e-12);
        prop_assert!(norm(&sub(&s.project(&v), &s.project(&w))) <= norm(&sub(&v, &w)) + 1e-12);
    }

    #[test]
    fn complement_is_an_involution(s in subspace3(), v in vector3()) {
        let c = s.complement();
        prop_assert_eq!(c.dim() + s.dim(), 3);
        prop_assert!(grassmann_distance(&c.complement(), &s) <= 1e-10);
        let split = s.project(&v);
        let rest = c.project(&v);
        prop_assert!(norm(&sub(&v, &[split[0] + rest[0], split[1] + rest[1], split[2] + rest[2]])) <= 1e-12);
    }

    #[test]
    fn grassmann_distance_is_a_metric(a in subspace3(), b in subspace3()) {
        let d = grassmann_distance(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - grassmann_distance(&b, &a)).abs() <= 1e-12);
        prop_assert!(grassmann_distance(&a, &a) <= 1e-12);
    }

    #[test]
    fn cheeger_form_obeys_parallelogram_rule(a in coeffs(segment_forms().m.n), b in coeffs(segment_forms().m.n)) {
        let f = segment_forms();
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let lhs = f.gt.quad_form(&s) + f.gt.quad_form(&d);
        let rhs = 2.0 * f.gt.quad_form(&a) + 2.0 * f.gt.quad_form(&b);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn forms_are_psd_and_relaxation_lowers_energy(c in coeffs(cross_forms().m.n)) {
        let f = cross_forms();
        let unit = f.g.trace() / f.g.n as f64;
        let c2: f64 = c.iter().map(|v| v * v).sum();
        prop_assert!(f.m.quad_form(&c) >= -1e-14 * c2);
        prop_assert!(f.g.quad_form(&c) >= -1e-12 * unit * c2);
        let e = f.gt.quad_form(&c);
        prop_assert!(e >= -1e-12 * unit * c2);
        prop_assert!(e <= f.g.quad_form(&c) + 1e-12 * unit * c2);
    }

    #[test]
    fn cantor_mass_is_additive(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64, fat in any::<bool>()) {
        let variant = if fat { CantorVariant::SmithVolterra } else { CantorVariant::Ternary };
        let set = CantorSet::new(variant, 0.0, 1.0, 18, 1.0);
        let mut p = [a, b, c];
        p.sort_by(f64::total_cmp);
        let whole = set.mass_in(p[0], p[2]);
        let parts = set.mass_in(p[0], p[1]) + set.mass_in(p[1], p[2]);
        prop_assert!((whole - parts).abs() <= 1e-12);
        prop_assert!(whole <= set.total_mass() + 1e-12);
    }

    #[test]
    fn scale_notations_agree(k in 1i32..14) {
        let h = 2f64.powi(-k);
        let a = weighted_sobolev::config::parse_scale(&format!("2^-{k}")).unwrap();
        let b = weighted_sobolev::config::parse_scale(&format!("1/{}", 1u64 << k)).unwrap();
        prop_assert_eq!(a, h);
        prop_assert_eq!(b, h);
    }
}
