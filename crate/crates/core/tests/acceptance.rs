//! Acceptance criteria 1-8, one PASS/FAIL line each. Pass `--strict` to
//! also require three accepted random fields for every suite measure.

use std::sync::Arc;
use std::time::{Duration, Instant};
use weighted_sobolev::cantor::CantorVariant;
use weighted_sobolev::discretization::{assemble_mass, build_space, project_function};
use weighted_sobolev::expr::Expr;
use weighted_sobolev::fibers::{am_distribution, local_tangent_field, tangent_sweep, DistributionField, FiberParams, SweepSchedule};
use weighted_sobolev::harness::{self, library, SpecContext, Status, TensorContext, Thresholds};
use weighted_sobolev::measure::MeasureSpec;
use weighted_sobolev::sobolev::{cheeger_energy, heat_flow, minimal_relaxed_gradient};
use weighted_sobolev::subspace::{grassmann_distance, unit, Subspace};

// criterion 1
const FULL_DIM_MASS: f64 = 1.0;
const LINEAR_MWUG_TOL: f64 = 1e-3;
const LINEAR_ENERGY_TOL: f64 = 1e-3;
const FULL_RUNTIME: Duration = Duration::from_secs(60);
// criterion 2
const SEGMENT_GR_TOL: f64 = 1e-2;
const SEGMENT_MASS: f64 = 0.95;
const SEGMENT_MWUG_TOL: f64 = 5e-2;
const SEGMENT_RUNTIME: Duration = Duration::from_secs(120);
// criterion 3
const FAT_DIM0_MASS: f64 = 0.90;
const FAT_MWUG_TOL: f64 = 5e-2;
// criterion 4
const TERNARY_DIM0_MASS: f64 = 0.90;
const SEGMENT_DROP_MASS: f64 = 0.95;
// criterion 5
const TENSOR_GR_TOL: f64 = 0.1;
const TENSOR_MASS: f64 = 0.95;
const TENSOR_REL_TOL: f64 = 0.10;
// criterion 7
const HEAT_L2_TOL: f64 = 3e-2;
const HEAT_MASS_TOL: f64 = 1e-9;
const HEAT_RUNTIME: Duration = Duration::from_secs(30);
// criterion 8
const VERIFY_SEED: u64 = 7;
const MIN_ACCEPTED_FIELDS: usize = 3;
const LEIBNIZ_FACTOR: f64 = 10.0;

fn line(n: u32, ok: bool, detail: &str) {
    println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn stable_fraction(field: &DistributionField, pred: impl Fn(usize) -> bool) -> f64 {
    field.stable_fraction(|c, _| pred(c))
}

fn segment_at(theta_deg: f64) -> (MeasureSpec, [f64; 2]) {
    let t = theta_deg.to_radians();
    let dir = [t.cos(), t.sin()];
    // unit segment centred in the unit square
    let a = [0.5 - 0.5 * dir[0], 0.5 - 0.5 * dir[1]];
    let b = [0.5 + 0.5 * dir[0], 0.5 + 0.5 * dir[1]];
    (library::segment(a, b), dir)
}

fn criterion_1_full_fiber_lebesgue_square() -> bool {
    let start = Instant::now();
    let spec = library::lebesgue(2);
    let sweep = tangent_sweep(&spec, &SweepSchedule::new(vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0])).unwrap();
    let t = sweep.last().unwrap();
    let space = &t.space;
    let full = stable_fraction(t, |c| t.cells[c].dim() == 2);
    let f = project_function(space, &Expr::parse("x1").unwrap()).unwrap();
    let sol = minimal_relaxed_gradient(space, t, &f).unwrap();
    let mwug_err = sol.mwug.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let energy = cheeger_energy(space, t, &f).unwrap();
    let elapsed = start.elapsed();
    let ok = full >= FULL_DIM_MASS
        && mwug_err <= LINEAR_MWUG_TOL
        && (energy - 0.5).abs() <= LINEAR_ENERGY_TOL
        && elapsed <= FULL_RUNTIME;
    line(
        1,
        ok,
        &format!("dim 2 mass {full:.4}, max |mwug - 1| {mwug_err:.2e}, energy {energy:.6}, {:.1} s", elapsed.as_secs_f64()),
    );
    ok
}

fn criterion_2_segment_oracle() -> bool {
    let start = Instant::now();
    let mut ok = true;
    let mut details = Vec::new();
    for theta in [0.0, 30.0, 90.0] {
        let (spec, dir) = segment_at(theta);
        let sweep = tangent_sweep(&spec, &SweepSchedule::new(vec![1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0])).unwrap();
        let t = sweep.last().unwrap();
        let line_space = Subspace::span(2, &[[dir[0], dir[1], 0.0]], 1e-12);
        let frac = stable_fraction(t, |c| {
            t.cells[c].dim() == 1 && grassmann_distance(&t.cells[c].subspace, &line_space) <= SEGMENT_GR_TOL
        });
        let f = project_function(&t.space, &Expr::parse("x1 + x2").unwrap()).unwrap();
        let mwug = minimal_relaxed_gradient(&t.space, t, &f).unwrap().mwug;
        let oracle = (dir[0] + dir[1]).abs();
        let mwug_ok = stable_fraction(t, |c| (mwug[c] - oracle).abs() <= SEGMENT_MWUG_TOL);
        let worst = (0..t.cells.len()).filter(|&c| t.cells[c].stable).map(|c| (mwug[c] - oracle).abs()).fold(0.0, f64::max);
        ok &= frac >= SEGMENT_MASS && mwug_ok == 1.0;
        details.push(format!("{theta} deg: fiber mass {frac:.4}, max mwug error {worst:.2e}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed <= SEGMENT_RUNTIME;
    line(2, ok, &format!("{}; {:.1} s", details.join("; "), elapsed.as_secs_f64()));
    ok
}

fn criterion_3_fat_cantor_gap() -> bool {
    let spec = library::cantor(CantorVariant::SmithVolterra, 24);
    let scales: Vec<f64> = (6..=12).map(|k| 2f64.powi(-k)).collect();
    let sweep = tangent_sweep(&spec, &SweepSchedule::new(scales)).unwrap();
    let fractions: Vec<f64> = sweep.iter().map(|t| stable_fraction(t, |c| t.cells[c].dim() == 0)).collect();
    let tail = &fractions[fractions.len() - 3..];
    let monotone = tail.windows(2).all(|w| w[1] >= w[0]);
    let t = sweep.last().unwrap();
    let f = project_function(&t.space, &Expr::parse("x1").unwrap()).unwrap();
    let mwug = minimal_relaxed_gradient(&t.space, t, &f).unwrap().mwug;
    let small = stable_fraction(t, |c| t.cells[c].dim() != 0 || mwug[c] <= FAT_MWUG_TOL);
    let v = am_distribution(t.space.clone(), 0.05).unwrap();
    let v_full = v.cells.iter().all(|c| c.dim() == 1);
    let ok = monotone && tail[2] >= FAT_DIM0_MASS && small == 1.0 && v_full;
    line(3, ok, &format!("dim 0 mass over last scales {tail:?}, mwug small on dim-0 mass: {}, V = R: {v_full}", small == 1.0));
    ok
}

fn criterion_4_dimension_drop() -> bool {
    let th = Thresholds::default();
    let ternary = SpecContext::new(
        library::cantor(CantorVariant::Ternary, 30),
        SweepSchedule::new((4..=6).map(|k| 3f64.powi(-k)).collect()),
    )
    .unwrap();
    let rec = harness::verify_dim_drop(&ternary, &th);
    let t = ternary.t();
    let dim0 = stable_fraction(t, |c| t.cells[c].dim() == 0);
    let (seg, _) = segment_at(0.0);
    let seg = SpecContext::new(seg, SweepSchedule::new(vec![1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0])).unwrap();
    let seg_rec = harness::verify_dim_drop(&seg, &th);
    let s = seg.t();
    let dim1 = stable_fraction(s, |c| s.cells[c].dim() == 1);
    let ok = rec.status == Status::Pass && dim0 >= TERNARY_DIM0_MASS && seg_rec.status == Status::Pass && dim1 >= SEGMENT_DROP_MASS;
    line(4, ok, &format!("ternary dim 0 mass {dim0:.4} ({:?}), segment dim 1 mass {dim1:.4} ({:?})", rec.status, seg_rec.status));
    ok
}

fn criterion_5_tensorisation() -> bool {
    let tc = TensorContext::new(
        library::lebesgue(1),
        library::cantor(CantorVariant::Ternary, 30),
        SweepSchedule::new(vec![1.0 / 27.0, 1.0 / 81.0]),
    )
    .unwrap();
    let t = tc.product.t();
    let e1 = Subspace { n: 2, basis: vec![unit(0)] };
    let frac = stable_fraction(t, |c| grassmann_distance(&t.cells[c].subspace, &e1) <= TENSOR_GR_TOL);
    let space = tc.product.space();
    let f = project_function(space, &Expr::parse("x1 + x2").unwrap()).unwrap();
    let mwug = minimal_relaxed_gradient(space, t, &f).unwrap().mwug;
    let worst = (0..t.cells.len()).filter(|&c| t.cells[c].stable).map(|c| (mwug[c] - 1.0).abs()).fold(0.0, f64::max);
    let ok = frac >= TENSOR_MASS && worst <= TENSOR_REL_TOL;
    line(5, ok, &format!("d_Gr(T, R x 0) <= 0.1 on mass {frac:.4}, max |Df| relative error {worst:.2e}"));
    ok
}

fn criterion_6_route_agreement() -> bool {
    let suite = harness::default_suite();
    let th = Thresholds::default();
    let mut ok = true;
    let mut details = Vec::new();
    for case in &suite.cases {
        let ctx = SpecContext::new(case.spec.clone(), case.schedule.clone()).unwrap();
        let rec = harness::verify_route_agreement(&ctx, &th, &suite.family);
        ok &= rec.status == Status::Pass;
        details.push(format!("{} {:.2e}", case.spec.name, rec.measured));
    }
    line(6, ok, &format!("worst error / tolerance: {}", details.join(", ")));
    ok
}

fn criterion_7_heat_flow_oracle() -> bool {
    let start = Instant::now();
    let spec = library::lebesgue(1);
    let space = Arc::new(build_space(&spec, 2f64.powi(-8)).unwrap());
    let t = local_tangent_field(space.clone(), &FiberParams::for_spec(&spec)).unwrap();
    let f0 = project_function(&space, &Expr::parse("cos(pi*x1)").unwrap()).unwrap();
    let flow = heat_flow(&space, &t, &f0, 0.1, 64).unwrap();
    let exact = project_function(&space, &Expr::parse("exp(-pi^2*0.1)*cos(pi*x1)").unwrap()).unwrap();
    let m = assemble_mass(&space).matrix;
    let diff: Vec<f64> = flow.coeffs.iter().zip(&exact).map(|(a, b)| a - b).collect();
    let rel = (m.quad_form(&diff) / m.quad_form(&exact)).sqrt();
    // ∫cos(πx) = 0, so mass drift is measured against the L² size of f₀
    let scale = m.quad_form(&f0).sqrt();
    let mass0 = flow.history[0].mass;
    let drift = flow.history.iter().map(|s| (s.mass - mass0).abs()).fold(0.0, f64::max) / scale;
    let decreasing = flow.history.windows(2).all(|w| w[1].energy < w[0].energy);
    let elapsed = start.elapsed();
    let ok = rel <= HEAT_L2_TOL && drift <= HEAT_MASS_TOL && decreasing && elapsed <= HEAT_RUNTIME;
    line(
        7,
        ok,
        &format!("L2 relative error {rel:.3e}, mass drift {drift:.1e}, energy decreasing: {decreasing}, {:.1} s", elapsed.as_secs_f64()),
    );
    ok
}

/// Criterion 8. Invariant records must all pass, with exit status 0; the
/// per-measure count of accepted random fields is reported alongside.
/// Returns (invariants pass, every measure has enough accepted fields).
fn criterion_8_invariant_suite() -> (bool, bool) {
    let mut suite = harness::default_suite();
    suite.seed = VERIFY_SEED;
    let report = harness::run_suite(&suite);
    let failing: Vec<String> = report
        .records
        .iter()
        .filter(|r| matches!(r.status, Status::Fail | Status::Error))
        .map(|r| format!("{}/{}", r.spec, r.name))
        .collect();
    let leibniz_ok = report
        .records
        .iter()
        .filter(|r| r.name == "leibniz" && r.status == Status::Pass)
        .all(|r| r.measured <= LEIBNIZ_FACTOR * suite.thresholds.div_tol);
    let short: Vec<String> = report
        .records
        .iter()
        .filter(|r| r.name == "divergence_tangency" && r.status != Status::Pass)
        .map(|r| format!("{} ({})", r.spec, r.detail))
        .collect();
    let invariants = failing.is_empty() && leibniz_ok && report.passed();
    line(
        8,
        invariants && short.is_empty(),
        &format!(
            "invariants pass: {invariants}, exit status 0: {}, failing: {failing:?}; measures with fewer than {MIN_ACCEPTED_FIELDS} accepted random fields: {short:?}",
            report.passed()
        ),
    );
    (invariants, short.is_empty())
}

/// Runs every criterion. Criterion 8's accepted-field count cannot hold for
/// measures whose tangent fibers are {0}; it fails the run only with `--strict`.
fn main() {
    let strict = std::env::args().any(|a| a == "--strict");
    let results = [
        criterion_1_full_fiber_lebesgue_square(),
        criterion_2_segment_oracle(),
        criterion_3_fat_cantor_gap(),
        criterion_4_dimension_drop(),
        criterion_5_tensorisation(),
        criterion_6_route_agreement(),
        criterion_7_heat_flow_oracle(),
    ];
    let (invariants, counts) = criterion_8_invariant_suite();
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    if !failed.is_empty() || !invariants || (strict && !counts) {
        eprintln!("acceptance failed: criteria {failed:?}, invariants {invariants}, accepted field counts {counts}");
        std::process::exit(1);
    }
}
