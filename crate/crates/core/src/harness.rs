//! Quantified structure checks over configured measures.

use crate::discretization::{assemble_stiffness, project_function, GridSpace, Point};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fibers::{am_distribution, tangent_sweep, DistributionField, FiberCell, FiberParams, SweepSchedule};
use crate::measure::{product_measure, LebesgueClass, MeasureSpec};
use crate::sobolev::{
    check_divergence, leibniz_check, minimal_relaxed_gradient, projected_gradients, relaxed_stiffness,
    DIV_NORM_FACTOR,
};
use crate::subspace::{grassmann_distance, norm, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    Skipped,
    Error,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Skipped => "SKIPPED",
            Status::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub anchor: String,
    pub spec: String,
    pub scales: Vec<f64>,
    pub measured: f64,
    pub threshold: f64,
    pub status: Status,
    pub unstable_mass_fraction: f64,
    pub detail: String,
    pub offending_cells: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub containment: f64,
    pub containment_mass: f64,
    pub dim_drop_mass: f64,
    pub tensor_distance: f64,
    pub tensor_mass: f64,
    pub tensor_relative: f64,
    pub lip_tol: f64,
    pub lip_mass: f64,
    pub tangency_mass: f64,
    pub unstable_limit: f64,
    pub div_tol: f64,
    pub route_abs: f64,
    pub min_accepted: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            containment: 1e-6,
            containment_mass: 0.99,
            dim_drop_mass: 0.90,
            tensor_distance: 0.1,
            tensor_mass: 0.95,
            tensor_relative: 0.10,
            lip_tol: 5e-2,
            lip_mass: 0.99,
            tangency_mass: 0.95,
            unstable_limit: 0.10,
            div_tol: 1e-6,
            route_abs: 5e-2,
            min_accepted: 3,
        }
    }
}

pub fn default_family() -> Vec<Expr> {
    ["1", "x1", "x2", "x1 + x2", "x1^2", "cos(pi*x1)"].iter().map(|s| Expr::parse(s).expect("family")).collect()
}

/// Everything the checks need about one measure, computed once.
pub struct SpecContext {
    pub spec: MeasureSpec,
    pub schedule: SweepSchedule,
    pub params: FiberParams,
    pub sweep: Vec<DistributionField>,
    pub v: std::result::Result<DistributionField, String>,
}

impl SpecContext {
    pub fn new(spec: MeasureSpec, schedule: SweepSchedule) -> Result<Self> {
        let params = schedule.params_for(&spec);
        let sweep = tangent_sweep(&spec, &schedule)?;
        let finest = sweep.last().expect("nonempty");
        let v = am_distribution(finest.space.clone(), params.svd_tol).map_err(|e| e.to_string());
        Ok(SpecContext { spec, schedule, params, sweep, v })
    }

    pub fn t(&self) -> &DistributionField {
        self.sweep.last().expect("nonempty")
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.t().space
    }

    pub fn unstable(&self) -> f64 {
        self.t().meta.unstable_mass_fraction
    }

    /// Family members expressible in this ambient dimension.
    pub fn family<'a>(&self, family: &'a [Expr]) -> Vec<&'a Expr> {
        family.iter().filter(|f| f.max_var() <= self.spec.ambient_dim).collect()
    }

    fn record(&self, name: &str, anchor: &str) -> CheckRecord {
        CheckRecord {
            name: name.into(),
            anchor: anchor.into(),
            spec: self.spec.name.clone(),
            scales: self.schedule.scales.clone(),
            measured: f64::NAN,
            threshold: f64::NAN,
            status: Status::Skipped,
            unstable_mass_fraction: self.unstable(),
            detail: String::new(),
            offending_cells: vec![],
        }
    }
}

fn mass_fraction(space: &GridSpace, field: &DistributionField, weight: impl Fn(usize) -> f64, pred: impl Fn(usize, &FiberCell) -> bool) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut hit = 0.0;
    let mut bad = Vec::new();
    for (c, f) in field.cells.iter().enumerate() {
        if !f.stable {
            continue;
        }
        let m = weight(c);
        total += m;
        if pred(c, f) {
            hit += m;
        } else if m > 0.0 {
            bad.push(c);
        }
    }
    let _ = space;
    (if total > 0.0 { hit / total } else { f64::NAN }, bad)
}

fn finish(mut r: CheckRecord, measured: f64, threshold: f64, pass: bool, bad: Vec<usize>) -> CheckRecord {
    r.measured = measured;
    r.threshold = threshold;
    r.status = if pass { Status::Pass } else { Status::Fail };
    if !pass {
        r.offending_cells = bad.into_iter().take(10).collect();
    }
    r
}

fn too_unstable(ctx: &SpecContext, th: &Thresholds, mut r: CheckRecord) -> Option<CheckRecord> {
    if ctx.unstable() > th.unstable_limit {
        r.status = Status::Inconclusive;
        r.detail = format!("unstable mass fraction {:.3} exceeds {:.2}", ctx.unstable(), th.unstable_limit);
        return Some(r);
    }
    None
}

fn with_v<'a>(ctx: &'a SpecContext, r: &mut CheckRecord) -> Option<&'a DistributionField> {
    match &ctx.v {
        Ok(v) => Some(v),
        Err(e) => {
            r.status = Status::Error;
            r.detail = e.clone();
            None
        }
    }
}

pub fn verify_t_leq_v(ctx: &SpecContext, th: &Thresholds) -> CheckRecord {
    let mut r = ctx.record("T_leq_V", "tangent fibers lie inside the decomposability bundle");
    let Some(v) = with_v(ctx, &mut r) else { return r };
    if let Some(r) = too_unstable(ctx, th, r.clone()) {
        return r;
    }
    let space = ctx.space();
    let (frac, bad) = mass_fraction(space, ctx.t(), |c| space.cells[c].mass, |c, f| {
        f.subspace.containment_residual(&v.cells[c].subspace) <= th.containment
    });
    r.detail = format!("containment residual <= {:.0e} on {:.4} of stable mass", th.containment, frac);
    finish(r, frac, th.containment_mass, frac >= th.containment_mass, bad)
}

/// Fraction of stable singular mass with dim T < n, for one field of the sweep.
fn singular_drop_fraction(spec: &MeasureSpec, field: &DistributionField) -> f64 {
    let space = &field.space;
    let n = space.n();
    let singular: Vec<bool> = spec.lebesgue_labels().iter().map(|l| l.class == LebesgueClass::Singular).collect();
    let weight = |c: usize| (0..singular.len()).filter(|&s| singular[s]).map(|s| space.stratum_mass(c, s)).sum::<f64>();
    mass_fraction(space, field, weight, |_, f| f.dim() < n).0
}

pub fn verify_dim_drop(ctx: &SpecContext, th: &Thresholds) -> CheckRecord {
    let mut r = ctx.record("dim_drop", "tangent fibers drop dimension on the singular part");
    if !ctx.spec.has_singular_part() {
        r.detail = "precondition: no singular stratum".into();
        return r;
    }
    if let Some(r) = too_unstable(ctx, th, r.clone()) {
        return r;
    }
    let window = ctx.schedule.stability_window;
    let fractions: Vec<f64> = ctx.sweep.iter().skip(window - 1).map(|f| singular_drop_fraction(&ctx.spec, f)).collect();
    let tail: Vec<f64> = fractions.iter().rev().take(3).rev().copied().collect();
    let monotone = tail.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let last = *tail.last().unwrap_or(&f64::NAN);
    r.detail = format!("dim T < n fraction over scales: {:?}; nondecreasing: {monotone}", tail.iter().map(|v| round4(*v)).collect::<Vec<_>>());
    let space = ctx.space();
    let n = space.n();
    let bad: Vec<usize> = ctx.t().cells.iter().enumerate().filter(|(_, f)| f.stable && f.dim() >= n).map(|(c, _)| c).collect();
    finish(r, last, th.dim_drop_mass, monotone && last >= th.dim_drop_mass, bad)
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Per-cell relaxation-route mwug for a closed-form function.
fn relaxation_mwug(ctx: &SpecContext, f: &Expr) -> Result<Vec<f64>> {
    let space = ctx.space();
    let coeffs = project_function(space, f)?;
    Ok(minimal_relaxed_gradient(space, ctx.t(), &coeffs)?.mwug)
}

pub fn verify_lip_equality(ctx: &SpecContext, th: &Thresholds, family: &[Expr]) -> CheckRecord {
    let mut r = ctx.record("lip_equality", "mwug equals lip(f) exactly when fibers are full");
    let Some(v) = with_v(ctx, &mut r) else { return r };
    if let Some(r) = too_unstable(ctx, th, r.clone()) {
        return r;
    }
    let space = ctx.space();
    let n = space.n();
    let (full, _) = mass_fraction(space, ctx.t(), |c| space.cells[c].mass, |_, f| f.dim() == n);
    let full_fibers = full >= th.lip_mass;
    let mut all_equal = true;
    let mut worst_fraction: f64 = 1.0;
    let mut bad = Vec::new();
    for f in ctx.family(family) {
        let relax = match relaxation_mwug(ctx, f) {
            Ok(m) => m,
            Err(e) => {
                r.status = Status::Error;
                r.detail = e.to_string();
                return r;
            }
        };
        let pg = match projected_gradients(ctx.t(), v, f) {
            Ok(p) => p,
            Err(e) => {
                r.status = Status::Error;
                r.detail = e.to_string();
                return r;
            }
        };
        let (frac, b) = mass_fraction(space, ctx.t(), |c| space.cells[c].mass, |c, _| (relax[c] - pg[c].lip).abs() <= th.lip_tol);
        if frac < th.lip_mass {
            all_equal = false;
            if bad.is_empty() {
                bad = b;
            }
        }
        worst_fraction = worst_fraction.min(frac);
    }
    r.detail = format!(
        "full-fiber mass {:.4} ({full_fibers}); worst |mwug - lip| <= {:.0e} mass {:.4} ({all_equal})",
        full, th.lip_tol, worst_fraction
    );
    let pass = full_fibers == all_equal;
    finish(r, worst_fraction, th.lip_mass, pass, bad)
}

/// Relaxation and projection routes agree within max(route_abs, 5 svd_tol |∇f|).
pub fn verify_route_agreement(ctx: &SpecContext, th: &Thresholds, family: &[Expr]) -> CheckRecord {
    let mut r = ctx.record("route_agreement", "relaxed minimal gradient equals projected gradient");
    let Some(v) = with_v(ctx, &mut r) else { return r };
    let space = ctx.space();
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for f in ctx.family(family) {
        let (relax, pg) = match (relaxation_mwug(ctx, f), projected_gradients(ctx.t(), v, f)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                r.status = Status::Error;
                r.detail = e.to_string();
                return r;
            }
        };
        for c in 0..space.cells.len() {
            if !ctx.t().cells[c].stable {
                continue;
            }
            let tol = th.route_abs.max(5.0 * ctx.params.svd_tol * pg[c].lip);
            let ratio = (relax[c] - norm(&pg[c].gradient)).abs() / tol;
            if ratio > 1.0 && bad.len() < 10 {
                bad.push(c);
            }
            worst = worst.max(ratio);
        }
    }
    r.detail = format!("largest |relaxation - projection| / tolerance = {worst:.3e}");
    finish(r, worst, 1.0, worst <= 1.0, bad)
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    let mut v = [0.0; 3];
    for x in v.iter_mut().take(n) {
        *x = rng.random::<f64>() * 2.0 - 1.0;
    }
    v
}

pub fn verify_projection_invariants(ctx: &SpecContext, seed: u64) -> CheckRecord {
    let r = ctx.record("projection_invariants", "fiber projections are idempotent and 1-Lipschitz");
    let n = ctx.space().n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (c, f) in ctx.t().cells.iter().enumerate() {
        for _ in 0..4 {
            let w = random_vector(n, &mut rng);
            let p = f.subspace.project(&w);
            let pp = f.subspace.project(&p);
            let idem = norm(&[pp[0] - p[0], pp[1] - p[1], pp[2] - p[2]]);
            let grow = (norm(&p) - norm(&w)).max(0.0);
            let e = idem.max(grow);
            if e > 1e-12 && bad.len() < 10 {
                bad.push(c);
            }
            worst = worst.max(e);
        }
    }
    finish(r, worst, 1e-12, worst <= 1e-12, bad)
}

pub fn verify_complement_involution(ctx: &SpecContext) -> CheckRecord {
    let r = ctx.record("complement_involution", "W is the orthogonal complement of T");
    let n = ctx.space().n();
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (c, f) in ctx.t().cells.iter().enumerate() {
        let w = f.subspace.complement();
        let back = w.complement();
        let e = if w.dim() + f.dim() != n { 1.0 } else { grassmann_distance(&back, &f.subspace) };
        if e > 1e-10 && bad.len() < 10 {
            bad.push(c);
        }
        worst = worst.max(e);
    }
    finish(r, worst, 1e-10, worst <= 1e-10, bad)
}

fn random_coeffs(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

pub fn verify_parallelogram(ctx: &SpecContext, seed: u64) -> CheckRecord {
    let r = ctx.record("parallelogram", "the Cheeger energy is a quadratic form");
    let space = ctx.space();
    let gt = relaxed_stiffness(space, ctx.t());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let f = random_coeffs(space.dof_count(), &mut rng);
        let g = random_coeffs(space.dof_count(), &mut rng);
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let diff: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
        let lhs = gt.quad_form(&sum) + gt.quad_form(&diff);
        let rhs = 2.0 * gt.quad_form(&f) + 2.0 * gt.quad_form(&g);
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    finish(r, worst, 1e-10, worst <= 1e-10, vec![])
}

pub fn verify_energy_bound(ctx: &SpecContext, seed: u64, family: &[Expr]) -> CheckRecord {
    let r = ctx.record("energy_bound", "relaxation never raises the energy");
    let space = ctx.space();
    let gt = relaxed_stiffness(space, ctx.t());
    let g = assemble_stiffness(space).matrix;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<Vec<f64>> = ctx.family(family).into_iter().filter_map(|f| project_function(space, f).ok()).collect();
    vectors.extend((0..5).map(|_| random_coeffs(space.dof_count(), &mut rng)));
    // roundoff scale of a quadratic form in c
    let unit = g.trace() / g.n.max(1) as f64;
    let mut worst = f64::NEG_INFINITY;
    for c in &vectors {
        let e = gt.quad_form(c);
        let s = g.quad_form(c);
        let c2: f64 = c.iter().map(|v| v * v).sum();
        worst = worst.max((e - s) / s.max(unit * c2).max(1e-300));
    }
    finish(r, worst, 1e-12, worst <= 1e-12, vec![])
}

/// |pr_T pr_V ∇f| ≤ |pr_V ∇f| ≤ |∇f| and relaxation mwug ≤ |pr_V ∇f| up to route tolerance.
pub fn verify_mwug_chain(ctx: &SpecContext, th: &Thresholds, family: &[Expr]) -> CheckRecord {
    let mut r = ctx.record("mwug_chain", "mwug <= |AM gradient| <= lip(f)");
    let Some(v) = with_v(ctx, &mut r) else { return r };
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for f in ctx.family(family) {
        let (relax, pg) = match (relaxation_mwug(ctx, f), projected_gradients(ctx.t(), v, f)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                r.status = Status::Error;
                r.detail = e.to_string();
                return r;
            }
        };
        for (c, p) in pg.iter().enumerate() {
            let am = norm(&p.am_gradient);
            let exact = (norm(&p.gradient) - am).max(am - p.lip).max(0.0) / 1e-12;
            let tol = th.route_abs.max(5.0 * ctx.params.svd_tol * p.lip);
            let relaxed = if ctx.t().cells[c].stable { (relax[c] - am).max(0.0) / tol } else { 0.0 };
            let e = exact.max(relaxed);
            if e > 1.0 && bad.len() < 10 {
                bad.push(c);
            }
            worst = worst.max(e);
        }
    }
    r.detail = "measured: largest violation relative to its tolerance".into();
    finish(r, worst, 1.0, worst <= 1.0, bad)
}

/// A smooth compactly supported field `ψ(|x − c|/r) · p(x) · e_axis`.
#[derive(Debug, Clone)]
pub struct BumpField {
    pub center: Vec<f64>,
    pub radius: f64,
    pub axis: usize,
    pub coeffs: Vec<f64>,
}

impl BumpField {
    pub fn random(spec: &MeasureSpec, rng: &mut ChaCha8Rng) -> Self {
        let n = spec.ambient_dim;
        let edge = (0..n).map(|k| spec.bbox.hi[k] - spec.bbox.lo[k]).fold(f64::INFINITY, f64::min);
        let radius = edge * (0.15 + 0.2 * rng.random::<f64>());
        let center = (0..n)
            .map(|k| spec.bbox.lo[k] + radius + rng.random::<f64>() * (spec.bbox.hi[k] - spec.bbox.lo[k] - 2.0 * radius))
            .collect();
        let axis = rng.random_range(0..n);
        let mut coeffs = vec![0.5 + rng.random::<f64>()];
        coeffs.extend((0..n).map(|_| rng.random::<f64>() - 0.5));
        BumpField { center, radius, axis, coeffs }
    }

    pub fn eval(&self, x: &Point) -> Vector {
        let n = self.center.len();
        let s2: f64 = (0..n).map(|k| (x[k] - self.center[k]).powi(2)).sum::<f64>() / (self.radius * self.radius);
        let mut v = [0.0; 3];
        if s2 < 1.0 {
            let p = self.coeffs[0] + (0..n).map(|k| self.coeffs[k + 1] * x[k]).sum::<f64>();
            v[self.axis] = (1.0 - s2).powi(3) * p;
        }
        v
    }
}

/// Random fields accepted by the divergence check (μ-trivial fields skipped).
pub fn accepted_fields(ctx: &SpecContext, th: &Thresholds, trials: usize, seed: u64) -> (Vec<BumpField>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<BumpField> = (0..trials).map(|_| BumpField::random(&ctx.spec, &mut rng)).collect();
    let space = ctx.space();
    let bound = DIV_NORM_FACTOR / ctx.params.coherence;
    let results: Vec<Option<bool>> = fields
        .par_iter()
        .map(|f| {
            let w = |_: usize, x: &Point| f.eval(x);
            if crate::sobolev::field_norm(space, &w) <= 1e-12 * space.total_mass.sqrt() {
                return None;
            }
            Some(check_divergence(space, &w, th.div_tol, bound).accepted().is_some())
        })
        .collect();
    let nontrivial = results.iter().filter(|r| r.is_some()).count();
    let accepted = fields.into_iter().zip(results).filter(|(_, r)| *r == Some(true)).map(|(f, _)| f).collect();
    (accepted, nontrivial)
}

pub fn verify_divergence_tangency(ctx: &SpecContext, th: &Thresholds, trials: usize, seed: u64) -> CheckRecord {
    let mut r = ctx.record("divergence_tangency", "fields with a divergence are tangent");
    if trials == 0 {
        r.status = Status::Error;
        r.detail = Error::Precondition("trials must be at least 1".into()).to_string();
        return r;
    }
    let (accepted, nontrivial) = accepted_fields(ctx, th, trials, seed);
    let space = ctx.space();
    let tol = 5.0 * ctx.params.svd_tol;
    if accepted.len() < th.min_accepted {
        r.status = Status::Inconclusive;
        r.measured = accepted.len() as f64;
        r.threshold = th.min_accepted as f64;
        r.detail = format!("{} of {nontrivial} nontrivial random fields accepted", accepted.len());
        return r;
    }
    let mut worst: f64 = 1.0;
    let mut bad = Vec::new();
    for f in &accepted {
        let (frac, b) = mass_fraction(space, ctx.t(), |c| space.cells[c].mass, |c, cell| {
            let w = f.eval(&space.cell_centroid(c));
            let p = cell.subspace.project(&w);
            norm(&[w[0] - p[0], w[1] - p[1], w[2] - p[2]]) <= tol * norm(&w) + 1e-14
        });
        if frac < worst {
            worst = frac;
            bad = b;
        }
    }
    r.detail = format!("{} of {nontrivial} nontrivial random fields accepted", accepted.len());
    finish(r, worst, th.tangency_mass, worst >= th.tangency_mass, bad)
}

pub fn verify_leibniz(ctx: &SpecContext, th: &Thresholds, trials: usize, seed: u64) -> CheckRecord {
    let mut r = ctx.record("leibniz", "div(g w) = g div w + <grad g, w>");
    let (accepted, _) = accepted_fields(ctx, th, trials, seed);
    let Some(f) = accepted.first() else {
        r.status = Status::Inconclusive;
        r.detail = "no random field was accepted".into();
        return r;
    };
    let g = Expr::parse("1 + 0.5*x1^2").expect("multiplier");
    let w = |_: usize, x: &Point| f.eval(x);
    let bound = DIV_NORM_FACTOR / ctx.params.coherence;
    match leibniz_check(ctx.space(), &w, &g, th.div_tol, bound) {
        Ok(rep) => {
            r.detail = format!("product field accepted: {}", rep.product_accepted);
            let pass = rep.product_accepted && rep.relative_defect <= 10.0 * th.div_tol;
            finish(r, rep.relative_defect, 10.0 * th.div_tol, pass, vec![])
        }
        Err(e) => {
            r.status = Status::Error;
            r.detail = e.to_string();
            r
        }
    }
}

/// Product context with the factor contexts it is compared against.
pub struct TensorContext {
    pub product: SpecContext,
    pub a: SpecContext,
    pub b: SpecContext,
}

impl TensorContext {
    pub fn new(a: MeasureSpec, b: MeasureSpec, schedule: SweepSchedule) -> Result<Self> {
        let prod = product_measure(&a, &b)?;
        Ok(TensorContext {
            product: SpecContext::new(prod, schedule.clone())?,
            a: SpecContext::new(a, schedule.clone())?,
            b: SpecContext::new(b, schedule)?,
        })
    }

    /// Factor fibers at the projections of the product cell's centroid.
    fn factor_fibers(&self, c: usize) -> Option<(&FiberCell, &FiberCell)> {
        let x = self.product.space().cell_centroid(c);
        let na = self.a.spec.ambient_dim;
        let nb = self.b.spec.ambient_dim;
        Some((locate_fiber(&self.a, &x[..na])?, locate_fiber(&self.b, &x[na..na + nb])?))
    }
}

fn locate_fiber<'a>(ctx: &'a SpecContext, x: &[f64]) -> Option<&'a FiberCell> {
    let s = ctx.space();
    s.active_cell(&s.geom.locate(x)).map(|i| &ctx.t().cells[i])
}

pub fn verify_tensor_fibers(tc: &TensorContext, th: &Thresholds) -> CheckRecord {
    let ctx = &tc.product;
    let r = ctx.record("tensor_fibers", "fibers of a product measure are direct sums");
    if let Some(r) = too_unstable(ctx, th, r.clone()) {
        return r;
    }
    let space = ctx.space();
    let (frac, bad) = mass_fraction(space, ctx.t(), |c| space.cells[c].mass, |c, f| {
        tc.factor_fibers(c)
            .is_some_and(|(fa, fb)| grassmann_distance(&f.subspace, &fa.subspace.direct_sum(&fb.subspace)) <= th.tensor_distance)
    });
    let mut r = finish(r, frac, th.tensor_mass, frac >= th.tensor_mass, bad);
    r.detail = format!("Grassmann distance <= {} on {:.4} of stable mass", th.tensor_distance, frac);
    r
}

pub fn verify_tensor_energy(tc: &TensorContext, th: &Thresholds, family: &[Expr]) -> CheckRecord {
    let ctx = &tc.product;
    let mut r = ctx.record("tensor_energy", "the energy of a product measure splits over the factors");
    let space = ctx.space();
    let na = tc.a.spec.ambient_dim;
    let n = space.n();
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for f in ctx.family(family) {
        let relax = match relaxation_mwug(ctx, f) {
            Ok(m) => m,
            Err(e) => {
                r.status = Status::Error;
                r.detail = e.to_string();
                return r;
            }
        };
        for c in 0..space.cells.len() {
            if !ctx.t().cells[c].stable {
                continue;
            }
            let Some((fa, fb)) = tc.factor_fibers(c) else { continue };
            let x = space.cell_centroid(c);
            let (_, g) = f.eval_with_grad(&x[..n], n);
            let mut ga = [0.0; 3];
            let mut gb = [0.0; 3];
            ga[..na].copy_from_slice(&g[..na]);
            gb[..n - na].copy_from_slice(&g[na..n]);
            let split = norm(&fa.subspace.project(&ga)).powi(2) + norm(&fb.subspace.project(&gb)).powi(2);
            let e = (relax[c].powi(2) - split).abs() / split.max(th.route_abs);
            if e > th.tensor_relative && bad.len() < 10 {
                bad.push(c);
            }
            worst = worst.max(e);
        }
    }
    r.detail = "measured: largest cellwise relative energy density error".into();
    finish(r, worst, th.tensor_relative, worst <= th.tensor_relative, bad)
}

/// Every per-measure check, in report order.
pub fn verify_spec(ctx: &SpecContext, th: &Thresholds, family: &[Expr], trials: usize, seed: u64) -> Vec<CheckRecord> {
    vec![
        verify_t_leq_v(ctx, th),
        verify_dim_drop(ctx, th),
        verify_lip_equality(ctx, th, family),
        verify_route_agreement(ctx, th, family),
        verify_projection_invariants(ctx, seed),
        verify_complement_involution(ctx),
        verify_parallelogram(ctx, seed),
        verify_energy_bound(ctx, seed, family),
        verify_mwug_chain(ctx, th, family),
        verify_divergence_tangency(ctx, th, trials, seed),
        verify_leibniz(ctx, th, trials, seed),
    ]
}

fn error_record(name: &str, spec: &str, scales: &[f64], e: &Error) -> CheckRecord {
    CheckRecord {
        name: name.into(),
        anchor: "setup".into(),
        spec: spec.into(),
        scales: scales.to_vec(),
        measured: f64::NAN,
        threshold: f64::NAN,
        status: Status::Error,
        unstable_mass_fraction: f64::NAN,
        detail: e.to_string(),
        offending_cells: vec![],
    }
}

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub spec: MeasureSpec,
    pub schedule: SweepSchedule,
}

#[derive(Debug, Clone)]
pub struct TensorCase {
    pub a: MeasureSpec,
    pub b: MeasureSpec,
    pub schedule: SweepSchedule,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub cases: Vec<SuiteCase>,
    pub tensors: Vec<TensorCase>,
    pub family: Vec<Expr>,
    pub trials: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub records: Vec<CheckRecord>,
    pub seed: u64,
    pub trials: usize,
}

impl VerificationReport {
    pub fn count(&self, status: Status) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    pub fn passed(&self) -> bool {
        self.count(Status::Fail) == 0 && self.count(Status::Error) == 0
    }

    pub fn find(&self, spec: &str, name: &str) -> Option<&CheckRecord> {
        self.records.iter().find(|r| r.spec == spec && r.name == name)
    }

    pub fn write_text(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "verification report")?;
        writeln!(out, "seed = {}, random fields per measure = {}", self.seed, self.trials)?;
        for r in &self.records {
            writeln!(out)?;
            writeln!(out, "[{}] {} / {}", r.status.label(), r.spec, r.name)?;
            writeln!(out, "  statement: {}", r.anchor)?;
            writeln!(out, "  scales: {}", fmt_scales(&r.scales))?;
            writeln!(out, "  measured = {}, threshold = {}", fmt_num(r.measured), fmt_num(r.threshold))?;
            writeln!(out, "  unstable mass fraction = {}", fmt_num(r.unstable_mass_fraction))?;
            if !r.detail.is_empty() {
                writeln!(out, "  {}", r.detail)?;
            }
            if !r.offending_cells.is_empty() {
                writeln!(out, "  offending cells: {:?}", r.offending_cells)?;
            }
        }
        writeln!(out)?;
        writeln!(
            out,
            "summary: {} pass, {} fail, {} inconclusive, {} skipped, {} error",
            self.count(Status::Pass),
            self.count(Status::Fail),
            self.count(Status::Inconclusive),
            self.count(Status::Skipped),
            self.count(Status::Error)
        )
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "spec,check,status,measured,threshold,unstable_mass_fraction,scales")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.spec,
                r.name,
                r.status.label(),
                fmt_num(r.measured),
                fmt_num(r.threshold),
                fmt_num(r.unstable_mass_fraction),
                r.scales.iter().map(|h| format!("{h:.6e}")).collect::<Vec<_>>().join(";")
            )?;
        }
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{:.6e}", v + 0.0)
    }
}

fn fmt_scales(s: &[f64]) -> String {
    s.iter().map(|h| format!("{h:.6e}")).collect::<Vec<_>>().join(", ")
}

pub fn run_suite(suite: &SuiteConfig) -> VerificationReport {
    let th = &suite.thresholds;
    let mut records = Vec::new();
    for (i, case) in suite.cases.iter().enumerate() {
        let seed = suite.seed.wrapping_add(i as u64);
        match SpecContext::new(case.spec.clone(), case.schedule.clone()) {
            Ok(ctx) => records.extend(verify_spec(&ctx, th, &suite.family, suite.trials, seed)),
            Err(e) => records.push(error_record("setup", &case.spec.name, &case.schedule.scales, &e)),
        }
    }
    for t in &suite.tensors {
        match TensorContext::new(t.a.clone(), t.b.clone(), t.schedule.clone()) {
            Ok(tc) => {
                records.push(verify_tensor_fibers(&tc, th));
                records.push(verify_tensor_energy(&tc, th, &suite.family));
            }
            Err(e) => {
                let name = format!("{}x{}", t.a.name, t.b.name);
                records.push(error_record("tensor_setup", &name, &t.schedule.scales, &e));
            }
        }
    }
    VerificationReport { records, seed: suite.seed, trials: suite.trials }
}

pub mod library {
    //! Measures used by the default suite.

    use crate::cantor::{CantorSet, CantorVariant};
    use crate::expr::Expr;
    use crate::geometry::AaBox;
    use crate::measure::{product_measure, MeasureSpec, Stratum};

    fn unit_box(n: usize) -> AaBox {
        AaBox::new(vec![0.0; n], vec![1.0; n])
    }

    pub fn lebesgue(n: usize) -> MeasureSpec {
        let name = if n == 1 { "lebesgue_interval" } else { "lebesgue_square" };
        let bx = unit_box(n);
        MeasureSpec::new(name, bx.clone(), vec![Stratum::AcDensity { region: bx, density: Expr::constant(1.0) }]).expect("valid")
    }

    fn segment_stratum(a: [f64; 2], b: [f64; 2]) -> Stratum {
        Stratum::Simplex { vertices: vec![a.to_vec(), b.to_vec()], density: Expr::constant(1.0) }
    }

    pub fn segment(a: [f64; 2], b: [f64; 2]) -> MeasureSpec {
        MeasureSpec::new("segment", unit_box(2), vec![segment_stratum(a, b)]).expect("valid")
    }

    pub fn cross() -> MeasureSpec {
        MeasureSpec::new(
            "cross_junction",
            unit_box(2),
            vec![segment_stratum([0.0, 0.5], [1.0, 0.5]), segment_stratum([0.5, 0.0], [0.5, 1.0])],
        )
        .expect("valid")
    }

    pub fn cantor(variant: CantorVariant, generations: u32) -> MeasureSpec {
        let name = match variant {
            CantorVariant::Ternary => "ternary_cantor",
            CantorVariant::SmithVolterra => "fat_cantor",
        };
        let set = CantorSet::new(variant, 0.0, 1.0, generations, 1.0);
        let mut spec =
            MeasureSpec::new(name, unit_box(1), vec![Stratum::Cantor { set, axis: 0, anchor: vec![0.0] }]).expect("valid");
        spec.cantor_default_generations = generations;
        spec
    }

    pub fn lebesgue_x_cantor() -> MeasureSpec {
        let mut spec = product_measure(&lebesgue(1), &cantor(CantorVariant::Ternary, 30)).expect("valid");
        spec.name = "lebesgue_x_cantor".into();
        spec
    }
}

fn thirds(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 3f64.powi(-k)).collect()
}

pub const DEFAULT_SEED: u64 = 20240611;
pub const DEFAULT_TRIALS: usize = 24;

pub fn default_suite() -> SuiteConfig {
    use crate::cantor::CantorVariant;
    let sched = SweepSchedule::new;
    SuiteConfig {
        cases: vec![
            SuiteCase { spec: library::lebesgue(2), schedule: sched(vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]) },
            SuiteCase {
                spec: library::segment([0.0, 0.5], [1.0, 0.5]),
                schedule: sched(vec![1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]),
            },
            SuiteCase { spec: library::cross(), schedule: sched(vec![1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]) },
            SuiteCase { spec: library::cantor(CantorVariant::Ternary, 30), schedule: sched(thirds(4, 6)) },
            SuiteCase {
                spec: library::cantor(CantorVariant::SmithVolterra, 24),
                schedule: sched((6..=12).map(|k| 2f64.powi(-k)).collect()),
            },
            SuiteCase { spec: library::lebesgue_x_cantor(), schedule: sched(thirds(3, 4)) },
        ],
        tensors: vec![TensorCase {
            a: library::lebesgue(1),
            b: library::cantor(CantorVariant::Ternary, 30),
            schedule: sched(thirds(3, 4)),
        }],
        family: default_family(),
        trials: DEFAULT_TRIALS,
        seed: DEFAULT_SEED,
        thresholds: Thresholds::default(),
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    seed: Option<u64>,
    trials: Option<usize>,
    family: Option<Vec<String>>,
    #[serde(default)]
    spec: Vec<RawCase>,
    #[serde(default)]
    tensor: Vec<RawTensor>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    config: String,
    scales: String,
    eps: Option<f64>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTensor {
    a: String,
    b: String,
    scales: String,
}

fn load_spec(dir: &std::path::Path, rel: &str) -> Result<MeasureSpec> {
    let path = dir.join(rel);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    crate::config::parse_measure_spec(&text)
}

/// Reads a suite file; measure config paths are relative to `dir`.
pub fn parse_suite(text: &str, dir: &std::path::Path) -> Result<SuiteConfig> {
    let raw: RawSuite = toml::from_str(text).map_err(|e| Error::Syntax(e.message().to_string()))?;
    let family = match raw.family {
        Some(list) => list.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?,
        None => default_family(),
    };
    let mut cases = Vec::new();
    for c in &raw.spec {
        let spec = load_spec(dir, &c.config)?;
        let mut schedule = SweepSchedule::new(crate::config::parse_scales(&c.scales)?);
        if let Some(eps) = c.eps {
            schedule = schedule.with_params(FiberParams::from_eps(eps, crate::fibers::DEFAULT_SVD_TOL));
        }
        schedule.validate()?;
        cases.push(SuiteCase { spec, schedule });
    }
    let mut tensors = Vec::new();
    for t in &raw.tensor {
        let schedule = SweepSchedule::new(crate::config::parse_scales(&t.scales)?);
        schedule.validate()?;
        tensors.push(TensorCase { a: load_spec(dir, &t.a)?, b: load_spec(dir, &t.b)?, schedule });
    }
    let trials = raw.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(Error::Validation("trials must be at least 1".into()));
    }
    Ok(SuiteConfig {
        cases,
        tensors,
        family,
        trials,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        thresholds: Thresholds::default(),
    })
}
