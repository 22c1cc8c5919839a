//! Relaxed gradients, Cheeger energy, divergence, Laplacian and heat flow.

use crate::discretization::{
    assemble_mass, assemble_projected_stiffness, sample_gradient, GridSpace, Point, QuadNode,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fibers::DistributionField;
use crate::sparse::{CsrMatrix, LdlFactor};
use crate::subspace::{dot, norm, Vector};
use rayon::prelude::*;
use std::io::Write;

pub const DEFAULT_DIV_TOL: f64 = 1e-6;
/// Accepted divergences satisfy ‖d‖ ≤ DIV_NORM_FACTOR / ℓ · ‖w‖ in L²(μ).
pub const DIV_NORM_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Projection,
    Relaxation,
}

#[derive(Debug, Clone)]
pub struct SobolevSolution {
    pub route: Route,
    pub coeffs: Option<Vec<f64>>,
    pub gradient: Vec<Vector>,
    pub mwug: Vec<f64>,
    pub energy: f64,
}

/// Cellwise `pr_{T(c)} ∇f`, where `∇f` is the discrete gradient sample.
///
/// `tangent` must live on `space`. The energy integrates the projected
/// gradient over every quadrature node, so it equals `½ fᵀ G_T f`.
pub fn minimal_relaxed_gradient(space: &GridSpace, tangent: &DistributionField, coeffs: &[f64]) -> Result<SobolevSolution> {
    check_same_space(space, tangent)?;
    let gradient: Vec<Vector> = (0..space.cells.len())
        .map(|c| sample_gradient(space, coeffs, c).map(|g| tangent.cells[c].subspace.project(&g)))
        .collect::<Result<_>>()?;
    let energy = 0.5 * relaxed_stiffness(space, tangent).quad_form(coeffs);
    Ok(SobolevSolution {
        route: Route::Relaxation,
        coeffs: Some(coeffs.to_vec()),
        mwug: gradient.iter().map(norm).collect(),
        gradient,
        energy,
    })
}

fn check_same_space(space: &GridSpace, field: &DistributionField) -> Result<()> {
    if field.cells.len() != space.cells.len() || field.space.h() != space.h() {
        return Err(Error::Precondition("fiber field and grid space differ".into()));
    }
    Ok(())
}

/// Pointwise data of a closed-form function at a cell's μ-centroid.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedGradient {
    pub gradient: Vector,
    pub am_gradient: Vector,
    pub lip: f64,
}

pub fn projected_gradients(t: &DistributionField, v: &DistributionField, f: &Expr) -> Result<Vec<ProjectedGradient>> {
    let space = &t.space;
    let n = space.n();
    (0..space.cells.len())
        .map(|c| {
            let x = space.cell_centroid(c);
            let (val, gv) = f.eval_with_grad(&x[..n], n);
            let mut g = [0.0; 3];
            g[..n].copy_from_slice(&gv);
            if !val.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Eval(format!("`{f}` is not differentiable at {:?}", &x[..n])));
            }
            let am = v.cells[c].subspace.project(&g);
            Ok(ProjectedGradient { gradient: t.cells[c].subspace.project(&am), am_gradient: am, lip: norm(&g) })
        })
        .collect()
}

/// `pr_T pr_V ∇f` at each cell centroid, for a closed form `f`.
pub fn mwug_via_projection(t: &DistributionField, v: &DistributionField, f: &Expr) -> Result<SobolevSolution> {
    let pg = projected_gradients(t, v, f)?;
    let gradient: Vec<Vector> = pg.iter().map(|p| p.gradient).collect();
    let mwug: Vec<f64> = gradient.iter().map(norm).collect();
    let energy = 0.5 * t.space.cells.iter().zip(&mwug).map(|(c, m)| c.mass * m * m).sum::<f64>();
    Ok(SobolevSolution { route: Route::Projection, coeffs: None, gradient, mwug, energy })
}

pub fn relaxed_stiffness(space: &GridSpace, tangent: &DistributionField) -> CsrMatrix {
    assemble_projected_stiffness(space, &|c, g| tangent.cells[c].subspace.project(&g))
}

pub fn cheeger_energy(space: &GridSpace, tangent: &DistributionField, coeffs: &[f64]) -> Result<f64> {
    check_same_space(space, tangent)?;
    Ok(0.5 * relaxed_stiffness(space, tangent).quad_form(coeffs))
}

/// A vector field evaluated at quadrature nodes of a given cell.
pub type VectorField<'a> = &'a (dyn Fn(usize, &Point) -> Vector + Sync);

#[derive(Debug, Clone)]
pub struct DivergencePair {
    pub d: Vec<f64>,
    pub residual: f64,
    pub d_norm: f64,
    pub w_norm: f64,
    pub pruned_dofs: usize,
}

#[derive(Debug, Clone)]
pub enum DivergenceOutcome {
    Accepted(DivergencePair),
    Rejected { residual: f64, ratio: f64, reason: String },
}

impl DivergenceOutcome {
    pub fn accepted(&self) -> Option<&DivergencePair> {
        match self {
            DivergenceOutcome::Accepted(p) => Some(p),
            _ => None,
        }
    }
}

/// Dofs whose basis support stays inside the bounding box.
pub fn interior_dofs(space: &GridSpace) -> Vec<bool> {
    let bx = &space.spec.bbox;
    let h = space.h();
    let slack = 1e-12 * h;
    (0..space.dof_count())
        .map(|d| {
            let p = space.dof_position(d);
            (0..space.n()).all(|k| p[k] - h >= bx.lo[k] - slack && p[k] + h <= bx.hi[k] + slack)
        })
        .collect()
}

/// Pairing vector `b_i = ∫ ∇ψ_i · w dμ` for test functions given by
/// `(value, gradient)` of all local basis functions at a node.
fn pairing(space: &GridSpace, w: VectorField<'_>) -> Vec<f64> {
    let mut b = vec![0.0; space.dof_count()];
    for c in 0..space.cells.len() {
        for q in space.cell_nodes(c) {
            let (_, grad) = space.basis(c, &q.x);
            let wv = w(c, &q.x);
            for (a, &d) in space.cells[c].dofs.iter().enumerate() {
                b[d] += q.w * dot(&grad[a], &wv);
            }
        }
    }
    b
}

pub fn field_norm(space: &GridSpace, w: VectorField<'_>) -> f64 {
    (0..space.cells.len())
        .map(|c| space.cell_nodes(c).iter().map(|q| q.w * dot(&w(c, &q.x), &w(c, &q.x))).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Solves `M d = −B w` on interior test functions and accepts when the
/// defining identity holds to `tol` and `‖d‖ ≤ norm_bound · ‖w‖`.
pub fn check_divergence(space: &GridSpace, w: VectorField<'_>, tol: f64, norm_bound: f64) -> DivergenceOutcome {
    let m = assemble_mass(space).matrix;
    let interior = interior_dofs(space);
    let mut b = pairing(space, w);
    for (bi, &inside) in b.iter_mut().zip(&interior) {
        if !inside {
            *bi = 0.0;
        }
    }
    let diag = m.diagonal();
    let active: Vec<usize> = (0..space.dof_count()).filter(|&i| diag[i] >= space.mass_floor).collect();
    let pruned = space.dof_count() - active.len();
    let ma = m.submatrix(&active);
    let fact = LdlFactor::new(&ma, 1e-12);
    let rhs: Vec<f64> = active.iter().map(|&i| -b[i]).collect();
    let da = fact.solve(&rhs);
    let mut d = vec![0.0; space.dof_count()];
    for (&i, v) in active.iter().zip(da) {
        d[i] = v;
    }
    let md = m.mul_vec(&d);
    let rn: f64 = (0..d.len()).filter(|&i| interior[i]).map(|i| (md[i] + b[i]).powi(2)).sum::<f64>().sqrt();
    let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = if bn > 0.0 { rn / bn } else { 0.0 };
    let d_norm = m.quad_form(&d).max(0.0).sqrt();
    let w_norm = field_norm(space, w);
    let ratio = if w_norm > 0.0 { d_norm / w_norm } else { 0.0 };
    if !(residual <= tol) {
        return DivergenceOutcome::Rejected {
            residual,
            ratio,
            reason: format!("relative residual {residual:.3e} exceeds {tol:.1e}"),
        };
    }
    if ratio > norm_bound {
        return DivergenceOutcome::Rejected {
            residual,
            ratio,
            reason: format!("divergence norm ratio {ratio:.3e} exceeds {norm_bound:.3e}"),
        };
    }
    DivergenceOutcome::Accepted(DivergencePair { d, residual, d_norm, w_norm, pruned_dofs: pruned })
}

#[derive(Debug, Clone, Copy)]
pub struct LeibnizReport {
    pub product_accepted: bool,
    pub relative_defect: f64,
}

/// Compares the weak forms of `div(g w)` and `g div w + ∇g·w` on interior
/// test functions. `div w` is solved in the enriched space `S ∪ gS`, so
/// the identity is exact up to solver precision when `w` has a divergence.
pub fn leibniz_check(space: &GridSpace, w: VectorField<'_>, g: &Expr, tol: f64, norm_bound: f64) -> Result<LeibnizReport> {
    let n = space.n();
    let gw = |c: usize, x: &Point| {
        let v = w(c, x);
        let s = g.eval(&x[..n]);
        [s * v[0], s * v[1], s * v[2]]
    };
    let product_accepted = check_divergence(space, &gw, tol, norm_bound).accepted().is_some();
    let nd = space.dof_count();
    let interior = interior_dofs(space);
    // enriched basis: ψ_i = φ_i (i < nd), ψ_{nd+i} = g φ_i
    let mut trip = Vec::new();
    let mut b = vec![0.0; 2 * nd];
    let mut lhs = vec![0.0; nd];
    let mut nodes: Vec<(usize, QuadNode)> = Vec::new();
    for c in 0..space.cells.len() {
        let dofs = &space.cells[c].dofs;
        for q in space.cell_nodes(c) {
            nodes.push((c, *q));
            let (val, grad) = space.basis(c, &q.x);
            let (gv, gg) = grad3(g, &q.x, n);
            let wv = w(c, &q.x);
            let psi: Vec<(usize, f64)> = dofs
                .iter()
                .enumerate()
                .flat_map(|(a, &d)| [(d, val[a]), (nd + d, gv * val[a])])
                .collect();
            for &(i, pi) in &psi {
                for &(j, pj) in &psi {
                    trip.push((i, j, q.w * pi * pj));
                }
            }
            for (a, &d) in dofs.iter().enumerate() {
                let dpsi: Vector = std::array::from_fn(|k| gv * grad[a][k] + val[a] * gg[k]);
                b[d] += q.w * dot(&grad[a], &wv);
                b[nd + d] += q.w * dot(&dpsi, &wv);
                lhs[d] -= q.w * gv * dot(&grad[a], &wv);
            }
        }
    }
    for i in 0..nd {
        if !interior[i] {
            b[i] = 0.0;
            b[nd + i] = 0.0;
        }
    }
    let me = CsrMatrix::from_triplets(2 * nd, trip);
    let fact = LdlFactor::new(&me, 1e-10);
    let de = fact.solve(&b.iter().map(|v| -v).collect::<Vec<_>>());
    // right side: ∫ φ_i (g d_w + ∇g·w) dμ
    let mut rhs = vec![0.0; nd];
    for (c, q) in &nodes {
        let (val, _) = space.basis(*c, &q.x);
        let (gv, gg) = grad3(g, &q.x, n);
        let dofs = &space.cells[*c].dofs;
        let dw: f64 = dofs.iter().enumerate().map(|(a, &d)| val[a] * (de[d] + gv * de[nd + d])).sum();
        let wv = w(*c, &q.x);
        for (a, &d) in dofs.iter().enumerate() {
            rhs[d] += q.w * val[a] * (gv * dw + dot(&gg, &wv));
        }
    }
    let num: f64 = (0..nd).filter(|&i| interior[i]).map(|i| (lhs[i] - rhs[i]).powi(2)).sum::<f64>().sqrt();
    let den: f64 = (0..nd).filter(|&i| interior[i]).map(|i| lhs[i].powi(2)).sum::<f64>().sqrt();
    Ok(LeibnizReport { product_accepted, relative_defect: if den > 0.0 { num / den } else { num } })
}

fn grad3(g: &Expr, x: &Point, n: usize) -> (f64, Vector) {
    let (v, d) = g.eval_with_grad(&x[..n], n);
    let mut out = [0.0; 3];
    out[..n].copy_from_slice(&d);
    (v, out)
}

fn solve_pruned(space: &GridSpace, a: &CsrMatrix, rhs: &[f64]) -> Vec<f64> {
    let diag = a.diagonal();
    let active: Vec<usize> = (0..space.dof_count()).filter(|&i| diag[i] >= space.mass_floor).collect();
    let fact = LdlFactor::new(&a.submatrix(&active), 1e-12);
    let sol = fact.solve(&active.iter().map(|&i| rhs[i]).collect::<Vec<_>>());
    let mut x = vec![0.0; space.dof_count()];
    for (&i, v) in active.iter().zip(sol) {
        x[i] = v;
    }
    x
}

/// Coefficients of `Δf` solving `M h = −G_T f`.
pub fn laplacian(space: &GridSpace, tangent: &DistributionField, coeffs: &[f64]) -> Result<Vec<f64>> {
    check_same_space(space, tangent)?;
    let m = assemble_mass(space).matrix;
    let gt = relaxed_stiffness(space, tangent);
    let rhs: Vec<f64> = gt.mul_vec(coeffs).into_iter().map(|v| -v).collect();
    Ok(solve_pruned(space, &m, &rhs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatStep {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub w12_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct HeatFlow {
    pub coeffs: Vec<f64>,
    pub history: Vec<HeatStep>,
}

/// Implicit Euler: `(M + Δt G_T) f_{k+1} = M f_k`.
pub fn heat_flow(space: &GridSpace, tangent: &DistributionField, f0: &[f64], t_final: f64, steps: usize) -> Result<HeatFlow> {
    check_same_space(space, tangent)?;
    if steps == 0 || !(t_final > 0.0) {
        return Err(Error::Precondition("heat flow needs steps >= 1 and t > 0".into()));
    }
    let m = assemble_mass(space).matrix;
    let gt = relaxed_stiffness(space, tangent);
    let dt = t_final / steps as f64;
    let a = m.add_scaled(&gt, dt);
    let ones = vec![1.0; space.dof_count()];
    let record = |k: usize, f: &[f64]| {
        let energy = 0.5 * gt.quad_form(f);
        HeatStep {
            step: k,
            time: k as f64 * dt,
            mass: m.bilinear(&ones, f),
            energy,
            w12_norm_sq: m.quad_form(f) + 2.0 * energy,
        }
    };
    let mut f = f0.to_vec();
    let mut history = vec![record(0, &f)];
    let diag = a.diagonal();
    let active: Vec<usize> = (0..space.dof_count()).filter(|&i| diag[i] >= space.mass_floor).collect();
    let fact = LdlFactor::new(&a.submatrix(&active), 1e-12);
    for k in 1..=steps {
        let rhs = m.mul_vec(&f);
        let sol = fact.solve(&active.iter().map(|&i| rhs[i]).collect::<Vec<_>>());
        let mut next = f.clone();
        for (&i, v) in active.iter().zip(sol) {
            next[i] = v;
        }
        let r = a.mul_vec(&next);
        let res: f64 = active.iter().map(|&i| (r[i] - rhs[i]).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        if !(res <= 1e-8 * scale) {
            return Err(Error::solver(format!("implicit step {k} did not solve"), res / scale));
        }
        f = next;
        history.push(record(k, &f));
    }
    Ok(HeatFlow { coeffs: f, history })
}

pub fn write_heat_csv(flow: &HeatFlow, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,time,mass,energy,w12_norm_sq")?;
    for s in &flow.history {
        writeln!(out, "{},{:.10},{:.15e},{:.15e},{:.15e}", s.step, s.time, s.mass, s.energy, s.w12_norm_sq)?;
    }
    Ok(())
}

pub struct MwugRow {
    pub projection: f64,
    pub relaxation: f64,
    pub lip: f64,
    pub am_norm: f64,
}

pub fn mwug_rows(
    space: &GridSpace,
    t: &DistributionField,
    v: &DistributionField,
    f: &Expr,
    coeffs: &[f64],
) -> Result<Vec<MwugRow>> {
    let pg = projected_gradients(t, v, f)?;
    let relax = minimal_relaxed_gradient(space, t, coeffs)?;
    Ok(pg
        .iter()
        .zip(&relax.mwug)
        .map(|(p, r)| MwugRow { projection: norm(&p.gradient), relaxation: *r, lip: p.lip, am_norm: norm(&p.am_gradient) })
        .collect())
}

pub fn write_mwug_csv(space: &GridSpace, rows: &[MwugRow], mut out: impl Write) -> std::io::Result<()> {
    let n = space.n();
    let centers: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    writeln!(out, "cell_id,{},mass,mwug_projection,mwug_relaxation,lip,am_norm", centers.join(","))?;
    for (c, r) in rows.iter().enumerate() {
        let x = space.cell_center(c);
        let xs: Vec<String> = (0..n).map(|k| format!("{:.10}", x[k])).collect();
        writeln!(
            out,
            "{c},{},{:.12e},{:.10e},{:.10e},{:.10e},{:.10e}",
            xs.join(","),
            space.cells[c].mass,
            r.projection,
            r.relaxation,
            r.lip,
            r.am_norm
        )?;
    }
    Ok(())
}

/// Projection onto each cell's subspace applied to a per-cell field.
pub fn project_cellwise(field: &DistributionField, w: &[Vector]) -> Vec<Vector> {
    field.cells.par_iter().zip(w).map(|(c, v)| c.subspace.project(v)).collect()
}
