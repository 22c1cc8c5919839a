//! Fiber fields: the null-gradient distribution W, the tangent distribution
//! T = W^⊥, the registry field V, and their multiscale stabilisation.
//!
//! A direction `v` is a null gradient near a cell when `v` restricted to a
//! patch around the cell can be approximated by gradients of functions with
//! small L²(μ) norm. This is measured by the local relaxation residual
//!
//! ```text
//! q_P(v) = min_f  ‖f‖²/ℓ² + ‖∇f − v·1_P‖²   (norms in L²(μ))
//!        = |v|² μ(P) − bᵀ (M/ℓ² + G)⁻¹ b,   b_i = ∫_P ∇φ_i·v dμ
//! ```
//!
//! normalised by μ(P), so its eigenvalues lie in [0, 1]. Directions with
//! residual below `null_tol` span W(c). The computation runs separately on
//! each stratum, since the gradient structure is local on mutually singular
//! pieces, and the per-stratum tangent spaces are joined by a mass-weighted
//! span.

use crate::discretization::{
    assemble_mass_filtered, assemble_stiffness_filtered, build_space_shared, GridSpace, QuadNode,
};
use crate::error::{Error, Result};
use crate::measure::{MeasureSpec, Stratum};
use crate::sparse::LdlFactor;
use crate::subspace::{span_weighted, unit, Subspace, Vector};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

pub const DEFAULT_SVD_TOL: f64 = 0.05;
pub const DEFAULT_NULL_TOL: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 2;
pub const UNSTABLE_WARN_FRACTION: f64 = 0.05;

/// Local relaxation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberParams {
    /// Coherence length ℓ; ℓ² weighs the L² penalty.
    pub coherence: f64,
    /// Chebyshev radius of the patch around each cell.
    pub patch_radius: f64,
    pub null_tol: f64,
    pub svd_tol: f64,
}

impl FiberParams {
    pub fn for_spec(spec: &MeasureSpec) -> Self {
        let edge = (0..spec.ambient_dim).map(|k| spec.bbox.hi[k] - spec.bbox.lo[k]).fold(0.0, f64::max);
        Self::from_eps((edge / 4.0).powi(2), DEFAULT_SVD_TOL)
    }

    /// Parameters from the penalty weight `eps = ℓ²`.
    pub fn from_eps(eps: f64, svd_tol: f64) -> Self {
        let l = eps.sqrt();
        FiberParams { coherence: l, patch_radius: 2.0 * l, null_tol: DEFAULT_NULL_TOL, svd_tol }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.coherence > 0.0
            && self.patch_radius > 0.0
            && (0.0..1.0).contains(&self.null_tol)
            && self.svd_tol > 0.0
            && self.svd_tol < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid fiber parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSchedule {
    pub scales: Vec<f64>,
    pub params: Option<FiberParams>,
    pub stability_window: usize,
}

impl SweepSchedule {
    pub fn new(scales: Vec<f64>) -> Self {
        SweepSchedule { scales, params: None, stability_window: DEFAULT_WINDOW }
    }

    pub fn with_params(mut self, p: FiberParams) -> Self {
        self.params = Some(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Validation("schedule has no scales".into()));
        }
        if self.scales.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Validation("scales must be positive".into()));
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Validation("scales must be strictly decreasing".into()));
        }
        if self.stability_window == 0 {
            return Err(Error::Validation("stability window must be at least 1".into()));
        }
        if let Some(p) = &self.params {
            p.validate()?;
        }
        Ok(())
    }

    pub fn params_for(&self, spec: &MeasureSpec) -> FiberParams {
        self.params.unwrap_or_else(|| FiberParams::for_spec(spec))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberCell {
    pub subspace: Subspace,
    /// Relaxation residual eigenvalues, ascending (length n).
    pub values: Vec<f64>,
    pub stable: bool,
}

impl FiberCell {
    pub fn dim(&self) -> usize {
        self.subspace.dim()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldMeta {
    pub scales: Vec<f64>,
    pub unstable_mass_fraction: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DistributionField {
    pub space: Arc<GridSpace>,
    pub cells: Vec<FiberCell>,
    pub meta: FieldMeta,
}

impl DistributionField {
    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn stable_mass(&self) -> f64 {
        self.space.cells.iter().zip(&self.cells).filter(|(_, f)| f.stable).map(|(c, _)| c.mass).sum()
    }

    /// Fraction of stable mass on which `pred` holds (1 when nothing is stable).
    pub fn stable_fraction(&self, pred: impl Fn(usize, &FiberCell) -> bool) -> f64 {
        let total = self.stable_mass();
        if total <= 0.0 {
            return 0.0;
        }
        let hit: f64 = self
            .space
            .cells
            .iter()
            .zip(&self.cells)
            .enumerate()
            .filter(|(i, (_, f))| f.stable && pred(*i, f))
            .map(|(_, (c, _))| c.mass)
            .sum();
        hit / total
    }

    fn with_subspaces(&self, subspaces: Vec<Subspace>) -> Self {
        let cells = self
            .cells
            .iter()
            .zip(subspaces)
            .map(|(c, s)| FiberCell { subspace: s, values: c.values.clone(), stable: c.stable })
            .collect();
        DistributionField { space: self.space.clone(), cells, meta: self.meta.clone() }
    }
}

/// Mass-weighted span of per-stratum subspaces.
pub fn span_union(n: usize, parts: &[(f64, &Subspace)], svd_tol: f64) -> Subspace {
    let mmax = parts.iter().map(|(m, _)| *m).fold(0.0, f64::max);
    if mmax <= 0.0 {
        return Subspace::zero(n);
    }
    let mut vectors: Vec<Vector> = Vec::new();
    for (m, s) in parts {
        let w = (m / mmax).sqrt();
        vectors.extend(s.basis.iter().map(|b| [w * b[0], w * b[1], w * b[2]]));
    }
    span_weighted(n, &vectors, svd_tol)
}

/// Per-stratum local tangent spaces and residual spectra on one grid.
struct StratumFibers {
    tangent: Vec<Option<Subspace>>,
    values: Vec<Option<Vec<f64>>>,
}

fn stratum_fibers(space: &GridSpace, s: usize, p: &FiberParams) -> StratumFibers {
    let n = space.n();
    let ncells = space.cells.len();
    let members = space.cells_of_stratum(s);
    let mut out = StratumFibers { tangent: vec![None; ncells], values: vec![None; ncells] };
    if members.is_empty() {
        return out;
    }
    let filter = move |q: &QuadNode| q.stratum == s;
    let m = assemble_mass_filtered(space, Some(&filter));
    let g = assemble_stiffness_filtered(space, Some(&filter));
    let a = g.add_scaled(&m, 1.0 / (p.coherence * p.coherence));
    let fact = LdlFactor::new(&a, 1e-12);
    let nc = space.corners();
    // per member cell: stratum mass and ∫ ∇φ_a dμ_s for each corner
    let local: Vec<(f64, Vec<Vector>)> = members
        .par_iter()
        .map(|&c| {
            let mut grads = vec![[0.0; 3]; nc];
            let mut mass = 0.0;
            for q in space.cell_nodes(c).iter().filter(|q| q.stratum == s) {
                let (_, gr) = space.basis(c, &q.x);
                for a in 0..nc {
                    for k in 0..n {
                        grads[a][k] += q.w * gr[a][k];
                    }
                }
                mass += q.w;
            }
            (mass, grads)
        })
        .collect();
    let r = (p.patch_radius / space.h()).round() as i64;
    let results: Vec<(Subspace, Vec<f64>)> = members
        .par_iter()
        .map(|&c| {
            let ic = space.cells[c].index;
            let mut b = vec![vec![0.0; space.dof_count()]; n];
            let mut mu = 0.0;
            for (j, &pc) in members.iter().enumerate() {
                let ip = space.cells[pc].index;
                if (0..n).any(|k| (ip[k] as i64 - ic[k] as i64).abs() > r) {
                    continue;
                }
                let (mass, grads) = &local[j];
                mu += mass;
                for (a, &d) in space.cells[pc].dofs.iter().enumerate() {
                    for k in 0..n {
                        b[k][d] += grads[a][k];
                    }
                }
            }
            let x: Vec<Vec<f64>> = b.iter().map(|bk| fact.solve(bk)).collect();
            let mut q = DMatrix::zeros(n, n);
            for k in 0..n {
                for l in 0..n {
                    let bx: f64 = b[k].iter().zip(&x[l]).map(|(u, v)| u * v).sum();
                    q[(k, l)] = (if k == l { mu } else { 0.0 } - bx) / mu;
                }
            }
            let q = (&q + q.transpose()) * 0.5;
            let eig = SymmetricEigen::new(q);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].clamp(0.0, 1.0)).collect();
            let basis: Vec<Vector> = order
                .iter()
                .filter(|&&i| eig.eigenvalues[i] > p.null_tol)
                .map(|&i| {
                    let mut v = [0.0; 3];
                    for k in 0..n {
                        v[k] = eig.eigenvectors[(k, i)];
                    }
                    v
                })
                .collect();
            (Subspace { n, basis }, values)
        })
        .collect();
    for (&c, (t, v)) in members.iter().zip(results) {
        out.tangent[c] = Some(t);
        out.values[c] = Some(v);
    }
    out
}

/// Local tangent field at a single scale (all cells flagged stable).
pub fn local_tangent_field(space: Arc<GridSpace>, p: &FiberParams) -> Result<DistributionField> {
    p.validate()?;
    let n = space.n();
    let per: Vec<StratumFibers> = (0..space.spec.strata.len()).map(|s| stratum_fibers(&space, s, p)).collect();
    let cells = (0..space.cells.len())
        .into_par_iter()
        .map(|c| {
            let masses: Vec<f64> = (0..per.len()).map(|s| space.stratum_mass(c, s)).collect();
            let parts: Vec<(f64, &Subspace)> =
                per.iter().zip(&masses).filter_map(|(f, &m)| f.tangent[c].as_ref().map(|t| (m, t))).collect();
            let subspace = span_union(n, &parts, p.svd_tol);
            let dominant = (0..per.len())
                .filter(|&s| per[s].values[c].is_some())
                .max_by(|&a, &b| masses[a].total_cmp(&masses[b]));
            let values = dominant.and_then(|s| per[s].values[c].clone()).unwrap_or_else(|| vec![0.0; n]);
            FiberCell { subspace, values, stable: true }
        })
        .collect();
    Ok(DistributionField { space, cells, meta: FieldMeta::default() })
}

/// Null-gradient distribution W at the scale of `space`, with penalty
/// weight `eps = ℓ²`.
pub fn compute_w_field(space: &GridSpace, eps: f64, svd_tol: f64) -> Result<DistributionField> {
    let t = local_tangent_field(Arc::new(space.clone()), &FiberParams::from_eps(eps, svd_tol))?;
    Ok(orthogonal_complement(&t))
}

pub fn orthogonal_complement(field: &DistributionField) -> DistributionField {
    field.with_subspaces(field.cells.iter().map(|c| c.subspace.complement()).collect())
}

/// Tangent fields at every scale of the schedule. The field at scale `j`
/// carries stability flags computed from scales `..=j`: a cell is stable
/// when the cells containing its μ-centroid at the last `window` scales are
/// all active with equal fiber dimension.
pub fn tangent_sweep(spec: &MeasureSpec, schedule: &SweepSchedule) -> Result<Vec<DistributionField>> {
    schedule.validate()?;
    let params = schedule.params_for(spec);
    params.validate()?;
    let shared = Arc::new(spec.clone());
    let mut fields: Vec<DistributionField> = Vec::with_capacity(schedule.scales.len());
    for &h in &schedule.scales {
        let space = Arc::new(build_space_shared(shared.clone(), h)?);
        fields.push(local_tangent_field(space, &params)?);
    }
    let window = schedule.stability_window;
    let dims: Vec<Vec<usize>> = fields.iter().map(|f| f.cells.iter().map(FiberCell::dim).collect()).collect();
    for j in 0..fields.len() {
        let space = fields[j].space.clone();
        let flags: Vec<bool> = (0..space.cells.len())
            .into_par_iter()
            .map(|c| {
                if j + 1 < window {
                    return false;
                }
                let x = space.cell_centroid(c);
                let d = dims[j][c];
                (j + 1 - window..j).all(|i| {
                    let coarse = &fields[i].space;
                    let idx = coarse.geom.locate(&x[..coarse.n()]);
                    coarse.active_cell(&idx).is_some_and(|cc| dims[i][cc] == d)
                })
            })
            .collect();
        let field = &mut fields[j];
        for (cell, f) in field.cells.iter_mut().zip(flags) {
            cell.stable = f;
        }
        let unstable: f64 =
            space.cells.iter().zip(&field.cells).filter(|(_, f)| !f.stable).map(|(c, _)| c.mass).sum::<f64>();
        let total: f64 = space.cells.iter().map(|c| c.mass).sum();
        field.meta.scales = schedule.scales[..=j].to_vec();
        field.meta.unstable_mass_fraction = unstable / total + 0.0;
        if field.meta.unstable_mass_fraction > UNSTABLE_WARN_FRACTION {
            field.meta.warning = Some(format!(
                "unstable fibers on {:.1}% of the mass",
                100.0 * field.meta.unstable_mass_fraction
            ));
        }
    }
    Ok(fields)
}

/// Tangent distribution at the finest scale with stability flags.
pub fn compute_tangent_field(spec: &MeasureSpec, schedule: &SweepSchedule) -> Result<DistributionField> {
    Ok(tangent_sweep(spec, schedule)?.pop().expect("schedule has scales"))
}

/// Registry value of V for a single stratum in its own ambient space.
pub fn registry_fiber(s: &Stratum) -> Result<Subspace> {
    let n = s.ambient_dim();
    Ok(match s {
        Stratum::AcDensity { .. } => Subspace::full(n),
        Stratum::Simplex { vertices, .. } => {
            let edges: Vec<Vector> = vertices[1..]
                .iter()
                .map(|v| {
                    let mut e = [0.0; 3];
                    for k in 0..n {
                        e[k] = v[k] - vertices[0][k];
                    }
                    e
                })
                .collect();
            span_weighted(n, &edges, 1e-9)
        }
        Stratum::Cantor { set, axis, .. } => match set.variant {
            crate::cantor::CantorVariant::Ternary => Subspace::zero(n),
            crate::cantor::CantorVariant::SmithVolterra => Subspace { n, basis: vec![unit(*axis)] },
        },
        Stratum::PointMass { .. } => Subspace::zero(n),
        Stratum::Product { a, b } => registry_fiber(a)?.direct_sum(&registry_fiber(b)?),
    })
}

/// Cellwise registry field V: mass-weighted span of the strata's values.
pub fn am_distribution(space: Arc<GridSpace>, svd_tol: f64) -> Result<DistributionField> {
    let n = space.n();
    let per: Vec<Subspace> = space.spec.strata.iter().map(registry_fiber).collect::<Result<_>>()?;
    let cells = (0..space.cells.len())
        .map(|c| {
            let parts: Vec<(f64, &Subspace)> =
                per.iter().enumerate().map(|(s, v)| (space.stratum_mass(c, s), v)).collect();
            FiberCell { subspace: span_union(n, &parts, svd_tol), values: vec![0.0; n], stable: true }
        })
        .collect();
    Ok(DistributionField { space, cells, meta: FieldMeta::default() })
}

pub fn project_vector_field(field: &DistributionField, w: &[Vector]) -> Vec<Vector> {
    field.cells.iter().zip(w).map(|(c, v)| c.subspace.project(v)).collect()
}

/// One row per cell: id, center, mass, stable, dim, basis (n×n column-major,
/// zero-padded), residual spectrum.
pub fn write_fibers_csv(field: &DistributionField, mut out: impl Write) -> std::io::Result<()> {
    let n = field.n();
    let mut header = vec!["cell_id".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    header.extend(["mass", "stable", "dim"].map(String::from));
    for col in 1..=n {
        for row in 1..=n {
            header.push(format!("b{row}{col}"));
        }
    }
    header.extend((1..=n).map(|k| format!("sigma{k}")));
    writeln!(out, "{}", header.join(","))?;
    for (c, f) in field.cells.iter().enumerate() {
        let x = field.space.cell_center(c);
        let mut row = vec![c.to_string()];
        row.extend((0..n).map(|k| format!("{:.10}", x[k])));
        row.push(format!("{:.12e}", field.space.cells[c].mass));
        row.push((f.stable as u8).to_string());
        row.push(f.dim().to_string());
        for col in 0..n {
            for r in 0..n {
                let v = f.subspace.basis.get(col).map_or(0.0, |b| b[r]);
                row.push(format!("{:.10}", v));
            }
        }
        row.extend(f.values.iter().map(|v| format!("{v:.6e}")));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
