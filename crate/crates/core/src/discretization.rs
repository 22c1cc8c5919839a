//! Multilinear (tensor hat) elements on a uniform grid, weighted by μ.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::AaBox;
use crate::measure::{simplex_pieces, tensor_gauss, MeasureSpec, Stratum};
use crate::sparse::CsrMatrix;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

pub const MAX_CELLS_PER_AXIS: usize = 4096;
pub const MASS_FLOOR_REL: f64 = 1e-14;

pub type Point = [f64; 3];

/// Uniform grid: cell `i` covers `[origin + i h, origin + (i+1) h]` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeom {
    pub n: usize,
    pub h: f64,
    pub origin: Point,
    pub shape: [usize; 3],
}

impl GridGeom {
    fn sub(&self, range: std::ops::Range<usize>) -> GridGeom {
        let mut origin = [0.0; 3];
        let mut shape = [1; 3];
        for (k, axis) in range.clone().enumerate() {
            origin[k] = self.origin[axis];
            shape[k] = self.shape[axis];
        }
        GridGeom { n: range.len(), h: self.h, origin, shape }
    }

    fn cell_of(&self, x: &[f64], axis: usize) -> i64 {
        let i = ((x[axis] - self.origin[axis]) / self.h).floor() as i64;
        i.clamp(0, self.shape[axis] as i64 - 1)
    }

    fn cell_range(&self, lo: f64, hi: f64, axis: usize) -> std::ops::RangeInclusive<i64> {
        let a = ((lo - self.origin[axis]) / self.h).floor() as i64;
        let b = ((hi - self.origin[axis]) / self.h).ceil() as i64 - 1;
        a.max(0)..=b.max(a).min(self.shape[axis] as i64 - 1)
    }

    pub fn cell_box(&self, idx: &[usize; 3]) -> AaBox {
        let lo: Vec<f64> = (0..self.n).map(|k| self.origin[k] + idx[k] as f64 * self.h).collect();
        let hi = lo.iter().map(|v| v + self.h).collect();
        AaBox::new(lo, hi)
    }

    pub fn cell_linear(&self, idx: &[usize; 3]) -> usize {
        idx[0] + self.shape[0] * (idx[1] + self.shape[1] * idx[2])
    }

    pub fn vertex_linear(&self, idx: &[usize; 3]) -> usize {
        idx[0] + (self.shape[0] + 1) * (idx[1] + (self.shape[1] + 1) * idx[2])
    }

    /// Cell containing `x` (clamped to the grid).
    pub fn locate(&self, x: &[f64]) -> [usize; 3] {
        let mut idx = [0; 3];
        for k in 0..self.n {
            idx[k] = self.cell_of(x, k) as usize;
        }
        idx
    }
}

/// A quadrature node: position, μ-weight, and the stratum it samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode {
    pub x: Point,
    pub w: f64,
    pub stratum: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: [usize; 3],
    pub linear: usize,
    pub mass: f64,
    /// Global dof ids of the `2^n` corners, bit `k` of the corner id selects
    /// the upper vertex along axis `k`.
    pub dofs: Vec<usize>,
    pub nodes: std::ops::Range<usize>,
}

/// Discrete stand-in for W^{1,2}(R^n, μ) at scale `h`.
#[derive(Debug, Clone)]
pub struct GridSpace {
    pub spec: Arc<MeasureSpec>,
    pub geom: GridGeom,
    pub jitter: f64,
    pub cells: Vec<Cell>,
    pub nodes: Vec<QuadNode>,
    pub dof_vertices: Vec<[usize; 3]>,
    pub mass_floor: f64,
    pub total_mass: f64,
    lookup: HashMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormRole {
    Mass,
    Stiffness,
    RelaxedStiffness,
}

#[derive(Debug, Clone)]
pub struct SymmetricForm {
    pub role: FormRole,
    pub matrix: CsrMatrix,
}

/// Quadrature of one stratum on a grid: `(cell multi-index, node, weight)`.
fn stratum_quadrature(s: &Stratum, g: &GridGeom) -> Vec<([i64; 3], Point, f64)> {
    let mut out = Vec::new();
    let to_point = |x: &[f64]| {
        let mut p = [0.0; 3];
        p[..x.len()].copy_from_slice(x);
        p
    };
    let for_cells_in = |bx: &AaBox, f: &mut dyn FnMut([i64; 3], AaBox)| {
        let ranges: Vec<_> = (0..3).map(|k| if k < g.n { g.cell_range(bx.lo[k], bx.hi[k], k) } else { 0..=0 }).collect();
        for i2 in ranges[2].clone() {
            for i1 in ranges[1].clone() {
                for i0 in ranges[0].clone() {
                    let idx = [i0, i1, i2];
                    let cb = g.cell_box(&[i0 as usize, i1 as usize, i2 as usize]);
                    f(idx, cb);
                }
            }
        }
    };
    match s {
        Stratum::AcDensity { region, density } => {
            for_cells_in(region, &mut |idx, cb| {
                let cut = cb.intersect(region);
                if !cut.is_empty() {
                    for (x, w) in tensor_gauss(&cut) {
                        out.push((idx, to_point(&x), w * density.eval(&x)));
                    }
                }
            });
        }
        Stratum::Simplex { vertices, density } => {
            if vertices.len() == 1 {
                let x = &vertices[0];
                let mut idx = [0i64; 3];
                for k in 0..g.n {
                    idx[k] = g.cell_of(x, k);
                }
                out.push((idx, to_point(x), density.eval(x)));
            } else {
                for_cells_in(&s.support_box(), &mut |idx, cb| {
                    for (x, w) in simplex_pieces(vertices, &cb) {
                        out.push((idx, to_point(&x), w * density.eval(&x)));
                    }
                });
            }
        }
        Stratum::Cantor { set, axis, anchor } => {
            let mut base = [0i64; 3];
            for k in 0..g.n {
                base[k] = g.cell_of(anchor, k);
            }
            for (cell, t, w) in set.quadrature(g.origin[*axis], g.h) {
                let mut idx = base;
                idx[*axis] = cell.clamp(0, g.shape[*axis] as i64 - 1);
                let mut x = to_point(anchor);
                x[*axis] = t;
                out.push((idx, x, w));
            }
        }
        Stratum::PointMass { point, weight } => {
            let mut idx = [0i64; 3];
            for k in 0..g.n {
                idx[k] = g.cell_of(point, k);
            }
            out.push((idx, to_point(point), *weight));
        }
        Stratum::Product { a, b } => {
            let na = a.ambient_dim();
            let qa = stratum_quadrature(a, &g.sub(0..na));
            let qb = stratum_quadrature(b, &g.sub(na..g.n));
            for (ia, xa, wa) in &qa {
                for (ib, xb, wb) in &qb {
                    let mut idx = [0i64; 3];
                    let mut x = [0.0; 3];
                    idx[..na].copy_from_slice(&ia[..na]);
                    x[..na].copy_from_slice(&xa[..na]);
                    idx[na..g.n].copy_from_slice(&ib[..g.n - na]);
                    x[na..g.n].copy_from_slice(&xb[..g.n - na]);
                    out.push((idx, x, wa * wb));
                }
            }
        }
    }
    out
}

/// True when some stratum puts mass on a grid hyperplane of the unjittered grid.
fn needs_jitter(spec: &MeasureSpec, h: f64) -> bool {
    spec.strata.iter().any(|s| {
        (0..spec.ambient_dim).any(|k| match s.flat_coordinate(k) {
            Some(c) => {
                let t = (c - spec.bbox.lo[k]) / h;
                (t - t.round()).abs() < 1e-9
            }
            None => false,
        })
    })
}

impl GridSpace {
    pub fn n(&self) -> usize {
        self.geom.n
    }

    pub fn h(&self) -> f64 {
        self.geom.h
    }

    pub fn dof_count(&self) -> usize {
        self.dof_vertices.len()
    }

    pub fn corners(&self) -> usize {
        1 << self.geom.n
    }

    pub fn cell_nodes(&self, c: usize) -> &[QuadNode] {
        &self.nodes[self.cells[c].nodes.clone()]
    }

    /// Active cell id for a grid multi-index.
    pub fn active_cell(&self, idx: &[usize; 3]) -> Option<usize> {
        self.lookup.get(&self.geom.cell_linear(idx)).copied()
    }

    pub fn dof_position(&self, d: usize) -> Point {
        let v = self.dof_vertices[d];
        let mut p = [0.0; 3];
        for k in 0..self.geom.n {
            p[k] = self.geom.origin[k] + v[k] as f64 * self.geom.h;
        }
        p
    }

    pub fn cell_lower_corner(&self, c: usize) -> Point {
        let idx = self.cells[c].index;
        let mut p = [0.0; 3];
        for k in 0..self.geom.n {
            p[k] = self.geom.origin[k] + idx[k] as f64 * self.geom.h;
        }
        p
    }

    pub fn cell_center(&self, c: usize) -> Point {
        let mut p = self.cell_lower_corner(c);
        for k in 0..self.geom.n {
            p[k] += 0.5 * self.geom.h;
        }
        p
    }

    /// μ-weighted centroid of the cell's quadrature nodes.
    pub fn cell_centroid(&self, c: usize) -> Point {
        let mut p = [0.0; 3];
        let nodes = self.cell_nodes(c);
        let m: f64 = nodes.iter().map(|q| q.w).sum();
        if m <= 0.0 {
            return self.cell_center(c);
        }
        for q in nodes {
            for k in 0..self.geom.n {
                p[k] += q.w * q.x[k] / m;
            }
        }
        p
    }

    /// Values and gradients of the `2^n` local basis functions at `x` in cell `c`.
    pub fn basis(&self, c: usize, x: &Point) -> (Vec<f64>, Vec<[f64; 3]>) {
        let n = self.geom.n;
        let h = self.geom.h;
        let lo = self.cell_lower_corner(c);
        let mut xi = [0.0; 3];
        for k in 0..n {
            xi[k] = (x[k] - lo[k]) / h;
        }
        let nc = 1 << n;
        let mut val = vec![0.0; nc];
        let mut grad = vec![[0.0; 3]; nc];
        for corner in 0..nc {
            let f = |k: usize| if corner >> k & 1 == 1 { xi[k] } else { 1.0 - xi[k] };
            let df = |k: usize| if corner >> k & 1 == 1 { 1.0 / h } else { -1.0 / h };
            val[corner] = (0..n).map(f).product();
            for k in 0..n {
                grad[corner][k] = (0..n).map(|j| if j == k { df(j) } else { f(j) }).product();
            }
        }
        (val, grad)
    }

    /// Value and gradient of the interpolant with coefficients `coeffs` at a node.
    pub fn eval(&self, c: usize, x: &Point, coeffs: &[f64]) -> (f64, [f64; 3]) {
        let (val, grad) = self.basis(c, x);
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for (corner, &d) in self.cells[c].dofs.iter().enumerate() {
            v += val[corner] * coeffs[d];
            for k in 0..3 {
                g[k] += grad[corner][k] * coeffs[d];
            }
        }
        (v, g)
    }

    /// Mass of stratum `s` in cell `c`.
    pub fn stratum_mass(&self, c: usize, s: usize) -> f64 {
        self.cell_nodes(c).iter().filter(|q| q.stratum == s).map(|q| q.w).sum()
    }

    /// Cells whose μ-mass exceeds the floor within the stratum `s`.
    pub fn cells_of_stratum(&self, s: usize) -> Vec<usize> {
        (0..self.cells.len()).filter(|&c| self.stratum_mass(c, s) > self.mass_floor).collect()
    }
}

pub fn build_space(spec: &MeasureSpec, h: f64) -> Result<GridSpace> {
    build_space_shared(Arc::new(spec.clone()), h)
}

pub fn build_space_shared(spec: Arc<MeasureSpec>, h: f64) -> Result<GridSpace> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Validation(format!("grid step h = {h} must be positive")));
    }
    let n = spec.ambient_dim;
    for k in 0..n {
        let edge = spec.bbox.hi[k] - spec.bbox.lo[k];
        if edge / h > MAX_CELLS_PER_AXIS as f64 + 1e-9 {
            return Err(Error::Resource(format!(
                "axis {} needs {:.0} cells at h = {h}, limit is {MAX_CELLS_PER_AXIS}",
                k + 1,
                (edge / h).ceil()
            )));
        }
    }
    let jitter = if needs_jitter(&spec, h) { h / std::f64::consts::PI } else { 0.0 };
    let mut origin = [0.0; 3];
    let mut shape = [1; 3];
    for k in 0..n {
        origin[k] = spec.bbox.lo[k] - jitter;
        shape[k] = (((spec.bbox.hi[k] - origin[k]) / h) - 1e-9).ceil().max(1.0) as usize;
    }
    let geom = GridGeom { n, h, origin, shape };

    let per_stratum: Vec<Vec<([i64; 3], Point, f64)>> =
        spec.strata.par_iter().map(|s| stratum_quadrature(s, &geom)).collect();
    let mut by_cell: BTreeMap<usize, ([usize; 3], Vec<QuadNode>)> = BTreeMap::new();
    for (s, q) in per_stratum.into_iter().enumerate() {
        for (idx, x, w) in q {
            if w <= 0.0 {
                continue;
            }
            let idx = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
            let lin = geom.cell_linear(&idx);
            by_cell.entry(lin).or_insert_with(|| (idx, Vec::new())).1.push(QuadNode { x, w, stratum: s });
        }
    }
    let total_mass = spec.total_mass();
    let mass_floor = MASS_FLOOR_REL * total_mass;
    let nc = 1usize << n;
    let mut vertex_ids: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    let mut active: Vec<([usize; 3], usize, f64, Vec<QuadNode>)> = Vec::new();
    for (lin, (idx, nodes)) in by_cell {
        let mass: f64 = nodes.iter().map(|q| q.w).sum();
        if mass <= mass_floor {
            continue;
        }
        for corner in 0..nc {
            let mut v = idx;
            for k in 0..n {
                v[k] += corner >> k & 1;
            }
            vertex_ids.insert(geom.vertex_linear(&v), v);
        }
        active.push((idx, lin, mass, nodes));
    }
    if active.is_empty() {
        return Err(Error::EmptySupport);
    }
    let dof_of: HashMap<usize, usize> = vertex_ids.keys().enumerate().map(|(i, &lin)| (lin, i)).collect();
    let dof_vertices: Vec<[usize; 3]> = vertex_ids.values().copied().collect();
    let mut cells = Vec::with_capacity(active.len());
    let mut nodes_all = Vec::new();
    let mut lookup = HashMap::with_capacity(active.len());
    for (idx, lin, mass, nodes) in active {
        let dofs = (0..nc)
            .map(|corner| {
                let mut v = idx;
                for k in 0..n {
                    v[k] += corner >> k & 1;
                }
                dof_of[&geom.vertex_linear(&v)]
            })
            .collect();
        let start = nodes_all.len();
        nodes_all.extend(nodes);
        lookup.insert(lin, cells.len());
        cells.push(Cell { index: idx, linear: lin, mass, dofs, nodes: start..nodes_all.len() });
    }
    Ok(GridSpace {
        spec,
        geom,
        jitter,
        cells,
        nodes: nodes_all,
        dof_vertices,
        mass_floor,
        total_mass,
        lookup,
    })
}

/// Per-node predicate applied during assembly; nodes it rejects are skipped.
pub type NodeFilter<'a> = &'a (dyn Fn(&QuadNode) -> bool + Sync);

/// Adds one node's contribution to a local element matrix.
type LocalKernel<'a> = &'a (dyn Fn(usize, &QuadNode, &[f64], &[[f64; 3]], &mut [f64]) + Sync);

fn assemble_with(
    space: &GridSpace,
    filter: Option<NodeFilter<'_>>,
    local: LocalKernel<'_>,
) -> CsrMatrix {
    let nc = space.corners();
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..space.cells.len())
        .into_par_iter()
        .map(|c| {
            let mut k = vec![0.0; nc * nc];
            let mut any = false;
            for q in space.cell_nodes(c) {
                if let Some(f) = filter {
                    if !f(q) {
                        continue;
                    }
                }
                any = true;
                let (val, grad) = space.basis(c, &q.x);
                local(c, q, &val, &grad, &mut k);
            }
            if !any {
                return vec![];
            }
            let dofs = &space.cells[c].dofs;
            let mut t = Vec::with_capacity(nc * nc);
            for a in 0..nc {
                for b in 0..nc {
                    t.push((dofs[a], dofs[b], k[a * nc + b]));
                }
            }
            t
        })
        .collect();
    CsrMatrix::from_triplets(space.dof_count(), blocks.into_iter().flatten().collect())
}

pub fn assemble_mass(space: &GridSpace) -> SymmetricForm {
    SymmetricForm { role: FormRole::Mass, matrix: assemble_mass_filtered(space, None) }
}

pub fn assemble_stiffness(space: &GridSpace) -> SymmetricForm {
    SymmetricForm { role: FormRole::Stiffness, matrix: assemble_stiffness_filtered(space, None) }
}

pub(crate) fn assemble_mass_filtered(space: &GridSpace, filter: Option<NodeFilter<'_>>) -> CsrMatrix {
    let nc = space.corners();
    assemble_with(space, filter, &|_, q, val, _, k| {
        for a in 0..nc {
            for b in 0..nc {
                k[a * nc + b] += q.w * val[a] * val[b];
            }
        }
    })
}

pub(crate) fn assemble_stiffness_filtered(space: &GridSpace, filter: Option<NodeFilter<'_>>) -> CsrMatrix {
    let nc = space.corners();
    assemble_with(space, filter, &|_, q, _, grad, k| {
        for a in 0..nc {
            for b in 0..nc {
                let dot: f64 = (0..3).map(|j| grad[a][j] * grad[b][j]).sum();
                k[a * nc + b] += q.w * dot;
            }
        }
    })
}

/// Stiffness with each basis gradient replaced by a cellwise linear map of
/// it (`project(c, g)`), e.g. the orthogonal projection onto a fiber.
pub(crate) fn assemble_projected_stiffness(
    space: &GridSpace,
    project: &(dyn Fn(usize, [f64; 3]) -> [f64; 3] + Sync),
) -> CsrMatrix {
    let nc = space.corners();
    assemble_with(space, None, &|c, q, _, grad, k| {
        let pg: Vec<[f64; 3]> = grad.iter().map(|g| project(c, *g)).collect();
        for a in 0..nc {
            for b in 0..nc {
                let dot: f64 = (0..3).map(|j| pg[a][j] * pg[b][j]).sum();
                k[a * nc + b] += q.w * dot;
            }
        }
    })
}

/// ∫ φ_i dμ for every dof.
pub fn basis_integrals(space: &GridSpace) -> Vec<f64> {
    let mut out = vec![0.0; space.dof_count()];
    for c in 0..space.cells.len() {
        for q in space.cell_nodes(c) {
            let (val, _) = space.basis(c, &q.x);
            for (a, &d) in space.cells[c].dofs.iter().enumerate() {
                out[d] += q.w * val[a];
            }
        }
    }
    out
}

/// Mass-weighted mean over the cell's nodes of the interpolant's gradient.
pub fn sample_gradient(space: &GridSpace, coeffs: &[f64], cell: usize) -> Result<[f64; 3]> {
    if cell >= space.cells.len() {
        return Err(Error::InactiveCell(cell));
    }
    let mut g = [0.0; 3];
    let mut m = 0.0;
    for q in space.cell_nodes(cell) {
        let (_, gq) = space.eval(cell, &q.x, coeffs);
        for k in 0..3 {
            g[k] += q.w * gq[k];
        }
        m += q.w;
    }
    for v in g.iter_mut() {
        *v /= m;
    }
    Ok(g)
}

/// Vertex interpolation of a closed-form function.
pub fn project_function(space: &GridSpace, f: &Expr) -> Result<Vec<f64>> {
    (0..space.dof_count()).map(|d| f.try_eval(&space.dof_position(d)[..space.n()])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cantor::{CantorSet, CantorVariant};

    fn unit_square() -> MeasureSpec {
        let bx = AaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        MeasureSpec::new("sq", bx.clone(), vec![Stratum::AcDensity { region: bx, density: Expr::constant(1.0) }]).unwrap()
    }

    fn segment() -> MeasureSpec {
        MeasureSpec::new(
            "seg",
            AaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            vec![Stratum::Simplex { vertices: vec![vec![0.0, 0.0], vec![1.0, 0.0]], density: Expr::constant(1.0) }],
        )
        .unwrap()
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
    fn segment_on_grid_line_is_jittered() {
        let space = build_space(&segment(), 0.25).unwrap();
        assert!(space.jitter > 0.0);
        assert_eq!(space.cells.len(), 5); // four cells plus the piece left of the jittered origin's first column
        let m: f64 = space.cells.iter().map(|c| c.mass).sum();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ternary_coarse_cells() {
        let space = build_space(&ternary(), 1.0 / 3.0).unwrap();
        assert_eq!(space.jitter, 0.0);
        assert_eq!(space.cells.len(), 2);
        for c in &space.cells {
            assert!((c.mass - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_too_large() {
        assert!(matches!(build_space(&unit_square(), 1.0 / 5000.0), Err(Error::Resource(_))));
    }

    #[test]
    fn mass_partition_of_unity_and_linear_energy() {
        for h in [0.5, 0.25, 1.0 / 16.0] {
            let space = build_space(&unit_square(), h).unwrap();
            let m = assemble_mass(&space).matrix;
            let g = assemble_stiffness(&space).matrix;
            let ones = vec![1.0; space.dof_count()];
            assert!((m.quad_form(&ones) - 1.0).abs() < 1e-12);
            assert!(g.quad_form(&ones).abs() < 1e-12);
            let x1 = project_function(&space, &Expr::parse("x1").unwrap()).unwrap();
            assert!((g.quad_form(&x1) - 1.0).abs() < 1e-8);
            let rs = m.row_sums();
            let bi = basis_integrals(&space);
            for (a, b) in rs.iter().zip(&bi) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tangential_energy_on_segment() {
        let space = build_space(&segment(), 1.0 / 8.0).unwrap();
        let g = assemble_stiffness(&space).matrix;
        let x1 = project_function(&space, &Expr::parse("x1").unwrap()).unwrap();
        assert!((g.quad_form(&x1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_samples() {
        let space = build_space(&unit_square(), 1.0 / 16.0).unwrap();
        let y = project_function(&space, &Expr::parse("x2").unwrap()).unwrap();
        let zero = vec![0.0; space.dof_count()];
        let sq = project_function(&space, &Expr::parse("x1^2").unwrap()).unwrap();
        for c in 0..space.cells.len() {
            let g = sample_gradient(&space, &y, c).unwrap();
            assert!(g[0].abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12);
            assert_eq!(sample_gradient(&space, &zero, c).unwrap(), [0.0; 3]);
            let gs = sample_gradient(&space, &sq, c).unwrap();
            let cx = space.cell_center(c)[0];
            // finite-difference oracle: secant slope of x² over the cell is 2·center
            let fd = ((cx + space.h() / 2.0).powi(2) - (cx - space.h() / 2.0).powi(2)) / space.h();
            assert!((gs[0] - fd).abs() < 1e-12 && (gs[0] - 2.0 * cx).abs() <= space.h());
        }
        assert!(matches!(sample_gradient(&space, &y, 10_000), Err(Error::InactiveCell(_))));
    }

    fn cosine_interpolation_error(h: f64) -> f64 {
        let bx = AaBox::new(vec![0.0], vec![1.0]);
        let spec = MeasureSpec::new("I", bx.clone(), vec![Stratum::AcDensity { region: bx, density: Expr::constant(1.0) }]).unwrap();
        let space = build_space(&spec, h).unwrap();
        let f = Expr::parse("cos(pi*x1)").unwrap();
        let c = project_function(&space, &f).unwrap();
        let mut err = 0.0;
        for cell in 0..space.cells.len() {
            // five-point midpoint sampling, independent of the assembly nodes
            let a = space.cell_lower_corner(cell)[0];
            for k in 0..5 {
                let x = a + (k as f64 + 0.5) * h / 5.0;
                let (v, _) = space.eval(cell, &[x, 0.0, 0.0], &c);
                err += (v - (std::f64::consts::PI * x).cos()).powi(2) * h / 5.0;
            }
        }
        err.sqrt()
    }

    #[test]
    fn interpolation_converges_at_second_order() {
        let errs: Vec<f64> = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0].iter().map(|&h| cosine_interpolation_error(h)).collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((1.8..2.2).contains(&slope), "{errs:?}");
        }
    }

    #[test]
    fn mass_and_stiffness_are_psd() {
        let space = build_space(&segment(), 1.0 / 8.0).unwrap();
        let m = assemble_mass(&space).matrix.to_dense();
        let g = assemble_stiffness(&space).matrix.to_dense();
        for a in [m, g] {
            let eig = nalgebra::SymmetricEigen::new(a.clone());
            let scale = eig.eigenvalues.amax();
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12 * scale));
            assert!((&a - a.transpose()).amax() <= 1e-14 * scale);
        }
    }
}
