//! Cantor-type sets on an interval, truncated at a finite generation.
//!
//! `Ternary` carries the self-similar Cantor probability measure (scaled by
//! a constant weight); at the truncation generation the mass of each of the
//! `2^G` intervals is spread uniformly over it. `SmithVolterra` removes, at
//! generation `g`, an open middle gap of length `4^-g` (relative to the
//! parent interval length) from each surviving interval and carries the
//! weighted Lebesgue measure on what is left after `G` generations.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CantorVariant {
    Ternary,
    SmithVolterra,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CantorSet {
    pub variant: CantorVariant,
    pub lo: f64,
    pub hi: f64,
    pub generations: u32,
    pub weight: f64,
    /// Length of a single interval at each depth `0..=G`.
    lengths: Vec<f64>,
}

/// Two-point Gauss abscissae on [0, 1].
pub(crate) const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

impl CantorSet {
    pub fn new(variant: CantorVariant, lo: f64, hi: f64, generations: u32, weight: f64) -> Self {
        let width = hi - lo;
        let mut lengths = Vec::with_capacity(generations as usize + 1);
        lengths.push(width);
        for d in 0..generations as usize {
            let l = lengths[d];
            let next = match variant {
                CantorVariant::Ternary => l / 3.0,
                CantorVariant::SmithVolterra => (l - width * 0.25f64.powi(d as i32 + 1)) / 2.0,
            };
            lengths.push(next);
        }
        CantorSet { variant, lo, hi, generations, weight, lengths }
    }

    fn child_offsets(&self, depth: usize) -> f64 {
        // Offset of the right child relative to the parent's left endpoint.
        self.lengths[depth] - self.lengths[depth + 1]
    }

    /// Mass carried by a single interval at `depth`.
    pub fn interval_mass(&self, depth: usize) -> f64 {
        let g = self.generations as usize;
        match self.variant {
            CantorVariant::Ternary => self.weight * 0.5f64.powi(depth as i32),
            CantorVariant::SmithVolterra => self.weight * self.lengths[g] * 2f64.powi((g - depth) as i32),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.interval_mass(0)
    }

    /// Upper bound on the cell-mass error caused by stopping at generation `G`.
    pub fn truncation_bound(&self) -> f64 {
        match self.variant {
            CantorVariant::Ternary => 2.0 * self.interval_mass(self.generations as usize),
            CantorVariant::SmithVolterra => {
                self.weight * (self.hi - self.lo) * 0.5f64.powi(self.generations as i32 + 1)
            }
        }
    }

    /// Exact mass of `[a, b]` for the generation-`G` measure.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.mass_rec(self.lo, 0, a, b)
    }

    fn mass_rec(&self, left: f64, depth: usize, a: f64, b: f64) -> f64 {
        let len = self.lengths[depth];
        let right = left + len;
        if right <= a || left >= b {
            return 0.0;
        }
        if left >= a && right <= b {
            return self.interval_mass(depth);
        }
        if depth == self.generations as usize {
            let overlap = right.min(b) - left.max(a);
            return self.interval_mass(depth) * overlap / len;
        }
        let off = self.child_offsets(depth);
        self.mass_rec(left, depth + 1, a, b) + self.mass_rec(left + off, depth + 1, a, b)
    }

    /// Surviving intervals at `depth` (used by tests and diagnostics).
    pub fn intervals(&self, depth: usize) -> Vec<(f64, f64)> {
        let mut out = vec![self.lo];
        for d in 0..depth {
            let off = self.child_offsets(d);
            out = out.iter().flat_map(|&l| [l, l + off]).collect();
        }
        let len = self.lengths[depth];
        out.into_iter().map(|l| (l, l + len)).collect()
    }

    /// Quadrature on a 1-D grid `origin + i*h`: returns `(cell, node, weight)`
    /// triples whose weights sum, per cell, to the exact cell mass.
    pub fn quadrature(&self, origin: f64, h: f64) -> Vec<(i64, f64, f64)> {
        let mut out = Vec::new();
        self.quad_rec(self.lo, 0, origin, h, &mut out);
        out
    }

    fn quad_rec(&self, left: f64, depth: usize, origin: f64, h: f64, out: &mut Vec<(i64, f64, f64)>) {
        let len = self.lengths[depth];
        let right = left + len;
        // endpoints within 1e-9 h of a grid line are snapped to it
        let first = ((left - origin) / h + 1e-9).floor() as i64;
        let last = (((right - origin) / h - 1e-9).ceil() as i64 - 1).max(first);
        let mass = self.interval_mass(depth);
        let at_bottom = depth == self.generations as usize;
        if first >= last && (len <= 0.5 * h || at_bottom) {
            for g in GAUSS2 {
                out.push((first, left + g * len, 0.5 * mass));
            }
            return;
        }
        if !at_bottom {
            let off = self.child_offsets(depth);
            self.quad_rec(left, depth + 1, origin, h, out);
            self.quad_rec(left + off, depth + 1, origin, h, out);
            return;
        }
        for cell in first..=last {
            let a = left.max(origin + cell as f64 * h);
            let b = right.min(origin + (cell + 1) as f64 * h);
            if b > a {
                let w = mass * (b - a) / len;
                for g in GAUSS2 {
                    out.push((cell, a + g * (b - a), 0.5 * w));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ternary_self_similarity() {
        let c = CantorSet::new(CantorVariant::Ternary, 0.0, 1.0, 20, 1.0);
        assert_eq!(c.total_mass(), 1.0);
        assert!((c.mass_in(0.0, 1.0 / 3.0) - 0.5).abs() < 1e-12);
        assert!((c.mass_in(0.0, 1.0 / 9.0) - 0.25).abs() < 1e-12);
        assert!(c.mass_in(1.0 / 3.0 + 1e-9, 2.0 / 3.0 - 1e-9).abs() < 1e-15);
    }

    /// Independent oracle: sum of surviving interval lengths built by
    /// explicit interval subtraction.
    fn svc_residual_by_subtraction(g: u32) -> f64 {
        let mut intervals = vec![(0.0f64, 1.0f64)];
        for k in 1..=g {
            let gap = 0.25f64.powi(k as i32);
            intervals = intervals
                .into_iter()
                .flat_map(|(a, b)| {
                    let m = 0.5 * (a + b);
                    [(a, m - gap / 2.0), (m + gap / 2.0, b)]
                })
                .collect();
        }
        intervals.iter().map(|(a, b)| b - a).sum()
    }

    #[test]
    fn svc_residual_length_matches_subtraction_oracle() {
        for g in [1, 2, 5, 12] {
            let c = CantorSet::new(CantorVariant::SmithVolterra, 0.0, 1.0, g, 1.0);
            let oracle = svc_residual_by_subtraction(g);
            assert!((c.total_mass() - oracle).abs() < 1e-12, "g={g}");
            assert!((c.mass_in(0.0, 1.0) - oracle).abs() < 1e-12);
            // closed form 1/2 + 2^{-G-1}
            assert!((oracle - (0.5 + 0.5f64.powi(g as i32 + 1))).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_reproduces_cell_masses() {
        for variant in [CantorVariant::Ternary, CantorVariant::SmithVolterra] {
            let c = CantorSet::new(variant, 0.0, 1.0, 14, 2.0);
            let h = 1.0 / 37.0;
            let origin = -0.013;
            let q = c.quadrature(origin, h);
            let mut per_cell = std::collections::BTreeMap::new();
            for (cell, x, w) in q {
                assert!(x >= origin + cell as f64 * h - 1e-12 && x <= origin + (cell + 1) as f64 * h + 1e-12);
                *per_cell.entry(cell).or_insert(0.0) += w;
            }
            for (cell, m) in per_cell {
                let a = origin + cell as f64 * h;
                let exact = c.mass_in(a, a + h);
                assert!((m - exact).abs() < 1e-12 * c.total_mass(), "{variant:?} cell {cell}");
            }
        }
    }
}
