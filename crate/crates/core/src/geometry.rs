//! Axis-aligned boxes and exact clipping of simplices against them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        AaBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).max(0.0)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(a, b)| b <= a)
    }

    pub fn intersect(&self, other: &AaBox) -> AaBox {
        AaBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn contains_point(&self, p: &[f64], slack: f64) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| *x >= a - slack && *x <= b + slack)
    }

    pub fn contains_box(&self, other: &AaBox, slack: f64) -> bool {
        self.contains_point(&other.lo, slack) && self.contains_point(&other.hi, slack)
    }

    /// Sub-box on the coordinate range `range`.
    pub fn project(&self, range: std::ops::Range<usize>) -> AaBox {
        AaBox { lo: self.lo[range.clone()].to_vec(), hi: self.hi[range].to_vec() }
    }

    pub fn product(&self, other: &AaBox) -> AaBox {
        AaBox {
            lo: self.lo.iter().chain(&other.lo).copied().collect(),
            hi: self.hi.iter().chain(&other.hi).copied().collect(),
        }
    }

    pub fn bounding(points: &[Vec<f64>]) -> AaBox {
        let n = points[0].len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in points {
            for k in 0..n {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        AaBox { lo, hi }
    }
}

/// Parameter interval `[t0, t1]` of `a + t (b - a)`, `t ∈ [0,1]`, inside the box.
pub fn clip_segment(a: &[f64], b: &[f64], bx: &AaBox) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..a.len() {
        let d = b[k] - a[k];
        if d.abs() < 1e-300 {
            if a[k] < bx.lo[k] || a[k] > bx.hi[k] {
                return None;
            }
            continue;
        }
        let mut s0 = (bx.lo[k] - a[k]) / d;
        let mut s1 = (bx.hi[k] - a[k]) / d;
        if s0 > s1 {
            std::mem::swap(&mut s0, &mut s1);
        }
        t0 = t0.max(s0);
        t1 = t1.min(s1);
        if t1 <= t0 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Sutherland–Hodgman clipping of a planar polygon (in any ambient dimension)
/// by the box's `2n` half-spaces.
pub fn clip_polygon(poly: &[Vec<f64>], bx: &AaBox) -> Vec<Vec<f64>> {
    let mut cur: Vec<Vec<f64>> = poly.to_vec();
    for k in 0..bx.dim() {
        for (bound, keep_above) in [(bx.lo[k], true), (bx.hi[k], false)] {
            if cur.is_empty() {
                return cur;
            }
            let inside = |p: &Vec<f64>| if keep_above { p[k] >= bound } else { p[k] <= bound };
            let mut next = Vec::with_capacity(cur.len() + 2);
            for i in 0..cur.len() {
                let p = &cur[i];
                let q = &cur[(i + 1) % cur.len()];
                let (pin, qin) = (inside(p), inside(q));
                if pin {
                    next.push(p.clone());
                }
                if pin != qin {
                    let t = (bound - p[k]) / (q[k] - p[k]);
                    let mut x: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect();
                    x[k] = bound;
                    next.push(x);
                }
            }
            cur = next;
        }
    }
    cur
}

pub fn triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let v: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let uv: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    0.5 * (uu * vv - uv * uv).max(0.0).sqrt()
}

/// Degree-4 symmetric rule on a triangle with positive weights
/// (barycentric coordinates, weights summing to 1).
pub const TRIANGLE_RULE: [([f64; 3], f64); 6] = [
    ([0.108_103_018_168_070, 0.445_948_490_915_965, 0.445_948_490_915_965], 0.223_381_589_678_011),
    ([0.445_948_490_915_965, 0.108_103_018_168_070, 0.445_948_490_915_965], 0.223_381_589_678_011),
    ([0.445_948_490_915_965, 0.445_948_490_915_965, 0.108_103_018_168_070], 0.223_381_589_678_011),
    ([0.816_847_572_980_459, 0.091_576_213_509_771, 0.091_576_213_509_771], 0.109_951_743_655_322),
    ([0.091_576_213_509_771, 0.816_847_572_980_459, 0.091_576_213_509_771], 0.109_951_743_655_322),
    ([0.091_576_213_509_771, 0.091_576_213_509_771, 0.816_847_572_980_459], 0.109_951_743_655_322),
];

/// Nodes and area-weights of the degree-4 rule over a convex polygon
/// (fan triangulation).
pub fn polygon_rule(poly: &[Vec<f64>]) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    if poly.len() < 3 {
        return out;
    }
    let a = &poly[0];
    for i in 1..poly.len() - 1 {
        let (b, c) = (&poly[i], &poly[i + 1]);
        let area = triangle_area(a, b, c);
        if area <= 0.0 {
            continue;
        }
        for (bary, w) in TRIANGLE_RULE {
            let x: Vec<f64> = (0..a.len()).map(|k| bary[0] * a[k] + bary[1] * b[k] + bary[2] * c[k]).collect();
            out.push((x, w * area));
        }
    }
    out
}
