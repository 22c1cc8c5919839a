//! Linear subspaces of ℝⁿ (n ≤ 3) held by orthonormal bases.

use nalgebra::{DMatrix, SymmetricEigen};

pub type Vector = [f64; 3];

/// Relative singular-value floor below which directions are roundoff.
const ROUNDOFF_FLOOR: f64 = 1e-7;

/// Orthonormal basis of a subspace of ℝⁿ; columns are stored as `[f64; 3]`
/// with unused trailing coordinates zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    pub n: usize,
    pub basis: Vec<Vector>,
}

pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vector) -> f64 {
    dot(a, a).sqrt()
}

impl Subspace {
    pub fn zero(n: usize) -> Self {
        Subspace { n, basis: vec![] }
    }

    pub fn full(n: usize) -> Self {
        Subspace { n, basis: (0..n).map(unit).collect() }
    }

    /// Orthonormalised span of `vectors`; directions below `rel_tol` times the
    /// largest input norm are discarded.
    pub fn span(n: usize, vectors: &[Vector], rel_tol: f64) -> Self {
        span_weighted(n, vectors, rel_tol)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, w: &Vector) -> Vector {
        let mut out = [0.0; 3];
        for b in &self.basis {
            let c = dot(b, w);
            for k in 0..3 {
                out[k] += c * b[k];
            }
        }
        out
    }

    pub fn projector(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n, self.n);
        for b in &self.basis {
            for i in 0..self.n {
                for j in 0..self.n {
                    p[(i, j)] += b[i] * b[j];
                }
            }
        }
        p
    }

    pub fn complement(&self) -> Self {
        let mut p = DMatrix::identity(self.n, self.n) - self.projector();
        p = (&p + p.transpose()) * 0.5;
        let eig = SymmetricEigen::new(p);
        let mut basis: Vec<Vector> = Vec::new();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for &i in order.iter().take(self.n - self.dim()) {
            let mut v = [0.0; 3];
            for k in 0..self.n {
                v[k] = eig.eigenvectors[(k, i)];
            }
            basis.push(v);
        }
        Subspace { n: self.n, basis }
    }

    /// Largest distance from a basis-normalised vector of `self` to `other`.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        self.basis
            .iter()
            .map(|b| {
                let p = other.project(b);
                norm(&[b[0] - p[0], b[1] - p[1], b[2] - p[2]])
            })
            .fold(0.0, f64::max)
    }

    /// Image under an axis permutation `x ↦ y` with `y[perm[k]] = x[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let basis = self
            .basis
            .iter()
            .map(|b| {
                let mut v = [0.0; 3];
                for k in 0..self.n {
                    v[perm[k]] = b[k];
                }
                v
            })
            .collect();
        Subspace { n: self.n, basis }
    }

    /// Direct sum with a subspace of the trailing coordinates.
    pub fn direct_sum(&self, other: &Subspace) -> Self {
        let n = self.n + other.n;
        let mut basis = self.basis.clone();
        for b in &other.basis {
            let mut v = [0.0; 3];
            v[self.n..n].copy_from_slice(&b[..other.n]);
            basis.push(v);
        }
        Subspace { n, basis }
    }
}

pub fn unit(k: usize) -> Vector {
    let mut v = [0.0; 3];
    v[k] = 1.0;
    v
}

/// Orthonormal span of weighted vectors: left singular vectors of the
/// matrix whose columns are `vectors`, keeping singular values at least
/// `rel_tol` times the largest.
pub fn span_weighted(n: usize, vectors: &[Vector], rel_tol: f64) -> Subspace {
    let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
    for v in vectors {
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] += v[i] * v[j];
            }
        }
    }
    let eig = SymmetricEigen::new(gram);
    let smax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b)).max(0.0).sqrt();
    if smax == 0.0 {
        return Subspace::zero(n);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i].max(0.0).sqrt() >= rel_tol.max(ROUNDOFF_FLOOR) * smax)
        .map(|i| {
            let mut v = [0.0; 3];
            for k in 0..n {
                v[k] = eig.eigenvectors[(k, i)];
            }
            v
        })
        .collect();
    Subspace { n, basis }
}

/// Hausdorff distance between the closed unit balls of two subspaces.
///
/// Equal dimensions give `‖P_A − P_B‖₂ = sin θ_max`; different dimensions
/// give 1, since a unit vector orthogonal to the smaller space is then at
/// distance 1 from its ball.
pub fn grassmann_distance(a: &Subspace, b: &Subspace) -> f64 {
    if a.dim() != b.dim() {
        return 1.0;
    }
    if a.dim() == 0 {
        return 0.0;
    }
    let d = a.projector() - b.projector();
    let eig = SymmetricEigen::new((&d + d.transpose()) * 0.5);
    eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Hausdorff distance of unit balls estimated by sampling both balls.
    fn sampled_distance(a: &Subspace, b: &Subspace, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
        let dist_to_ball = |x: &Vector, s: &Subspace| {
            let p = s.project(x);
            let np = norm(&p);
            let q = if np > 1.0 { [p[0] / np, p[1] / np, p[2] / np] } else { p };
            norm(&[x[0] - q[0], x[1] - q[1], x[2] - q[2]])
        };
        let mut best: f64 = 0.0;
        for _ in 0..samples / 2 {
            for (from, to) in [(a, b), (b, a)] {
                if from.dim() == 0 {
                    continue;
                }
                let r: f64 = rng.random::<f64>().powf(1.0 / from.dim() as f64);
                let mut x = [0.0; 3];
                let coeffs: Vec<f64> = (0..from.dim()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let cn: f64 = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-300);
                for (c, v) in coeffs.iter().zip(&from.basis) {
                    for k in 0..3 {
                        x[k] += r * c / cn * v[k];
                    }
                }
                best = best.max(dist_to_ball(&x, to));
            }
        }
        best
    }

    #[test]
    fn distances_match_sampling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e1 = Subspace::span(2, &[unit(0)], 1e-12);
        let e2 = Subspace::span(2, &[unit(1)], 1e-12);
        let diag = Subspace::span(2, &[[1.0, 1.0, 0.0]], 1e-12);
        assert_eq!(grassmann_distance(&e1, &e1), 0.0);
        for (a, b) in [(&e1, &e2), (&e1, &diag), (&Subspace::zero(2), &e1)] {
            let exact = grassmann_distance(a, b);
            let sampled = sampled_distance(a, b, 100_000, &mut rng);
            assert!((exact - sampled).abs() < 1e-3, "{exact} vs {sampled}");
        }
        assert_eq!(grassmann_distance(&Subspace::zero(2), &e1), 1.0);
    }

    #[test]
    fn complements() {
        assert_eq!(Subspace::zero(3).complement().dim(), 3);
        let e2 = Subspace::span(2, &[unit(1)], 1e-12);
        assert!(grassmann_distance(&e2.complement(), &Subspace::span(2, &[unit(0)], 1e-12)) < 1e-12);
        let d = Subspace::span(2, &[[1.0, 1.0, 0.0]], 1e-12);
        let anti = Subspace::span(2, &[[1.0, -1.0, 0.0]], 1e-12);
        assert!(grassmann_distance(&d.complement(), &anti) < 1e-12);
        assert!(grassmann_distance(&d.complement().complement(), &d) < 1e-12);
    }

    #[test]
    fn projections() {
        let d = Subspace::span(2, &[[1.0, 1.0, 0.0]], 1e-12);
        let p = d.project(&unit(0));
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let e2 = Subspace::span(2, &[unit(1)], 1e-12);
        assert_eq!(e2.project(&unit(0)), [0.0; 3]);
    }
}
