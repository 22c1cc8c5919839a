//! Generalized Rayleigh quotients σ = cᵀMc / cᵀGc of the (mass, stiffness) pencil.

use crate::discretization::{assemble_mass, assemble_stiffness, GridSpace};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LdlFactor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const DENSE_LIMIT: usize = 2000;
const THETA_FLOOR: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralPair {
    pub sigma: f64,
    /// Normalised so that cᵀGc = 1.
    pub coeffs: Vec<f64>,
}

/// The `k` smallest σ with cᵀGc > 0, nondecreasing.
///
/// Solved as G c = θ (M + G) c with σ = 1/θ − 1; θ = 0 (the kernel of G,
/// constants on each connected piece) is deflated.
pub fn null_gradient_spectrum(space: &GridSpace, k: usize) -> Result<Vec<SpectralPair>> {
    let m = assemble_mass(space).matrix;
    let g = assemble_stiffness(space).matrix;
    spectrum_of(&m, &g, k)
}

pub fn spectrum_of(m: &CsrMatrix, g: &CsrMatrix, k: usize) -> Result<Vec<SpectralPair>> {
    if k > m.n {
        return Err(Error::Precondition(format!("requested {k} eigenpairs of a {}-dof pencil", m.n)));
    }
    let b = regularised_sum(m, g);
    let mut pairs = if m.n <= DENSE_LIMIT { dense(&b, g, k)? } else { lanczos(&b, g, k)? };
    pairs.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    pairs.truncate(k);
    Ok(pairs)
}

fn regularised_sum(m: &CsrMatrix, g: &CsrMatrix) -> CsrMatrix {
    let b = m.add_scaled(g, 1.0);
    let shift = 1e-13 * b.trace() / b.n.max(1) as f64;
    b.add_diagonal(&vec![shift; b.n])
}

fn to_pair(theta: f64, c: Vec<f64>, g: &CsrMatrix) -> SpectralPair {
    let gn = g.quad_form(&c).max(1e-300).sqrt();
    SpectralPair { sigma: (1.0 / theta - 1.0).max(0.0), coeffs: c.into_iter().map(|v| v / gn).collect() }
}

fn dense(b: &CsrMatrix, g: &CsrMatrix, k: usize) -> Result<Vec<SpectralPair>> {
    let chol = b
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::solver("mass + stiffness is not positive definite", f64::NAN))?;
    let l = chol.l();
    let gd = g.to_dense();
    let linv_g = l.solve_lower_triangular(&gd).ok_or_else(|| Error::solver("triangular solve failed", f64::NAN))?;
    let c = l
        .solve_lower_triangular(&linv_g.transpose())
        .ok_or_else(|| Error::solver("triangular solve failed", f64::NAN))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut idx: Vec<usize> = (0..b.n).filter(|&i| eig.eigenvalues[i] > THETA_FLOOR).collect();
    idx.sort_by(|&a, &bb| eig.eigenvalues[bb].total_cmp(&eig.eigenvalues[a]));
    let lt = l.transpose();
    idx.into_iter()
        .take(k)
        .map(|i| {
            let y = eig.eigenvectors.column(i).into_owned();
            let x = lt.solve_upper_triangular(&y).ok_or_else(|| Error::solver("back substitution failed", f64::NAN))?;
            Ok(to_pair(eig.eigenvalues[i].min(1.0), x.iter().copied().collect(), g))
        })
        .collect()
}

/// Lanczos on B⁻¹G in the B inner product with full reorthogonalisation.
fn lanczos(b: &CsrMatrix, g: &CsrMatrix, k: usize) -> Result<Vec<SpectralPair>> {
    let n = b.n;
    let fact = LdlFactor::new(b, 1e-14);
    let mut steps = (2 * k + 40).min(n);
    loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut alpha = Vec::with_capacity(steps);
        let mut beta: Vec<f64> = Vec::with_capacity(steps);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 104_729) as f64 * 1e-5).collect();
        let nb = b.quad_form(&v).sqrt();
        v.iter_mut().for_each(|x| *x /= nb);
        for j in 0..steps {
            let mut w = fact.solve(&g.mul_vec(&v));
            let bw_dot_v = b.bilinear(&w, &v);
            alpha.push(bw_dot_v);
            basis.push(v.clone());
            for _ in 0..2 {
                for q in &basis {
                    let c = b.bilinear(&w, q);
                    w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let bn = b.quad_form(&w).max(0.0).sqrt();
            if j + 1 == steps || bn < 1e-14 {
                break;
            }
            beta.push(bn);
            v = w.into_iter().map(|x| x / bn).collect();
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let mut idx: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > THETA_FLOOR).collect();
        idx.sort_by(|&a, &bb| eig.eigenvalues[bb].total_cmp(&eig.eigenvalues[a]));
        idx.truncate(k);
        let mut worst: f64 = 0.0;
        let mut out = Vec::with_capacity(idx.len());
        for &i in &idx {
            let y: DVector<f64> = eig.eigenvectors.column(i).into_owned();
            let mut x = vec![0.0; n];
            for (q, yq) in basis.iter().zip(y.iter()) {
                x.iter_mut().zip(q).for_each(|(a, b)| *a += yq * b);
            }
            let theta = eig.eigenvalues[i];
            let gx = g.mul_vec(&x);
            let bx = b.mul_vec(&x);
            let r: f64 = gx.iter().zip(&bx).map(|(a, c)| (a - theta * c).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = bx.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
            worst = worst.max(r / scale);
            out.push(to_pair(theta.min(1.0), x, g));
        }
        if worst <= RESIDUAL_TOL {
            return Ok(out);
        }
        if steps >= n.min(4 * k + 400) {
            return Err(Error::solver(format!("Lanczos did not converge after {steps} steps"), worst));
        }
        steps = (2 * steps).min(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cantor::{CantorSet, CantorVariant};
    use crate::discretization::build_space;
    use crate::expr::Expr;
    use crate::geometry::AaBox;
    use crate::measure::{MeasureSpec, Stratum};

    fn interval() -> MeasureSpec {
        let bx = AaBox::new(vec![0.0], vec![1.0]);
        MeasureSpec::new("I", bx.clone(), vec![Stratum::AcDensity { region: bx, density: Expr::constant(1.0) }]).unwrap()
    }

    #[test]
    fn interval_spectrum_bounds() {
        let h = 1.0 / 64.0;
        let space = build_space(&interval(), h).unwrap();
        let spec = null_gradient_spectrum(&space, 64).unwrap();
        assert_eq!(spec.len(), 64);
        // the alternating mode has Rayleigh quotient exactly h²/12
        assert!((spec[0].sigma / (h * h / 12.0) - 1.0).abs() < 1e-7, "{}", spec[0].sigma);
        // the largest quotient approaches the first Neumann mode 1/π²
        let top = spec.last().unwrap().sigma;
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((top * pi2 - 1.0).abs() < 2e-3, "{top}");
        for w in spec.windows(2) {
            assert!(w[0].sigma <= w[1].sigma);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let space = build_space(&interval(), 1.0 / 40.0).unwrap();
        let m = assemble_mass(&space).matrix;
        let g = assemble_stiffness(&space).matrix;
        let b = regularised_sum(&m, &g);
        let mut d = dense(&b, &g, 5).unwrap();
        let mut l = lanczos(&b, &g, 5).unwrap();
        d.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
        l.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
        for (a, b) in d.iter().zip(&l) {
            assert!((a.sigma - b.sigma).abs() < 1e-9 * a.sigma.max(1e-3));
        }
    }

    #[test]
    fn ternary_has_many_small_quotients() {
        let spec = MeasureSpec::new(
            "C",
            AaBox::new(vec![0.0], vec![1.0]),
            vec![Stratum::Cantor { set: CantorSet::new(CantorVariant::Ternary, 0.0, 1.0, 12, 1.0), axis: 0, anchor: vec![0.0] }],
        )
        .unwrap();
        let h = 3f64.powi(-6);
        let space = build_space(&spec, h).unwrap();
        let s = null_gradient_spectrum(&space, 20).unwrap();
        assert!(s.iter().filter(|p| p.sigma <= h * h).count() >= 10);
    }

    #[test]
    fn point_mass_quotients_vanish() {
        let spec = MeasureSpec::new(
            "p",
            AaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            vec![Stratum::PointMass { point: vec![0.3, 0.6], weight: 1.0 }],
        )
        .unwrap();
        let space = build_space(&spec, 0.25).unwrap();
        let s = null_gradient_spectrum(&space, 4).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|p| p.sigma < 1e-10));
    }
}
