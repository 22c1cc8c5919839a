//! Compressed sparse rows and an envelope LDLᵀ factorisation.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_unstable_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut data: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix { n, indptr, indices, data }
    }

    pub fn zeros(n: usize) -> Self {
        CsrMatrix { n, indptr: vec![0; n + 1], indices: vec![], data: vec![] }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// `self + s * other` (same dimension).
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.n {
            trip.extend(self.row(i).map(|(j, v)| (i, j, v)));
            trip.extend(other.row(i).map(|(j, v)| (i, j, s * v)));
        }
        CsrMatrix::from_triplets(self.n, trip)
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> CsrMatrix {
        let mut trip: Vec<(usize, usize, f64)> = (0..self.n).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect();
        trip.extend(d.iter().enumerate().map(|(i, v)| (i, i, *v)));
        CsrMatrix::from_triplets(self.n, trip)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut trip = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (j, v) in self.row(old_i) {
                if map[j] != usize::MAX {
                    trip.push((new_i, map[j], v));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), trip)
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric sparsity pattern.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree: Vec<usize> = (0..n).map(|i| a.indptr[i + 1] - a.indptr[i]).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !seen[j]).collect();
            nb.sort_by_key(|&j| (degree[j], j));
            for j in nb {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    order.reverse();
    order
}

/// LDLᵀ of a symmetric positive semidefinite matrix, stored by envelope
/// rows after an RCM permutation. Pivots below `pivot_tol * a_ii` are
/// treated as null directions and dropped from solves.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    pub null_pivots: usize,
}

impl LdlFactor {
    pub fn new(a: &CsrMatrix, pivot_tol: f64) -> Self {
        let n = a.n;
        let perm = rcm_order(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0; n];
        for (new_i, &old_i) in perm.iter().enumerate() {
            first[new_i] = a.row(old_i).map(|(j, _)| inv[j]).filter(|&j| j <= new_i).min().unwrap_or(new_i);
        }
        let mut offsets = vec![0; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; offsets[n]];
        let mut diag = vec![0.0; n];
        let mut null_pivots = 0;
        let mut row_buf = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            // scatter A's row i (lower part) into the buffer
            for k in fi..=i {
                row_buf[k] = 0.0;
            }
            let mut aii = 0.0;
            for (j, v) in a.row(perm[i]) {
                let jn = inv[j];
                if jn < i {
                    row_buf[jn] += v;
                } else if jn == i {
                    aii += v;
                }
            }
            for j in fi..i {
                let fj = first[j].max(fi);
                let mut s = row_buf[j];
                let lj = &lower[offsets[j]..offsets[j + 1]];
                for k in fj..j {
                    s -= row_buf[k] * diag[k] * lj[k - first[j]];
                }
                // row_buf[k] for k < j already holds L_ik (scaled below)
                let l = if diag[j] > 0.0 { s / diag[j] } else { 0.0 };
                row_buf[j] = l;
            }
            let mut d = aii;
            for k in fi..i {
                d -= row_buf[k] * row_buf[k] * diag[k];
            }
            let li = &mut lower[offsets[i]..offsets[i + 1]];
            li.copy_from_slice(&row_buf[fi..i]);
            if !(d > pivot_tol * aii.abs()) || aii <= 0.0 {
                diag[i] = 0.0;
                null_pivots += 1;
            } else {
                diag[i] = d;
            }
        }
        LdlFactor { n, perm, first, offsets, lower, diag, null_pivots }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let li = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            let mut s = y[i];
            for (k, l) in li.iter().enumerate() {
                s -= l * y[self.first[i] + k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] = if self.diag[i] > 0.0 { y[i] / self.diag[i] } else { 0.0 };
        }
        for i in (0..n).rev() {
            let li = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            let yi = y[i];
            for (k, l) in li.iter().enumerate() {
                y[self.first[i] + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn ldl_solves_spd() {
        let a = laplace_1d(50, 0.1);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.mul_vec(&x);
        let f = LdlFactor::new(&a, 1e-14);
        let y = f.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
        assert_eq!(f.null_pivots, 0);
    }

    #[test]
    fn ldl_matches_dense_on_2d_grid() {
        let m = 7;
        let idx = |i: usize, j: usize| i * m + j;
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..m {
                t.push((idx(i, j), idx(i, j), 4.5));
                if i + 1 < m {
                    t.push((idx(i, j), idx(i + 1, j), -1.0));
                    t.push((idx(i + 1, j), idx(i, j), -1.0));
                }
                if j + 1 < m {
                    t.push((idx(i, j), idx(i, j + 1), -1.0));
                    t.push((idx(i, j + 1), idx(i, j), -1.0));
                }
            }
        }
        let a = CsrMatrix::from_triplets(m * m, t);
        let b: Vec<f64> = (0..m * m).map(|i| (i as f64).cos()).collect();
        let x = LdlFactor::new(&a, 1e-14).solve(&b);
        let dense = a.to_dense().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..m * m {
            assert!((x[i] - dense[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_pivot_is_dropped() {
        // [[1,1],[1,1]] is PSD with a null vector
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let f = LdlFactor::new(&a, 1e-12);
        assert_eq!(f.null_pivots, 1);
        let x = f.solve(&[2.0, 2.0]);
        let r = a.mul_vec(&x);
        assert!((r[0] - 2.0).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12);
    }
}
