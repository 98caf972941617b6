//! Sparse LDL^T factorization for symmetric positive definite matrices,
//! with a reverse Cuthill-McKee preordering to keep fill-in banded on
//! structured-mesh problems.
//!
//! Classic two-phase algorithm: an elimination-tree symbolic pass counting
//! the column nonzeros of `L`, then an up-looking numeric pass computing one
//! row of `L` at a time via a sparse triangular solve. No pivoting; a
//! nonpositive pivot is reported as a singular/indefinite matrix.

use crate::error::{Error, Result};
use crate::linalg::csr::Csr;
use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering: `perm[new] = old`.
pub fn reverse_cuthill_mckee(matrix: &Csr) -> Vec<usize> {
    let n = matrix.n_rows;
    let degree: Vec<usize> = (0..n).map(|r| matrix.row(r).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    loop {
        let seed = (0..n)
            .filter(|&r| !visited[r])
            .min_by_key(|&r| (degree[r], r));
        let Some(seed) = seed else { break };
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(r) = queue.pop_front() {
            order.push(r);
            let mut nbrs: Vec<usize> = matrix
                .row(r)
                .0
                .iter()
                .copied()
                .filter(|&c| c != r && !visited[c])
                .collect();
            nbrs.sort_unstable_by_key(|&c| (degree[c], c));
            for c in nbrs {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

/// An LDL^T factorization of an RCM-permuted SPD matrix.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `inv_perm[old] = new`.
    inv_perm: Vec<usize>,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// Strict lower factor stored by columns.
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    pub fn new(matrix: &Csr) -> Result<LdlFactor> {
        if matrix.n_rows != matrix.n_cols {
            return Err(Error::invalid_argument("LDL^T needs a square matrix"));
        }
        let n = matrix.n_rows;
        let perm = reverse_cuthill_mckee(matrix);
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        // Permuted strict-lower rows (plus diagonal), sorted by column.
        let mut lower: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for old_r in 0..n {
            let (cols, vals) = matrix.row(old_r);
            let new_r = inv_perm[old_r];
            for (&old_c, &v) in cols.iter().zip(vals) {
                let new_c = inv_perm[old_c];
                if new_c <= new_r {
                    lower[new_r].push((new_c, v));
                }
            }
        }
        for row in &mut lower {
            row.sort_unstable_by_key(|&(c, _)| c);
        }

        // Symbolic pass: elimination tree and column counts.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut col_nnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &(j, _) in &lower[k] {
                let mut i = j;
                while i < k && flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    col_nnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + col_nnz[k];
        }
        let nnz = col_ptr[n];
        let mut rows = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut d = vec![0.0; n];

        // Numeric pass, one row of L at a time.
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut fill = vec![0usize; n]; // entries already stored per column
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            d[k] = 0.0;
            for &(j, v) in &lower[k] {
                if j == k {
                    d[k] = v;
                    continue;
                }
                y[j] += v;
                let mut len = 0;
                let mut i = j;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                for p in col_ptr[i]..col_ptr[i] + fill[i] {
                    y[rows[p]] -= vals[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                let dst = col_ptr[i] + fill[i];
                rows[dst] = k;
                vals[dst] = lki;
                fill[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(Error::SingularMatrix(format!(
                    "nonpositive pivot {} at elimination step {k}",
                    d[k]
                )));
            }
        }

        Ok(LdlFactor {
            n,
            inv_perm,
            perm,
            col_ptr,
            rows,
            vals,
            d,
        })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let mut z: Vec<f64> = (0..self.n).map(|new| b[self.perm[new]]).collect();
        // Forward solve L z = b.
        for j in 0..self.n {
            let zj = z[j];
            if zj != 0.0 {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    z[self.rows[p]] -= self.vals[p] * zj;
                }
            }
        }
        for j in 0..self.n {
            z[j] /= self.d[j];
        }
        // Backward solve L^T z = z.
        for j in (0..self.n).rev() {
            let mut acc = z[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc -= self.vals[p] * z[self.rows[p]];
            }
            z[j] = acc;
        }
        for new in 0..self.n {
            x[self.perm[new]] = z[new];
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `inv_perm` is retained for diagnostics on fill behavior.
    pub fn bandwidth_hint(&self) -> usize {
        self.inv_perm.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Csr {
        // Diagonally dominant random symmetric matrix with ~30% density.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triplets = Vec::new();
        let mut diag = vec![1.0; n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen_bool(0.3) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    triplets.push((i, j, v));
                    triplets.push((j, i, v));
                    diag[i] += v.abs();
                    diag[j] += v.abs();
                }
            }
        }
        for i in 0..n {
            triplets.push((i, i, diag[i]));
        }
        Csr::from_triplets(n, n, &triplets).unwrap()
    }

    #[test]
    fn factorization_solves_random_spd_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..10 {
            let n = 20;
            let a = random_spd(n, trial);
            let factor = LdlFactor::new(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = vec![0.0; n];
            factor.solve(&b, &mut x);
            let mut r = vec![0.0; n];
            a.matvec(&x, &mut r);
            let res: f64 = r
                .iter()
                .zip(&b)
                .map(|(ri, bi)| (ri - bi) * (ri - bi))
                .sum::<f64>()
                .sqrt();
            let bnorm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res <= 1e-12 * bnorm, "trial {trial}: {res:.3e}");
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        assert!(LdlFactor::new(&a).is_err());
        let zero = Csr::from_triplets(1, 1, &[(0, 0, 0.0)]).unwrap();
        assert!(LdlFactor::new(&zero).is_err());
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = random_spd(30, 9);
        let perm = reverse_cuthill_mckee(&a);
        let mut seen = vec![false; 30];
        for &p in &perm {
            assert!(!seen[p]);
            seen[p] = true;
        }
    }
}
