//! Dense solves on patch submatrices, the building block of the Schwarz
//! smoothers.

use crate::error::{Error, Result};
use crate::linalg::csr::Csr;
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

/// A factorized patch: the index set and the pivoted LU of the gathered
/// submatrix.
#[derive(Debug)]
pub struct PatchFactor {
    pub indices: Vec<usize>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Gathers `matrix[indices, indices]` densely.
pub fn gather_patch(matrix: &Csr, indices: &[usize]) -> DMatrix<f64> {
    let m = indices.len();
    let local: HashMap<usize, usize> = indices
        .iter()
        .enumerate()
        .map(|(l, &g)| (g, l))
        .collect();
    let mut dense = DMatrix::zeros(m, m);
    for (lr, &gr) in indices.iter().enumerate() {
        let (cols, vals) = matrix.row(gr);
        for (&c, &v) in cols.iter().zip(vals) {
            if let Some(&lc) = local.get(&c) {
                dense[(lr, lc)] = v;
            }
        }
    }
    dense
}

impl PatchFactor {
    /// Factorizes the patch submatrix; `vertex` only labels errors.
    pub fn new(matrix: &Csr, indices: Vec<usize>, vertex: usize) -> Result<PatchFactor> {
        let dense = gather_patch(matrix, &indices);
        let m = indices.len();
        let lu = dense.lu();
        let u = lu.u();
        let mut max_p = 0.0f64;
        let mut min_p = f64::INFINITY;
        for i in 0..m {
            let p = u[(i, i)].abs();
            max_p = max_p.max(p);
            min_p = min_p.min(p);
        }
        if m > 0 && (!min_p.is_finite() || min_p <= 1e-13 * max_p.max(1e-300)) {
            return Err(Error::SingularPatch {
                vertex,
                detail: format!("pivot ratio {min_p:.3e}/{max_p:.3e}"),
            });
        }
        Ok(PatchFactor { indices, lu })
    }

    /// Gathers the residual, solves, and scatter-adds `scale` times the
    /// local correction.
    pub fn accumulate(&self, residual: &[f64], correction: &mut [f64], scale: f64) {
        let local = DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&g| residual[g]),
        );
        let sol = self.lu.solve(&local).expect("patch checked at setup");
        for (l, &g) in self.indices.iter().enumerate() {
            correction[g] += scale * sol[l];
        }
    }
}

/// One-shot patch solve: gathers the submatrix on `indices`, solves against
/// the restricted residual, scatters the correction into a fresh vector.
pub fn patch_solve(matrix: &Csr, indices: &[usize], residual: &[f64]) -> Result<Vec<f64>> {
    for &g in indices {
        if g >= matrix.n_rows {
            return Err(Error::invalid_argument(format!(
                "patch index {g} out of range"
            )));
        }
    }
    let factor = PatchFactor::new(matrix, indices.to_vec(), usize::MAX)?;
    let mut correction = vec![0.0; matrix.n_rows];
    factor.accumulate(residual, &mut correction, 1.0);
    Ok(correction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lu::{lu_factor, lu_solve};

    #[test]
    fn whole_matrix_patch_is_a_direct_solve() {
        let a = Csr::from_triplets(
            3,
            3,
            &[
                (0, 0, 3.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 4.0),
                (2, 2, 2.0),
            ],
        )
        .unwrap();
        let r = vec![1.0, -1.0, 4.0];
        let corr = patch_solve(&a, &[0, 1, 2], &r).unwrap();
        let exact = lu_solve(&lu_factor(&a).unwrap(), &r);
        for (c, e) in corr.iter().zip(&exact) {
            assert!((c - e).abs() < 1e-13);
        }
    }

    #[test]
    fn disjoint_patches_solve_block_diagonal_systems_exactly() {
        let a = Csr::from_triplets(
            4,
            4,
            &[
                (0, 0, 2.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 2.0),
                (2, 2, 5.0),
                (2, 3, -1.0),
                (3, 2, -1.0),
                (3, 3, 5.0),
            ],
        )
        .unwrap();
        let r = vec![3.0, 3.0, 4.0, 4.0];
        let mut additive = vec![0.0; 4];
        for patch in [&[0usize, 1][..], &[2, 3][..]] {
            let corr = patch_solve(&a, patch, &r).unwrap();
            for i in 0..4 {
                additive[i] += corr[i];
            }
        }
        let exact = lu_solve(&lu_factor(&a).unwrap(), &r);
        for (c, e) in additive.iter().zip(&exact) {
            assert!((c - e).abs() < 1e-13);
        }
    }

    #[test]
    fn singleton_patch_is_a_jacobi_step() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 4.0), (1, 1, 5.0)]).unwrap();
        let corr = patch_solve(&a, &[1], &[8.0, 10.0]).unwrap();
        assert_eq!(corr, vec![0.0, 2.0]);
    }

    #[test]
    fn singular_patch_names_its_vertex() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 0.0)]).unwrap();
        let err = PatchFactor::new(&a, vec![1], 17).unwrap_err();
        match err {
            Error::SingularPatch { vertex, .. } => assert_eq!(vertex, 17),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
