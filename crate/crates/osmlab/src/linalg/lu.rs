//! Direct solver facade: sparse LDL^T for symmetric positive definite
//! systems, pivoted dense LU for the small indefinite (saddle-point)
//! systems that appear at desk scale.

use crate::error::{Error, Result};
use crate::linalg::csr::Csr;
use crate::linalg::ldl::LdlFactor;
use nalgebra::{DMatrix, DVector};

/// Beyond this size an indefinite system is refused rather than densified.
const DENSE_LIMIT: usize = 8192;

pub struct DenseLu {
    n: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    pub fn new(dense: DMatrix<f64>) -> Result<DenseLu> {
        let n = dense.nrows();
        if n != dense.ncols() {
            return Err(Error::invalid_argument("dense LU needs a square matrix"));
        }
        let lu = dense.lu();
        let u = lu.u();
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let p = u[(i, i)].abs();
            max_pivot = max_pivot.max(p);
            min_pivot = min_pivot.min(p);
        }
        if n > 0 && (min_pivot <= 1e-14 * max_pivot.max(1e-300) || !min_pivot.is_finite()) {
            return Err(Error::SingularMatrix(format!(
                "pivot ratio {min_pivot:.3e}/{max_pivot:.3e} below threshold"
            )));
        }
        Ok(DenseLu { n, lu })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let rhs = DVector::from_column_slice(b);
        let sol = self.lu.solve(&rhs).expect("factorization checked at setup");
        x.copy_from_slice(sol.as_slice());
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// A factorized sparse system.
pub enum DirectSolver {
    Symmetric(LdlFactor),
    Dense(DenseLu),
}

/// Factorizes a square, structurally nonsingular sparse matrix: LDL^T when
/// it is symmetric positive definite, pivoted dense LU otherwise.
pub fn lu_factor(matrix: &Csr) -> Result<DirectSolver> {
    if matrix.n_rows != matrix.n_cols {
        return Err(Error::invalid_argument("direct solver needs a square matrix"));
    }
    let positive_diagonal = (0..matrix.n_rows).all(|r| matrix.entry(r, r) > 0.0);
    if positive_diagonal && matrix.max_asymmetry() == 0.0 {
        if let Ok(f) = LdlFactor::new(matrix) {
            return Ok(DirectSolver::Symmetric(f));
        }
    }
    if matrix.n_rows > DENSE_LIMIT {
        return Err(Error::invalid_argument(format!(
            "indefinite system of size {} exceeds the desk-scale direct solver limit",
            matrix.n_rows
        )));
    }
    Ok(DirectSolver::Dense(DenseLu::new(matrix.to_dense())?))
}

pub fn lu_solve(factor: &DirectSolver, rhs: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; rhs.len()];
    match factor {
        DirectSolver::Symmetric(f) => f.solve(rhs, &mut x),
        DirectSolver::Dense(f) => f.solve(rhs, &mut x),
    }
    x
}

impl DirectSolver {
    pub fn solve_into(&self, rhs: &[f64], x: &mut [f64]) {
        match self {
            DirectSolver::Symmetric(f) => f.solve(rhs, x),
            DirectSolver::Dense(f) => f.solve(rhs, x),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DirectSolver::Symmetric(f) => f.dim(),
            DirectSolver::Dense(f) => f.dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let eye = Csr::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]).unwrap();
        let f = lu_factor(&eye).unwrap();
        let x = lu_solve(&f, &[3.0, -1.0, 0.5]);
        assert_eq!(x, vec![3.0, -1.0, 0.5]);
    }

    #[test]
    fn two_by_two_hand_elimination() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)])
            .unwrap();
        let f = lu_factor(&a).unwrap();
        let x = lu_solve(&f, &[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_spd_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        let mut triplets = Vec::new();
        let mut diag = vec![1.0; n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen_bool(0.4) {
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
        let a = Csr::from_triplets(n, n, &triplets).unwrap();
        let f = lu_factor(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = lu_solve(&f, &b);
        let mut r = vec![0.0; n];
        a.matvec(&x, &mut r);
        let res: f64 = r
            .iter()
            .zip(&b)
            .map(|(ri, bi)| (ri - bi).powi(2))
            .sum::<f64>()
            .sqrt();
        let bnorm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res <= 1e-12 * bnorm);
    }

    #[test]
    fn saddle_point_falls_back_to_pivoted_lu() {
        // [[1, 1], [1, 0]] is symmetric indefinite.
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let f = lu_factor(&a).unwrap();
        let x = lu_solve(&f, &[2.0, 1.0]);
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5), (1, 1, 1.0)])
            .unwrap();
        assert!(matches!(lu_factor(&a), Err(Error::SingularMatrix(_))));
    }
}
