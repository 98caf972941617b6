//! Right-preconditioned GMRES and its flexible variant, with modified
//! Gram-Schmidt and selective reorthogonalization.

use crate::error::{Error, Result};
use crate::linalg::csr::Csr;
use std::time::Instant;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for Csr {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.n_rows, self.n_cols);
        self.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// No preconditioning.
pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

impl Preconditioner for crate::linalg::lu::DirectSolver {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve_into(r, z);
    }
}

#[derive(Debug, Clone)]
pub struct KrylovConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iters: usize,
    /// Kept at `max_iters` in this crate: the experiments run full GMRES so
    /// iteration counts are not confounded by restarts.
    pub restart: usize,
    /// Store the preconditioned directions so nonstationary preconditioners
    /// are admissible.
    pub flexible: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            rtol: 1e-6,
            atol: 1e-50,
            max_iters: 200,
            restart: 200,
            flexible: true,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::invalid_argument("Krylov tolerances must be positive"));
        }
        if self.restart == 0 {
            return Err(Error::invalid_argument("restart length must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_seconds: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` with right preconditioning, starting from `x0` (zero if
/// absent). Stops when the residual norm drops below
/// `max(rtol * ||r0||, atol)`. The returned history is the GMRES recurrence
/// residual, which for right preconditioning is the true residual norm.
pub fn gmres(
    op: &dyn LinearOperator,
    b: &[f64],
    pc: &dyn Preconditioner,
    x0: Option<&[f64]>,
    config: &KrylovConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    config.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(Error::invalid_argument("rhs length mismatch"));
    }
    let start = Instant::now();

    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    op.apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let beta = norm(&r);
    let target = (config.rtol * beta).max(config.atol);
    let mut history = vec![beta];

    if beta <= target {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual_history: history,
                converged: true,
                wall_seconds: start.elapsed().as_secs_f64(),
            },
        ));
    }

    let m = config.max_iters.min(config.restart);
    let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
    let mut dirs: Vec<Vec<f64>> = Vec::new(); // preconditioned directions (flexible)
    let mut h = vec![vec![0.0f64; m]; m + 1];
    let mut cs = vec![0.0f64; m];
    let mut sn = vec![0.0f64; m];
    let mut g = vec![0.0f64; m + 1];
    g[0] = beta;

    let mut converged = false;
    let mut iterations = 0;
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];

    for j in 0..m {
        pc.apply(&basis[j], &mut z);
        if config.flexible {
            dirs.push(z.clone());
        }
        op.apply(&z, &mut w);

        // Modified Gram-Schmidt with one selective reorthogonalization pass.
        let w_before = norm(&w);
        for i in 0..=j {
            let hij = dot(&w, &basis[i]);
            h[i][j] = hij;
            for t in 0..n {
                w[t] -= hij * basis[i][t];
            }
        }
        if norm(&w) < std::f64::consts::FRAC_1_SQRT_2 * w_before {
            for i in 0..=j {
                let corr = dot(&w, &basis[i]);
                h[i][j] += corr;
                for t in 0..n {
                    w[t] -= corr * basis[i][t];
                }
            }
        }
        let h_sub = norm(&w);
        h[j + 1][j] = h_sub;

        // Apply stored Givens rotations to the new column.
        for i in 0..j {
            let tmp = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
            h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
            h[i][j] = tmp;
        }
        let denom = (h[j][j] * h[j][j] + h_sub * h_sub).sqrt();
        if denom == 0.0 {
            // Exact stagnation; the least-squares solution is already here.
            iterations = j + 1;
            converged = true;
            break;
        }
        cs[j] = h[j][j] / denom;
        sn[j] = h_sub / denom;
        h[j][j] = denom;
        g[j + 1] = -sn[j] * g[j];
        g[j] *= cs[j];

        let res = g[j + 1].abs();
        history.push(res);
        iterations = j + 1;

        // Non-restarted GMRES residuals are nonincreasing; a violation
        // signals an orthogonalization bug.
        assert!(
            res <= history[j] * (1.0 + 1e-10) + 1e-300,
            "GMRES residual increased: {} -> {}",
            history[j],
            res
        );

        let happy = h_sub <= 1e-14 * w_before.max(1e-300);
        if res <= target || happy {
            converged = true;
            break;
        }
        if j + 1 < m {
            basis.push(w.iter().map(|v| v / h_sub).collect());
        }
    }

    // Solve the triangular least-squares system H y = g.
    let k = iterations;
    let mut y = vec![0.0f64; k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for l in (i + 1)..k {
            acc -= h[i][l] * y[l];
        }
        y[i] = acc / h[i][i];
    }

    if config.flexible {
        for (l, yl) in y.iter().enumerate() {
            for t in 0..n {
                x[t] += yl * dirs[l][t];
            }
        }
    } else {
        // x += M^{-1} (V y) for a stationary preconditioner.
        let mut vy = vec![0.0; n];
        for (l, yl) in y.iter().enumerate() {
            for t in 0..n {
                vy[t] += yl * basis[l][t];
            }
        }
        pc.apply(&vy, &mut z);
        for t in 0..n {
            x[t] += z[t];
        }
    }

    Ok((
        x,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
