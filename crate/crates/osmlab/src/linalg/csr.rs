//! Compressed sparse row matrices with the few operations the solvers need.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from triplets, summing duplicates. Columns end up sorted and
    /// unique within each row.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Csr> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::invalid_argument(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::invalid_state("non-finite matrix entry"));
            }
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Csr {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_add(&self, x: &[f64], y: &mut [f64], scale: f64) {
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            y[r] += scale * acc;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let mut row_ptr = counts.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx];
                let dst = row_ptr[c];
                cols[dst] = r;
                vals[dst] = self.vals[idx];
                row_ptr[c] += 1;
            }
        }
        Csr {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: counts,
            cols,
            vals,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[idx])] = self.vals[idx];
            }
        }
        m
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// Largest absolute asymmetry `max |a_ij - a_ji|`; square matrices only.
    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = t.row(r);
            let mut ia = 0;
            let mut ib = 0;
            while ia < ca.len() || ib < cb.len() {
                let col_a = ca.get(ia).copied().unwrap_or(usize::MAX);
                let col_b = cb.get(ib).copied().unwrap_or(usize::MAX);
                if col_a == col_b {
                    worst = worst.max((va[ia] - vb[ib]).abs());
                    ia += 1;
                    ib += 1;
                } else if col_a < col_b {
                    worst = worst.max(va[ia].abs());
                    ia += 1;
                } else {
                    worst = worst.max(vb[ib].abs());
                    ib += 1;
                }
            }
        }
        worst
    }

    /// Coordinate-format text dump: one `row col value` line per entry.
    pub fn dump<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(out, "{} {} {:.17e}", r, self.cols[idx], self.vals[idx])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_sort() {
        let m = Csr::from_triplets(
            2,
            2,
            &[(0, 1, 1.0), (0, 0, 2.0), (0, 1, 0.5), (1, 1, -1.0)],
        )
        .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row(0), (&[0usize, 1][..], &[2.0, 1.5][..]));
        assert_eq!(m.entry(1, 1), -1.0);
        assert_eq!(m.entry(1, 0), 0.0);
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let m = Csr::from_triplets(
            3,
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, -3.0), (2, 1, 4.0)],
        )
        .unwrap();
        let x = [1.0, -1.0];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        assert_eq!(y, [-1.0, -3.0, -4.0]);

        let t = m.transpose();
        let dense_t = m.to_dense().transpose();
        assert_eq!(t.to_dense(), dense_t);
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(Csr::from_triplets(1, 1, &[(0, 2, 1.0)]).is_err());
        assert!(Csr::from_triplets(1, 1, &[(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn asymmetry_detects_mismatched_pattern() {
        let sym = Csr::from_triplets(2, 2, &[(0, 1, 3.0), (1, 0, 3.0)]).unwrap();
        assert_eq!(sym.max_asymmetry(), 0.0);
        let asym = Csr::from_triplets(2, 2, &[(0, 1, 3.0)]).unwrap();
        assert_eq!(asym.max_asymmetry(), 3.0);
    }
}
