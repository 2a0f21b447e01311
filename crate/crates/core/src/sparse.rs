//! Compressed-sparse-column storage with a fixed pattern, plus a thin wrapper
//! over faer's sparse LU that reuses the symbolic analysis across
//! factorizations.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::MatMut;

use crate::error::{Error, Result};

/// Square CSC matrix. Row indices are sorted within each column.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// Zero matrix on the union of the given (row, col) positions.
    pub fn from_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in entries {
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut rows in cols {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        Self { n, col_ptr, row_idx, values: vec![0.0; nnz] }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Storage slot of entry (row, col), if it is in the pattern.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                s += x[self.row_idx[k]] * self.values[k] * x[c];
            }
        }
        s
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                d[self.row_idx[k]][c] = self.values[k];
            }
        }
        d
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }

    pub fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.symbolic(), &self.values)
    }

    /// Whether the matrix admits a Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        self.as_faer().sp_cholesky(faer::Side::Lower).is_ok()
    }
}

/// Symbolic LU analysis of a fixed pattern, reused for every numeric
/// factorization on that pattern. An empty pattern yields trivial solves.
#[derive(Clone)]
pub struct LuSolver {
    symbolic: Option<SymbolicLu<usize>>,
}

impl LuSolver {
    pub fn new(pattern: &CscMatrix) -> Result<Self> {
        if pattern.n == 0 {
            return Ok(Self { symbolic: None });
        }
        let symbolic = SymbolicLu::try_new(pattern.symbolic())
            .map_err(|e| Error::Singular(format!("symbolic LU: {e:?}")))?;
        Ok(Self { symbolic: Some(symbolic) })
    }

    pub fn factor(&self, m: &CscMatrix) -> Result<LuFactor> {
        let lu = match &self.symbolic {
            Some(sym) => Some(
                Lu::try_new_with_symbolic(sym.clone(), m.as_faer())
                    .map_err(|e| Error::Singular(format!("sparse LU: {e:?}")))?,
            ),
            None => None,
        };
        Ok(LuFactor { lu, n: m.n })
    }
}

pub struct LuFactor {
    lu: Option<Lu<usize, f64>>,
    n: usize,
}

impl LuFactor {
    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve(&self, b: &mut [f64]) -> Result<()> {
        if let Some(lu) = &self.lu {
            lu.solve_in_place(MatMut::from_column_major_slice_mut(b, self.n, 1));
        }
        check_finite(b)
    }

    /// Overwrites `b` with `A^{-T} b`.
    pub fn solve_transpose(&self, b: &mut [f64]) -> Result<()> {
        if let Some(lu) = &self.lu {
            lu.solve_transpose_in_place(MatMut::from_column_major_slice_mut(b, self.n, 1));
        }
        check_finite(b)
    }
}

fn check_finite(b: &[f64]) -> Result<()> {
    if b.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Singular("non-finite solution of sparse system".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> CscMatrix {
        let mut m = CscMatrix::from_pattern(
            n,
            (0..n).flat_map(|i| [(i, i), (i, i.saturating_sub(1)), (i.saturating_sub(1), i)]),
        );
        for i in 0..n {
            let k = m.position(i, i).unwrap();
            m.values[k] = 4.0;
            if i > 0 {
                let k = m.position(i, i - 1).unwrap();
                m.values[k] = -1.0;
                let k = m.position(i - 1, i).unwrap();
                m.values[k] = -2.0;
            }
        }
        m
    }

    #[test]
    fn lu_solves_and_transposed_solves() {
        let m = tridiag(7);
        let solver = LuSolver::new(&m).unwrap();
        let lu = solver.factor(&m).unwrap();
        let x: Vec<f64> = (0..7).map(|i| (i as f64).sin() + 1.0).collect();
        let mut b = m.mul_vec(&x);
        lu.solve(&mut b).unwrap();
        for i in 0..7 {
            assert!((b[i] - x[i]).abs() < 1e-13);
        }
        // A^T x via dense transpose
        let d = m.to_dense();
        let mut bt: Vec<f64> = (0..7).map(|i| (0..7).map(|r| d[r][i] * x[r]).sum()).collect();
        lu.solve_transpose(&mut bt).unwrap();
        for i in 0..7 {
            assert!((bt[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratic_form_matches_dense() {
        let m = tridiag(5);
        let x = [1.0, -2.0, 0.5, 3.0, 1.5];
        let d = m.to_dense();
        let mut expect = 0.0;
        for r in 0..5 {
            for c in 0..5 {
                expect += x[r] * d[r][c] * x[c];
            }
        }
        assert!((m.quad_form(&x) - expect).abs() < 1e-12);
    }
}
