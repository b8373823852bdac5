//! Row-compressed matrices with a fixed pattern, and a direct solver.
//!
//! The pattern is built once per mesh and values are refilled on every
//! assembly, so the symbolic factorization can be reused too. Factorization
//! goes through faer's sparse LU; since our storage is row-major we hand faer
//! the transpose (same arrays read column-major) and solve with it transposed.

use std::io::{self, Write};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::MatMut;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix whose pattern holds every listed position (duplicates merged).
    pub fn with_pattern(nrows: usize, ncols: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (i, j) in entries {
            assert!(i < nrows && j < ncols, "entry ({i}, {j}) outside {nrows} x {ncols}");
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().cloned().zip(self.values[r].iter().cloned())
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let cols = &self.col_idx[lo..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|p| lo + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Adds to an entry of the pattern. Panics on positions outside it, which
    /// would be an assembly bug.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) is not in the sparsity pattern"));
        self.values[p] += v;
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// MatrixMarket coordinate format, 1-based, pattern entries included.
    pub fn write_matrix_market(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }

    fn transposed_view(&self) -> SparseColMatRef<'_, usize, f64> {
        let symbolic = SymbolicSparseColMatRef::new_checked(
            self.ncols,
            self.nrows,
            &self.row_ptr,
            None,
            &self.col_idx,
        );
        SparseColMatRef::new(symbolic, &self.values)
    }
}

/// LU solver that keeps the symbolic analysis of one pattern.
pub struct DirectSolver {
    symbolic: Option<SymbolicLu<usize>>,
    tol: f64,
}

/// A factorized matrix ready for repeated solves. Keeps a copy of the matrix
/// for residual checks, so it can outlive the assembly buffer.
pub struct Factorization {
    matrix: CsrMatrix,
    lu: Lu<usize, f64>,
    tol: f64,
}

impl DirectSolver {
    pub fn new(tol: f64) -> Self {
        DirectSolver { symbolic: None, tol }
    }

    pub fn factorize(&mut self, a: &CsrMatrix) -> Result<Factorization> {
        if a.nrows() != a.ncols() {
            return Err(Error::LinearSolve(format!("matrix is {} x {}", a.nrows(), a.ncols())));
        }
        let view = a.transposed_view();
        let symbolic = match &self.symbolic {
            Some(s) => s.clone(),
            None => {
                let s = SymbolicLu::try_new(view.symbolic())
                    .map_err(|e| Error::LinearSolve(format!("symbolic analysis failed: {e:?}")))?;
                self.symbolic = Some(s.clone());
                s
            }
        };
        let lu = Lu::try_new_with_symbolic(symbolic, view)
            .map_err(|e| Error::LinearSolve(format!("factorization failed: {e:?}")))?;
        Ok(Factorization { matrix: a.clone(), lu, tol: self.tol })
    }
}

impl Factorization {
    /// Solves `A x = b`, with one refinement sweep if the first residual is
    /// above tolerance. Fails if the relative residual stays above it.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.raw_solve(&mut x);
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut rel = self.relative_residual(&x, b, bnorm);
        if rel > self.tol {
            let ax = self.matrix.mul_vec(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            self.raw_solve(&mut r);
            x.iter_mut().zip(&r).for_each(|(x, d)| *x += d);
            rel = self.relative_residual(&x, b, bnorm);
        }
        if !(rel <= self.tol) {
            return Err(Error::LinearSolve(format!(
                "relative residual {rel:e} above tolerance {:e}",
                self.tol
            )));
        }
        Ok(x)
    }

    fn raw_solve(&self, x: &mut [f64]) {
        let n = x.len();
        let rhs = MatMut::from_column_major_slice_mut(x, n, 1);
        self.lu.solve_transpose_in_place(rhs);
    }

    fn relative_residual(&self, x: &[f64], b: &[f64], bnorm: f64) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let ax = self.matrix.mul_vec(x);
        let r = ax.iter().zip(b).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if bnorm == 0.0 {
            r
        } else {
            r / bnorm
        }
    }
}
