//! Sparse matrices in compressed sparse row form and a small column-major
//! dense matrix used for projection bases.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Real sparse matrix stored in compressed sparse row (CSR) form.
///
/// Entries within each row are sorted by column index and duplicates are
/// summed during construction, so the representation of a given matrix is
/// unique and iteration order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicate positions
    /// are summed; exact zeros arising from cancellation are kept out of the
    /// structure only if the summed value is exactly zero and the entry was
    /// explicitly zero; summed entries are stored as-is.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols} matrix"
                )));
            }
            entries.push((i, j, v));
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        // Collapse duplicates by summation.
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for &(i, _, _) in &merged {
            row_ptr[i + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = merged.iter().map(|&(_, j, _)| j).collect();
        let values = merged.iter().map(|&(_, _, v)| v).collect();
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> Self {
        let trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &trip).expect("identity triplets are in range")
    }

    /// All-zero matrix with the given shape.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Diagonal matrix from the given entries.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let trip: Vec<(usize, usize, f64)> =
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(diag.len(), diag.len(), &trip).expect("diagonal triplets are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored entries as (row, col, value) in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    /// Returns the main diagonal when the matrix is square and has no
    /// off-diagonal nonzeros (explicitly stored zeros are ignored).
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        if self.nrows != self.ncols {
            return None;
        }
        let mut diag = vec![0.0; self.nrows];
        for (i, j, v) in self.iter() {
            if i == j {
                diag[i] = v;
            } else if v != 0.0 {
                return None;
            }
        }
        Some(diag)
    }

    /// Entry lookup; zero for positions without a stored entry.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x for a real vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "apply: vector length mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        y
    }

    /// y = A^T x for a real vector.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "apply_transpose: vector length mismatch");
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        y
    }

    /// y = A x for a complex vector (A real).
    pub fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols, "apply_complex: vector length mismatch");
        let mut y = vec![Complex64::ZERO; self.nrows];
        for i in 0..self.nrows {
            let mut acc = Complex64::ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.col_idx[k]] * self.values[k];
            }
            y[i] = acc;
        }
        y
    }

    /// y = A^T x for a complex vector (A real, plain transpose, no conjugation).
    pub fn apply_transpose_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(
            x.len(),
            self.nrows,
            "apply_transpose_complex: vector length mismatch"
        );
        let mut y = vec![Complex64::ZERO; self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == Complex64::ZERO {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += xi * self.values[k];
            }
        }
        y
    }

    /// Transposed copy.
    pub fn transpose(&self) -> SparseMatrix {
        let trip: Vec<(usize, usize, f64)> = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.ncols, self.nrows, &trip)
            .expect("transposed triplets are in range")
    }

    /// Dense copy, column major.
    pub fn to_dense(&self) -> DenseMat {
        let mut d = DenseMat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            d.set(i, j, v);
        }
        d
    }

    /// Scales every stored entry in place.
    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Maximum absolute entry (zero for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Builds a sparse matrix from a dense one, keeping nonzero entries.
    pub fn from_dense(d: &DenseMat) -> SparseMatrix {
        let mut trip = Vec::new();
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                let v = d.at(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        SparseMatrix::from_triplets(d.nrows(), d.ncols(), &trip)
            .expect("dense entries are in range")
    }
}

/// Small dense real matrix, column major. Used for projection bases and
/// reduced operators, not for large system matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMat {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMat {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from a list of equally sized columns.
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for c in cols {
            assert_eq!(c.len(), nrows, "from_columns: ragged column lengths");
            data.extend_from_slice(c);
        }
        DenseMat { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nrows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nrows + i] = v;
    }

    /// Column slice.
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    /// y = M x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec: vector length mismatch");
        let mut y = vec![0.0; self.nrows];
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let c = self.col(j);
            for i in 0..self.nrows {
                y[i] += c[i] * xj;
            }
        }
        y
    }

    /// y = M^T x.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec_transpose: vector length mismatch");
        (0..self.ncols).map(|j| dot(self.col(j), x)).collect()
    }

    /// C = A^T B.
    pub fn matmul_transa(a: &DenseMat, b: &DenseMat) -> DenseMat {
        assert_eq!(a.nrows, b.nrows, "matmul_transa: inner dimension mismatch");
        let mut c = DenseMat::zeros(a.ncols, b.ncols);
        for j in 0..b.ncols {
            for i in 0..a.ncols {
                c.set(i, j, dot(a.col(i), b.col(j)));
            }
        }
        c
    }

    /// C = A B.
    pub fn matmul(a: &DenseMat, b: &DenseMat) -> DenseMat {
        assert_eq!(a.ncols, b.nrows, "matmul: inner dimension mismatch");
        let mut c = DenseMat::zeros(a.nrows, b.ncols);
        for j in 0..b.ncols {
            let bj = b.col(j);
            let cj = c.col_mut(j);
            for (k, &bkj) in bj.iter().enumerate() {
                if bkj == 0.0 {
                    continue;
                }
                let ak = a.col(k);
                for i in 0..a.nrows {
                    cj[i] += ak[i] * bkj;
                }
            }
        }
        c
    }

    /// Horizontal concatenation [A B].
    pub fn hcat(a: &DenseMat, b: &DenseMat) -> DenseMat {
        assert_eq!(a.nrows, b.nrows, "hcat: row count mismatch");
        let mut data = Vec::with_capacity((a.ncols + b.ncols) * a.nrows);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        DenseMat {
            nrows: a.nrows,
            ncols: a.ncols + b.ncols,
            data,
        }
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Plain dot product of equal-length real slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unconjugated dot product of complex slices (bilinear pairing a^T b).
pub fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a real slice.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean norm of a complex slice.
pub fn cnorm2(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute entry of a real slice.
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Embeds a real vector into a complex one.
pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
