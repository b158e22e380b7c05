//! Sparse order-3 tensors representing the quadratic term of a
//! quadratic-bilinear system.
//!
//! A tensor `T` with entries `T(i, j, k)` acts on state vectors through the
//! Kronecker product convention `(x (x) y)[j*n + k] = x[j] * y[k]` (zero
//! based), so the quadratic map is `[T(x (x) y)]_i = sum_{j,k} T(i,j,k) x_j y_k`.
//! The mode-1 matricization is the `n x n^2` matrix `M1[i, j*n+k] = T(i,j,k)`
//! and the mode-2 matricization is `M2[j, k*n+i] = T(i,j,k)`, which satisfies
//! the transposition identity `a^T M2 (b (x) c) = c^T M1 (a (x) b)`.

use crate::error::{Error, Result};
use crate::sparse::{DenseMat, SparseMatrix};
use num_complex::Complex64;

/// Sparse order-3 tensor over a cubic index space of side `dim`.
///
/// Entries are stored as sorted, duplicate-summed `(i, j, k, value)` records,
/// so equality and iteration order are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor3 {
    dim: usize,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl SparseTensor3 {
    /// Builds a tensor from (i, j, k, value) records, summing duplicates.
    pub fn from_entries(dim: usize, raw: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(raw.len());
        for &(i, j, k, v) in raw {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::Dimension(format!(
                    "tensor entry ({i}, {j}, {k}) outside cube of side {dim}"
                )));
            }
            entries.push((i, j, k, v));
        }
        entries.sort_unstable_by_key(|&(i, j, k, _)| (i, j, k));
        let mut merged: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, k, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j && last.2 == k => last.3 += v,
                _ => merged.push((i, j, k, v)),
            }
        }
        Ok(SparseTensor3 {
            dim,
            entries: merged,
        })
    }

    /// Tensor with no entries.
    pub fn zeros(dim: usize) -> Self {
        SparseTensor3 {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Iterates stored entries in (i, j, k) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Quadratic action `T(x (x) y)` without forming the Kronecker product.
    pub fn apply(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "tensor apply: x length mismatch");
        assert_eq!(y.len(), self.dim, "tensor apply: y length mismatch");
        let mut out = vec![0.0; self.dim];
        for &(i, j, k, v) in &self.entries {
            out[i] += v * x[j] * y[k];
        }
        out
    }

    /// Complex variant of [`apply`](Self::apply).
    pub fn apply_complex(&self, x: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim, "tensor apply: x length mismatch");
        assert_eq!(y.len(), self.dim, "tensor apply: y length mismatch");
        let mut out = vec![Complex64::ZERO; self.dim];
        for &(i, j, k, v) in &self.entries {
            out[i] += x[j] * y[k] * v;
        }
        out
    }

    /// Mode-2 action: `[M2 (b (x) c)]_j = sum_{i,k} T(i,j,k) b_k c_i`.
    pub fn mode2_apply(&self, b: &[f64], c: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim, "mode2 apply: b length mismatch");
        assert_eq!(c.len(), self.dim, "mode2 apply: c length mismatch");
        let mut out = vec![0.0; self.dim];
        for &(i, j, k, v) in &self.entries {
            out[j] += v * b[k] * c[i];
        }
        out
    }

    /// Complex variant of [`mode2_apply`](Self::mode2_apply).
    pub fn mode2_apply_complex(&self, b: &[Complex64], c: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.dim, "mode2 apply: b length mismatch");
        assert_eq!(c.len(), self.dim, "mode2 apply: c length mismatch");
        let mut out = vec![Complex64::ZERO; self.dim];
        for &(i, j, k, v) in &self.entries {
            out[j] += b[k] * c[i] * v;
        }
        out
    }

    /// Mode-1 matricization as an `n x n^2` sparse matrix.
    pub fn mode1_matricize(&self) -> SparseMatrix {
        let n = self.dim;
        let trip: Vec<(usize, usize, f64)> = self
            .entries
            .iter()
            .map(|&(i, j, k, v)| (i, j * n + k, v))
            .collect();
        SparseMatrix::from_triplets(n, n * n, &trip).expect("matricized entries are in range")
    }

    /// Mode-2 matricization as an `n x n^2` sparse matrix with
    /// `M2[j, k*n + i] = T(i, j, k)`.
    pub fn mode2_matricize(&self) -> SparseMatrix {
        let n = self.dim;
        let trip: Vec<(usize, usize, f64)> = self
            .entries
            .iter()
            .map(|&(i, j, k, v)| (j, k * n + i, v))
            .collect();
        SparseMatrix::from_triplets(n, n * n, &trip).expect("matricized entries are in range")
    }

    /// Symmetrized tensor `T'(i,j,k) = (T(i,j,k) + T(i,k,j)) / 2`, which acts
    /// identically on symmetric arguments `x (x) x`.
    pub fn symmetrized(&self) -> SparseTensor3 {
        let mut raw = Vec::with_capacity(2 * self.entries.len());
        for &(i, j, k, v) in &self.entries {
            raw.push((i, j, k, 0.5 * v));
            raw.push((i, k, j, 0.5 * v));
        }
        SparseTensor3::from_entries(self.dim, &raw).expect("symmetrized entries are in range")
    }

    /// Triplets of the Jacobian of `x -> T(x (x) x)` at the point `x`, i.e.
    /// the matrix `J` with `J v = T(v (x) x) + T(x (x) v)`.
    pub fn jacobian_triplets(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        assert_eq!(x.len(), self.dim, "jacobian: x length mismatch");
        for &(i, j, k, v) in &self.entries {
            out.push((i, j, v * x[k]));
            out.push((i, k, v * x[j]));
        }
    }

    /// Positions touched by the Jacobian for any `x` (used to fix a sparsity
    /// pattern before time stepping).
    pub fn jacobian_pattern(&self, out: &mut Vec<(usize, usize)>) {
        for &(i, j, k, _) in &self.entries {
            out.push((i, j));
            out.push((i, k));
        }
    }

    /// Galerkin projection `T_hat(i,a,b) = w_i^T T(v_a (x) v_b)` onto the
    /// column spaces of `w` (test) and `v` (trial). Works column block by
    /// column block; the full `n x n^2` matricization is never formed densely.
    pub fn project(&self, w: &DenseMat, v: &DenseMat) -> Result<SparseTensor3> {
        if w.nrows() != self.dim || v.nrows() != self.dim {
            return Err(Error::Dimension(format!(
                "tensor projection: basis rows {}x{} do not match tensor side {}",
                w.nrows(),
                v.nrows(),
                self.dim
            )));
        }
        if w.ncols() != v.ncols() {
            return Err(Error::Dimension(format!(
                "tensor projection: test rank {} != trial rank {}",
                w.ncols(),
                v.ncols()
            )));
        }
        let r = v.ncols();
        let mut raw = Vec::new();
        for a in 0..r {
            for b in 0..r {
                let t = self.apply(v.col(a), v.col(b));
                for i in 0..r {
                    let val = crate::sparse::dot(w.col(i), &t);
                    if val != 0.0 {
                        raw.push((i, a, b, val));
                    }
                }
            }
        }
        SparseTensor3::from_entries(r, &raw)
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, alpha: f64) {
        for e in &mut self.entries {
            e.3 *= alpha;
        }
    }

    /// Maximum absolute entry (zero for an empty tensor).
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.3.abs()))
    }
}

/// Dense Kronecker product `x (x) y` with `(x (x) y)[j*n + k] = x[j] y[k]`.
/// Intended for small cross-check computations only.
pub fn kron(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * y.len());
    for &xj in x {
        for &yk in y {
            out.push(xj * yk);
        }
    }
    out
}
