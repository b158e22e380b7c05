//! Quadratic-bilinear descriptor systems and Petrov-Galerkin projection.
//!
//! A system is
//!
//! ```text
//! E x'(t) = A x(t) + sum_k N_k x(t) u_k(t) + H (x(t) (x) x(t)) + B u(t)
//!    y(t) = C x(t),        x(0) = 0,
//! ```
//!
//! with sparse `E, A, N_k, B, C` and a sparse order-3 tensor `H`.

use crate::error::{Error, Result};
use crate::sparse::{DenseMat, SparseMatrix};
use crate::tensor::SparseTensor3;

/// A quadratic-bilinear descriptor system with `m_in` inputs and `p_out`
/// outputs. One bilinear matrix `N_k` is stored per input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QBSystem {
    pub e: SparseMatrix,
    pub a: SparseMatrix,
    pub n_mats: Vec<SparseMatrix>,
    pub h: SparseTensor3,
    pub b: SparseMatrix,
    pub c: SparseMatrix,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
}

impl QBSystem {
    /// Assembles a system and validates all shapes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        e: SparseMatrix,
        a: SparseMatrix,
        n_mats: Vec<SparseMatrix>,
        h: SparseTensor3,
        b: SparseMatrix,
        c: SparseMatrix,
        input_labels: Vec<String>,
        output_labels: Vec<String>,
    ) -> Result<Self> {
        let sys = QBSystem {
            e,
            a,
            n_mats,
            h,
            b,
            c,
            input_labels,
            output_labels,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Number of input channels.
    pub fn m_in(&self) -> usize {
        self.b.ncols()
    }

    /// Number of output channels.
    pub fn p_out(&self) -> usize {
        self.c.nrows()
    }

    /// Checks all operator shapes against each other.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.e.nrows() != n || self.e.ncols() != n {
            return Err(Error::Dimension(format!(
                "E is {}x{}, expected {n}x{n}",
                self.e.nrows(),
                self.e.ncols()
            )));
        }
        if self.a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, expected square",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        for (k, nk) in self.n_mats.iter().enumerate() {
            if nk.nrows() != n || nk.ncols() != n {
                return Err(Error::Dimension(format!(
                    "N_{k} is {}x{}, expected {n}x{n}",
                    nk.nrows(),
                    nk.ncols()
                )));
            }
        }
        if self.h.dim() != n {
            return Err(Error::Dimension(format!(
                "H has side {}, expected {n}",
                self.h.dim()
            )));
        }
        if self.b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B is {}x{}, expected {n} rows",
                self.b.nrows(),
                self.b.ncols()
            )));
        }
        if self.c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C is {}x{}, expected {n} columns",
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        if self.n_mats.len() != self.m_in() {
            return Err(Error::Dimension(format!(
                "{} bilinear matrices for {} inputs",
                self.n_mats.len(),
                self.m_in()
            )));
        }
        if !self.input_labels.is_empty() && self.input_labels.len() != self.m_in() {
            return Err(Error::Dimension(format!(
                "{} input labels for {} inputs",
                self.input_labels.len(),
                self.m_in()
            )));
        }
        if !self.output_labels.is_empty() && self.output_labels.len() != self.p_out() {
            return Err(Error::Dimension(format!(
                "{} output labels for {} outputs",
                self.output_labels.len(),
                self.p_out()
            )));
        }
        Ok(())
    }

    /// Right-hand side `f(x, u) = A x + sum_k u_k N_k x + H(x (x) x) + B u`
    /// (everything except the mass matrix).
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.m_in(), "rhs: input length mismatch");
        let mut f = self.a.apply(x);
        for (k, nk) in self.n_mats.iter().enumerate() {
            if u[k] != 0.0 {
                for (fi, v) in f.iter_mut().zip(nk.apply(x)) {
                    *fi += u[k] * v;
                }
            }
        }
        for (fi, v) in f.iter_mut().zip(self.h.apply(x, x)) {
            *fi += v;
        }
        let bu = self.b.apply(u);
        for (fi, v) in f.iter_mut().zip(bu) {
            *fi += v;
        }
        f
    }

    /// Output map `y = C x`.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.c.apply(x)
    }

    /// Input-direction collapse `B d` as a dense vector.
    pub fn b_times(&self, d: &[f64]) -> Vec<f64> {
        self.b.apply(d)
    }

    /// Output-direction collapse `C^T e` as a dense vector.
    pub fn c_transpose_times(&self, e: &[f64]) -> Vec<f64> {
        self.c.apply_transpose(e)
    }

    /// Combined bilinear matrix `N(d) = sum_k d_k N_k` for an input direction.
    pub fn n_combined(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.m_in(), "n_combined: direction length mismatch");
        let n = self.n();
        let mut trip = Vec::new();
        for (k, nk) in self.n_mats.iter().enumerate() {
            if d[k] == 0.0 {
                continue;
            }
            for (i, j, v) in nk.iter() {
                trip.push((i, j, d[k] * v));
            }
        }
        SparseMatrix::from_triplets(n, n, &trip).expect("combined triplets are in range")
    }

    /// Collapses the system onto one input and one output direction.
    pub fn siso_view(&self, d: &[f64], e_dir: &[f64]) -> SisoView<'_> {
        SisoView {
            e: &self.e,
            a: &self.a,
            n: self.n_combined(d),
            h: &self.h,
            b: self.b_times(d),
            c: self.c_transpose_times(e_dir),
        }
    }
}

/// A single-input single-output view of a system along fixed tangential
/// directions: `b = B d`, `c = C^T e`, `N = sum_k d_k N_k`. Kernel
/// evaluations and basis construction for multi-input systems operate on
/// such views.
#[derive(Debug, Clone)]
pub struct SisoView<'a> {
    pub e: &'a SparseMatrix,
    pub a: &'a SparseMatrix,
    pub n: SparseMatrix,
    pub h: &'a SparseTensor3,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Petrov-Galerkin projection of a system onto trial basis `v` and test
/// basis `w` (equal column counts). Produces the reduced operators
/// `E_hat = W^T E V`, `A_hat = W^T A V`, `N_hat_k = W^T N_k V`,
/// `H_hat = W^T H (V (x) V)` computed block-column-wise, `B_hat = W^T B`,
/// `C_hat = C V`. Fails if `W^T E V` is singular, since every downstream
/// use (kernel evaluation, time stepping) requires an invertible reduced
/// mass matrix.
pub fn project(sys: &QBSystem, v: &DenseMat, w: &DenseMat) -> Result<QBSystem> {
    let n = sys.n();
    if v.nrows() != n || w.nrows() != n {
        return Err(Error::Dimension(format!(
            "projection bases have {} and {} rows for state dimension {n}",
            v.nrows(),
            w.nrows()
        )));
    }
    if v.ncols() != w.ncols() {
        return Err(Error::Dimension(format!(
            "trial rank {} != test rank {}",
            v.ncols(),
            w.ncols()
        )));
    }
    let r = v.ncols();
    if r == 0 {
        return Err(Error::RankCollapse("projection basis has no columns".into()));
    }

    let apply_to_cols = |m: &SparseMatrix, basis: &DenseMat| -> DenseMat {
        let cols: Vec<Vec<f64>> = (0..basis.ncols()).map(|j| m.apply(basis.col(j))).collect();
        DenseMat::from_columns(&cols)
    };

    let e_hat = DenseMat::matmul_transa(w, &apply_to_cols(&sys.e, v));
    let a_hat = DenseMat::matmul_transa(w, &apply_to_cols(&sys.a, v));
    let n_hats: Vec<DenseMat> = sys
        .n_mats
        .iter()
        .map(|nk| DenseMat::matmul_transa(w, &apply_to_cols(nk, v)))
        .collect();
    let h_hat = sys.h.project(w, v)?;
    let b_hat = DenseMat::matmul_transa(w, &sys.b.to_dense());
    let c_hat = {
        let cols: Vec<Vec<f64>> = (0..r).map(|j| sys.c.apply(v.col(j))).collect();
        DenseMat::from_columns(&cols)
    };

    ensure_invertible(&e_hat)?;

    QBSystem::new(
        SparseMatrix::from_dense(&e_hat),
        SparseMatrix::from_dense(&a_hat),
        n_hats.iter().map(SparseMatrix::from_dense).collect(),
        h_hat,
        SparseMatrix::from_dense(&b_hat),
        SparseMatrix::from_dense(&c_hat),
        sys.input_labels.clone(),
        sys.output_labels.clone(),
    )
}

/// Rejects a reduced mass matrix whose LU factorization pivots collapse.
fn ensure_invertible(m: &DenseMat) -> Result<()> {
    let r = m.nrows();
    let mut a: Vec<f64> = (0..r * r).map(|idx| m.at(idx % r, idx / r)).collect();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Singular("projected mass matrix is zero".into()));
    }
    for k in 0..r {
        // Partial pivoting on column k.
        let (piv, piv_val) = (k..r)
            .map(|i| (i, a[k * r + i].abs()))
            .fold((k, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_val <= scale * 1e-13 {
            return Err(Error::Singular(format!(
                "projected mass matrix W^T E V is numerically singular (pivot {piv_val:.3e} at step {k})"
            )));
        }
        if piv != k {
            for j in 0..r {
                a.swap(j * r + k, j * r + piv);
            }
        }
        let d = a[k * r + k];
        for i in (k + 1)..r {
            let l = a[k * r + i] / d;
            a[k * r + i] = l;
            for j in (k + 1)..r {
                a[j * r + i] -= l * a[j * r + k];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_system() -> QBSystem {
        let e = SparseMatrix::identity(2);
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, -1.0), (1, 1, -2.0), (0, 1, 0.5)])
            .unwrap();
        let n1 = SparseMatrix::from_triplets(2, 2, &[(0, 0, 0.3), (1, 0, 0.1)]).unwrap();
        let h = SparseTensor3::from_entries(2, &[(0, 0, 1, 0.25), (1, 1, 1, -0.5)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, 2.0)]).unwrap();
        let c = SparseMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, -1.0)]).unwrap();
        QBSystem::new(e, a, vec![n1], h, b, c, vec![], vec![]).unwrap()
    }

    #[test]
    fn rhs_assembles_all_terms() {
        let sys = small_system();
        let x = vec![1.0, -1.0];
        let u = vec![2.0];
        // A x = [-1 - 0.5, 2] = [-1.5, 2]; u N x = 2*[0.3, 0.1];
        // H(x(x)x) = [0.25*1*(-1), -0.5*1] = [-0.25, -0.5]; B u = [2, 4].
        let f = sys.rhs(&x, &u);
        assert!((f[0] - (-1.5 + 0.6 - 0.25 + 2.0)).abs() < 1e-14);
        assert!((f[1] - (2.0 + 0.2 - 0.5 + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn identity_projection_reproduces_system() {
        let sys = small_system();
        let eye = DenseMat::identity(2);
        let red = project(&sys, &eye, &eye).unwrap();
        assert_eq!(red.e, sys.e);
        assert_eq!(red.a, sys.a);
        assert_eq!(red.n_mats, sys.n_mats);
        assert_eq!(red.h, sys.h);
        assert_eq!(red.b, sys.b);
        assert_eq!(red.c, sys.c);
    }

    #[test]
    fn projection_rejects_singular_reduced_mass() {
        let sys = small_system();
        // Test direction orthogonal to E times the trial direction.
        let v = DenseMat::from_columns(&[vec![1.0, 0.0]]);
        let w = DenseMat::from_columns(&[vec![0.0, 1.0]]);
        assert!(matches!(project(&sys, &v, &w), Err(Error::Singular(_))));
    }

    #[test]
    fn siso_view_collapses_directions() {
        let sys = small_system();
        let view = sys.siso_view(&[2.0], &[1.0]);
        assert_eq!(view.b, vec![2.0, 4.0]);
        assert_eq!(view.c, vec![1.0, -1.0]);
        assert_eq!(view.n.get(0, 0), 0.6);
    }
}
