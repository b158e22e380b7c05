//! Direct factorization of shifted pencils `s E - A` and resolvent chains.
//!
//! The building block of every basis construction and kernel evaluation is
//! the chain
//!
//! ```text
//! w_0 = (s E - A)^{-1} b,      w_t = (s E - A)^{-1} E w_{t-1},
//! ```
//!
//! which evaluates `X_j(s) b` with `X_j(s) = [(sE-A)^{-1} E]^j (sE-A)^{-1}`.
//! A chain of depth `j` costs one factorization and `j + 1` triangular
//! solves. Factorizations are cached per bit-exact shift and shared between
//! plain and transposed solves, so building bases at `m` interpolation
//! points with any chain depth performs exactly one factorization per
//! distinct shift.
//!
//! Two factorization kernels are provided: dense complex LU with partial
//! pivoting, and banded complex LU (with room for pivoting fill) applied
//! after a reverse Cuthill-McKee reordering. The choice is made once per
//! sparsity pattern; the narrow-band discretizations this crate targets
//! factor in linear time. Real data is embedded as complex with zero
//! imaginary part so a single code path serves both.
//!
//! Every solve is residual-checked at 1e-10 relative accuracy with one step
//! of iterative refinement; persistent failure is a hard error rather than a
//! silent inaccuracy.

use crate::error::{Error, Result};
use crate::sparse::{cnorm2, SparseMatrix};
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

/// Relative residual accepted without refinement.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// Pivot threshold relative to the largest matrix entry below which a
/// factorization is declared singular.
const PIVOT_TOL: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Dense complex LU
// ---------------------------------------------------------------------------

/// Dense complex LU with partial pivoting, column major storage.
struct DenseLu {
    n: usize,
    a: Vec<Complex64>,
    piv: Vec<usize>,
}

impl DenseLu {
    /// Factors a column-major matrix in place. `Err` carries a description
    /// of the failing pivot.
    fn factor(n: usize, mut a: Vec<Complex64>) -> std::result::Result<Self, String> {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if scale == 0.0 {
            return Err("matrix is identically zero".into());
        }
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut pmax = a[k * n + k].norm();
            for i in (k + 1)..n {
                let m = a[k * n + i].norm();
                if m > pmax {
                    pmax = m;
                    p = i;
                }
            }
            if pmax <= scale * PIVOT_TOL {
                return Err(format!(
                    "pivot {pmax:.3e} at elimination step {k} (matrix scale {scale:.3e})"
                ));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(j * n + k, j * n + p);
                }
            }
            let d = a[k * n + k];
            for i in (k + 1)..n {
                let l = a[k * n + i] / d;
                a[k * n + i] = l;
            }
            for j in (k + 1)..n {
                let akj = a[j * n + k];
                if akj == Complex64::ZERO {
                    continue;
                }
                let (col_k, col_j) = {
                    // Split borrows: column k is read, column j is updated.
                    let (lo, hi) = a.split_at_mut(j * n);
                    (&lo[k * n..k * n + n], &mut hi[..n])
                };
                for i in (k + 1)..n {
                    col_j[i] -= col_k[i] * akj;
                }
            }
        }
        Ok(DenseLu { n, a, piv })
    }

    /// Solves `A x = b` in place.
    fn solve_in_place(&self, x: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        // L (unit lower) forward.
        for k in 0..n {
            let xk = x[k];
            if xk == Complex64::ZERO {
                continue;
            }
            for i in (k + 1)..n {
                x[i] -= self.a[k * n + i] * xk;
            }
        }
        // U backward.
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in (k + 1)..n {
                acc -= self.a[j * n + k] * x[j];
            }
            x[k] = acc / self.a[k * n + k];
        }
    }

    /// Solves `A^T x = b` in place (plain transpose, no conjugation).
    fn solve_transposed_in_place(&self, x: &mut [Complex64]) {
        let n = self.n;
        // U^T (lower triangular) forward.
        for k in 0..n {
            let mut acc = x[k];
            for j in 0..k {
                acc -= self.a[k * n + j] * x[j];
            }
            x[k] = acc / self.a[k * n + k];
        }
        // L^T (unit upper) backward.
        for k in (0..n).rev() {
            let mut acc = x[k];
            for i in (k + 1)..n {
                acc -= self.a[k * n + i] * x[i];
            }
            x[k] = acc;
        }
        for k in (0..n).rev() {
            x.swap(k, self.piv[k]);
        }
    }
}

// ---------------------------------------------------------------------------
// Banded complex LU
// ---------------------------------------------------------------------------

/// Banded complex LU with partial pivoting. Storage follows the LAPACK band
/// convention: column `j` keeps rows `j - (ku + kl) ..= j + kl` at offsets
/// `kl + ku + i - j`, the extra `kl` superdiagonals absorbing pivoting fill.
struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
    piv: Vec<usize>,
}

impl BandedLu {
    fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        mut ab: Vec<Complex64>,
    ) -> std::result::Result<Self, String> {
        let ldab = 2 * kl + ku + 1;
        assert_eq!(ab.len(), ldab * n);
        let scale = ab.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if scale == 0.0 {
            return Err("matrix is identically zero".into());
        }
        let kv = kl + ku; // widest reach of U after fill
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = ab[k * ldab + (kl + ku)].norm();
            for i in (k + 1)..=last_row {
                let m = ab[k * ldab + (kl + ku + i - k)].norm();
                if m > pmax {
                    pmax = m;
                    p = i;
                }
            }
            if pmax <= scale * PIVOT_TOL {
                return Err(format!(
                    "pivot {pmax:.3e} at elimination step {k} (matrix scale {scale:.3e})"
                ));
            }
            piv[k] = p;
            let last_col = (k + kv).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let off_k = j * ldab + (kl + ku + k) - j;
                    let off_p = j * ldab + (kl + ku + p) - j;
                    ab.swap(off_k, off_p);
                }
            }
            let d = ab[k * ldab + (kl + ku)];
            for i in (k + 1)..=last_row {
                let off = k * ldab + (kl + ku + i - k);
                let l = ab[off] / d;
                ab[off] = l;
            }
            for j in (k + 1)..=last_col {
                let akj = ab[j * ldab + (kl + ku + k) - j];
                if akj == Complex64::ZERO {
                    continue;
                }
                for i in (k + 1)..=last_row {
                    let l = ab[k * ldab + (kl + ku + i - k)];
                    if l == Complex64::ZERO {
                        continue;
                    }
                    ab[j * ldab + (kl + ku + i) - j] -= l * akj;
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            piv,
        })
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.ab[j * self.ldab + (self.kl + self.ku + i) - j]
    }

    fn solve_in_place(&self, x: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            if self.piv[k] != k {
                x.swap(k, self.piv[k]);
            }
            let xk = x[k];
            if xk == Complex64::ZERO {
                continue;
            }
            for i in (k + 1)..=(k + self.kl).min(n - 1) {
                x[i] -= self.entry(i, k) * xk;
            }
        }
        let reach = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in (k + 1)..=(k + reach).min(n - 1) {
                acc -= self.entry(k, j) * x[j];
            }
            x[k] = acc / self.entry(k, k);
        }
    }

    fn solve_transposed_in_place(&self, x: &mut [Complex64]) {
        let n = self.n;
        let reach = self.kl + self.ku;
        // U^T forward.
        for k in 0..n {
            let mut acc = x[k];
            for j in k.saturating_sub(reach)..k {
                acc -= self.entry(j, k) * x[j];
            }
            x[k] = acc / self.entry(k, k);
        }
        // L^T backward, then undo the row swaps in reverse order.
        for k in (0..n).rev() {
            let mut acc = x[k];
            for i in (k + 1)..=(k + self.kl).min(n - 1) {
                acc -= self.entry(i, k) * x[i];
            }
            x[k] = acc;
            if self.piv[k] != k {
                x.swap(k, self.piv[k]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reordering and factorization plans
// ---------------------------------------------------------------------------

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
/// Deterministic: component starts are minimum-degree (ties by index) and
/// neighbor visits are sorted by (degree, index).
fn reverse_cuthill_mckee(n: usize, pattern: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in pattern {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for list in &mut adj {
        list.sort_unstable_by_key(|&v| (degree[v], v));
    }
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    loop {
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v));
        let Some(start) = start else { break };
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    // order[new] = old; return new_of_old.
    let mut new_of_old = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        new_of_old[old] = new;
    }
    new_of_old
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlanKind {
    Dense,
    Banded { kl: usize, ku: usize },
}

/// A factorization strategy fixed per sparsity pattern: a symmetric
/// reordering plus the choice between dense and banded kernels. Numeric
/// factorizations of any matrix with (a subset of) the planned pattern reuse
/// the plan.
#[derive(Debug, Clone)]
pub struct FactorPlan {
    n: usize,
    new_of_old: Option<Vec<usize>>,
    kind: PlanKind,
}

impl FactorPlan {
    /// Plans for a pattern given as (row, col) positions. Small systems and
    /// wide-band patterns use dense LU; otherwise a reverse Cuthill-McKee
    /// ordering with banded LU.
    pub fn from_pattern(n: usize, pattern: &[(usize, usize)]) -> FactorPlan {
        if n <= 64 {
            return FactorPlan {
                n,
                new_of_old: None,
                kind: PlanKind::Dense,
            };
        }
        let new_of_old = reverse_cuthill_mckee(n, pattern);
        let (mut kl, mut ku) = (0usize, 0usize);
        for &(i, j) in pattern {
            let (pi, pj) = (new_of_old[i], new_of_old[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
        // Banded storage and work grow with (2 kl + ku + 1); fall back to
        // dense when the band covers most of the matrix anyway.
        if 2 * kl + ku + 1 >= n / 2 {
            FactorPlan {
                n,
                new_of_old: None,
                kind: PlanKind::Dense,
            }
        } else {
            FactorPlan {
                n,
                new_of_old: Some(new_of_old),
                kind: PlanKind::Banded { kl, ku },
            }
        }
    }

    /// Forces a dense plan (used for small ad-hoc matrices).
    pub fn dense(n: usize) -> FactorPlan {
        FactorPlan {
            n,
            new_of_old: None,
            kind: PlanKind::Dense,
        }
    }

    /// Factors a matrix given by (row, col, value) triplets in original
    /// indices. Duplicate positions are summed.
    pub fn factor(
        &self,
        triplets: &[(usize, usize, Complex64)],
    ) -> std::result::Result<Factorization, String> {
        let n = self.n;
        let kernel = match self.kind {
            PlanKind::Dense => {
                let mut a = vec![Complex64::ZERO; n * n];
                match &self.new_of_old {
                    None => {
                        for &(i, j, v) in triplets {
                            a[j * n + i] += v;
                        }
                    }
                    Some(p) => {
                        for &(i, j, v) in triplets {
                            a[p[j] * n + p[i]] += v;
                        }
                    }
                }
                FactKernel::Dense(DenseLu::factor(n, a)?)
            }
            PlanKind::Banded { kl, ku } => {
                let ldab = 2 * kl + ku + 1;
                let mut ab = vec![Complex64::ZERO; ldab * n];
                let p = self
                    .new_of_old
                    .as_ref()
                    .expect("banded plans always carry an ordering");
                for &(i, j, v) in triplets {
                    let (pi, pj) = (p[i], p[j]);
                    debug_assert!(
                        pj + kl >= pi && pi + ku >= pj,
                        "entry ({pi}, {pj}) escapes planned band kl={kl} ku={ku}"
                    );
                    ab[pj * ldab + (kl + ku + pi) - pj] += v;
                }
                FactKernel::Banded(BandedLu::factor(n, kl, ku, ab)?)
            }
        };
        Ok(Factorization {
            new_of_old: self.new_of_old.clone(),
            kernel,
        })
    }
}

enum FactKernel {
    Dense(DenseLu),
    Banded(BandedLu),
}

/// An LU factorization usable for both `A x = b` and `A^T x = b`.
pub struct Factorization {
    new_of_old: Option<Vec<usize>>,
    kernel: FactKernel,
}

impl Factorization {
    /// Solves `A x = b` (no residual check at this level).
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = self.permute(b);
        match &self.kernel {
            FactKernel::Dense(f) => f.solve_in_place(&mut x),
            FactKernel::Banded(f) => f.solve_in_place(&mut x),
        }
        self.unpermute(&x)
    }

    /// Solves `A^T x = b` (plain transpose).
    pub fn solve_transposed(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = self.permute(b);
        match &self.kernel {
            FactKernel::Dense(f) => f.solve_transposed_in_place(&mut x),
            FactKernel::Banded(f) => f.solve_transposed_in_place(&mut x),
        }
        self.unpermute(&x)
    }

    fn permute(&self, b: &[Complex64]) -> Vec<Complex64> {
        match &self.new_of_old {
            None => b.to_vec(),
            Some(p) => {
                let mut out = vec![Complex64::ZERO; b.len()];
                for (old, &new) in p.iter().enumerate() {
                    out[new] = b[old];
                }
                out
            }
        }
    }

    fn unpermute(&self, x: &[Complex64]) -> Vec<Complex64> {
        match &self.new_of_old {
            None => x.to_vec(),
            Some(p) => {
                let mut out = vec![Complex64::ZERO; x.len()];
                for (old, &new) in p.iter().enumerate() {
                    out[old] = x[new];
                }
                out
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Shifted pencil solver with per-shift cache
// ---------------------------------------------------------------------------

type ShiftKey = (u64, u64);
type FactorSlot = Arc<OnceLock<std::result::Result<Arc<Factorization>, String>>>;

fn shift_key(s: Complex64) -> ShiftKey {
    (s.re.to_bits(), s.im.to_bits())
}

/// Cached direct solver for the pencil family `s E - A`.
///
/// Shift keys are bit-exact, so `0.5` and `0.5 + 0.0i` share a factorization
/// while `0.5 + 1e-300i` does not. The factorization count is observable for
/// cache accounting tests.
pub struct ShiftedSolver<'a> {
    e: &'a SparseMatrix,
    a: &'a SparseMatrix,
    plan: FactorPlan,
    cache: Mutex<HashMap<ShiftKey, FactorSlot>>,
    factorizations: AtomicUsize,
}

impl<'a> ShiftedSolver<'a> {
    /// Plans the factorization strategy for the joint pattern of `E` and `A`.
    pub fn new(e: &'a SparseMatrix, a: &'a SparseMatrix) -> ShiftedSolver<'a> {
        assert_eq!(e.nrows(), a.nrows(), "pencil: E and A row mismatch");
        assert_eq!(e.ncols(), a.ncols(), "pencil: E and A column mismatch");
        let mut pattern: Vec<(usize, usize)> = Vec::with_capacity(e.nnz() + a.nnz());
        pattern.extend(e.iter().map(|(i, j, _)| (i, j)));
        pattern.extend(a.iter().map(|(i, j, _)| (i, j)));
        let plan = FactorPlan::from_pattern(e.nrows(), &pattern);
        ShiftedSolver {
            e,
            a,
            plan,
            cache: Mutex::new(HashMap::new()),
            factorizations: AtomicUsize::new(0),
        }
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    /// Number of numeric factorizations performed so far.
    pub fn factorization_count(&self) -> usize {
        self.factorizations.load(Ordering::SeqCst)
    }

    /// Returns the cached factorization of `s E - A`, computing it on first
    /// use. Concurrent requests for distinct shifts factor in parallel;
    /// concurrent requests for the same shift share one factorization.
    pub fn factorization(&self, s: Complex64) -> Result<Arc<Factorization>> {
        let slot = {
            let mut map = self.cache.lock().expect("solver cache poisoned");
            map.entry(shift_key(s)).or_default().clone()
        };
        let result = slot.get_or_init(|| {
            let triplets: Vec<(usize, usize, Complex64)> = self
                .e
                .iter()
                .map(|(i, j, v)| (i, j, s * v))
                .chain(self.a.iter().map(|(i, j, v)| (i, j, -Complex64::from(v))))
                .collect();
            self.factorizations.fetch_add(1, Ordering::SeqCst);
            self.plan.factor(&triplets).map(Arc::new)
        });
        match result {
            Ok(f) => Ok(f.clone()),
            Err(detail) => Err(Error::SingularPencil {
                shift: s,
                detail: detail.clone(),
            }),
        }
    }

    /// Applies the pencil: `(s E - A) x`.
    pub fn pencil_apply(&self, s: Complex64, x: &[Complex64]) -> Vec<Complex64> {
        let ex = self.e.apply_complex(x);
        let ax = self.a.apply_complex(x);
        ex.iter().zip(&ax).map(|(e, a)| s * e - a).collect()
    }

    /// Applies the transposed pencil: `(s E - A)^T x`.
    pub fn pencil_apply_transposed(&self, s: Complex64, x: &[Complex64]) -> Vec<Complex64> {
        let ex = self.e.apply_transpose_complex(x);
        let ax = self.a.apply_transpose_complex(x);
        ex.iter().zip(&ax).map(|(e, a)| s * e - a).collect()
    }

    /// Solves `(s E - A) x = rhs` with residual check and one refinement
    /// step.
    pub fn solve(&self, s: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.solve_inner(s, rhs, false)
    }

    /// Solves `(s E - A)^T x = rhs` reusing the same factorization.
    pub fn solve_transposed(&self, s: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.solve_inner(s, rhs, true)
    }

    fn solve_inner(
        &self,
        s: Complex64,
        rhs: &[Complex64],
        transposed: bool,
    ) -> Result<Vec<Complex64>> {
        let fact = self.factorization(s)?;
        let rhs_norm = cnorm2(rhs);
        if rhs_norm == 0.0 {
            return Ok(vec![Complex64::ZERO; rhs.len()]);
        }
        let run = |b: &[Complex64]| {
            if transposed {
                fact.solve_transposed(b)
            } else {
                fact.solve(b)
            }
        };
        let apply = |x: &[Complex64]| {
            if transposed {
                self.pencil_apply_transposed(s, x)
            } else {
                self.pencil_apply(s, x)
            }
        };
        let mut x = run(rhs);
        let residual = |x: &[Complex64]| -> Vec<Complex64> {
            apply(x)
                .iter()
                .zip(rhs)
                .map(|(ax, b)| b - ax)
                .collect()
        };
        let mut r = residual(&x);
        if cnorm2(&r) > SOLVE_RESIDUAL_TOL * rhs_norm {
            // One step of iterative refinement.
            let dx = run(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            r = residual(&x);
            let rel = cnorm2(&r) / rhs_norm;
            if rel > SOLVE_RESIDUAL_TOL {
                return Err(Error::ResidualCheck {
                    shift: s,
                    residual: rel,
                    tol: SOLVE_RESIDUAL_TOL,
                });
            }
        }
        Ok(x)
    }

    /// Computes the chain `[X_0(s) b, X_1(s) b, ..., X_jmax(s) b]` with one
    /// factorization and `jmax + 1` solves.
    pub fn xj_chain(&self, s: Complex64, jmax: usize, b: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
        let mut out = Vec::with_capacity(jmax + 1);
        let mut w = self.solve(s, b)?;
        for _ in 0..jmax {
            let ew = self.e.apply_complex(&w);
            out.push(w);
            w = self.solve(s, &ew)?;
        }
        out.push(w);
        Ok(out)
    }

    /// Transposed chain `[X_0(s)^T c, ..., X_jmax(s)^T c]`, sharing the same
    /// factorization as the plain chain.
    pub fn xj_chain_transposed(
        &self,
        s: Complex64,
        jmax: usize,
        c: &[Complex64],
    ) -> Result<Vec<Vec<Complex64>>> {
        let mut out = Vec::with_capacity(jmax + 1);
        let mut w = self.solve_transposed(s, c)?;
        for _ in 0..jmax {
            let ew = self.e.apply_transpose_complex(&w);
            out.push(w);
            w = self.solve_transposed(s, &ew)?;
        }
        out.push(w);
        Ok(out)
    }

    /// Evaluates `X_j(s) b`.
    pub fn xj_apply(&self, s: Complex64, j: usize, b: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.xj_chain(s, j, b)?.pop().expect("chain is nonempty"))
    }

    /// Evaluates `X_j(s)^T c`.
    pub fn xj_apply_transposed(
        &self,
        s: Complex64,
        j: usize,
        c: &[Complex64],
    ) -> Result<Vec<Complex64>> {
        Ok(self
            .xj_chain_transposed(s, j, c)?
            .pop()
            .expect("chain is nonempty"))
    }

    /// Compares the closed-form derivative rule
    /// `d^l/ds^l X_j(s) b = (-1)^l (j+l)!/j! X_{j+l}(s) b` (for `l <= 3`)
    /// against a central finite difference of `X_j(s) b` with step `h`.
    /// Returns the relative deviation.
    pub fn xj_derivative_check(
        &self,
        s: Complex64,
        j: usize,
        l: usize,
        b: &[Complex64],
        h: f64,
    ) -> Result<f64> {
        if l == 0 || l > 3 {
            return Err(Error::Unsupported(format!(
                "derivative order {l} outside 1..=3"
            )));
        }
        // Central difference weights at accuracy order 2 over integer
        // offsets of h.
        let stencil: Vec<(f64, f64)> = match l {
            1 => vec![(-1.0, -0.5), (1.0, 0.5)],
            2 => vec![(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
            _ => vec![(-2.0, -0.5), (-1.0, 1.0), (1.0, -1.0), (2.0, 0.5)],
        };
        let n = self.n();
        let mut fd = vec![Complex64::ZERO; n];
        let hl = h.powi(l as i32);
        for &(offset, weight) in &stencil {
            let sj = s + Complex64::from(offset * h);
            let w = self.xj_apply(sj, j, b)?;
            for (acc, wi) in fd.iter_mut().zip(&w) {
                *acc += wi * Complex64::from(weight / hl);
            }
        }
        let mut factor = 1.0;
        for t in 1..=l {
            factor *= (j + t) as f64;
        }
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        let closed: Vec<Complex64> = self
            .xj_apply(s, j + l, b)?
            .iter()
            .map(|v| v * Complex64::from(sign * factor))
            .collect();
        let diff: Vec<Complex64> = closed.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let denom = cnorm2(&closed).max(1e-300);
        Ok(cnorm2(&diff) / denom)
    }
}
