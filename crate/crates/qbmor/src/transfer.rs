//! Transfer-kernel moments of quadratic-bilinear systems.
//!
//! All quantities are built from the resolvent chain
//! `X_j(s) = [(sE-A)^{-1} E]^j (sE-A)^{-1}` applied to the input vector `b`
//! or transposed onto the output vector `c`, using the derivative rule
//! `d^l/ds^l X_j(s) = (-1)^l (j+l)!/j! X_{j+l}(s)`.
//!
//! Kernels evaluated here (scalar views along fixed tangential directions):
//!
//! - First order: `F1(s) = c^T X_0(s) b`, with
//!   `d^p/ds^p F1(s) = (-1)^p p! c^T X_p(s) b`.
//! - Second order, regular form:
//!   `F2(s1, s2) = c^T [ X_0(s2) N X_0(s1) b + X_0(s2) H (X_0(s2-s1) b (x) X_0(s1) b) ]`,
//!   with closed-form mixed partials in both variables.
//! - Second order, symmetric form:
//!   `G2(s1, s2) = (1/2) c^T X_0(s1+s2) [ N (X_0(s1)+X_0(s2)) b
//!                 + H (X_0(s1) b (x) X_0(s2) b + X_0(s2) b (x) X_0(s1) b) ]`,
//!   with mixed partials by the Leibniz rule.
//! - Third order, regular form: `F3(s1, s2, s3)` given by three composition
//!   terms; its mixed partials reuse the second-order state vector
//!   derivatives at substituted arguments, including the chain rule for the
//!   shifted arguments `(s2 - s1, s3 - s1)`.
//!
//! Every closed form can be cross-checked against central finite
//! differences of the corresponding order-0 evaluator.

use crate::error::{Error, Result};
use crate::solve::ShiftedSolver;
use crate::sparse::{cdot, cnorm2, to_complex};
use crate::system::SisoView;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Exact factorial as f64 (exact for n <= 22, far beyond the orders used).
pub(crate) fn fact(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Binomial coefficient as f64.
pub(crate) fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut num = 1.0;
    let mut den = 1.0;
    for t in 0..k {
        num *= (n - t) as f64;
        den *= (t + 1) as f64;
    }
    num / den
}

/// (-1)^t.
pub(crate) fn neg1(t: usize) -> f64 {
    if t % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Which transfer kernel a moment request refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    /// First-order kernel (one frequency variable).
    H1,
    /// Second-order kernel, regular multivariate form (two variables).
    H2Reg,
    /// Second-order kernel, symmetric form (two variables).
    H2Sym,
    /// Third-order kernel, regular multivariate form (three variables).
    H3Reg,
}

impl KernelForm {
    /// Number of frequency variables of the kernel.
    pub fn arity(self) -> usize {
        match self {
            KernelForm::H1 => 1,
            KernelForm::H2Reg | KernelForm::H2Sym => 2,
            KernelForm::H3Reg => 3,
        }
    }
}

/// A request for one mixed partial derivative of a transfer kernel at a
/// point: `d^{orders} K(points)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRequest {
    pub form: KernelForm,
    pub points: Vec<Complex64>,
    pub orders: Vec<usize>,
}

impl MomentRequest {
    pub fn new(form: KernelForm, points: Vec<Complex64>, orders: Vec<usize>) -> Result<Self> {
        if points.len() != form.arity() || orders.len() != form.arity() {
            return Err(Error::Invalid(format!(
                "{form:?} takes {} points/orders, got {}/{}",
                form.arity(),
                points.len(),
                orders.len()
            )));
        }
        Ok(MomentRequest {
            form,
            points,
            orders,
        })
    }
}

/// The value of an evaluated moment request.
#[derive(Debug, Clone)]
pub struct MomentValue {
    pub request: MomentRequest,
    pub value: Complex64,
}

/// Result of comparing a closed-form moment against a finite difference.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub closed: Complex64,
    pub finite_difference: Complex64,
    pub rel_err: f64,
}

/// Evaluates transfer-kernel moments for one single-input single-output view
/// of a system, sharing a factorization cache across all evaluations.
pub struct TransferOracle<'a> {
    view: &'a SisoView<'a>,
    solver: &'a ShiftedSolver<'a>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
}

impl<'a> TransferOracle<'a> {
    pub fn new(view: &'a SisoView<'a>, solver: &'a ShiftedSolver<'a>) -> Self {
        TransferOracle {
            view,
            solver,
            b: to_complex(&view.b),
            c: to_complex(&view.c),
        }
    }

    /// `d^p/ds^p` of the first-order kernel at `s`.
    pub fn h1(&self, s: Complex64, p: usize) -> Result<Complex64> {
        let xp = self.solver.xj_apply(s, p, &self.b)?;
        Ok(Complex64::from(neg1(p) * fact(p)) * cdot(&self.c, &xp))
    }

    /// Mixed partial `d^p/ds1^p d^q/ds2^q` of the regular-form second-order
    /// kernel at `(s1, s2)`.
    ///
    /// Coincident points `s1 = s2` put one resolvent at shift zero, which
    /// requires `A` itself to be nonsingular; otherwise the shift-zero
    /// factorization fails with a clear error.
    pub fn h2_reg(&self, s1: Complex64, s2: Complex64, p: usize, q: usize) -> Result<Complex64> {
        let alpha = self.solver.xj_chain(s1, p, &self.b)?;
        let delta = self.solver.xj_chain(s2 - s1, p + q, &self.b)?;
        let gamma = self.solver.xj_chain_transposed(s2, q, &self.c)?;

        // First composition term.
        let n_alpha = self.view.n.apply_complex(&alpha[p]);
        let mut value =
            Complex64::from(neg1(p + q) * fact(p) * fact(q)) * cdot(&gamma[q], &n_alpha);

        // Second composition term, summed over the output-side Leibniz index.
        for j in 0..=q {
            let w = self.h_mixed_sum(p, q, j, &delta, &alpha);
            value += Complex64::from(binom(q, j) * fact(q - j)) * cdot(&gamma[q - j], &w);
        }
        Ok(value)
    }

    /// `sum_k (-1)^{p+q-k} C(p,k) (k+j)! (p-k)! H(delta_{k+j} (x) alpha_{p-k})`,
    /// the quadratic part shared by the regular-form second-order partials.
    fn h_mixed_sum(
        &self,
        p: usize,
        q: usize,
        j: usize,
        delta: &[Vec<Complex64>],
        alpha: &[Vec<Complex64>],
    ) -> Vec<Complex64> {
        let nstate = self.b.len();
        let mut w = vec![Complex64::ZERO; nstate];
        for k in 0..=p {
            let coeff = neg1(p + q - k) * binom(p, k) * fact(k + j) * fact(p - k);
            let term = self.view.h.apply_complex(&delta[k + j], &alpha[p - k]);
            for (wi, ti) in w.iter_mut().zip(&term) {
                *wi += ti * coeff;
            }
        }
        w
    }

    /// Mixed partial of the symmetric-form second-order kernel via the
    /// Leibniz rule applied to the product of the outer resolvent at
    /// `s1 + s2` and the inner excitation.
    pub fn h2_sym(&self, s1: Complex64, s2: Complex64, p: usize, q: usize) -> Result<Complex64> {
        let alpha = self.solver.xj_chain(s1, p, &self.b)?;
        let beta = self.solver.xj_chain(s2, q, &self.b)?;
        let gamma = self.solver.xj_chain_transposed(s1 + s2, p + q, &self.c)?;
        let nstate = self.b.len();

        let mut value = Complex64::ZERO;
        for a in 0..=p {
            for bb in 0..=q {
                let t = (p - a) + (q - bb);
                // Scaled derivative vectors of the two inner resolvents.
                let sa = Complex64::from(neg1(a) * fact(a));
                let sb = Complex64::from(neg1(bb) * fact(bb));
                let va: Vec<Complex64> = alpha[a].iter().map(|x| x * sa).collect();
                let vb: Vec<Complex64> = beta[bb].iter().map(|x| x * sb).collect();

                let mut g = vec![Complex64::ZERO; nstate];
                if bb == 0 {
                    for (gi, ni) in g.iter_mut().zip(self.view.n.apply_complex(&va)) {
                        *gi += ni;
                    }
                }
                if a == 0 {
                    for (gi, ni) in g.iter_mut().zip(self.view.n.apply_complex(&vb)) {
                        *gi += ni;
                    }
                }
                for (gi, hi) in g.iter_mut().zip(self.view.h.apply_complex(&va, &vb)) {
                    *gi += hi;
                }
                for (gi, hi) in g.iter_mut().zip(self.view.h.apply_complex(&vb, &va)) {
                    *gi += hi;
                }

                let coeff = 0.5 * binom(p, a) * binom(q, bb) * neg1(t) * fact(t);
                value += Complex64::from(coeff) * cdot(&gamma[t], &g);
            }
        }
        Ok(value)
    }

    /// State-space mixed partial `d1^a d2^b` of the second-order composition
    /// vector `Z(s1, s2) = X_0(s2) N X_0(s1) b + X_0(s2) H (X_0(s2-s1) b (x)
    /// X_0(s1) b)` evaluated as a full state vector (before the output map).
    /// This is the building block that third-order partials compose, and the
    /// combination column used by compact third-order basis spans.
    pub(crate) fn z2_state(
        &self,
        a: usize,
        b: usize,
        s1: Complex64,
        s2: Complex64,
    ) -> Result<Vec<Complex64>> {
        let alpha = self.solver.xj_chain(s1, a, &self.b)?;
        let delta = self.solver.xj_chain(s2 - s1, a + b, &self.b)?;

        let n_alpha = self.view.n.apply_complex(&alpha[a]);
        let scale = Complex64::from(neg1(a + b) * fact(a) * fact(b));
        let mut out: Vec<Complex64> = self
            .solver
            .xj_apply(s2, b, &n_alpha)?
            .into_iter()
            .map(|v| v * scale)
            .collect();

        for j in 0..=b {
            let w = self.h_mixed_sum(a, b, j, &delta, &alpha);
            let xw = self.solver.xj_apply(s2, b - j, &w)?;
            let cj = Complex64::from(binom(b, j) * fact(b - j));
            for (oi, xi) in out.iter_mut().zip(&xw) {
                *oi += xi * cj;
            }
        }
        Ok(out)
    }

    /// Mixed partial `d^p/ds1^p d^q/ds2^q d^l/ds3^l` of the regular-form
    /// third-order kernel at `(s1, s2, s3)`.
    pub fn h3_reg(
        &self,
        s1: Complex64,
        s2: Complex64,
        s3: Complex64,
        p: usize,
        q: usize,
        l: usize,
    ) -> Result<Complex64> {
        // Memoize second-order state vectors: the three composition terms
        // reuse them at two argument pairs.
        let mut memo: HashMap<(usize, usize, (u64, u64, u64, u64)), Vec<Complex64>> =
            HashMap::new();
        let mut z2 = |a: usize, b: usize, u: Complex64, v: Complex64| -> Result<Vec<Complex64>> {
            let key = (a, b, (u.re.to_bits(), u.im.to_bits(), v.re.to_bits(), v.im.to_bits()));
            if let Some(hit) = memo.get(&key) {
                return Ok(hit.clone());
            }
            let computed = self.z2_state(a, b, u, v)?;
            memo.insert(key, computed.clone());
            Ok(computed)
        };

        let gamma3 = self.solver.xj_chain_transposed(s3, l, &self.c)?;
        let alpha1 = self.solver.xj_chain(s1, p, &self.b)?;
        let theta = self.solver.xj_chain(s3 - s2, l + q, &self.b)?;

        // First term: outer resolvent, bilinear coupling, inner second-order
        // state.
        let z_pq = z2(p, q, s1, s2)?;
        let mut value = Complex64::from(neg1(l) * fact(l)) * cdot(&gamma3[l], &self.view.n.apply_complex(&z_pq));

        // Second term: quadratic coupling of an input chain at s3 - s2 with
        // the second-order state at (s1, s2).
        for kl in 0..=l {
            let outer = neg1(l) * binom(l, kl) * fact(l - kl);
            for kq in 0..=q {
                let inner = binom(q, kq) * fact(kl + kq);
                let z = z2(p, q - kq, s1, s2)?;
                let hterm = self.view.h.apply_complex(&theta[kl + kq], &z);
                value += Complex64::from(outer * inner) * cdot(&gamma3[l - kl], &hterm);
            }
        }

        // Third term: quadratic coupling of the second-order state at the
        // substituted arguments (s2 - s1, s3 - s1) with an input chain at s1.
        // The substitution contributes a chain-rule sum over a2.
        for kl in 0..=l {
            let outer = binom(l, kl) * fact(l - kl);
            for kp in 0..=p {
                let sign = neg1(p + l - kp - kl) * binom(p, kp);
                let mut d_vec = vec![Complex64::ZERO; self.b.len()];
                for a2 in 0..=kp {
                    let cc = neg1(kp) * binom(kp, a2);
                    let z = z2(q + a2, kl + kp - a2, s2 - s1, s3 - s1)?;
                    for (di, zi) in d_vec.iter_mut().zip(&z) {
                        *di += zi * cc;
                    }
                }
                let hterm = self.view.h.apply_complex(&d_vec, &alpha1[p - kp]);
                value += Complex64::from(outer * sign * fact(p - kp)) * cdot(&gamma3[l - kl], &hterm);
            }
        }
        Ok(value)
    }

    /// Evaluates an arbitrary moment request.
    pub fn evaluate(&self, request: &MomentRequest) -> Result<MomentValue> {
        let s = &request.points;
        let o = &request.orders;
        let value = match request.form {
            KernelForm::H1 => self.h1(s[0], o[0])?,
            KernelForm::H2Reg => self.h2_reg(s[0], s[1], o[0], o[1])?,
            KernelForm::H2Sym => self.h2_sym(s[0], s[1], o[0], o[1])?,
            KernelForm::H3Reg => self.h3_reg(s[0], s[1], s[2], o[0], o[1], o[2])?,
        };
        Ok(MomentValue {
            request: request.clone(),
            value,
        })
    }

    /// Cross-checks a closed-form moment against a central finite difference
    /// of the order-0 evaluator, using step `h` per differentiated variable.
    /// Supports total derivative order up to 3.
    pub fn fd_cross_check(&self, request: &MomentRequest, h: f64) -> Result<FdCheck> {
        let total: usize = request.orders.iter().sum();
        if total > 3 {
            return Err(Error::Unsupported(format!(
                "finite-difference cross-check supports total order <= 3, got {total}"
            )));
        }
        let closed = self.evaluate(request)?.value;

        // Second-order-accurate central stencils per derivative order,
        // as (integer offset, weight) pairs.
        let stencil = |d: usize| -> Vec<(i64, f64)> {
            match d {
                0 => vec![(0, 1.0)],
                1 => vec![(-1, -0.5), (1, 0.5)],
                2 => vec![(-1, 1.0), (0, -2.0), (1, 1.0)],
                3 => vec![(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
                _ => unreachable!(),
            }
        };
        let per_var: Vec<Vec<(i64, f64)>> =
            request.orders.iter().map(|&d| stencil(d)).collect();

        let zero_orders = vec![0usize; request.orders.len()];
        let mut fd = Complex64::ZERO;
        let mut combo = vec![0usize; per_var.len()];
        loop {
            let mut weight = 1.0;
            let mut points = request.points.clone();
            for (v, &pick) in combo.iter().enumerate() {
                let (offset, w) = per_var[v][pick];
                weight *= w;
                points[v] += Complex64::from(offset as f64 * h);
            }
            let base = MomentRequest::new(request.form, points, zero_orders.clone())?;
            fd += self.evaluate(&base)?.value * Complex64::from(weight);

            // Advance the mixed-radix counter over stencil picks.
            let mut v = 0;
            loop {
                if v == combo.len() {
                    let denom = h.powi(total as i32);
                    let fd = fd / Complex64::from(denom);
                    let scale = closed.norm().max(fd.norm()).max(1e-300);
                    return Ok(FdCheck {
                        closed,
                        finite_difference: fd,
                        rel_err: (closed - fd).norm() / scale,
                    });
                }
                combo[v] += 1;
                if combo[v] < per_var[v].len() {
                    break;
                }
                combo[v] = 0;
                v += 1;
            }
        }
    }

    /// Relative agreement helper used in tests and verification tables.
    pub fn relative_gap(a: Complex64, b: Complex64) -> f64 {
        let scale = a.norm().max(b.norm()).max(1e-300);
        (a - b).norm() / scale
    }
}

/// Normalized deviation between two complex vectors (used by invariants).
pub fn vec_relative_gap(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = cnorm2(a).max(cnorm2(b)).max(1e-300);
    cnorm2(&diff) / scale
}
