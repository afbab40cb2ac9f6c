//! Restarted GMRES with right preconditioning over complex vectors.

use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy)]
pub(crate) struct GmresOptions {
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// True residual `‖b − A x‖₂ / ‖b‖₂` at exit.
    pub rel_residual: f64,
    pub converged: bool,
}

fn dot(u: &[C64], w: &[C64]) -> C64 {
    u.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

fn norm(u: &[C64]) -> f64 {
    u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn residual(apply: &impl Fn(&[C64]) -> Vec<C64>, b: &[C64], x: &[C64]) -> Vec<C64> {
    let ax = apply(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

/// Solves `A x = b` with `A` given by `apply` and the right preconditioner
/// `precond ≈ A⁻¹`, minimizing the unpreconditioned residual.
pub(crate) fn gmres(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    precond: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    x0: Vec<C64>,
    opts: GmresOptions,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let target = opts.rel_tol * bnorm;
    let m = opts.restart.max(1);
    let mut x = x0;
    let mut iterations = 0;
    loop {
        let r = residual(&apply, b, &x);
        let beta = norm(&r);
        if beta <= target || iterations >= opts.max_iterations {
            return GmresOutcome { x, iterations, rel_residual: beta / bnorm, converged: beta <= target };
        }
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![ZERO; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![ZERO; m];
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        while k < m && iterations < opts.max_iterations {
            let z = precond(&basis[k]);
            let mut w = apply(&z);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                h[i][k] = hij;
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= hij * vi;
                }
            }
            let wn = norm(&w);
            h[k + 1][k] = C64::new(wn, 0.0);
            for i in 0..k {
                let (a, bb) = (h[i][k], h[i + 1][k]);
                h[i][k] = a * cs[i] + sn[i] * bb;
                h[i + 1][k] = -sn[i].conj() * a + bb * cs[i];
            }
            let (a, bb) = (h[k][k], h[k + 1][k]);
            let rho = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = C64::new(1.0, 0.0);
            } else {
                cs[k] = a.norm() / rho;
                sn[k] = (a / a.norm()) * bb.conj() / rho;
            }
            h[k][k] = a * cs[k] + sn[k] * bb;
            h[k + 1][k] = ZERO;
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            if g[k].norm() <= target || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let s: C64 = g[i] - ((i + 1)..k).map(|j| h[i][j] * y[j]).sum::<C64>();
            y[i] = s / h[i][i];
        }
        let mut u = vec![ZERO; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (ui, vi) in u.iter_mut().zip(v) {
                *ui += yi * vi;
            }
        }
        for (xi, di) in x.iter_mut().zip(precond(&u)) {
            *xi += di;
        }
    }
}
