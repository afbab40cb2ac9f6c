//! Steady states `L ρ = 0, Tr ρ = 1`.
//!
//! Small systems use a dense LU with one equation replaced by the trace
//! condition. Larger ones use restarted GMRES on the bordered operator
//! `x ↦ L x + ρ_ref Tr x` with right-hand side `ρ_ref = I/d`, preconditioned by
//! the exact inverse of the Sylvester part `X ↦ A X + X A†`
//! (`A = −iH − ½ Σ γ L†L`) computed from a complex Schur factorization. When
//! every operator is homogeneous in total photon-number parity the unknown is
//! restricted to the two parity-diagonal blocks, which hold the steady state.
//! Long-time evolution is the last resort.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::gmres::{gmres, GmresOptions};
use super::{build_liouvillian, evolve, max_abs_rhs, mean_occupation, Generator, Liouvillian, SystemSpec};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockCutoff};
use crate::linalg;
use crate::operator::RectOperator;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Auto,
    DenseRowReplacement,
    Krylov,
    Evolution,
}

/// Which algorithm produced a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvePath {
    DenseRowReplacement,
    Krylov,
    Evolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadyStateOptions {
    pub method: SolverMethod,
    /// Largest superoperator dimension `d²` handled by the dense path under `Auto`.
    pub dense_max_dim: usize,
    pub krylov_rel_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max_iterations: usize,
    /// Acceptance threshold on `max |L ρ|`.
    pub residual_tol: f64,
    pub fallback_time: f64,
    pub fallback_dt: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            dense_max_dim: 1024,
            krylov_rel_tol: 1e-9,
            krylov_restart: 80,
            krylov_max_iterations: 1500,
            residual_tol: 1e-8,
            fallback_time: 200.0,
            fallback_dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    pub path: SolvePath,
    /// `max |L ρ|` of the returned state.
    pub residual: f64,
    pub iterations: usize,
    pub min_eigenvalue: f64,
}

pub fn steady_state(l: &Liouvillian) -> Result<SteadyState> {
    steady_state_with(l, &SteadyStateOptions::default())
}

pub fn steady_state_with(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyState> {
    let d2 = l.dim() * l.dim();
    match opts.method {
        SolverMethod::DenseRowReplacement => dense(l, opts),
        SolverMethod::Krylov => krylov(l, opts),
        SolverMethod::Evolution => evolution(l, opts),
        SolverMethod::Auto => {
            let first = if d2 <= opts.dense_max_dim { dense(l, opts) } else { krylov(l, opts) };
            match first {
                Ok(s) => Ok(s),
                Err(Error::SteadyState(_)) => evolution(l, opts),
                Err(e) => Err(e),
            }
        }
    }
}

fn finish(
    l: &Liouvillian,
    m: Array2<C64>,
    path: SolvePath,
    iterations: usize,
    opts: &SteadyStateOptions,
    min_eigenvalue: Option<f64>,
) -> Result<SteadyState> {
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SteadyState(format!("{path:?} produced non-finite entries")));
    }
    let rho = DensityMatrix::from_approximate(m, l.subsystem_dims().to_vec())
        .map_err(|e| Error::SteadyState(format!("{path:?}: {e}")))?;
    let residual = max_abs_rhs(l.generator(), &rho.view());
    if residual > opts.residual_tol {
        return Err(Error::SteadyState(format!(
            "{path:?} residual {residual:e} above {:e} after {iterations} iterations",
            opts.residual_tol
        )));
    }
    let min_eigenvalue = min_eigenvalue.unwrap_or_else(|| rho.min_eigenvalue());
    if min_eigenvalue < -DensityMatrix::POSITIVITY_TOL {
        return Err(Error::InvalidDensityMatrix(format!(
            "steady state from {path:?} has eigenvalue {min_eigenvalue:e}"
        )));
    }
    Ok(SteadyState { rho, path, residual, iterations, min_eigenvalue })
}

fn dense(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyState> {
    let d = l.dim();
    let n = d * d;
    let mut m = DMatrix::<C64>::zeros(n, n);
    for (r, c, v) in l.superop().iter() {
        m[(r, c)] = v;
    }
    // the (0,0) equation is implied by the others through trace preservation
    for c in 0..n {
        m[(0, c)] = ZERO;
    }
    for i in 0..d {
        m[(0, i * d + i)] = C64::new(1.0, 0.0);
    }
    let mut b = DVector::<C64>::zeros(n);
    b[0] = C64::new(1.0, 0.0);
    let x = m.lu().solve(&b).ok_or_else(|| Error::SteadyState("singular bordered Liouvillian".into()))?;
    let rho = Array2::from_shape_fn((d, d), |(i, j)| x[i * d + j]);
    finish(l, rho, SolvePath::DenseRowReplacement, 1, opts, None)
}

fn evolution(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyState> {
    let d = l.dim();
    let mixed = Array2::from_diag_elem(d, C64::new(1.0 / d as f64, 0.0));
    let mut rho = DensityMatrix::new_unchecked_positivity(mixed, l.subsystem_dims().to_vec())?;
    let chunk = (opts.fallback_time / 20.0).max(opts.fallback_dt);
    let mut t = 0.0;
    let mut chunks = 0;
    while t < opts.fallback_time {
        rho = evolve(&rho, l, chunk, opts.fallback_dt)?;
        t += chunk;
        chunks += 1;
        if max_abs_rhs(l.generator(), &rho.view()) <= opts.residual_tol {
            break;
        }
    }
    finish(l, rho.into_matrix(), SolvePath::Evolution, chunks, opts, None)
}

/// Mixed-radix digit sum parity of every basis index.
fn photon_parity(dims: &[usize]) -> Vec<u8> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut sum = 0;
            for &d in dims.iter().rev() {
                sum += idx % d;
                idx /= d;
            }
            (sum % 2) as u8
        })
        .collect()
}

struct SectorJump {
    target: usize,
    source: usize,
    rate: f64,
    op: RectOperator,
}

struct SylvesterBlock {
    q: Array2<C64>,
    q_adj: Array2<C64>,
    t: Array2<C64>,
}

impl SylvesterBlock {
    fn new(a: &Array2<C64>) -> Result<Self> {
        let schur = nalgebra::Schur::try_new(linalg::to_nalgebra(&a.view()), f64::EPSILON, 0)
            .ok_or_else(|| Error::SteadyState("Schur factorization did not converge".into()))?;
        let (q, t) = schur.unpack();
        let q = linalg::from_nalgebra(&q);
        let q_adj = linalg::adjoint(&q.view());
        Ok(Self { q, q_adj, t: linalg::from_nalgebra(&t) })
    }

    /// Solves `A X + X A† = C`.
    fn solve(&self, c: &ArrayView2<C64>) -> Array2<C64> {
        let ct = self.q_adj.dot(c).dot(&self.q);
        let y = solve_triangular_sylvester(&self.t, &ct);
        self.q.dot(&y).dot(&self.q_adj)
    }
}

/// `T Y + Y T† = C` for upper-triangular `T`, back-substituting from the
/// last row.
fn solve_triangular_sylvester(t: &Array2<C64>, c: &Array2<C64>) -> Array2<C64> {
    let n = t.nrows();
    let mut y = Array2::<C64>::zeros((n, n));
    let mut b = vec![ZERO; n];
    for i in (0..n).rev() {
        b.copy_from_slice(c.row(i).as_slice().expect("standard layout"));
        for k in (i + 1)..n {
            let tik = t[[i, k]];
            if tik != ZERO {
                for (bj, ykj) in b.iter_mut().zip(y.row(k)) {
                    *bj -= tik * ykj;
                }
            }
        }
        let lam = t[[i, i]];
        for j in (0..n).rev() {
            let trow = t.row(j);
            let yrow = y.row(i);
            let mut s = b[j];
            for k in (j + 1)..n {
                s -= yrow[k] * trow[k].conj();
            }
            y[[i, j]] = s / (lam + t[[j, j]].conj());
        }
    }
    y
}

struct SectorProblem {
    blocks: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    a: Vec<RectOperator>,
    jumps: Vec<SectorJump>,
    precond: Vec<SylvesterBlock>,
    dim: usize,
}

impl SectorProblem {
    fn new(generator: &Generator, dims: &[usize]) -> Result<Self> {
        let d = generator.dim();
        let parity = photon_parity(dims);
        let degree_of = |op: &crate::operator::Operator| -> Option<u8> {
            let mut deg = None;
            for (r, c, _) in op.iter() {
                let g = parity[r] ^ parity[c];
                match deg {
                    None => deg = Some(g),
                    Some(x) if x != g => return None,
                    _ => {}
                }
            }
            Some(deg.unwrap_or(0))
        };
        let graded = d > 1
            && degree_of(&generator.hamiltonian) == Some(0)
            && generator.jumps.iter().all(|j| degree_of(&j.op).is_some());
        let blocks: Vec<Vec<usize>> = if graded {
            (0..2u8).map(|p| (0..d).filter(|&i| parity[i] == p).collect()).collect()
        } else {
            vec![(0..d).collect()]
        };
        let a_full = generator.effective_hamiltonian_generator();
        let a: Vec<RectOperator> = blocks.iter().map(|b| a_full.block(b, b)).collect();
        let mut jumps = Vec::new();
        for j in &generator.jumps {
            let deg = if graded { degree_of(&j.op).unwrap_or(0) as usize } else { 0 };
            for (source, b) in blocks.iter().enumerate() {
                let target = source ^ deg;
                let op = j.op.block(&blocks[target], b);
                if !op.is_empty() {
                    jumps.push(SectorJump { target, source, rate: j.rate, op });
                }
            }
        }
        let precond = a.iter().map(|ab| SylvesterBlock::new(&ab.to_dense())).collect::<Result<Vec<_>>>()?;
        let mut offsets = vec![0];
        for b in &blocks {
            offsets.push(offsets.last().unwrap() + b.len() * b.len());
        }
        Ok(Self { dim: d, blocks, offsets, a, jumps, precond })
    }

    fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn view<'a>(&self, x: &'a [C64], b: usize) -> ArrayView2<'a, C64> {
        let n = self.blocks[b].len();
        ArrayView2::from_shape((n, n), &x[self.offsets[b]..self.offsets[b + 1]]).expect("block layout")
    }

    fn trace(&self, x: &[C64]) -> C64 {
        (0..self.blocks.len()).map(|b| linalg::trace(&self.view(x, b))).sum()
    }

    /// `L x + (I/d) Tr x`.
    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out: Vec<Array2<C64>> = Vec::with_capacity(self.blocks.len());
        for (b, a) in self.a.iter().enumerate() {
            let xb = self.view(x, b);
            let ax = a.mul_dense(&xb);
            let xa = linalg::adjoint(&a.mul_dense(&linalg::adjoint(&xb).view()).view());
            out.push(ax + xa);
        }
        for j in &self.jumps {
            let xs = self.view(x, j.source);
            let mut acc = Array2::<C64>::zeros(out[j.target].raw_dim());
            j.op.sandwich_into(&xs, &mut acc);
            out[j.target].scaled_add(C64::new(j.rate, 0.0), &acc);
        }
        let shift = self.trace(x) / self.dim as f64;
        for o in &mut out {
            for i in 0..o.nrows() {
                o[[i, i]] += shift;
            }
        }
        out.into_iter().flat_map(|m| m.into_iter()).collect()
    }

    fn precondition(&self, y: &[C64]) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.len());
        for (b, p) in self.precond.iter().enumerate() {
            out.extend(p.solve(&self.view(y, b)).into_iter());
        }
        out
    }

    fn reference(&self) -> Vec<C64> {
        let mut v = vec![ZERO; self.len()];
        for (b, block) in self.blocks.iter().enumerate() {
            let n = block.len();
            for i in 0..n {
                v[self.offsets[b] + i * n + i] = C64::new(1.0 / self.dim as f64, 0.0);
            }
        }
        v
    }

    fn assemble(&self, x: &[C64]) -> Array2<C64> {
        let mut m = Array2::<C64>::zeros((self.dim, self.dim));
        for (b, block) in self.blocks.iter().enumerate() {
            let xb = self.view(x, b);
            for (i, &r) in block.iter().enumerate() {
                for (j, &c) in block.iter().enumerate() {
                    m[[r, c]] = xb[[i, j]];
                }
            }
        }
        m
    }

    fn min_eigenvalue(&self, x: &[C64]) -> f64 {
        (0..self.blocks.len())
            .map(|b| {
                let xb = self.view(x, b);
                let tr = self.trace(x).re;
                linalg::hermitian_eigenvalues(&xb.mapv(|v| v / tr).view()).first().copied().unwrap_or(0.0)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn krylov(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyState> {
    let problem = SectorProblem::new(l.generator(), l.subsystem_dims())?;
    let b = problem.reference();
    let out = gmres(
        |x| problem.apply(x),
        |y| problem.precondition(y),
        &b,
        b.clone(),
        GmresOptions {
            rel_tol: opts.krylov_rel_tol,
            restart: opts.krylov_restart,
            max_iterations: opts.krylov_max_iterations,
        },
    );
    if !out.converged {
        return Err(Error::SteadyState(format!(
            "GMRES stopped at relative residual {:e} after {} iterations",
            out.rel_residual, out.iterations
        )));
    }
    let min_ev = problem.min_eigenvalue(&out.x);
    finish(l, problem.assemble(&out.x), SolvePath::Krylov, out.iterations, opts, Some(min_ev))
}

/// Cutoff refinement: solve at `start`, then keep raising `n_max` by `step`
/// until `⟨a₁†a₁⟩` moves by less than `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffPolicy {
    pub start: usize,
    pub step: usize,
    pub rel_tol: f64,
    pub max_n_max: usize,
}

impl Default for CutoffPolicy {
    fn default() -> Self {
        Self { start: 15, step: 3, rel_tol: 0.01, max_n_max: 24 }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergedSteadyState {
    /// State at the finer of the last two cutoffs.
    pub state: SteadyState,
    pub cutoff: FockCutoff,
    /// `(n_max, ⟨a₁†a₁⟩)` for every cutoff tried.
    pub history: Vec<(usize, f64)>,
    /// Relative occupation change between the last two cutoffs.
    pub relative_shift: f64,
    pub converged: bool,
}

pub fn steady_state_converged(
    spec: &SystemSpec,
    policy: CutoffPolicy,
    opts: &SteadyStateOptions,
) -> Result<ConvergedSteadyState> {
    if policy.step == 0 || policy.start == 0 || policy.max_n_max < policy.start + policy.step {
        return Err(Error::param(
            "cutoff_policy",
            format!("need start >= 1, step >= 1 and max_n_max >= start + step, got {policy:?}"),
        ));
    }
    let solve = |n: usize| -> Result<(SteadyState, f64)> {
        let l = build_liouvillian(&spec.with_cutoff(FockCutoff::new(n)?))?;
        let s = steady_state_with(&l, opts)?;
        let occ = mean_occupation(&s.rho, 0)?;
        Ok((s, occ))
    };
    let mut n = policy.start;
    let (_, mut occ) = solve(n)?;
    let mut history = vec![(n, occ)];
    loop {
        let next = n + policy.step;
        let (state, next_occ) = solve(next)?;
        history.push((next, next_occ));
        let shift = (next_occ - occ).abs() / next_occ.abs().max(1e-12);
        let converged = shift < policy.rel_tol;
        if converged || next + policy.step > policy.max_n_max {
            return Ok(ConvergedSteadyState {
                state,
                cutoff: FockCutoff::new(next)?,
                history,
                relative_shift: shift,
                converged,
            });
        }
        n = next;
        occ = next_occ;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_of_mixed_radix_indices() {
        assert_eq!(photon_parity(&[3]), vec![0, 1, 0]);
        // (0,0) (0,1) (1,0) (1,1) (2,0) (2,1)
        assert_eq!(photon_parity(&[3, 2]), vec![0, 1, 1, 0, 0, 1]);
    }

    #[test]
    fn triangular_sylvester_matches_definition() {
        let n = 5;
        let t = Array2::from_shape_fn((n, n), |(i, j)| {
            if i > j {
                ZERO
            } else if i == j {
                C64::new(-1.0 - i as f64 * 0.3, 0.7 * i as f64)
            } else {
                C64::new(0.1 * (i + 2 * j) as f64, -0.05 * j as f64)
            }
        });
        let c = Array2::from_shape_fn((n, n), |(i, j)| C64::new((i * 3 + j) as f64 % 4.0 - 1.5, (i as f64 - j as f64) * 0.2));
        let y = solve_triangular_sylvester(&t, &c);
        let lhs = t.dot(&y) + y.dot(&linalg::adjoint(&t.view()));
        assert!(linalg::max_abs(&(lhs - &c).view()) < 1e-12);
    }
}
