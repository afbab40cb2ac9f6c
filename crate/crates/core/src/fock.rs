//! Truncated Fock spaces: bosonic ladder operators, tensor products and
//! density matrices.
//!
//! Multi-oscillator spaces are always ordered oscillator 1 ⊗ oscillator 2 ⊗ …,
//! i.e. the first subsystem index varies slowest in the flattened basis.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::Operator;

/// Highest retained Fock level `n_max`; the single-mode dimension is `n_max + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockCutoff(usize);

impl FockCutoff {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::param("n_max", "must be at least 1"));
        }
        Ok(Self(n_max))
    }

    pub fn n_max(self) -> usize {
        self.0
    }

    pub fn dim(self) -> usize {
        self.0 + 1
    }
}

/// Annihilation operator with `(n-1, n)` entry `√n`.
pub fn annihilation(cutoff: FockCutoff) -> Operator {
    let dim = cutoff.dim();
    Operator::from_triplets(dim, (1..dim).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))))
}

pub fn creation(cutoff: FockCutoff) -> Operator {
    annihilation(cutoff).adjoint()
}

/// `diag(0, 1, …, n_max)`.
pub fn number_op(cutoff: FockCutoff) -> Operator {
    let values: Vec<C64> = (0..cutoff.dim()).map(|n| C64::new(n as f64, 0.0)).collect();
    Operator::diagonal(&values)
}

/// Kronecker product of the operators in order.
pub fn tensor(ops: &[Operator]) -> Result<Operator> {
    let (first, rest) = ops
        .split_first()
        .ok_or_else(|| Error::param("ops", "tensor product of an empty list"))?;
    Ok(rest.iter().fold(first.clone(), |acc, op| acc.kron(op)))
}

/// Lifts `op` acting on subsystem `site` into the full product space.
pub fn embed(op: &Operator, site: usize, dims: &[usize]) -> Result<Operator> {
    if site >= dims.len() {
        return Err(Error::SubsystemOutOfRange { index: site, count: dims.len() });
    }
    if op.dim() != dims[site] {
        return Err(Error::DimensionMismatch(format!(
            "operator of dim {} placed on subsystem of dim {}",
            op.dim(),
            dims[site]
        )));
    }
    let factors: Vec<Operator> = dims
        .iter()
        .enumerate()
        .map(|(k, &d)| if k == site { op.clone() } else { Operator::identity(d) })
        .collect();
    tensor(&factors)
}

/// Fock-basis amplitudes of the coherent state |α⟩ restricted to the cutoff,
/// together with the norm lost to truncation.
pub fn coherent_amplitudes(alpha: C64, cutoff: FockCutoff) -> (Vec<C64>, f64) {
    let mut amps = Vec::with_capacity(cutoff.dim());
    let mut term = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    amps.push(term);
    for n in 1..cutoff.dim() {
        term = term * alpha / (n as f64).sqrt();
        amps.push(term);
    }
    let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    (amps, (1.0 - kept).max(0.0))
}

/// Density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: Array2<C64>,
    subsystem_dims: Vec<usize>,
}

impl DensityMatrix {
    pub const TRACE_TOL: f64 = 1e-9;
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const POSITIVITY_TOL: f64 = 1e-8;

    /// Validates trace, Hermiticity and positivity.
    pub fn new(matrix: Array2<C64>, subsystem_dims: Vec<usize>) -> Result<Self> {
        let rho = Self::new_unchecked_positivity(matrix, subsystem_dims)?;
        let min = rho.min_eigenvalue();
        if min < -Self::POSITIVITY_TOL {
            return Err(Error::InvalidDensityMatrix(format!("minimum eigenvalue {min:e}")));
        }
        Ok(rho)
    }

    /// Validates trace and Hermiticity only; positivity is the caller's
    /// responsibility (checked separately where a solver produced the state).
    pub fn new_unchecked_positivity(matrix: Array2<C64>, subsystem_dims: Vec<usize>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::InvalidDensityMatrix(format!("not square: {r}x{c}")));
        }
        if subsystem_dims.is_empty() || subsystem_dims.iter().product::<usize>() != r {
            return Err(Error::InvalidDensityMatrix(format!(
                "subsystem dims {subsystem_dims:?} do not multiply to {r}"
            )));
        }
        let tr = linalg::trace(&matrix.view());
        if (tr - C64::new(1.0, 0.0)).norm() > Self::TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        let herm = (&matrix - &linalg::adjoint(&matrix.view())).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if herm > Self::HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("non-Hermitian by {herm:e}")));
        }
        Ok(Self { matrix, subsystem_dims })
    }

    /// Hermitizes and renormalizes an approximate state before validating it.
    pub fn from_approximate(matrix: Array2<C64>, subsystem_dims: Vec<usize>) -> Result<Self> {
        let herm = linalg::hermitian_part(&matrix.view());
        let tr = linalg::trace(&herm.view()).re;
        if !(tr.is_finite() && tr.abs() > f64::EPSILON) {
            return Err(Error::InvalidDensityMatrix(format!("cannot normalize trace {tr}")));
        }
        Self::new_unchecked_positivity(herm.mapv(|v| v / tr), subsystem_dims)
    }

    pub fn pure(amplitudes: &[C64], subsystem_dims: Vec<usize>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidDensityMatrix("zero state vector".into()));
        }
        let psi: Vec<C64> = amplitudes.iter().map(|a| a / norm).collect();
        let n = psi.len();
        let m = Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj());
        Self::new_unchecked_positivity(m, subsystem_dims)
    }

    pub fn fock(cutoff: FockCutoff, n: usize) -> Result<Self> {
        if n > cutoff.n_max() {
            return Err(Error::param("n", format!("Fock level {n} above n_max={}", cutoff.n_max())));
        }
        let mut amps = vec![C64::new(0.0, 0.0); cutoff.dim()];
        amps[n] = C64::new(1.0, 0.0);
        Self::pure(&amps, vec![cutoff.dim()])
    }

    /// Truncated, renormalized coherent state. Fails if truncation removes more
    /// than `max_deficit` of the norm.
    pub fn coherent(alpha: C64, cutoff: FockCutoff, max_deficit: f64) -> Result<Self> {
        let (amps, deficit) = coherent_amplitudes(alpha, cutoff);
        if deficit > max_deficit {
            return Err(Error::CoherentTruncation { amplitude: alpha.norm(), n_max: cutoff.n_max(), deficit });
        }
        Self::pure(&amps, vec![cutoff.dim()])
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn view(&self) -> ArrayView2<'_, C64> {
        self.matrix.view()
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn subsystem_dims(&self) -> &[usize] {
        &self.subsystem_dims
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix.view())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.matrix.view())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        linalg::trace_distance(&self.matrix.view(), &other.matrix.view())
    }

    /// `ρ_A ⊗ ρ_B ⊗ …`.
    pub fn product(factors: &[DensityMatrix]) -> Result<Self> {
        let (first, rest) = factors
            .split_first()
            .ok_or_else(|| Error::param("factors", "empty product state"))?;
        let mut m = first.matrix.clone();
        let mut dims = first.subsystem_dims.clone();
        for f in rest {
            m = kron_dense(&m.view(), &f.matrix.view());
            dims.extend_from_slice(&f.subsystem_dims);
        }
        Ok(Self { matrix: m, subsystem_dims: dims })
    }

    /// Applies `U ρ U†` and keeps the subsystem structure.
    pub fn conjugate_by(&self, unitary: &Array2<C64>) -> Result<Self> {
        let m = unitary.dot(&self.matrix).dot(&linalg::adjoint(&unitary.view()));
        Self::from_approximate(m, self.subsystem_dims.clone())
    }
}

pub(crate) fn kron_dense(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
}

/// Reduced state of subsystem `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    let dims = rho.subsystem_dims();
    if dims.len() < 2 {
        return Err(Error::param("rho", "partial trace needs at least two subsystems"));
    }
    if keep >= dims.len() {
        return Err(Error::SubsystemOutOfRange { index: keep, count: dims.len() });
    }
    let dk = dims[keep];
    let outer: usize = dims[..keep].iter().product();
    let inner: usize = dims[keep + 1..].iter().product();
    let m = rho.matrix();
    let mut reduced = Array2::<C64>::zeros((dk, dk));
    // flattened index = (o * dk + k) * inner + i
    for o in 0..outer {
        for i in 0..inner {
            for a in 0..dk {
                let ra = (o * dk + a) * inner + i;
                for b in 0..dk {
                    let cb = (o * dk + b) * inner + i;
                    reduced[[a, b]] += m[[ra, cb]];
                }
            }
        }
    }
    DensityMatrix::from_approximate(reduced, vec![dk])
}

/// Permutation matrix exchanging the two subsystems of a bipartite space
/// with equal local dimension.
pub fn swap_operator(local_dim: usize) -> Operator {
    let d = local_dim;
    Operator::from_triplets(
        d * d,
        (0..d).flat_map(move |i| (0..d).map(move |j| (j * d + i, i * d + j, C64::new(1.0, 0.0)))),
    )
}
