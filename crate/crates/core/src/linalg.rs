//! Dense linear-algebra helpers bridging ndarray storage and nalgebra
//! decompositions.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;

pub(crate) fn to_nalgebra(m: &ArrayView2<C64>) -> DMatrix<C64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn adjoint(m: &ArrayView2<C64>) -> Array2<C64> {
    m.t().mapv(|v| v.conj())
}

/// `(m + m^dagger) / 2`.
pub fn hermitian_part(m: &ArrayView2<C64>) -> Array2<C64> {
    (m.to_owned() + adjoint(m)).mapv(|v| v * 0.5)
}

pub fn trace(m: &ArrayView2<C64>) -> C64 {
    m.diag().iter().sum()
}

pub fn max_abs(m: &ArrayView2<C64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &ArrayView2<C64>) -> Vec<f64> {
    let h = to_nalgebra(&hermitian_part(m).view());
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Trace distance `½‖a − b‖₁` for Hermitian `a`, `b`.
pub fn trace_distance(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> f64 {
    let diff = a.to_owned() - b;
    0.5 * hermitian_eigenvalues(&diff.view()).iter().map(|v| v.abs()).sum::<f64>()
}
