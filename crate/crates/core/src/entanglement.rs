//! Partial transpose and negativity of two-oscillator states.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::linalg;

/// Transposes the indices of `subsystem` (0 or 1) of a bipartite state.
pub fn partial_transpose(rho: &DensityMatrix, subsystem: usize) -> Result<Array2<C64>> {
    let dims = rho.subsystem_dims();
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch(format!("partial transpose needs two subsystems, got {dims:?}")));
    }
    if subsystem > 1 {
        return Err(Error::SubsystemOutOfRange { index: subsystem, count: 2 });
    }
    let (da, db) = (dims[0], dims[1]);
    let m = rho.matrix();
    Ok(Array2::from_shape_fn((da * db, da * db), |(r, c)| {
        let (i, k) = (r / db, r % db);
        let (j, l) = (c / db, c % db);
        if subsystem == 0 {
            m[[j * db + k, i * db + l]]
        } else {
            m[[i * db + l, j * db + k]]
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativityResult {
    pub value: f64,
    /// Eigenvalues of the partial transpose, ascending.
    pub spectrum: Vec<f64>,
}

/// Negativities smaller than this in magnitude are rounding noise and clip to 0.
pub const CLIP_TOL: f64 = 1e-9;

/// `N = (‖ρ^{Γ₁}‖₁ − 1)/2` from the Hermitian spectrum of the partial
/// transpose with respect to the first oscillator.
pub fn negativity(rho: &DensityMatrix) -> Result<NegativityResult> {
    let pt = partial_transpose(rho, 0)?;
    let herm = linalg::max_abs(&(&pt - &linalg::adjoint(&pt.view())).view());
    if herm > DensityMatrix::HERMITIAN_TOL {
        return Err(Error::InvalidDensityMatrix(format!("partial transpose non-Hermitian by {herm:e}")));
    }
    let spectrum = linalg::hermitian_eigenvalues(&pt.view());
    let raw = (spectrum.iter().map(|l| l.abs()).sum::<f64>() - 1.0) / 2.0;
    let value = if raw.abs() < CLIP_TOL { 0.0 } else { raw };
    Ok(NegativityResult { value, spectrum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{kron_dense, FockCutoff};
    use crate::lindblad::{build_liouvillian, steady_state, SystemSpec, VdpParams};
    use proptest::prelude::*;

    fn bell() -> DensityMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = [C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0)];
        DensityMatrix::pure(&amps, vec![2, 2]).unwrap()
    }

    fn random_local(d: usize, seed: u64) -> DensityMatrix {
        let mut s = seed | 1;
        let mut next = move || {
            s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let g = Array2::from_shape_fn((d, d), |_| C64::new(next(), next()));
        DensityMatrix::from_approximate(g.dot(&linalg::adjoint(&g.view())), vec![d]).unwrap()
    }

    #[test]
    fn bell_state_spectrum_and_negativity() {
        let n = negativity(&bell()).unwrap();
        assert!((n.value - 0.5).abs() < 1e-9);
        assert!((n.spectrum[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn product_state_transposes_locally() {
        let a = random_local(3, 5);
        let b = random_local(2, 9);
        let rho = DensityMatrix::product(&[a.clone(), b.clone()]).unwrap();
        let pt = partial_transpose(&rho, 0).unwrap();
        let expect = kron_dense(&a.matrix().t(), &b.view());
        assert!(linalg::max_abs(&(&pt - &expect).view()) < 1e-15);
        let n = negativity(&rho).unwrap();
        assert!(n.value.abs() < 1e-12);
        assert!(n.spectrum[0] > -1e-12);
    }

    #[test]
    fn transposing_twice_restores_state() {
        let rho = DensityMatrix::product(&[random_local(3, 1), random_local(3, 2)]).unwrap();
        let mixed = DensityMatrix::from_approximate(rho.matrix() * 0.5 + bell9() * 0.5, vec![3, 3]).unwrap();
        for sub in [0, 1] {
            let once = DensityMatrix::new_unchecked_positivity(partial_transpose(&mixed, sub).unwrap(), vec![3, 3]).unwrap();
            let twice = partial_transpose(&once, sub).unwrap();
            assert!(linalg::max_abs(&(&twice - mixed.matrix()).view()) < 1e-15);
        }
        assert!(partial_transpose(&mixed, 2).is_err());
    }

    fn bell9() -> Array2<C64> {
        let amps: Vec<C64> = (0..9).map(|i| if i % 4 == 0 { C64::new(1.0 / 3f64.sqrt(), 0.0) } else { C64::new(0.0, 0.0) }).collect();
        DensityMatrix::pure(&amps, vec![3, 3]).unwrap().into_matrix()
    }

    #[test]
    fn uncoupled_steady_state_is_separable() {
        let spec = SystemSpec::conjugate_pair(VdpParams::default(), FockCutoff::new(8).unwrap());
        let rho = steady_state(&build_liouvillian(&spec).unwrap()).unwrap().rho;
        assert!(negativity(&rho).unwrap().value.abs() < 1e-6);
    }

    #[test]
    fn rejects_single_oscillator() {
        let rho = DensityMatrix::fock(FockCutoff::new(3).unwrap(), 1).unwrap();
        assert!(negativity(&rho).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn negativity_ignores_local_phase_rotations(t1 in 0.0f64..6.3, t2 in 0.0f64..6.3, w in 0.1f64..0.9, seed in any::<u64>()) {
            let prod = DensityMatrix::product(&[random_local(3, seed), random_local(3, seed ^ 77)]).unwrap();
            let rho = DensityMatrix::from_approximate(prod.matrix() * (1.0 - w) + bell9() * w, vec![3, 3]).unwrap();
            let phase = |t: f64| Array2::from_diag(&ndarray::Array1::from_shape_fn(3, |n| C64::from_polar(1.0, t * n as f64)));
            let u = kron_dense(&phase(t1).view(), &phase(t2).view());
            let rotated = rho.conjugate_by(&u).unwrap();
            let a = negativity(&rho).unwrap();
            let b = negativity(&rotated).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-8);
            // value agrees with the sum of negative eigenvalues
            let neg: f64 = -a.spectrum.iter().filter(|l| **l < 0.0).sum::<f64>();
            prop_assert!((a.value - neg.max(0.0)).abs() < 1e-9);
        }
    }
}
