use super::*;
use crate::fock::{partial_trace, swap_operator};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cutoff(n: usize) -> FockCutoff {
    FockCutoff::new(n).unwrap()
}

fn pair(eps_over_k1: f64, kerr: f64, n: usize) -> SystemSpec {
    SystemSpec::conjugate_pair(VdpParams::default().with_coupling(eps_over_k1).with_kerr(kerr), cutoff(n))
}

/// Hermitian, unit-trace but otherwise arbitrary test matrix.
fn sample_state(d: usize, seed: u64) -> Array2<C64> {
    let mut s = seed;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let g = Array2::from_shape_fn((d, d), |_| C64::new(next(), next()));
    let m = g.dot(&linalg::adjoint(&g.view()));
    let tr = linalg::trace(&m.view());
    m.mapv(|v| v / tr)
}

#[test]
fn superoperator_matches_direct_rhs() {
    for spec in [
        SystemSpec::single(VdpParams { kerr: 0.4, ..VdpParams::default() }, cutoff(6)),
        pair(1.3, 0.25, 3),
        SystemSpec::ring(VdpParams { kerr: 0.3, ..VdpParams::default() }, cutoff(1), RingCoupling {
            oscillators: 5,
            range: 2,
            strength: 0.8,
        }),
    ] {
        let l = build_liouvillian(&spec).unwrap();
        let rho = sample_state(l.dim(), 7);
        let via_super = l.apply(&rho.view());
        let direct = l.generator().rhs(&rho.view());
        assert!(linalg::max_abs(&(via_super - direct).view()) < 1e-12, "{:?}", spec.topology);
    }
}

#[test]
fn every_topology_preserves_trace() {
    for spec in [
        SystemSpec::single(VdpParams::default(), cutoff(8)),
        pair(2.5, 0.85, 4),
        SystemSpec::ring(VdpParams::default(), cutoff(1), RingCoupling { oscillators: 4, range: 1, strength: 1.0 }),
    ] {
        let l = build_liouvillian(&spec).unwrap();
        assert!(l.trace_preservation_residual() < 1e-12);
    }
}

#[test]
fn hamiltonians_are_hermitian() {
    assert!(hamiltonian_conjugate_pair(&pair(1.7, 0.4, 4)).unwrap().hermiticity_error() < 1e-14);
    let ring = SystemSpec::ring(VdpParams::default(), cutoff(2), RingCoupling { oscillators: 4, range: 1, strength: 1.5 });
    assert!(hamiltonian_ring(&ring).unwrap().hermiticity_error() < 1e-14);
}

#[test]
fn hamiltonian_builders_check_topology() {
    let single = SystemSpec::single(VdpParams::default(), cutoff(3));
    assert!(matches!(hamiltonian_conjugate_pair(&single), Err(Error::WrongTopology { .. })));
    assert!(matches!(hamiltonian_single(&pair(1.0, 0.0, 3)), Err(Error::WrongTopology { .. })));
}

#[test]
fn pair_hamiltonian_matrix_elements() {
    // ω=2, K=0.5, ε=0.8 at n_max=2: check a few entries against the operator formula.
    let p = VdpParams { omega: 2.0, kerr: 0.5, k1: 1.0, k2: 0.2, epsilon: 0.8 };
    let h = hamiltonian_conjugate_pair(&SystemSpec::conjugate_pair(p, cutoff(2))).unwrap();
    let idx = |n1: usize, n2: usize| n1 * 3 + n2;
    // diagonal of |1,1⟩: ω·2 + K·2
    assert!((h.get(idx(1, 1), idx(1, 1)) - C64::new(5.0, 0.0)).norm() < 1e-14);
    // ⟨1,0| ε/2 a1†a2 |0,1⟩ = 0.4
    assert!((h.get(idx(1, 0), idx(0, 1)) - C64::new(0.4, 0.0)).norm() < 1e-14);
    // ⟨1,1| −ε/2 a1†a2† |0,0⟩ = −0.4
    assert!((h.get(idx(1, 1), idx(0, 0)) - C64::new(-0.4, 0.0)).norm() < 1e-14);
    // ⟨2,0| −iε/4 a1†² |0,0⟩ = −0.2i √2
    assert!((h.get(idx(2, 0), idx(0, 0)) - C64::new(0.0, -0.2 * 2f64.sqrt())).norm() < 1e-14);
}

#[test]
fn validation_rejects_bad_rates() {
    let bad = SystemSpec::single(VdpParams { k1: 0.0, ..VdpParams::default() }, cutoff(3));
    assert!(matches!(build_liouvillian(&bad), Err(Error::InvalidParameter { name: "k1", .. })));
    let strong = SystemSpec::conjugate_pair(VdpParams { k2: 1.5, ..VdpParams::default() }, cutoff(3));
    assert!(matches!(build_liouvillian(&strong), Err(Error::InvalidParameter { name: "k2", .. })));
    let ring = SystemSpec::ring(VdpParams::default(), cutoff(1), RingCoupling { oscillators: 4, range: 2, strength: 1.0 });
    assert!(matches!(build_liouvillian(&ring), Err(Error::InvalidParameter { name: "d", .. })));
}

#[test]
fn memory_budget_is_enforced_before_allocation() {
    let err = build_liouvillian_with_budget(&pair(1.0, 0.0, 10), 1 << 20).unwrap_err();
    assert!(matches!(err, Error::MemoryBudget { budget, .. } if budget == 1 << 20));
}

#[test]
fn vacuum_is_fixed_point_of_pure_decay() {
    let c = cutoff(5);
    let generator = Generator {
        hamiltonian: fock::number_op(c),
        jumps: vec![Jump { rate: 0.7, op: fock::annihilation(c) }],
    };
    let l = Liouvillian::from_generator(generator, vec![6], DEFAULT_MEMORY_BUDGET).unwrap();
    let vac = DensityMatrix::fock(c, 0).unwrap();
    assert!(linalg::max_abs(&l.apply(&vac.view()).view()) < 1e-15);
    let s = steady_state(&l).unwrap();
    assert!(s.rho.trace_distance(&vac) < 1e-10);
}

/// Populations of the single oscillator obey a birth–death chain:
/// gain n→n+1 at rate k1(n+1), loss n→n−2 at rate k2 n(n−1).
fn birth_death_occupation(k1: f64, k2: f64, n_max: usize) -> f64 {
    let d = n_max + 1;
    let mut w = DMatrix::<f64>::zeros(d, d);
    for n in 0..d {
        if n < n_max {
            let r = k1 * (n + 1) as f64;
            w[(n + 1, n)] += r;
            w[(n, n)] -= r;
        }
        if n >= 2 {
            let r = k2 * (n * (n - 1)) as f64;
            w[(n - 2, n)] += r;
            w[(n, n)] -= r;
        }
    }
    for c in 0..d {
        w[(0, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(d);
    b[0] = 1.0;
    let p = w.lu().solve(&b).unwrap();
    (0..d).map(|n| n as f64 * p[n]).sum()
}

#[test]
fn single_oscillator_occupation_matches_rate_equation() {
    let spec = SystemSpec::single(VdpParams::default(), cutoff(30));
    let s = steady_state(&build_liouvillian(&spec).unwrap()).unwrap();
    assert_eq!(s.path, SolvePath::DenseRowReplacement);
    let n = mean_occupation(&s.rho, 0).unwrap();
    let oracle = birth_death_occupation(1.0, 0.2, 30);
    assert!((n - oracle).abs() < 1e-8, "{n} vs {oracle}");
}

#[test]
fn decoupled_pair_factorizes_into_single_steady_states() {
    let n = 6;
    let l = build_liouvillian(&pair(0.0, 0.3, n)).unwrap();
    let s = steady_state_with(&l, &SteadyStateOptions { method: SolverMethod::Krylov, ..Default::default() }).unwrap();
    let single = SystemSpec::single(VdpParams { kerr: 0.3, ..VdpParams::default() }, cutoff(n));
    let one = steady_state(&build_liouvillian(&single).unwrap()).unwrap().rho;
    let product = DensityMatrix::product(&[one.clone(), one]).unwrap();
    assert!(s.rho.trace_distance(&product) < 1e-8);
}

#[test]
fn pair_steady_state_is_swap_symmetric() {
    let l = build_liouvillian(&pair(1.6, 0.2, 5)).unwrap();
    let s = steady_state(&l).unwrap();
    let swap = swap_operator(6).to_dense();
    let swapped = s.rho.conjugate_by(&swap).unwrap();
    assert!(s.rho.trace_distance(&swapped) < 1e-9);
    let r1 = partial_trace(&s.rho, 0).unwrap();
    let r2 = partial_trace(&s.rho, 1).unwrap();
    assert!(r1.trace_distance(&r2) < 1e-9);
}

#[test]
fn dense_and_krylov_paths_agree() {
    let l = build_liouvillian(&pair(2.2, 0.35, 4)).unwrap();
    let dense = steady_state_with(&l, &SteadyStateOptions {
        method: SolverMethod::DenseRowReplacement,
        ..Default::default()
    })
    .unwrap();
    let krylov = steady_state_with(&l, &SteadyStateOptions { method: SolverMethod::Krylov, ..Default::default() }).unwrap();
    assert_eq!(krylov.path, SolvePath::Krylov);
    assert!(dense.rho.trace_distance(&krylov.rho) < 1e-9);
    assert!(krylov.residual < 1e-8);
}

#[test]
fn krylov_works_without_parity_grading() {
    // a + a† breaks photon-number parity, forcing the single-block path
    let c = cutoff(6);
    let a = fock::annihilation(c);
    let generator = Generator {
        hamiltonian: &a + &a.adjoint(),
        jumps: vec![Jump { rate: 1.0, op: a.clone() }, Jump { rate: 0.3, op: &a * &a }],
    };
    let l = Liouvillian::from_generator(generator, vec![7], DEFAULT_MEMORY_BUDGET).unwrap();
    let k = steady_state_with(&l, &SteadyStateOptions { method: SolverMethod::Krylov, ..Default::default() }).unwrap();
    let d = steady_state_with(&l, &SteadyStateOptions { method: SolverMethod::DenseRowReplacement, ..Default::default() })
        .unwrap();
    assert!(k.rho.trace_distance(&d.rho) < 1e-9);
}

#[test]
fn long_evolution_reaches_steady_state() {
    let spec = SystemSpec::single(VdpParams { kerr: 0.2, ..VdpParams::default() }, cutoff(10));
    let l = build_liouvillian(&spec).unwrap();
    let target = steady_state(&l).unwrap().rho;
    let start = DensityMatrix::fock(cutoff(10), 0).unwrap();
    let end = evolve(&start, &l, 30.0, DEFAULT_DT).unwrap();
    assert!(end.trace_distance(&target) < 1e-5);
    assert!((end.trace().re - 1.0).abs() < 1e-12);
}

#[test]
fn evolution_path_is_reported() {
    let spec = SystemSpec::single(VdpParams::default(), cutoff(4));
    let l = build_liouvillian(&spec).unwrap();
    let s = steady_state_with(&l, &SteadyStateOptions {
        method: SolverMethod::Evolution,
        fallback_time: 60.0,
        fallback_dt: 5e-3,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(s.path, SolvePath::Evolution);
}

#[test]
fn evolve_rejects_bad_step_and_reports_instability() {
    let spec = SystemSpec::single(VdpParams::default(), cutoff(8));
    let l = build_liouvillian(&spec).unwrap();
    let rho = DensityMatrix::fock(cutoff(8), 1).unwrap();
    assert!(matches!(evolve(&rho, &l, 1.0, 0.0), Err(Error::InvalidParameter { name: "dt", .. })));
    let err = evolve(&rho, &l, 50.0, 0.5).unwrap_err();
    assert!(matches!(err, Error::NonFinite { dt, .. } | Error::TraceDrift { dt, .. } if dt == 0.5), "{err}");
}

#[test]
fn coherent_state_mean_field() {
    let c = cutoff(12);
    let rho = DensityMatrix::coherent(C64::new(0.5, 0.0), c, 1e-10).unwrap();
    let a = expectation(&rho, &fock::annihilation(c)).unwrap();
    assert!((a - C64::new(0.5, 0.0)).norm() < 1e-6);
}

#[test]
fn cutoff_refinement_records_history() {
    let spec = SystemSpec::single(VdpParams::default(), cutoff(3));
    let out = steady_state_converged(&spec, CutoffPolicy { start: 12, step: 3, rel_tol: 0.01, max_n_max: 30 }, &Default::default())
        .unwrap();
    assert!(out.converged);
    assert!(out.relative_shift < 0.01);
    assert_eq!(out.history.first().unwrap().0, 12);
    assert_eq!(out.cutoff.n_max(), out.history.last().unwrap().0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn liouvillian_preserves_trace_and_hermiticity(
        eps in 0.0f64..3.0,
        kerr in 0.0f64..1.0,
        k2 in 0.05f64..0.9,
        seed in any::<u64>(),
    ) {
        let spec = SystemSpec::conjugate_pair(VdpParams { kerr, k2, ..VdpParams::default() }.with_coupling(eps), cutoff(2));
        let l = build_liouvillian(&spec).unwrap();
        prop_assert!(l.trace_preservation_residual() < 1e-12);
        let rho = sample_state(l.dim(), seed);
        let out = l.apply(&rho.view());
        prop_assert!(linalg::trace(&out.view()).norm() < 1e-12);
        let herm = linalg::max_abs(&(&out - &linalg::adjoint(&out.view())).view());
        prop_assert!(herm < 1e-12);
    }
}
