//! Hamiltonians, Lindblad dissipators and Liouvillian superoperators for the
//! single, conjugately coupled and ring-coupled quantum van der Pol
//! oscillators with Kerr nonlinearity; time evolution and steady states.
//!
//! Vectorization is row-major: `vec(ρ)[i·d + j] = ρ[i, j]`, so that
//! `vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ)`.

mod gmres;
mod steady;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockCutoff};
use crate::linalg;
use crate::operator::Operator;

pub use steady::{
    steady_state, steady_state_converged, steady_state_with, ConvergedSteadyState, CutoffPolicy, SolvePath,
    SolverMethod, SteadyState, SteadyStateOptions,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default superoperator memory budget: 4 GiB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

/// Physical rates of one van der Pol oscillator and the pair coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpParams {
    pub omega: f64,
    pub kerr: f64,
    pub k1: f64,
    pub k2: f64,
    pub epsilon: f64,
}

impl Default for VdpParams {
    fn default() -> Self {
        Self { omega: 2.0, kerr: 0.0, k1: 1.0, k2: 0.2, epsilon: 0.0 }
    }
}

impl VdpParams {
    pub fn with_coupling(self, epsilon_over_k1: f64) -> Self {
        Self { epsilon: epsilon_over_k1 * self.k1, ..self }
    }

    pub fn with_kerr(self, kerr: f64) -> Self {
        Self { kerr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.kerr, self.k1, self.k2, self.epsilon].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("params", "all rates must be finite"));
        }
        if self.kerr < 0.0 {
            return Err(Error::param("kerr", format!("must be >= 0, got {}", self.kerr)));
        }
        if self.k1 <= 0.0 {
            return Err(Error::param("k1", format!("must be > 0, got {}", self.k1)));
        }
        if self.k2 <= 0.0 {
            return Err(Error::param("k2", format!("must be > 0, got {}", self.k2)));
        }
        if self.epsilon < 0.0 {
            return Err(Error::param("epsilon", format!("must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Nonlocal ring coupling: `oscillators` sites, each coupled to `range`
/// neighbours on either side with strength `strength`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingCoupling {
    pub oscillators: usize,
    pub range: usize,
    pub strength: f64,
}

impl RingCoupling {
    pub fn validate(&self) -> Result<()> {
        if self.oscillators < 3 {
            return Err(Error::param("N", format!("ring needs at least 3 oscillators, got {}", self.oscillators)));
        }
        if self.range < 1 || 2 * self.range >= self.oscillators {
            return Err(Error::param(
                "d",
                format!("coupling range must satisfy 1 <= d < N/2, got d={} N={}", self.range, self.oscillators),
            ));
        }
        if !self.strength.is_finite() {
            return Err(Error::param("V", "must be finite"));
        }
        Ok(())
    }

    /// Neighbour indices of site `j` (periodic), offsets −d..=d without 0,
    /// in increasing offset order.
    pub fn neighbours(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.oscillators as isize;
        let d = self.range as isize;
        (-d..=d).filter(|&o| o != 0).map(move |o| ((j as isize + o).rem_euclid(n)) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Single,
    ConjugatePair,
    Ring(RingCoupling),
}

impl Topology {
    fn name(&self) -> String {
        match self {
            Topology::Single => "single".into(),
            Topology::ConjugatePair => "conjugate_pair".into(),
            Topology::Ring(r) => format!("ring(N={}, d={}, V={})", r.oscillators, r.range, r.strength),
        }
    }
}

/// Everything needed to assemble a Liouvillian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemSpec {
    pub params: VdpParams,
    pub cutoff: FockCutoff,
    pub topology: Topology,
    /// Enforces `k2 < k1`.
    pub weak_quantum: bool,
}

impl SystemSpec {
    pub fn single(params: VdpParams, cutoff: FockCutoff) -> Self {
        Self { params, cutoff, topology: Topology::Single, weak_quantum: false }
    }

    pub fn conjugate_pair(params: VdpParams, cutoff: FockCutoff) -> Self {
        Self { params, cutoff, topology: Topology::ConjugatePair, weak_quantum: true }
    }

    pub fn ring(params: VdpParams, cutoff: FockCutoff, ring: RingCoupling) -> Self {
        Self { params, cutoff, topology: Topology::Ring(ring), weak_quantum: false }
    }

    pub fn with_cutoff(self, cutoff: FockCutoff) -> Self {
        Self { cutoff, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.weak_quantum && self.params.k2 >= self.params.k1 {
            return Err(Error::param(
                "k2",
                format!("weak quantum regime requires k2 < k1, got k2={} k1={}", self.params.k2, self.params.k1),
            ));
        }
        if let Topology::Ring(r) = self.topology {
            r.validate()?;
        }
        Ok(())
    }

    pub fn oscillators(&self) -> usize {
        match self.topology {
            Topology::Single => 1,
            Topology::ConjugatePair => 2,
            Topology::Ring(r) => r.oscillators,
        }
    }

    pub fn subsystem_dims(&self) -> Vec<usize> {
        vec![self.cutoff.dim(); self.oscillators()]
    }

    fn site_operators(&self) -> Result<Vec<Operator>> {
        let a = fock::annihilation(self.cutoff);
        let dims = self.subsystem_dims();
        (0..dims.len()).map(|j| fock::embed(&a, j, &dims)).collect()
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn sum_ops(dim: usize, terms: impl IntoIterator<Item = Operator>) -> Operator {
    terms.into_iter().fold(Operator::zeros(dim), |acc, t| &acc + &t)
}

/// `H = ω a†a + K (a†a)²`.
pub fn hamiltonian_single(spec: &SystemSpec) -> Result<Operator> {
    if spec.topology != Topology::Single {
        return Err(Error::WrongTopology { expected: "single", found: spec.topology.name() });
    }
    Ok(local_kerr_oscillator(spec.cutoff, spec.params.omega, spec.params.kerr))
}

fn local_kerr_oscillator(cutoff: FockCutoff, omega: f64, kerr: f64) -> Operator {
    let values: Vec<C64> = (0..cutoff.dim()).map(|n| c(omega * n as f64 + kerr * (n * n) as f64)).collect();
    Operator::diagonal(&values)
}

/// Conjugate-coupling Hamiltonian of the oscillator pair:
///
/// `H_c = ω(n₁+n₂) + K(n₁² + n₂²) + ε/2 (a₁†a₂ + a₂†a₁) − ε/2 (a₁†a₂† + a₁a₂)
///        − iε/4 (a₁†² + a₂†² − a₁² − a₂²)`.
pub fn hamiltonian_conjugate_pair(spec: &SystemSpec) -> Result<Operator> {
    if spec.topology != Topology::ConjugatePair {
        return Err(Error::WrongTopology { expected: "conjugate_pair", found: spec.topology.name() });
    }
    let p = spec.params;
    let local = local_kerr_oscillator(spec.cutoff, p.omega, p.kerr);
    let dims = spec.subsystem_dims();
    let ops = spec.site_operators()?;
    let (a1, a2) = (&ops[0], &ops[1]);
    let (a1d, a2d) = (a1.adjoint(), a2.adjoint());
    let eps = p.epsilon;
    let hop = &(&a1d * a2) + &(&a2d * a1);
    let pair = &(&a1d * &a2d) + &(a1 * a2);
    let squeeze = &(&(&(&a1d * &a1d) + &(&a2d * &a2d)) - &(a1 * a1)) - &(a2 * a2);
    let d = local.dim() * local.dim();
    Ok(sum_ops(
        d,
        [
            fock::embed(&local, 0, &dims)?,
            fock::embed(&local, 1, &dims)?,
            hop.scale_re(eps / 2.0),
            pair.scale_re(-eps / 2.0),
            squeeze.scale(-I * (eps / 4.0)),
        ],
    ))
}

/// Ring Hamiltonian `Σ_j K n_j² + V/(2d) Σ_j Σ_{m≠j, |m−j|≤d} (a_j† a_m + a_j a_m†)`.
pub fn hamiltonian_ring(spec: &SystemSpec) -> Result<Operator> {
    let Topology::Ring(ring) = spec.topology else {
        return Err(Error::WrongTopology { expected: "ring", found: spec.topology.name() });
    };
    let dims = spec.subsystem_dims();
    let dim: usize = dims.iter().product();
    let ops = spec.site_operators()?;
    let kerr = local_kerr_oscillator(spec.cutoff, 0.0, spec.params.kerr);
    let mut terms = Vec::new();
    for j in 0..ring.oscillators {
        terms.push(fock::embed(&kerr, j, &dims)?);
    }
    let g = ring.strength / (2.0 * ring.range as f64);
    for j in 0..ring.oscillators {
        let ajd = ops[j].adjoint();
        for m in ring.neighbours(j) {
            let amd = ops[m].adjoint();
            terms.push((&(&ajd * &ops[m]) + &(&ops[j] * &amd)).scale_re(g));
        }
    }
    Ok(sum_ops(dim, terms))
}

/// A Lindblad jump operator with its rate: contributes `rate · D[op]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub rate: f64,
    pub op: Operator,
}

/// `ρ̇ = −i[H, ρ] + Σ rate · D[L](ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub hamiltonian: Operator,
    pub jumps: Vec<Jump>,
}

impl Generator {
    pub fn for_spec(spec: &SystemSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.params;
        let ops = spec.site_operators()?;
        let (hamiltonian, pump, damp, loss) = match spec.topology {
            Topology::Single => (hamiltonian_single(spec)?, p.k1, p.k2, 0.0),
            Topology::ConjugatePair => (hamiltonian_conjugate_pair(spec)?, p.k1, p.k2, p.epsilon),
            // The ring master equation carries an overall factor 2 on its dissipators.
            Topology::Ring(_) => (hamiltonian_ring(spec)?, 2.0 * p.k1, 2.0 * p.k2, 0.0),
        };
        let mut jumps = Vec::new();
        for a in &ops {
            jumps.push(Jump { rate: pump, op: a.adjoint() });
        }
        for a in &ops {
            jumps.push(Jump { rate: damp, op: a * a });
        }
        if loss > 0.0 {
            for a in &ops {
                jumps.push(Jump { rate: loss, op: a.clone() });
            }
        }
        Ok(Self { hamiltonian, jumps })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Direct matrix-form evaluation of `ρ̇`.
    pub fn rhs(&self, rho: &ArrayView2<C64>) -> Array2<C64> {
        let h_rho = self.hamiltonian.mul_dense(rho);
        let rho_h = self.hamiltonian.dense_mul(rho);
        let mut out = (h_rho - rho_h).mapv(|v| -I * v);
        for j in &self.jumps {
            out.scaled_add(c(j.rate), &dissipator(&j.op, rho));
        }
        out
    }

    /// `A = −iH − ½ Σ rate L†L`, the non-Hermitian effective generator.
    pub(crate) fn effective_hamiltonian_generator(&self) -> Operator {
        let decay = sum_ops(self.dim(), self.jumps.iter().map(|j| (&j.op.adjoint() * &j.op).scale_re(0.5 * j.rate)));
        &self.hamiltonian.scale(-I) - &decay
    }
}

/// `D[L](ρ) = LρL† − ½{L†L, ρ}` for an arbitrary matrix `ρ`.
pub fn dissipator(l: &Operator, rho: &ArrayView2<C64>) -> Array2<C64> {
    let ld = l.adjoint();
    let ldl = &ld * l;
    let l_rho = l.mul_dense(rho);
    let jump = ld.dense_mul(&l_rho.view());
    let anti = ldl.mul_dense(rho) + ldl.dense_mul(rho);
    jump - anti.mapv(|v| v * 0.5)
}

/// `D[L](ρ)`; fails on dimension mismatch.
pub fn dissipator_apply(l: &Operator, rho: &DensityMatrix) -> Result<Array2<C64>> {
    if l.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!("jump dim {} vs state dim {}", l.dim(), rho.dim())));
    }
    Ok(dissipator(l, &rho.view()))
}

/// Superoperator generator acting on row-major vectorized density matrices.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    superop: Operator,
    generator: Generator,
    subsystem_dims: Vec<usize>,
    source_spec: Option<SystemSpec>,
}

impl Liouvillian {
    /// Assembles the superoperator, refusing if it would exceed `budget` bytes.
    pub fn from_generator(generator: Generator, subsystem_dims: Vec<usize>, budget: u64) -> Result<Self> {
        let d = generator.dim();
        if subsystem_dims.iter().product::<usize>() != d {
            return Err(Error::DimensionMismatch(format!("subsystem dims {subsystem_dims:?} vs dim {d}")));
        }
        let required = estimate_superop_bytes(&generator);
        if required > budget {
            return Err(Error::MemoryBudget { required, budget });
        }
        let id = Operator::identity(d);
        let h = &generator.hamiltonian;
        let mut superop = (&h.kron(&id) - &id.kron(&h.transpose())).scale(-I);
        for j in &generator.jumps {
            let ldl = &j.op.adjoint() * &j.op;
            let term = &(&j.op.kron(&j.op.conj()) - &ldl.kron(&id).scale_re(0.5)) - &id.kron(&ldl.transpose()).scale_re(0.5);
            superop = &superop + &term.scale_re(j.rate);
        }
        Ok(Self { superop, generator, subsystem_dims, source_spec: None })
    }

    pub fn superop(&self) -> &Operator {
        &self.superop
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn source_spec(&self) -> Option<&SystemSpec> {
        self.source_spec.as_ref()
    }

    pub fn subsystem_dims(&self) -> &[usize] {
        &self.subsystem_dims
    }

    /// Hilbert-space dimension `d` (the superoperator is `d² × d²`).
    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    /// `ρ̇` computed through the superoperator.
    pub fn apply(&self, rho: &ArrayView2<C64>) -> Array2<C64> {
        let d = self.dim();
        let v: Vec<C64> = rho.iter().copied().collect();
        Array2::from_shape_vec((d, d), self.superop.apply_vec(&v)).expect("square")
    }

    /// `max_c |Σ_i L[(i,i), c]|`: how far vec(I) is from a left null vector.
    pub fn trace_preservation_residual(&self) -> f64 {
        let d = self.dim();
        let mut col_sums = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for (col, v) in self.superop.row(i * d + i) {
                col_sums[col] += v;
            }
        }
        col_sums.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn estimate_superop_bytes(generator: &Generator) -> u64 {
    let d = generator.dim() as u64;
    let mut nnz = 2 * d * generator.hamiltonian.nnz() as u64;
    for j in &generator.jumps {
        let l = j.op.nnz() as u64;
        nnz += l * l + 2 * d * d;
    }
    // entries (16 B value + 8 B index) plus row pointers
    nnz * 24 + d * d * 8
}

pub fn build_liouvillian(spec: &SystemSpec) -> Result<Liouvillian> {
    build_liouvillian_with_budget(spec, DEFAULT_MEMORY_BUDGET)
}

pub fn build_liouvillian_with_budget(spec: &SystemSpec, budget: u64) -> Result<Liouvillian> {
    let generator = Generator::for_spec(spec)?;
    let mut l = Liouvillian::from_generator(generator, spec.subsystem_dims(), budget)?;
    l.source_spec = Some(*spec);
    Ok(l)
}

/// Fixed-step RK4 settings for [`evolve_with`].
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Re-Hermitize and renormalize after this many steps.
    pub renormalize_every: usize,
    /// Largest tolerated trace drift within one renormalization chunk.
    pub max_trace_drift: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { renormalize_every: 100, max_trace_drift: 1e-6 }
    }
}

pub const DEFAULT_DT: f64 = 1e-3;

pub fn evolve(rho0: &DensityMatrix, l: &Liouvillian, t_final: f64, dt: f64) -> Result<DensityMatrix> {
    evolve_with(rho0, l, t_final, dt, EvolveOptions::default())
}

/// Integrates `vec(ρ̇) = L vec(ρ)` with classical RK4 up to `t_final`.
pub fn evolve_with(
    rho0: &DensityMatrix,
    l: &Liouvillian,
    t_final: f64,
    dt: f64,
    opts: EvolveOptions,
) -> Result<DensityMatrix> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::param("t_final", format!("must be >= 0, got {t_final}")));
    }
    if rho0.dim() != l.dim() {
        return Err(Error::DimensionMismatch(format!("state dim {} vs Liouvillian dim {}", rho0.dim(), l.dim())));
    }
    if t_final == 0.0 {
        return Ok(rho0.clone());
    }
    let d = l.dim();
    let mut stepper = Rk4::new(d * d);
    let mut v: Vec<C64> = rho0.view().iter().copied().collect();
    let n_steps = (t_final / dt).ceil() as usize;
    let mut t = 0.0;
    for step in 0..n_steps {
        let h = (t_final - t).min(dt);
        stepper.step(&mut v, h, |x, y| l.superop.apply(x, y));
        t += h;
        let last = step + 1 == n_steps;
        if (step + 1) % opts.renormalize_every == 0 || last {
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite { time: t, dt });
            }
            renormalize(&mut v, d, opts.max_trace_drift, dt)?;
        }
    }
    let m = Array2::from_shape_vec((d, d), v).expect("square");
    DensityMatrix::new_unchecked_positivity(m, rho0.subsystem_dims().to_vec())
}

/// Re-Hermitizes a row-major vectorized matrix in place and rescales to unit trace.
pub(crate) fn renormalize(v: &mut [C64], d: usize, max_drift: f64, dt: f64) -> Result<()> {
    let tr: f64 = (0..d).map(|i| v[i * d + i].re).sum();
    let drift = (tr - 1.0).abs();
    if drift > max_drift {
        return Err(Error::TraceDrift { drift, dt });
    }
    for i in 0..d {
        v[i * d + i] = C64::new(v[i * d + i].re / tr, 0.0);
        for j in (i + 1)..d {
            let avg = (v[i * d + j] + v[j * d + i].conj()) * (0.5 / tr);
            v[i * d + j] = avg;
            v[j * d + i] = avg.conj();
        }
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta with reusable buffers.
pub(crate) struct Rk4 {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    pub fn step(&mut self, v: &mut [C64], h: f64, mut f: impl FnMut(&[C64], &mut [C64])) {
        let hh = h * 0.5;
        f(v, &mut self.k1);
        for ((t, x), k) in self.tmp.iter_mut().zip(v.iter()).zip(&self.k1) {
            *t = x + k * hh;
        }
        f(&self.tmp, &mut self.k2);
        for ((t, x), k) in self.tmp.iter_mut().zip(v.iter()).zip(&self.k2) {
            *t = x + k * hh;
        }
        f(&self.tmp, &mut self.k3);
        for ((t, x), k) in self.tmp.iter_mut().zip(v.iter()).zip(&self.k3) {
            *t = x + k * h;
        }
        f(&self.tmp, &mut self.k4);
        let h6 = h / 6.0;
        for (i, x) in v.iter_mut().enumerate() {
            *x += (self.k1[i] + (self.k2[i] + self.k3[i]) * 2.0 + self.k4[i]) * h6;
        }
    }
}

/// `Tr(ρ O)`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64> {
    if op.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!("operator dim {} vs state dim {}", op.dim(), rho.dim())));
    }
    let m = rho.matrix();
    Ok(op.iter().map(|(r, col, v)| v * m[[col, r]]).sum())
}

/// `⟨a_j† a_j⟩` of oscillator `site`.
pub fn mean_occupation(rho: &DensityMatrix, site: usize) -> Result<f64> {
    let dims = rho.subsystem_dims();
    let n_max = *dims.get(site).ok_or(Error::SubsystemOutOfRange { index: site, count: dims.len() })? - 1;
    let n = fock::number_op(FockCutoff::new(n_max)?);
    Ok(expectation(rho, &fock::embed(&n, site, dims)?)?.re)
}

pub(crate) fn max_abs_rhs(generator: &Generator, rho: &ArrayView2<C64>) -> f64 {
    linalg::max_abs(&generator.rhs(rho).view())
}

#[cfg(test)]
mod tests;
