//! Nonlocally coupled ring of Kerr van der Pol oscillators in the
//! self-consistent mean-field closure: every neighbour operator `a_m` in the
//! hopping term is replaced by `⟨a_m⟩`, leaving `N` single-site master
//! equations coupled through c-numbers.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockCutoff};
use crate::lindblad::{renormalize, Generator, Jump, Liouvillian, Rk4, RingCoupling, DEFAULT_MEMORY_BUDGET};
use crate::operator::Operator;
use crate::phasespace::{self, Squeezing};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingSpec {
    #[serde(rename = "N")]
    pub oscillators: usize,
    #[serde(rename = "d")]
    pub range: usize,
    #[serde(rename = "V")]
    pub coupling: f64,
    #[serde(rename = "K")]
    pub kerr: f64,
    pub k1: f64,
    pub k2: f64,
    pub n_max: usize,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self { oscillators: 50, range: 10, coupling: 1.2, kerr: 0.0, k1: 1.0, k2: 0.2, n_max: 15 }
    }
}

impl RingSpec {
    pub fn ring(&self) -> RingCoupling {
        RingCoupling { oscillators: self.oscillators, range: self.range, strength: self.coupling }
    }

    pub fn cutoff(&self) -> Result<FockCutoff> {
        FockCutoff::new(self.n_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.ring().validate()?;
        if !(self.kerr >= 0.0) {
            return Err(Error::param("K", format!("must be >= 0, got {}", self.kerr)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::param("k1", format!("k1 and k2 must be > 0, got {} and {}", self.k1, self.k2)));
        }
        self.cutoff().map(|_| ())
    }

    /// Classical limit-cycle amplitude `√(k1 / 2k2)`.
    pub fn classical_amplitude(&self) -> f64 {
        (self.k1 / (2.0 * self.k2)).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldState {
    pub rhos: Vec<DensityMatrix>,
    pub means: Vec<C64>,
    pub time: f64,
}

impl MeanFieldState {
    /// Recomputes every `⟨a_j⟩` from the site states.
    pub fn refresh_means(&mut self) -> Result<()> {
        for (j, rho) in self.rhos.iter().enumerate() {
            let m = mean_a(&rho.view());
            if !(m.re.is_finite() && m.im.is_finite()) {
                return Err(Error::MeanFieldNonFinite { index: j });
            }
            self.means[j] = m;
        }
        Ok(())
    }

    /// Relabels site `j` as `j + offset (mod N)`.
    pub fn rotated(&self, offset: usize) -> Self {
        let n = self.rhos.len();
        let mut rhos = self.rhos.clone();
        let mut means = self.means.clone();
        rhos.rotate_right(offset % n);
        means.rotate_right(offset % n);
        Self { rhos, means, time: self.time }
    }
}

fn mean_a(rho: &ndarray::ArrayView2<C64>) -> C64 {
    (1..rho.nrows()).map(|k| rho[[k, k - 1]] * (k as f64).sqrt()).sum()
}

/// Largest tolerated norm deficit of a truncated coherent state.
pub const MAX_COHERENT_DEFICIT: f64 = 1e-4;

/// Sites `0..coherent_count` start in `|A⟩`; the rest in `|A e^{iφ_j}⟩` with
/// seeded uniform phases.
pub fn init_chimera(ring: &RingSpec, coherent_count: usize, amplitude: f64, seed: u64) -> Result<MeanFieldState> {
    ring.validate()?;
    if coherent_count > ring.oscillators {
        return Err(Error::param(
            "coherent_count",
            format!("must be <= N = {}, got {coherent_count}", ring.oscillators),
        ));
    }
    let cutoff = ring.cutoff()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rhos = Vec::with_capacity(ring.oscillators);
    for j in 0..ring.oscillators {
        let phase = if j < coherent_count { 0.0 } else { rng.random_range(0.0..std::f64::consts::TAU) };
        rhos.push(DensityMatrix::coherent(C64::from_polar(amplitude, phase), cutoff, MAX_COHERENT_DEFICIT)?);
    }
    let mut state = MeanFieldState { means: vec![C64::new(0.0, 0.0); rhos.len()], rhos, time: 0.0 };
    state.refresh_means()?;
    Ok(state)
}

/// How neighbour means enter the RK4 stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeanRefresh {
    /// Means frozen over a step and refreshed after it.
    #[default]
    PerStep,
    /// Means recomputed from the intermediate states of every RK4 stage.
    PerStage,
}

/// Precomputed single-site superoperators.
pub struct MeanFieldPropagator {
    spec: RingSpec,
    local: Operator,
    /// Superoperators of `−i[a, ·]` and `−i[a†, ·]`.
    comm_a: Operator,
    comm_ad: Operator,
    refresh: MeanRefresh,
}

impl MeanFieldPropagator {
    pub fn new(spec: &RingSpec, refresh: MeanRefresh) -> Result<Self> {
        spec.validate()?;
        let c = spec.cutoff()?;
        let a = fock::annihilation(c);
        let ad = a.adjoint();
        let n = fock::number_op(c);
        let generator = Generator {
            hamiltonian: (&n * &n).scale_re(spec.kerr),
            jumps: vec![Jump { rate: 2.0 * spec.k1, op: ad.clone() }, Jump { rate: 2.0 * spec.k2, op: &a * &a }],
        };
        let local = Liouvillian::from_generator(generator, vec![c.dim()], DEFAULT_MEMORY_BUDGET)?.superop().clone();
        let id = Operator::identity(c.dim());
        let comm = |x: &Operator| (&x.kron(&id) - &id.kron(&x.transpose())).scale(-I);
        Ok(Self { spec: *spec, local, comm_a: comm(&a), comm_ad: comm(&ad), refresh })
    }

    /// `β_j = Σ_{m ∈ window(j)} ⟨a_m⟩`.
    fn fields(&self, means: &[C64]) -> Vec<C64> {
        let ring = self.spec.ring();
        (0..means.len()).map(|j| ring.neighbours(j).map(|m| means[m]).sum()).collect()
    }

    fn site_rhs(&self, beta: C64, x: &[C64], y: &mut [C64], scratch: &mut [C64]) {
        let g = self.spec.coupling / (2.0 * self.spec.range as f64);
        self.local.apply(x, y);
        // h_j ⊃ g (β* a + β a†)
        self.comm_a.apply(x, scratch);
        let ca = beta.conj() * g;
        for (yi, s) in y.iter_mut().zip(scratch.iter()) {
            *yi += ca * s;
        }
        self.comm_ad.apply(x, scratch);
        let cad = beta * g;
        for (yi, s) in y.iter_mut().zip(scratch.iter()) {
            *yi += cad * s;
        }
    }

    /// Advances all sites by `n_steps` RK4 steps of size `dt`.
    pub fn run(&self, state: &MeanFieldState, n_steps: usize, dt: f64) -> Result<MeanFieldState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        let n = self.spec.oscillators;
        if state.rhos.len() != n {
            return Err(Error::DimensionMismatch(format!("{} site states for N = {n}", state.rhos.len())));
        }
        let d = self.spec.n_max + 1;
        if state.rhos.iter().any(|r| r.dim() != d) {
            return Err(Error::DimensionMismatch(format!("site states must have dimension {d}")));
        }
        let mut vs: Vec<Vec<C64>> = state.rhos.iter().map(|r| r.view().iter().copied().collect()).collect();
        let mut means = state.means.clone();
        for step in 1..=n_steps {
            match self.refresh {
                MeanRefresh::PerStep => self.step_frozen(&mut vs, &means, dt),
                MeanRefresh::PerStage => self.step_stagewise(&mut vs, dt),
            }
            for (j, v) in vs.iter().enumerate() {
                let m = mean_a(&ndarray::ArrayView2::from_shape((d, d), v).expect("square"));
                if !(m.re.is_finite() && m.im.is_finite()) {
                    return Err(Error::MeanFieldNonFinite { index: j });
                }
                means[j] = m;
            }
            if step % 100 == 0 || step == n_steps {
                for v in vs.iter_mut() {
                    renormalize(v, d, 1e-6, dt)?;
                }
                for (j, v) in vs.iter().enumerate() {
                    means[j] = mean_a(&ndarray::ArrayView2::from_shape((d, d), v).expect("square"));
                }
            }
        }
        let rhos = vs
            .into_iter()
            .map(|v| DensityMatrix::new_unchecked_positivity(Array2::from_shape_vec((d, d), v).expect("square"), vec![d]))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeanFieldState { rhos, means, time: state.time + n_steps as f64 * dt })
    }

    fn step_frozen(&self, vs: &mut [Vec<C64>], means: &[C64], dt: f64) {
        let betas = self.fields(means);
        vs.par_iter_mut().zip(betas.par_iter()).for_each_init(
            || (Rk4::new(self.local.dim()), vec![C64::new(0.0, 0.0); self.local.dim()]),
            |(rk, scratch), (v, &beta)| rk.step(v, dt, |x, y| self.site_rhs(beta, x, y, scratch)),
        );
    }

    /// Classical RK4 on the joint system of all sites, with the neighbour
    /// fields re-evaluated from every stage.
    fn step_stagewise(&self, vs: &mut [Vec<C64>], dt: f64) {
        let d = self.spec.n_max + 1;
        let len = d * d;
        let n = vs.len();
        let flat: Vec<C64> = vs.iter().flatten().copied().collect();
        let rhs = |x: &[C64]| -> Vec<C64> {
            let means: Vec<C64> = x
                .chunks(len)
                .map(|c| mean_a(&ndarray::ArrayView2::from_shape((d, d), c).expect("square")))
                .collect();
            let betas = self.fields(&means);
            let mut out = vec![C64::new(0.0, 0.0); n * len];
            out.par_chunks_mut(len).zip(x.par_chunks(len)).zip(betas.par_iter()).for_each(|((y, xi), &beta)| {
                let mut scratch = vec![C64::new(0.0, 0.0); len];
                self.site_rhs(beta, xi, y, &mut scratch);
            });
            out
        };
        let axpy = |a: &[C64], b: &[C64], h: f64| a.iter().zip(b).map(|(x, k)| x + k * h).collect::<Vec<_>>();
        let k1 = rhs(&flat);
        let k2 = rhs(&axpy(&flat, &k1, dt / 2.0));
        let k3 = rhs(&axpy(&flat, &k2, dt / 2.0));
        let k4 = rhs(&axpy(&flat, &k3, dt));
        for (j, v) in vs.iter_mut().enumerate() {
            for (i, x) in v.iter_mut().enumerate() {
                let k = j * len + i;
                *x += (k1[k] + (k2[k] + k3[k]) * 2.0 + k4[k]) * (dt / 6.0);
            }
        }
    }
}

pub fn mean_field_step(state: &MeanFieldState, ring: &RingSpec, dt: f64) -> Result<MeanFieldState> {
    MeanFieldPropagator::new(ring, MeanRefresh::PerStep)?.run(state, 1, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteCoherence {
    pub index: usize,
    /// Minor-axis angle in `[0, π)`, `None` when isotropic.
    pub angle: Option<f64>,
    pub anisotropy: f64,
}

pub fn coherence_profile(state: &MeanFieldState) -> Result<Vec<SiteCoherence>> {
    state
        .rhos
        .iter()
        .enumerate()
        .map(|(index, rho)| {
            let Squeezing { angle, anisotropy, .. } = phasespace::squeezing(rho)?;
            Ok(SiteCoherence { index, angle, anisotropy })
        })
        .collect()
}

/// Circular variance `1 − |⟨e^{2iθ}⟩|` of axial angles (period π);
/// isotropic sites are skipped. `None` if no site has a direction.
pub fn circular_variance(angles: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = angles
        .into_iter()
        .flatten()
        .fold((C64::new(0.0, 0.0), 0usize), |(s, c), a| (s + C64::from_polar(1.0, 2.0 * a), c + 1));
    (count > 0).then(|| 1.0 - sum.norm() / count as f64)
}

pub fn write_profile_csv(profile: &[SiteCoherence], path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "angle", "anisotropy"])?;
    for s in profile {
        let angle = s.angle.map(|a| a.to_string()).unwrap_or_else(|| "isotropic".into());
        w.write_record([s.index.to_string(), angle, s.anisotropy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
