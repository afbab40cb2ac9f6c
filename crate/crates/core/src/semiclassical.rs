//! Noisy classical limit of the coupled pair: amplitude equation, drift and
//! diffusion of the truncated Wigner Fokker–Planck equation, Euler–Maruyama
//! integration and histogram bimodality.
//!
//! State vector `X = (x₁, y₁, x₂, y₂)` with `α_j = x_j + i y_j`.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::VdpParams;

pub type SdeState = [f64; 4];

/// Divergence threshold on `|X|`.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// `α̇_j = −i(ω + 2K|α_j|²)α_j + (k1/2 − k2|α_j|²)α_j − ε/2 [(α_j + α_j*) + i(α_j' − α_j'*)]`.
pub fn classical_rhs(alpha1: C64, alpha2: C64, p: &VdpParams) -> (C64, C64) {
    let one = |a: C64, other: C64| {
        let r2 = a.norm_sqr();
        let rot = C64::new(0.0, -(p.omega + 2.0 * p.kerr * r2)) * a;
        let gain = a * (p.k1 / 2.0 - p.k2 * r2);
        let coupling = ((a + a.conj()) + C64::i() * (other - other.conj())) * (p.epsilon / 2.0);
        rot + gain - coupling
    };
    (one(alpha1, alpha2), one(alpha2, alpha1))
}

pub fn drift(x: &SdeState, p: &VdpParams) -> SdeState {
    let mut mu = [0.0; 4];
    for j in 0..2 {
        let (xj, yj) = (x[2 * j], x[2 * j + 1]);
        let y_other = x[2 * (1 - j) + 1];
        let r2 = xj * xj + yj * yj;
        let w = p.omega + 2.0 * p.kerr * r2;
        let g = p.k1 / 2.0 - p.k2 * (r2 - 1.0);
        mu[2 * j] = w * yj + (g - p.epsilon) * xj + p.epsilon * y_other;
        mu[2 * j + 1] = -w * xj + g * yj;
    }
    mu
}

/// `ν_j = k1/2 + k2(2|α_j|² − 1) + ε/2`.
pub fn noise_intensity(x: &SdeState, p: &VdpParams, j: usize) -> f64 {
    let r2 = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
    p.k1 / 2.0 + p.k2 * (2.0 * r2 - 1.0) + p.epsilon / 2.0
}

/// Diagonal of `D = ½ diag(ν₁, ν₁, ν₂, ν₂)`; negative `ν_j` is an error.
pub fn diffusion(x: &SdeState, p: &VdpParams) -> Result<SdeState> {
    let mut d = [0.0; 4];
    for j in 0..2 {
        let nu = noise_intensity(x, p, j);
        if nu < 0.0 {
            return Err(Error::NegativeDiffusion { index: j + 1, value: nu, state: *x });
        }
        d[2 * j] = 0.5 * nu;
        d[2 * j + 1] = 0.5 * nu;
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmOptions {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Keep every `record_every`-th state (the initial state is always kept).
    pub record_every: usize,
    /// `false` switches the noise off (deterministic drift only).
    pub noise: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { dt: 1e-3, n_steps: 1000, seed: 0, record_every: 1, noise: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Spacing between recorded samples.
    pub dt: f64,
    pub seed: u64,
    pub samples: Vec<SdeState>,
}

impl Trajectory {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "x1", "y1", "x2", "y2"])?;
        for (i, s) in self.samples.iter().enumerate() {
            w.serialize((i as f64 * self.dt, s[0], s[1], s[2], s[3]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Deterministic generator for trajectory `stream` of run `seed`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Euler–Maruyama step `X += μ dt + √D √dt ξ`.
fn em_step(x: &mut SdeState, p: &VdpParams, dt: f64, rng: Option<&mut ChaCha8Rng>) -> Result<()> {
    let mu = drift(x, p);
    match rng {
        Some(rng) => {
            let d = diffusion(x, p)?;
            let sq = dt.sqrt();
            for k in 0..4 {
                let xi: f64 = rng.sample(StandardNormal);
                x[k] += mu[k] * dt + d[k].sqrt() * sq * xi;
            }
        }
        None => {
            for k in 0..4 {
                x[k] += mu[k] * dt;
            }
        }
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    Ok(())
}

fn diverged(x: &SdeState) -> Option<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (!n.is_finite() || n > DIVERGENCE_NORM).then_some(n)
}

pub fn em_integrate(x0: SdeState, p: &VdpParams, opts: &EmOptions) -> Result<Trajectory> {
    check_dt(opts.dt)?;
    p.validate()?;
    let every = opts.record_every.max(1);
    let mut rng = stream_rng(opts.seed, 0);
    let mut x = x0;
    let mut samples = Vec::with_capacity(opts.n_steps / every + 1);
    samples.push(x);
    for step in 1..=opts.n_steps {
        em_step(&mut x, p, opts.dt, opts.noise.then_some(&mut rng))?;
        if let Some(norm) = diverged(&x) {
            return Err(Error::Diverged { step, norm });
        }
        if step % every == 0 {
            samples.push(x);
        }
    }
    Ok(Trajectory { dt: opts.dt * every as f64, seed: opts.seed, samples })
}

/// Stationary ensemble: independent trajectories from random initial
/// conditions in `[−2, 2]⁴`, sampled after burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationaryOptions {
    pub dt: f64,
    pub steps: usize,
    pub burn_in_fraction: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Keep every `thin`-th post-burn-in step.
    pub thin: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { dt: 1e-3, steps: 2_000_000, burn_in_fraction: 0.1, trajectories: 8, seed: 0, thin: 1 }
    }
}

impl StationaryOptions {
    pub fn validate(&self) -> Result<()> {
        check_dt(self.dt)?;
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::param("burn_in", format!("fraction must lie in [0, 1), got {}", self.burn_in_fraction)));
        }
        if self.trajectories == 0 || self.steps == 0 || self.thin == 0 {
            return Err(Error::param("steps", "steps, trajectories and thin must be positive"));
        }
        Ok(())
    }

    pub fn samples_per_trajectory(&self) -> usize {
        let burn = (self.steps as f64 * self.burn_in_fraction).round() as usize;
        (self.steps - burn) / self.thin
    }
}

pub fn random_initial_state(seed: u64, trajectory: u64) -> SdeState {
    // stream numbers above 2^32 are reserved for initial conditions
    let mut rng = stream_rng(seed, (1 << 32) + trajectory);
    std::array::from_fn(|_| rng.random_range(-2.0..2.0))
}

/// Post-burn-in `y₁` samples pooled over the ensemble, in trajectory order.
pub fn stationary_y1(p: &VdpParams, opts: &StationaryOptions) -> Result<Vec<f64>> {
    opts.validate()?;
    p.validate()?;
    let burn = (opts.steps as f64 * opts.burn_in_fraction).round() as usize;
    let per: Vec<Result<Vec<f64>>> = (0..opts.trajectories as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(opts.seed, t);
            let mut x = random_initial_state(opts.seed, t);
            let mut out = Vec::with_capacity(opts.samples_per_trajectory());
            for step in 1..=opts.steps {
                em_step(&mut x, p, opts.dt, Some(&mut rng))?;
                if let Some(norm) = diverged(&x) {
                    return Err(Error::Diverged { step, norm });
                }
                if step > burn && (step - burn) % opts.thin == 0 {
                    out.push(x[1]);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(opts.trajectories * opts.samples_per_trajectory());
    for r in per {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `n_bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(samples: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins < 3 {
            return Err(Error::param("n_bins", format!("need at least 3 bins, got {n_bins}")));
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) || lo == hi {
            return Err(Error::param("samples", "need finite samples with a nonzero spread"));
        }
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0u64; n_bins];
        for &s in samples {
            let b = (((s - lo) / width) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        let edges = (0..=n_bins).map(|k| lo + k as f64 * width).collect();
        Ok(Self { edges, counts })
    }

    pub fn centres(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Probability density per bin.
    pub fn density(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        let width = self.edges[1] - self.edges[0];
        self.counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_lo", "bin_hi", "count", "density"])?;
        for (k, d) in self.density().iter().enumerate() {
            w.serialize((self.edges[k], self.edges[k + 1], self.counts[k], d))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalityReport {
    pub modes: usize,
    pub delta_y: f64,
    /// Bin centres of the detected peaks, ascending.
    pub peaks: Vec<f64>,
    pub histogram: Histogram,
}

pub const MIN_BIMODALITY_SAMPLES: usize = 10_000;
pub const DEFAULT_BINS: usize = 60;

/// Peaks of the 3-bin moving average that exceed both neighbours and half
/// the highest smoothed bin; `delta_y` spans the outermost peaks.
pub fn bimodality(samples: &[f64], n_bins: usize) -> Result<BimodalityReport> {
    if samples.len() < MIN_BIMODALITY_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_BIMODALITY_SAMPLES, got: samples.len() });
    }
    let histogram = Histogram::new(samples, n_bins)?;
    let c: Vec<f64> = histogram.counts.iter().map(|&v| v as f64).collect();
    let smooth: Vec<f64> = (0..n_bins)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n_bins - 1);
            c[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let top = smooth.iter().copied().fold(0.0, f64::max);
    let centres = histogram.centres();
    let peaks: Vec<f64> = (0..n_bins)
        .filter(|&k| {
            let left = k == 0 || smooth[k] > smooth[k - 1];
            let right = k == n_bins - 1 || smooth[k] > smooth[k + 1];
            left && right && smooth[k] >= 0.5 * top
        })
        .map(|k| centres[k])
        .collect();
    let delta_y = match (peaks.first(), peaks.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    Ok(BimodalityReport { modes: peaks.len(), delta_y, peaks, histogram })
}
