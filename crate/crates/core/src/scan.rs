//! Run configuration, parameter sweeps and file output.
//!
//! A run is described by a [`RunConfig`] read from TOML or JSON. Every run
//! writes `manifest.json`, the fully resolved configuration, next to its
//! outputs; feeding the manifest back to [`load_config`] reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chimera::{self, MeanFieldPropagator, MeanRefresh, RingSpec};
use crate::entanglement;
use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockCutoff};
use crate::lindblad::{
    self, build_liouvillian, steady_state_converged, steady_state_with, CutoffPolicy, SolvePath, SteadyState,
    SteadyStateOptions, SystemSpec, VdpParams,
};
use crate::phasespace::{self, Classification, ClassifyOptions, PhaseGrid};
use crate::semiclassical::{self, StationaryOptions};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Steady,
    Evolve,
    Sweep,
    Phase2d,
    Sde,
    Chimera,
    Negativity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Single,
    Pair,
}

/// Single oscillator or conjugately coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub topology: TopologyKind,
    pub omega: f64,
    #[serde(rename = "K")]
    pub kerr: f64,
    pub k1: f64,
    pub k2: f64,
    pub epsilon_over_k1: f64,
    /// Fixed cutoff; `None` selects the cutoff with `cutoff_policy`.
    pub n_max: Option<usize>,
    pub cutoff_policy: CutoffPolicy,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let p = VdpParams::default();
        Self {
            topology: TopologyKind::Pair,
            omega: p.omega,
            kerr: p.kerr,
            k1: p.k1,
            k2: p.k2,
            epsilon_over_k1: 0.0,
            n_max: None,
            cutoff_policy: CutoffPolicy::default(),
        }
    }
}

impl SystemConfig {
    pub fn params(&self) -> VdpParams {
        VdpParams { omega: self.omega, kerr: self.kerr, k1: self.k1, k2: self.k2, epsilon: 0.0 }
            .with_coupling(self.epsilon_over_k1)
    }

    pub fn spec(&self, cutoff: FockCutoff) -> SystemSpec {
        match self.topology {
            TopologyKind::Single => SystemSpec::single(self.params(), cutoff),
            TopologyKind::Pair => SystemSpec::conjugate_pair(self.params(), cutoff),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon_over_k1 >= 0.0 && self.epsilon_over_k1.is_finite()) {
            return Err(Error::param("epsilon_over_k1", format!("must be finite and >= 0, got {}", self.epsilon_over_k1)));
        }
        let cutoff = FockCutoff::new(self.n_max.unwrap_or(self.cutoff_policy.start))?;
        self.spec(cutoff).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisName {
    #[serde(rename = "epsilon_over_k1")]
    EpsilonOverK1,
    K,
    V,
    #[serde(rename = "d")]
    Range,
}

impl AxisName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisName::EpsilonOverK1 => "epsilon_over_k1",
            AxisName::K => "K",
            AxisName::V => "V",
            AxisName::Range => "d",
        }
    }
}

/// `count` evenly spaced values from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub parameter: AxisName,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|i| if i + 1 == n { self.max } else { self.min + (self.max - self.min) * i as f64 / (n - 1) as f64 })
            .collect()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Config(format!("sweep[{index}].count: must be >= 2, got {}", self.count)));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!(
                "sweep[{index}]: need finite min <= max, got min={} max={}",
                self.min, self.max
            )));
        }
        if self.parameter == AxisName::Range {
            let integral = self.values().iter().all(|v| (v - v.round()).abs() < 1e-9 && *v >= 1.0);
            if !integral {
                return Err(Error::Config(format!(
                    "sweep[{index}]: every value of d must be an integer >= 1, got min={} max={} count={}",
                    self.min, self.max, self.count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub t_final: f64,
    pub dt: f64,
    /// Spacing of the rows in `evolve.csv`.
    pub sample_every: f64,
    /// Every oscillator starts in the coherent state of this real amplitude.
    pub initial_amplitude: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self { t_final: 20.0, dt: lindblad::DEFAULT_DT, sample_every: 0.5, initial_amplitude: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub dt: f64,
    pub steps: usize,
    pub burn_in_fraction: f64,
    pub trajectories: usize,
    pub thin: usize,
    pub bins: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        let s = StationaryOptions::default();
        Self {
            dt: s.dt,
            steps: s.steps,
            burn_in_fraction: s.burn_in_fraction,
            trajectories: s.trajectories,
            thin: s.thin,
            bins: semiclassical::DEFAULT_BINS,
        }
    }
}

impl SdeConfig {
    pub fn options(&self, seed: u64) -> StationaryOptions {
        StationaryOptions {
            dt: self.dt,
            steps: self.steps,
            burn_in_fraction: self.burn_in_fraction,
            trajectories: self.trajectories,
            seed,
            thin: self.thin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Binary,
    Csv,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChimeraConfig {
    pub coherent_count: usize,
    /// Initial coherent amplitude; resolves to `√(k1/2k2)` when absent.
    pub amplitude: Option<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub refresh: MeanRefresh,
    pub write_husimi: bool,
}

impl Default for ChimeraConfig {
    fn default() -> Self {
        Self { coherent_count: 21, amplitude: None, t_final: 1.0, dt: 1e-3, refresh: MeanRefresh::PerStep, write_husimi: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub ring: RingSpec,
    #[serde(default)]
    pub sweep: Vec<Axis>,
    #[serde(default)]
    pub grid: PhaseGrid,
    #[serde(default)]
    pub classify: ClassifyOptions,
    #[serde(default)]
    pub solver: SteadyStateOptions,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub chimera: ChimeraConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Write the phase-space field of every sweep point.
    #[serde(default)]
    pub dump_fields: bool,
    #[serde(default = "default_field_format")]
    pub field_format: FieldFormat,
    /// phase2d only: test that the QOD onset in ε/k1 does not decrease with K.
    #[serde(default)]
    pub check_monotone: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_field_format() -> FieldFormat {
    FieldFormat::Binary
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            system: SystemConfig::default(),
            ring: RingSpec::default(),
            sweep: Vec::new(),
            grid: PhaseGrid::default(),
            classify: ClassifyOptions::default(),
            solver: SteadyStateOptions::default(),
            evolve: EvolveConfig::default(),
            sde: SdeConfig::default(),
            chimera: ChimeraConfig::default(),
            output_dir: default_output_dir(),
            seed: 0,
            dump_fields: false,
            field_format: default_field_format(),
            check_monotone: false,
        }
    }

    /// Fills every value that defaults to something derived from other fields.
    pub fn resolved(mut self) -> Self {
        if self.chimera.amplitude.is_none() {
            self.chimera.amplitude = Some(self.ring.classical_amplitude());
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (i, axis) in self.sweep.iter().enumerate() {
            axis.validate(i)?;
        }
        for (i, a) in self.sweep.iter().enumerate() {
            if self.sweep[..i].iter().any(|b| b.parameter == a.parameter) {
                return Err(Error::Config(format!("sweep axis {} given twice", a.parameter.as_str())));
            }
        }
        let names: Vec<AxisName> = self.sweep.iter().map(|a| a.parameter).collect();
        let steady_axes = |allowed: std::ops::RangeInclusive<usize>| -> Result<()> {
            if !allowed.contains(&names.len()) {
                return Err(Error::Config(format!(
                    "mode {:?} takes {}..={} sweep axes, got {}",
                    self.mode,
                    allowed.start(),
                    allowed.end(),
                    names.len()
                )));
            }
            if let Some(bad) = names.iter().find(|n| matches!(n, AxisName::V | AxisName::Range)) {
                return Err(Error::Config(format!(
                    "sweep parameter {} applies to chimera runs only; accepted here: epsilon_over_k1, K",
                    bad.as_str()
                )));
            }
            Ok(())
        };
        match self.mode {
            Mode::Steady | Mode::Evolve => steady_axes(0..=0)?,
            Mode::Sweep => steady_axes(1..=1)?,
            Mode::Phase2d => steady_axes(2..=2)?,
            Mode::Negativity => steady_axes(1..=2)?,
            Mode::Sde => steady_axes(0..=1)?,
            Mode::Chimera => {
                if names.len() > 1 {
                    return Err(Error::Config(format!("mode chimera takes 0..=1 sweep axes, got {}", names.len())));
                }
                if names.contains(&AxisName::EpsilonOverK1) {
                    return Err(Error::Config("sweep parameter epsilon_over_k1 does not apply to chimera runs; accepted: K, V, d".into()));
                }
            }
        }
        if self.check_monotone && self.mode != Mode::Phase2d {
            return Err(Error::Config("check_monotone applies to phase2d only".into()));
        }
        match self.mode {
            Mode::Chimera => {
                for p in self.points() {
                    let mut ring = self.ring;
                    apply_ring(&mut ring, &p)?;
                    ring.validate()?;
                }
                let c = &self.chimera;
                if c.coherent_count > self.ring.oscillators {
                    return Err(Error::param(
                        "coherent_count",
                        format!("must be <= N = {}, got {}", self.ring.oscillators, c.coherent_count),
                    ));
                }
                check_step("chimera.dt", c.dt, c.t_final)?;
            }
            Mode::Sde => {
                self.system.params().validate()?;
                self.sde.options(self.seed).validate()?;
                if self.sde.bins < 3 {
                    return Err(Error::param("sde.bins", format!("must be >= 3, got {}", self.sde.bins)));
                }
            }
            _ => {
                for p in self.points() {
                    let mut sys = self.system;
                    apply_system(&mut sys, &p);
                    sys.validate()?;
                }
                if self.mode == Mode::Negativity && self.system.topology != TopologyKind::Pair {
                    return Err(Error::Config("negativity needs topology = \"pair\"".into()));
                }
                if self.mode == Mode::Evolve {
                    check_step("evolve.dt", self.evolve.dt, self.evolve.t_final)?;
                    if !(self.evolve.sample_every >= self.evolve.dt) {
                        return Err(Error::param("evolve.sample_every", "must be >= evolve.dt"));
                    }
                }
                if self.check_monotone && !(names.contains(&AxisName::K) && names.contains(&AxisName::EpsilonOverK1)) {
                    return Err(Error::Config("check_monotone needs axes epsilon_over_k1 and K".into()));
                }
            }
        }
        self.grid.validate()
    }

    /// Cartesian product of the sweep axes, last axis varying fastest. A run
    /// without axes has one empty point.
    pub fn points(&self) -> Vec<Point> {
        let mut points = vec![Point(Vec::new())];
        for axis in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values().into_iter().map(move |v| {
                        let mut q = p.0.clone();
                        q.push((axis.parameter, v));
                        Point(q)
                    })
                })
                .collect();
        }
        points
    }
}

fn check_step(name: &'static str, dt: f64, t_final: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite() && t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::param(name, format!("need dt > 0 and t_final >= 0, got dt={dt} t_final={t_final}")));
    }
    Ok(())
}

/// Parameter values of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<(AxisName, f64)>);

impl Point {
    pub fn get(&self, name: AxisName) -> Option<f64> {
        self.0.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

fn apply_system(sys: &mut SystemConfig, p: &Point) {
    for &(name, v) in &p.0 {
        match name {
            AxisName::EpsilonOverK1 => sys.epsilon_over_k1 = v,
            AxisName::K => sys.kerr = v,
            AxisName::V | AxisName::Range => {}
        }
    }
}

fn apply_ring(ring: &mut RingSpec, p: &Point) -> Result<()> {
    for &(name, v) in &p.0 {
        match name {
            AxisName::K => ring.kerr = v,
            AxisName::V => ring.coupling = v,
            AxisName::Range => ring.range = v.round() as usize,
            AxisName::EpsilonOverK1 => {
                return Err(Error::Config("epsilon_over_k1 does not apply to chimera runs".into()));
            }
        }
    }
    Ok(())
}

pub fn parse_config(text: &str, format: ConfigFormat) -> Result<RunConfig> {
    let config: RunConfig = match format {
        ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?,
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
    };
    let config = config.resolved();
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

/// Reads a `.toml` or `.json` config (a manifest is a valid JSON config).
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ConfigFormat::Json,
        _ => ConfigFormat::Toml,
    };
    let text = fs::read_to_string(path)?;
    parse_config(&text, format).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_manifest(config: &RunConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n")?;
    Ok(path)
}

/// Steady state of one parameter point, at a fixed or converged cutoff.
#[derive(Debug, Clone)]
pub struct SolvedPoint {
    pub state: SteadyState,
    pub cutoff: FockCutoff,
    pub cutoff_converged: bool,
}

pub fn solve_point(sys: &SystemConfig, solver: &SteadyStateOptions) -> Result<SolvedPoint> {
    match sys.n_max {
        Some(n) => {
            let cutoff = FockCutoff::new(n)?;
            let state = steady_state_with(&build_liouvillian(&sys.spec(cutoff))?, solver)?;
            Ok(SolvedPoint { state, cutoff, cutoff_converged: false })
        }
        None => {
            let c = steady_state_converged(&sys.spec(FockCutoff::new(sys.cutoff_policy.start)?), sys.cutoff_policy, solver)?;
            Ok(SolvedPoint { state: c.state, cutoff: c.cutoff, cutoff_converged: c.converged })
        }
    }
}

/// State of the first oscillator.
pub fn reduced_first(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.subsystem_dims().len() == 1 {
        Ok(rho.clone())
    } else {
        fock::partial_trace(rho, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LobePoint {
    pub delta_y: f64,
    pub classification: Classification,
    pub maxima_y: Vec<f64>,
    pub n_max: usize,
    pub cutoff_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row<T> {
    pub point: Point,
    pub outcome: std::result::Result<T, String>,
}

impl<T> Row<T> {
    fn status(&self) -> String {
        match &self.outcome {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        }
    }
}

pub fn failed<T>(rows: &[Row<T>]) -> usize {
    rows.iter().filter(|r| r.outcome.is_err()).count()
}

fn run_points<T: Send>(points: Vec<Point>, f: impl Fn(usize, &Point) -> Result<T> + Sync) -> Vec<Row<T>> {
    points
        .into_par_iter()
        .enumerate()
        .map(|(i, point)| {
            let outcome = f(i, &point).map_err(|e| e.to_string());
            Row { point, outcome }
        })
        .collect()
}

fn field_paths(dir: &Path, stem: &str, format: FieldFormat) -> (Option<PathBuf>, Option<PathBuf>) {
    let bin = matches!(format, FieldFormat::Binary | FieldFormat::Both).then(|| dir.join(format!("{stem}.bin")));
    let csv = matches!(format, FieldFormat::Csv | FieldFormat::Both).then(|| dir.join(format!("{stem}.csv")));
    (bin, csv)
}

fn write_field(field: &phasespace::PhaseField, dir: &Path, stem: &str, format: FieldFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (bin, csv) = field_paths(dir, stem, format);
    if let Some(p) = bin {
        field.save_binary(p)?;
    }
    if let Some(p) = csv {
        field.write_csv(p)?;
    }
    Ok(())
}

/// Steady state, reduced Wigner function and lobe report at every point
/// (`sweep` and `phase2d`). With `dump_dir`, point `i` writes
/// `wigner_{i:04}` there.
pub fn run_sweep(config: &RunConfig, dump_dir: Option<&Path>) -> Vec<Row<LobePoint>> {
    run_points(config.points(), |i, p| {
        let mut sys = config.system;
        apply_system(&mut sys, p);
        let solved = solve_point(&sys, &config.solver)?;
        let field = phasespace::wigner(&reduced_first(&solved.state.rho)?, &config.grid)?;
        if let Some(dir) = dump_dir {
            write_field(&field, dir, &format!("wigner_{i:04}"), config.field_format)?;
        }
        let report = phasespace::classify_with(&field, &config.classify)?;
        Ok(LobePoint {
            delta_y: report.delta_y,
            classification: report.classification,
            maxima_y: report.maxima.iter().map(|m| m.y).collect(),
            n_max: solved.cutoff.n_max(),
            cutoff_converged: solved.cutoff_converged,
        })
    })
}

pub fn run_phase2d(config: &RunConfig, dump_dir: Option<&Path>) -> Vec<Row<LobePoint>> {
    run_sweep(config, dump_dir)
}

/// Smallest ε/k1 on the grid classified QOD, for each K (ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QodBoundary {
    pub kerr: Vec<f64>,
    pub epsilon_star: Vec<Option<f64>>,
    /// `ε*(K)` never decreases as K grows; a K without QOD counts as `+∞`.
    pub monotone: bool,
}

pub fn qod_boundary(rows: &[Row<LobePoint>]) -> QodBoundary {
    let mut kerr: Vec<f64> = Vec::new();
    for r in rows {
        if let Some(k) = r.point.get(AxisName::K) {
            if !kerr.contains(&k) {
                kerr.push(k);
            }
        }
    }
    kerr.sort_by(f64::total_cmp);
    let epsilon_star: Vec<Option<f64>> = kerr
        .iter()
        .map(|&k| {
            rows.iter()
                .filter(|r| r.point.get(AxisName::K) == Some(k))
                .filter(|r| matches!(&r.outcome, Ok(l) if l.classification == Classification::Qod))
                .filter_map(|r| r.point.get(AxisName::EpsilonOverK1))
                .min_by(f64::total_cmp)
        })
        .collect();
    let as_num = |e: &Option<f64>| e.unwrap_or(f64::INFINITY);
    let monotone = epsilon_star.windows(2).all(|w| as_num(&w[0]) <= as_num(&w[1]));
    QodBoundary { kerr, epsilon_star, monotone }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativityPoint {
    pub negativity: f64,
    pub n_max: usize,
    pub cutoff_converged: bool,
}

pub fn run_negativity(config: &RunConfig) -> Vec<Row<NegativityPoint>> {
    run_points(config.points(), |_, p| {
        let mut sys = config.system;
        apply_system(&mut sys, p);
        let solved = solve_point(&sys, &config.solver)?;
        Ok(NegativityPoint {
            negativity: entanglement::negativity(&solved.state.rho)?.value,
            n_max: solved.cutoff.n_max(),
            cutoff_converged: solved.cutoff_converged,
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdePoint {
    pub report: semiclassical::BimodalityReport,
    pub samples: usize,
}

pub fn run_sde(config: &RunConfig) -> Vec<Row<SdePoint>> {
    // the ensemble is parallel inside, so points run in order
    config
        .points()
        .into_iter()
        .map(|point| {
            let mut sys = config.system;
            apply_system(&mut sys, &point);
            let outcome = (|| {
                let y = semiclassical::stationary_y1(&sys.params(), &config.sde.options(config.seed))?;
                let report = semiclassical::bimodality(&y, config.sde.bins)?;
                Ok(SdePoint { report, samples: y.len() })
            })()
            .map_err(|e: Error| e.to_string());
            Row { point, outcome }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ChimeraPoint {
    pub state: chimera::MeanFieldState,
    pub profile: Vec<chimera::SiteCoherence>,
    /// Circular variance over the initially coherent sites.
    pub cv_coherent: Option<f64>,
    /// Circular variance over the remaining sites.
    pub cv_incoherent: Option<f64>,
    pub mean_anisotropy: f64,
}

pub fn run_chimera_point(ring: &RingSpec, c: &ChimeraConfig, seed: u64) -> Result<ChimeraPoint> {
    let amplitude = c.amplitude.unwrap_or_else(|| ring.classical_amplitude());
    let init = chimera::init_chimera(ring, c.coherent_count, amplitude, seed)?;
    let steps = (c.t_final / c.dt).round() as usize;
    let state = MeanFieldPropagator::new(ring, c.refresh)?.run(&init, steps, c.dt)?;
    let profile = chimera::coherence_profile(&state)?;
    let (head, tail) = profile.split_at(c.coherent_count);
    Ok(ChimeraPoint {
        cv_coherent: chimera::circular_variance(head.iter().map(|s| s.angle)),
        cv_incoherent: chimera::circular_variance(tail.iter().map(|s| s.angle)),
        mean_anisotropy: profile.iter().map(|s| s.anisotropy).sum::<f64>() / profile.len() as f64,
        state,
        profile,
    })
}

pub fn run_chimera(config: &RunConfig) -> Vec<Row<ChimeraPoint>> {
    config
        .points()
        .into_iter()
        .map(|point| {
            let outcome = (|| {
                let mut ring = config.ring;
                apply_ring(&mut ring, &point)?;
                run_chimera_point(&ring, &config.chimera, config.seed)
            })()
            .map_err(|e| e.to_string());
            Row { point, outcome }
        })
        .collect()
}

/// Site occupations sampled along a trajectory from a product of coherent
/// states.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveTrace {
    pub times: Vec<f64>,
    pub occupations: Vec<Vec<f64>>,
    pub final_state: DensityMatrix,
    pub n_max: usize,
}

pub fn run_evolve(config: &RunConfig) -> Result<EvolveTrace> {
    let sys = config.system;
    let cutoff = FockCutoff::new(sys.n_max.unwrap_or(sys.cutoff_policy.start))?;
    let spec = sys.spec(cutoff);
    let l = build_liouvillian(&spec)?;
    let site = DensityMatrix::coherent(C64::new(config.evolve.initial_amplitude, 0.0), cutoff, chimera::MAX_COHERENT_DEFICIT)?;
    let mut rho = DensityMatrix::product(&vec![site; spec.oscillators()])?;
    let occ = |rho: &DensityMatrix| (0..spec.oscillators()).map(|j| lindblad::mean_occupation(rho, j)).collect::<Result<Vec<_>>>();
    let e = config.evolve;
    let mut times = vec![0.0];
    let mut occupations = vec![occ(&rho)?];
    let chunks = (e.t_final / e.sample_every).round() as usize;
    for k in 1..=chunks {
        rho = lindblad::evolve(&rho, &l, e.sample_every, e.dt)?;
        times.push(k as f64 * e.sample_every);
        occupations.push(occ(&rho)?);
    }
    Ok(EvolveTrace { times, occupations, final_state: rho, n_max: cutoff.n_max() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadySummary {
    pub n_max: usize,
    pub cutoff_converged: bool,
    pub path: SolvePath,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub mean_occupation: Vec<f64>,
    pub classification: Classification,
    pub delta_y: f64,
    pub negativity: Option<f64>,
}

fn axis_headers(config: &RunConfig) -> Vec<String> {
    config.sweep.iter().map(|a| a.parameter.as_str().to_string()).collect()
}

fn point_fields(p: &Point) -> Vec<String> {
    p.0.iter().map(|(_, v)| v.to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns: sweep axes, `delta_y, classification, n_maxima, maxima_y,
/// n_max, cutoff_converged, status`. `maxima_y` is `;`-separated.
pub fn write_lobe_csv(config: &RunConfig, rows: &[Row<LobePoint>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = axis_headers(config);
    header.extend(["delta_y", "classification", "n_maxima", "maxima_y", "n_max", "cutoff_converged", "status"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = point_fields(&r.point);
        match &r.outcome {
            Ok(l) => rec.extend([
                l.delta_y.to_string(),
                l.classification.as_str().to_string(),
                l.maxima_y.len().to_string(),
                l.maxima_y.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(";"),
                l.n_max.to_string(),
                l.cutoff_converged.to_string(),
            ]),
            Err(_) => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(r.status());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: sweep axes, `negativity, n_max, cutoff_converged, status`.
pub fn write_negativity_csv(config: &RunConfig, rows: &[Row<NegativityPoint>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = axis_headers(config);
    header.extend(["negativity", "n_max", "cutoff_converged", "status"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = point_fields(&r.point);
        match &r.outcome {
            Ok(n) => rec.extend([n.negativity.to_string(), n.n_max.to_string(), n.cutoff_converged.to_string()]),
            Err(_) => rec.extend(std::iter::repeat_n(String::new(), 3)),
        }
        rec.push(r.status());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub points: usize,
    pub failed: usize,
    pub files: Vec<PathBuf>,
}

/// Validates, writes the manifest and runs `config.mode`, writing every
/// output under `config.output_dir`. Per-point failures are recorded in the
/// tables and counted in the report; other errors abort the run.
pub fn execute(config: &RunConfig) -> Result<RunReport> {
    let config = config.clone().resolved();
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut files = vec![write_manifest(&config, &dir)?];
    let (points, failed) = match config.mode {
        Mode::Steady => {
            let solved = solve_point(&config.system, &config.solver)?;
            let reduced = reduced_first(&solved.state.rho)?;
            let field = phasespace::wigner(&reduced, &config.grid)?;
            write_field(&field, &dir, "wigner", config.field_format)?;
            files.extend(existing(field_paths(&dir, "wigner", config.field_format)));
            let report = phasespace::classify_with(&field, &config.classify)?;
            let rho = &solved.state.rho;
            let summary = SteadySummary {
                n_max: solved.cutoff.n_max(),
                cutoff_converged: solved.cutoff_converged,
                path: solved.state.path,
                residual: solved.state.residual,
                min_eigenvalue: solved.state.min_eigenvalue,
                mean_occupation: (0..rho.subsystem_dims().len())
                    .map(|j| lindblad::mean_occupation(rho, j))
                    .collect::<Result<_>>()?,
                classification: report.classification,
                delta_y: report.delta_y,
                negativity: match config.system.topology {
                    TopologyKind::Pair => Some(entanglement::negativity(rho)?.value),
                    TopologyKind::Single => None,
                },
            };
            files.push(write_json(&dir.join("steady.json"), &summary)?);
            (1, 0)
        }
        Mode::Evolve => {
            let trace = run_evolve(&config)?;
            let path = dir.join("evolve.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let sites = trace.occupations[0].len();
            let mut header = vec!["t".to_string()];
            header.extend((0..sites).map(|j| format!("n_{j}")));
            w.write_record(&header)?;
            for (t, occ) in trace.times.iter().zip(&trace.occupations) {
                let mut rec = vec![t.to_string()];
                rec.extend(occ.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            files.push(path);
            let field = phasespace::wigner(&reduced_first(&trace.final_state)?, &config.grid)?;
            write_field(&field, &dir, "wigner_final", config.field_format)?;
            files.extend(existing(field_paths(&dir, "wigner_final", config.field_format)));
            (1, 0)
        }
        Mode::Sweep | Mode::Phase2d => {
            let dump = config.dump_fields.then(|| dir.join("fields"));
            let rows = run_sweep(&config, dump.as_deref());
            let name = if config.mode == Mode::Sweep { "sweep.csv" } else { "phase2d.csv" };
            write_lobe_csv(&config, &rows, dir.join(name))?;
            files.push(dir.join(name));
            if config.check_monotone {
                let boundary = qod_boundary(&rows);
                files.push(write_json(&dir.join("boundary.json"), &boundary)?);
            }
            (rows.len(), failed(&rows))
        }
        Mode::Negativity => {
            let rows = run_negativity(&config);
            write_negativity_csv(&config, &rows, dir.join("negativity.csv"))?;
            files.push(dir.join("negativity.csv"));
            (rows.len(), failed(&rows))
        }
        Mode::Sde => {
            let rows = run_sde(&config);
            let hist_dir = dir.join("histograms");
            fs::create_dir_all(&hist_dir)?;
            let path = dir.join("sde.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = axis_headers(&config);
            header.extend(["modes", "delta_y", "peaks", "samples", "status"].map(String::from));
            w.write_record(&header)?;
            for (i, r) in rows.iter().enumerate() {
                let mut rec = point_fields(&r.point);
                match &r.outcome {
                    Ok(s) => {
                        let hist = hist_dir.join(format!("y1_{i:04}.csv"));
                        s.report.histogram.write_csv(&hist)?;
                        files.push(hist);
                        rec.extend([
                            s.report.modes.to_string(),
                            s.report.delta_y.to_string(),
                            s.report.peaks.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";"),
                            s.samples.to_string(),
                        ]);
                    }
                    Err(_) => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
                rec.push(r.status());
                w.write_record(&rec)?;
            }
            w.flush()?;
            files.push(path);
            (rows.len(), failed(&rows))
        }
        Mode::Chimera => {
            let rows = run_chimera(&config);
            let path = dir.join("chimera.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = axis_headers(&config);
            header.extend(["cv_coherent", "cv_incoherent", "mean_anisotropy", "status"].map(String::from));
            w.write_record(&header)?;
            for (i, r) in rows.iter().enumerate() {
                let mut rec = point_fields(&r.point);
                match &r.outcome {
                    Ok(c) => {
                        let profile = dir.join(format!("profile_{i:04}.csv"));
                        chimera::write_profile_csv(&c.profile, &profile)?;
                        files.push(profile);
                        if config.chimera.write_husimi {
                            let hdir = dir.join(format!("husimi_{i:04}"));
                            let fields: Vec<Result<phasespace::PhaseField>> =
                                c.state.rhos.par_iter().map(|rho| phasespace::husimi(rho, &config.grid)).collect();
                            for (j, f) in fields.into_iter().enumerate() {
                                write_field(&f?, &hdir, &format!("osc_{j:03}"), config.field_format)?;
                            }
                        }
                        rec.extend([opt(c.cv_coherent), opt(c.cv_incoherent), c.mean_anisotropy.to_string()]);
                    }
                    Err(_) => rec.extend(std::iter::repeat_n(String::new(), 3)),
                }
                rec.push(r.status());
                w.write_record(&rec)?;
            }
            w.flush()?;
            files.push(path);
            (rows.len(), failed(&rows))
        }
    };
    Ok(RunReport { points, failed, files })
}

fn existing((a, b): (Option<PathBuf>, Option<PathBuf>)) -> impl Iterator<Item = PathBuf> {
    a.into_iter().chain(b)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(path.to_path_buf())
}
