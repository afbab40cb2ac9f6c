//! Wigner and Husimi functions on rectangular grids, local maxima, the
//! Δy lobe metric with Osc/QAD/QOD classification, and quadrature
//! squeezing.
//!
//! Phase-space coordinates are `α = x + iy` with quadratures
//! `x = (a + a†)/2`, `y = (a − a†)/(2i)`. Both functions integrate to one
//! over the plane; the vacuum Wigner function is `(2/π) e^{−2|α|²}`.
//!
//! Field values are stored with shape `(ny, nx)`: row `i` is `y_i`.
//!
//! Binary layout (little-endian): magic `b"QVPF"`, kind byte (0 Wigner,
//! 1 Husimi), `x_min, x_max, y_min, y_max` as f64, `nx, ny` as u64, then
//! `ny·nx` f64 values row by row.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;

const MAGIC: &[u8; 4] = b"QVPF";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for PhaseGrid {
    fn default() -> Self {
        Self { x_min: -4.0, x_max: 4.0, y_min: -4.0, y_max: 4.0, nx: 161, ny: 161 }
    }
}

impl PhaseGrid {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        let g = Self { x_min, x_max, y_min, y_max, nx, ny };
        g.validate()?;
        Ok(g)
    }

    pub fn square(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, -half_width, half_width, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::param("grid", format!("need finite x_min < x_max and y_min < y_max, got {self:?}")));
        }
        if self.nx < 16 || self.ny < 16 {
            return Err(Error::param("grid", format!("need nx, ny >= 16, got {}x{}", self.nx, self.ny)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y_min + i as f64 * self.dy()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|i| self.y(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Wigner,
    Husimi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub grid: PhaseGrid,
    pub kind: FieldKind,
    /// Shape `(ny, nx)`.
    pub values: Array2<f64>,
}

impl PhaseField {
    pub fn new(grid: PhaseGrid, kind: FieldKind, values: Array2<f64>) -> Result<Self> {
        grid.validate()?;
        if values.dim() != (grid.ny, grid.nx) {
            return Err(Error::DimensionMismatch(format!(
                "values {:?} vs grid (ny, nx) = ({}, {})",
                values.dim(),
                grid.ny,
                grid.nx
            )));
        }
        Ok(Self { grid, kind, values })
    }

    /// Riemann sum `Σ f Δx Δy`.
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.dx() * self.grid.dy()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ_y f(x, y) Δy` for every grid `x`.
    pub fn x_marginal(&self) -> Vec<f64> {
        let dy = self.grid.dy();
        (0..self.grid.nx).map(|j| self.values.column(j).sum() * dy).collect()
    }

    /// Mirror image under `x → −x` (grid must be symmetric in x).
    pub fn reflect_x(&self) -> Self {
        let mut values = self.values.clone();
        values.invert_axis(ndarray::Axis(1));
        Self { grid: self.grid, kind: self.kind, values }
    }

    /// Bilinear interpolation; clamps to the grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fx = ((x - g.x_min) / g.dx()).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((y - g.y_min) / g.dy()).clamp(0.0, (g.ny - 1) as f64);
        let (j0, i0) = (fx.floor() as usize, fy.floor() as usize);
        let (j1, i1) = ((j0 + 1).min(g.nx - 1), (i0 + 1).min(g.ny - 1));
        let (tx, ty) = (fx - j0 as f64, fy - i0 as f64);
        let v = &self.values;
        (1.0 - ty) * ((1.0 - tx) * v[[i0, j0]] + tx * v[[i0, j1]]) + ty * ((1.0 - tx) * v[[i1, j0]] + tx * v[[i1, j1]])
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "value"])?;
        for i in 0..self.grid.ny {
            for j in 0..self.grid.nx {
                w.serialize((self.grid.x(j), self.grid.y(i), self.values[[i, j]]))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv); the grid is
    /// recovered from the distinct coordinates.
    pub fn read_csv(path: impl AsRef<Path>, kind: FieldKind) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows: Vec<(f64, f64, f64)> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        let nx = rows.iter().take_while(|row| row.1 == rows[0].1).count();
        if nx == 0 || rows.len() % nx != 0 {
            return Err(Error::Config(format!("CSV with {} rows is not a full grid", rows.len())));
        }
        let ny = rows.len() / nx;
        let grid = PhaseGrid::new(rows[0].0, rows[nx - 1].0, rows[0].1, rows[rows.len() - 1].1, nx, ny)?;
        let values = Array2::from_shape_vec((ny, nx), rows.iter().map(|r| r.2).collect())
            .map_err(|e| Error::Config(e.to_string()))?;
        Self::new(grid, kind, values)
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[match self.kind {
            FieldKind::Wigner => 0,
            FieldKind::Husimi => 1,
        }])?;
        for v in [self.grid.x_min, self.grid.x_max, self.grid.y_min, self.grid.y_max] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.grid.nx as u64).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u64).to_le_bytes())?;
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic[..4] != MAGIC {
            return Err(Error::Config("not a phase-field file (bad magic)".into()));
        }
        let kind = match magic[4] {
            0 => FieldKind::Wigner,
            1 => FieldKind::Husimi,
            k => return Err(Error::Config(format!("unknown field kind byte {k}"))),
        };
        let mut buf = [0u8; 8];
        let mut f64s = [0.0; 4];
        for v in &mut f64s {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        r.read_exact(&mut buf)?;
        let nx = u64::from_le_bytes(buf) as usize;
        r.read_exact(&mut buf)?;
        let ny = u64::from_le_bytes(buf) as usize;
        let grid = PhaseGrid::new(f64s[0], f64s[1], f64s[2], f64s[3], nx, ny)?;
        let mut values = Vec::with_capacity(nx * ny);
        for _ in 0..nx * ny {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Self::new(grid, kind, Array2::from_shape_vec((ny, nx), values).expect("sized"))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(f)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Normalization tolerance on `∫∫ field dx dy`.
pub const NORMALIZATION_TOL: f64 = 0.02;

fn single_mode(rho: &DensityMatrix) -> Result<ArrayView2<'_, C64>> {
    if rho.subsystem_dims().len() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "phase-space functions need a single oscillator, got subsystems {:?}; take a partial trace first",
            rho.subsystem_dims()
        )));
    }
    Ok(rho.view())
}

fn check_normalization(field: PhaseField) -> Result<PhaseField> {
    let norm = field.integral();
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Normalization {
            norm,
            tol: NORMALIZATION_TOL,
            hint: "the grid does not cover the state or the Fock cutoff is too small; widen the grid or raise n_max",
        });
    }
    Ok(field)
}

fn evaluate(grid: &PhaseGrid, f: impl Fn(C64) -> f64 + Sync) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = (0..grid.ny)
        .into_par_iter()
        .map(|i| (0..grid.nx).map(|j| f(C64::new(grid.x(j), grid.y(i)))).collect())
        .collect();
    Array2::from_shape_vec((grid.ny, grid.nx), rows.into_iter().flatten().collect()).expect("grid shape")
}

/// Wigner function at one phase-space point, by the Laguerre recurrence
/// over matrix elements.
pub fn wigner_at(rho: &ArrayView2<C64>, alpha: C64) -> f64 {
    let d = rho.nrows();
    let sq: Vec<f64> = (0..d).map(|n| (n as f64).sqrt()).collect();
    let mut wl = vec![C64::new(0.0, 0.0); d];
    wl[0] = C64::new((-2.0 * alpha.norm_sqr()).exp() / PI, 0.0);
    let mut w = rho[[0, 0]].re * wl[0].re;
    for n in 1..d {
        wl[n] = wl[n - 1] * alpha * 2.0 / sq[n];
        w += 2.0 * (rho[[0, n]] * wl[n]).re;
    }
    for m in 1..d {
        let mut temp = wl[m];
        wl[m] = (alpha.conj() * 2.0 * temp - wl[m - 1] * sq[m]) / sq[m];
        w += (rho[[m, m]] * wl[m]).re;
        for n in (m + 1)..d {
            let next = (alpha * 2.0 * wl[n - 1] - temp * sq[m]) / sq[n];
            temp = wl[n];
            wl[n] = next;
            w += 2.0 * (rho[[m, n]] * wl[n]).re;
        }
    }
    2.0 * w
}

/// Wigner function on `grid`; fails if the grid misses part of the state.
pub fn wigner(rho: &DensityMatrix, grid: &PhaseGrid) -> Result<PhaseField> {
    grid.validate()?;
    let m = single_mode(rho)?;
    let values = evaluate(grid, |alpha| wigner_at(&m, alpha));
    check_normalization(PhaseField { grid: *grid, kind: FieldKind::Wigner, values })
}

/// `Q(α) = ⟨α|ρ|α⟩/π`.
pub fn husimi_at(rho: &ArrayView2<C64>, alpha: C64) -> f64 {
    let d = rho.nrows();
    let mut c = vec![C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0); d];
    for n in 1..d {
        c[n] = c[n - 1] * alpha / (n as f64).sqrt();
    }
    let mut q = C64::new(0.0, 0.0);
    for m in 0..d {
        let row: C64 = (0..d).map(|n| rho[[m, n]] * c[n]).sum();
        q += c[m].conj() * row;
    }
    q.re / PI
}

pub fn husimi(rho: &DensityMatrix, grid: &PhaseGrid) -> Result<PhaseField> {
    grid.validate()?;
    let m = single_mode(rho)?;
    let values = evaluate(grid, |alpha| husimi_at(&m, alpha));
    check_normalization(PhaseField { grid: *grid, kind: FieldKind::Husimi, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maximum {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

/// Grid points strictly above all eight neighbours and at least
/// `rel_threshold` times the global maximum. Border points are skipped.
/// A flat or non-positive field yields no maxima.
pub fn find_local_maxima(field: &PhaseField, rel_threshold: f64) -> Result<Vec<Maximum>> {
    Ok(local_maxima_indices(field, rel_threshold)?
        .into_iter()
        .map(|(i, j)| Maximum { x: field.grid.x(j), y: field.grid.y(i), value: field.values[[i, j]] })
        .collect())
}

fn local_maxima_indices(field: &PhaseField, rel_threshold: f64) -> Result<Vec<(usize, usize)>> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::param("rel_threshold", format!("must lie in (0, 1), got {rel_threshold}")));
    }
    let global = field.max();
    if !(global > 0.0) {
        return Ok(Vec::new());
    }
    let v = &field.values;
    let (ny, nx) = v.dim();
    let mut out = Vec::new();
    for i in 1..ny - 1 {
        for j in 1..nx - 1 {
            let c = v[[i, j]];
            if c < rel_threshold * global {
                continue;
            }
            let is_max = (-1isize..=1).all(|di| {
                (-1isize..=1).all(|dj| {
                    (di == 0 && dj == 0) || c > v[[(i as isize + di) as usize, (j as isize + dj) as usize]]
                })
            });
            if is_max {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "Osc")]
    Osc,
    #[serde(rename = "QAD")]
    Qad,
    #[serde(rename = "QOD")]
    Qod,
    #[serde(rename = "unknown")]
    Unknown,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Osc => "Osc",
            Classification::Qad => "QAD",
            Classification::Qod => "QOD",
            Classification::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    pub rel_threshold: f64,
    pub y_tol: f64,
    /// Maxima closer to the origin than this do not count as ridge maxima.
    pub ring_min_radius: f64,
    pub ring_min_count: usize,
    /// Ridge maxima must cover more than this many degrees of angle.
    pub ring_min_coverage_deg: f64,
    /// Two maxima belong to one lobe when the field along the segment
    /// joining them never drops more than this fraction below the lower one.
    pub lobe_dip: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            rel_threshold: 0.5,
            y_tol: 0.15,
            ring_min_radius: 0.5,
            ring_min_count: 3,
            ring_min_coverage_deg: 180.0,
            lobe_dip: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeReport {
    /// Ridge maxima for Osc, otherwise one representative per lobe.
    pub maxima: Vec<Maximum>,
    pub delta_y: f64,
    pub classification: Classification,
    /// Number of raw grid maxima before lobe merging.
    pub raw_maxima: usize,
}

fn y_range(maxima: &[Maximum]) -> f64 {
    let lo = maxima.iter().map(|m| m.y).fold(f64::INFINITY, f64::min);
    let hi = maxima.iter().map(|m| m.y).fold(f64::NEG_INFINITY, f64::max);
    if maxima.len() < 2 {
        0.0
    } else {
        hi - lo
    }
}

/// Angle covered by points on a circle: 360° minus the widest empty gap.
fn angular_coverage_deg(maxima: &[Maximum]) -> f64 {
    if maxima.len() < 2 {
        return 0.0;
    }
    let mut angles: Vec<f64> = maxima.iter().map(|m| m.y.atan2(m.x).to_degrees().rem_euclid(360.0)).collect();
    angles.sort_by(f64::total_cmp);
    let mut widest = 360.0 - (angles[angles.len() - 1] - angles[0]);
    for w in angles.windows(2) {
        widest = f64::max(widest, w[1] - w[0]);
    }
    360.0 - widest
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

fn group_lobes(field: &PhaseField, maxima: &[Maximum], dip: f64) -> Vec<Maximum> {
    let n = maxima.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let step = field.grid.dx().min(field.grid.dy()) * 0.5;
    for a in 0..n {
        for b in (a + 1)..n {
            let (p, q) = (maxima[a], maxima[b]);
            let len = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt();
            let samples = ((len / step).ceil() as usize).max(2);
            let floor = (1.0 - dip) * p.value.min(q.value);
            let connected = (1..samples).all(|k| {
                let t = k as f64 / samples as f64;
                field.sample(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)) >= floor
            });
            if connected {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut lobes: Vec<(usize, Vec<Maximum>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match lobes.iter_mut().find(|(root, _)| *root == r) {
            Some((_, members)) => members.push(maxima[i]),
            None => lobes.push((r, vec![maxima[i]])),
        }
    }
    lobes
        .into_iter()
        .map(|(_, members)| {
            let total: f64 = members.iter().map(|m| m.value).sum();
            Maximum {
                x: members.iter().map(|m| m.x * m.value).sum::<f64>() / total,
                y: members.iter().map(|m| m.y * m.value).sum::<f64>() / total,
                value: members.iter().map(|m| m.value).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

pub fn classify(field: &PhaseField) -> Result<LobeReport> {
    classify_with(field, &ClassifyOptions::default())
}

/// Osc when ridge maxima wrap more than half way around the origin; else
/// maxima are merged into lobes and a single centred lobe is QAD, while
/// lobes mirrored about `y = 0` and more than `2·y_tol` apart are QOD.
/// Anything else is `Unknown`.
pub fn classify_with(field: &PhaseField, opts: &ClassifyOptions) -> Result<LobeReport> {
    if field.kind != FieldKind::Wigner {
        return Err(Error::param("field", "classification is defined on Wigner fields"));
    }
    let raw = find_local_maxima(field, opts.rel_threshold)?;
    let raw_maxima = raw.len();
    let ridge: Vec<Maximum> =
        raw.iter().copied().filter(|m| m.x.hypot(m.y) >= opts.ring_min_radius).collect();
    if ridge.len() >= opts.ring_min_count && angular_coverage_deg(&ridge) > opts.ring_min_coverage_deg {
        return Ok(LobeReport { delta_y: y_range(&ridge), maxima: ridge, classification: Classification::Osc, raw_maxima });
    }
    let lobes = group_lobes(field, &raw, opts.lobe_dip);
    let classification = match lobes.len() {
        0 => Classification::Unknown,
        1 if lobes[0].y.abs() < opts.y_tol => Classification::Qad,
        1 => Classification::Unknown,
        _ => {
            let mirrored = lobes.iter().all(|l| {
                l.y.abs() > opts.y_tol && lobes.iter().any(|o| (o.y + l.y).abs() < opts.y_tol)
            });
            if mirrored && y_range(&lobes) > 2.0 * opts.y_tol {
                Classification::Qod
            } else {
                Classification::Unknown
            }
        }
    };
    let delta_y = if classification == Classification::Qad { 0.0 } else { y_range(&lobes) };
    Ok(LobeReport { maxima: lobes, delta_y, classification, raw_maxima })
}

/// Means and symmetrized covariance of the quadratures `x`, `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureStats {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

pub fn quadrature_stats(rho: &DensityMatrix) -> Result<QuadratureStats> {
    let m = single_mode(rho)?;
    let d = m.nrows();
    // ⟨a⟩, ⟨a²⟩, ⟨a†a⟩ from matrix elements
    let mut a = C64::new(0.0, 0.0);
    let mut a2 = C64::new(0.0, 0.0);
    let mut n = 0.0;
    for k in 1..d {
        a += m[[k, k - 1]] * (k as f64).sqrt();
        n += m[[k, k]].re * k as f64;
        if k >= 2 {
            a2 += m[[k, k - 2]] * ((k * (k - 1)) as f64).sqrt();
        }
    }
    // ⟨a a†⟩ = ⟨a†a⟩ + 1 except at the truncation edge
    let aad = n + 1.0 - m[[d - 1, d - 1]].re * d as f64;
    let mean = [a.re, a.im];
    // x² = (a² + a†² + a a† + a†a)/4 ; y² = −(a² + a†² − a a† − a†a)/4 ; {x,y}/2 = Im⟨a²⟩/2
    let xx = (2.0 * a2.re + aad + n) / 4.0 - mean[0] * mean[0];
    let yy = (-2.0 * a2.re + aad + n) / 4.0 - mean[1] * mean[1];
    let xy = a2.im / 2.0 - mean[0] * mean[1];
    Ok(QuadratureStats { mean, cov: [[xx, xy], [xy, yy]] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Squeezing {
    /// Minor-axis direction in `[0, π)`; `None` when the covariance is isotropic.
    pub angle: Option<f64>,
    pub minor_variance: f64,
    pub major_variance: f64,
    /// `(λ_max − λ_min) / (λ_max + λ_min)`.
    pub anisotropy: f64,
}

pub const ISOTROPY_GAP: f64 = 1e-6;

pub fn squeezing(rho: &DensityMatrix) -> Result<Squeezing> {
    let QuadratureStats { cov, .. } = quadrature_stats(rho)?;
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    let half_trace = 0.5 * (a + c);
    let radius = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (lo, hi) = (half_trace - radius, half_trace + radius);
    // major axis at ½ atan2(2b, a − c); the minor axis is perpendicular
    let angle = (hi - lo >= ISOTROPY_GAP).then(|| (0.5 * (2.0 * b).atan2(a - c) + 0.5 * PI).rem_euclid(PI));
    Ok(Squeezing { angle, minor_variance: lo, major_variance: hi, anisotropy: (hi - lo) / (hi + lo) })
}

pub fn squeezing_angle(rho: &DensityMatrix) -> Result<Option<f64>> {
    Ok(squeezing(rho)?.angle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockCutoff;
    use crate::lindblad::{self, SystemSpec, VdpParams};
    use proptest::prelude::*;

    fn cut(n: usize) -> FockCutoff {
        FockCutoff::new(n).unwrap()
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Generalized Laguerre `L_n^{(k)}(x)` by its explicit sum.
    fn laguerre(n: usize, k: usize, x: f64) -> f64 {
        (0..=n)
            .map(|i| {
                let binom = factorial(n + k) / (factorial(n - i) * factorial(k + i));
                (-1f64).powi(i as i32) * binom * x.powi(i as i32) / factorial(i)
            })
            .sum()
    }

    /// Closed-form Fock-basis Wigner kernel.
    fn wigner_laguerre(rho: &ArrayView2<C64>, alpha: C64) -> f64 {
        let d = rho.nrows();
        let r2 = 4.0 * alpha.norm_sqr();
        let g = (-2.0 * alpha.norm_sqr()).exp() * 2.0 / PI;
        let mut w = 0.0;
        for m in 0..d {
            w += rho[[m, m]].re * (-1f64).powi(m as i32) * laguerre(m, 0, r2) * g;
            for n in (m + 1)..d {
                let k = n - m;
                let term = (-1f64).powi(m as i32)
                    * (factorial(m) / factorial(n)).sqrt()
                    * laguerre(m, k, r2)
                    * g
                    * rho[[m, n]]
                    * (alpha * 2.0).powi(k as i32);
                w += 2.0 * term.re;
            }
        }
        w
    }

    fn random_state(d: usize, seed: u64) -> DensityMatrix {
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s as f64 / u64::MAX as f64) - 0.5
        };
        let g = Array2::from_shape_fn((d, d), |_| C64::new(next(), next()));
        let m = g.dot(&crate::linalg::adjoint(&g.view()));
        DensityMatrix::from_approximate(m, vec![d]).unwrap()
    }

    #[test]
    fn recurrence_matches_laguerre_kernel() {
        let rho = random_state(9, 42);
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.7), (-1.2, 0.4), (1.9, 1.1), (-0.05, -2.3)] {
            let a = C64::new(x, y);
            let fast = wigner_at(&rho.view(), a);
            let slow = wigner_laguerre(&rho.view(), a);
            assert!((fast - slow).abs() < 1e-12, "{x},{y}: {fast} vs {slow}");
        }
    }

    #[test]
    fn vacuum_and_fock_values() {
        let vac = DensityMatrix::fock(cut(6), 0).unwrap();
        assert!((wigner_at(&vac.view(), C64::new(0.0, 0.0)) - 2.0 / PI).abs() < 1e-14);
        assert!((husimi_at(&vac.view(), C64::new(0.0, 0.0)) - 1.0 / PI).abs() < 1e-14);
        let one = DensityMatrix::fock(cut(6), 1).unwrap();
        assert!(wigner_at(&one.view(), C64::new(0.0, 0.0)) < 0.0);
        let w = wigner(&vac, &PhaseGrid::default()).unwrap();
        assert!((w.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherent_state_wigner_is_displaced_gaussian() {
        let beta = C64::new(0.8, -0.5);
        let rho = DensityMatrix::coherent(beta, cut(20), 1e-12).unwrap();
        for &(x, y) in &[(0.8, -0.5), (0.0, 0.0), (1.3, 0.2)] {
            let a = C64::new(x, y);
            let expect = 2.0 / PI * (-2.0 * (a - beta).norm_sqr()).exp();
            assert!((wigner_at(&rho.view(), a) - expect).abs() < 1e-9);
        }
    }

    /// `ψ_n(q)` for the standard oscillator (`q = (a + a†)/√2`).
    fn hermite_function(n: usize, q: f64) -> f64 {
        let (mut h0, mut h1) = (1.0, 2.0 * q);
        let h = match n {
            0 => h0,
            _ => {
                for k in 1..n {
                    let h2 = 2.0 * q * h1 - 2.0 * k as f64 * h0;
                    h0 = h1;
                    h1 = h2;
                }
                h1
            }
        };
        h * (-q * q / 2.0).exp() / (2f64.powi(n as i32) * factorial(n) * PI.sqrt()).sqrt()
    }

    #[test]
    fn x_marginal_matches_position_density() {
        let grid = PhaseGrid::default();
        for n in [0, 1] {
            let rho = DensityMatrix::fock(cut(6), n).unwrap();
            let marginal = wigner(&rho, &grid).unwrap().x_marginal();
            let peak = marginal.iter().copied().fold(0.0, f64::max);
            for (j, p) in marginal.iter().enumerate() {
                let x = grid.x(j);
                let exact = 2f64.sqrt() * hermite_function(n, 2f64.sqrt() * x).powi(2);
                assert!((p - exact).abs() < 0.03 * peak, "n={n} x={x}: {p} vs {exact}");
            }
        }
    }

    #[test]
    fn husimi_peaks_at_coherent_amplitude() {
        let beta = C64::new(1.25, -0.75);
        let rho = DensityMatrix::coherent(beta, cut(25), 1e-12).unwrap();
        let grid = PhaseGrid::default();
        let q = husimi(&rho, &grid).unwrap();
        let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
        for ((i, j), v) in q.values.indexed_iter() {
            if *v > best {
                best = *v;
                at = (i, j);
            }
        }
        assert!((grid.x(at.1) - 1.25).abs() < 1e-9 && (grid.y(at.0) + 0.75).abs() < 1e-9);
    }

    #[test]
    fn truncation_is_reported_through_normalization() {
        let rho = DensityMatrix::coherent(C64::new(3.0, 0.0), cut(40), 1e-10).unwrap();
        let narrow = PhaseGrid::square(1.5, 61).unwrap();
        assert!(matches!(wigner(&rho, &narrow), Err(Error::Normalization { .. })));
    }

    #[test]
    fn grid_validation() {
        assert!(PhaseGrid::new(1.0, -1.0, -1.0, 1.0, 20, 20).is_err());
        assert!(PhaseGrid::new(-1.0, 1.0, -1.0, 1.0, 15, 20).is_err());
        let pair = DensityMatrix::product(&[DensityMatrix::fock(cut(2), 0).unwrap(), DensityMatrix::fock(cut(2), 0).unwrap()])
            .unwrap();
        assert!(wigner(&pair, &PhaseGrid::default()).is_err());
    }

    fn gaussian_field(centres: &[(f64, f64)], width: f64) -> PhaseField {
        let grid = PhaseGrid::default();
        let values = Array2::from_shape_fn((grid.ny, grid.nx), |(i, j)| {
            centres.iter().map(|(cx, cy)| (-((grid.x(j) - cx).powi(2) + (grid.y(i) - cy).powi(2)) / width).exp()).sum()
        });
        PhaseField::new(grid, FieldKind::Wigner, values).unwrap()
    }

    #[test]
    fn maxima_of_constructed_fields() {
        let one = gaussian_field(&[(0.3, -0.2)], 0.5);
        assert_eq!(find_local_maxima(&one, 0.5).unwrap().len(), 1);
        let two = gaussian_field(&[(0.0, 2.0), (0.0, -2.0)], 0.5);
        let m = find_local_maxima(&two, 0.5).unwrap();
        assert_eq!(m.len(), 2);
        assert!((y_range(&m) - 4.0).abs() < 1e-9);
        let report = classify(&two).unwrap();
        assert_eq!(report.classification, Classification::Qod);
        assert!((report.delta_y - 4.0).abs() < 0.05);
        let flat = PhaseField::new(PhaseGrid::default(), FieldKind::Wigner, Array2::zeros((161, 161))).unwrap();
        assert!(find_local_maxima(&flat, 0.5).unwrap().is_empty());
        assert_eq!(classify(&flat).unwrap().classification, Classification::Unknown);
        assert!(find_local_maxima(&one, 1.0).is_err());
    }

    #[test]
    fn single_centred_lobe_is_amplitude_death() {
        let report = classify(&gaussian_field(&[(0.0, 0.0)], 0.7)).unwrap();
        assert_eq!(report.classification, Classification::Qad);
        assert_eq!(report.delta_y, 0.0);
        // a flat-topped bump with four shallow satellite maxima merges into one lobe
        let twin = gaussian_field(&[(0.15, 0.15), (-0.15, 0.15), (0.15, -0.15), (-0.15, -0.15)], 1.5);
        let report = classify(&twin).unwrap();
        assert_eq!(report.classification, Classification::Qad);
        assert_eq!(report.delta_y, 0.0);
    }

    #[test]
    fn free_oscillator_is_a_ring() {
        let spec = SystemSpec::single(VdpParams::default(), cut(20));
        let rho = lindblad::steady_state(&lindblad::build_liouvillian(&spec).unwrap()).unwrap().rho;
        let w = wigner(&rho, &PhaseGrid::default()).unwrap();
        let report = classify(&w).unwrap();
        assert_eq!(report.classification, Classification::Osc);
        // rotational symmetry: W on the ridge circle varies by < 2%
        let radial: Vec<(f64, f64)> =
            (0..400).map(|k| k as f64 * 0.01).map(|r| (r, wigner_at(&rho.view(), C64::new(r, 0.0)))).collect();
        let (r_peak, w_peak) = radial.iter().copied().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        for k in 0..72 {
            let th = k as f64 * 5f64.to_radians();
            let v = wigner_at(&rho.view(), C64::from_polar(r_peak, th));
            assert!((v - w_peak).abs() < 0.02 * w_peak);
        }
        // ridge maxima span the ring diameter up to one grid step
        assert!((report.delta_y - 2.0 * r_peak).abs() < 2.0 * w.grid.dy());
        assert_eq!(squeezing_angle(&rho).unwrap(), None);
    }

    #[test]
    fn rotated_squeezed_vacuum_angle() {
        // |ζ⟩ with c_{2m} = (−tanh r)^m √((2m)!)/(2^m m!) / √cosh r squeezes x;
        // multiplying c_n by e^{inφ} rotates phase space by φ.
        let r: f64 = 0.6;
        let n_max = 40;
        for &phi in &[0.0, 0.4, 1.2, 2.9] {
            let amps: Vec<C64> = (0..=n_max)
                .map(|n| {
                    if n % 2 == 1 {
                        return C64::new(0.0, 0.0);
                    }
                    let m = n / 2;
                    let mag = (-r.tanh()).powi(m as i32) * factorial(n).sqrt() / (2f64.powi(m as i32) * factorial(m))
                        / r.cosh().sqrt();
                    C64::from_polar(1.0, n as f64 * phi) * mag
                })
                .collect();
            let rho = DensityMatrix::pure(&amps, vec![n_max + 1]).unwrap();
            let s = squeezing(&rho).unwrap();
            let angle = s.angle.unwrap();
            let diff = (angle - phi).rem_euclid(PI);
            assert!(diff.min(PI - diff) < 0.02, "phi={phi} angle={angle}");
            assert!((s.minor_variance - 0.25 * (-2.0 * r).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn serialization_round_trips() {
        let field = gaussian_field(&[(0.5, 1.0)], 0.8);
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("f.bin");
        field.save_binary(&bin).unwrap();
        assert_eq!(PhaseField::load_binary(&bin).unwrap(), field);
        let csv = dir.path().join("f.csv");
        field.write_csv(&csv).unwrap();
        let back = PhaseField::read_csv(&csv, FieldKind::Wigner).unwrap();
        assert_eq!(back.values, field.values);
        assert!((back.grid.x_max - 4.0).abs() < 1e-12 && back.grid.nx == 161);
        let mut bad = Vec::new();
        field.write_binary(&mut bad).unwrap();
        bad[0] = b'X';
        assert!(PhaseField::read_binary(bad.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn husimi_is_nonnegative(seed in any::<u64>()) {
            let rho = random_state(6, seed);
            let grid = PhaseGrid::square(4.0, 41).unwrap();
            let q = husimi(&rho, &grid).unwrap();
            prop_assert!(q.min() >= -1e-12);
        }

        #[test]
        fn classification_ignores_x_reflection(
            cx in -1.5f64..1.5, cy in 0.3f64..2.5, width in 0.2f64..1.2, skew in 0.5f64..1.0,
        ) {
            let grid = PhaseGrid::default();
            let values = Array2::from_shape_fn((grid.ny, grid.nx), |(i, j)| {
                let (x, y) = (grid.x(j), grid.y(i));
                (-((x - cx).powi(2) + (y - cy).powi(2)) / width).exp()
                    + skew * (-((x + 0.5 * cx).powi(2) + (y + cy).powi(2)) / width).exp()
            });
            let field = PhaseField::new(grid, FieldKind::Wigner, values).unwrap();
            let a = classify(&field).unwrap();
            let b = classify(&field.reflect_x()).unwrap();
            prop_assert_eq!(a.classification, b.classification);
            prop_assert!((a.delta_y - b.delta_y).abs() < 1e-9);
        }
    }
}
