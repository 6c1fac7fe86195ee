//! Gridded surface wind from station observations.
//!
//! Station readings are perturbed to represent meteorological data error,
//! interpolated onto a regular grid by inverse-distance-squared weighting of
//! their (u, v) components, then nudged toward zero horizontal divergence by
//! point-Jacobi relaxation on a velocity-potential correction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_degrees, Point2, Point3, Velocity};

/// One station's wind reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindObservation {
    pub station_id: String,
    pub position: Point3,
    /// Seconds since trial start.
    pub time: f64,
    /// m/s
    pub speed: f64,
    /// Degrees the wind blows from, clockwise from north, in [0, 360).
    pub direction: f64,
}

impl WindObservation {
    pub fn velocity(&self) -> Velocity {
        Velocity::from_speed_direction(self.speed, self.direction)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return Err(Error::invalid(
                "wind observation",
                format!("station {}: speed {} must be >= 0", self.station_id, self.speed),
            ));
        }
        if !(self.direction.is_finite() && (0.0..360.0).contains(&self.direction)) {
            return Err(Error::invalid(
                "wind observation",
                format!(
                    "station {}: direction {} outside [0, 360)",
                    self.station_id, self.direction
                ),
            ));
        }
        if !grid.contains(self.position.xy()) {
            return Err(Error::invalid(
                "wind observation",
                format!(
                    "station {} at ({}, {}) lies outside the domain",
                    self.station_id, self.position.x, self.position.y
                ),
            ));
        }
        Ok(())
    }
}

/// Standard deviations of the wind data error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindPerturbationSpec {
    #[serde(rename = "speed_sigma_ms")]
    pub speed_sigma: f64,
    #[serde(rename = "direction_sigma_deg")]
    pub direction_sigma: f64,
}

impl WindPerturbationSpec {
    pub const NONE: WindPerturbationSpec = WindPerturbationSpec {
        speed_sigma: 0.0,
        direction_sigma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("speed_sigma", self.speed_sigma),
            ("direction_sigma", self.direction_sigma),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(
                    "perturbation spec",
                    format!("{name} = {value} must be finite and >= 0"),
                ));
            }
        }
        Ok(())
    }
}

impl Default for WindPerturbationSpec {
    fn default() -> Self {
        Self {
            speed_sigma: 0.5,
            direction_sigma: 5.0,
        }
    }
}

/// Draws one independent realization of every observation.
///
/// Speed draws that go negative are clamped to zero; directions wrap.
pub fn perturb_observations<R: Rng + ?Sized>(
    obs: &[WindObservation],
    spec: &WindPerturbationSpec,
    rng: &mut R,
) -> Result<Vec<WindObservation>> {
    spec.validate()?;
    if obs.is_empty() {
        return Err(Error::NoWindData);
    }
    Ok(obs
        .iter()
        .map(|o| {
            let ds: f64 = rng.sample(StandardNormal);
            let dd: f64 = rng.sample(StandardNormal);
            WindObservation {
                speed: (o.speed + spec.speed_sigma * ds).max(0.0),
                direction: normalize_degrees(o.direction + spec.direction_sigma * dd),
                ..o.clone()
            }
        })
        .collect())
}

/// Regular horizontal grid. Node (i, j) sits at `origin + (i, j) * cell_size`,
/// so the domain spans `(nx - 1) * cell_size` by `(ny - 1) * cell_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "origin_x_m")]
    pub origin_x: f64,
    #[serde(rename = "origin_y_m")]
    pub origin_y: f64,
    #[serde(rename = "cell_size_m")]
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid(
                "grid",
                format!("need nx, ny >= 2, got {} x {}", self.nx, self.ny),
            ));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::invalid(
                "grid",
                format!("cell size {} must be > 0", self.cell_size),
            ));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::invalid("grid", "origin must be finite"));
        }
        Ok(())
    }

    pub fn node(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin_x + i as f64 * self.cell_size,
            self.origin_y + j as f64 * self.cell_size,
        )
    }

    pub fn max_x(&self) -> f64 {
        self.origin_x + (self.nx - 1) as f64 * self.cell_size
    }

    pub fn max_y(&self) -> f64 {
        self.origin_y + (self.ny - 1) as f64 * self.cell_size
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.origin_x && p.x <= self.max_x() && p.y >= self.origin_y && p.y <= self.max_y()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

/// Horizontal wind on a [`GridSpec`] at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct WindGrid {
    pub spec: GridSpec,
    pub valid_time: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl WindGrid {
    pub fn uniform(spec: GridSpec, velocity: Velocity, valid_time: f64) -> Self {
        Self {
            spec,
            valid_time,
            u: vec![velocity.u; spec.len()],
            v: vec![velocity.v; spec.len()],
        }
    }

    /// Builds a grid from a per-node function.
    pub fn from_fn(spec: GridSpec, valid_time: f64, f: impl Fn(Point2) -> Velocity) -> Self {
        let mut grid = Self::uniform(spec, Velocity::ZERO, valid_time);
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let w = f(spec.node(i, j));
                let k = spec.index(i, j);
                grid.u[k] = w.u;
                grid.v[k] = w.v;
            }
        }
        grid
    }

    pub fn at(&self, i: usize, j: usize) -> Velocity {
        let k = self.spec.index(i, j);
        Velocity::new(self.u[k], self.v[k])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Central-difference divergence at interior nodes, row-major over
    /// `(1..nx-1) x (1..ny-1)`.
    pub fn divergence(&self) -> Vec<f64> {
        let s = &self.spec;
        let h2 = 2.0 * s.cell_size;
        let mut out = Vec::with_capacity((s.nx - 2) * (s.ny - 2));
        for j in 1..s.ny.saturating_sub(1) {
            for i in 1..s.nx.saturating_sub(1) {
                let dudx = (self.u[s.index(i + 1, j)] - self.u[s.index(i - 1, j)]) / h2;
                let dvdy = (self.v[s.index(i, j + 1)] - self.v[s.index(i, j - 1)]) / h2;
                out.push(dudx + dvdy);
            }
        }
        out
    }

    /// L2 norm of [`divergence`](Self::divergence).
    pub fn divergence_norm(&self) -> f64 {
        self.divergence().iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// L2 distance between the velocity components of two grids of equal shape.
    pub fn distance(&self, other: &WindGrid) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .chain(self.v.iter().zip(&other.v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Inverse-distance-squared interpolation of station (u, v) onto the grid.
///
/// A node closer than half a cell to a station copies that station's vector.
/// The grid's valid time is the latest observation time.
pub fn interpolate_field(obs: &[WindObservation], spec: &GridSpec) -> Result<WindGrid> {
    if obs.is_empty() {
        return Err(Error::NoWindData);
    }
    spec.validate()?;
    let stations: Vec<(Point2, Velocity)> = obs.iter().map(|o| (o.position.xy(), o.velocity())).collect();
    let snap = 0.5 * spec.cell_size;
    let valid_time = obs.iter().map(|o| o.time).fold(f64::NEG_INFINITY, f64::max);

    Ok(WindGrid::from_fn(*spec, valid_time, |node| {
        let mut nearest: Option<(f64, Velocity)> = None;
        let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
        for &(p, vel) in &stations {
            let d = node.distance(p);
            if d < snap {
                if nearest.is_none_or(|(best, _)| d < best) {
                    nearest = Some((d, vel));
                }
                continue;
            }
            let w = 1.0 / (d * d);
            su += w * vel.u;
            sv += w * vel.v;
            sw += w;
        }
        match nearest {
            Some((_, vel)) => vel,
            None => Velocity::new(su / sw, sv / sw),
        }
    }))
}

/// Diagnostics from [`adjust_mass_consistency`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassConsistencyReport {
    pub divergence_before: f64,
    pub divergence_after: f64,
    /// L2 distance between the adjusted and the initial field.
    pub distance_from_initial: f64,
}

/// Reduces the discrete divergence of `grid` by relaxing a velocity
/// potential correction.
///
/// Each sweep solves one Jacobi step of `B G phi = -D` with `D` the interior
/// divergence, `G` the central-difference gradient and `B = -G^T` the
/// divergence operator, then applies `u -= G phi`. The iteration matrix on
/// the divergence residual is `I - relaxation * h^2 G^T G`, whose spectrum
/// lies in `[-1, 1]` for `relaxation` in `(0, 1]`, so the divergence norm
/// never increases.
pub fn adjust_mass_consistency(
    grid: &WindGrid,
    iterations: usize,
    relaxation: f64,
) -> Result<(WindGrid, MassConsistencyReport)> {
    if !(relaxation > 0.0 && relaxation <= 1.0) {
        return Err(Error::invalid(
            "mass consistency",
            format!("relaxation {relaxation} must lie in (0, 1]"),
        ));
    }
    let s = grid.spec;
    let before = grid.divergence_norm();
    let mut out = grid.clone();
    if s.nx >= 3 && s.ny >= 3 {
        let half_step = 0.5 * relaxation * s.cell_size;
        let (inx, iny) = (s.nx - 2, s.ny - 2);
        for _ in 0..iterations {
            let div = out.divergence();
            // D padded with zeros outside the interior
            let d = |i: usize, j: usize| -> f64 {
                if i == 0 || j == 0 || i > inx || j > iny {
                    0.0
                } else {
                    div[(j - 1) * inx + (i - 1)]
                }
            };
            for j in 0..s.ny {
                for i in 0..s.nx {
                    let k = s.index(i, j);
                    let dx = d(i + 1, j) - if i > 0 { d(i - 1, j) } else { 0.0 };
                    let dy = d(i, j + 1) - if j > 0 { d(i, j - 1) } else { 0.0 };
                    out.u[k] += half_step * dx;
                    out.v[k] += half_step * dy;
                }
            }
        }
    }
    let report = MassConsistencyReport {
        divergence_before: before,
        divergence_after: out.divergence_norm(),
        distance_from_initial: out.distance(grid),
    };
    Ok((out, report))
}

/// Result of a point lookup; `clamped` is set when the query fell outside
/// the grid and was moved to the nearest boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindSample {
    pub velocity: Velocity,
    pub clamped: bool,
}

/// Bilinear interpolation between grid nodes.
pub fn sample_wind_at(grid: &WindGrid, position: Point2) -> WindSample {
    let s = &grid.spec;
    let fx = (position.x - s.origin_x) / s.cell_size;
    let fy = (position.y - s.origin_y) / s.cell_size;
    let (mx, my) = ((s.nx - 1) as f64, (s.ny - 1) as f64);
    let clamped = !(0.0..=mx).contains(&fx) || !(0.0..=my).contains(&fy);
    let fx = fx.clamp(0.0, mx);
    let fy = fy.clamp(0.0, my);
    let i0 = (fx.floor() as usize).min(s.nx - 2);
    let j0 = (fy.floor() as usize).min(s.ny - 2);
    let tx = fx - i0 as f64;
    let ty = fy - j0 as f64;
    let lerp = |f: &[f64]| {
        let a = f[s.index(i0, j0)] * (1.0 - tx) + f[s.index(i0 + 1, j0)] * tx;
        let b = f[s.index(i0, j0 + 1)] * (1.0 - tx) + f[s.index(i0 + 1, j0 + 1)] * tx;
        a * (1.0 - ty) + b * ty
    };
    WindSample {
        velocity: Velocity::new(lerp(&grid.u), lerp(&grid.v)),
        clamped,
    }
}

/// Nominal station readings over a trial, held piecewise-constant between
/// observation epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSchedule {
    by_station: BTreeMap<String, Vec<WindObservation>>,
}

impl WindSchedule {
    pub fn new(obs: Vec<WindObservation>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::NoWindData);
        }
        let mut by_station: BTreeMap<String, Vec<WindObservation>> = BTreeMap::new();
        for o in obs {
            by_station.entry(o.station_id.clone()).or_default().push(o);
        }
        for series in by_station.values_mut() {
            series.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        Ok(Self { by_station })
    }

    /// For each station, its latest reading at or before `t`, or its first
    /// reading when `t` precedes all of them. Stations are in id order.
    pub fn observations_at(&self, t: f64) -> Vec<WindObservation> {
        self.by_station
            .values()
            .map(|series| {
                let idx = series.partition_point(|o| o.time <= t);
                series[idx.saturating_sub(1)].clone()
            })
            .collect()
    }

    pub fn all(&self) -> impl Iterator<Item = &WindObservation> {
        self.by_station.values().flatten()
    }

    pub fn station_count(&self) -> usize {
        self.by_station.len()
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.all().try_for_each(|o| o.validate(grid))
    }

    /// Applies `f` to every reading.
    pub fn map(&self, mut f: impl FnMut(&WindObservation) -> WindObservation) -> Self {
        let by_station = self
            .by_station
            .iter()
            .map(|(k, series)| (k.clone(), series.iter().map(&mut f).collect()))
            .collect();
        Self { by_station }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WindRow {
    station_id: String,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    time_s: f64,
    speed_ms: f64,
    dir_deg: f64,
}

/// Reads `station_id,x_m,y_m,z_m,time_s,speed_ms,dir_deg`.
pub fn read_wind_csv(path: &Path) -> Result<Vec<WindObservation>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for record in reader.deserialize::<WindRow>() {
        let row = record.map_err(|e| Error::Data {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        if !(row.speed_ms.is_finite() && row.speed_ms >= 0.0) {
            return Err(Error::Data {
                path: path.to_owned(),
                line,
                message: format!("speed {} must be >= 0", row.speed_ms),
            });
        }
        if !row.dir_deg.is_finite() {
            return Err(Error::Data {
                path: path.to_owned(),
                line,
                message: "direction must be finite".into(),
            });
        }
        out.push(WindObservation {
            station_id: row.station_id,
            position: Point3::new(row.x_m, row.y_m, row.z_m),
            time: row.time_s,
            speed: row.speed_ms,
            direction: normalize_degrees(row.dir_deg),
        });
    }
    if out.is_empty() {
        return Err(Error::NoWindData);
    }
    Ok(out)
}

pub fn write_wind_csv<'a>(path: &Path, obs: impl IntoIterator<Item = &'a WindObservation>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for o in obs {
        w.serialize(WindRow {
            station_id: o.station_id.clone(),
            x_m: o.position.x,
            y_m: o.position.y,
            z_m: o.position.z,
            time_s: o.time,
            speed_ms: o.speed,
            dir_deg: o.direction,
        })?;
    }
    w.flush()?;
    Ok(())
}
