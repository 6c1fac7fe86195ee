//! Gaussian puff transport, diffusion and receptor sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::windfield::{sample_wind_at, WindGrid};

/// An instantaneous point release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseSpec {
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    #[serde(rename = "x_m")]
    pub x: f64,
    #[serde(rename = "y_m")]
    pub y: f64,
    /// Release height above ground.
    #[serde(rename = "z_m")]
    pub z: f64,
    #[serde(rename = "start_s", default)]
    pub start_time: f64,
    #[serde(rename = "initial_sigma_m", default = "default_initial_sigma")]
    pub initial_sigma: f64,
}

fn default_initial_sigma() -> f64 {
    1.0
}

impl ReleaseSpec {
    pub fn position(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::invalid("release", format!("mass {} must be > 0", self.mass)));
        }
        if !(self.z.is_finite() && self.z >= 0.0) {
            return Err(Error::invalid("release", format!("height {} must be >= 0", self.z)));
        }
        if !(self.initial_sigma.is_finite() && self.initial_sigma > 0.0) {
            return Err(Error::invalid(
                "release",
                format!("initial sigma {} must be > 0", self.initial_sigma),
            ));
        }
        if !(self.x.is_finite() && self.y.is_finite() && self.start_time.is_finite()) {
            return Err(Error::invalid("release", "position and start time must be finite"));
        }
        Ok(())
    }
}

/// Fickian growth coefficients, `sigma^2 += a^2 dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    /// m s^-1/2
    pub horizontal_coeff: f64,
    /// m s^-1/2
    pub vertical_coeff: f64,
    /// Mixing-layer proxy, meters.
    #[serde(rename = "max_sigma_z_m")]
    pub max_sigma_z: f64,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        Self {
            horizontal_coeff: 1.5,
            vertical_coeff: 0.3,
            max_sigma_z: 500.0,
        }
    }
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("horizontal_coeff", self.horizontal_coeff),
            ("vertical_coeff", self.vertical_coeff),
            ("max_sigma_z", self.max_sigma_z),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid("diffusion", format!("{name} = {value} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Puff {
    /// kg
    pub mass: f64,
    pub centroid: Point3,
    pub sigma_h: f64,
    pub sigma_z: f64,
    /// Seconds since release.
    pub age: f64,
    /// Set once the centroid leaves the wind grid; such puffs stop moving and
    /// contribute nothing at receptors.
    pub off_domain: bool,
}

pub fn release(spec: &ReleaseSpec) -> Result<Puff> {
    spec.validate()?;
    Ok(Puff {
        mass: spec.mass,
        centroid: spec.position(),
        sigma_h: spec.initial_sigma,
        sigma_z: spec.initial_sigma,
        age: 0.0,
        off_domain: false,
    })
}

/// Advances a puff by one explicit Euler step through `grid` and grows its
/// sigmas.
pub fn advect_diffuse_step(puff: &Puff, grid: &WindGrid, diffusion: &DiffusionSpec, dt: f64) -> Result<Puff> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("time step", format!("dt {dt} must be > 0")));
    }
    let mut next = *puff;
    next.sigma_h = (puff.sigma_h.powi(2) + diffusion.horizontal_coeff.powi(2) * dt).sqrt();
    next.sigma_z = (puff.sigma_z.powi(2) + diffusion.vertical_coeff.powi(2) * dt)
        .sqrt()
        .min(diffusion.max_sigma_z)
        .max(puff.sigma_z);
    next.age += dt;
    if puff.off_domain {
        return Ok(next);
    }
    let wind = sample_wind_at(grid, puff.centroid.xy()).velocity;
    next.centroid.x += wind.u * dt;
    next.centroid.y += wind.v * dt;
    if !grid.spec.contains(next.centroid.xy()) {
        next.off_domain = true;
    }
    Ok(next)
}

const TWO_PI_POW_1_5: f64 = 15.749_609_945_722_419; // (2 pi)^(3/2)

/// Ground-reflected Gaussian kernel, kg/m^3.
pub fn concentration_at(puff: &Puff, receptor: Point3) -> f64 {
    if puff.off_domain || puff.mass == 0.0 {
        return 0.0;
    }
    let (sh, sz) = (puff.sigma_h, puff.sigma_z);
    let dx = receptor.x - puff.centroid.x;
    let dy = receptor.y - puff.centroid.y;
    let horizontal = (-(dx * dx + dy * dy) / (2.0 * sh * sh)).exp();
    let zm = receptor.z - puff.centroid.z;
    let zp = receptor.z + puff.centroid.z;
    let vertical = (-(zm * zm) / (2.0 * sz * sz)).exp() + (-(zp * zp) / (2.0 * sz * sz)).exp();
    puff.mass / (TWO_PI_POW_1_5 * sh * sh * sz) * horizontal * vertical
}

/// Converts mass concentration to a volume mixing ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConversion {
    /// g/mol; SF6 by default.
    pub tracer_molar_mass: f64,
    /// g/mol
    pub air_molar_mass: f64,
    /// kg/m^3
    pub air_density: f64,
}

impl Default for UnitConversion {
    fn default() -> Self {
        Self {
            tracer_molar_mass: 146.06,
            air_molar_mass: 28.97,
            air_density: 1.2,
        }
    }
}

impl UnitConversion {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("tracer_molar_mass", self.tracer_molar_mass),
            ("air_molar_mass", self.air_molar_mass),
            ("air_density", self.air_density),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid("unit conversion", format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    /// kg/m^3 to parts per trillion by volume.
    pub fn to_ppt(&self, kg_per_m3: f64) -> f64 {
        kg_per_m3 / self.air_density * (self.air_molar_mass / self.tracer_molar_mass) * 1e12
    }
}

/// Concentration samples (ppt) at one receptor, strictly increasing in time (s).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConcentrationSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ConcentrationSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid(
                "concentration series",
                "times and values differ in length",
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("concentration series", "times must increase strictly"));
        }
        Ok(Self { times, values })
    }

    pub fn push(&mut self, t: f64, value: f64) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.values.push(value);
    }
}

/// Trapezoidal time integral of `series` over `[start, end]`, in ppt-hr.
pub fn accumulate_dose(series: &ConcentrationSeries, start: f64, end: f64) -> Result<f64> {
    let (Some(&first), Some(&last)) = (series.times.first(), series.times.last()) else {
        return Err(Error::WindowOutsideSeries {
            start,
            end,
            first: f64::NAN,
            last: f64::NAN,
        });
    };
    if start.is_nan() || end.is_nan() || start > end || start < first || end > last {
        return Err(Error::WindowOutsideSeries {
            start,
            end,
            first,
            last,
        });
    }
    let t = &series.times;
    let c = &series.values;
    let mut total = 0.0;
    for i in 0..t.len().saturating_sub(1) {
        let a = t[i].max(start);
        let b = t[i + 1].min(end);
        if b <= a {
            continue;
        }
        let slope = (c[i + 1] - c[i]) / (t[i + 1] - t[i]);
        let ca = if a == t[i] { c[i] } else { c[i] + slope * (a - t[i]) };
        let cb = if b == t[i + 1] {
            c[i + 1]
        } else {
            c[i] + slope * (b - t[i])
        };
        total += 0.5 * (ca + cb) * (b - a);
    }
    Ok((total / 3600.0).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Velocity;
    use crate::windfield::GridSpec;
    use proptest::prelude::*;

    fn spec() -> ReleaseSpec {
        ReleaseSpec {
            mass: 11.6,
            x: 100.0,
            y: 200.0,
            z: 6.0,
            start_time: 0.0,
            initial_sigma: 1.0,
        }
    }

    fn grid(vel: Velocity) -> WindGrid {
        WindGrid::uniform(
            GridSpec {
                origin_x: 0.0,
                origin_y: 0.0,
                cell_size: 100.0,
                nx: 50,
                ny: 50,
            },
            vel,
            0.0,
        )
    }

    fn puff_at(x: f64, y: f64, z: f64, sh: f64, sz: f64, mass: f64) -> Puff {
        Puff {
            mass,
            centroid: Point3::new(x, y, z),
            sigma_h: sh,
            sigma_z: sz,
            age: 0.0,
            off_domain: false,
        }
    }

    #[test]
    fn release_builds_initial_puff() {
        let p = release(&spec()).unwrap();
        assert_eq!(p.mass, 11.6);
        assert_eq!(p.centroid.z, 6.0);
        assert_eq!(p.age, 0.0);
        assert_eq!((p.sigma_h, p.sigma_z), (1.0, 1.0));
        assert!(release(&ReleaseSpec { mass: 0.0, ..spec() }).is_err());
        assert!(release(&ReleaseSpec { z: -1.0, ..spec() }).is_err());
        assert!(release(&ReleaseSpec {
            initial_sigma: 0.0,
            ..spec()
        })
        .is_err());
    }

    #[test]
    fn calm_wind_only_grows() {
        let p = release(&spec()).unwrap();
        let q = advect_diffuse_step(&p, &grid(Velocity::ZERO), &DiffusionSpec::default(), 60.0).unwrap();
        assert_eq!(q.centroid, p.centroid);
        assert!(q.sigma_h > p.sigma_h && q.sigma_z > p.sigma_z);
        assert_eq!(q.age, 60.0);
        assert_eq!(q.mass, p.mass);
    }

    #[test]
    fn uniform_wind_translates() {
        let p = release(&spec()).unwrap();
        let q = advect_diffuse_step(&p, &grid(Velocity::new(1.0, 0.0)), &DiffusionSpec::default(), 60.0).unwrap();
        assert_eq!(q.centroid.x, 160.0);
        assert_eq!(q.centroid.y, 200.0);
        assert_eq!(q.centroid.z, 6.0);
    }

    #[test]
    fn fickian_growth_value() {
        let p = puff_at(100.0, 100.0, 0.0, 10.0, 10.0, 1.0);
        let d = DiffusionSpec {
            horizontal_coeff: 2.0,
            ..DiffusionSpec::default()
        };
        let q = advect_diffuse_step(&p, &grid(Velocity::ZERO), &d, 900.0).unwrap();
        assert!((q.sigma_h - 3700f64.sqrt()).abs() < 1e-12);
        assert!((q.sigma_h - 60.83).abs() < 0.01);
    }

    #[test]
    fn vertical_sigma_capped() {
        let p = puff_at(100.0, 100.0, 0.0, 10.0, 10.0, 1.0);
        let d = DiffusionSpec {
            max_sigma_z: 12.0,
            ..DiffusionSpec::default()
        };
        let q = advect_diffuse_step(&p, &grid(Velocity::ZERO), &d, 10_000.0).unwrap();
        assert_eq!(q.sigma_z, 12.0);
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let p = release(&spec()).unwrap();
        assert!(advect_diffuse_step(&p, &grid(Velocity::ZERO), &DiffusionSpec::default(), 0.0).is_err());
    }

    #[test]
    fn leaving_the_domain_flags_the_puff() {
        let p = puff_at(4850.0, 100.0, 0.0, 1.0, 1.0, 1.0);
        let q = advect_diffuse_step(&p, &grid(Velocity::new(5.0, 0.0)), &DiffusionSpec::default(), 60.0).unwrap();
        assert!(q.off_domain);
        assert_eq!(concentration_at(&q, q.centroid), 0.0);
    }

    #[test]
    fn ground_level_peak() {
        let p = puff_at(0.0, 0.0, 0.0, 10.0, 10.0, 1.0);
        let c = concentration_at(&p, Point3::new(0.0, 0.0, 0.0));
        let want = 2.0 / ((2.0 * std::f64::consts::PI).powf(1.5) * 1000.0);
        assert!((c - want).abs() < 1e-18);
        assert!((c - 1.270e-4).abs() < 1e-7);
    }

    #[test]
    fn kernel_tails_and_zero_mass() {
        let p = puff_at(0.0, 0.0, 5.0, 10.0, 10.0, 1.0);
        assert!(concentration_at(&p, Point3::new(1000.0, 0.0, 1.5)) < 1e-300);
        let z = Puff { mass: 0.0, ..p };
        assert_eq!(concentration_at(&z, Point3::new(0.0, 0.0, 1.5)), 0.0);
    }

    #[test]
    fn dose_of_simple_series() {
        let times: Vec<f64> = (0..=15).map(|i| i as f64 * 60.0).collect();
        let zero = ConcentrationSeries::new(times.clone(), vec![0.0; 16]).unwrap();
        assert_eq!(accumulate_dose(&zero, 0.0, 900.0).unwrap(), 0.0);
        let flat = ConcentrationSeries::new(times.clone(), vec![100.0; 16]).unwrap();
        assert!((accumulate_dose(&flat, 0.0, 900.0).unwrap() - 25.0).abs() < 1e-12);
        let ramp = ConcentrationSeries::new(times.clone(), times.iter().map(|t| 100.0 * t / 900.0).collect()).unwrap();
        assert!((accumulate_dose(&ramp, 0.0, 900.0).unwrap() - 12.5).abs() < 1e-12);
        // unaligned sub-window of the ramp: integral of 100 t/900 over [90, 450] s
        let want = 100.0 / 900.0 * (450f64.powi(2) - 90f64.powi(2)) / 2.0 / 3600.0;
        assert!((accumulate_dose(&ramp, 90.0, 450.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn dose_window_must_be_covered() {
        let s = ConcentrationSeries::new(vec![0.0, 60.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            accumulate_dose(&s, 0.0, 120.0),
            Err(Error::WindowOutsideSeries { .. })
        ));
        assert!(accumulate_dose(&ConcentrationSeries::default(), 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn kernel_is_linear_in_mass(m in 1e-3f64..100.0, x in -50.0f64..50.0, z in 0.0f64..20.0) {
            let p = puff_at(0.0, 0.0, 3.0, 25.0, 8.0, m);
            let q = Puff { mass: 2.0 * m, ..p };
            let r = Point3::new(x, 0.5 * x, z);
            prop_assert_eq!(concentration_at(&q, r), 2.0 * concentration_at(&p, r));
        }

        #[test]
        fn kernel_is_translation_equivariant(
            ox in -1e4f64..1e4, oy in -1e4f64..1e4, dx in -80.0f64..80.0, dy in -80.0f64..80.0
        ) {
            let p = puff_at(10.0, 20.0, 4.0, 30.0, 10.0, 1.0);
            let r = Point3::new(10.0 + dx, 20.0 + dy, 1.5);
            let c = concentration_at(&p, r);
            let mut shifted = p;
            shifted.centroid.x += ox;
            shifted.centroid.y += oy;
            let c2 = concentration_at(&shifted, Point3::new(r.x + ox, r.y + oy, r.z));
            prop_assert!((c - c2).abs() <= 1e-12 * c);
        }

        #[test]
        fn sigmas_never_shrink(
            sh in 0.1f64..500.0, sz in 0.1f64..600.0, dt in 1.0f64..1000.0,
            ah in 0.01f64..10.0, az in 0.01f64..3.0, cap in 1.0f64..800.0,
        ) {
            let p = puff_at(2000.0, 2000.0, 6.0, sh, sz, 1.0);
            let d = DiffusionSpec { horizontal_coeff: ah, vertical_coeff: az, max_sigma_z: cap };
            let q = advect_diffuse_step(&p, &grid(Velocity::new(0.3, -0.2)), &d, dt).unwrap();
            prop_assert!(q.sigma_h >= p.sigma_h);
            prop_assert!(q.sigma_z >= p.sigma_z);
        }
    }
}
