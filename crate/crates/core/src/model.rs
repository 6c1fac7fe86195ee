//! The process model: wind-field construction plus sub-cycled puff transport
//! over one assimilation window, sampled at every receptor.
//!
//! The nominal forecast, the twin-experiment truth and every particle all go
//! through [`PlumeModel::advance_window`], so identical wind inputs give
//! bit-identical dosages regardless of which of them produced it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::puff::{
    accumulate_dose, advect_diffuse_step, concentration_at, release, ConcentrationSeries, DiffusionSpec, Puff,
    ReleaseSpec, UnitConversion,
};
use crate::windfield::{
    adjust_mass_consistency, interpolate_field, GridSpec, MassConsistencyReport, WindGrid, WindObservation,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassConsistencySpec {
    pub iterations: usize,
    pub relaxation: f64,
}

impl Default for MassConsistencySpec {
    fn default() -> Self {
        Self {
            iterations: 50,
            relaxation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlumeModel {
    pub grid: GridSpec,
    pub mass_consistency: MassConsistencySpec,
    pub diffusion: DiffusionSpec,
    pub conversion: UnitConversion,
    /// Releases sorted by start time.
    pub releases: Vec<ReleaseSpec>,
    pub receptors: Vec<Point3>,
    /// Model time step, seconds.
    pub dt: f64,
    /// Assimilation window length, seconds; a whole number of steps.
    pub window: f64,
}

/// Puffs released so far plus the index of the next pending release.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlumeState {
    pub puffs: Vec<Puff>,
    pub next_release: usize,
}

impl PlumeState {
    pub fn active_puffs(&self) -> usize {
        self.puffs.iter().filter(|p| !p.off_domain).count()
    }
}

impl PlumeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: GridSpec,
        mass_consistency: MassConsistencySpec,
        diffusion: DiffusionSpec,
        conversion: UnitConversion,
        mut releases: Vec<ReleaseSpec>,
        receptors: Vec<Point3>,
        dt: f64,
        window: f64,
    ) -> Result<Self> {
        grid.validate()?;
        diffusion.validate()?;
        conversion.validate()?;
        if !(mass_consistency.relaxation > 0.0 && mass_consistency.relaxation <= 1.0) {
            return Err(Error::invalid(
                "mass consistency",
                format!("relaxation {} must lie in (0, 1]", mass_consistency.relaxation),
            ));
        }
        for r in &releases {
            r.validate()?;
            if !grid.contains(r.position().xy()) {
                return Err(Error::invalid("release", "release point lies outside the domain"));
            }
        }
        releases.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("model", format!("time step {dt} must be > 0")));
        }
        let steps = window / dt;
        if !(steps >= 1.0 && steps.fract() == 0.0 && steps * dt == window) {
            return Err(Error::invalid(
                "model",
                format!("window {window} s is not a whole number of {dt} s steps"),
            ));
        }
        Ok(Self {
            grid,
            mass_consistency,
            diffusion,
            conversion,
            releases,
            receptors,
            dt,
            window,
        })
    }

    pub fn steps_per_window(&self) -> u64 {
        (self.window / self.dt) as u64
    }

    /// Interpolates and mass-adjusts the wind field for one window.
    pub fn wind_grid(&self, obs: &[WindObservation]) -> Result<(WindGrid, MassConsistencyReport)> {
        let raw = interpolate_field(obs, &self.grid)?;
        adjust_mass_consistency(&raw, self.mass_consistency.iterations, self.mass_consistency.relaxation)
    }

    fn activate(&self, state: &mut PlumeState, t: f64) -> Result<()> {
        while let Some(spec) = self.releases.get(state.next_release) {
            if spec.start_time > t {
                break;
            }
            state.puffs.push(release(spec)?);
            state.next_release += 1;
        }
        Ok(())
    }

    /// Receptor concentrations in ppt at the current state.
    pub fn concentrations(&self, state: &PlumeState) -> Vec<f64> {
        self.receptors
            .iter()
            .map(|&r| {
                let c: f64 = state.puffs.iter().map(|p| concentration_at(p, r)).sum();
                self.conversion.to_ppt(c)
            })
            .collect()
    }

    /// Runs window `k` through `grid`, returning one concentration series per
    /// receptor sampled at every model step including both window edges.
    pub fn advance_window(
        &self,
        state: &mut PlumeState,
        grid: &WindGrid,
        k: usize,
    ) -> Result<Vec<ConcentrationSeries>> {
        let steps = self.steps_per_window();
        let first = k as u64 * steps;
        let mut series = vec![ConcentrationSeries::default(); self.receptors.len()];
        let record = |state: &PlumeState, t: f64, series: &mut [ConcentrationSeries]| {
            for (s, c) in series.iter_mut().zip(self.concentrations(state)) {
                s.push(t, c);
            }
        };
        let t0 = first as f64 * self.dt;
        self.activate(state, t0)?;
        record(state, t0, &mut series);
        for step in first + 1..=first + steps {
            for p in state.puffs.iter_mut() {
                *p = advect_diffuse_step(p, grid, &self.diffusion, self.dt)?;
            }
            let t = step as f64 * self.dt;
            self.activate(state, t)?;
            record(state, t, &mut series);
        }
        Ok(series)
    }

    /// Window dosages (ppt-hr) from series returned by
    /// [`advance_window`](Self::advance_window).
    pub fn window_doses(series: &[ConcentrationSeries]) -> Result<Vec<f64>> {
        series
            .iter()
            .map(|s| accumulate_dose(s, s.times[0], s.times[s.times.len() - 1]))
            .collect()
    }
}
