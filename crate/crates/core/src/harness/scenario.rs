//! Scenario configuration: one TOML file plus the CSV files it references.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assimilation::{FilterSettings, LikelihoodSpec};
use crate::error::{Error, Result};
use crate::metrics::CiMethod;
use crate::model::{MassConsistencySpec, PlumeModel};
use crate::puff::{DiffusionSpec, ReleaseSpec, UnitConversion};
use crate::sensors::{build_sampler_lines, SamplerArray, SamplerConfig, ThresholdPolicy};
use crate::windfield::{read_wind_csv, GridSpec, WindObservation, WindPerturbationSpec, WindSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub duration_s: f64,
    /// Assimilation window and bag length.
    pub cadence_s: f64,
    pub model_dt_s: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            duration_s: 12_600.0,
            cadence_s: 900.0,
            model_dt_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindConfig {
    /// `station_id,x_m,y_m,z_m,time_s,speed_ms,dir_deg`, relative to the config file.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub particles: usize,
    /// Resample when ESS drops below this fraction of N.
    pub resample_threshold: f64,
    pub seed: u64,
    pub train_lines: BTreeSet<u32>,
    pub test_lines: BTreeSet<u32>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            resample_threshold: 0.5,
            seed: 26,
            train_lines: [1, 2].into(),
            test_lines: [3].into(),
        }
    }
}

/// How the twin experiment's hidden truth departs from the nominal winds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    /// Added to every station direction, degrees.
    pub direction_bias_deg: f64,
    /// Added to every station speed, m/s (result clamped at 0).
    pub speed_bias_ms: f64,
    /// One random draw applied to every reading, after the biases.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<WindPerturbationSpec>,
    /// Relative sigma of the multiplicative observation noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            direction_bias_deg: 0.0,
            speed_bias_ms: 0.0,
            perturbation: None,
            noise_sigma: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub runs: usize,
    pub ci_level: f64,
    pub ci_method: CiMethod,
    pub bootstrap_resamples: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            ci_level: 0.95,
            ci_method: CiMethod::Normal,
            bootstrap_resamples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub trial: TrialConfig,
    pub grid: GridSpec,
    #[serde(default)]
    pub mass_consistency: MassConsistencySpec,
    #[serde(rename = "release")]
    pub releases: Vec<ReleaseSpec>,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
    pub samplers: SamplerConfig,
    pub wind: WindConfig,
    #[serde(default)]
    pub perturbation: WindPerturbationSpec,
    #[serde(default)]
    pub likelihood: LikelihoodSpec,
    #[serde(default)]
    pub thresholds: ThresholdPolicy,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub conversion: UnitConversion,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_owned(),
            message: match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}: {}", e.message())
                }
                None => e.message().to_owned(),
            },
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// A validated scenario with its data files loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub winds: WindSchedule,
    pub array: SamplerArray,
    pub model: PlumeModel,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let config = ScenarioConfig::from_toml(&text, path)?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_owned();
        Self::from_config(config, &base_dir)
    }

    /// Reads the wind file named in `config` relative to `base_dir`.
    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let winds = read_wind_csv(&base_dir.join(&config.wind.file))?;
        Self::with_winds(config, winds, base_dir)
    }

    pub fn with_winds(config: ScenarioConfig, winds: Vec<WindObservation>, base_dir: &Path) -> Result<Self> {
        let trial = config.trial;
        if !(trial.duration_s > 0.0 && trial.cadence_s > 0.0) {
            return Err(Error::invalid("trial", "duration and cadence must be > 0"));
        }
        let windows = trial.duration_s / trial.cadence_s;
        if windows.fract() != 0.0 {
            return Err(Error::invalid(
                "trial",
                format!(
                    "cadence {} s does not divide duration {} s",
                    trial.cadence_s, trial.duration_s
                ),
            ));
        }
        if config.samplers.bag_duration_s != trial.cadence_s {
            return Err(Error::invalid(
                "samplers",
                "bag duration must equal the assimilation cadence",
            ));
        }
        if config.releases.is_empty() {
            return Err(Error::invalid("release", "at least one release is required"));
        }
        config.perturbation.validate()?;
        config.likelihood.validate()?;
        config.thresholds.validate()?;
        if config.filter.particles < 2 {
            return Err(Error::invalid("filter", "particles must be >= 2"));
        }
        if !(config.filter.resample_threshold >= 0.0 && config.filter.resample_threshold <= 1.0) {
            return Err(Error::invalid("filter", "resample_threshold must lie in [0, 1]"));
        }
        if config.filter.train_lines.is_empty() {
            return Err(Error::invalid("filter", "train_lines is empty"));
        }
        if let Some(p) = &config.truth.perturbation {
            p.validate()?;
        }
        if !(config.truth.noise_sigma.is_finite() && config.truth.noise_sigma >= 0.0) {
            return Err(Error::invalid("truth", "noise_sigma must be >= 0"));
        }
        if !(config.evaluation.ci_level > 0.0 && config.evaluation.ci_level < 1.0) {
            return Err(Error::invalid("evaluation", "ci_level must lie in (0, 1)"));
        }

        let array = build_sampler_lines(&config.samplers, base_dir)?;
        if array.window_count() > windows as usize {
            return Err(Error::invalid(
                "samplers",
                "bag schedules extend beyond the trial duration",
            ));
        }
        for line in array.lines() {
            if !config.filter.train_lines.contains(&line) && !config.filter.test_lines.contains(&line) {
                return Err(Error::invalid(
                    "filter",
                    format!("line {line} is neither a training nor a testing line"),
                ));
            }
        }
        for s in &array.samplers {
            if !config.grid.contains(s.position.xy()) {
                return Err(Error::invalid(
                    "samplers",
                    format!("sampler {} lies outside the domain", s.id),
                ));
            }
        }
        let winds = WindSchedule::new(winds)?;
        winds.validate(&config.grid)?;

        let model = PlumeModel::new(
            config.grid,
            config.mass_consistency,
            config.diffusion,
            config.conversion,
            config.releases.clone(),
            array.samplers.iter().map(|s| s.position).collect(),
            trial.model_dt_s,
            trial.cadence_s,
        )?;
        Ok(Self {
            config,
            base_dir: base_dir.to_owned(),
            winds,
            array,
            model,
        })
    }

    pub fn window_count(&self) -> usize {
        (self.config.trial.duration_s / self.config.trial.cadence_s) as usize
    }

    pub fn window_start(&self, k: usize) -> f64 {
        k as f64 * self.config.trial.cadence_s
    }

    pub fn settings(&self) -> FilterSettings {
        FilterSettings {
            perturbation: self.config.perturbation,
            likelihood: self.config.likelihood,
            thresholds: self.config.thresholds,
            resample_threshold: self.config.filter.resample_threshold,
            updates_enabled: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
origin_x_m = 0.0
origin_y_m = 0.0
cell_size_m = 500.0
nx = 21
ny = 21

[[release]]
mass_kg = 1.0
x_m = 5000.0
y_m = 9000.0
z_m = 2.0

[samplers]
[[samplers.line]]
index = 1
anchor_x_m = 2000.0
anchor_y_m = 6000.0
heading_deg = 90.0
count = 5

[[samplers.line]]
index = 3
anchor_x_m = 2000.0
anchor_y_m = 2000.0
heading_deg = 90.0
count = 5
delay_s = 1800.0

[wind]
file = "winds.csv"
"#;

    fn winds() -> Vec<WindObservation> {
        vec![WindObservation {
            station_id: "A".into(),
            position: crate::geom::Point3::new(5000.0, 5000.0, 10.0),
            time: 0.0,
            speed: 2.0,
            direction: 0.0,
        }]
    }

    fn config() -> ScenarioConfig {
        let mut c = ScenarioConfig::from_toml(MINIMAL, Path::new("s.toml")).unwrap();
        c.filter.train_lines = [1].into();
        c
    }

    #[test]
    fn defaults_fill_in_and_round_trip() {
        let c = config();
        assert_eq!(c.trial.duration_s, 12_600.0);
        assert_eq!(c.perturbation, WindPerturbationSpec::default());
        assert_eq!(c.filter.particles, 100);
        let again = ScenarioConfig::from_toml(&c.to_toml(), Path::new("s.toml")).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        let mut other = c.clone();
        other.filter.seed += 1;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = MINIMAL.replace("nx = 21", "nx = \"many\"");
        let err = ScenarioConfig::from_toml(&text, Path::new("s.toml")).unwrap_err();
        let line = text.lines().position(|l| l.contains("many")).unwrap() + 1;
        assert!(err.to_string().contains(&format!("line {line}")), "{err}");
    }

    #[test]
    fn cross_field_validation() {
        let s = Scenario::with_winds(config(), winds(), Path::new(".")).unwrap();
        assert_eq!((s.array.len(), s.window_count()), (10, 14));

        let mut c = config();
        c.trial.cadence_s = 800.0;
        assert!(Scenario::with_winds(c, winds(), Path::new(".")).is_err());
        let mut c = config();
        c.filter.test_lines.clear();
        let err = Scenario::with_winds(c, winds(), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let mut c = config();
        c.trial.duration_s = 10_800.0;
        assert!(Scenario::with_winds(c, winds(), Path::new(".")).is_err());
        let mut c = config();
        c.filter.particles = 1;
        assert!(Scenario::with_winds(c, winds(), Path::new(".")).unwrap_err().is_validation());
        assert!(Scenario::with_winds(config(), vec![], Path::new(".")).is_err());
    }
}
