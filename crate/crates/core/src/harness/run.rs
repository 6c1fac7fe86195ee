//! Trial execution: nominal forecast, twin truth, filter runs and Monte
//! Carlo batches.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::assimilation::{init_ensemble, CycleDiagnostics, FilterSettings, ObservationBatch};
use crate::error::{Error, Result};
use crate::geom::normalize_degrees;
use crate::metrics::{
    bootstrap_confidence_interval, compute_metrics, confidence_interval, CiMethod, ConfidenceInterval, MetricReport,
    PairedSample, METRIC_NAMES,
};
use crate::model::{PlumeModel, PlumeState};
use crate::puff::ConcentrationSeries;
use crate::rng::{derive_seed, substream, Stream};
use crate::sensors::{apply_thresholds, observe, pair_records, DoseKind, DosePair, DoseRecord};
use crate::windfield::{perturb_observations, WindObservation, WindPerturbationSpec, WindSchedule};

use super::scenario::{Scenario, TruthConfig};

/// Deterministic model trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    /// One record per sampler per bag.
    pub doses: Vec<DoseRecord>,
    /// Concentration series (ppt) per sampler over the whole trial.
    pub series: Vec<ConcentrationSeries>,
}

fn trajectory(scenario: &Scenario, winds: &WindSchedule) -> Result<(Vec<Vec<f64>>, Vec<ConcentrationSeries>)> {
    let model = &scenario.model;
    let mut state = PlumeState::default();
    let mut window_doses = Vec::with_capacity(scenario.window_count());
    let mut full = vec![ConcentrationSeries::default(); model.receptors.len()];
    for k in 0..scenario.window_count() {
        let obs = winds.observations_at(scenario.window_start(k));
        let (grid, _) = model.wind_grid(&obs)?;
        let series = model.advance_window(&mut state, &grid, k)?;
        window_doses.push(PlumeModel::window_doses(&series)?);
        for (acc, s) in full.iter_mut().zip(series) {
            let skip = usize::from(!acc.times.is_empty());
            for (&t, &c) in s.times.iter().zip(&s.values).skip(skip) {
                acc.push(t, c);
            }
        }
    }
    Ok((window_doses, full))
}

fn bag_records(scenario: &Scenario, window_doses: &[Vec<f64>], kind: DoseKind) -> Vec<DoseRecord> {
    scenario
        .array
        .samplers
        .iter()
        .enumerate()
        .flat_map(|(j, s)| {
            s.windows().map(move |k| DoseRecord {
                sampler_id: s.id.clone(),
                line: s.line,
                window: k,
                dose: window_doses[k][j],
                kind,
            })
        })
        .collect()
}

/// Process-model run driven by the nominal station winds.
pub fn run_forecast(scenario: &Scenario) -> Result<ForecastResult> {
    let (window_doses, series) = trajectory(scenario, &scenario.winds)?;
    Ok(ForecastResult {
        doses: bag_records(scenario, &window_doses, DoseKind::Predicted),
        series,
    })
}

#[derive(Debug, Clone)]
pub struct TruthResult {
    /// The hidden wind realization.
    pub winds: WindSchedule,
    /// Noise-free bag dosages under the true winds.
    pub true_doses: Vec<DoseRecord>,
    /// Noisy bag readings, the twin experiment's observations.
    pub observations: Vec<DoseRecord>,
}

/// Applies the bias and the optional random draw of `truth` to every nominal reading.
pub fn truth_winds(scenario: &Scenario, truth: &TruthConfig) -> Result<WindSchedule> {
    let biased = scenario.winds.map(|o| WindObservation {
        speed: (o.speed + truth.speed_bias_ms).max(0.0),
        direction: normalize_degrees(o.direction + truth.direction_bias_deg),
        ..o.clone()
    });
    let Some(spec) = truth.perturbation else {
        return Ok(biased);
    };
    let all: Vec<WindObservation> = biased.all().cloned().collect();
    let mut rng = substream(truth.seed, Stream::Truth, 0, 0);
    WindSchedule::new(perturb_observations(&all, &spec, &mut rng)?)
}

/// Runs the model under a hidden wind realization and samples noisy bag
/// readings at every sampler.
pub fn generate_twin_truth(scenario: &Scenario, truth: &TruthConfig) -> Result<TruthResult> {
    let winds = truth_winds(scenario, truth)?;
    let (window_doses, series) = trajectory(scenario, &winds)?;
    let mut rng = substream(truth.seed, Stream::Observation, 0, 0);
    let observations = observe(&series, &scenario.array, truth.noise_sigma, &mut rng)?;
    Ok(TruthResult {
        true_doses: bag_records(scenario, &window_doses, DoseKind::Predicted),
        winds,
        observations,
    })
}

/// Forecast and filter metrics over the same thresholded pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub forecast: MetricReport,
    pub filter: MetricReport,
    pub forecast_pairs: Vec<DosePair>,
    pub filter_pairs: Vec<DosePair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub k: usize,
    pub particle: usize,
    pub weight: f64,
    pub puff: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub sigma_h: f64,
    pub sigma_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub forecast: Vec<DoseRecord>,
    pub estimates: Vec<DoseRecord>,
    pub diagnostics: Vec<CycleDiagnostics>,
    /// Lines used for assimilation; `None` when no observation passes the cutoff.
    pub train: Option<Comparison>,
    /// Held-out lines.
    pub test: Option<Comparison>,
    pub snapshots: Vec<SnapshotRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub particles: usize,
    pub settings: FilterSettings,
    pub snapshot: bool,
}

impl RunOptions {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            seed: scenario.config.filter.seed,
            particles: scenario.config.filter.particles,
            settings: scenario.settings(),
            snapshot: false,
        }
    }
}

/// Rejects observations for unknown samplers or outside a sampler's bags.
pub fn check_observations(scenario: &Scenario, observations: &[DoseRecord]) -> Result<()> {
    for r in observations {
        let Some(j) = scenario.array.index_of(&r.sampler_id) else {
            return Err(Error::invalid(
                "observations",
                format!("unknown sampler {}", r.sampler_id),
            ));
        };
        let s = &scenario.array.samplers[j];
        if s.line != r.line {
            return Err(Error::invalid(
                "observations",
                format!("sampler {} is on line {}, record says {}", s.id, s.line, r.line),
            ));
        }
        if !s.samples_window(r.window) {
            return Err(Error::invalid(
                "observations",
                format!("window {} is not one of sampler {}'s bag windows", r.window, s.id),
            ));
        }
    }
    Ok(())
}

fn compare(
    scenario: &Scenario,
    observations: &[DoseRecord],
    forecast: &[DoseRecord],
    estimates: &[DoseRecord],
    lines: &std::collections::BTreeSet<u32>,
) -> Result<Option<Comparison>> {
    let subset: Vec<DoseRecord> = observations
        .iter()
        .filter(|r| lines.contains(&r.line))
        .cloned()
        .collect();
    let policy = &scenario.config.thresholds;
    let forecast_pairs = apply_thresholds(&pair_records(&subset, forecast), policy);
    let filter_pairs = apply_thresholds(&pair_records(&subset, estimates), policy);
    if forecast_pairs.is_empty() {
        return Ok(None);
    }
    let to_samples = |pairs: &[DosePair]| pairs.iter().map(PairedSample::from).collect::<Vec<_>>();
    Ok(Some(Comparison {
        forecast: compute_metrics(&to_samples(&forecast_pairs))?,
        filter: compute_metrics(&to_samples(&filter_pairs))?,
        forecast_pairs,
        filter_pairs,
    }))
}

/// Full particle-filter run over the trial, assimilating training-line
/// observations window by window.
pub fn run_assimilation(scenario: &Scenario, observations: &[DoseRecord], options: &RunOptions) -> Result<RunResult> {
    let forecast = run_forecast(scenario)?.doses;
    run_assimilation_against(scenario, observations, &forecast, options)
}

fn run_assimilation_against(
    scenario: &Scenario,
    observations: &[DoseRecord],
    forecast: &[DoseRecord],
    options: &RunOptions,
) -> Result<RunResult> {
    check_observations(scenario, observations)?;
    let train_lines = &scenario.config.filter.train_lines;
    let mut by_window: HashMap<usize, Vec<DoseRecord>> = HashMap::new();
    for r in observations.iter().filter(|r| train_lines.contains(&r.line)) {
        by_window.entry(r.window).or_default().push(r.clone());
    }

    let mut ensemble = init_ensemble(options.particles, options.seed)?;
    let mut window_estimates = Vec::with_capacity(scenario.window_count());
    let mut diagnostics = Vec::with_capacity(scenario.window_count());
    let mut snapshots = Vec::new();
    for k in 0..scenario.window_count() {
        let batch = ObservationBatch::new(k, by_window.remove(&k).unwrap_or_default(), train_lines)?;
        let nominal = scenario.winds.observations_at(scenario.window_start(k));
        let out = ensemble.run_cycle(&scenario.model, &scenario.array, &nominal, &batch, &options.settings)?;
        if options.snapshot {
            for (i, p) in ensemble.particles.iter().enumerate() {
                for (n, puff) in p.state.puffs.iter().enumerate() {
                    snapshots.push(SnapshotRow {
                        k,
                        particle: i,
                        weight: p.weight,
                        puff: n,
                        x: puff.centroid.x,
                        y: puff.centroid.y,
                        z: puff.centroid.z,
                        sigma_h: puff.sigma_h,
                        sigma_z: puff.sigma_z,
                    });
                }
            }
        }
        window_estimates.push(out.estimates);
        diagnostics.push(out.diagnostics);
    }
    let estimates = bag_records(scenario, &window_estimates, DoseKind::Predicted);
    let test_lines = &scenario.config.filter.test_lines;
    Ok(RunResult {
        train: compare(scenario, observations, forecast, &estimates, train_lines)?,
        test: compare(scenario, observations, forecast, &estimates, test_lines)?,
        forecast: forecast.to_vec(),
        estimates,
        diagnostics,
        snapshots,
    })
}

/// Runs the filter with process noise and updates switched off and returns
/// the largest relative deviation of its estimates from the nominal
/// forecast. Zero means the filter machinery reproduces the process model.
pub fn forecast_equivalence(scenario: &Scenario) -> Result<f64> {
    let options = RunOptions {
        seed: 0,
        particles: 2,
        settings: FilterSettings {
            perturbation: WindPerturbationSpec::NONE,
            updates_enabled: false,
            ..scenario.settings()
        },
        snapshot: false,
    };
    let run = run_assimilation(scenario, &[], &options)?;
    Ok(run
        .forecast
        .iter()
        .zip(&run.estimates)
        .map(|(f, e)| (f.dose - e.dose).abs() / f.dose.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: &'static str,
    pub process_model: f64,
    pub particle_filter: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub forecast: MetricReport,
    pub runs: Vec<MetricReport>,
    pub run_seeds: Vec<u64>,
    pub intervals: Vec<ConfidenceInterval>,
}

impl MonteCarloResult {
    /// Table rows with FAC2 and FAC3 as percentages.
    pub fn rows(&self) -> Vec<ReportRow> {
        let forecast = self.forecast.values();
        METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, &metric)| {
                let scale = if metric.starts_with("FAC") { 100.0 } else { 1.0 };
                let ci = &self.intervals[i];
                ReportRow {
                    metric,
                    process_model: forecast[i] * scale,
                    particle_filter: ci.point * scale,
                    ci_lower: ci.lower * scale,
                    ci_upper: ci.upper * scale,
                }
            })
            .collect()
    }
}

/// Repeats the filter `runs` times with derived seeds against one fixed
/// observation set and summarizes the test-line metrics.
pub fn run_monte_carlo(scenario: &Scenario, observations: &[DoseRecord], runs: usize) -> Result<MonteCarloResult> {
    if runs < 2 {
        return Err(Error::invalid("monte carlo", "need at least 2 runs"));
    }
    let base = RunOptions::from_scenario(scenario);
    let forecast = run_forecast(scenario)?.doses;
    let seeds: Vec<u64> = (0..runs as u64)
        .map(|r| derive_seed(base.seed, Stream::MonteCarlo, r, 0))
        .collect();
    let results: Vec<Result<Comparison>> = seeds
        .par_iter()
        .map(|&seed| {
            let options = RunOptions { seed, ..base };
            run_assimilation_against(scenario, observations, &forecast, &options)?
                .test
                .ok_or_else(|| Error::Runtime("no test-line observation reaches the cutoff".into()))
        })
        .collect();
    let comparisons = results.into_iter().collect::<Result<Vec<_>>>()?;
    let forecast_metrics = comparisons[0].forecast;
    let run_metrics: Vec<MetricReport> = comparisons.iter().map(|c| c.filter).collect();

    let eval = scenario.config.evaluation;
    let intervals = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let samples: Vec<f64> = run_metrics.iter().map(|m| m.values()[i]).collect();
            match eval.ci_method {
                CiMethod::Normal => confidence_interval(name, &samples, eval.ci_level),
                CiMethod::BootstrapPercentile => {
                    let mut rng = substream(base.seed, Stream::Bootstrap, i as u64, 0);
                    bootstrap_confidence_interval(name, &samples, eval.ci_level, eval.bootstrap_resamples, &mut rng)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloResult {
        forecast: forecast_metrics,
        runs: run_metrics,
        run_seeds: seeds,
        intervals,
    })
}
