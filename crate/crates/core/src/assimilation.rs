//! Bootstrap particle filter over the puff model.
//!
//! Each particle is a full model replicate driven by its own perturbed copy
//! of the station winds. Because the proposal is the transition density,
//! propagation leaves weights untouched and the update multiplies each weight
//! by the Gaussian likelihood of the training-line dosages.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PlumeModel, PlumeState};
use crate::rng::{substream, Stream};
use crate::sensors::{DoseKind, DoseRecord, SamplerArray, ThresholdPolicy};
use crate::windfield::{perturb_observations, WindObservation, WindPerturbationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: PlumeState,
    /// Wind inputs sampled for the most recent window.
    pub perturbed: Vec<WindObservation>,
    pub weight: f64,
    /// Seed index of this particle's random substream.
    pub stream: u64,
    /// Dosage at every receptor over the most recent window, ppt-hr.
    pub doses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    /// Index of the next window to propagate.
    pub k: usize,
    master_seed: u64,
    next_stream: u64,
}

/// Training observations whose bags end with window `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub k: usize,
    pub records: Vec<DoseRecord>,
}

impl ObservationBatch {
    /// Checks every record is an observation for window `k` from a training
    /// line. Test-line data never reaches the weight update.
    pub fn new(k: usize, records: Vec<DoseRecord>, train_lines: &BTreeSet<u32>) -> Result<Self> {
        for r in &records {
            if r.kind != DoseKind::Observed {
                return Err(Error::invalid("observation batch", "predicted record in batch"));
            }
            if r.window != k {
                return Err(Error::invalid(
                    "observation batch",
                    format!("record for window {} in batch {k}", r.window),
                ));
            }
            if !train_lines.contains(&r.line) {
                return Err(Error::invalid(
                    "observation batch",
                    format!("sampler {} on line {} is not a training line", r.sampler_id, r.line),
                ));
            }
        }
        Ok(Self { k, records })
    }

    pub fn empty(k: usize) -> Self {
        Self { k, records: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// One variance per cycle over every (particle, sensor) residual.
    #[default]
    Pooled,
    /// One variance per sensor over the particles.
    PerSensor,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodSpec {
    #[serde(default)]
    pub mode: VarianceMode,
    /// (ppt-hr)^2, used in [`VarianceMode::Fixed`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_variance: Option<f64>,
    /// Lower bound on any computed variance, (ppt-hr)^2.
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
}

fn default_variance_floor() -> f64 {
    1.0
}

impl Default for LikelihoodSpec {
    fn default() -> Self {
        Self {
            mode: VarianceMode::Pooled,
            fixed_variance: None,
            variance_floor: 1.0,
        }
    }
}

impl LikelihoodSpec {
    pub fn fixed(variance: f64) -> Self {
        Self {
            mode: VarianceMode::Fixed,
            fixed_variance: Some(variance),
            variance_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance_floor.is_finite() && self.variance_floor >= 0.0) {
            return Err(Error::invalid("likelihood", "variance floor must be >= 0"));
        }
        if self.mode == VarianceMode::Fixed {
            match self.fixed_variance {
                Some(v) if v > 0.0 => {}
                _ => return Err(Error::invalid("likelihood", "fixed mode needs fixed_variance > 0")),
            }
        } else if self.variance_floor <= 0.0 {
            return Err(Error::invalid("likelihood", "computed variances need a floor > 0"));
        }
        Ok(())
    }
}

/// Outcome of one weight update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateOutcome {
    /// Observation pairs that survived the cutoff.
    pub pairs: usize,
    /// Likelihood variance used (the pooled value, or the mean of per-sensor values).
    pub variance: f64,
    /// Set when every log-weight was non-finite and weights were reset to uniform.
    pub underflow: bool,
}

/// Filter settings that stay fixed over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub perturbation: WindPerturbationSpec,
    pub likelihood: LikelihoodSpec,
    pub thresholds: ThresholdPolicy,
    /// Resample when ESS < fraction * N.
    pub resample_threshold: f64,
    /// When false, cycles only forecast.
    pub updates_enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleDiagnostics {
    pub k: usize,
    /// ESS after the update, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    pub underflow: bool,
    pub min_weight: f64,
    pub max_weight: f64,
    pub weight_sum: f64,
    pub pairs: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    /// Weighted dosage estimate at every receptor for window `diagnostics.k`.
    pub estimates: Vec<f64>,
    pub diagnostics: CycleDiagnostics,
}

/// N particles at the initial state with uniform weights.
pub fn init_ensemble(n: usize, master_seed: u64) -> Result<Ensemble> {
    if n < 2 {
        return Err(Error::invalid(
            "ensemble",
            format!("need at least 2 particles, got {n}"),
        ));
    }
    let w = 1.0 / n as f64;
    let particles = (0..n as u64)
        .map(|stream| Particle {
            state: PlumeState::default(),
            perturbed: Vec::new(),
            weight: w,
            stream,
            doses: Vec::new(),
        })
        .collect();
    Ok(Ensemble {
        particles,
        k: 0,
        master_seed,
        next_stream: n as u64,
    })
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Draws each particle's next state from the transition density: perturb
    /// the station winds, build the wind field and run the puffs through
    /// window `self.k`. Weights are untouched.
    pub fn propagate(
        &mut self,
        model: &PlumeModel,
        nominal: &[WindObservation],
        spec: &WindPerturbationSpec,
    ) -> Result<()> {
        let (k, seed) = (self.k, self.master_seed);
        self.particles.par_iter_mut().enumerate().try_for_each(|(id, p)| {
            let mut step = || -> Result<()> {
                let mut rng = substream(seed, Stream::Particle, p.stream, k as u64);
                p.perturbed = perturb_observations(nominal, spec, &mut rng)?;
                let (grid, _) = model.wind_grid(&p.perturbed)?;
                let series = model.advance_window(&mut p.state, &grid, k)?;
                p.doses = PlumeModel::window_doses(&series)?;
                Ok(())
            };
            step().map_err(|e| Error::Particle {
                id,
                source: Box::new(e),
            })
        })
    }

    /// Multiplies weights by the Gaussian likelihood of `batch`, in log space.
    /// Leaves weights unnormalized.
    pub fn update_weights(
        &mut self,
        batch: &ObservationBatch,
        array: &SamplerArray,
        likelihood: &LikelihoodSpec,
        thresholds: &ThresholdPolicy,
    ) -> Result<UpdateOutcome> {
        likelihood.validate()?;
        let mut sensors = Vec::new();
        for r in &batch.records {
            if !thresholds.keeps_observed(r.dose) {
                continue;
            }
            let j = array
                .index_of(&r.sampler_id)
                .ok_or_else(|| Error::invalid("observation batch", format!("unknown sampler {}", r.sampler_id)))?;
            sensors.push((j, r.dose));
        }
        if sensors.is_empty() {
            return Ok(UpdateOutcome::default());
        }
        let n = self.len();
        // residuals[i][s] for particle i, surviving sensor s
        let residuals: Vec<Vec<f64>> = self
            .particles
            .iter()
            .map(|p| {
                sensors
                    .iter()
                    .map(|&(j, obs)| obs - thresholds.floor_predicted(p.doses[j]))
                    .collect()
            })
            .collect();

        let variances: Vec<f64> = match likelihood.mode {
            VarianceMode::Fixed => vec![likelihood.fixed_variance.unwrap_or(1.0); sensors.len()],
            VarianceMode::Pooled => {
                let v = sample_variance(residuals.iter().flatten().copied()).max(likelihood.variance_floor);
                vec![v; sensors.len()]
            }
            VarianceMode::PerSensor => (0..sensors.len())
                .map(|s| sample_variance(residuals.iter().map(|r| r[s])).max(likelihood.variance_floor))
                .collect(),
        };

        let log_weights: Vec<f64> = self
            .particles
            .iter()
            .zip(&residuals)
            .map(|(p, res)| p.weight.ln() + gaussian_log_likelihood(res, &variances))
            .collect();
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let underflow = !max.is_finite();
        if underflow {
            log::warn!(
                "window {}: all particle likelihoods vanished; resetting to uniform weights",
                batch.k
            );
            for p in &mut self.particles {
                p.weight = 1.0 / n as f64;
            }
        } else {
            for (p, lw) in self.particles.iter_mut().zip(&log_weights) {
                p.weight = (lw - max).exp();
            }
        }
        Ok(UpdateOutcome {
            pairs: sensors.len(),
            variance: variances.iter().sum::<f64>() / variances.len() as f64,
            underflow,
        })
    }

    /// Scales weights to sum to one.
    pub fn normalize_weights(&mut self) -> Result<()> {
        let total: f64 = self.particles.iter().map(|p| p.weight).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        for p in &mut self.particles {
            p.weight /= total;
        }
        Ok(())
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights())
    }

    /// Systematic resampling to N equally weighted offspring, each with a
    /// fresh random substream.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let offset: f64 = rng.random();
        let picks = systematic_indices(&self.weights(), n, offset);
        let w = 1.0 / n as f64;
        let base = self.next_stream;
        self.particles = picks
            .into_iter()
            .enumerate()
            .map(|(i, src)| Particle {
                weight: w,
                stream: base + i as u64,
                ..self.particles[src].clone()
            })
            .collect();
        self.next_stream += n as u64;
    }

    /// Weighted mean of particle dosages at receptor `sampler`.
    pub fn estimate_dose(&self, sampler: usize) -> f64 {
        self.particles.iter().map(|p| p.weight * p.doses[sampler]).sum()
    }

    /// One full filter cycle for window `self.k`: propagate, update,
    /// normalize, estimate, then resample if the ESS fell below the
    /// threshold.
    pub fn run_cycle(
        &mut self,
        model: &PlumeModel,
        array: &SamplerArray,
        nominal: &[WindObservation],
        batch: &ObservationBatch,
        settings: &FilterSettings,
    ) -> Result<CycleOutput> {
        if batch.k != self.k {
            return Err(Error::invalid(
                "observation batch",
                format!("batch for window {} given to cycle {}", batch.k, self.k),
            ));
        }
        self.propagate(model, nominal, &settings.perturbation)?;
        let outcome = if settings.updates_enabled {
            self.update_weights(batch, array, &settings.likelihood, &settings.thresholds)?
        } else {
            UpdateOutcome::default()
        };
        self.normalize_weights()?;
        let estimates = (0..array.len()).map(|j| self.estimate_dose(j)).collect();

        let weights = self.weights();
        let ess = effective_sample_size(&weights);
        let resampled = ess < settings.resample_threshold * self.len() as f64;
        let diagnostics = CycleDiagnostics {
            k: self.k,
            ess,
            resampled,
            underflow: outcome.underflow,
            min_weight: weights.iter().copied().fold(f64::INFINITY, f64::min),
            max_weight: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            weight_sum: weights.iter().sum(),
            pairs: outcome.pairs,
            variance: outcome.variance,
        };
        if resampled {
            let mut rng = substream(self.master_seed, Stream::Resample, self.k as u64, 0);
            self.resample(&mut rng);
        }
        self.k += 1;
        Ok(CycleOutput { estimates, diagnostics })
    }
}

/// `1 / sum(w^2)` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Offspring source indices by systematic resampling: `n_out` evenly spaced
/// points `(offset + i) / n_out`, `offset` in `[0, 1)`, inverted through the
/// weight CDF.
pub fn systematic_indices(weights: &[f64], n_out: usize, offset: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let last = weights.len() - 1;
    let mut out = Vec::with_capacity(n_out);
    let mut j = 0;
    let mut cdf = weights[0] / total;
    for i in 0..n_out {
        let u = (offset + i as f64) / n_out as f64;
        while cdf <= u && j < last {
            j += 1;
            cdf += weights[j] / total;
        }
        // rounding in the CDF can strand u past the last positive weight
        while weights[j] <= 0.0 && j > 0 {
            j -= 1;
        }
        out.push(j);
    }
    out
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

fn gaussian_log_likelihood(residuals: &[f64], variances: &[f64]) -> f64 {
    residuals
        .iter()
        .zip(variances)
        .map(|(r, v)| -0.5 * (std::f64::consts::TAU * v).ln() - r * r / (2.0 * v))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::sensors::Sampler;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn array(n: usize) -> SamplerArray {
        SamplerArray {
            samplers: (0..n)
                .map(|i| Sampler {
                    id: format!("S{i}"),
                    line: 1,
                    position: Point3::new(i as f64, 0.0, 1.5),
                    first_window: 0,
                    bag_count: 12,
                })
                .collect(),
            bag_duration: 900.0,
        }
    }

    fn ensemble_with(doses: &[Vec<f64>], weights: &[f64]) -> Ensemble {
        let mut ens = init_ensemble(doses.len(), 1).unwrap();
        for ((p, d), &w) in ens.particles.iter_mut().zip(doses).zip(weights) {
            p.doses = d.clone();
            p.weight = w;
        }
        ens
    }

    fn obs(sampler: usize, dose: f64) -> DoseRecord {
        DoseRecord {
            sampler_id: format!("S{sampler}"),
            line: 1,
            window: 0,
            dose,
            kind: DoseKind::Observed,
        }
    }

    #[test]
    fn init_is_uniform_and_deterministic() {
        let ens = init_ensemble(100, 9).unwrap();
        assert_eq!(ens.len(), 100);
        assert!(ens.particles.iter().all(|p| p.weight == 0.01));
        assert_eq!(ens, init_ensemble(100, 9).unwrap());
        assert!(init_ensemble(1, 9).is_err());
    }

    #[test]
    fn normalize_examples() {
        let mut e = ensemble_with(&[vec![], vec![]], &[2.0, 2.0]);
        e.normalize_weights().unwrap();
        assert_eq!(e.weights(), vec![0.5, 0.5]);
        let mut e = ensemble_with(&[vec![], vec![]], &[1.0, 3.0]);
        e.normalize_weights().unwrap();
        assert_eq!(e.weights(), vec![0.25, 0.75]);
        let before = e.weights();
        e.normalize_weights().unwrap();
        for (a, b) in before.iter().zip(e.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut z = ensemble_with(&[vec![], vec![]], &[0.0, 0.0]);
        assert!(matches!(z.normalize_weights(), Err(Error::ZeroWeights)));
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&[0.02; 50]) - 50.0).abs() < 1e-9);
        let mut one = vec![0.0; 10];
        one[3] = 1.0;
        assert_eq!(effective_sample_size(&one), 1.0);
        assert!((effective_sample_size(&[0.5, 0.25, 0.25]) - 1.0 / 0.375).abs() < 1e-12);
    }

    #[test]
    fn one_sigma_residual_weight_ratio() {
        let sigma = 7.0;
        let mut e = ensemble_with(&[vec![50.0], vec![50.0 - sigma]], &[0.5, 0.5]);
        let batch = ObservationBatch::new(0, vec![obs(0, 50.0)], &[1].into()).unwrap();
        e.update_weights(
            &batch,
            &array(1),
            &LikelihoodSpec::fixed(sigma * sigma),
            &ThresholdPolicy::default(),
        )
        .unwrap();
        e.normalize_weights().unwrap();
        let w = e.weights();
        let want = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((w[0] - want).abs() < 1e-12);
        assert!((w[0] - 0.622).abs() < 1e-3 && (w[1] - 0.378).abs() < 1e-3);
    }

    #[test]
    fn identical_predictions_leave_weights_alone() {
        let mut e = ensemble_with(&vec![vec![30.0, 80.0]; 3], &[0.2, 0.3, 0.5]);
        let batch = ObservationBatch::new(0, vec![obs(0, 40.0), obs(1, 20.0)], &[1].into()).unwrap();
        e.update_weights(
            &batch,
            &array(2),
            &LikelihoodSpec::default(),
            &ThresholdPolicy::default(),
        )
        .unwrap();
        e.normalize_weights().unwrap();
        for (a, b) in e.weights().iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sub_cutoff_batch_is_vacuous() {
        let mut e = ensemble_with(&[vec![0.0], vec![500.0]], &[0.4, 0.6]);
        let batch = ObservationBatch::new(0, vec![obs(0, 9.0)], &[1].into()).unwrap();
        let out = e
            .update_weights(
                &batch,
                &array(1),
                &LikelihoodSpec::default(),
                &ThresholdPolicy::default(),
            )
            .unwrap();
        assert_eq!(out.pairs, 0);
        assert_eq!(e.weights(), vec![0.4, 0.6]);
    }

    #[test]
    fn log_space_survives_huge_residuals() {
        // direct-space likelihoods would both underflow to zero here
        let mut e = ensemble_with(&[vec![1.0], vec![2.0]], &[0.5, 0.5]);
        let batch = ObservationBatch::new(0, vec![obs(0, 1e6)], &[1].into()).unwrap();
        let out = e
            .update_weights(
                &batch,
                &array(1),
                &LikelihoodSpec::fixed(1.0),
                &ThresholdPolicy::default(),
            )
            .unwrap();
        assert!(!out.underflow);
        e.normalize_weights().unwrap();
        assert_eq!(e.weights(), vec![0.0, 1.0]);
    }

    #[test]
    fn non_finite_weights_fall_back_to_uniform() {
        let mut e = ensemble_with(&[vec![1.0], vec![2.0]], &[0.0, 0.0]);
        let batch = ObservationBatch::new(0, vec![obs(0, 50.0)], &[1].into()).unwrap();
        let out = e
            .update_weights(
                &batch,
                &array(1),
                &LikelihoodSpec::default(),
                &ThresholdPolicy::default(),
            )
            .unwrap();
        assert!(out.underflow);
        assert_eq!(e.weights(), vec![0.5, 0.5]);
    }

    #[test]
    fn pooled_variance_is_the_sample_variance() {
        // residuals 40 - 30 = 10 and 40 - 10 = 30: variance 200
        let mut e = ensemble_with(&[vec![30.0], vec![10.0]], &[0.5, 0.5]);
        let batch = ObservationBatch::new(0, vec![obs(0, 40.0)], &[1].into()).unwrap();
        let out = e
            .update_weights(
                &batch,
                &array(1),
                &LikelihoodSpec::default(),
                &ThresholdPolicy::default(),
            )
            .unwrap();
        assert_eq!(out.variance, 200.0);
        e.normalize_weights().unwrap();
        let ratio = (-(100.0 - 900.0) / 400.0f64).exp();
        assert!((e.weights()[0] - ratio / (1.0 + ratio)).abs() < 1e-12);
    }

    #[test]
    fn batch_rejects_test_lines() {
        let mut r = obs(0, 20.0);
        r.line = 3;
        assert!(ObservationBatch::new(0, vec![r], &[1, 2].into()).is_err());
        assert!(ObservationBatch::new(1, vec![obs(0, 20.0)], &[1].into()).is_err());
    }

    #[test]
    fn systematic_resampling_examples() {
        assert_eq!(systematic_indices(&[0.25; 4], 4, 0.37), vec![0, 1, 2, 3]);
        assert_eq!(systematic_indices(&[1.0, 0.0], 5, 0.9), vec![0; 5]);
        let mut e = ensemble_with(&[vec![1.0], vec![2.0], vec![3.0]], &[0.0, 1.0, 0.0]);
        e.resample(&mut ChaCha8Rng::seed_from_u64(4));
        assert!(e
            .particles
            .iter()
            .all(|p| p.doses == vec![2.0] && p.weight == 1.0 / 3.0));
        let streams: BTreeSet<u64> = e.particles.iter().map(|p| p.stream).collect();
        assert_eq!(streams, [3, 4, 5].into());
    }

    #[test]
    fn estimate_examples() {
        let e = ensemble_with(&[vec![100.0], vec![20.0]], &[0.25, 0.75]);
        assert_eq!(e.estimate_dose(0), 40.0);
        let e = ensemble_with(&vec![vec![40.0]; 4], &[0.25; 4]);
        assert_eq!(e.estimate_dose(0), 40.0);
        let e = ensemble_with(&[vec![7.0], vec![13.0]], &[0.0, 1.0]);
        assert_eq!(e.estimate_dose(0), 13.0);
    }

    fn weights_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 2..40).prop_filter("positive mass", |w| w.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn ess_within_bounds(raw in weights_strategy()) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let ess = effective_sample_size(&w);
            prop_assert!(ess >= 1.0 - 1e-12 && ess <= w.len() as f64 * (1.0 + 1e-12));
        }

        #[test]
        fn estimate_invariant_to_order_and_scale(
            raw in weights_strategy(), scale in 1e-3f64..1e3, seed in any::<u64>()
        ) {
            let doses: Vec<Vec<f64>> = (0..raw.len()).map(|i| vec![(i * 37 % 11) as f64 * 3.5]).collect();
            let mut a = ensemble_with(&doses, &raw);
            a.normalize_weights().unwrap();
            let scaled: Vec<f64> = raw.iter().map(|w| w * scale).collect();
            let mut b = ensemble_with(&doses, &scaled);
            use rand::seq::SliceRandom;
            b.particles.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            b.normalize_weights().unwrap();
            let (ea, eb) = (a.estimate_dose(0), b.estimate_dose(0));
            prop_assert!((ea - eb).abs() <= 1e-12 * ea.abs().max(1.0));
            let lo = doses.iter().map(|d| d[0]).fold(f64::MAX, f64::min);
            let hi = doses.iter().map(|d| d[0]).fold(f64::MIN, f64::max);
            prop_assert!(ea >= lo - 1e-9 && ea <= hi + 1e-9);
        }

        #[test]
        fn log_space_matches_direct_space(
            preds in prop::collection::vec(0.0f64..60.0, 2..12),
            observed in 10.0f64..60.0,
            var in 20.0f64..400.0,
        ) {
            let doses: Vec<Vec<f64>> = preds.iter().map(|&p| vec![p]).collect();
            let n = preds.len();
            let mut e = ensemble_with(&doses, &vec![1.0 / n as f64; n]);
            let batch = ObservationBatch::new(0, vec![obs(0, observed)], &[1].into()).unwrap();
            e.update_weights(&batch, &array(1), &LikelihoodSpec::fixed(var), &ThresholdPolicy::default()).unwrap();
            e.normalize_weights().unwrap();
            let direct: Vec<f64> = preds
                .iter()
                .map(|&p| {
                    let r = observed - p.max(1.0);
                    (1.0 / n as f64) * (-r * r / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt()
                })
                .collect();
            let total: f64 = direct.iter().sum();
            for (a, d) in e.weights().iter().zip(&direct) {
                prop_assert!((a - d / total).abs() <= 1e-10 * (d / total).max(1e-300));
            }
        }

        #[test]
        fn resampling_preserves_count_and_uniformizes(raw in weights_strategy(), offset in 0.0f64..1.0) {
            let picks = systematic_indices(&raw, raw.len(), offset);
            prop_assert_eq!(picks.len(), raw.len());
            prop_assert!(picks.windows(2).all(|w| w[0] <= w[1]));
            for &i in &picks {
                prop_assert!(raw[i] > 0.0);
            }
        }
    }
}
