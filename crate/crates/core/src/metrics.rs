//! Dispersion-model evaluation statistics and Monte Carlo confidence
//! intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sensors::DosePair;

/// Observed and predicted dosage after thresholds, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSample {
    pub observed: f64,
    pub predicted: f64,
}

impl From<&DosePair> for PairedSample {
    fn from(p: &DosePair) -> Self {
        Self {
            observed: p.observed,
            predicted: p.predicted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub fb: f64,
    pub mg: f64,
    pub nmse: f64,
    pub vg: f64,
    /// Fraction in [0, 1].
    pub fac2: f64,
    /// Fraction in [0, 1].
    pub fac3: f64,
    pub n: usize,
}

/// Row order of the evaluation table.
pub const METRIC_NAMES: [&str; 6] = ["FB", "MG", "NMSE", "VG", "FAC2", "FAC3"];

impl MetricReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 6] {
        [self.fb, self.mg, self.nmse, self.vg, self.fac2, self.fac3]
    }
}

pub fn compute_metrics(pairs: &[PairedSample]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("metrics", "no pairs to evaluate"));
    }
    if let Some(bad) = pairs
        .iter()
        .find(|p| !(p.observed > 0.0 && p.predicted > 0.0 && p.observed.is_finite() && p.predicted.is_finite()))
    {
        return Err(Error::invalid(
            "metrics",
            format!(
                "dosages must be positive, got observed {} predicted {}",
                bad.observed, bad.predicted
            ),
        ));
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&PairedSample) -> f64| pairs.iter().map(f).sum::<f64>() / n;

    let mean_o = mean(&|p| p.observed);
    let mean_p = mean(&|p| p.predicted);
    let mean_log_ratio = mean(&|p| p.observed.ln() - p.predicted.ln());
    let mean_sq_log_ratio = mean(&|p| (p.observed.ln() - p.predicted.ln()).powi(2));
    let mean_sq_err = mean(&|p| (p.observed - p.predicted).powi(2));
    let within = |factor: f64| {
        pairs
            .iter()
            .filter(|p| {
                let r = p.predicted / p.observed;
                r >= 1.0 / factor && r <= factor
            })
            .count() as f64
            / n
    };

    Ok(MetricReport {
        fb: (mean_o - mean_p) / (0.5 * (mean_o + mean_p)),
        mg: mean_log_ratio.exp(),
        nmse: mean_sq_err / (mean_o * mean_p),
        vg: mean_sq_log_ratio.exp(),
        fac2: within(2.0),
        fac3: within(3.0),
        n: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// mean +/- z * s / sqrt(n)
    #[default]
    Normal,
    /// Percentiles of bootstrap-resampled means.
    BootstrapPercentile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceInterval {
    pub statistic: String,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_ci_inputs(samples: &[f64], level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("confidence level", format!("{level} is outside (0, 1)")));
    }
    if samples.len() < 2 {
        return Err(Error::invalid("confidence interval", "need at least 2 samples"));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("confidence interval", "samples must be finite"));
    }
    Ok(())
}

/// Normal-approximation interval for the mean of `samples`.
pub fn confidence_interval(statistic: &str, samples: &[f64], level: f64) -> Result<ConfidenceInterval> {
    check_ci_inputs(samples, level)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * var.sqrt() / n.sqrt();
    Ok(ConfidenceInterval {
        statistic: statistic.to_owned(),
        point: mean,
        lower: mean - half,
        upper: mean + half,
    })
}

/// Percentile interval from `resamples` bootstrap means.
pub fn bootstrap_confidence_interval<R: Rng + ?Sized>(
    statistic: &str,
    samples: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<ConfidenceInterval> {
    check_ci_inputs(samples, level)?;
    if resamples < 2 {
        return Err(Error::invalid(
            "confidence interval",
            "need at least 2 bootstrap resamples",
        ));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(ConfidenceInterval {
        statistic: statistic.to_owned(),
        point: mean,
        lower: at(tail).min(mean),
        upper: at(1.0 - tail).max(mean),
    })
}
