//! Bag-sampler lines, dosage records and the observation thresholds.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::puff::{accumulate_dose, ConcentrationSeries};

/// One whole-air sampler. Its bags cover consecutive assimilation windows
/// `first_window .. first_window + bag_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub id: String,
    pub line: u32,
    pub position: Point3,
    pub first_window: usize,
    pub bag_count: usize,
}

impl Sampler {
    pub fn samples_window(&self, k: usize) -> bool {
        (self.first_window..self.first_window + self.bag_count).contains(&k)
    }

    pub fn windows(&self) -> std::ops::Range<usize> {
        self.first_window..self.first_window + self.bag_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerArray {
    pub samplers: Vec<Sampler>,
    /// Bag duration, seconds; equal to the assimilation cadence.
    pub bag_duration: f64,
}

impl SamplerArray {
    pub fn len(&self) -> usize {
        self.samplers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samplers.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.samplers.iter().position(|s| s.id == id)
    }

    pub fn lines(&self) -> BTreeSet<u32> {
        self.samplers.iter().map(|s| s.line).collect()
    }

    /// `[start, end]` of window `k`, seconds.
    pub fn window_bounds(&self, k: usize) -> (f64, f64) {
        (k as f64 * self.bag_duration, (k + 1) as f64 * self.bag_duration)
    }

    /// Total number of windows any sampler collects in.
    pub fn window_count(&self) -> usize {
        self.samplers
            .iter()
            .map(|s| s.first_window + s.bag_count)
            .max()
            .unwrap_or(0)
    }
}

/// A straight line of evenly spaced samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub index: u32,
    /// Position of the first sampler.
    pub anchor_x_m: f64,
    pub anchor_y_m: f64,
    /// Compass bearing along which the line runs from its anchor.
    pub heading_deg: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    #[serde(default)]
    pub delay_s: f64,
}

fn default_count() -> usize {
    30
}
fn default_spacing() -> f64 {
    250.0
}
fn default_height() -> f64 {
    1.5
}
fn default_bags() -> usize {
    12
}
fn default_bag_duration() -> f64 {
    900.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_height")]
    pub height_m: f64,
    #[serde(default = "default_bags")]
    pub bags: usize,
    #[serde(default = "default_bag_duration")]
    pub bag_duration_s: f64,
    #[serde(rename = "line")]
    pub lines: Vec<LineConfig>,
    /// Optional `sampler_id,line,x_m,y_m,z_m` file overriding line geometry.
    /// Per-line delays still come from `lines`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct SamplerRow {
    sampler_id: String,
    line: u32,
    x_m: f64,
    y_m: f64,
    z_m: f64,
}

/// Places samplers along configured lines (or reads them from
/// `config.file`, resolved against `base_dir`) and assigns bag schedules.
pub fn build_sampler_lines(config: &SamplerConfig, base_dir: &Path) -> Result<SamplerArray> {
    if !(config.bag_duration_s.is_finite() && config.bag_duration_s > 0.0) {
        return Err(Error::invalid("samplers", "bag duration must be > 0"));
    }
    if config.bags == 0 {
        return Err(Error::invalid("samplers", "bag count must be >= 1"));
    }
    let mut delays = std::collections::BTreeMap::new();
    for line in &config.lines {
        let windows = line.delay_s / config.bag_duration_s;
        if !(line.delay_s >= 0.0 && windows.fract() == 0.0) {
            return Err(Error::invalid(
                "samplers",
                format!(
                    "line {} delay {} s is not a non-negative multiple of the bag duration",
                    line.index, line.delay_s
                ),
            ));
        }
        if delays.insert(line.index, windows as usize).is_some() {
            return Err(Error::invalid("samplers", format!("line {} defined twice", line.index)));
        }
    }

    let mut samplers = Vec::new();
    if let Some(file) = &config.file {
        let path = base_dir.join(file);
        let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Config {
            path: path.clone(),
            message: e.to_string(),
        })?;
        for record in reader.deserialize::<SamplerRow>() {
            let row = record.map_err(|e| Error::Data {
                path: path.clone(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let Some(&first_window) = delays.get(&row.line) else {
                return Err(Error::Data {
                    path: path.clone(),
                    line: samplers.len() as u64 + 2,
                    message: format!("line {} has no [[samplers.line]] entry", row.line),
                });
            };
            samplers.push(Sampler {
                id: row.sampler_id,
                line: row.line,
                position: Point3::new(row.x_m, row.y_m, row.z_m),
                first_window,
                bag_count: config.bags,
            });
        }
    } else {
        for line in &config.lines {
            if !(line.spacing_m.is_finite() && line.spacing_m > 0.0) && line.count > 1 {
                return Err(Error::invalid(
                    "samplers",
                    format!("line {} spacing must be > 0", line.index),
                ));
            }
            let (sin, cos) = line.heading_deg.to_radians().sin_cos();
            for n in 0..line.count {
                let along = n as f64 * line.spacing_m;
                samplers.push(Sampler {
                    id: format!("L{}-{:02}", line.index, n + 1),
                    line: line.index,
                    position: Point3::new(
                        line.anchor_x_m + along * sin,
                        line.anchor_y_m + along * cos,
                        config.height_m,
                    ),
                    first_window: delays[&line.index],
                    bag_count: config.bags,
                });
            }
        }
    }

    let mut ids = BTreeSet::new();
    for (i, a) in samplers.iter().enumerate() {
        if !ids.insert(a.id.as_str()) {
            return Err(Error::invalid("samplers", format!("duplicate sampler id {}", a.id)));
        }
        for b in &samplers[i + 1..] {
            let d = ((a.position.x - b.position.x).powi(2)
                + (a.position.y - b.position.y).powi(2)
                + (a.position.z - b.position.z).powi(2))
            .sqrt();
            if d < 1e-3 {
                return Err(Error::invalid(
                    "samplers",
                    format!("samplers {} and {} overlap", a.id, b.id),
                ));
            }
        }
    }
    Ok(SamplerArray {
        samplers,
        bag_duration: config.bag_duration_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseKind {
    Observed,
    Predicted,
}

/// A bag dosage at one sampler for assimilation window `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseRecord {
    pub sampler_id: String,
    pub line: u32,
    pub window: usize,
    /// ppt-hr
    pub dose: f64,
    pub kind: DoseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    /// Predicted dosages below this are raised to it, ppt-hr.
    pub predicted_floor: f64,
    /// Observed dosages strictly below this are discarded, ppt-hr.
    pub observed_cutoff: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            predicted_floor: 1.0,
            observed_cutoff: 10.0,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.predicted_floor > 0.0 && self.observed_cutoff > self.predicted_floor) {
            return Err(Error::invalid(
                "thresholds",
                format!(
                    "need 0 < floor < cutoff, got floor {} and cutoff {}",
                    self.predicted_floor, self.observed_cutoff
                ),
            ));
        }
        Ok(())
    }

    pub fn keeps_observed(&self, observed: f64) -> bool {
        observed >= self.observed_cutoff
    }

    pub fn floor_predicted(&self, predicted: f64) -> f64 {
        predicted.max(self.predicted_floor)
    }
}

/// Observed and predicted dosage at the same sampler and window.
#[derive(Debug, Clone, PartialEq)]
pub struct DosePair {
    pub sampler_id: String,
    pub line: u32,
    pub window: usize,
    pub observed: f64,
    pub predicted: f64,
}

/// Drops pairs whose observation falls below the cutoff and floors the
/// remaining predictions. Order is preserved.
pub fn apply_thresholds(pairs: &[DosePair], policy: &ThresholdPolicy) -> Vec<DosePair> {
    pairs
        .iter()
        .filter(|p| policy.keeps_observed(p.observed))
        .map(|p| DosePair {
            predicted: policy.floor_predicted(p.predicted),
            ..p.clone()
        })
        .collect()
}

/// Joins observed and predicted records on `(sampler_id, window)`.
/// Observations without a matching prediction are skipped.
pub fn pair_records(observed: &[DoseRecord], predicted: &[DoseRecord]) -> Vec<DosePair> {
    let index: std::collections::HashMap<(&str, usize), f64> = predicted
        .iter()
        .map(|r| ((r.sampler_id.as_str(), r.window), r.dose))
        .collect();
    observed
        .iter()
        .filter_map(|o| {
            index.get(&(o.sampler_id.as_str(), o.window)).map(|&p| DosePair {
                sampler_id: o.sampler_id.clone(),
                line: o.line,
                window: o.window,
                observed: o.dose,
                predicted: p,
            })
        })
        .collect()
}

/// Synthesizes bag readings from truth concentration series, one series per
/// sampler in array order, with multiplicative Gaussian noise.
pub fn observe<R: Rng + ?Sized>(
    truth: &[ConcentrationSeries],
    array: &SamplerArray,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<DoseRecord>> {
    if truth.len() != array.len() {
        return Err(Error::invalid(
            "observation",
            format!("{} series for {} samplers", truth.len(), array.len()),
        ));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid("observation", "noise sigma must be >= 0"));
    }
    let mut out = Vec::with_capacity(array.len() * 12);
    for (sampler, series) in array.samplers.iter().zip(truth) {
        for k in sampler.windows() {
            let (start, end) = array.window_bounds(k);
            let dose = accumulate_dose(series, start, end)?;
            let z: f64 = rng.sample(StandardNormal);
            out.push(DoseRecord {
                sampler_id: sampler.id.clone(),
                line: sampler.line,
                window: k,
                dose: (dose * (1.0 + noise_sigma * z)).max(0.0),
                kind: DoseKind::Observed,
            });
        }
    }
    Ok(out)
}

/// Partitions records by line. A line listed in both sets trains.
pub fn split_train_test(
    records: &[DoseRecord],
    train_lines: &BTreeSet<u32>,
    test_lines: &BTreeSet<u32>,
) -> Result<(Vec<DoseRecord>, Vec<DoseRecord>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in records {
        if train_lines.contains(&r.line) {
            train.push(r.clone());
        } else if test_lines.contains(&r.line) {
            test.push(r.clone());
        } else {
            return Err(Error::UnknownLine(r.sampler_id.clone()));
        }
    }
    Ok((train, test))
}

#[derive(Debug, Serialize, Deserialize)]
struct DoseRow {
    sampler_id: String,
    line: u32,
    window_k: usize,
    dose_ppt_hr: f64,
}

/// Reads `sampler_id,line,window_k,dose_ppt_hr`.
pub fn read_dose_csv(path: &Path, kind: DoseKind) -> Result<Vec<DoseRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for record in reader.deserialize::<DoseRow>() {
        let row = record.map_err(|e| Error::Data {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !(row.dose_ppt_hr.is_finite() && row.dose_ppt_hr >= 0.0) {
            return Err(Error::Data {
                path: path.to_owned(),
                line: out.len() as u64 + 2,
                message: format!("dose {} must be >= 0", row.dose_ppt_hr),
            });
        }
        out.push(DoseRecord {
            sampler_id: row.sampler_id,
            line: row.line,
            window: row.window_k,
            dose: row.dose_ppt_hr,
            kind,
        });
    }
    Ok(out)
}

pub fn write_dose_csv<'a>(path: &Path, records: impl IntoIterator<Item = &'a DoseRecord>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(DoseRow {
            sampler_id: r.sampler_id.clone(),
            line: r.line,
            window_k: r.window,
            dose_ppt_hr: r.dose,
        })?;
    }
    w.flush()?;
    Ok(())
}
