//! CSV and manifest writers. Nothing here records wall-clock time or thread
//! counts, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assimilation::CycleDiagnostics;
use crate::error::Result;
use crate::sensors::DosePair;

use super::run::{ReportRow, SnapshotRow};

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DiagnosticsRow {
    k: usize,
    ess: f64,
    resampled: u8,
    underflow_flag: u8,
    min_w: f64,
    max_w: f64,
}

pub fn write_diagnostics_csv(path: &Path, diagnostics: &[CycleDiagnostics]) -> Result<()> {
    write_rows(
        path,
        diagnostics.iter().map(|d| DiagnosticsRow {
            k: d.k,
            ess: d.ess,
            resampled: d.resampled.into(),
            underflow_flag: d.underflow.into(),
            min_w: d.min_weight,
            max_w: d.max_weight,
        }),
    )
}

#[derive(Serialize)]
struct SnapshotCsvRow {
    k: usize,
    particle: usize,
    weight: f64,
    puff: usize,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    sigma_h_m: f64,
    sigma_z_m: f64,
}

pub fn write_snapshot_csv(path: &Path, rows: &[SnapshotRow]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|r| SnapshotCsvRow {
            k: r.k,
            particle: r.particle,
            weight: r.weight,
            puff: r.puff,
            x_m: r.x,
            y_m: r.y,
            z_m: r.z,
            sigma_h_m: r.sigma_h,
            sigma_z_m: r.sigma_z,
        }),
    )
}

#[derive(Serialize)]
struct ReportCsvRow<'a> {
    metric: &'a str,
    process_model: f64,
    particle_filter: f64,
    ci_lo: f64,
    ci_hi: f64,
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|r| ReportCsvRow {
            metric: r.metric,
            process_model: r.process_model,
            particle_filter: r.particle_filter,
            ci_lo: r.ci_lower,
            ci_hi: r.ci_upper,
        }),
    )
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    sampler_id: &'a str,
    window_k: usize,
    observed: f64,
    predicted: f64,
    source: &'a str,
}

/// Thresholded pairs, tagged by which prediction produced them.
pub fn write_scatter_csv<'a>(path: &Path, sets: impl IntoIterator<Item = (&'a str, &'a [DosePair])>) -> Result<()> {
    write_rows(
        path,
        sets.into_iter().flat_map(|(source, pairs)| {
            pairs.iter().map(move |p| ScatterRow {
                sampler_id: &p.sampler_id,
                window_k: p.window,
                observed: p.observed,
                predicted: p.predicted,
                source,
            })
        }),
    )
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub particles: usize,
    pub config_sha256: String,
    /// Input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, particles: usize, config_sha256: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            seed,
            particles,
            config_sha256,
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_owned(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}
