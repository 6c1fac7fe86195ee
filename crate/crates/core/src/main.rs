use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use plume_pf::harness::output::{
    write_diagnostics_csv, write_report_csv, write_scatter_csv, write_snapshot_csv, RunManifest,
};
use plume_pf::harness::{
    forecast_equivalence, generate_twin_truth, run_assimilation, run_forecast, run_monte_carlo, RunOptions, Scenario,
};
use plume_pf::metrics::{compute_metrics, MetricReport, PairedSample, METRIC_NAMES};
use plume_pf::sensors::{apply_thresholds, pair_records, read_dose_csv, write_dose_csv, DoseKind};
use plume_pf::windfield::write_wind_csv;
use plume_pf::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Gaussian-puff dispersion with particle-filter dosage assimilation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Overrides the filter seed from the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the particle count from the scenario.
    #[arg(long, global = true)]
    particles: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Nominal process-model run.
    Forecast { scenario: PathBuf },
    /// Twin-experiment truth and synthetic observations.
    Truth { scenario: PathBuf },
    /// One particle-filter run against an observation file.
    Assimilate {
        scenario: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        /// Also dump per-particle puff states every cycle.
        #[arg(long)]
        snapshot: bool,
    },
    /// Repeated filter runs with derived seeds, summarized with confidence intervals.
    Mc {
        scenario: PathBuf,
        /// Defaults to synthetic truth from the scenario's truth section.
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Metrics over an observed and a predicted dosage file.
    Evaluate {
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        predicted_floor: f64,
        #[arg(long, default_value_t = 10.0)]
        observed_cutoff: f64,
    },
    /// Checks a scenario and that the filter reproduces the forecast without noise.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.global.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Error::Runtime(e.to_string())),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load(path: &Path, global: &Global) -> Result<Scenario> {
    let mut scenario = Scenario::load(path)?;
    let filter = &mut scenario.config.filter;
    if let Some(seed) = global.seed {
        filter.seed = seed;
    }
    if let Some(n) = global.particles {
        if n < 2 {
            return Err(Error::Invalid {
                what: "--particles",
                reason: "need at least 2 particles".into(),
            });
        }
        filter.particles = n;
    }
    Ok(scenario)
}

fn manifest(command: &str, scenario: &Scenario, path: &Path) -> Result<RunManifest> {
    let f = &scenario.config.filter;
    let mut m = RunManifest::new(command, f.seed, f.particles, scenario.config.hash());
    m.add_input("scenario", path)?;
    m.add_input("winds", &scenario.base_dir.join(&scenario.config.wind.file))?;
    Ok(m)
}

fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let out = &g.out_dir;
    match &cli.command {
        Command::Validate { scenario: path } => {
            let scenario = load(path, g)?;
            let dev = forecast_equivalence(&scenario)?;
            if dev > 1e-9 {
                return Err(Error::Runtime(format!(
                    "filter without noise deviates from the forecast by {dev:e}"
                )));
            }
            println!(
                "{}: ok ({} samplers, {} windows, config sha256 {})",
                path.display(),
                scenario.array.len(),
                scenario.window_count(),
                scenario.config.hash()
            );
            Ok(())
        }
        Command::Forecast { scenario: path } => {
            let scenario = load(path, g)?;
            std::fs::create_dir_all(out)?;
            let forecast = run_forecast(&scenario)?;
            write_dose_csv(&out.join("forecast.csv"), &forecast.doses)?;
            manifest("forecast", &scenario, path)?.write(&out.join("manifest.toml"))
        }
        Command::Truth { scenario: path } => {
            let scenario = load(path, g)?;
            std::fs::create_dir_all(out)?;
            let truth = generate_twin_truth(&scenario, &scenario.config.truth)?;
            write_dose_csv(&out.join("observations.csv"), &truth.observations)?;
            write_dose_csv(&out.join("true_doses.csv"), &truth.true_doses)?;
            write_wind_csv(&out.join("truth_winds.csv"), truth.winds.all())?;
            let mut m = manifest("truth", &scenario, path)?;
            m.seed = scenario.config.truth.seed;
            m.write(&out.join("manifest.toml"))
        }
        Command::Assimilate {
            scenario: path,
            observations,
            snapshot,
        } => {
            let scenario = load(path, g)?;
            let obs = read_dose_csv(observations, DoseKind::Observed)?;
            std::fs::create_dir_all(out)?;
            let options = RunOptions {
                snapshot: *snapshot,
                ..RunOptions::from_scenario(&scenario)
            };
            let run = run_assimilation(&scenario, &obs, &options)?;
            write_dose_csv(&out.join("forecast.csv"), &run.forecast)?;
            write_dose_csv(&out.join("estimates.csv"), &run.estimates)?;
            write_diagnostics_csv(&out.join("diagnostics.csv"), &run.diagnostics)?;
            if *snapshot {
                write_snapshot_csv(&out.join("snapshots.csv"), &run.snapshots)?;
            }
            let mut scatter = Vec::new();
            let mut rows = Vec::new();
            for (set, cmp) in [("train", &run.train), ("test", &run.test)] {
                match cmp {
                    Some(c) => {
                        scatter.push((format!("process_model_{set}"), c.forecast_pairs.as_slice()));
                        scatter.push((format!("particle_filter_{set}"), c.filter_pairs.as_slice()));
                        rows.extend(metric_rows(set, "process_model", &c.forecast));
                        rows.extend(metric_rows(set, "particle_filter", &c.filter));
                    }
                    None => warn!("no {set}-line observation reaches the cutoff"),
                }
            }
            write_scatter_csv(
                &out.join("scatter.csv"),
                scatter.iter().map(|(tag, p)| (tag.as_str(), *p)),
            )?;
            write_csv(&out.join("metrics.csv"), &rows)?;
            let resampled = run.diagnostics.iter().filter(|d| d.resampled).count();
            info!("{resampled} of {} cycles resampled", run.diagnostics.len());
            let mut m = manifest("assimilate", &scenario, path)?;
            m.add_input("observations", observations)?;
            m.write(&out.join("manifest.toml"))
        }
        Command::Mc {
            scenario: path,
            observations,
            runs,
        } => {
            let scenario = load(path, g)?;
            let obs = match observations {
                Some(p) => read_dose_csv(p, DoseKind::Observed)?,
                None => generate_twin_truth(&scenario, &scenario.config.truth)?.observations,
            };
            std::fs::create_dir_all(out)?;
            let runs = runs.unwrap_or(scenario.config.evaluation.runs);
            let mc = run_monte_carlo(&scenario, &obs, runs)?;
            write_report_csv(&out.join("report.csv"), &mc.rows())?;
            let per_run: Vec<RunRow> = mc
                .runs
                .iter()
                .zip(&mc.run_seeds)
                .enumerate()
                .map(|(r, (m, &seed))| RunRow::new(r, seed, m))
                .collect();
            write_csv(&out.join("runs.csv"), &per_run)?;
            for row in mc.rows() {
                println!(
                    "{:<5} {:>12.4} {:>12.4}  [{:.4}, {:.4}]",
                    row.metric, row.process_model, row.particle_filter, row.ci_lower, row.ci_upper
                );
            }
            let mut m = manifest("mc", &scenario, path)?;
            if let Some(p) = observations {
                m.add_input("observations", p)?;
            }
            m.write(&out.join("manifest.toml"))
        }
        Command::Evaluate {
            observed,
            predicted,
            predicted_floor,
            observed_cutoff,
        } => {
            let policy = plume_pf::sensors::ThresholdPolicy {
                predicted_floor: *predicted_floor,
                observed_cutoff: *observed_cutoff,
            };
            policy.validate()?;
            let obs = read_dose_csv(observed, DoseKind::Observed)?;
            let pred = read_dose_csv(predicted, DoseKind::Predicted)?;
            let pairs = apply_thresholds(&pair_records(&obs, &pred), &policy);
            let samples: Vec<PairedSample> = pairs.iter().map(PairedSample::from).collect();
            let report = compute_metrics(&samples)?;
            std::fs::create_dir_all(out)?;
            let rows = metric_rows("all", "predicted", &report);
            write_csv(&out.join("metrics.csv"), &rows)?;
            write_scatter_csv(&out.join("scatter.csv"), [("predicted", pairs.as_slice())])?;
            for r in &rows {
                println!("{:<5} {:>12.4}", r.metric, r.value);
            }
            println!("n     {:>12}", report.n);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MetricRow {
    set: &'static str,
    source: &'static str,
    metric: &'static str,
    value: f64,
    n: usize,
}

fn metric_rows(set: &'static str, source: &'static str, m: &MetricReport) -> Vec<MetricRow> {
    METRIC_NAMES
        .iter()
        .zip(m.values())
        .map(|(&metric, v)| MetricRow {
            set,
            source,
            metric,
            value: if metric.starts_with("FAC") { v * 100.0 } else { v },
            n: m.n,
        })
        .collect()
}

#[derive(Serialize)]
struct RunRow {
    run: usize,
    seed: u64,
    fb: f64,
    mg: f64,
    nmse: f64,
    vg: f64,
    fac2: f64,
    fac3: f64,
    n: usize,
}

impl RunRow {
    fn new(run: usize, seed: u64, m: &MetricReport) -> Self {
        Self {
            run,
            seed,
            fb: m.fb,
            mg: m.mg,
            nmse: m.nmse,
            vg: m.vg,
            fac2: m.fac2 * 100.0,
            fac3: m.fac3 * 100.0,
            n: m.n,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
