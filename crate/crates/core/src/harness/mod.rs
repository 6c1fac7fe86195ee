//! Trial orchestration: scenario loading, twin experiments, filter runs,
//! Monte Carlo evaluation and output files.

pub mod output;
pub mod run;
pub mod scenario;

pub use run::{
    check_observations, forecast_equivalence, generate_twin_truth, run_assimilation, run_forecast, run_monte_carlo,
    truth_winds, Comparison, ForecastResult, MonteCarloResult, ReportRow, RunOptions, RunResult, SnapshotRow,
    TruthResult,
};
pub use scenario::{Scenario, ScenarioConfig, TruthConfig};
