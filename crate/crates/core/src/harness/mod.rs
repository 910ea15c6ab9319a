//! Monte Carlo experiments: raked and learned-raked processes, rate and
//! variance diagnostics, the worked raked-mean example, and run outputs.

mod appendix;
mod output;
mod rates;
mod simulate;

pub use appendix::{
    appendix_a_loaded, appendix_a_scenario, appendix_a_truth, appendix_a_values, appendix_a_with_margins,
    AppendixAReport, Check, APPENDIX_A_CSV, APPENDIX_A_MARGIN_A, APPENDIX_A_MARGIN_B,
};
pub use output::{config_hash, read_deviation_csv, write_json, write_simulation, DeviationRow, Manifest};
pub use rates::{fit_line, rate_fit, rate_fit_deviations, variance_convergence, LineFit, MIN_VARIANCE_REPLICATES, RatePoint, RateReport, VarianceReport, VarianceRow};
pub use simulate::{simulate_processes, ExcludedCount, ExperimentConfig, ReplicateRecord, Simulation};
