//! Config-driven experiments and their reports.

mod config;
mod experiments;
pub mod registry;
mod report;

pub use config::{
    CellCounts, ExperimentConfig, ExperimentKind, MeshConfig, ProblemConfig, SolverConfig,
    Thresholds,
};
pub use experiments::{
    gate, run_case, run_decomp_check, run_eps_sweep, run_experiment, run_experiment_dumping,
    run_h2_indicator_sweep, run_h_sweep_uniform, run_validate, solve_on, Problem, SolvedCase,
    DECOMP_TARGETS, DEFAULT_DECOMP_TOLERANCE, DEFAULT_H2_RATIO_MAX, FLOOR_FACTOR, H2_EPS_MIN,
    SYMMETRY_TOL,
};
pub use report::{write_report, write_summary, CaseResult, QuantityFit, RateReport, PRIMARY_ERROR};
