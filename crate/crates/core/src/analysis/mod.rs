//! Metrics, theoretical error analysis, fitness-for-use budgets, synthetic
//! data and sweeps.

pub mod ffu;
pub mod generate;
pub mod metrics;
pub mod presets;
pub mod sweep;
pub mod theory;

pub use ffu::{apply_ffu_budgets, min_policy_for_ffu, FfuBudget, FfuResult};
pub use generate::{gen_business_data, gen_sim_data, BusinessParams, CategoryWeights};
pub use metrics::{
    are, metric_report, policy_cdf, query_rel_err, realized_loss, realized_losses, CdfSeries,
    MetricReport,
};
pub use presets::{ThresholdPreset, TopCodePreset};
pub use sweep::{run_sweep, SweepConfig, SweepResult};
pub use theory::{optimal_delta, theoretical_mse_ratio};
