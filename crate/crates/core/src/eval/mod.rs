//! Similarity metrics between real and synthetic corpora, and baselines.

pub mod baselines;
pub mod histogram;
pub mod metrics;
pub mod report;

pub use baselines::{mmc_baseline, random_walk_baseline, MarkovChain};
pub use histogram::{jsd, Histogram};
pub use metrics::{
    connectivity, gravity_distribution, jsd_gravity, jsd_od, od_distribution, query_error, query_error_at, radius_distribution, radius_of_gyration, trip_length,
    trip_length_distribution,
};
pub use report::{evaluate, report, EvalConfig, MetricRow, MetricsReport, ReportOutput};
