//! Routing metrics over trace files: expert specialization, directional
//! co-activation and router saturation. Shared experts never appear in
//! traces, so every metric is over routed selections only.

mod metrics;
mod series;
mod traces;

pub use metrics::{
    coactivation, coactivation_heatmap, saturation, specialization, top_specialized_tokens,
    Heatmap, PairCounts,
};
pub use series::{series, Gap, Metric, SeriesRow, SeriesTable};
pub use traces::TraceSet;
