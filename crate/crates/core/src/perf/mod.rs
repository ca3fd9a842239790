//! Analytical throughput, latency and resource models.

mod estimate;
mod platform;
mod resources;

pub use estimate::{
    combine_stages, estimate_reconfig_design, estimate_single_partition, estimate_weights_reloading_design,
    fill_cycles, initiation_interval, reconfig_stages, weights_reloading_stages, PerfEstimate, StageTiming,
};
pub use platform::{ClockSection, CostTable, MemorySection, PlatformError, PlatformSpec, ResourceSection, PLATFORM_FORMAT_VERSION};
pub use resources::{
    block_resources, check_feasible, estimate_reconfig_resources, estimate_reference_resources, estimate_resources,
    graph_bandwidth_gbps, Feasibility, ResourceUsage, Slack,
};
