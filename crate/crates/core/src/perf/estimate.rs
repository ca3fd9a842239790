use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::PlatformSpec;
use crate::model::ConvNetModel;
use crate::rational::{ceil_u64, Rate};
use crate::sdf::{topology_matrix, workload_matrix, SdfGraph, TopologyMatrix, WorkloadMatrix};
use crate::transforms::{Partitioning, ReferenceArchitecture};

/// Steady-state cycles per input: the slowest arc endpoint, W / |Γ|.
pub fn initiation_interval(gamma: &TopologyMatrix, w: &WorkloadMatrix) -> Rate {
    let mut ii = Rate::zero();
    for (a, row) in gamma.rows.iter().enumerate() {
        for (n, r) in row.iter().enumerate() {
            if r.is_zero() {
                continue;
            }
            let t = Rate::from_integer(w.entry(a, n) as i64) / r.abs();
            if t > ii {
                ii = t;
            }
        }
    }
    ii
}

/// Pipeline fill, measured from the bottleneck: the cycle at which the
/// slowest arc endpoint starts streaming plus one cycle per hop from its
/// block to the furthest sink.
///
/// A block first fires once it holds the inputs its first output depends on
/// (`W_in / W_out` of each incoming stream) at its incoming rate; an input
/// endpoint starts when the first token arrives, an output endpoint when the
/// block first fires.
pub fn fill_cycles(g: &SdfGraph, w: &WorkloadMatrix) -> u64 {
    let n = g.num_nodes();
    let order = g.topological_order();
    let mut arrival = vec![0u64; n];
    let mut first_out = vec![0u64; n];
    for &b in &order {
        let ins: Vec<usize> = g.in_arcs(b).collect();
        if ins.is_empty() {
            continue;
        }
        arrival[b] = ins.iter().map(|&a| first_out[g.arcs[a].producer] + 1).max().unwrap();
        let delay = match g.out_arcs(b).map(|a| w.arc_elements[a]).min() {
            None => 0,
            Some(w_out) => ins
                .iter()
                .map(|&a| {
                    let need = w.arc_elements[a].div_ceil(w_out.max(1)).max(1);
                    let r = g.arcs[a].cons_rate.min(g.arcs[a].prod_rate);
                    ceil_u64(&(Rate::from_integer(need as i64) / r)).max(1) - 1
                })
                .max()
                .unwrap(),
        };
        first_out[b] = arrival[b] + delay;
    }
    let mut hops = vec![0u64; n];
    for &b in order.iter().rev() {
        hops[b] = g.out_arcs(b).map(|a| hops[g.arcs[a].consumer] + 1).max().unwrap_or(0);
    }
    let gamma = topology_matrix(g);
    let ii = initiation_interval(&gamma, w);
    let mut fill = 0;
    for (a, arc) in g.arcs.iter().enumerate() {
        let work = Rate::from_integer(w.arc_elements[a] as i64);
        if work / arc.prod_rate == ii {
            fill = fill.max(first_out[arc.producer] + hops[arc.producer]);
        }
        if work / arc.cons_rate == ii {
            fill = fill.max(arrival[arc.consumer] + hops[arc.consumer]);
        }
    }
    fill
}

/// One pipeline run: fill, II, and what precedes it (reconfiguration or
/// weights load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub fill: u64,
    pub ii: Rate,
    pub ops_per_input: u64,
    pub overhead_s: f64,
}

impl StageTiming {
    pub fn of_graph(model: &ConvNetModel, g: &SdfGraph, ops_per_input: u64, overhead_s: f64) -> Self {
        let w = workload_matrix(model, g);
        let gamma = topology_matrix(g);
        Self {
            fill: fill_cycles(g, &w),
            ii: initiation_interval(&gamma, &w),
            ops_per_input,
            overhead_s,
        }
    }

    /// `fill + B · II`.
    pub fn cycles(&self, batch: u64) -> f64 {
        self.fill as f64 + batch as f64 * self.ii.to_f64().unwrap_or(f64::INFINITY)
    }

    /// Wall time for `batch` inputs, never faster than the platform peak.
    pub fn time_s(&self, platform: &PlatformSpec, batch: u64) -> f64 {
        let compute = self.cycles(batch) / platform.clock_hz();
        let roofline = batch as f64 * self.ops_per_input as f64 / (platform.resources.peak_gops * 1e9);
        self.overhead_s + compute.max(roofline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfEstimate {
    pub batch: u64,
    /// Pipeline cycles for the whole batch, summed over stages.
    pub cycles: f64,
    pub cycles_per_input: f64,
    /// Batch-1 latency including reconfiguration or reload.
    pub latency_s: f64,
    pub batch_time_s: f64,
    pub throughput_inputs_s: f64,
    pub throughput_gops: f64,
}

/// Runs the stages back to back for a batch of `batch` inputs.
pub fn combine_stages(stages: &[StageTiming], platform: &PlatformSpec, batch: u64) -> PerfEstimate {
    let batch = batch.max(1);
    let time = |b: u64| stages.iter().map(|s| s.time_s(platform, b)).sum::<f64>();
    let cycles: f64 = stages.iter().map(|s| s.cycles(batch)).sum();
    let batch_time_s = time(batch);
    let ops: u64 = stages.iter().map(|s| s.ops_per_input).sum();
    let throughput_inputs_s = batch as f64 / batch_time_s;
    let gops = (throughput_inputs_s * ops as f64 / 1e9).min(platform.resources.peak_gops);
    PerfEstimate {
        batch,
        cycles,
        cycles_per_input: cycles / batch as f64,
        latency_s: time(1),
        batch_time_s,
        throughput_inputs_s,
        throughput_gops: gops,
    }
}

pub fn estimate_single_partition(
    g: &SdfGraph,
    gamma: &TopologyMatrix,
    w: &WorkloadMatrix,
    ops_per_input: u64,
    platform: &PlatformSpec,
    batch: u64,
) -> PerfEstimate {
    let stage = StageTiming {
        fill: fill_cycles(g, w),
        ii: initiation_interval(gamma, w),
        ops_per_input,
        overhead_s: 0.0,
    };
    combine_stages(&[stage], platform, batch)
}

fn range_ops(model: &ConvNetModel, r: &std::ops::Range<usize>) -> u64 {
    r.clone().map(|l| model.layer_ops(l)).sum()
}

pub fn reconfig_stages(model: &ConvNetModel, p: &Partitioning, platform: &PlatformSpec) -> Vec<StageTiming> {
    p.subgraphs
        .iter()
        .zip(&p.ranges)
        .map(|(g, r)| StageTiming::of_graph(model, g, range_ops(model, r), platform.reconfig_time_s()))
        .collect()
}

pub fn weights_reloading_stages(
    model: &ConvNetModel,
    arch: &ReferenceArchitecture,
    platform: &PlatformSpec,
) -> Vec<StageTiming> {
    arch.modes
        .iter()
        .map(|m| {
            let reload = m.weights_bytes as f64 / platform.bandwidth_bytes_s();
            StageTiming::of_graph(model, &m.graph, range_ops(model, &m.layers), reload)
        })
        .collect()
}

/// Every partition is a full-device configuration, loaded once per batch.
pub fn estimate_reconfig_design(
    model: &ConvNetModel,
    p: &Partitioning,
    platform: &PlatformSpec,
    batch: u64,
) -> PerfEstimate {
    combine_stages(&reconfig_stages(model, p, platform), platform, batch)
}

/// One architecture; each mode only reloads its weights.
pub fn estimate_weights_reloading_design(
    model: &ConvNetModel,
    arch: &ReferenceArchitecture,
    platform: &PlatformSpec,
    batch: u64,
) -> PerfEstimate {
    combine_stages(&weights_reloading_stages(model, arch, platform), platform, batch)
}
