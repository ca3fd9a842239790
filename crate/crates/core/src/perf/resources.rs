use std::fmt;

use serde::{Deserialize, Serialize};

use super::{initiation_interval, PlatformSpec};
use crate::model::ConvNetModel;
use crate::rational::to_f64;
use crate::sdf::{topology_matrix, workload_matrix, BlockKind, BuildingBlock, SdfGraph};
use crate::transforms::{Partitioning, ReferenceArchitecture};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceUsage {
    pub dsp: u64,
    pub bram_kb: f64,
    pub lut: u64,
    pub bandwidth_gbps: f64,
}

impl ResourceUsage {
    pub fn max(self, o: Self) -> Self {
        Self {
            dsp: self.dsp.max(o.dsp),
            bram_kb: self.bram_kb.max(o.bram_kb),
            lut: self.lut.max(o.lut),
            bandwidth_gbps: self.bandwidth_gbps.max(o.bandwidth_gbps),
        }
    }

    /// Scalar used to break ties between equally good designs.
    pub fn weight(&self, platform: &PlatformSpec) -> f64 {
        let frac = |used: f64, budget: f64| if budget > 0.0 { used / budget } else { used };
        frac(self.dsp as f64, platform.resources.dsp as f64)
            + frac(self.bram_kb, platform.resources.bram_kb)
            + frac(self.lut as f64, platform.resources.lut as f64)
            + frac(self.bandwidth_gbps, platform.memory.bandwidth_gbps)
    }
}

/// Parallel lanes a block instantiates.
fn lanes(b: &BuildingBlock) -> u64 {
    match b.kind {
        BlockKind::MemRead | BlockKind::MemWrite => 0,
        BlockKind::SlidingWindow => b.kernel * b.kernel,
        BlockKind::ConvBank => b.coarse * b.fine,
        BlockKind::Fork if b.filters > 0 => b.coarse * b.fine,
        _ => b.coarse,
    }
}

/// DSP, BRAM (KB) and LUT of one block.
pub fn block_resources(b: &BuildingBlock, platform: &PlatformSpec) -> (u64, f64, u64) {
    let cost = &platform.cost_table;
    let dsp = if b.kind == BlockKind::ConvBank {
        b.coarse * b.fine * cost.dsp_per_mac
    } else {
        0
    };
    let bram = if b.kind == BlockKind::SlidingWindow {
        (b.kernel.saturating_sub(1) * b.input.w * b.input.channels * platform.memory.word_bytes) as f64 / 1024.0
    } else {
        0.0
    };
    let lut = cost.lut_base(b.kind) + cost.lut_per_lane(b.kind) * lanes(b);
    (dsp, bram, lut)
}

fn sum_blocks<'a>(blocks: impl Iterator<Item = &'a BuildingBlock>, platform: &PlatformSpec) -> ResourceUsage {
    let mut u = ResourceUsage::default();
    for b in blocks {
        let (dsp, bram, lut) = block_resources(b, platform);
        u.dsp += dsp;
        u.bram_kb += bram;
        u.lut += lut;
    }
    u
}

/// Average off-chip traffic of a graph running at its II, in GB/s.
pub fn graph_bandwidth_gbps(model: &ConvNetModel, g: &SdfGraph, platform: &PlatformSpec) -> f64 {
    let w = workload_matrix(model, g);
    let ii = to_f64(&initiation_interval(&topology_matrix(g), &w));
    if ii <= 0.0 {
        return 0.0;
    }
    let words: u64 = g
        .arcs
        .iter()
        .enumerate()
        .filter(|(_, a)| g.blocks[a.producer].kind.is_memory() || g.blocks[a.consumer].kind.is_memory())
        .map(|(i, _)| w.arc_elements[i])
        .sum();
    words as f64 / ii * platform.memory.word_bytes as f64 * platform.clock_hz() / 1e9
}

pub fn estimate_resources(model: &ConvNetModel, g: &SdfGraph, platform: &PlatformSpec) -> ResourceUsage {
    ResourceUsage {
        bandwidth_gbps: graph_bandwidth_gbps(model, g, platform),
        ..sum_blocks(g.blocks.iter(), platform)
    }
}

/// Partitions occupy the device one at a time: the largest one counts.
pub fn estimate_reconfig_resources(model: &ConvNetModel, p: &Partitioning, platform: &PlatformSpec) -> ResourceUsage {
    p.subgraphs
        .iter()
        .map(|g| estimate_resources(model, g, platform))
        .fold(ResourceUsage::default(), ResourceUsage::max)
}

/// The envelope is built once; bandwidth is the busiest mode's.
pub fn estimate_reference_resources(
    model: &ConvNetModel,
    arch: &ReferenceArchitecture,
    platform: &PlatformSpec,
) -> ResourceUsage {
    let envelope = arch.envelope_blocks();
    let bandwidth = arch
        .modes
        .iter()
        .map(|m| graph_bandwidth_gbps(model, &m.graph, platform))
        .fold(0.0, f64::max);
    ResourceUsage {
        bandwidth_gbps: bandwidth,
        ..sum_blocks(envelope.iter(), platform)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub resource: String,
    pub used: f64,
    pub budget: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub slack: Vec<Slack>,
}

impl Feasibility {
    pub fn violations(&self) -> Vec<&str> {
        self.slack
            .iter()
            .filter(|s| s.slack < 0.0)
            .map(|s| s.resource.as_str())
            .collect()
    }
}

impl fmt::Display for Feasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", if self.feasible { "feasible" } else { "infeasible" })?;
        for s in &self.slack {
            writeln!(
                f,
                "  {:<15} used {:>12.3} budget {:>12.3} slack {:>12.3}{}",
                s.resource,
                s.used,
                s.budget,
                s.slack,
                if s.slack < 0.0 { "  EXCEEDED" } else { "" }
            )?;
        }
        Ok(())
    }
}

/// Budgets are inclusive: using exactly the budget is feasible.
pub fn check_feasible(usage: &ResourceUsage, platform: &PlatformSpec) -> Feasibility {
    let r = &platform.resources;
    let rows = [
        ("dsp", usage.dsp as f64, r.dsp as f64),
        ("bram_kb", usage.bram_kb, r.bram_kb),
        ("lut", usage.lut as f64, r.lut as f64),
        ("bandwidth_gbps", usage.bandwidth_gbps, platform.memory.bandwidth_gbps),
    ];
    let slack: Vec<Slack> = rows
        .iter()
        .map(|&(name, used, budget)| Slack {
            resource: name.to_string(),
            used,
            budget,
            // relative epsilon absorbs float noise in derived bandwidth
            slack: if used <= budget * (1.0 + 1e-9) { (budget - used).max(0.0) } else { budget - used },
        })
        .collect();
    Feasibility {
        feasible: slack.iter().all(|s| s.slack >= 0.0),
        slack,
    }
}
