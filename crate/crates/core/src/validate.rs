//! Checks a design's analytical cycle count against the token simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dse::Strategy;
use crate::model::ConvNetModel;
use crate::perf::{PlatformSpec, StageTiming};
use crate::sdf::{workload_matrix, FoldingConfig, SdfGraph};
use crate::sim::{simulate_batch, SimConfig, SimError};
use crate::transforms::{derive_reference_architecture, partition_graph, TransformError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("stage {stage}: {source}")]
    Sim { stage: usize, source: SimError },
}

/// The graphs a design executes in order: partitions or weight modes.
pub fn design_graphs(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    cuts: &[usize],
    foldings: &FoldingConfig,
    strategy: Strategy,
) -> Result<Vec<SdfGraph>, TransformError> {
    let p = partition_graph(model, cuts, foldings, platform.mem_rate())?;
    Ok(match strategy {
        Strategy::Reconfiguration => p.subgraphs,
        Strategy::WeightsReloading => derive_reference_architecture(model, &p, platform.memory.word_bytes)?
            .modes
            .into_iter()
            .map(|m| m.graph)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCheck {
    pub blocks: usize,
    pub predicted_cycles: f64,
    pub simulated_cycles: u64,
    /// Every arc delivered exactly `B · W` tokens.
    pub tokens_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationCheck {
    pub batch: u64,
    pub stages: Vec<StageCheck>,
    pub predicted_cycles: f64,
    pub simulated_cycles: u64,
    /// `(predicted − simulated) / simulated`.
    pub relative_error: f64,
}

impl SimulationCheck {
    pub fn within(&self, tolerance: f64) -> bool {
        self.relative_error.abs() <= tolerance
    }
}

/// Simulates every stage of a design at batch `batch` and compares the
/// summed pipeline cycles with the estimator.
pub fn check_design(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    cuts: &[usize],
    foldings: &FoldingConfig,
    strategy: Strategy,
    batch: u64,
    cfg: &SimConfig,
) -> Result<SimulationCheck, ValidateError> {
    let batch = batch.max(1);
    let graphs = design_graphs(model, platform, cuts, foldings, strategy)?;
    let mut stages = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let w = workload_matrix(model, g);
        let predicted = StageTiming::of_graph(model, g, 0, 0.0).cycles(batch);
        let r = simulate_batch(g, &w, batch, cfg).map_err(|source| ValidateError::Sim { stage: i, source })?;
        let tokens_exact = r.arc_tokens.iter().zip(&w.arc_elements).all(|(&t, &e)| t == e * batch);
        stages.push(StageCheck {
            blocks: g.num_nodes(),
            predicted_cycles: predicted,
            simulated_cycles: r.total_cycles,
            tokens_exact,
        });
    }
    let predicted_cycles: f64 = stages.iter().map(|s| s.predicted_cycles).sum();
    let simulated_cycles: u64 = stages.iter().map(|s| s.simulated_cycles).sum();
    Ok(SimulationCheck {
        batch,
        stages,
        predicted_cycles,
        simulated_cycles,
        relative_error: (predicted_cycles - simulated_cycles as f64) / simulated_cycles.max(1) as f64,
    })
}
