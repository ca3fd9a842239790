//! Synchronous dataflow graphs of hardware building blocks.
//!
//! Every layer lowers to a short sequence of parametric blocks. Arcs carry
//! a production rate at the producer and a consumption rate at the consumer
//! (elements per cycle). Rates are derived from block parameters:
//!
//! * an arc out of `MemRead` runs at the memory port rate on the read side
//!   and one element per cycle on the compute side;
//! * an arc into `MemWrite` runs at the producer's rate and the port rate;
//! * an arc into a `ConvBank` or `PoolBank` runs at the bank's input rate on
//!   both ends (the feeding fork or window unit serves the bank's lanes);
//! * every other arc runs at the producer's output rate on both ends.
//!
//! Compute-to-compute arcs are therefore always balanced, which keeps the
//! topology matrix consistent for any DAG; only memory ports are unbalanced.

mod consistency;
mod export;
mod lower;
mod matrix;

pub use consistency::{check_consistency, spanning_tree_repetition, ConsistencyReport, RepetitionVector};
pub use export::{gamma_csv, to_dot, workload_csv};
pub use lower::{folding_limits, lower_layers, lower_model, Folding, FoldingConfig};
pub use matrix::{topology_matrix, workload_matrix, TopologyMatrix, WorkloadMatrix};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerKind, Shape};
use crate::rational::{rate, Rate};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SdfError {
    #[error("block `{block}`: factor {factor} does not divide {max}")]
    Divisibility { block: String, factor: u64, max: u64 },
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("unknown layer `{0}` in folding configuration")]
    UnknownLayer(String),
    #[error("block `{0}` has no fine-grained folding")]
    NotConvBank(String),
    #[error("layer set is empty")]
    EmptyLayerSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    MemRead,
    SlidingWindow,
    Fork,
    ConvBank,
    PoolBank,
    NonlinBank,
    ConcatJoin,
    EltwiseAddJoin,
    MemWrite,
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::MemRead => "MemRead",
            BlockKind::SlidingWindow => "SlidingWindow",
            BlockKind::Fork => "Fork",
            BlockKind::ConvBank => "ConvBank",
            BlockKind::PoolBank => "PoolBank",
            BlockKind::NonlinBank => "NonlinBank",
            BlockKind::ConcatJoin => "ConcatJoin",
            BlockKind::EltwiseAddJoin => "EltwiseAddJoin",
            BlockKind::MemWrite => "MemWrite",
        }
    }

    pub fn is_memory(&self) -> bool {
        matches!(self, BlockKind::MemRead | BlockKind::MemWrite)
    }

    /// Banks whose input arc rate they set themselves.
    fn owns_input_rate(&self) -> bool {
        matches!(self, BlockKind::ConvBank | BlockKind::PoolBank)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A parametric hardware stage.
///
/// `input`/`output` are the tensor shapes of the originating layer as seen
/// by this block; memory blocks carry the shape of the stream they move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub id: String,
    pub kind: BlockKind,
    pub layer_id: String,
    pub layer_kind: Option<LayerKind>,
    pub coarse: u64,
    pub coarse_max: u64,
    pub fine: u64,
    pub fine_max: u64,
    pub kernel: u64,
    pub filters: u64,
    pub input: Shape,
    pub output: Shape,
}

impl BuildingBlock {
    pub fn new(id: impl Into<String>, kind: BlockKind, layer_id: impl Into<String>, input: Shape, output: Shape) -> Self {
        Self {
            id: id.into(),
            kind,
            layer_id: layer_id.into(),
            layer_kind: None,
            coarse: 1,
            coarse_max: 1,
            fine: 1,
            fine_max: 1,
            kernel: 1,
            filters: 0,
            input,
            output,
        }
    }

    fn k2(&self) -> u64 {
        self.kernel * self.kernel
    }

    /// Elements this block emits on each outgoing arc for one inference.
    pub fn output_elements(&self) -> u64 {
        let (c, oh, ow) = (self.input.channels, self.output.h, self.output.w);
        match self.kind {
            BlockKind::MemRead => self.output.volume(),
            BlockKind::SlidingWindow => c * oh * ow * self.k2(),
            BlockKind::Fork if self.filters > 0 => self.filters * c * oh * ow * self.k2(),
            BlockKind::Fork => self.output.volume(),
            BlockKind::ConvBank
            | BlockKind::PoolBank
            | BlockKind::NonlinBank
            | BlockKind::ConcatJoin
            | BlockKind::EltwiseAddJoin => self.output.volume(),
            BlockKind::MemWrite => 0,
        }
    }

    /// Elements consumed over all incoming arcs for one inference.
    pub fn input_elements(&self, fan_in: u64) -> u64 {
        let (c, oh, ow) = (self.input.channels, self.output.h, self.output.w);
        match self.kind {
            BlockKind::MemRead => 0,
            BlockKind::SlidingWindow | BlockKind::NonlinBank | BlockKind::ConcatJoin => self.input.volume(),
            BlockKind::Fork if self.filters > 0 => c * oh * ow * self.k2(),
            BlockKind::Fork => self.input.volume(),
            BlockKind::ConvBank => self.filters * c * oh * ow * self.k2(),
            BlockKind::PoolBank => c * oh * ow * self.k2(),
            BlockKind::EltwiseAddJoin => fan_in * self.input.volume(),
            BlockKind::MemWrite => self.input.volume(),
        }
    }

    /// Output rate when the block sets the rate of its outgoing arcs.
    pub fn output_rate(&self) -> Rate {
        match self.kind {
            BlockKind::SlidingWindow => rate(self.k2() as i64),
            BlockKind::ConvBank => Rate::new((self.coarse * self.fine) as i64, self.k2() as i64),
            BlockKind::Fork if self.filters > 0 => rate((self.coarse * self.fine) as i64),
            BlockKind::Fork
            | BlockKind::PoolBank
            | BlockKind::NonlinBank
            | BlockKind::ConcatJoin
            | BlockKind::EltwiseAddJoin => rate(self.coarse as i64),
            BlockKind::MemRead | BlockKind::MemWrite => rate(1),
        }
    }

    /// Input rate for banks that set their own input arc rate.
    pub fn owned_input_rate(&self) -> Option<Rate> {
        match self.kind {
            BlockKind::ConvBank => Some(rate((self.coarse * self.fine) as i64)),
            BlockKind::PoolBank => Some(rate((self.coarse * self.k2()) as i64)),
            _ => None,
        }
    }

    pub fn is_foldable(&self) -> bool {
        self.coarse_max > 1 || self.fine_max > 1
    }
}

/// A directed arc with its two endpoint rates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdfArc {
    pub producer: usize,
    pub consumer: usize,
    pub prod_rate: Rate,
    pub cons_rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdfGraph {
    pub blocks: Vec<BuildingBlock>,
    pub arcs: Vec<SdfArc>,
    /// Off-chip words per cycle shared by all memory ports.
    pub mem_rate: Rate,
}

impl SdfGraph {
    /// A graph with explicit arc rates; used for hand-built graphs.
    pub fn from_parts(blocks: Vec<BuildingBlock>, arcs: Vec<SdfArc>, mem_rate: Rate) -> Self {
        Self { blocks, arcs, mem_rate }
    }

    pub fn block_index(&self, id: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }

    pub fn num_nodes(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn in_arcs(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arcs.len()).filter(move |&a| self.arcs[a].consumer == n)
    }

    pub fn out_arcs(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arcs.len()).filter(move |&a| self.arcs[a].producer == n)
    }

    pub fn memory_ports(&self) -> usize {
        self.blocks.iter().filter(|b| b.kind.is_memory()).count()
    }

    /// Rate granted to each memory port.
    pub fn port_rate(&self) -> Rate {
        let ports = self.memory_ports().max(1) as i64;
        self.mem_rate / ports
    }

    /// Recomputes every arc rate from block parameters.
    pub fn rederive_rates(&mut self) {
        for a in 0..self.arcs.len() {
            let (p, c) = self.derived_rates(a);
            self.arcs[a].prod_rate = p;
            self.arcs[a].cons_rate = c;
        }
    }

    /// Recomputes the rates of arcs incident to block `n`.
    pub fn rederive_incident(&mut self, n: usize) {
        for a in 0..self.arcs.len() {
            if self.arcs[a].producer == n || self.arcs[a].consumer == n {
                let (p, c) = self.derived_rates(a);
                self.arcs[a].prod_rate = p;
                self.arcs[a].cons_rate = c;
            }
        }
    }

    fn derived_rates(&self, a: usize) -> (Rate, Rate) {
        let arc = &self.arcs[a];
        let p = &self.blocks[arc.producer];
        let c = &self.blocks[arc.consumer];
        if p.kind == BlockKind::MemRead {
            return (self.port_rate(), rate(1));
        }
        let r = if c.kind.owns_input_rate() {
            c.owned_input_rate().unwrap()
        } else {
            p.output_rate()
        };
        if c.kind == BlockKind::MemWrite {
            (r, self.port_rate())
        } else {
            (r, r)
        }
    }

    /// Topological order of blocks (stable by index).
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.blocks.len();
        let mut indeg = vec![0usize; n];
        for a in &self.arcs {
            indeg[a.consumer] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for a in &self.arcs {
                if a.producer == i {
                    indeg[a.consumer] -= 1;
                    if indeg[a.consumer] == 0 {
                        ready.insert(a.consumer);
                    }
                }
            }
        }
        order
    }

    /// Blocks with a non-trivial folding range.
    pub fn foldable_blocks(&self) -> impl Iterator<Item = &BuildingBlock> {
        self.blocks.iter().filter(|b| b.is_foldable())
    }
}
