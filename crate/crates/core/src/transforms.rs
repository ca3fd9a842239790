//! Folding, partitioning and reference-architecture derivation.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ConvNetModel;
use crate::rational::Rate;
use crate::sdf::{lower_layers, BlockKind, BuildingBlock, FoldingConfig, SdfError, SdfGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error(transparent)]
    Sdf(#[from] SdfError),
    #[error("cut point {0} is outside 1..{1}")]
    CutOutOfRange(usize, usize),
    #[error("cut points must be strictly increasing")]
    UnorderedCuts,
    #[error("cut point {position} crosses {crossing} edges; cuts are only allowed at single-edge frontiers")]
    InvalidCut { position: usize, crossing: usize },
    #[error("partitioning is empty")]
    EmptyPartitioning,
}

fn check_divides(block: &str, factor: u64, max: u64) -> Result<(), SdfError> {
    if factor == 0 || factor > max || max % factor != 0 {
        return Err(SdfError::Divisibility {
            block: block.to_string(),
            factor,
            max,
        });
    }
    Ok(())
}

/// The conv fork that feeds `bank`, if any. Its lane count mirrors the bank.
fn feeding_fork(g: &SdfGraph, bank: usize) -> Option<usize> {
    g.in_arcs(bank)
        .map(|a| g.arcs[a].producer)
        .find(|&p| g.blocks[p].kind == BlockKind::Fork && g.blocks[p].filters > 0)
}

fn refold(g: &SdfGraph, id: &str, update: impl FnOnce(&mut BuildingBlock) -> Result<(), SdfError>) -> Result<SdfGraph, SdfError> {
    let n = g.block_index(id).ok_or_else(|| SdfError::UnknownBlock(id.to_string()))?;
    let mut out = g.clone();
    update(&mut out.blocks[n])?;
    if out.blocks[n].kind == BlockKind::ConvBank {
        if let Some(fork) = feeding_fork(&out, n) {
            out.blocks[fork].coarse = out.blocks[n].coarse;
            out.blocks[fork].fine = out.blocks[n].fine;
            out.rederive_incident(fork);
        }
    }
    out.rederive_incident(n);
    Ok(out)
}

/// Instantiates `c` of the block's `c_max` parallel units.
pub fn set_coarse_folding(g: &SdfGraph, block_id: &str, c: u64) -> Result<SdfGraph, SdfError> {
    refold(g, block_id, |b| {
        check_divides(&b.id, c, b.coarse_max)?;
        b.coarse = c;
        Ok(())
    })
}

/// Instantiates `f` of the `K²` multipliers in each dot-product unit.
pub fn set_fine_folding(g: &SdfGraph, block_id: &str, f: u64) -> Result<SdfGraph, SdfError> {
    refold(g, block_id, |b| {
        if b.kind != BlockKind::ConvBank {
            return Err(SdfError::NotConvBank(b.id.clone()));
        }
        check_divides(&b.id, f, b.fine_max)?;
        b.fine = f;
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    /// Cut `k` separates the first `k` layers (topological order) from the rest.
    pub cut_points: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
    pub subgraphs: Vec<SdfGraph>,
}

/// Number of model edges crossing the frontier before layer `k`.
pub fn crossing_edges(model: &ConvNetModel, k: usize) -> usize {
    model.edges().iter().filter(|&&(a, b)| a < k && b >= k).count()
}

/// Cut positions where exactly one edge crosses.
pub fn valid_cut_positions(model: &ConvNetModel) -> Vec<usize> {
    (1..model.layers().len())
        .filter(|&k| crossing_edges(model, k) == 1)
        .collect()
}

/// Contiguous layer ranges induced by a cut set.
pub fn partition_ranges(model: &ConvNetModel, cut_points: &[usize]) -> Result<Vec<Range<usize>>, TransformError> {
    let l = model.layers().len();
    let mut prev = 0;
    let mut ranges = Vec::with_capacity(cut_points.len() + 1);
    for &k in cut_points {
        if k == 0 || k >= l {
            return Err(TransformError::CutOutOfRange(k, l));
        }
        if k <= prev {
            return Err(TransformError::UnorderedCuts);
        }
        let crossing = crossing_edges(model, k);
        if crossing != 1 {
            return Err(TransformError::InvalidCut { position: k, crossing });
        }
        ranges.push(prev..k);
        prev = k;
    }
    ranges.push(prev..l);
    Ok(ranges)
}

/// One MemRead/MemWrite-terminated subgraph per partition.
pub fn partition_graph(
    model: &ConvNetModel,
    cut_points: &[usize],
    config: &FoldingConfig,
    mem_rate: Rate,
) -> Result<Partitioning, TransformError> {
    let ranges = partition_ranges(model, cut_points)?;
    let subgraphs = ranges
        .iter()
        .map(|r| lower_layers(model, &r.clone().collect::<Vec<_>>(), config, mem_rate))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Partitioning {
        cut_points: cut_points.to_vec(),
        ranges,
        subgraphs,
    })
}

/// Envelope slot: the n-th block of a kind within a subgraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub kind: BlockKind,
    pub occurrence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeBlock {
    pub slot: Slot,
    pub coarse: u64,
    pub fine: u64,
    pub kernel: u64,
    pub channels: u64,
    pub row_width: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mode {
    pub layers: Range<usize>,
    pub graph: SdfGraph,
    /// Envelope slot bound to each block of `graph`.
    pub binding: Vec<usize>,
    pub weights_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceArchitecture {
    pub blocks: Vec<EnvelopeBlock>,
    pub modes: Vec<Mode>,
}

impl ReferenceArchitecture {
    /// Envelope as concrete blocks, for resource estimation.
    pub fn envelope_blocks(&self) -> Vec<BuildingBlock> {
        self.blocks
            .iter()
            .map(|e| {
                let id = format!("{}#{}", e.slot.kind, e.slot.occurrence);
                let shape = crate::model::Shape::new(e.channels, e.row_width, e.row_width);
                let mut b = BuildingBlock::new(id.clone(), e.slot.kind, id, shape, shape);
                b.coarse = e.coarse;
                b.coarse_max = e.coarse;
                b.fine = e.fine;
                b.fine_max = e.fine;
                b.kernel = e.kernel;
                b
            })
            .collect()
    }
}

fn slots_of(g: &SdfGraph) -> Vec<Slot> {
    let mut seen: BTreeMap<BlockKind, usize> = BTreeMap::new();
    g.blocks
        .iter()
        .map(|b| {
            let n = seen.entry(b.kind).or_insert(0);
            let slot = Slot {
                kind: b.kind,
                occurrence: *n,
            };
            *n += 1;
            slot
        })
        .collect()
}

/// One flexible architecture that runs every partition as a mode. Slots
/// missing from a shorter subgraph act as pass-through in that mode.
pub fn derive_reference_architecture(
    model: &ConvNetModel,
    p: &Partitioning,
    word_bytes: u64,
) -> Result<ReferenceArchitecture, TransformError> {
    if p.subgraphs.is_empty() {
        return Err(TransformError::EmptyPartitioning);
    }
    let mut envelope: BTreeMap<Slot, EnvelopeBlock> = BTreeMap::new();
    let slot_lists: Vec<Vec<Slot>> = p.subgraphs.iter().map(slots_of).collect();
    for (g, slots) in p.subgraphs.iter().zip(&slot_lists) {
        for (b, &slot) in g.blocks.iter().zip(slots) {
            let e = envelope.entry(slot).or_insert(EnvelopeBlock {
                slot,
                coarse: 0,
                fine: 0,
                kernel: 0,
                channels: 0,
                row_width: 0,
            });
            e.coarse = e.coarse.max(b.coarse);
            e.fine = e.fine.max(b.fine);
            e.kernel = e.kernel.max(b.kernel);
            e.channels = e.channels.max(b.input.channels);
            e.row_width = e.row_width.max(b.input.w);
        }
    }
    let index: BTreeMap<Slot, usize> = envelope.keys().enumerate().map(|(i, s)| (*s, i)).collect();
    let modes = p
        .subgraphs
        .iter()
        .zip(&slot_lists)
        .zip(&p.ranges)
        .map(|((g, slots), r)| Mode {
            layers: r.clone(),
            graph: g.clone(),
            binding: slots.iter().map(|s| index[s]).collect(),
            weights_bytes: r
                .clone()
                .map(|l| model.layer(l).weight_elements(&model.shapes(l).input))
                .sum::<u64>()
                * word_bytes,
        })
        .collect();
    Ok(ReferenceArchitecture {
        blocks: envelope.into_values().collect(),
        modes,
    })
}

/// Lazily yields cut sets by size, then lexicographically.
pub struct CutSets {
    positions: Vec<usize>,
    max_cuts: usize,
    size: usize,
    idx: Option<Vec<usize>>,
}

impl Iterator for CutSets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        loop {
            if self.size > self.max_cuts || self.size > self.positions.len() {
                return None;
            }
            let n = self.positions.len();
            let k = self.size;
            match &mut self.idx {
                None => self.idx = Some((0..k).collect()),
                Some(idx) => {
                    // advance to the next k-combination
                    let mut i = k;
                    let mut advanced = false;
                    while i > 0 {
                        i -= 1;
                        if idx[i] < n - k + i {
                            idx[i] += 1;
                            for j in i + 1..k {
                                idx[j] = idx[j - 1] + 1;
                            }
                            advanced = true;
                            break;
                        }
                    }
                    if !advanced {
                        self.size += 1;
                        self.idx = None;
                        continue;
                    }
                }
            }
            let idx = self.idx.as_ref().unwrap();
            return Some(idx.iter().map(|&i| self.positions[i]).collect());
        }
    }
}

/// All valid cut sets with at most `max_partitions` partitions.
pub fn enumerate_partitionings(model: &ConvNetModel, max_partitions: usize) -> CutSets {
    CutSets {
        positions: valid_cut_positions(model),
        max_cuts: max_partitions.saturating_sub(1),
        size: 0,
        idx: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerSpec, Shape};
    use crate::rational::{rate, ratio};
    use crate::sdf::{lower_model, topology_matrix, Folding};

    fn conv(k: u64, n: u64) -> ConvNetModel {
        ConvNetModel::new("c", Shape::new(1, 8, 8), vec![LayerSpec::convolution("conv", k, 1, 0, n)], vec![]).unwrap()
    }

    fn chain(n: usize) -> ConvNetModel {
        let layers = (0..n).map(|i| LayerSpec::convolution(format!("c{i}"), 3, 1, 1, 4)).collect();
        let edges = (1..n).map(|i| (format!("c{}", i - 1), format!("c{i}"))).collect();
        ConvNetModel::new("chain", Shape::new(4, 8, 8), layers, edges).unwrap()
    }

    #[test]
    fn coarse_one_gives_single_unit_rates() {
        let g = lower_model(&conv(3, 100), &FoldingConfig::new(), rate(2)).unwrap();
        let g = set_coarse_folding(&g, "conv/conv", 1).unwrap();
        let gamma = topology_matrix(&g);
        assert_eq!(gamma.rows[2][2..4], [rate(9), rate(-9)]);
        assert_eq!(gamma.rows[3][3], rate(1));
    }

    #[test]
    fn fine_and_coarse_combine() {
        let g = lower_model(&conv(3, 100), &FoldingConfig::new(), rate(2)).unwrap();
        let g = set_coarse_folding(&g, "conv/conv", 10).unwrap();
        let g = set_fine_folding(&g, "conv/conv", 3).unwrap();
        assert_eq!(topology_matrix(&g).rows[3][3], ratio(30, 9));
        assert_eq!(g.blocks[2].coarse * g.blocks[2].fine, 30);
    }

    #[test]
    fn folding_errors() {
        let g = lower_model(&conv(3, 100), &FoldingConfig::new(), rate(2)).unwrap();
        assert!(matches!(set_fine_folding(&g, "conv/sw", 1), Err(SdfError::NotConvBank(_))));
        assert!(matches!(set_fine_folding(&g, "conv/conv", 2), Err(SdfError::Divisibility { .. })));
        assert!(matches!(set_coarse_folding(&g, "nope", 1), Err(SdfError::UnknownBlock(_))));
    }

    #[test]
    fn chain_cut_in_half() {
        let p = partition_graph(&chain(4), &[2], &FoldingConfig::new(), rate(2)).unwrap();
        assert_eq!(p.ranges, vec![0..2, 2..4]);
        for g in &p.subgraphs {
            assert_eq!(g.blocks.first().unwrap().kind, BlockKind::MemRead);
            assert_eq!(g.blocks.last().unwrap().kind, BlockKind::MemWrite);
            assert_eq!(g.num_nodes(), 8);
        }
    }

    #[test]
    fn no_cut_is_identity() {
        let m = chain(3);
        let p = partition_graph(&m, &[], &FoldingConfig::new(), rate(2)).unwrap();
        assert_eq!(p.subgraphs, vec![lower_model(&m, &FoldingConfig::new(), rate(2)).unwrap()]);
    }

    #[test]
    fn enumeration_counts() {
        let sets: Vec<Vec<usize>> = enumerate_partitionings(&chain(3), 3).collect();
        assert_eq!(sets, vec![vec![], vec![1], vec![2], vec![1, 2]]);
        assert_eq!(enumerate_partitionings(&chain(6), 6).count(), 32);
        assert_eq!(enumerate_partitionings(&chain(6), 1).count(), 1);
    }

    #[test]
    fn envelope_takes_max() {
        let m = chain(2);
        let cfg = FoldingConfig::from([
            ("c0".to_string(), Folding::new(1, 9)),
            ("c1".to_string(), Folding::new(4, 3)),
        ]);
        let p = partition_graph(&m, &[1], &cfg, rate(2)).unwrap();
        let r = derive_reference_architecture(&m, &p, 2).unwrap();
        let bank = r.blocks.iter().find(|b| b.slot.kind == BlockKind::ConvBank).unwrap();
        assert_eq!((bank.coarse, bank.fine), (4, 9));
        assert_eq!(r.modes[0].weights_bytes, 2 * 9 * 4 * 4);
    }
}
