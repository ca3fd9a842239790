use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BlockKind, BuildingBlock, SdfArc, SdfError, SdfGraph};
use crate::model::{ConvNetModel, LayerKind, Shape};
use crate::rational::{rate, Rate};

/// Coarse (`c` parallel units) and fine (`f` multipliers per dot product)
/// folding of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Folding {
    pub coarse: u64,
    pub fine: u64,
}

impl Folding {
    pub const fn new(coarse: u64, fine: u64) -> Self {
        Self { coarse, fine }
    }
}

/// Per-layer folding choices; layers not listed are fully unfolded.
pub type FoldingConfig = BTreeMap<String, Folding>;

/// Lowers the whole model as one partition.
pub fn lower_model(model: &ConvNetModel, config: &FoldingConfig, mem_rate: Rate) -> Result<SdfGraph, SdfError> {
    let all: Vec<usize> = (0..model.layers().len()).collect();
    lower_layers(model, &all, config, mem_rate)
}

/// Lowers a set of layers (indices in topological order) into one subgraph.
/// Streams entering from outside the set get a `MemRead`; streams leaving it
/// (and model outputs) get a `MemWrite`.
pub fn lower_layers(
    model: &ConvNetModel,
    layers: &[usize],
    config: &FoldingConfig,
    mem_rate: Rate,
) -> Result<SdfGraph, SdfError> {
    if layers.is_empty() {
        return Err(SdfError::EmptyLayerSet);
    }
    for id in config.keys() {
        if model.layer_index(id).is_none() {
            return Err(SdfError::UnknownLayer(id.clone()));
        }
    }
    let inside = |i: usize| layers.contains(&i);
    let mut blocks: Vec<BuildingBlock> = Vec::new();
    let mut arcs: Vec<(usize, usize)> = Vec::new();

    // Memory reads first, one per external input stream.
    let mut reads: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    for &l in layers {
        let preds = model.predecessors(l);
        let sources: Vec<Option<usize>> = if preds.is_empty() {
            vec![None]
        } else {
            preds.into_iter().filter(|&p| !inside(p)).map(Some).collect()
        };
        for s in sources {
            if reads.contains_key(&s) {
                continue;
            }
            let (shape, tag) = match s {
                None => (model.input_shape(), "input".to_string()),
                Some(p) => (model.shapes(p).output, model.layer(p).id.clone()),
            };
            reads.insert(s, blocks.len());
            blocks.push(BuildingBlock::new(format!("mem_read:{tag}"), BlockKind::MemRead, tag, shape, shape));
        }
    }

    let mut entry = BTreeMap::new();
    let mut exit = BTreeMap::new();
    for &l in layers {
        let first = blocks.len();
        push_layer_blocks(model, l, config, &mut blocks)?;
        let last = blocks.len() - 1;
        entry.insert(l, first);
        exit.insert(l, last);
        let preds = model.predecessors(l);
        if preds.is_empty() {
            arcs.push((reads[&None], first));
        }
        for p in preds {
            let from = if inside(p) { exit[&p] } else { reads[&Some(p)] };
            arcs.push((from, first));
        }
        for b in first..last {
            arcs.push((b, b + 1));
        }
    }

    for &l in layers {
        let succ = model.successors(l);
        if succ.is_empty() || succ.iter().any(|&s| !inside(s)) {
            let shape = model.shapes(l).output;
            let id = model.layer(l).id.clone();
            let w = blocks.len();
            blocks.push(BuildingBlock::new(format!("mem_write:{id}"), BlockKind::MemWrite, id, shape, shape));
            arcs.push((exit[&l], w));
        }
    }

    let mut g = SdfGraph {
        blocks,
        arcs: arcs
            .into_iter()
            .map(|(producer, consumer)| SdfArc {
                producer,
                consumer,
                prod_rate: rate(1),
                cons_rate: rate(1),
            })
            .collect(),
        mem_rate,
    };
    g.rederive_rates();
    Ok(g)
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

fn push_layer_blocks(
    model: &ConvNetModel,
    l: usize,
    config: &FoldingConfig,
    blocks: &mut Vec<BuildingBlock>,
) -> Result<(), SdfError> {
    let layer = model.layer(l);
    let shapes = model.shapes(l);
    let id = &layer.id;
    let folding = config.get(id).copied();
    let mk = |suffix: &str, kind: BlockKind, input: Shape, output: Shape| {
        let mut b = BuildingBlock::new(format!("{id}/{suffix}"), kind, id.clone(), input, output);
        b.layer_kind = Some(layer.kind);
        b
    };
    // Applies the layer's folding to its foldable block.
    let fold = |mut b: BuildingBlock, coarse_max: u64, fine_max: u64| -> Result<BuildingBlock, SdfError> {
        b.coarse_max = coarse_max;
        b.fine_max = fine_max;
        let f = folding.unwrap_or(Folding::new(coarse_max, fine_max));
        check_divides(&b.id, f.coarse, coarse_max)?;
        check_divides(&b.id, f.fine, fine_max)?;
        b.coarse = f.coarse;
        b.fine = f.fine;
        Ok(b)
    };
    match layer.kind {
        LayerKind::Convolution | LayerKind::InnerProduct => {
            let (input, output, kernel) = if layer.kind == LayerKind::InnerProduct {
                (Shape::new(shapes.input.volume(), 1, 1), shapes.output, 1)
            } else {
                (shapes.input, shapes.output, layer.kernel_size)
            };
            let k2 = kernel * kernel;
            let mut sw = mk("sw", BlockKind::SlidingWindow, input, output);
            sw.kernel = kernel;
            let mut fork = mk("fork", BlockKind::Fork, input, output);
            fork.kernel = kernel;
            fork.filters = layer.num_filters;
            let mut bank = mk("conv", BlockKind::ConvBank, input, output);
            bank.kernel = kernel;
            bank.filters = layer.num_filters;
            let bank = fold(bank, layer.num_filters, k2)?;
            fork.coarse = bank.coarse;
            fork.fine = bank.fine;
            blocks.extend([sw, fork, bank]);
        }
        LayerKind::Pooling => {
            let mut sw = mk("sw", BlockKind::SlidingWindow, shapes.input, shapes.output);
            sw.kernel = layer.kernel_size;
            let mut bank = mk("pool", BlockKind::PoolBank, shapes.input, shapes.output);
            bank.kernel = layer.kernel_size;
            let bank = fold(bank, shapes.input.channels, 1)?;
            blocks.extend([sw, bank]);
        }
        LayerKind::Nonlinearity => {
            let b = mk("relu", BlockKind::NonlinBank, shapes.input, shapes.output);
            blocks.push(fold(b, shapes.input.channels, 1)?);
        }
        LayerKind::Split => {
            let b = mk("fork", BlockKind::Fork, shapes.input, shapes.output);
            blocks.push(fold(b, shapes.input.channels, 1)?);
        }
        LayerKind::Concat => {
            let b = mk("concat", BlockKind::ConcatJoin, shapes.input, shapes.output);
            blocks.push(fold(b, shapes.output.channels, 1)?);
        }
        LayerKind::EltwiseAdd => {
            let b = mk("add", BlockKind::EltwiseAddJoin, shapes.input, shapes.output);
            blocks.push(fold(b, shapes.output.channels, 1)?);
        }
    }
    Ok(())
}

/// Maximum (coarse, fine) factors of a layer's foldable block.
pub fn folding_limits(model: &ConvNetModel, l: usize) -> (u64, u64) {
    let layer = model.layer(l);
    let s = model.shapes(l);
    match layer.kind {
        LayerKind::Convolution => (layer.num_filters, layer.kernel_size * layer.kernel_size),
        LayerKind::InnerProduct => (layer.num_filters, 1),
        LayerKind::Pooling | LayerKind::Nonlinearity | LayerKind::Split => (s.input.channels, 1),
        LayerKind::Concat | LayerKind::EltwiseAdd => (s.output.channels, 1),
    }
}
