use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::{BlockKind, SdfGraph};
use crate::model::ConvNetModel;
use crate::rational::{rank, to_big, Rate};

/// Signed data rates, rows = arcs, columns = blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyMatrix {
    pub rows: Vec<Vec<Rate>>,
    pub num_nodes: usize,
}

impl TopologyMatrix {
    pub fn num_arcs(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, arc: usize, node: usize) -> Rate {
        self.rows[arc][node]
    }

    pub fn to_big(&self) -> Vec<Vec<BigRational>> {
        self.rows.iter().map(|r| r.iter().map(to_big).collect()).collect()
    }

    pub fn rank(&self) -> usize {
        rank(&self.to_big())
    }

    /// Every row holds exactly one positive and one negative entry.
    pub fn has_row_property(&self) -> bool {
        self.rows.iter().all(|r| {
            r.iter().filter(|x| x.is_positive()).count() == 1
                && r.iter().filter(|x| x.is_negative()).count() == 1
        })
    }

    /// Producer and consumer columns of an arc row.
    pub fn endpoints(&self, arc: usize) -> Option<(usize, usize)> {
        let row = &self.rows[arc];
        let p = row.iter().position(|x| x.is_positive())?;
        let c = row.iter().position(|x| x.is_negative())?;
        Some((p, c))
    }

    /// Builds a matrix from integer rows, for hand-written examples.
    pub fn from_integers(rows: &[&[i64]]) -> Self {
        let num_nodes = rows.first().map_or(0, |r| r.len());
        Self {
            rows: rows.iter().map(|r| r.iter().map(|&x| Rate::from_integer(x)).collect()).collect(),
            num_nodes,
        }
    }
}

pub fn topology_matrix(g: &SdfGraph) -> TopologyMatrix {
    let m = g.num_nodes();
    let rows = g
        .arcs
        .iter()
        .map(|a| {
            let mut row = vec![Rate::zero(); m];
            row[a.producer] = a.prod_rate;
            row[a.consumer] = -a.cons_rate;
            row
        })
        .collect();
    TopologyMatrix { rows, num_nodes: m }
}

/// Elements moved over each arc for one inference; the same value sits at
/// both endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadMatrix {
    pub arc_elements: Vec<u64>,
    pub endpoints: Vec<(usize, usize)>,
    pub num_nodes: usize,
}

impl WorkloadMatrix {
    /// Workload given explicitly per arc, for hand-built graphs.
    pub fn from_arc_elements(g: &SdfGraph, arc_elements: Vec<u64>) -> Self {
        assert_eq!(arc_elements.len(), g.num_arcs());
        Self {
            arc_elements,
            endpoints: g.arcs.iter().map(|a| (a.producer, a.consumer)).collect(),
            num_nodes: g.num_nodes(),
        }
    }

    pub fn entry(&self, arc: usize, node: usize) -> u64 {
        let (p, c) = self.endpoints[arc];
        if node == p || node == c {
            self.arc_elements[arc]
        } else {
            0
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.arc_elements.len())
            .map(|a| (0..self.num_nodes).map(|n| self.entry(a, n)).collect())
            .collect()
    }

    /// Total elements consumed by a block (sum over incoming arcs).
    pub fn w_in(&self, node: usize) -> u64 {
        self.endpoints
            .iter()
            .zip(&self.arc_elements)
            .filter(|((_, c), _)| *c == node)
            .map(|(_, w)| w)
            .sum()
    }

    /// Total elements produced by a block (sum over outgoing arcs).
    pub fn w_out(&self, node: usize) -> u64 {
        self.endpoints
            .iter()
            .zip(&self.arc_elements)
            .filter(|((p, _), _)| *p == node)
            .map(|(_, w)| w)
            .sum()
    }

    /// The same workload for `batch` back-to-back inputs.
    pub fn scaled(&self, batch: u64) -> Self {
        Self {
            arc_elements: self.arc_elements.iter().map(|w| w * batch).collect(),
            ..self.clone()
        }
    }
}

/// Per-arc workload of a lowered graph: each arc carries what its producer
/// emits for one inference. Independent of folding.
pub fn workload_matrix(model: &ConvNetModel, g: &SdfGraph) -> WorkloadMatrix {
    let arc_elements = g
        .arcs
        .iter()
        .map(|a| {
            let p = &g.blocks[a.producer];
            debug_assert!(
                p.kind == BlockKind::MemRead || model.layer_index(&p.layer_id).is_some(),
                "block {} does not belong to model {}",
                p.id,
                model.name()
            );
            p.output_elements()
        })
        .collect();
    WorkloadMatrix {
        arc_elements,
        endpoints: g.arcs.iter().map(|a| (a.producer, a.consumer)).collect(),
        num_nodes: g.num_nodes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerSpec, PoolOp, Shape};
    use crate::rational::rate;
    use crate::sdf::{lower_model, FoldingConfig};

    fn one_layer(layer: LayerSpec, input: Shape) -> (ConvNetModel, SdfGraph) {
        let m = ConvNetModel::new("t", input, vec![layer], vec![]).unwrap();
        let g = lower_model(&m, &FoldingConfig::new(), rate(2)).unwrap();
        (m, g)
    }

    #[test]
    fn conv_workloads() {
        let (m, g) = one_layer(LayerSpec::convolution("c", 3, 1, 0, 100), Shape::new(1, 8, 8));
        let w = workload_matrix(&m, &g);
        assert_eq!(w.arc_elements, vec![64, 36 * 9, 100 * 36 * 9, 100 * 36]);
    }

    #[test]
    fn pooling_output_arc() {
        let (m, g) = one_layer(LayerSpec::pooling("p", PoolOp::Max, 2, 2, 0), Shape::new(1, 4, 4));
        let w = workload_matrix(&m, &g);
        assert_eq!(*w.arc_elements.last().unwrap(), 4);
    }

    #[test]
    fn single_block_graph_gives_empty_matrix() {
        let b = crate::sdf::BuildingBlock::new("x", BlockKind::NonlinBank, "x", Shape::new(1, 1, 1), Shape::new(1, 1, 1));
        let g = SdfGraph::from_parts(vec![b], vec![], rate(2));
        let gamma = topology_matrix(&g);
        assert_eq!((gamma.num_arcs(), gamma.num_nodes), (0, 1));
    }
}
