//! ConvNet descriptions: layer DAG, validation and shape inference.
//!
//! A [`ConvNetModel`] is immutable once built. Construction validates the
//! graph (dangling edges, cycles, a single entry layer, fan-out only through
//! `Split`) and annotates every layer with its input/output tensor shape.

mod native;
mod prototxt;

pub use native::{parse_native, serialize_native, NATIVE_FORMAT_VERSION};
pub use prototxt::parse_prototxt;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported native format version {0}")]
    FormatVersion(u32),
    #[error("unknown layer kind `{0}`")]
    UnknownKind(String),
    #[error("unsupported layer type `{0}`")]
    UnsupportedLayer(String),
    #[error("layer `{layer}`: {message}")]
    InvalidParam { layer: String, message: String },
    #[error("duplicate layer id `{0}`")]
    DuplicateLayer(String),
    #[error("edge references undefined layer `{0}`")]
    DanglingEdge(String),
    #[error("cycle detected through layer `{0}`")]
    Cycle(String),
    #[error("model has no layers")]
    NoLayers,
    #[error("model must have exactly one input layer, found {0:?}")]
    InputLayers(Vec<String>),
    #[error("layer `{layer}` expects {expected} input(s), has {found}")]
    Arity {
        layer: String,
        expected: String,
        found: usize,
    },
    #[error("shape mismatch at layer `{layer}`: {message}")]
    ShapeMismatch { layer: String, message: String },
    #[error("layer `{0}` computes a non-positive output dimension")]
    NonPositiveDimension(String),
}

/// Tensor shape in elements: channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: u64,
    pub h: u64,
    pub w: u64,
}

impl Shape {
    pub const fn new(channels: u64, h: u64, w: u64) -> Self {
        Self { channels, h, w }
    }

    pub fn volume(&self) -> u64 {
        self.channels * self.h * self.w
    }

    fn is_positive(&self) -> bool {
        self.channels > 0 && self.h > 0 && self.w > 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Convolution,
    Pooling,
    Nonlinearity,
    InnerProduct,
    Split,
    Concat,
    EltwiseAdd,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Convolution => "Convolution",
            LayerKind::Pooling => "Pooling",
            LayerKind::Nonlinearity => "Nonlinearity",
            LayerKind::InnerProduct => "InnerProduct",
            LayerKind::Split => "Split",
            LayerKind::Concat => "Concat",
            LayerKind::EltwiseAdd => "EltwiseAdd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "Convolution" => LayerKind::Convolution,
            "Pooling" => LayerKind::Pooling,
            "Nonlinearity" => LayerKind::Nonlinearity,
            "InnerProduct" => LayerKind::InnerProduct,
            "Split" => LayerKind::Split,
            "Concat" => LayerKind::Concat,
            "EltwiseAdd" => LayerKind::EltwiseAdd,
            _ => return None,
        })
    }

    fn is_join(&self) -> bool {
        matches!(self, LayerKind::Concat | LayerKind::EltwiseAdd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolOp {
    Max,
    Avg,
}

/// One layer. Fields that do not apply to a kind are left at their neutral
/// values (kernel 1, stride 1, padding 0, filters 0, fan-out 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub kernel_size: u64,
    pub stride: u64,
    pub padding: u64,
    pub num_filters: u64,
    pub pool_op: Option<PoolOp>,
    pub fan_out: u64,
}

impl LayerSpec {
    fn bare(id: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            id: id.into(),
            kind,
            kernel_size: 1,
            stride: 1,
            padding: 0,
            num_filters: 0,
            pool_op: None,
            fan_out: 0,
        }
    }

    pub fn convolution(id: impl Into<String>, kernel: u64, stride: u64, padding: u64, filters: u64) -> Self {
        Self {
            kernel_size: kernel,
            stride,
            padding,
            num_filters: filters,
            ..Self::bare(id, LayerKind::Convolution)
        }
    }

    pub fn pooling(id: impl Into<String>, op: PoolOp, kernel: u64, stride: u64, padding: u64) -> Self {
        Self {
            kernel_size: kernel,
            stride,
            padding,
            pool_op: Some(op),
            ..Self::bare(id, LayerKind::Pooling)
        }
    }

    pub fn relu(id: impl Into<String>) -> Self {
        Self::bare(id, LayerKind::Nonlinearity)
    }

    pub fn inner_product(id: impl Into<String>, outputs: u64) -> Self {
        Self {
            num_filters: outputs,
            ..Self::bare(id, LayerKind::InnerProduct)
        }
    }

    pub fn split(id: impl Into<String>, fan_out: u64) -> Self {
        Self {
            fan_out,
            ..Self::bare(id, LayerKind::Split)
        }
    }

    pub fn concat(id: impl Into<String>) -> Self {
        Self::bare(id, LayerKind::Concat)
    }

    pub fn eltwise_add(id: impl Into<String>) -> Self {
        Self::bare(id, LayerKind::EltwiseAdd)
    }

    /// Number of weight elements (biases excluded).
    pub fn weight_elements(&self, input: &Shape) -> u64 {
        match self.kind {
            LayerKind::Convolution => self.kernel_size * self.kernel_size * input.channels * self.num_filters,
            LayerKind::InnerProduct => input.volume() * self.num_filters,
            _ => 0,
        }
    }

    fn check_params(&self) -> Result<(), ModelError> {
        let bad = |message: &str| {
            Err(ModelError::InvalidParam {
                layer: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("empty layer id");
        }
        match self.kind {
            LayerKind::Convolution | LayerKind::Pooling => {
                if self.kernel_size == 0 {
                    return bad("kernel_size must be >= 1");
                }
                if self.stride == 0 {
                    return bad("stride must be >= 1");
                }
                if self.kind == LayerKind::Convolution && self.num_filters == 0 {
                    return bad("num_filters must be >= 1");
                }
            }
            LayerKind::InnerProduct if self.num_filters == 0 => return bad("num_filters must be >= 1"),
            _ => {}
        }
        Ok(())
    }
}

/// Input/output shapes inferred for a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: Shape,
    pub output: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNetModel {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    /// Index pairs into `layers`, in declaration order.
    edges: Vec<(usize, usize)>,
    shapes: Vec<LayerShapes>,
}

impl ConvNetModel {
    /// Validates the DAG and infers shapes. Layers are reordered into a
    /// stable topological order (declaration order among ready layers).
    pub fn new(
        name: impl Into<String>,
        input_shape: Shape,
        layers: Vec<LayerSpec>,
        edges: Vec<(String, String)>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::NoLayers);
        }
        let mut index = HashMap::new();
        for (i, l) in layers.iter().enumerate() {
            l.check_params()?;
            if index.insert(l.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateLayer(l.id.clone()));
            }
        }
        let mut idx_edges = Vec::with_capacity(edges.len());
        for (from, to) in &edges {
            let a = *index.get(from).ok_or_else(|| ModelError::DanglingEdge(from.clone()))?;
            let b = *index.get(to).ok_or_else(|| ModelError::DanglingEdge(to.clone()))?;
            idx_edges.push((a, b));
        }

        let order = topological_order(layers.len(), &idx_edges)
            .map_err(|i| ModelError::Cycle(layers[i].id.clone()))?;
        let mut position = vec![0; layers.len()];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let mut slots: Vec<Option<LayerSpec>> = layers.into_iter().map(Some).collect();
        let layers: Vec<LayerSpec> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        let edges: Vec<(usize, usize)> = idx_edges
            .into_iter()
            .map(|(a, b)| (position[a], position[b]))
            .collect();

        let mut model = Self {
            name: name.into(),
            input_shape,
            layers,
            edges,
            shapes: Vec::new(),
        };
        model.check_structure()?;
        model.shapes = infer_shapes(&model)?;
        Ok(model)
    }

    fn check_structure(&mut self) -> Result<(), ModelError> {
        if !self.input_shape.is_positive() {
            return Err(ModelError::InvalidParam {
                layer: "<input>".into(),
                message: format!("input shape {} must be strictly positive", self.input_shape),
            });
        }
        let sources: Vec<String> = (0..self.layers.len())
            .filter(|&i| self.predecessors(i).is_empty())
            .map(|i| self.layers[i].id.clone())
            .collect();
        if sources.len() != 1 {
            return Err(ModelError::InputLayers(sources));
        }
        for i in 0..self.layers.len() {
            let layer = &self.layers[i];
            let ins = self.predecessors(i).len();
            let outs = self.successors(i).len();
            let in_ok = if i == 0 {
                ins == 0 && !layer.kind.is_join()
            } else if layer.kind.is_join() {
                ins >= 2
            } else {
                ins == 1
            };
            if !in_ok {
                let expected = if layer.kind.is_join() { ">= 2" } else if i == 0 { "0" } else { "1" };
                return Err(ModelError::Arity {
                    layer: layer.id.clone(),
                    expected: expected.into(),
                    found: ins,
                });
            }
            if layer.kind == LayerKind::Split {
                if outs == 0 {
                    return Err(ModelError::Arity {
                        layer: layer.id.clone(),
                        expected: ">= 1 consumer".into(),
                        found: 0,
                    });
                }
                if layer.fan_out == 0 {
                    self.layers[i].fan_out = outs as u64;
                } else if layer.fan_out != outs as u64 {
                    return Err(ModelError::InvalidParam {
                        layer: layer.id.clone(),
                        message: format!("fan_out {} but {} consumers", layer.fan_out, outs),
                    });
                }
            } else if outs > 1 {
                return Err(ModelError::InvalidParam {
                    layer: layer.id.clone(),
                    message: "multiple consumers require an explicit Split layer".into(),
                });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    /// Layers in topological order.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn layer(&self, i: usize) -> &LayerSpec {
        &self.layers[i]
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    pub fn shapes(&self, i: usize) -> LayerShapes {
        self.shapes[i]
    }

    /// Predecessors in edge declaration order (concat input order).
    pub fn predecessors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    pub fn successors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }

    /// Layers without consumers.
    pub fn outputs(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.successors(i).is_empty())
            .collect()
    }

    /// Total weight elements across all layers.
    pub fn weight_elements(&self) -> u64 {
        (0..self.layers.len())
            .map(|i| self.layers[i].weight_elements(&self.shapes[i].input))
            .sum()
    }

    /// Operations for one inference: two per MAC for convolution and
    /// inner-product layers, one per output element for the rest.
    pub fn layer_ops(&self, i: usize) -> u64 {
        let l = &self.layers[i];
        let s = self.shapes[i];
        match l.kind {
            LayerKind::Convolution => {
                2 * l.kernel_size * l.kernel_size * s.input.channels * s.output.volume()
            }
            LayerKind::InnerProduct => 2 * s.input.volume() * l.num_filters,
            LayerKind::Pooling | LayerKind::Nonlinearity | LayerKind::EltwiseAdd => s.output.volume(),
            LayerKind::Split | LayerKind::Concat => 0,
        }
    }

    pub fn total_ops(&self) -> u64 {
        (0..self.layers.len()).map(|i| self.layer_ops(i)).sum()
    }

    /// Shape summary lines, one per layer.
    pub fn summary_table(&self) -> String {
        let mut out = format!("model {} input {}\n", self.name, self.input_shape);
        out.push_str(&format!(
            "{:<24} {:<13} {:>18} {:>18}\n",
            "layer", "kind", "input", "output"
        ));
        for (i, l) in self.layers.iter().enumerate() {
            let s = self.shapes[i];
            out.push_str(&format!(
                "{:<24} {:<13} {:>18} {:>18}\n",
                l.id,
                l.kind.name(),
                s.input.to_string(),
                s.output.to_string()
            ));
        }
        out
    }
}

/// Kahn's algorithm, ties broken by original index. `Err` carries a layer
/// that sits on a cycle.
fn topological_order(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, usize> {
    let mut indeg = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        succ[a].push(b);
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).find(|&i| indeg[i] > 0).unwrap())
    }
}

fn window_out(input: u64, kernel: u64, stride: u64, pad: u64) -> Option<u64> {
    let padded = input + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Annotates every layer of a validated model with input/output shapes.
pub fn infer_shapes(model: &ConvNetModel) -> Result<Vec<LayerShapes>, ModelError> {
    let mut shapes: Vec<LayerShapes> = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        let preds = model.predecessors(i);
        let ins: Vec<Shape> = if preds.is_empty() {
            vec![model.input_shape]
        } else {
            preds.iter().map(|&p| shapes[p].output).collect()
        };
        let mismatch = |message: String| ModelError::ShapeMismatch {
            layer: l.id.clone(),
            message,
        };
        let input = match l.kind {
            LayerKind::Concat => {
                let first = ins[0];
                if ins.iter().any(|s| s.h != first.h || s.w != first.w) {
                    return Err(mismatch(format!("concat inputs disagree on spatial dims: {ins:?}")));
                }
                Shape::new(ins.iter().map(|s| s.channels).sum(), first.h, first.w)
            }
            LayerKind::EltwiseAdd => {
                if ins.iter().any(|s| *s != ins[0]) {
                    return Err(mismatch(format!("add inputs disagree: {ins:?}")));
                }
                ins[0]
            }
            _ => ins[0],
        };
        let output = match l.kind {
            LayerKind::Convolution | LayerKind::Pooling => {
                let oh = window_out(input.h, l.kernel_size, l.stride, l.padding);
                let ow = window_out(input.w, l.kernel_size, l.stride, l.padding);
                let channels = if l.kind == LayerKind::Convolution {
                    l.num_filters
                } else {
                    input.channels
                };
                match (oh, ow) {
                    (Some(h), Some(w)) if h > 0 && w > 0 => Shape::new(channels, h, w),
                    _ => return Err(ModelError::NonPositiveDimension(l.id.clone())),
                }
            }
            LayerKind::InnerProduct => Shape::new(l.num_filters, 1, 1),
            LayerKind::Nonlinearity | LayerKind::Split | LayerKind::Concat | LayerKind::EltwiseAdd => input,
        };
        // concat input shape is reported as the joined tensor
        shapes.push(LayerShapes { input, output });
    }
    Ok(shapes)
}

/// Per-layer shapes keyed by id, convenient for reports.
pub fn shape_map(model: &ConvNetModel) -> BTreeMap<String, LayerShapes> {
    model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.clone(), model.shapes[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(input: Shape, layers: Vec<LayerSpec>) -> Result<ConvNetModel, ModelError> {
        let edges = layers
            .windows(2)
            .map(|w| (w[0].id.clone(), w[1].id.clone()))
            .collect();
        ConvNetModel::new("t", input, layers, edges)
    }

    #[test]
    fn conv_output_shape() {
        let m = chain(Shape::new(3, 8, 8), vec![LayerSpec::convolution("c", 3, 1, 0, 4)]).unwrap();
        assert_eq!(m.shapes(0).output, Shape::new(4, 6, 6));
    }

    #[test]
    fn full_frame_kernel() {
        let m = chain(Shape::new(1, 5, 5), vec![LayerSpec::convolution("c", 5, 1, 0, 7)]).unwrap();
        assert_eq!(m.shapes(0).output, Shape::new(7, 1, 1));
    }

    #[test]
    fn alexnet_first_layer() {
        let m = chain(Shape::new(3, 224, 224), vec![LayerSpec::convolution("c", 11, 4, 0, 96)]).unwrap();
        assert_eq!(m.shapes(0).output, Shape::new(96, 54, 54));
    }

    #[test]
    fn kernel_larger_than_input() {
        let err = chain(Shape::new(1, 2, 2), vec![LayerSpec::convolution("big", 3, 1, 0, 1)]).unwrap_err();
        assert_eq!(err, ModelError::NonPositiveDimension("big".into()));
    }

    #[test]
    fn pooling_two_by_two() {
        let m = chain(
            Shape::new(1, 4, 4),
            vec![LayerSpec::pooling("p", PoolOp::Max, 2, 2, 0)],
        )
        .unwrap();
        assert_eq!(m.shapes(0).output, Shape::new(1, 2, 2));
    }

    #[test]
    fn split_concat_sums_channels() {
        let layers = vec![
            LayerSpec::split("s", 2),
            LayerSpec::convolution("a", 1, 1, 0, 3),
            LayerSpec::convolution("b", 3, 1, 1, 5),
            LayerSpec::concat("cat"),
        ];
        let edges = [("s", "a"), ("s", "b"), ("a", "cat"), ("b", "cat")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let m = ConvNetModel::new("inc", Shape::new(2, 6, 6), layers, edges).unwrap();
        let cat = m.layer_index("cat").unwrap();
        assert_eq!(m.shapes(cat).output, Shape::new(8, 6, 6));
    }

    #[test]
    fn add_rejects_mismatched_inputs() {
        let layers = vec![
            LayerSpec::split("s", 2),
            LayerSpec::convolution("a", 1, 1, 0, 3),
            LayerSpec::eltwise_add("add"),
        ];
        let edges = [("s", "a"), ("s", "add"), ("a", "add")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let err = ConvNetModel::new("res", Shape::new(2, 4, 4), layers, edges).unwrap_err();
        assert!(matches!(err, ModelError::ShapeMismatch { .. }));
    }

    #[test]
    fn cycle_is_reported() {
        let layers = vec![LayerSpec::relu("a"), LayerSpec::relu("b")];
        let edges = vec![("a".into(), "b".into()), ("b".into(), "a".into())];
        let err = ConvNetModel::new("cyc", Shape::new(1, 1, 1), layers, edges).unwrap_err();
        assert!(matches!(err, ModelError::Cycle(_)));
    }

    #[test]
    fn fan_out_needs_split() {
        let layers = vec![LayerSpec::relu("a"), LayerSpec::relu("b"), LayerSpec::relu("c")];
        let edges = vec![("a".into(), "b".into()), ("a".into(), "c".into())];
        assert!(ConvNetModel::new("f", Shape::new(1, 2, 2), layers, edges).is_err());
    }

    #[test]
    fn layers_are_topologically_reordered() {
        let layers = vec![LayerSpec::relu("b"), LayerSpec::relu("a")];
        let m = ConvNetModel::new("o", Shape::new(1, 2, 2), layers, vec![("a".into(), "b".into())]).unwrap();
        assert_eq!(m.layer(0).id, "a");
    }
}
