//! Native JSON model format (`format: 1`).

use serde::{Deserialize, Serialize};

use super::{ConvNetModel, LayerKind, LayerSpec, ModelError, PoolOp, Shape};

pub const NATIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeDoc {
    format: u32,
    name: String,
    input: Shape,
    layers: Vec<NativeLayer>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeLayer {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_filters: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_op: Option<PoolOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fan_out: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dilation: Option<u64>,
}

impl NativeLayer {
    fn into_spec(self) -> Result<LayerSpec, ModelError> {
        let kind = LayerKind::from_name(&self.kind).ok_or_else(|| ModelError::UnknownKind(self.kind.clone()))?;
        let invalid = |message: &str| ModelError::InvalidParam {
            layer: self.id.clone(),
            message: message.into(),
        };
        if self.group.unwrap_or(1) != 1 {
            return Err(invalid("grouped convolution is not supported"));
        }
        if self.dilation.unwrap_or(1) != 1 {
            return Err(invalid("dilated convolution is not supported"));
        }
        let stride = self.stride.unwrap_or(1);
        let padding = self.padding.unwrap_or(0);
        let spec = match kind {
            LayerKind::Convolution => LayerSpec::convolution(
                self.id.clone(),
                self.kernel_size.ok_or_else(|| invalid("missing kernel_size"))?,
                stride,
                padding,
                self.num_filters.ok_or_else(|| invalid("missing num_filters"))?,
            ),
            LayerKind::Pooling => LayerSpec::pooling(
                self.id.clone(),
                self.pool_op.unwrap_or(PoolOp::Max),
                self.kernel_size.ok_or_else(|| invalid("missing kernel_size"))?,
                stride,
                padding,
            ),
            LayerKind::InnerProduct => LayerSpec::inner_product(
                self.id.clone(),
                self.num_filters.ok_or_else(|| invalid("missing num_filters"))?,
            ),
            LayerKind::Split => LayerSpec::split(self.id.clone(), self.fan_out.unwrap_or(0)),
            LayerKind::Nonlinearity => LayerSpec::relu(self.id.clone()),
            LayerKind::Concat => LayerSpec::concat(self.id.clone()),
            LayerKind::EltwiseAdd => LayerSpec::eltwise_add(self.id.clone()),
        };
        Ok(spec)
    }

    fn from_spec(l: &LayerSpec) -> Self {
        let windowed = matches!(l.kind, LayerKind::Convolution | LayerKind::Pooling);
        Self {
            id: l.id.clone(),
            kind: l.kind.name().to_string(),
            kernel_size: windowed.then_some(l.kernel_size),
            stride: windowed.then_some(l.stride),
            padding: windowed.then_some(l.padding),
            num_filters: matches!(l.kind, LayerKind::Convolution | LayerKind::InnerProduct)
                .then_some(l.num_filters),
            pool_op: l.pool_op.filter(|_| l.kind == LayerKind::Pooling),
            fan_out: (l.kind == LayerKind::Split).then_some(l.fan_out),
            group: None,
            dilation: None,
        }
    }
}

/// Parses and validates a native JSON model.
pub fn parse_native(text: &str) -> Result<ConvNetModel, ModelError> {
    let doc: NativeDoc = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.format != NATIVE_FORMAT_VERSION {
        return Err(ModelError::FormatVersion(doc.format));
    }
    let layers = doc
        .layers
        .into_iter()
        .map(NativeLayer::into_spec)
        .collect::<Result<Vec<_>, _>>()?;
    ConvNetModel::new(doc.name, doc.input, layers, doc.edges)
}

/// Serializes a model to the native format. Deterministic.
pub fn serialize_native(model: &ConvNetModel) -> String {
    let doc = NativeDoc {
        format: NATIVE_FORMAT_VERSION,
        name: model.name().to_string(),
        input: model.input_shape(),
        layers: model.layers().iter().map(NativeLayer::from_spec).collect(),
        edges: model
            .edges()
            .iter()
            .map(|&(a, b)| (model.layer(a).id.clone(), model.layer(b).id.clone()))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("native model serializes");
    s.push('\n');
    s
}
