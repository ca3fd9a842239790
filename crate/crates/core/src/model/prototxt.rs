//! Caffe prototxt subset.
//!
//! Supported layer types: `Input`, `Convolution`, `Pooling`, `ReLU`,
//! `InnerProduct`, `Concat`, `Eltwise` (SUM) and `Split`. A blob read by more
//! than one layer gets an explicit `Split` layer named `<producer>_split`.
//! In-place layers (`top == bottom`) are chained through blob versioning.

use std::collections::HashMap;

use super::{ConvNetModel, LayerSpec, ModelError, PoolOp, Shape};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Colon,
    Open,
    Close,
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, Pos)>, ModelError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1, 1);
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, column };
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        match c {
            c if c.is_whitespace() => {
                bump(&mut chars);
            }
            '#' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump(&mut chars);
                }
            }
            ':' => {
                bump(&mut chars);
                out.push((Tok::Colon, pos));
            }
            '{' => {
                bump(&mut chars);
                out.push((Tok::Open, pos));
            }
            '}' => {
                bump(&mut chars);
                out.push((Tok::Close, pos));
            }
            '"' | '\'' => {
                let quote = bump(&mut chars);
                let mut s = String::new();
                loop {
                    match chars.peek() {
                        None | Some('\n') => return Err(syntax(pos, "unterminated string")),
                        Some(&q) if q == quote => {
                            bump(&mut chars);
                            break;
                        }
                        Some(_) => s.push(bump(&mut chars)),
                    }
                }
                out.push((Tok::Str(s), pos));
            }
            c if c.is_alphanumeric() || "_-+.".contains(c) => {
                let mut s = String::new();
                while chars.peek().is_some_and(|&c| c.is_alphanumeric() || "_-+.".contains(c)) {
                    s.push(bump(&mut chars));
                }
                out.push((Tok::Word(s), pos));
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Value {
    Scalar(String),
    Block(Vec<Field>),
}

#[derive(Debug, Clone)]
struct Field {
    key: String,
    value: Value,
    pos: Pos,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    eof: Pos,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, Pos)> {
        self.toks.get(self.at)
    }

    fn fields(&mut self, nested: Option<Pos>) -> Result<Vec<Field>, ModelError> {
        let mut fields = Vec::new();
        loop {
            let Some((tok, pos)) = self.peek().cloned() else {
                return match nested {
                    Some(open) => Err(syntax(open, "unclosed `{` block")),
                    None => Ok(fields),
                };
            };
            self.at += 1;
            let key = match tok {
                Tok::Close if nested.is_some() => return Ok(fields),
                Tok::Word(w) => w,
                other => return Err(syntax(pos, format!("expected a field name, found {other:?}"))),
            };
            let mut next = self.peek().cloned();
            if matches!(next, Some((Tok::Colon, _))) {
                self.at += 1;
                next = self.peek().cloned();
            }
            match next {
                Some((Tok::Open, open)) => {
                    self.at += 1;
                    let inner = self.fields(Some(open))?;
                    fields.push(Field { key, value: Value::Block(inner), pos });
                }
                Some((Tok::Word(v), _)) | Some((Tok::Str(v), _)) => {
                    self.at += 1;
                    fields.push(Field { key, value: Value::Scalar(v), pos });
                }
                Some((_, p)) => return Err(syntax(p, format!("malformed value for `{key}`"))),
                None => return Err(syntax(self.eof, format!("missing value for `{key}`"))),
            }
        }
    }
}

fn scalar<'a>(fields: &'a [Field], key: &str) -> Option<(&'a str, Pos)> {
    fields.iter().find_map(|f| match &f.value {
        Value::Scalar(s) if f.key == key => Some((s.as_str(), f.pos)),
        _ => None,
    })
}

fn scalars<'a>(fields: &'a [Field], key: &str) -> Vec<&'a str> {
    fields
        .iter()
        .filter_map(|f| match &f.value {
            Value::Scalar(s) if f.key == key => Some(s.as_str()),
            _ => None,
        })
        .collect()
}

fn block<'a>(fields: &'a [Field], key: &str) -> Option<&'a [Field]> {
    fields.iter().find_map(|f| match &f.value {
        Value::Block(b) if f.key == key => Some(b.as_slice()),
        _ => None,
    })
}

fn uint(fields: &[Field], key: &str) -> Result<Option<u64>, ModelError> {
    match scalar(fields, key) {
        None => Ok(None),
        Some((s, pos)) => s
            .parse::<u64>()
            .map(Some)
            .map_err(|_| syntax(pos, format!("`{key}` expects a non-negative integer, got `{s}`"))),
    }
}

/// A layer block after interpretation, before blob resolution.
struct RawLayer {
    spec: LayerSpec,
    bottoms: Vec<String>,
    tops: Vec<String>,
}

fn reject_fields(layer: &str, params: &[Field], keys: &[&str]) -> Result<(), ModelError> {
    for key in keys {
        if params.iter().any(|f| f.key == *key) {
            return Err(ModelError::InvalidParam {
                layer: layer.into(),
                message: format!("field `{key}` is not supported"),
            });
        }
    }
    Ok(())
}

fn interpret_layer(fields: &[Field], pos: Pos) -> Result<Option<RawLayer>, ModelError> {
    let name = scalar(fields, "name")
        .map(|(s, _)| s.to_string())
        .ok_or_else(|| syntax(pos, "layer without `name`"))?;
    let (ty, _) = scalar(fields, "type").ok_or_else(|| syntax(pos, format!("layer `{name}` without `type`")))?;
    let bottoms: Vec<String> = scalars(fields, "bottom").into_iter().map(String::from).collect();
    let tops: Vec<String> = scalars(fields, "top").into_iter().map(String::from).collect();
    let invalid = |message: String| ModelError::InvalidParam {
        layer: name.clone(),
        message,
    };
    let empty: &[Field] = &[];
    let spec = match ty {
        "Input" => return Ok(None),
        "Convolution" => {
            let p = block(fields, "convolution_param").unwrap_or(empty);
            reject_fields(&name, p, &["kernel_h", "kernel_w", "stride_h", "stride_w", "pad_h", "pad_w"])?;
            if uint(p, "group")?.unwrap_or(1) != 1 {
                return Err(invalid("grouped convolution is not supported".into()));
            }
            if uint(p, "dilation")?.unwrap_or(1) != 1 {
                return Err(invalid("dilated convolution is not supported".into()));
            }
            let filters = uint(p, "num_output")?.ok_or_else(|| invalid("missing num_output".into()))?;
            let kernel = uint(p, "kernel_size")?.ok_or_else(|| invalid("missing kernel_size".into()))?;
            LayerSpec::convolution(
                name.clone(),
                kernel,
                uint(p, "stride")?.unwrap_or(1),
                uint(p, "pad")?.unwrap_or(0),
                filters,
            )
        }
        "Pooling" => {
            let p = block(fields, "pooling_param").unwrap_or(empty);
            reject_fields(&name, p, &["kernel_h", "kernel_w", "stride_h", "stride_w", "pad_h", "pad_w", "global_pooling"])?;
            let op = match scalar(p, "pool").map(|(s, _)| s) {
                None | Some("MAX") => PoolOp::Max,
                Some("AVE") => PoolOp::Avg,
                Some(other) => return Err(invalid(format!("pooling method `{other}` is not supported"))),
            };
            let kernel = uint(p, "kernel_size")?.ok_or_else(|| invalid("missing kernel_size".into()))?;
            LayerSpec::pooling(
                name.clone(),
                op,
                kernel,
                uint(p, "stride")?.unwrap_or(1),
                uint(p, "pad")?.unwrap_or(0),
            )
        }
        "ReLU" => LayerSpec::relu(name.clone()),
        "InnerProduct" => {
            let p = block(fields, "inner_product_param").unwrap_or(empty);
            let outputs = uint(p, "num_output")?.ok_or_else(|| invalid("missing num_output".into()))?;
            LayerSpec::inner_product(name.clone(), outputs)
        }
        "Concat" => {
            let p = block(fields, "concat_param").unwrap_or(empty);
            if uint(p, "axis")?.unwrap_or(1) != 1 {
                return Err(invalid("concat is only supported along channels".into()));
            }
            LayerSpec::concat(name.clone())
        }
        "Eltwise" => {
            let p = block(fields, "eltwise_param").unwrap_or(empty);
            match scalar(p, "operation").map(|(s, _)| s) {
                None | Some("SUM") => {}
                Some(other) => return Err(ModelError::UnsupportedLayer(format!("Eltwise({other})"))),
            }
            if scalar(p, "coeff").is_some() {
                return Err(invalid("weighted eltwise sum is not supported".into()));
            }
            LayerSpec::eltwise_add(name.clone())
        }
        "Split" => LayerSpec::split(name.clone(), 0),
        other => return Err(ModelError::UnsupportedLayer(other.to_string())),
    };
    Ok(Some(RawLayer { spec, bottoms, tops }))
}

fn input_shape_from_dims(dims: &[u64], pos: Pos) -> Result<Shape, ModelError> {
    match dims {
        [_, c, h, w] | [c, h, w] => Ok(Shape::new(*c, *h, *w)),
        _ => Err(syntax(pos, format!("input shape needs 3 or 4 dims, got {}", dims.len()))),
    }
}

fn dims(fields: &[Field], key: &str) -> Result<Vec<u64>, ModelError> {
    fields
        .iter()
        .filter(|f| f.key == key)
        .map(|f| match &f.value {
            Value::Scalar(s) => s.parse::<u64>().map_err(|_| syntax(f.pos, format!("bad dimension `{s}`"))),
            Value::Block(_) => Err(syntax(f.pos, format!("`{key}` expects a number"))),
        })
        .collect()
}

/// Parses the supported prototxt subset into a validated model.
pub fn parse_prototxt(text: &str) -> Result<ConvNetModel, ModelError> {
    let toks = tokenize(text)?;
    let eof = toks.last().map_or(Pos { line: 1, column: 1 }, |t| t.1);
    let mut parser = Parser { toks, at: 0, eof };
    let top = parser.fields(None)?;

    let name = scalar(&top, "name").map_or_else(|| "net".to_string(), |(s, _)| s.to_string());
    let mut input_blob: Option<String> = scalar(&top, "input").map(|(s, _)| s.to_string());
    let mut input_shape: Option<Shape> = None;
    let top_pos = top.first().map_or(eof, |f| f.pos);
    let legacy_dims = dims(&top, "input_dim")?;
    if !legacy_dims.is_empty() {
        input_shape = Some(input_shape_from_dims(&legacy_dims, top_pos)?);
    } else if let Some(shape) = block(&top, "input_shape") {
        input_shape = Some(input_shape_from_dims(&dims(shape, "dim")?, top_pos)?);
    }

    let mut raw = Vec::new();
    for f in &top {
        match (&f.key[..], &f.value) {
            ("layers", _) => return Err(ModelError::UnsupportedLayer("legacy `layers` block".into())),
            ("layer", Value::Block(fields)) => {
                let ty = scalar(fields, "type").map(|(s, _)| s);
                if ty == Some("Input") {
                    let blob = scalar(fields, "top")
                        .ok_or_else(|| syntax(f.pos, "Input layer without `top`"))?
                        .0
                        .to_string();
                    let shape = block(fields, "input_param")
                        .and_then(|p| block(p, "shape"))
                        .ok_or_else(|| syntax(f.pos, "Input layer without input_param.shape"))?;
                    input_shape = Some(input_shape_from_dims(&dims(shape, "dim")?, f.pos)?);
                    input_blob = Some(blob);
                    continue;
                }
                if let Some(layer) = interpret_layer(fields, f.pos)? {
                    raw.push(layer);
                }
            }
            ("layer", Value::Scalar(_)) => return Err(syntax(f.pos, "`layer` must be a `{ ... }` block")),
            _ => {}
        }
    }
    if raw.is_empty() {
        return Err(ModelError::NoLayers);
    }
    let input_shape = input_shape.ok_or_else(|| syntax(top_pos, "no input shape declared"))?;
    let input_blob = input_blob.unwrap_or_else(|| "data".to_string());

    // Resolve blobs to producing layers. `None` is the network input.
    let mut producer_of: HashMap<String, Option<usize>> = HashMap::new();
    producer_of.insert(input_blob.clone(), None);
    let mut reads: Vec<(Option<usize>, usize)> = Vec::new();
    for (i, layer) in raw.iter().enumerate() {
        for b in &layer.bottoms {
            let p = producer_of
                .get(b)
                .copied()
                .ok_or_else(|| ModelError::DanglingEdge(b.clone()))?;
            reads.push((p, i));
        }
        for t in &layer.tops {
            producer_of.insert(t.clone(), Some(i));
        }
    }

    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    let readers = |p: Option<usize>| reads.iter().filter(move |r| r.0 == p).map(|r| r.1).collect::<Vec<_>>();

    // Network input: a split becomes the entry layer when several layers read it.
    let entry_readers = readers(None);
    let entry_split = entry_readers.len() > 1;
    if entry_split {
        layers.push(LayerSpec::split(format!("{input_blob}_split"), entry_readers.len() as u64));
    }
    let mut source_name: Vec<String> = Vec::with_capacity(raw.len());
    for (i, layer) in raw.iter().enumerate() {
        layers.push(layer.spec.clone());
        let outs = readers(Some(i));
        if outs.len() > 1 && layer.spec.kind != super::LayerKind::Split {
            let split = format!("{}_split", layer.spec.id);
            edges.push((layer.spec.id.clone(), split.clone()));
            layers.push(LayerSpec::split(split.clone(), outs.len() as u64));
            source_name.push(split);
        } else {
            source_name.push(layer.spec.id.clone());
        }
    }
    for &(p, c) in &reads {
        let consumer = raw[c].spec.id.clone();
        match p {
            Some(p) => edges.push((source_name[p].clone(), consumer)),
            None if entry_split => edges.push((format!("{input_blob}_split"), consumer)),
            None => {}
        }
    }
    ConvNetModel::new(name, input_shape, layers, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerKind;

    const CONV: &str = r#"
name: "one"
input: "data"
input_dim: 1
input_dim: 1
input_dim: 8
input_dim: 8
layer {
  name: "conv1"
  type: "Convolution"
  bottom: "data"
  top: "conv1"
  param { lr_mult: 1 }
  convolution_param {
    num_output: 100
    kernel_size: 3
    weight_filler { type: "xavier" }
  }
}
"#;

    #[test]
    fn conv_layer_fields() {
        let m = parse_prototxt(CONV).unwrap();
        let l = m.layer(0);
        assert_eq!(l.kind, LayerKind::Convolution);
        assert_eq!((l.num_filters, l.kernel_size), (100, 3));
        assert_eq!(m.shapes(0).output, Shape::new(100, 6, 6));
    }

    #[test]
    fn lrn_is_rejected() {
        let text = CONV.replace("\"Convolution\"", "\"LRN\"");
        assert_eq!(parse_prototxt(&text).unwrap_err(), ModelError::UnsupportedLayer("LRN".into()));
    }

    #[test]
    fn empty_file() {
        assert_eq!(parse_prototxt("").unwrap_err(), ModelError::NoLayers);
        assert_eq!(parse_prototxt("# just a comment\n").unwrap_err(), ModelError::NoLayers);
    }

    #[test]
    fn malformed_block_reports_position() {
        let err = parse_prototxt("layer {\n  name: \"a\"\n  type: \n}\n").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 4, .. }), "{err:?}");
        let err = parse_prototxt("layer {\n  name: \"a\"\n").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 1, column: 7, .. }), "{err:?}");
    }

    #[test]
    fn in_place_relu_and_implicit_split() {
        let text = r#"
input: "data"
input_shape { dim: 1 dim: 4 dim: 6 dim: 6 }
layer { name: "c0" type: "Convolution" bottom: "data" top: "c0"
        convolution_param { num_output: 4 kernel_size: 1 } }
layer { name: "r0" type: "ReLU" bottom: "c0" top: "c0" }
layer { name: "a" type: "Convolution" bottom: "c0" top: "a"
        convolution_param { num_output: 4 kernel_size: 3 pad: 1 } }
layer { name: "sum" type: "Eltwise" bottom: "a" bottom: "c0" top: "sum" }
"#;
        let m = parse_prototxt(text).unwrap();
        let ids: Vec<&str> = m.layers().iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["c0", "r0", "r0_split", "a", "sum"]);
        let sum = m.layer_index("sum").unwrap();
        let preds: Vec<&str> = m.predecessors(sum).iter().map(|&p| m.layer(p).id.as_str()).collect();
        assert_eq!(preds, ["a", "r0_split"]);
    }

    #[test]
    fn eltwise_product_unsupported() {
        let text = r#"
input: "data"
input_dim: 1 input_dim: 1 input_dim: 2 input_dim: 2
layer { name: "e" type: "Eltwise" bottom: "data" bottom: "data" top: "e" eltwise_param { operation: PROD } }
"#;
        assert!(matches!(parse_prototxt(text).unwrap_err(), ModelError::UnsupportedLayer(_)));
    }
}
