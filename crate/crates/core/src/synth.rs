//! Random valid models and foldings for property tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{ConvNetModel, LayerSpec, PoolOp, Shape};
use crate::rational::divisors;
use crate::sdf::{folding_limits, Folding, FoldingConfig};

struct Builder {
    layers: Vec<LayerSpec>,
    edges: Vec<(String, String)>,
    tail: Option<String>,
    shape: Shape,
}

impl Builder {
    fn push(&mut self, l: LayerSpec, from: Option<&str>) -> String {
        let id = l.id.clone();
        if let Some(f) = from {
            self.edges.push((f.to_string(), id.clone()));
        }
        self.layers.push(l);
        id
    }

    fn append(&mut self, l: LayerSpec, out: Shape) {
        let tail = self.tail.clone();
        let id = self.push(l, tail.as_deref());
        self.tail = Some(id);
        self.shape = out;
    }
}

fn conv_out(h: u64, k: u64, s: u64, p: u64) -> u64 {
    (h + 2 * p - k) / s + 1
}

/// A random model of at most `max_layers` layers (at least 1), mixing
/// convolution, pooling, ReLU and inner-product chains with inception-style
/// concat blocks and residual add blocks.
pub fn random_model<R: Rng>(rng: &mut R, max_layers: usize) -> ConvNetModel {
    let max_layers = max_layers.max(1);
    let size = rng.gen_range(6..=12);
    let input = Shape::new(rng.gen_range(1..=4), size, size);
    let mut b = Builder {
        layers: Vec::new(),
        edges: Vec::new(),
        tail: None,
        shape: input,
    };
    let mut n = 0usize;
    loop {
        let room = max_layers - b.layers.len();
        if room == 0 {
            break;
        }
        let s = b.shape;
        n += 1;
        let choice = rng.gen_range(0..10);
        match choice {
            // inception block: split, 2-3 branches, concat
            0 if room >= 5 && b.tail.is_some() => {
                let branches = if room >= 6 { rng.gen_range(2..=3) } else { 2 };
                let split = b.push(LayerSpec::split(format!("split{n}"), branches), b.tail.clone().as_deref());
                let mut outs = Vec::new();
                let mut channels = 0;
                for i in 0..branches {
                    let id = format!("br{n}_{i}");
                    let l = match rng.gen_range(0..3) {
                        0 => {
                            let f = rng.gen_range(1..=4);
                            channels += f;
                            LayerSpec::convolution(id, 1, 1, 0, f)
                        }
                        1 => {
                            let f = rng.gen_range(1..=4);
                            channels += f;
                            LayerSpec::convolution(id, 3, 1, 1, f)
                        }
                        _ => {
                            channels += s.channels;
                            LayerSpec::pooling(id, PoolOp::Max, 3, 1, 1)
                        }
                    };
                    outs.push(b.push(l, Some(&split)));
                }
                let cat = format!("cat{n}");
                for o in &outs {
                    b.edges.push((o.clone(), cat.clone()));
                }
                b.layers.push(LayerSpec::concat(cat.clone()));
                b.tail = Some(cat);
                b.shape = Shape::new(channels, s.h, s.w);
            }
            // residual block: split, conv preserving shape, add
            1 if room >= 4 && b.tail.is_some() => {
                let split = b.push(LayerSpec::split(format!("split{n}"), 2), b.tail.clone().as_deref());
                let conv = b.push(LayerSpec::convolution(format!("res{n}"), 3, 1, 1, s.channels), Some(&split));
                let add = format!("add{n}");
                b.edges.push((split, add.clone()));
                b.edges.push((conv, add.clone()));
                b.layers.push(LayerSpec::eltwise_add(add.clone()));
                b.tail = Some(add);
            }
            2 | 3 if s.h >= 4 => {
                let (k, st, p) = if rng.gen_bool(0.5) { (2, 2, 0) } else { (3, 1, 1) };
                let op = if rng.gen_bool(0.7) { PoolOp::Max } else { PoolOp::Avg };
                let h = conv_out(s.h, k, st, p);
                b.append(LayerSpec::pooling(format!("pool{n}"), op, k, st, p), Shape::new(s.channels, h, h));
            }
            4 if b.tail.is_some() => b.append(LayerSpec::relu(format!("relu{n}")), s),
            5 if room == 1 || rng.gen_bool(0.3) => {
                let f = rng.gen_range(2..=10);
                b.append(LayerSpec::inner_product(format!("fc{n}"), f), Shape::new(f, 1, 1));
                break;
            }
            _ => {
                let k = *[1u64, 3, 3, 5].choose(rng).unwrap();
                let k = if k > s.h { 1 } else { k };
                let p = if rng.gen_bool(0.5) { k / 2 } else { 0 };
                let st = if s.h >= 8 && rng.gen_bool(0.2) { 2 } else { 1 };
                let f = rng.gen_range(1..=8);
                let h = conv_out(s.h, k, st, p);
                b.append(LayerSpec::convolution(format!("conv{n}"), k, st, p, f), Shape::new(f, h, h));
            }
        }
    }
    ConvNetModel::new("random", input, b.layers, b.edges).expect("generator builds valid models")
}

/// A random folding for every foldable layer.
pub fn random_folding<R: Rng>(rng: &mut R, model: &ConvNetModel) -> FoldingConfig {
    (0..model.layers().len())
        .filter_map(|l| {
            let (c, f) = folding_limits(model, l);
            (c > 1 || f > 1).then(|| {
                let c = *divisors(c).choose(rng).unwrap();
                let f = *divisors(f).choose(rng).unwrap();
                (model.layer(l).id.clone(), Folding::new(c, f))
            })
        })
        .collect()
}
