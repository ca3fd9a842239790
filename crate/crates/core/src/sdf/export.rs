use std::fmt::Write;

use super::{SdfGraph, TopologyMatrix, WorkloadMatrix};
use crate::rational::format_rate;

fn header(g: &SdfGraph) -> String {
    let mut s = String::from("arc");
    for b in &g.blocks {
        s.push(',');
        s.push_str(&b.id);
    }
    s.push('\n');
    s
}

fn arc_label(g: &SdfGraph, a: usize) -> String {
    let arc = &g.arcs[a];
    format!("{}->{}", g.blocks[arc.producer].id, g.blocks[arc.consumer].id)
}

/// Γ as CSV, one row per arc; fractions rendered `p/q`.
pub fn gamma_csv(g: &SdfGraph, gamma: &TopologyMatrix) -> String {
    let mut s = header(g);
    for (a, row) in gamma.rows.iter().enumerate() {
        s.push_str(&arc_label(g, a));
        for x in row {
            let _ = write!(s, ",{}", format_rate(x));
        }
        s.push('\n');
    }
    s
}

pub fn workload_csv(g: &SdfGraph, w: &WorkloadMatrix) -> String {
    let mut s = header(g);
    for (a, row) in w.rows().iter().enumerate() {
        s.push_str(&arc_label(g, a));
        for x in row {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

pub fn to_dot(g: &SdfGraph) -> String {
    let mut s = String::from("digraph sdf {\n  rankdir=LR;\n");
    for (i, b) in g.blocks.iter().enumerate() {
        let shape = if b.kind.is_memory() { "cylinder" } else { "box" };
        let _ = writeln!(
            s,
            "  n{i} [label=\"{}\\n{} c={} f={}\", shape={shape}];",
            b.id, b.kind, b.coarse, b.fine
        );
    }
    for a in &g.arcs {
        let _ = writeln!(
            s,
            "  n{} -> n{} [taillabel=\"{}\", headlabel=\"{}\"];",
            a.producer,
            a.consumer,
            format_rate(&a.prod_rate),
            format_rate(&a.cons_rate)
        );
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvNetModel, LayerSpec, Shape};
    use crate::rational::ratio;
    use crate::sdf::{lower_model, topology_matrix, FoldingConfig};

    #[test]
    fn fractions_in_csv() {
        let m = ConvNetModel::new("x", Shape::new(1, 5, 5), vec![LayerSpec::convolution("c", 3, 1, 0, 2)], vec![]).unwrap();
        let g = lower_model(&m, &FoldingConfig::new(), ratio(3, 2)).unwrap();
        let csv = gamma_csv(&g, &topology_matrix(&g));
        assert!(csv.lines().nth(1).unwrap().starts_with("mem_read:input->c/sw,3/4,-1,"));
        assert!(to_dot(&g).contains("n0 -> n1"));
    }
}
