use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};

use super::TopologyMatrix;
use crate::rational::{null_space, primitive_integer_vector, rank, to_big};

/// Firings per block for one graph iteration (minimal positive integers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepetitionVector(pub Vec<u128>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub rank: usize,
    pub num_nodes: usize,
    /// Arcs whose balance equation contradicts the rest of the graph.
    pub violating_arcs: Vec<usize>,
    pub reason: String,
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "inconsistent SDF graph: rank {} with {} nodes ({}); violating arcs {:?}",
            self.rank, self.num_nodes, self.reason, self.violating_arcs
        )
    }
}

/// Solves the balance equations `Γ q = 0` exactly.
pub fn check_consistency(gamma: &TopologyMatrix) -> Result<RepetitionVector, ConsistencyReport> {
    let m = gamma.num_nodes;
    let big = gamma.to_big();
    let r = rank(&big);
    let report = |reason: &str, violating_arcs: Vec<usize>| ConsistencyReport {
        rank: r,
        num_nodes: m,
        violating_arcs,
        reason: reason.to_string(),
    };
    if m == 0 {
        return Ok(RepetitionVector(Vec::new()));
    }
    if r + 1 < m {
        return Err(report("graph is not connected", Vec::new()));
    }
    if r == m {
        let (_, violating) = spanning_tree_repetition(gamma);
        return Err(report("rates admit no non-trivial balance", violating));
    }
    let basis = null_space(&big, m);
    debug_assert_eq!(basis.len(), 1);
    let q = primitive_integer_vector(&basis[0]);
    if q.iter().any(|x| !x.is_positive()) {
        return Err(report("balance solution has non-positive firings", Vec::new()));
    }
    let q = q
        .iter()
        .map(|x| x.to_u128().ok_or_else(|| report("repetition count overflows u128", Vec::new())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RepetitionVector(q))
}

/// Independent route: joins arcs in index order with a weighted union-find
/// that tracks firing ratios, so every arc either extends the spanning forest
/// or closes a cycle that must balance. Returns the (unnormalised) firing
/// vector when all arcs balance, plus the arcs that do not.
pub fn spanning_tree_repetition(gamma: &TopologyMatrix) -> (Option<Vec<BigRational>>, Vec<usize>) {
    let m = gamma.num_nodes;
    let mut parent: Vec<usize> = (0..m).collect();
    // ratio[n] = q[n] / q[parent[n]]
    let mut ratio: Vec<BigRational> = vec![BigRational::one(); m];

    fn find(parent: &mut [usize], ratio: &mut [BigRational], n: usize) -> (usize, BigRational) {
        if parent[n] == n {
            return (n, BigRational::one());
        }
        let (root, up) = find(parent, ratio, parent[n]);
        ratio[n] = &ratio[n] * up;
        parent[n] = root;
        (root, ratio[n].clone())
    }

    let mut violating = Vec::new();
    for a in 0..gamma.num_arcs() {
        let Some((p, c)) = gamma.endpoints(a) else {
            violating.push(a);
            continue;
        };
        let prod = to_big(&gamma.entry(a, p));
        let cons = to_big(&-gamma.entry(a, c));
        // prod * q[p] = cons * q[c]
        let (rp, xp) = find(&mut parent, &mut ratio, p);
        let (rc, xc) = find(&mut parent, &mut ratio, c);
        if rp == rc {
            if prod * xp != cons * xc {
                violating.push(a);
            }
        } else {
            // q[rc] expressed through q[rp]: q[c] = prod/cons * q[p]
            parent[rc] = rp;
            ratio[rc] = prod * xp / (cons * xc);
        }
    }
    if !violating.is_empty() {
        return (None, violating);
    }
    let q = (0..m).map(|n| find(&mut parent, &mut ratio, n).1).collect();
    (Some(q), violating)
}
