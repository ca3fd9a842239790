//! Cycle-stepped token simulator for SDF graphs.
//!
//! Each arc endpoint earns credit at its rate every cycle (kept exact as an
//! integer numerator over the rate's denominator) and moves whole tokens.
//! A block may emit output `k` on an arc only once it has consumed the input
//! share that output depends on, `k · W_in / W_out` on every incoming arc.
//! Tokens written in a cycle become visible to the consumer the next cycle.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{ceil_u64, Rate};
use crate::sdf::{SdfGraph, WorkloadMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Per-arc depth overrides; `None` uses the defaults.
    pub fifo_depth: Option<Vec<u64>>,
    pub max_cycles: u64,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fifo_depth: None,
            max_cycles: 200_000_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub total_cycles: u64,
    /// Tokens delivered to the consumer of each arc.
    pub arc_tokens: Vec<u64>,
    pub busy_cycles: Vec<u64>,
    pub idle_cycles: Vec<u64>,
    /// Cycle at which a sink first retired a token.
    pub first_output_cycle: Option<u64>,
    pub max_occupancy: Vec<u64>,
    /// `cycle,block,consumed,produced` rows when tracing.
    pub trace: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("deadlock at cycle {cycle}: starved arcs [{}], blocked arcs [{}]", starved.join(", "), blocked.join(", "))]
    Deadlock {
        cycle: u64,
        starved: Vec<String>,
        blocked: Vec<String>,
    },
    #[error("simulation exceeded {0} cycles")]
    MaxCycles(u64),
    #[error("fifo depth {depth} on arc {arc} is below its burst size {min}")]
    FifoTooShallow { arc: String, depth: u64, min: u64 },
    #[error("workload has {found} arcs, graph has {expected}")]
    WorkloadShape { expected: usize, found: usize },
}

/// Exact per-cycle credit for one arc endpoint.
#[derive(Debug, Clone, Copy)]
struct Credit {
    num: i64,
    den: i64,
    acc: i64,
}

impl Credit {
    fn new(r: Rate) -> Self {
        Self {
            num: *r.numer(),
            den: *r.denom(),
            acc: 0,
        }
    }

    fn accrue(&mut self) -> u64 {
        self.acc += self.num;
        (self.acc / self.den) as u64
    }

    /// Spends `k` tokens; an endpoint held back keeps at most one cycle of
    /// slack so it cannot burst after a stall.
    fn spend(&mut self, k: u64, available: u64) {
        self.acc -= k as i64 * self.den;
        if k < available {
            let ceil = (self.num + self.den - 1) / self.den;
            self.acc = self.acc.min(ceil * self.den - self.num);
        }
    }
}

fn arc_name(g: &SdfGraph, a: usize) -> String {
    let arc = &g.arcs[a];
    format!("{}->{}", g.blocks[arc.producer].id, g.blocks[arc.consumer].id)
}

/// Default depths: twice the producer's burst; arcs into a join hold one
/// inference so reconvergent branches of unequal latency cannot stall.
pub fn default_fifo_depths(g: &SdfGraph, w: &WorkloadMatrix) -> Vec<u64> {
    g.arcs
        .iter()
        .enumerate()
        .map(|(a, arc)| {
            let burst = 2 * ceil_u64(&arc.prod_rate).max(1);
            if g.in_arcs(arc.consumer).count() > 1 {
                burst.max(w.arc_elements[a])
            } else {
                burst
            }
        })
        .collect()
}

/// Runs one inference.
pub fn simulate(g: &SdfGraph, w: &WorkloadMatrix, cfg: &SimConfig) -> Result<SimResult, SimError> {
    simulate_batch(g, w, 1, cfg)
}

/// Streams `batch` inputs back to back without draining the pipeline.
pub fn simulate_batch(g: &SdfGraph, w: &WorkloadMatrix, batch: u64, cfg: &SimConfig) -> Result<SimResult, SimError> {
    let na = g.num_arcs();
    let nb = g.num_nodes();
    if w.arc_elements.len() != na {
        return Err(SimError::WorkloadShape {
            expected: na,
            found: w.arc_elements.len(),
        });
    }
    let depth = match &cfg.fifo_depth {
        Some(d) => d.clone(),
        None => default_fifo_depths(g, w),
    };
    for (a, arc) in g.arcs.iter().enumerate() {
        let min = ceil_u64(&arc.prod_rate).max(1);
        if depth[a] < min {
            return Err(SimError::FifoTooShallow {
                arc: arc_name(g, a),
                depth: depth[a],
                min,
            });
        }
    }

    let work: Vec<u64> = w.arc_elements.iter().map(|x| x * batch.max(1)).collect();
    let ins: Vec<Vec<usize>> = (0..nb).map(|n| g.in_arcs(n).collect()).collect();
    let outs: Vec<Vec<usize>> = (0..nb).map(|n| g.out_arcs(n).collect()).collect();
    let order = g.topological_order();

    // outputs a block may hold ready but not yet emitted, per out arc
    let cap: Vec<u64> = (0..na)
        .map(|j| {
            let p = g.arcs[j].producer;
            let w_in_min = ins[p].iter().map(|&i| work[i]).min().unwrap_or(work[j]).max(1);
            ceil_u64(&g.arcs[j].prod_rate).max(1) + work[j].div_ceil(w_in_min)
        })
        .collect();

    let mut prod_credit: Vec<Credit> = g.arcs.iter().map(|a| Credit::new(a.prod_rate)).collect();
    let mut cons_credit: Vec<Credit> = g.arcs.iter().map(|a| Credit::new(a.cons_rate)).collect();
    let mut tokens = vec![0u64; na];
    let mut incoming = vec![0u64; na];
    let mut produced = vec![0u64; na];
    let mut consumed = vec![0u64; na];
    let mut max_occ = vec![0u64; na];
    let mut busy = vec![0u64; nb];
    let mut first_output = None;
    let mut trace = cfg.trace.then(|| String::from("cycle,block,consumed,produced\n"));

    let min_rate = g
        .arcs
        .iter()
        .flat_map(|a| [a.prod_rate, a.cons_rate])
        .min()
        .unwrap_or(Rate::from_integer(1));
    let patience = ceil_u64(&(Rate::from_integer(1) / min_rate)) + 2;
    let mut remaining: u64 = work.iter().sum();
    let mut last_active = None;
    let mut stalled = 0u64;
    let mut cycle = 0u64;

    while remaining > 0 {
        if cycle >= cfg.max_cycles {
            return Err(SimError::MaxCycles(cfg.max_cycles));
        }
        let mut progress = false;
        for &n in &order {
            let mut took = 0u64;
            for &i in &ins[n] {
                let avail = cons_credit[i].accrue();
                let allowance = outs[n]
                    .iter()
                    .map(|&j| {
                        let ahead = (produced[j] + cap[j]) as u128 * work[i] as u128;
                        ahead.div_ceil(work[j] as u128).min(work[i] as u128) as u64
                    })
                    .min()
                    .unwrap_or(work[i]);
                let limit = tokens[i].min(allowance.saturating_sub(consumed[i]));
                let k = avail.min(limit);
                cons_credit[i].spend(k, avail);
                tokens[i] -= k;
                consumed[i] += k;
                took += k;
            }
            let mut gave = 0u64;
            for &j in &outs[n] {
                let avail = prod_credit[j].accrue();
                let producible = ins[n]
                    .iter()
                    .map(|&i| (work[j] as u128 * consumed[i] as u128 / work[i] as u128) as u64)
                    .min()
                    .unwrap_or(work[j]);
                let space = depth[j] - tokens[j];
                let k = avail.min(producible - produced[j]).min(space);
                prod_credit[j].spend(k, avail);
                incoming[j] += k;
                produced[j] += k;
                gave += k;
            }
            if took + gave > 0 {
                busy[n] += 1;
                progress = true;
                if outs[n].is_empty() && first_output.is_none() {
                    first_output = Some(cycle);
                }
                if let Some(t) = trace.as_mut() {
                    let _ = writeln!(t, "{cycle},{},{took},{gave}", g.blocks[n].id);
                }
                remaining -= took;
            }
        }
        for a in 0..na {
            tokens[a] += incoming[a];
            incoming[a] = 0;
            max_occ[a] = max_occ[a].max(tokens[a]);
        }
        if progress {
            last_active = Some(cycle);
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > patience {
                return Err(deadlock(g, cycle, &tokens, &depth, &produced, &consumed, &work));
            }
        }
        cycle += 1;
    }

    let total = last_active.map_or(0, |c| c + 1);
    Ok(SimResult {
        total_cycles: total,
        arc_tokens: consumed,
        idle_cycles: busy.iter().map(|b| total - b).collect(),
        busy_cycles: busy,
        first_output_cycle: first_output,
        max_occupancy: max_occ,
        trace,
    })
}

fn deadlock(
    g: &SdfGraph,
    cycle: u64,
    tokens: &[u64],
    depth: &[u64],
    produced: &[u64],
    consumed: &[u64],
    work: &[u64],
) -> SimError {
    let mut starved = Vec::new();
    let mut blocked = Vec::new();
    for a in 0..g.num_arcs() {
        if consumed[a] == work[a] {
            continue;
        }
        if tokens[a] == 0 && produced[a] < work[a] {
            starved.push(arc_name(g, a));
        } else if tokens[a] >= depth[a] {
            blocked.push(arc_name(g, a));
        }
    }
    SimError::Deadlock { cycle, starved, blocked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Shape;
    use crate::rational::{rate, ratio};
    use crate::sdf::{BlockKind, BuildingBlock, SdfArc};

    fn chain(rates: &[(Rate, Rate)], work: &[u64]) -> (SdfGraph, WorkloadMatrix) {
        let s = Shape::new(1, 1, 1);
        let blocks = (0..=rates.len())
            .map(|i| BuildingBlock::new(format!("b{i}"), BlockKind::NonlinBank, "x", s, s))
            .collect();
        let arcs = rates
            .iter()
            .enumerate()
            .map(|(i, &(p, c))| SdfArc {
                producer: i,
                consumer: i + 1,
                prod_rate: p,
                cons_rate: c,
            })
            .collect();
        let g = SdfGraph::from_parts(blocks, arcs, rate(2));
        let w = WorkloadMatrix::from_arc_elements(&g, work.to_vec());
        (g, w)
    }

    #[test]
    fn two_block_chain() {
        let (g, w) = chain(&[(rate(1), rate(1))], &[100]);
        let r = simulate(&g, &w, &SimConfig::default()).unwrap();
        assert_eq!(r.total_cycles, 101);
        assert_eq!(r.arc_tokens, vec![100]);
        assert_eq!(r.first_output_cycle, Some(1));
    }

    #[test]
    fn fractional_rate_paces_firings() {
        let (g, w) = chain(&[(ratio(1, 9), ratio(1, 9))], &[10]);
        let r = simulate(&g, &w, &SimConfig::default()).unwrap();
        assert_eq!(r.arc_tokens, vec![10]);
        // first token after 9 cycles, then one every 9
        assert_eq!(r.total_cycles, 91);
    }

    #[test]
    fn batch_one_equals_single() {
        let (g, w) = chain(&[(rate(2), rate(2)), (rate(1), rate(1))], &[40, 40]);
        let cfg = SimConfig::default();
        assert_eq!(simulate(&g, &w, &cfg).unwrap(), simulate_batch(&g, &w, 1, &cfg).unwrap());
    }

    #[test]
    fn shallow_fifo_rejected() {
        let (g, w) = chain(&[(rate(4), rate(4))], &[8]);
        let cfg = SimConfig {
            fifo_depth: Some(vec![3]),
            ..Default::default()
        };
        assert!(matches!(simulate(&g, &w, &cfg), Err(SimError::FifoTooShallow { .. })));
    }

    #[test]
    fn trace_rows() {
        let (g, w) = chain(&[(rate(1), rate(1))], &[3]);
        let cfg = SimConfig {
            trace: true,
            ..Default::default()
        };
        let t = simulate(&g, &w, &cfg).unwrap().trace.unwrap();
        assert_eq!(t.lines().count(), 1 + 3 + 3);
        assert!(t.contains("0,b0,0,1"));
    }

    #[test]
    fn max_cycles_reported() {
        let (g, w) = chain(&[(rate(1), rate(1))], &[100]);
        let cfg = SimConfig {
            max_cycles: 10,
            ..Default::default()
        };
        assert_eq!(simulate(&g, &w, &cfg), Err(SimError::MaxCycles(10)));
    }
}
