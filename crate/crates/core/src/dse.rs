//! Design space exploration over partitioning, folding, execution strategy
//! and batch size.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ConvNetModel;
use crate::perf::{
    check_feasible, combine_stages, estimate_reconfig_resources, estimate_reference_resources, reconfig_stages,
    weights_reloading_stages, PerfEstimate, PlatformSpec, ResourceUsage, StageTiming,
};
use crate::rational::divisors;
use crate::sdf::{folding_limits, Folding, FoldingConfig};
use crate::transforms::{
    derive_reference_architecture, enumerate_partitionings, partition_graph, valid_cut_positions, TransformError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DseError {
    #[error("search space has {size} points, above the cap of {cap}; use simulated annealing")]
    SpaceTooLarge { size: u128, cap: u128 },
    #[error("no feasible starting point after {0} restarts")]
    NoFeasibleStart(usize),
    #[error("invalid objective: {0}")]
    Objective(String),
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("configuration does not match the search space: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Reconfiguration,
    WeightsReloading,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Reconfiguration => "reconfiguration",
            Strategy::WeightsReloading => "weights_reloading",
        }
    }
}

/// A point of the design space. Field order sets the lexicographic
/// tie-break order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DesignConfig {
    pub cuts: Vec<usize>,
    /// One entry per foldable layer, in [`SearchSpace::layers`] order.
    pub foldings: Vec<Folding>,
    pub strategy: Strategy,
    pub batch: u64,
}

impl DesignConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    MaxThroughput,
    MinLatency,
    /// Maximise `w_t · T / t_ref − w_l · L / l_ref`.
    Multiobjective { w_t: f64, w_l: f64, t_ref: f64, l_ref: f64 },
}

impl Objective {
    pub fn multi(w_t: f64, w_l: f64, t_ref: f64, l_ref: f64) -> Result<Self, DseError> {
        let bad = |m: &str| Err(DseError::Objective(m.to_string()));
        if !(w_t >= 0.0 && w_l >= 0.0) || !(w_t.is_finite() && w_l.is_finite()) {
            return bad("weights must be non-negative");
        }
        if w_t == 0.0 && w_l == 0.0 {
            return bad("weights must not both be zero");
        }
        if !(t_ref > 0.0 && l_ref > 0.0) {
            return bad("reference values must be positive");
        }
        Ok(Objective::Multiobjective { w_t, w_l, t_ref, l_ref })
    }

    /// Larger is better.
    pub fn score(&self, e: &PerfEstimate) -> f64 {
        match *self {
            Objective::MaxThroughput => e.throughput_inputs_s,
            Objective::MinLatency => -e.latency_s,
            Objective::Multiobjective { w_t, w_l, t_ref, l_ref } => {
                w_t * e.throughput_inputs_s / t_ref - w_l * e.latency_s / l_ref
            }
        }
    }

    /// Annealing energy, smaller is better.
    fn energy(&self, e: &PerfEstimate) -> f64 {
        match self {
            Objective::MaxThroughput => -e.throughput_inputs_s.ln(),
            Objective::MinLatency => e.latency_s.ln(),
            Objective::Multiobjective { .. } => -self.score(e),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::MaxThroughput => "throughput",
            Objective::MinLatency => "latency",
            Objective::Multiobjective { .. } => "multiobjective",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub max_partitions: usize,
    pub batch_min: u64,
    pub batch_max: u64,
    pub strategies: Vec<Strategy>,
    pub space_cap: u128,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            max_partitions: 4,
            batch_min: 1,
            batch_max: 1024,
            strategies: vec![Strategy::Reconfiguration, Strategy::WeightsReloading],
            space_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldableLayer {
    pub layer: usize,
    pub id: String,
    pub coarse: Vec<u64>,
    pub fine: Vec<u64>,
}

/// The enumerable axes of a model's design space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers: Vec<FoldableLayer>,
    pub cut_positions: Vec<usize>,
    pub max_partitions: usize,
    pub strategies: Vec<Strategy>,
    pub batches: Vec<u64>,
}

impl SearchSpace {
    pub fn new(model: &ConvNetModel, bounds: &SearchBounds) -> Result<Self, DseError> {
        if bounds.max_partitions == 0 {
            return Err(DseError::Bounds("max_partitions must be >= 1".into()));
        }
        if bounds.batch_min == 0 || bounds.batch_min > bounds.batch_max {
            return Err(DseError::Bounds("need 1 <= batch_min <= batch_max".into()));
        }
        if bounds.strategies.is_empty() {
            return Err(DseError::Bounds("no execution strategy allowed".into()));
        }
        let layers = (0..model.layers().len())
            .filter_map(|l| {
                let (c, f) = folding_limits(model, l);
                (c > 1 || f > 1).then(|| FoldableLayer {
                    layer: l,
                    id: model.layer(l).id.clone(),
                    coarse: divisors(c),
                    fine: divisors(f),
                })
            })
            .collect();
        let mut strategies = bounds.strategies.clone();
        strategies.sort();
        strategies.dedup();
        let batches = (0..64)
            .map(|e| 1u64 << e)
            .filter(|b| (bounds.batch_min..=bounds.batch_max).contains(b))
            .collect::<Vec<_>>();
        if batches.is_empty() {
            return Err(DseError::Bounds("no power of two lies within the batch bounds".into()));
        }
        Ok(Self {
            layers,
            cut_positions: valid_cut_positions(model),
            max_partitions: bounds.max_partitions,
            strategies,
            batches,
        })
    }

    pub fn cut_sets(&self, model: &ConvNetModel) -> Vec<Vec<usize>> {
        enumerate_partitionings(model, self.max_partitions).collect()
    }

    pub fn folding_choices(&self) -> u128 {
        self.layers
            .iter()
            .map(|l| (l.coarse.len() * l.fine.len()) as u128)
            .product()
    }

    pub fn size(&self, model: &ConvNetModel) -> u128 {
        self.cut_sets(model).len() as u128
            * self.folding_choices()
            * self.strategies.len() as u128
            * self.batches.len() as u128
    }

    /// The `i`-th folding vector in mixed-radix order.
    pub fn folding_at(&self, mut i: u128) -> Vec<Folding> {
        let mut out = vec![Folding::new(1, 1); self.layers.len()];
        for (k, l) in self.layers.iter().enumerate().rev() {
            let nf = l.fine.len() as u128;
            let nc = l.coarse.len() as u128;
            let f = (i % nf) as usize;
            i /= nf;
            let c = (i % nc) as usize;
            i /= nc;
            out[k] = Folding::new(l.coarse[c], l.fine[f]);
        }
        out
    }

    pub fn folding_config(&self, foldings: &[Folding]) -> FoldingConfig {
        self.layers
            .iter()
            .zip(foldings)
            .map(|(l, f)| (l.id.clone(), *f))
            .collect()
    }

    /// Every layer at a single time-shared unit.
    pub fn minimal(&self) -> DesignConfig {
        DesignConfig {
            cuts: Vec::new(),
            foldings: vec![Folding::new(1, 1); self.layers.len()],
            strategy: self.strategies[0],
            batch: self.batches[0],
        }
    }

    fn check(&self, c: &DesignConfig) -> Result<(), DseError> {
        if c.foldings.len() != self.layers.len() {
            return Err(DseError::Config(format!(
                "{} foldings for {} foldable layers",
                c.foldings.len(),
                self.layers.len()
            )));
        }
        for (l, f) in self.layers.iter().zip(&c.foldings) {
            if !l.coarse.contains(&f.coarse) || !l.fine.contains(&f.fine) {
                return Err(DseError::Config(format!("folding {f:?} not allowed for `{}`", l.id)));
            }
        }
        if c.cuts.len() + 1 > self.max_partitions {
            return Err(DseError::Config("too many partitions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub config: DesignConfig,
    pub estimate: PerfEstimate,
    pub resources: ResourceUsage,
    pub feasible: bool,
}

/// Stage timings and resources of one (cuts, foldings) structure under both
/// strategies; batch size and strategy are cheap to vary on top.
struct Structure {
    reconfig: (Vec<StageTiming>, ResourceUsage),
    reloading: (Vec<StageTiming>, ResourceUsage),
}

fn structure(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    cuts: &[usize],
    cfg: &FoldingConfig,
    strategies: &[Strategy],
) -> Result<Structure, DseError> {
    let p = partition_graph(model, cuts, cfg, platform.mem_rate())?;
    let reconfig = if strategies.contains(&Strategy::Reconfiguration) {
        (reconfig_stages(model, &p, platform), estimate_reconfig_resources(model, &p, platform))
    } else {
        (Vec::new(), ResourceUsage::default())
    };
    let reloading = if strategies.contains(&Strategy::WeightsReloading) {
        let arch = derive_reference_architecture(model, &p, platform.memory.word_bytes)?;
        (
            weights_reloading_stages(model, &arch, platform),
            estimate_reference_resources(model, &arch, platform),
        )
    } else {
        (Vec::new(), ResourceUsage::default())
    };
    Ok(Structure { reconfig, reloading })
}

fn point_from(s: &Structure, platform: &PlatformSpec, config: DesignConfig) -> DesignPoint {
    let (stages, res) = match config.strategy {
        Strategy::Reconfiguration => &s.reconfig,
        Strategy::WeightsReloading => &s.reloading,
    };
    let estimate = combine_stages(stages, platform, config.batch);
    let feasible = check_feasible(res, platform).feasible;
    DesignPoint {
        config,
        estimate,
        resources: *res,
        feasible,
    }
}

/// Predicts performance and resources of one configuration.
pub fn evaluate(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    space: &SearchSpace,
    config: &DesignConfig,
) -> Result<DesignPoint, DseError> {
    space.check(config)?;
    let s = structure(model, platform, &config.cuts, &space.folding_config(&config.foldings), &[config.strategy])?;
    Ok(point_from(&s, platform, config.clone()))
}

/// Estimate, resources and feasibility of an explicit design, independent
/// of any search space.
pub fn evaluate_design(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    cuts: &[usize],
    foldings: &FoldingConfig,
    strategy: Strategy,
    batch: u64,
) -> Result<(PerfEstimate, ResourceUsage, bool), DseError> {
    let s = structure(model, platform, cuts, foldings, &[strategy])?;
    let (stages, res) = match strategy {
        Strategy::Reconfiguration => &s.reconfig,
        Strategy::WeightsReloading => &s.reloading,
    };
    Ok((combine_stages(stages, platform, batch), *res, check_feasible(res, platform).feasible))
}

/// Total order: higher score, then fewer resources, then the smaller
/// configuration. `Less` means `a` is better.
pub fn compare(objective: &Objective, platform: &PlatformSpec, a: &DesignPoint, b: &DesignPoint) -> Ordering {
    let (sa, sb) = (objective.score(&a.estimate), objective.score(&b.estimate));
    sb.total_cmp(&sa)
        .then_with(|| a.resources.weight(platform).total_cmp(&b.resources.weight(platform)))
        .then_with(|| a.config.cmp(&b.config))
}

fn pick_better(objective: &Objective, platform: &PlatformSpec, a: Option<DesignPoint>, b: Option<DesignPoint>) -> Option<DesignPoint> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if compare(objective, platform, &a, &b) == Ordering::Greater { b } else { a }),
        (a, b) => a.or(b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    /// `None` when no point is feasible.
    pub best: Option<DesignPoint>,
    pub evaluated: u128,
    /// Every evaluated point, in enumeration order, when requested.
    pub log: Option<Vec<DesignPoint>>,
}

/// The true optimum over the whole bounded space.
pub fn exhaustive_search(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    objective: &Objective,
    bounds: &SearchBounds,
    keep_log: bool,
) -> Result<ExhaustiveResult, DseError> {
    let space = SearchSpace::new(model, bounds)?;
    let size = space.size(model);
    if size > bounds.space_cap {
        return Err(DseError::SpaceTooLarge {
            size,
            cap: bounds.space_cap,
        });
    }
    let cut_sets = space.cut_sets(model);
    let nf = space.folding_choices();
    let jobs: Vec<(usize, u128)> = (0..cut_sets.len()).flat_map(|c| (0..nf).map(move |f| (c, f))).collect();
    let per_job = |&(c, f): &(usize, u128)| -> Result<(Option<DesignPoint>, Vec<DesignPoint>), DseError> {
        let foldings = space.folding_at(f);
        let s = structure(model, platform, &cut_sets[c], &space.folding_config(&foldings), &space.strategies)?;
        let mut best = None;
        let mut log = Vec::new();
        for &strategy in &space.strategies {
            for &batch in &space.batches {
                let p = point_from(
                    &s,
                    platform,
                    DesignConfig {
                        cuts: cut_sets[c].clone(),
                        foldings: foldings.clone(),
                        strategy,
                        batch,
                    },
                );
                if p.feasible {
                    best = pick_better(objective, platform, best, Some(p.clone()));
                }
                if keep_log {
                    log.push(p);
                }
            }
        }
        Ok((best, log))
    };
    let results: Vec<(Option<DesignPoint>, Vec<DesignPoint>)> =
        jobs.par_iter().map(per_job).collect::<Result<_, _>>()?;
    let mut best = None;
    let mut log = keep_log.then(Vec::new);
    for (b, l) in results {
        best = pick_better(objective, platform, best, b);
        if let Some(log) = log.as_mut() {
            log.extend(l);
        }
    }
    Ok(ExhaustiveResult {
        best,
        evaluated: size,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub iterations: usize,
    /// Temperature after the last iteration relative to the initial one;
    /// sets the geometric cooling factor.
    pub final_ratio: f64,
    /// Calibrated from random neighbour moves when absent.
    pub initial_temperature: Option<f64>,
    pub calibration_moves: usize,
    pub max_restarts: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            iterations: 4000,
            final_ratio: 1e-4,
            initial_temperature: None,
            calibration_moves: 100,
            max_restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealResult {
    pub best: DesignPoint,
    /// All distinct points evaluated, sorted by configuration.
    pub evaluated: Vec<DesignPoint>,
    pub initial_temperature: f64,
}

struct Annealer<'a> {
    model: &'a ConvNetModel,
    platform: &'a PlatformSpec,
    space: SearchSpace,
    cache: HashMap<DesignConfig, DesignPoint>,
    structures: HashMap<(Vec<usize>, Vec<Folding>), Structure>,
}

impl<'a> Annealer<'a> {
    fn eval(&mut self, c: &DesignConfig) -> Result<DesignPoint, DseError> {
        if let Some(p) = self.cache.get(c) {
            return Ok(p.clone());
        }
        let key = (c.cuts.clone(), c.foldings.clone());
        if !self.structures.contains_key(&key) {
            let cfg = self.space.folding_config(&c.foldings);
            let s = structure(self.model, self.platform, &c.cuts, &cfg, &self.space.strategies)?;
            self.structures.insert(key.clone(), s);
        }
        let p = point_from(&self.structures[&key], self.platform, c.clone());
        self.cache.insert(c.clone(), p.clone());
        Ok(p)
    }

    fn random_config(&self, rng: &mut ChaCha8Rng) -> DesignConfig {
        let mut cuts: Vec<usize> = self
            .space
            .cut_positions
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        cuts.truncate(self.space.max_partitions - 1);
        DesignConfig {
            cuts,
            foldings: self
                .space
                .layers
                .iter()
                .map(|l| Folding::new(l.coarse[rng.gen_range(0..l.coarse.len())], l.fine[rng.gen_range(0..l.fine.len())]))
                .collect(),
            strategy: self.space.strategies[rng.gen_range(0..self.space.strategies.len())],
            batch: self.space.batches[rng.gen_range(0..self.space.batches.len())],
        }
    }

    fn neighbour(&self, c: &DesignConfig, rng: &mut ChaCha8Rng) -> DesignConfig {
        let step = |opts: &[u64], cur: u64, rng: &mut ChaCha8Rng| -> u64 {
            let i = opts.iter().position(|&x| x == cur).unwrap_or(0);
            let up = rng.gen_bool(0.5);
            if (up && i + 1 < opts.len()) || i == 0 {
                opts[(i + 1).min(opts.len() - 1)]
            } else {
                opts[i - 1]
            }
        };
        for _ in 0..32 {
            let mut n = c.clone();
            match rng.gen_range(0..5) {
                0 | 1 if !n.foldings.is_empty() => {
                    let k = rng.gen_range(0..n.foldings.len());
                    let l = &self.space.layers[k];
                    if l.fine.len() > 1 && (l.coarse.len() == 1 || rng.gen_bool(0.5)) {
                        n.foldings[k].fine = step(&l.fine, n.foldings[k].fine, rng);
                    } else {
                        n.foldings[k].coarse = step(&l.coarse, n.foldings[k].coarse, rng);
                    }
                }
                2 if !self.space.cut_positions.is_empty() && self.space.max_partitions > 1 => {
                    let pos = &self.space.cut_positions;
                    let free: Vec<usize> = pos.iter().copied().filter(|p| !n.cuts.contains(p)).collect();
                    let can_add = n.cuts.len() + 1 < self.space.max_partitions && !free.is_empty();
                    match rng.gen_range(0..3) {
                        // move one cut to a neighbouring valid position
                        0 if !n.cuts.is_empty() => {
                            let k = rng.gen_range(0..n.cuts.len());
                            let i = pos.iter().position(|&p| p == n.cuts[k]).unwrap();
                            let j = if rng.gen_bool(0.5) { i + 1 } else { i.wrapping_sub(1) };
                            if let Some(&p) = pos.get(j) {
                                if !n.cuts.contains(&p) {
                                    n.cuts[k] = p;
                                }
                            }
                        }
                        1 if can_add => n.cuts.push(free[rng.gen_range(0..free.len())]),
                        _ if !n.cuts.is_empty() => {
                            let k = rng.gen_range(0..n.cuts.len());
                            n.cuts.remove(k);
                        }
                        _ if can_add => n.cuts.push(free[rng.gen_range(0..free.len())]),
                        _ => {}
                    }
                    n.cuts.sort_unstable();
                }
                3 if self.space.strategies.len() > 1 => {
                    let i = self.space.strategies.iter().position(|&s| s == n.strategy).unwrap();
                    n.strategy = self.space.strategies[(i + 1) % self.space.strategies.len()];
                }
                4 if self.space.batches.len() > 1 => {
                    n.batch = step(&self.space.batches, n.batch, rng);
                }
                _ => {}
            }
            if n != *c {
                return n;
            }
        }
        c.clone()
    }
}

/// Seeded simulated annealing with geometric cooling. Infeasible neighbours
/// are rejected; the start is the minimal folding, with random restarts if
/// that does not fit.
pub fn simulated_annealing(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    objective: &Objective,
    bounds: &SearchBounds,
    seed: u64,
    schedule: &AnnealSchedule,
) -> Result<AnnealResult, DseError> {
    let space = SearchSpace::new(model, bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Annealer {
        model,
        platform,
        cache: HashMap::new(),
        structures: HashMap::new(),
        space,
    };

    let mut current = a.eval(&a.space.minimal())?;
    let mut restarts = 0;
    while !current.feasible {
        if restarts == schedule.max_restarts {
            return Err(DseError::NoFeasibleStart(restarts));
        }
        restarts += 1;
        let c = a.random_config(&mut rng);
        current = a.eval(&c)?;
    }

    let t0 = match schedule.initial_temperature {
        Some(t) => t,
        None => {
            // uphill steps seen on a random walk over feasible designs
            let mut walker = current.clone();
            let mut ups = Vec::new();
            for _ in 0..schedule.calibration_moves {
                let n = a.neighbour(&walker.config, &mut rng);
                let p = a.eval(&n)?;
                if !p.feasible {
                    continue;
                }
                let d = objective.energy(&p.estimate) - objective.energy(&walker.estimate);
                if d.is_finite() && d > 0.0 {
                    ups.push(d);
                }
                walker = p;
            }
            if ups.is_empty() {
                1.0
            } else {
                // an average uphill move is accepted with probability 0.8
                -(ups.iter().sum::<f64>() / ups.len() as f64) / 0.8f64.ln()
            }
        }
    };

    let cooling = schedule.final_ratio.powf(1.0 / schedule.iterations.max(1) as f64);
    let mut best = current.clone();
    let mut t = t0;
    for _ in 0..schedule.iterations {
        let n = a.neighbour(&current.config, &mut rng);
        let cand = a.eval(&n)?;
        t *= cooling;
        if !cand.feasible {
            continue;
        }
        let d = objective.energy(&cand.estimate) - objective.energy(&current.estimate);
        let accept = d <= 0.0 || (t > 0.0 && rng.gen::<f64>() < (-d / t).exp());
        if compare(objective, platform, &cand, &best) == Ordering::Less {
            best = cand.clone();
        }
        if accept {
            current = cand;
        }
    }

    let mut evaluated: Vec<DesignPoint> = a.cache.into_values().collect();
    evaluated.sort_by(|x, y| x.config.cmp(&y.config));
    Ok(AnnealResult {
        best,
        evaluated,
        initial_temperature: t0,
    })
}

/// Non-dominated designs over (throughput, batch-1 latency), sorted by
/// throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<DesignPoint>,
}

fn dominates(a: &DesignPoint, b: &DesignPoint) -> bool {
    let (ta, la) = (a.estimate.throughput_inputs_s, a.estimate.latency_s);
    let (tb, lb) = (b.estimate.throughput_inputs_s, b.estimate.latency_s);
    ta >= tb && la <= lb && (ta > tb || la < lb)
}

/// Keeps feasible points no other point dominates; among points with equal
/// objectives the one with fewer resources (then smaller config) stays.
pub fn pareto_filter(points: &[DesignPoint], platform: &PlatformSpec) -> ParetoFront {
    let mut feasible: Vec<&DesignPoint> = points.iter().filter(|p| p.feasible).collect();
    feasible.sort_by(|a, b| {
        b.estimate
            .throughput_inputs_s
            .total_cmp(&a.estimate.throughput_inputs_s)
            .then(a.estimate.latency_s.total_cmp(&b.estimate.latency_s))
            .then(a.resources.weight(platform).total_cmp(&b.resources.weight(platform)))
            .then(a.config.cmp(&b.config))
    });
    let mut front: Vec<DesignPoint> = Vec::new();
    let mut best_latency = f64::INFINITY;
    for p in feasible {
        // sorted by decreasing throughput: p survives iff it beats every
        // faster point on latency
        if p.estimate.latency_s < best_latency {
            best_latency = p.estimate.latency_s;
            front.push(p.clone());
        }
    }
    debug_assert!(front.iter().all(|a| front.iter().all(|b| !dominates(b, a))));
    front.reverse();
    ParetoFront { points: front }
}

/// Anneals under both pure objectives and a sweep of scalarisation weights
/// for every seed, then filters everything evaluated.
pub fn pareto_search(
    model: &ConvNetModel,
    platform: &PlatformSpec,
    bounds: &SearchBounds,
    seeds: &[u64],
    schedule: &AnnealSchedule,
) -> Result<ParetoFront, DseError> {
    if seeds.is_empty() {
        return Err(DseError::Bounds("pareto search needs at least one seed".into()));
    }
    let pure: Vec<(u64, Objective)> = seeds
        .iter()
        .flat_map(|&s| [(s, Objective::MaxThroughput), (s, Objective::MinLatency)])
        .collect();
    let pure_runs: Vec<Result<AnnealResult, DseError>> = pure
        .par_iter()
        .map(|(s, o)| simulated_annealing(model, platform, o, bounds, *s, schedule))
        .collect();
    let mut all: Vec<DesignPoint> = Vec::new();
    let mut t_ref: f64 = 0.0;
    let mut l_ref = f64::INFINITY;
    let mut last_err = None;
    for (run, (_, o)) in pure_runs.into_iter().zip(&pure) {
        match run {
            Ok(r) => {
                match o {
                    Objective::MaxThroughput => t_ref = t_ref.max(r.best.estimate.throughput_inputs_s),
                    _ => l_ref = l_ref.min(r.best.estimate.latency_s),
                }
                all.extend(r.evaluated);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if t_ref > 0.0 && l_ref.is_finite() {
        let weighted: Vec<(u64, Objective)> = seeds
            .iter()
            .flat_map(|&s| {
                (1..=9).map(move |k| {
                    let w = k as f64 / 10.0;
                    (s, Objective::multi(w, 1.0 - w, t_ref, l_ref).unwrap())
                })
            })
            .collect();
        let runs: Vec<Result<AnnealResult, DseError>> = weighted
            .par_iter()
            .map(|(s, o)| simulated_annealing(model, platform, o, bounds, *s, schedule))
            .collect();
        for r in runs {
            match r {
                Ok(r) => all.extend(r.evaluated),
                Err(e) => last_err = Some(e),
            }
        }
    }
    if all.iter().all(|p| !p.feasible) {
        return Err(last_err.unwrap_or(DseError::NoFeasibleStart(0)));
    }
    all.sort_by(|a, b| a.config.cmp(&b.config));
    all.dedup_by(|a, b| a.config == b.config);
    Ok(pareto_filter(&all, platform))
}

/// One CSV row per evaluated point.
pub fn evaluation_log_csv(points: &[DesignPoint], objective: &Objective) -> String {
    let mut s = String::from(
        "config_hash,strategy,batch,cuts,foldings,throughput_inputs_s,latency_s,throughput_gops,score,dsp,bram_kb,lut,bandwidth_gbps,feasible\n",
    );
    for p in points {
        let cuts = p.config.cuts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let folds = p
            .config
            .foldings
            .iter()
            .map(|f| format!("{}x{}", f.coarse, f.fine))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.config.hash(),
            p.config.strategy.name(),
            p.config.batch,
            cuts,
            folds,
            p.estimate.throughput_inputs_s,
            p.estimate.latency_s,
            p.estimate.throughput_gops,
            objective.score(&p.estimate),
            p.resources.dsp,
            p.resources.bram_kb,
            p.resources.lut,
            p.resources.bandwidth_gbps,
            p.feasible
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerSpec, Shape};

    fn one_conv() -> ConvNetModel {
        ConvNetModel::new("c", Shape::new(1, 8, 8), vec![LayerSpec::convolution("c", 3, 1, 0, 4)], vec![]).unwrap()
    }

    fn single_batch() -> SearchBounds {
        SearchBounds {
            batch_max: 1,
            strategies: vec![Strategy::Reconfiguration],
            ..Default::default()
        }
    }

    #[test]
    fn space_enumeration() {
        let m = one_conv();
        let s = SearchSpace::new(&m, &SearchBounds::default()).unwrap();
        assert_eq!(s.folding_choices(), 3 * 3);
        assert_eq!(s.batches.len(), 11);
        assert_eq!(s.size(&m), 9 * 2 * 11);
        assert_eq!(s.folding_at(0), vec![Folding::new(1, 1)]);
        assert_eq!(s.folding_at(8), vec![Folding::new(4, 9)]);
    }

    #[test]
    fn unconstrained_optimum_is_full_unfolding() {
        let m = one_conv();
        let p = PlatformSpec::zynq7045();
        let r = exhaustive_search(&m, &p, &Objective::MaxThroughput, &single_batch(), false).unwrap();
        let best = r.best.unwrap();
        // any folding whose bank keeps up with the input stream is optimal;
        // the tie-break picks the cheapest
        let all = exhaustive_search(&m, &p, &Objective::MaxThroughput, &single_batch(), true).unwrap();
        let top = all
            .log
            .unwrap()
            .iter()
            .map(|x| x.estimate.throughput_inputs_s)
            .fold(0.0, f64::max);
        assert_eq!(best.estimate.throughput_inputs_s, top);
    }

    #[test]
    fn zero_dsp_budget_is_empty() {
        let m = one_conv();
        let mut p = PlatformSpec::zynq7045();
        p.resources.dsp = 0;
        let r = exhaustive_search(&m, &p, &Objective::MaxThroughput, &single_batch(), false).unwrap();
        assert!(r.best.is_none());
        assert!(matches!(
            simulated_annealing(&m, &p, &Objective::MaxThroughput, &single_batch(), 1, &AnnealSchedule::default()),
            Err(DseError::NoFeasibleStart(10))
        ));
    }

    #[test]
    fn space_cap_enforced() {
        let m = one_conv();
        let bounds = SearchBounds {
            space_cap: 10,
            ..Default::default()
        };
        let e = exhaustive_search(&m, &PlatformSpec::zynq7045(), &Objective::MaxThroughput, &bounds, false);
        assert!(matches!(e, Err(DseError::SpaceTooLarge { .. })));
    }

    #[test]
    fn single_point_space() {
        let m = ConvNetModel::new("r", Shape::new(1, 4, 4), vec![LayerSpec::relu("r")], vec![]).unwrap();
        let p = PlatformSpec::zynq7045();
        let a = simulated_annealing(&m, &p, &Objective::MaxThroughput, &single_batch(), 1, &AnnealSchedule::default()).unwrap();
        let b = simulated_annealing(&m, &p, &Objective::MaxThroughput, &single_batch(), 99, &AnnealSchedule::default()).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.evaluated.len(), 1);
    }

    #[test]
    fn annealing_is_deterministic() {
        let m = one_conv();
        let p = PlatformSpec::zynq7045();
        let run = || simulated_annealing(&m, &p, &Objective::MaxThroughput, &SearchBounds::default(), 7, &AnnealSchedule::default()).unwrap();
        assert_eq!(run().best, run().best);
    }

    #[test]
    fn pareto_filter_rules() {
        let p = PlatformSpec::zynq7045();
        let m = one_conv();
        let space = SearchSpace::new(&m, &SearchBounds::default()).unwrap();
        let mk = |t: f64, l: f64, b: u64| {
            let mut d = evaluate(&m, &p, &space, &DesignConfig { batch: b, ..space.minimal() }).unwrap();
            d.estimate.throughput_inputs_s = t;
            d.estimate.latency_s = l;
            d
        };
        let fast = mk(100.0, 2.0, 1);
        let quick = mk(50.0, 1.0, 2);
        let bad = mk(40.0, 3.0, 4);
        let f = pareto_filter(&[fast.clone(), quick.clone(), bad], &p);
        assert_eq!(f.points, vec![quick, fast]);
    }

    #[test]
    fn multiobjective_validation() {
        assert!(Objective::multi(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(Objective::multi(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(Objective::multi(0.5, 0.5, 1.0, 1.0).is_ok());
    }
}
