use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use convsdf::descriptor::{DescriptorError, DesignDescriptor};
use convsdf::dse::{
    evaluation_log_csv, exhaustive_search, pareto_search, simulated_annealing, AnnealSchedule, DesignPoint, DseError,
    Objective, SearchBounds, SearchSpace, Strategy,
};
use convsdf::model::{parse_native, parse_prototxt, ConvNetModel};
use convsdf::perf::{check_feasible, PlatformSpec};
use convsdf::report::{pareto_csv, pareto_svg};
use convsdf::sdf::{gamma_csv, lower_model, to_dot, topology_matrix, workload_csv, workload_matrix, FoldingConfig};
use convsdf::sim::SimConfig;
use convsdf::validate::{check_design, design_graphs};

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "convsdf", version, about = "Dataflow modelling and design space exploration for ConvNet accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Auto,
    Native,
    Prototxt,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ObjectiveArg {
    Throughput,
    Latency,
    Pareto,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SearchArg {
    /// Exhaustive when the space is small enough, annealing otherwise.
    Auto,
    Exhaustive,
    Anneal,
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpWhat {
    Gamma,
    Workload,
    Dot,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Model file (.prototxt or native .json).
    model: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: Format,
}

#[derive(clap::Args)]
struct PlatformArg {
    /// Platform TOML; defaults to the built-in Zynq-7045 description.
    #[arg(long, env = "CONVSDF_PLATFORM")]
    platform: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model and print its layers with inferred shapes.
    Parse {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Search for the best design and write it as a descriptor.
    Optimize {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        platform: PlatformArg,
        #[arg(long, value_enum, default_value = "throughput")]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extra seeds for the Pareto sweep.
        #[arg(long, default_value_t = 3)]
        pareto_seeds: u64,
        #[arg(long, value_enum, default_value = "auto")]
        search: SearchArg,
        #[arg(long, default_value_t = 4)]
        max_partitions: usize,
        #[arg(long, default_value_t = 1)]
        batch_min: u64,
        #[arg(long, default_value_t = 1024)]
        batch_max: u64,
        /// Restrict to one execution strategy.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        #[arg(long, default_value_t = 20_000)]
        iterations: usize,
        /// Largest space searched exhaustively under `--search auto`.
        #[arg(long, default_value_t = 20_000)]
        exhaustive_limit: u128,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pareto_csv: Option<PathBuf>,
        #[arg(long)]
        pareto_svg: Option<PathBuf>,
        /// Write every evaluated point as CSV.
        #[arg(long)]
        log_csv: Option<PathBuf>,
    },
    /// Re-estimate a descriptor and compare with the token simulator.
    Simulate {
        descriptor: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        platform: PlatformArg,
        /// Batch sizes to simulate; defaults to the descriptor's.
        #[arg(long = "batch")]
        batches: Vec<u64>,
        /// Largest accepted relative cycle error.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 200_000_000)]
        max_cycles: u64,
    },
    /// Print the topology matrix, workload matrix or Graphviz graph.
    Dump {
        #[arg(value_enum)]
        what: DumpWhat,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        platform: PlatformArg,
        /// Take foldings from a descriptor instead of full unfolding.
        #[arg(long)]
        descriptor: Option<PathBuf>,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "reconfiguration" => Ok(Strategy::Reconfiguration),
        "weights-reloading" | "weights_reloading" => Ok(Strategy::WeightsReloading),
        _ => Err(format!("unknown strategy `{s}` (reconfiguration, weights-reloading)")),
    }
}

/// Message and exit code of a failed command.
struct Failure(u8, String);

impl Failure {
    fn input(msg: impl std::fmt::Display) -> Self {
        Failure(EXIT_INPUT, msg.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure(1, format!("{}: {e}", path.display())))
}

fn load_model(args: &ModelArgs) -> Result<ConvNetModel, Failure> {
    let text = read(&args.model)?;
    let format = match args.format {
        Format::Auto if args.model.extension().is_some_and(|e| e == "prototxt") => Format::Prototxt,
        Format::Auto => Format::Native,
        f => f,
    };
    let parsed = match format {
        Format::Prototxt => parse_prototxt(&text),
        _ => parse_native(&text),
    };
    parsed.map_err(|e| Failure::input(format!("{}: {e}", args.model.display())))
}

fn load_platform(arg: &PlatformArg) -> Result<PlatformSpec, Failure> {
    match &arg.platform {
        None => Ok(PlatformSpec::zynq7045()),
        Some(p) => PlatformSpec::load(p).map_err(Failure::input),
    }
}

fn load_descriptor(path: &Path) -> Result<DesignDescriptor, Failure> {
    DesignDescriptor::from_json(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn dse_failure(e: DseError, model: &ConvNetModel, platform: &PlatformSpec) -> Failure {
    match e {
        DseError::NoFeasibleStart(_) => infeasible(model, platform),
        e => Failure::input(e),
    }
}

/// Exit 3 with the slack report of the smallest design.
fn infeasible(model: &ConvNetModel, platform: &PlatformSpec) -> Failure {
    let mut msg = String::from("no feasible design on this platform\nsmallest design (all layers folded to one unit):\n");
    let bounds = SearchBounds {
        max_partitions: 1,
        batch_max: 1,
        strategies: vec![Strategy::Reconfiguration],
        ..Default::default()
    };
    if let Ok(space) = SearchSpace::new(model, &bounds) {
        if let Ok(p) = convsdf::dse::evaluate(model, platform, &space, &space.minimal()) {
            msg.push_str(&check_feasible(&p.resources, platform).to_string());
        }
    }
    Failure(EXIT_INFEASIBLE, msg.trim_end().to_string())
}

fn summary(p: &DesignPoint) -> String {
    let e = &p.estimate;
    format!(
        "strategy {}  batch {}  cuts {:?}\nthroughput {:.3} inputs/s ({:.3} GOp/s)  batch-1 latency {:.4} ms\nresources: {} DSP, {:.1} KB BRAM, {} LUT, {:.3} GB/s",
        p.config.strategy.name(),
        p.config.batch,
        p.config.cuts,
        e.throughput_inputs_s,
        e.throughput_gops,
        e.latency_s * 1e3,
        p.resources.dsp,
        p.resources.bram_kb,
        p.resources.lut,
        p.resources.bandwidth_gbps
    )
}

fn cmd_parse(args: &ModelArgs) -> Outcome {
    let m = load_model(args)?;
    print!("{}", m.summary_table());
    println!(
        "{} layers, {} weights, {} ops per input",
        m.layers().len(),
        m.weight_elements(),
        m.total_ops()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    model_args: &ModelArgs,
    platform_arg: &PlatformArg,
    objective: ObjectiveArg,
    seed: u64,
    pareto_seeds: u64,
    search: SearchArg,
    bounds: SearchBounds,
    iterations: usize,
    exhaustive_limit: u128,
    out: Option<&Path>,
    csv: Option<&Path>,
    svg: Option<&Path>,
    log_csv: Option<&Path>,
) -> Outcome {
    let model = load_model(model_args)?;
    let platform = load_platform(platform_arg)?;
    let space = SearchSpace::new(&model, &bounds).map_err(Failure::input)?;
    let schedule = AnnealSchedule {
        iterations,
        ..Default::default()
    };

    if objective == ObjectiveArg::Pareto {
        let seeds: Vec<u64> = (0..pareto_seeds.max(1)).map(|i| seed.wrapping_add(i)).collect();
        let front =
            pareto_search(&model, &platform, &bounds, &seeds, &schedule).map_err(|e| dse_failure(e, &model, &platform))?;
        println!("{} non-dominated designs", front.points.len());
        for p in &front.points {
            println!(
                "  {:<18} B={:<5} T={:>12.3}/s  L={:>10.4} ms",
                p.config.strategy.name(),
                p.config.batch,
                p.estimate.throughput_inputs_s,
                p.estimate.latency_s * 1e3
            );
        }
        if let Some(path) = csv {
            write(path, &pareto_csv(&front))?;
        }
        if let Some(path) = svg {
            write(path, &pareto_svg(&front, &format!("{} on {}", model.name(), platform.name)))?;
        }
        if let (Some(path), Some(top)) = (out, front.points.last()) {
            let d = DesignDescriptor::from_point(&model, &platform, &space, top, "pareto", Some(seed))
                .map_err(Failure::input)?;
            write(path, &d.to_json())?;
        }
        return Ok(());
    }

    let obj = match objective {
        ObjectiveArg::Latency => Objective::MinLatency,
        _ => Objective::MaxThroughput,
    };
    let exhaustive = match search {
        SearchArg::Exhaustive => true,
        SearchArg::Anneal => false,
        SearchArg::Auto => space.size(&model) <= exhaustive_limit,
    };
    let (best, log) = if exhaustive {
        let r = exhaustive_search(&model, &platform, &obj, &bounds, log_csv.is_some()).map_err(Failure::input)?;
        println!("exhaustive search over {} points", r.evaluated);
        match r.best {
            Some(b) => (b, r.log.unwrap_or_default()),
            None => return Err(infeasible(&model, &platform)),
        }
    } else {
        let r = simulated_annealing(&model, &platform, &obj, &bounds, seed, &schedule)
            .map_err(|e| dse_failure(e, &model, &platform))?;
        println!("simulated annealing, seed {seed}, {} distinct points evaluated", r.evaluated.len());
        (r.best, r.evaluated)
    };
    println!("{}", summary(&best));
    if let Some(path) = log_csv {
        write(path, &evaluation_log_csv(&log, &obj))?;
    }
    if let Some(path) = out {
        let d = DesignDescriptor::from_point(&model, &platform, &space, &best, obj.name(), Some(seed))
            .map_err(Failure::input)?;
        write(path, &d.to_json())?;
    }
    Ok(())
}

fn cmd_simulate(
    descriptor: &Path,
    model_args: &ModelArgs,
    platform_arg: &PlatformArg,
    batches: &[u64],
    tolerance: f64,
    max_cycles: u64,
) -> Outcome {
    let d = load_descriptor(descriptor)?;
    let model = load_model(model_args)?;
    let platform = load_platform(platform_arg)?;
    d.check_model(&model).map_err(Failure::input)?;
    match d.check_platform(&platform) {
        Err(e @ DescriptorError::Platform { .. }) => eprintln!("warning: {e}"),
        Err(e) => return Err(Failure::input(e)),
        Ok(()) => {
            let (e, _, _) = d.reestimate(&model, &platform).map_err(Failure::input)?;
            let same = e == d.predicted;
            println!("re-estimate {} the recorded prediction", if same { "reproduces" } else { "DIFFERS FROM" });
        }
    }
    let cfg = SimConfig {
        max_cycles,
        ..Default::default()
    };
    let batches = if batches.is_empty() { vec![d.batch] } else { batches.to_vec() };
    let mut diverged = false;
    println!("{:>6} {:>16} {:>16} {:>10}", "batch", "predicted", "simulated", "rel.err");
    for &b in &batches {
        let check = check_design(&model, &platform, &d.cuts, &d.folding_config(), d.strategy, b, &cfg)
            .map_err(|e| Failure(EXIT_DIVERGENCE, e.to_string()))?;
        let ok = check.within(tolerance) && check.stages.iter().all(|s| s.tokens_exact);
        diverged |= !ok;
        println!(
            "{:>6} {:>16.1} {:>16} {:>+9.3}%{}",
            b,
            check.predicted_cycles,
            check.simulated_cycles,
            check.relative_error * 100.0,
            if ok { "" } else { "  FAIL" }
        );
    }
    if diverged {
        return Err(Failure(
            EXIT_DIVERGENCE,
            format!("prediction diverges from simulation by more than {:.2}%", tolerance * 100.0),
        ));
    }
    Ok(())
}

fn cmd_dump(what: DumpWhat, model_args: &ModelArgs, platform_arg: &PlatformArg, descriptor: Option<&Path>) -> Outcome {
    let model = load_model(model_args)?;
    let platform = load_platform(platform_arg)?;
    let graphs = match descriptor {
        Some(p) => {
            let d = load_descriptor(p)?;
            d.check_model(&model).map_err(Failure::input)?;
            design_graphs(&model, &platform, &d.cuts, &d.folding_config(), d.strategy).map_err(Failure::input)?
        }
        None => vec![lower_model(&model, &FoldingConfig::new(), platform.mem_rate()).map_err(Failure::input)?],
    };
    for (i, g) in graphs.iter().enumerate() {
        if graphs.len() > 1 {
            println!("# stage {i}");
        }
        match what {
            DumpWhat::Gamma => print!("{}", gamma_csv(g, &topology_matrix(g))),
            DumpWhat::Workload => print!("{}", workload_csv(g, &workload_matrix(&model, g))),
            DumpWhat::Dot => print!("{}", to_dot(g)),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Parse { model } => cmd_parse(&model),
        Command::Optimize {
            model,
            platform,
            objective,
            seed,
            pareto_seeds,
            search,
            max_partitions,
            batch_min,
            batch_max,
            strategy,
            iterations,
            exhaustive_limit,
            out,
            pareto_csv,
            pareto_svg,
            log_csv,
        } => {
            let bounds = SearchBounds {
                max_partitions,
                batch_min,
                batch_max,
                strategies: strategy.map_or_else(|| SearchBounds::default().strategies, |s| vec![s]),
                ..Default::default()
            };
            cmd_optimize(
                &model,
                &platform,
                objective,
                seed,
                pareto_seeds,
                search,
                bounds,
                iterations,
                exhaustive_limit,
                out.as_deref(),
                pareto_csv.as_deref(),
                pareto_svg.as_deref(),
                log_csv.as_deref(),
            )
        }
        Command::Simulate {
            descriptor,
            model,
            platform,
            batches,
            tolerance,
            max_cycles,
        } => cmd_simulate(&descriptor, &model, &platform, &batches, tolerance, max_cycles),
        Command::Dump {
            what,
            model,
            platform,
            descriptor,
        } => cmd_dump(what, &model, &platform, descriptor.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
