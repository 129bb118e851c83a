use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use m2m_core::harness::{self, ExperimentFile, BENCH_LADDER};
use m2m_core::mapf::{read_plan, validate_plan};
use m2m_core::sim::{self, AllocatorMode, SimConfig};
use m2m_core::{CostParams, GridMap, MapAsset};

#[derive(Parser)]
#[command(name = "m2m", version, about = "Lifelong many-to-many pickup and delivery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its CSV outputs.
    Run(RunArgs),
    /// Run every map/density/mode/seed combination and summarise.
    Experiment(ExperimentArgs),
    /// Time the initial greedy allocation on growing synthetic instances.
    BenchAlloc(BenchArgs),
    /// Replay an `agent,t,x,y` path dump and report collisions.
    Validate(ValidateArgs),
    /// Print a map and its cell counts.
    DumpMap(DumpMapArgs),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    agents: Option<usize>,
    /// LNS iterations per allocation round.
    #[arg(long)]
    lns_iterations: Option<u64>,
    /// Wall-clock allowance per allocation round in milliseconds.
    #[arg(long)]
    budget_ms: Option<u64>,
}

impl Overrides {
    fn file(&self) -> Result<ExperimentFile> {
        let mut f = match &self.config {
            Some(path) => ExperimentFile::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentFile::default(),
        };
        if let Some(h) = self.horizon {
            f.sim.horizon = h;
        }
        if let Some(a) = self.agents {
            f.sim.agents = a;
        }
        if let Some(n) = self.lns_iterations {
            f.sim.lns_iterations = Some(n);
        }
        if let Some(ms) = self.budget_ms {
            f.sim.alloc_budget_ms = Some(ms);
        }
        Ok(f)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    map: Option<MapAsset>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    mode: Option<AllocatorMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; the run writes to a subdirectory named by config hash and seed.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Also write the executed paths as `paths.csv`.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated map names.
    #[arg(long, value_delimiter = ',')]
    map: Vec<MapAsset>,
    #[arg(long, value_delimiter = ',')]
    density: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    mode: Vec<AllocatorMode>,
    /// Number of seeds, 0..n.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, default_value = "experiments")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "restricted")]
    map: MapAsset,
    /// Comma-separated sizes with M = N; defaults to 50,70,...,150.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Path dump written by `run --dump-paths`.
    plan: PathBuf,
    #[arg(long, default_value = "restricted")]
    map: MapAsset,
    /// Map file instead of a bundled asset.
    #[arg(long)]
    map_file: Option<PathBuf>,
}

#[derive(Args)]
struct DumpMapArgs {
    #[arg(long, default_value = "restricted")]
    map: MapAsset,
    #[arg(long)]
    map_file: Option<PathBuf>,
}

fn load_map(asset: MapAsset, file: Option<&PathBuf>) -> Result<GridMap> {
    match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(GridMap::parse(&text)?)
        }
        None => Ok(asset.load()),
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let f = args.common.file()?;
    let mut config = SimConfig {
        map: args.map.unwrap_or(f.maps[0]),
        density: args.density.unwrap_or(f.densities[0]),
        mode: args.mode.unwrap_or(f.modes[0]),
        seed: args.seed.unwrap_or(f.seeds[0]),
        ..f.sim
    };
    config.record_trajectories |= args.dump_paths;
    config.validate().map_err(anyhow::Error::msg)?;
    let out = sim::run(config.clone())?;
    let dir = harness::run_dir(&args.out, &config);
    harness::write_run(&dir, &config, &out, &config.map.load())?;
    println!(
        "{} {} density={} seed={}: completed {} of {} released, {:.2} tasks/min, mean allocation {:.2} ms, {} planning fallbacks",
        config.map,
        config.mode,
        config.density,
        config.seed,
        out.completed,
        out.released,
        out.mean_throughput,
        out.mean_alloc_ms(),
        out.plan_stats.failures
    );
    println!("wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let mut f = args.common.file()?;
    if !args.map.is_empty() {
        f.maps = args.map;
    }
    if !args.density.is_empty() {
        f.densities = args.density;
    }
    if !args.mode.is_empty() {
        f.modes = args.mode;
    }
    if let Some(n) = args.seeds {
        f.seeds = (0..n).collect();
    }
    let plan = f.plan();
    plan.validate().map_err(anyhow::Error::msg)?;
    if let Some(j) = args.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let report = harness::run_experiment(&plan, Some(&args.out))?;
    harness::write_summary(&report.summary, io::stdout().lock())?;
    for (config, err) in &report.failures {
        eprintln!("run failed: {} {} density={} seed={}: {err}", config.map, config.mode, config.density, config.seed);
    }
    Ok(if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let sizes: Vec<(usize, usize)> = if args.sizes.is_empty() {
        BENCH_LADDER.to_vec()
    } else {
        args.sizes.iter().map(|&s| (s, s)).collect()
    };
    let map = args.map.load();
    let rows = harness::bench_initial_allocation(&sizes, &map, args.repeats, &CostParams::default(), args.seed);
    match args.out {
        Some(p) => harness::write_bench(&rows, BufWriter::new(File::create(&p)?))?,
        None => harness::write_bench(&rows, io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let map = load_map(args.map, args.map_file.as_ref())?;
    let file = File::open(&args.plan).with_context(|| format!("opening {}", args.plan.display()))?;
    let paths = read_plan(&map, BufReader::new(file))?;
    let found = validate_plan(&paths, &map);
    let mut out = io::stdout().lock();
    for (a, b, c) in &found {
        match c {
            None => writeln!(out, "agent {a}: path leaves the grid or jumps")?,
            Some(c) => writeln!(out, "agents {a} and {b}: {:?} conflict at t={}", c.kind, c.t)?,
        }
    }
    writeln!(out, "{} paths, {} problems", paths.len(), found.len())?;
    Ok(if found.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn dump_map(args: DumpMapArgs) -> Result<ExitCode> {
    let map = load_map(args.map, args.map_file.as_ref())?;
    if map.num_traversable() == 0 {
        bail!("map has no traversable cells");
    }
    print!("{}", map.to_ascii());
    println!(
        "{}x{}: {} traversable, {} storage endpoints, {} loading endpoints",
        map.height(),
        map.width(),
        map.num_traversable(),
        map.storage_endpoints().len(),
        map.loading_endpoints().len()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Experiment(a) => experiment(a),
        Command::BenchAlloc(a) => bench(a),
        Command::Validate(a) => validate(a),
        Command::DumpMap(a) => dump_map(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
