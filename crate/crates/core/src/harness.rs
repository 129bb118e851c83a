//! Batch experiments, summary tables and the allocation scalability bench.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::{greedy_allocate, AgentView, Allocation, CostMatrices, CostParams, TaskCandidates};
use crate::inventory::{Inventory, SkuId};
use crate::mapf::write_plan;
use crate::sim::{self, AllocatorMode, RunOutput, SimConfig};
use crate::tasks::{TaskId, TaskKind};
use crate::worldmap::{DistanceOracle, GridMap, MapAsset};

/// Experiment file: a `[sim]` table of base settings plus the axes swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub maps: Vec<MapAsset>,
    pub densities: Vec<f64>,
    pub modes: Vec<AllocatorMode>,
    pub seeds: Vec<u64>,
    pub sim: SimConfig,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            maps: vec![sim.map],
            densities: vec![sim.density],
            modes: vec![sim.mode],
            seeds: vec![sim.seed],
            sim,
        }
    }
}

impl ExperimentFile {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            base: self.sim.clone(),
            maps: self.maps.clone(),
            densities: self.densities.clone(),
            modes: self.modes.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

/// One experimental condition: everything but the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub map: MapAsset,
    pub density: f64,
    pub mode: AllocatorMode,
}

/// The cartesian product maps x densities x modes x seeds over a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: SimConfig,
    pub maps: Vec<MapAsset>,
    pub densities: Vec<f64>,
    pub modes: Vec<AllocatorMode>,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    pub fn conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        for &map in &self.maps {
            for &density in &self.densities {
                for &mode in &self.modes {
                    out.push(Condition { map, density, mode });
                }
            }
        }
        out
    }

    pub fn variants(&self) -> Vec<(usize, SimConfig)> {
        let mut out = Vec::new();
        for (k, c) in self.conditions().into_iter().enumerate() {
            for &seed in &self.seeds {
                out.push((
                    k,
                    SimConfig {
                        map: c.map,
                        density: c.density,
                        mode: c.mode,
                        seed,
                        ..self.base.clone()
                    },
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.maps.is_empty() || self.densities.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err("every experiment axis needs at least one value".into());
        }
        for (_, v) in self.variants() {
            v.validate()?;
        }
        Ok(())
    }
}

/// Hex digest of the config with the seed zeroed, so seeds of one condition
/// share a prefix.
pub fn config_hash(config: &SimConfig) -> String {
    let unseeded = SimConfig {
        seed: 0,
        ..config.clone()
    };
    let text = toml::to_string(&unseeded).expect("config serialises");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..6])
}

pub fn run_dir(root: &Path, config: &SimConfig) -> PathBuf {
    root.join(format!("{}-{}-seed{}", config.map, config_hash(config), config.seed))
}

/// Writes `config.toml`, `metrics.csv`, `alloc_timing.csv`, `events.csv`
/// and, when trajectories were kept, `paths.csv`.
pub fn write_run(dir: &Path, config: &SimConfig, out: &RunOutput, map: &GridMap) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let text = toml::to_string(config).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    fs::write(dir.join("config.toml"), text)?;
    let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
    sim::write_metrics(&out.metrics, open("metrics.csv")?)?;
    sim::write_timings(&out.timings, open("alloc_timing.csv")?)?;
    sim::write_events(&out.events, open("events.csv")?)?;
    if !out.trajectories.is_empty() {
        write_plan(&out.trajectories, map, open("paths.csv")?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; 0 for fewer than two samples.
    pub std: f64,
}

pub fn stats(xs: &[f64]) -> Stats {
    if xs.is_empty() {
        return Stats {
            mean: f64::NAN,
            median: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stats { mean, median, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub condition: usize,
    pub seed: u64,
    pub throughput: f64,
    pub completed: u64,
    pub mean_alloc_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub condition: Condition,
    pub runs: usize,
    pub throughput: Stats,
    pub mean_completed: f64,
    pub mean_alloc_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Failed runs as (config, error).
    pub failures: Vec<(SimConfig, String)>,
}

/// Folds per-run records into one row per condition that has runs.
pub fn summarize(conditions: &[Condition], runs: &[RunRecord]) -> Vec<SummaryRow> {
    conditions
        .iter()
        .enumerate()
        .filter_map(|(k, &condition)| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.condition == k).collect();
            if mine.is_empty() {
                return None;
            }
            let n = mine.len() as f64;
            let thr: Vec<f64> = mine.iter().map(|r| r.throughput).collect();
            Some(SummaryRow {
                condition,
                runs: mine.len(),
                throughput: stats(&thr),
                mean_completed: mine.iter().map(|r| r.completed as f64).sum::<f64>() / n,
                mean_alloc_ms: mine.iter().map(|r| r.mean_alloc_ms).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Runs every variant in parallel. With `output`, each run's files go to
/// its own directory and `summary.csv` to the root.
pub fn run_experiment(plan: &ExperimentPlan, output: Option<&Path>) -> io::Result<ExperimentReport> {
    let results: Vec<(usize, SimConfig, Result<RunOutput, String>)> = plan
        .variants()
        .into_par_iter()
        .map(|(k, config)| {
            let out = sim::run(config.clone()).map_err(|e| e.to_string());
            (k, config, out)
        })
        .collect();
    let mut report = ExperimentReport::default();
    for (k, config, result) in results {
        match result {
            Ok(out) => {
                if let Some(root) = output {
                    write_run(&run_dir(root, &config), &config, &out, &config.map.load())?;
                }
                report.runs.push(RunRecord {
                    condition: k,
                    seed: config.seed,
                    throughput: out.mean_throughput,
                    completed: out.completed,
                    mean_alloc_ms: out.mean_alloc_ms(),
                });
            }
            Err(e) => report.failures.push((config, e)),
        }
    }
    report.summary = summarize(&plan.conditions(), &report.runs);
    if let Some(root) = output {
        fs::create_dir_all(root)?;
        write_summary(&report.summary, BufWriter::new(File::create(root.join("summary.csv"))?))?;
    }
    Ok(report)
}

pub fn write_summary(rows: &[SummaryRow], mut out: impl Write) -> io::Result<()> {
    writeln!(
        out,
        "map,density,mode,runs,mean_throughput,median_throughput,std_throughput,mean_completed,mean_alloc_ms"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4},{:.4},{:.4},{:.1},{:.3}",
            r.condition.map,
            r.condition.density,
            r.condition.mode,
            r.runs,
            r.throughput.mean,
            r.throughput.median,
            r.throughput.std,
            r.mean_completed,
            r.mean_alloc_ms
        )?;
    }
    Ok(())
}

/// A random allocation instance: agents on distinct free cells and bound
/// tasks over a random inventory.
#[derive(Debug, Clone)]
pub struct Instance {
    pub agents: Vec<AgentView>,
    pub tasks: Vec<TaskCandidates>,
    pub inventory: Inventory,
}

/// Half inbound, half outbound tasks over an inventory at `density` with
/// `num_skus` SKUs. Outbound SKUs are drawn among stored ones.
pub fn synthetic_instance(
    map: &GridMap,
    agents: usize,
    tasks: usize,
    density: f64,
    num_skus: usize,
    rng: &mut impl Rng,
) -> Instance {
    let inventory = Inventory::initialize(map, density, num_skus, rng);
    let mut cells: Vec<_> = map.traversable_cells().collect();
    cells.shuffle(rng);
    let agents = cells.iter().take(agents).map(|&c| AgentView::idle(c)).collect();
    let stored: Vec<u32> = (0..num_skus as u32).filter(|&s| inventory.count(SkuId(s)) > 0).collect();
    let empty = inventory.empty_storage();
    let mut out = Vec::with_capacity(tasks);
    for n in 0..tasks {
        let inbound = stored.is_empty() || (!empty.is_empty() && rng.gen_bool(0.5));
        let (kind, sku, starts, dests) = if inbound {
            let sku = SkuId(rng.gen_range(0..num_skus as u32));
            (TaskKind::Inbound, sku, map.loading_endpoints().to_vec(), empty.clone())
        } else {
            let sku = SkuId(stored[rng.gen_range(0..stored.len())]);
            (TaskKind::Outbound, sku, inventory.cells_with(sku), map.loading_endpoints().to_vec())
        };
        out.push(TaskCandidates {
            id: TaskId(n as u64),
            kind,
            sku,
            starts,
            dests,
        });
    }
    Instance {
        agents,
        tasks: out,
        inventory,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub agents: usize,
    pub tasks: usize,
    pub repeats: usize,
    /// Greedy construction alone, seconds.
    pub greedy: Stats,
    /// Matrix construction, seconds.
    pub mean_build: f64,
}

/// Times the initial greedy allocation on fresh synthetic instances of each
/// size, `repeats` times per size.
pub fn bench_initial_allocation(
    sizes: &[(usize, usize)],
    map: &GridMap,
    repeats: usize,
    params: &CostParams<f64>,
    seed: u64,
) -> Vec<BenchRow> {
    let oracle = DistanceOracle::build(map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&(m, n)| {
            let mut greedy = Vec::with_capacity(repeats);
            let mut build = 0.0;
            for _ in 0..repeats {
                let inst = synthetic_instance(map, m, n, 0.3, 30, &mut rng);
                let t0 = Instant::now();
                let mut mats = CostMatrices::build(&inst.agents, inst.tasks, &oracle, map.num_cells());
                let t1 = Instant::now();
                let mut alloc = Allocation::from_agents(&inst.agents, &oracle);
                greedy_allocate(&mut mats, &mut alloc, &inst.inventory, &oracle, params);
                greedy.push(t1.elapsed().as_secs_f64());
                build += (t1 - t0).as_secs_f64();
            }
            BenchRow {
                agents: m,
                tasks: n,
                repeats,
                greedy: stats(&greedy),
                mean_build: build / repeats.max(1) as f64,
            }
        })
        .collect()
}

pub const BENCH_LADDER: [(usize, usize); 6] = [(50, 50), (70, 70), (90, 90), (110, 110), (130, 130), (150, 150)];

pub fn write_bench(rows: &[BenchRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "agents,tasks,repeats,mean_s,std_s,mean_build_s")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.agents, r.tasks, r.repeats, r.greedy.mean, r.greedy.std, r.mean_build
        )?;
    }
    Ok(())
}
