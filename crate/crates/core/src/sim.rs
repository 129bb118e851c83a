//! The lifelong discrete-time warehouse loop.
//!
//! Each tick: release tasks, reallocate when free tasks exist, replan agents
//! whose goal changed, move everyone one step, fire pickups and deliveries,
//! record metrics. One tick is one simulated second by default.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{
    convert_one_to_one, greedy_allocate, AgentView, Allocation, Assignment, CostMatrices, CostMode, CostParams,
    InProgress, TaskCandidates,
};
use crate::inventory::{Inventory, SkuId};
use crate::lns::{lns_improve, Budget, LnsContext, LnsParams};
use crate::mapf::{validate_plan, LowLevel, Pbs, PbsConfig, PlanRequest, TimedPath};
use crate::tasks::{ReleasePolicy, TaskError, TaskEvent, TaskId, TaskKind, TaskPool, TaskState};
use crate::worldmap::{CellId, DistanceOracle, GridMap, MapAsset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AllocatorMode {
    /// Many-to-many allocation on travel cost.
    #[serde(rename = "m2m")]
    Base,
    /// Many-to-many with the SKU-spreading cost.
    #[serde(rename = "m2m-wsku")]
    WSku,
    /// Each task collapsed to its cheapest (start, destination) pair once.
    #[serde(rename = "baseline")]
    OneToOneBaseline,
}

impl AllocatorMode {
    pub const ALL: [AllocatorMode; 3] = [AllocatorMode::Base, AllocatorMode::WSku, AllocatorMode::OneToOneBaseline];

    pub fn name(self) -> &'static str {
        match self {
            AllocatorMode::Base => "m2m",
            AllocatorMode::WSku => "m2m-wsku",
            AllocatorMode::OneToOneBaseline => "baseline",
        }
    }

    fn cost_mode(self) -> CostMode {
        match self {
            AllocatorMode::WSku => CostMode::WSku,
            _ => CostMode::Base,
        }
    }
}

impl FromStr for AllocatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m2m" | "base" => Ok(AllocatorMode::Base),
            "m2m-wsku" | "wsku" => Ok(AllocatorMode::WSku),
            "baseline" | "one-to-one" | "one-to-one-baseline" => Ok(AllocatorMode::OneToOneBaseline),
            other => Err(format!("unknown allocator mode `{other}`")),
        }
    }
}

impl fmt::Display for AllocatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub map: MapAsset,
    pub agents: usize,
    pub num_skus: usize,
    /// Target fraction of storage endpoints holding an item.
    pub density: f64,
    pub release_rate: usize,
    pub active_cap: usize,
    pub density_gain: f64,
    pub mode: AllocatorMode,
    pub max_sequence: usize,
    pub base_weight: f64,
    pub sku_weight: f64,
    pub spatial_weight: f64,
    pub temporal_weight: f64,
    pub remove_count: usize,
    pub initial_temperature: f64,
    pub decay: f64,
    /// Wall-clock allowance per allocation round, greedy included.
    pub alloc_budget_ms: Option<u64>,
    /// LNS iteration cap per round. With a cap that is reached before the
    /// wall-clock budget, runs are reproducible bit for bit.
    pub lns_iterations: Option<u64>,
    pub pbs_node_cap: usize,
    pub pbs_horizon: Option<u64>,
    /// Timesteps to simulate.
    pub horizon: u64,
    pub seconds_per_step: f64,
    pub window_seconds: f64,
    pub seed: u64,
    /// Keep every executed position for replay validation.
    pub record_trajectories: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            map: MapAsset::Restricted,
            agents: 40,
            num_skus: 30,
            density: 0.3,
            release_rate: 4,
            active_cap: 120,
            density_gain: 2.0,
            mode: AllocatorMode::Base,
            max_sequence: 3,
            base_weight: 1.0,
            sku_weight: 0.25,
            spatial_weight: 9.0,
            temporal_weight: 3.0,
            remove_count: 3,
            initial_temperature: 1.0,
            decay: 0.99,
            alloc_budget_ms: Some(1000),
            lns_iterations: Some(100),
            pbs_node_cap: 5000,
            pbs_horizon: None,
            horizon: 3000,
            seconds_per_step: 1.0,
            window_seconds: 600.0,
            seed: 0,
            record_trajectories: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(format!("density {} outside [0, 1]", self.density));
        }
        if self.max_sequence == 0 {
            return Err("max_sequence must be at least 1".into());
        }
        if self.seconds_per_step <= 0.0 || self.window_seconds <= 0.0 {
            return Err("time scales must be positive".into());
        }
        if self.pbs_node_cap == 0 {
            return Err("pbs_node_cap must be at least 1".into());
        }
        self.lns_params().validate()
    }

    pub fn cost_params(&self) -> CostParams<f64> {
        CostParams {
            mode: self.mode.cost_mode(),
            base_weight: self.base_weight,
            sku_weight: self.sku_weight,
            max_sequence: self.max_sequence,
        }
    }

    pub fn lns_params(&self) -> LnsParams<f64> {
        LnsParams {
            spatial_weight: self.spatial_weight,
            temporal_weight: self.temporal_weight,
            remove_count: self.remove_count,
            initial_temperature: self.initial_temperature,
            decay: self.decay,
        }
    }

    pub fn release_policy(&self) -> ReleasePolicy {
        ReleasePolicy {
            rate: self.release_rate,
            active_cap: self.active_cap,
            target_density: self.density,
            gain: self.density_gain,
        }
    }

    pub fn pbs_config(&self) -> PbsConfig {
        PbsConfig {
            node_cap: self.pbs_node_cap,
            horizon: self.pbs_horizon,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("agents {a} and {b} collide at t={t}")]
    Collision { t: u64, a: usize, b: usize },
    #[error("sku {sku:?} count drifted at t={t}: stored {stored}, expected {expected}")]
    Conservation {
        t: u64,
        sku: SkuId,
        stored: usize,
        expected: i64,
    },
    #[error("not enough free cells for {0} agents")]
    Crowded(usize),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub position: CellId,
    pub carrying: Option<(SkuId, TaskId)>,
    /// Allocated triples; the first is being executed.
    pub sequence: Vec<Assignment<f64>>,
    pub path: TimedPath,
    pub parking: Option<CellId>,
}

impl AgentState {
    fn view(&self) -> AgentView {
        AgentView {
            position: self.position,
            in_progress: self.sequence.first().map(|a| InProgress {
                task: a.task,
                start: a.start,
                dest: a.dest,
                picked_up: self.carrying.is_some(),
            }),
        }
    }
}

/// One row of `metrics.csv`, recorded after the move of the tick ending at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub completions: u64,
    pub window_completions: u64,
    /// Tasks per simulated minute over the trailing window.
    pub throughput: f64,
    pub cumulative: u64,
    pub density: f64,
}

/// Wall-clock cost of one allocation round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocTiming {
    pub t: u64,
    pub alloc_ms: f64,
    pub candidates: usize,
    pub lns_iterations: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanStats {
    pub rounds: u64,
    pub failures: u64,
    pub expanded: u64,
}

pub struct Simulation {
    config: SimConfig,
    map: GridMap,
    oracle: DistanceOracle,
    inventory: Inventory,
    pool: TaskPool,
    agents: Vec<AgentState>,
    rng: ChaCha8Rng,
    low: LowLevel,
    parking_ok: Vec<bool>,
    t: u64,
    window: VecDeque<(u64, u64)>,
    cumulative: u64,
    initial_counts: Vec<usize>,
    picked: Vec<i64>,
    delivered: Vec<i64>,
    pub metrics: Vec<MetricsRow>,
    pub timings: Vec<AllocTiming>,
    pub events: Vec<TaskEvent>,
    pub trajectories: Vec<TimedPath>,
    pub plan_stats: PlanStats,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let map = config.map.load();
        Self::with_map(config, map)
    }

    /// Runs on an arbitrary map instead of the configured asset.
    pub fn with_map(config: SimConfig, map: GridMap) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Config)?;
        let oracle = DistanceOracle::build(&map);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let inventory = Inventory::initialize(&map, config.density, config.num_skus, &mut rng);
        let parking_ok: Vec<bool> = (0..map.num_cells())
            .map(|c| {
                map.is_traversable(c) && !map.cell(c).is_endpoint() && map.neighbors(c).all(|n| !map.cell(n).is_endpoint())
            })
            .collect();
        let mut spots: Vec<CellId> = map.traversable_cells().filter(|&c| parking_ok[c]).collect();
        if spots.len() < config.agents {
            spots = map.traversable_cells().filter(|&c| !map.cell(c).is_endpoint()).collect();
        }
        if spots.len() < config.agents {
            return Err(SimError::Crowded(config.agents));
        }
        spots.shuffle(&mut rng);
        let agents: Vec<AgentState> = spots[..config.agents]
            .iter()
            .enumerate()
            .map(|(id, &c)| AgentState {
                id,
                position: c,
                carrying: None,
                sequence: Vec::new(),
                path: TimedPath::stationary(0, c),
                parking: None,
            })
            .collect();
        let trajectories = if config.record_trajectories {
            agents.iter().map(|a| TimedPath::stationary(0, a.position)).collect()
        } else {
            Vec::new()
        };
        let initial_counts = (0..config.num_skus).map(|s| inventory.count(SkuId(s as u32))).collect();
        Ok(Self {
            pool: TaskPool::new(config.release_policy()),
            picked: vec![0; config.num_skus],
            delivered: vec![0; config.num_skus],
            initial_counts,
            config,
            map,
            oracle,
            inventory,
            agents,
            rng,
            low: LowLevel::new(),
            parking_ok,
            t: 0,
            window: VecDeque::new(),
            cumulative: 0,
            metrics: Vec::new(),
            timings: Vec::new(),
            events: Vec::new(),
            trajectories,
            plan_stats: PlanStats::default(),
        })
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn oracle(&self) -> &DistanceOracle {
        &self.oracle
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn pool(&self) -> &TaskPool {
        &self.pool
    }

    pub fn pool_mut(&mut self) -> &mut TaskPool {
        &mut self.pool
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    /// Moves agent `id` before the first tick; used to stage scenarios.
    pub fn place_agent(&mut self, id: usize, cell: CellId) {
        assert_eq!(self.t, 0, "agents can only be placed before the first tick");
        let a = &mut self.agents[id];
        a.position = cell;
        a.path = TimedPath::stationary(0, cell);
        if let Some(tr) = self.trajectories.get_mut(id) {
            *tr = TimedPath::stationary(0, cell);
        }
    }

    pub fn inventory_mut(&mut self) -> &mut Inventory {
        assert_eq!(self.t, 0, "inventory can only be edited before the first tick");
        &mut self.inventory
    }

    pub fn cumulative_completions(&self) -> u64 {
        self.cumulative
    }

    /// Completed tasks per simulated minute over the whole run so far.
    pub fn mean_throughput(&self) -> f64 {
        if self.t == 0 {
            return 0.0;
        }
        self.cumulative as f64 / (self.t as f64 * self.config.seconds_per_step / 60.0)
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.t;
        self.pool.release_tasks(&self.inventory, t, &mut self.rng);
        if self.pool.has_free() {
            self.allocate(t)?;
        }
        self.plan(t);
        self.advance(t)?;
        self.fire_events(t + 1)?;
        self.check_conservation(t + 1)?;
        self.events.extend(self.pool.drain_events());
        self.t = t + 1;
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while self.t < self.config.horizon {
            self.step()?;
        }
        Ok(())
    }

    fn allocate(&mut self, t: u64) -> Result<(), SimError> {
        let started = Instant::now();
        let deadline = self.config.alloc_budget_ms.map(|ms| started + Duration::from_millis(ms));
        let views: Vec<AgentView> = self.agents.iter().map(AgentState::view).collect();
        let pending: FxHashSet<TaskId> = self
            .agents
            .iter()
            .flat_map(|a| a.sequence.iter().skip(1).map(|s| s.task))
            .collect();

        let candidates = match self.config.mode {
            AllocatorMode::OneToOneBaseline => self.fixed_candidates(&pending),
            _ => self.rebound_candidates(&pending),
        };
        let num_candidates = candidates.len();
        let cost = self.config.cost_params();
        let lns = self.config.lns_params();
        let mut mats = CostMatrices::build(&views, candidates, &self.oracle, self.map.num_cells());
        let mut alloc = Allocation::from_agents(&views, &self.oracle);
        greedy_allocate(&mut mats, &mut alloc, &self.inventory, &self.oracle, &cost);
        let ctx = LnsContext {
            map: &self.map,
            oracle: &self.oracle,
            inventory: &self.inventory,
            cost: &cost,
            lns: &lns,
        };
        let budget = Budget {
            deadline,
            max_iterations: self.config.lns_iterations,
        };
        let out = lns_improve(alloc, &mut mats, &ctx, budget, &mut self.rng, None);
        let alloc = out.best;

        let mut next: FxHashSet<TaskId> = FxHashSet::default();
        for (agent, seq) in self.agents.iter_mut().zip(alloc.sequences) {
            let keep = agent.sequence.first().map(|a| a.task);
            next.extend(seq.iter().map(|a| a.task).filter(|&id| Some(id) != keep));
            agent.sequence = seq;
            if !agent.sequence.is_empty() {
                agent.parking = None;
            }
        }
        let mut freed: Vec<TaskId> = pending.difference(&next).copied().collect();
        freed.sort_unstable();
        for id in freed {
            self.pool.mark_free(id, t)?;
        }
        let mut fresh: Vec<TaskId> = next.difference(&pending).copied().collect();
        fresh.sort_unstable();
        for id in fresh {
            self.pool.mark_allocated(id, t)?;
        }
        self.timings.push(AllocTiming {
            t,
            alloc_ms: started.elapsed().as_secs_f64() * 1e3,
            candidates: num_candidates,
            lns_iterations: out.iterations,
        });
        Ok(())
    }

    /// Free and queued tasks with candidate sets re-read from the inventory.
    fn rebound_candidates(&mut self, pending: &FxHashSet<TaskId>) -> Vec<TaskCandidates> {
        let (inv, map) = (&self.inventory, &self.map);
        let mut out = Vec::new();
        for task in self.pool.tasks_mut() {
            let open = task.state == TaskState::Free || pending.contains(&task.id);
            if open && task.bind_candidates(inv, map) {
                out.push(TaskCandidates {
                    id: task.id,
                    kind: task.kind,
                    sku: task.sku,
                    starts: task.starts.clone(),
                    dests: task.dests.clone(),
                });
            }
        }
        out
    }

    /// Baseline: tasks are bound and collapsed to one pair once, then kept.
    fn fixed_candidates(&mut self, pending: &FxHashSet<TaskId>) -> Vec<TaskCandidates> {
        let mut claimed = vec![false; self.map.num_cells()];
        for task in self.pool.tasks().filter(|t| t.fixed) {
            if task.state != TaskState::PickedUp {
                claimed[task.starts[0]] = true;
            }
            claimed[task.dests[0]] = true;
        }
        let (inv, map) = (&self.inventory, &self.map);
        for task in self.pool.tasks_mut() {
            if task.state == TaskState::Free && !task.fixed {
                task.bind_candidates(inv, map);
            }
        }
        convert_one_to_one(&mut self.pool, &self.oracle, &mut claimed);
        self.pool
            .tasks()
            .filter(|t| t.fixed && (t.state == TaskState::Free || pending.contains(&t.id)))
            .map(|t| TaskCandidates {
                id: t.id,
                kind: t.kind,
                sku: t.sku,
                starts: t.starts.clone(),
                dests: t.dests.clone(),
            })
            .collect()
    }

    /// Next segment goal per agent: the current triple's start until picked
    /// up, then its destination; free agents hold a parking cell off the
    /// endpoints.
    pub fn segment_goals(&mut self) -> Vec<CellId> {
        let mut goals = vec![0; self.agents.len()];
        let mut taken: FxHashSet<CellId> = FxHashSet::default();
        for a in &self.agents {
            if let Some(first) = a.sequence.first() {
                let g = if a.carrying.is_some() { first.dest } else { first.start };
                goals[a.id] = g;
                taken.insert(g);
            }
        }
        for i in 0..self.agents.len() {
            if !self.agents[i].sequence.is_empty() {
                continue;
            }
            let a = &self.agents[i];
            let keep = a.parking.filter(|c| !taken.contains(c));
            let spot = keep.unwrap_or_else(|| {
                if self.parking_ok[a.position] && !taken.contains(&a.position) {
                    a.position
                } else {
                    self.nearest_parking(a.position, &taken)
                }
            });
            taken.insert(spot);
            goals[i] = spot;
            self.agents[i].parking = Some(spot);
        }
        goals
    }

    fn nearest_parking(&self, from: CellId, taken: &FxHashSet<CellId>) -> CellId {
        let mut seen = vec![false; self.map.num_cells()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        let mut fallback = None;
        while let Some(c) = queue.pop_front() {
            if !taken.contains(&c) {
                if self.parking_ok[c] {
                    return c;
                }
                if fallback.is_none() && !self.map.cell(c).is_endpoint() {
                    fallback = Some(c);
                }
            }
            for n in self.map.neighbors(c) {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        fallback.unwrap_or(from)
    }

    fn plan(&mut self, t: u64) {
        let goals = self.segment_goals();
        if self.agents.iter().zip(&goals).all(|(a, &g)| a.path.goal() == g) {
            return;
        }
        let reqs: Vec<PlanRequest> = self
            .agents
            .iter()
            .zip(&goals)
            .map(|(a, &g)| PlanRequest {
                start: a.position,
                goal: g,
                committed: Some(a.path.clone()),
            })
            .collect();
        let mut pbs = Pbs::new(&self.map, &self.oracle, self.config.pbs_config(), &mut self.low);
        let result = pbs.solve(&reqs, t);
        self.plan_stats.rounds += 1;
        self.plan_stats.expanded += pbs.stats.expanded as u64;
        match result {
            Ok(paths) => {
                for (a, p) in self.agents.iter_mut().zip(paths) {
                    a.path = p;
                }
            }
            // Everyone keeps the last collision-free plan; retried next tick.
            Err(_) => self.plan_stats.failures += 1,
        }
    }

    fn advance(&mut self, t: u64) -> Result<(), SimError> {
        let before: Vec<CellId> = self.agents.iter().map(|a| a.position).collect();
        for a in &mut self.agents {
            a.position = a.path.at(t + 1);
            a.path.advance_to(t + 1);
        }
        let mut at = vec![usize::MAX; self.map.num_cells()];
        for a in &self.agents {
            let other = at[a.position];
            if other != usize::MAX {
                return Err(SimError::Collision { t: t + 1, a: other, b: a.id });
            }
            at[a.position] = a.id;
        }
        for a in &self.agents {
            let b = at[before[a.id]];
            if b != usize::MAX && b != a.id && before[b] == a.position {
                return Err(SimError::Collision { t, a: a.id, b });
            }
        }
        for (tr, a) in self.trajectories.iter_mut().zip(&self.agents) {
            tr.cells.push(a.position);
        }
        Ok(())
    }

    fn fire_events(&mut self, t: u64) -> Result<(), SimError> {
        let mut done = 0;
        for a in &mut self.agents {
            let Some(&first) = a.sequence.first() else { continue };
            if a.carrying.is_none() && a.position == first.start {
                let sku = self.pool.get(first.task).map(|task| task.sku).ok_or(TaskError::Unknown(first.task))?;
                let kind = self.pool.get(first.task).map(|task| task.kind);
                self.pool.pick_up(first.task, first.start, &mut self.inventory, t)?;
                if kind == Some(TaskKind::Outbound) {
                    self.picked[sku.0 as usize] += 1;
                }
                a.carrying = Some((sku, first.task));
            }
            if let Some((sku, id)) = a.carrying {
                if a.position == first.dest {
                    let inbound = self.pool.get(id).map(|task| task.kind) == Some(TaskKind::Inbound);
                    self.pool.complete_task(id, first.dest, &mut self.inventory, t)?;
                    if inbound {
                        self.delivered[sku.0 as usize] += 1;
                    }
                    a.carrying = None;
                    a.sequence.remove(0);
                    done += 1;
                }
            }
        }
        self.record(t, done);
        Ok(())
    }

    fn check_conservation(&self, t: u64) -> Result<(), SimError> {
        for s in 0..self.config.num_skus {
            let sku = SkuId(s as u32);
            let stored = self.inventory.count(sku);
            let expected = self.initial_counts[s] as i64 + self.delivered[s] - self.picked[s];
            if stored as i64 != expected {
                return Err(SimError::Conservation { t, sku, stored, expected });
            }
        }
        Ok(())
    }

    fn record(&mut self, t: u64, done: u64) {
        self.cumulative += done;
        if done > 0 {
            self.window.push_back((t, done));
        }
        let window_steps = (self.config.window_seconds / self.config.seconds_per_step).round().max(1.0) as u64;
        while self.window.front().is_some_and(|&(w, _)| w + window_steps <= t) {
            self.window.pop_front();
        }
        let in_window: u64 = self.window.iter().map(|&(_, c)| c).sum();
        let minutes = t.min(window_steps) as f64 * self.config.seconds_per_step / 60.0;
        self.metrics.push(MetricsRow {
            t,
            completions: done,
            window_completions: in_window,
            throughput: in_window as f64 / minutes,
            cumulative: self.cumulative,
            density: self.inventory.density(),
        });
    }

    /// Every executed conflict found by replaying the recorded trajectories.
    pub fn replay_collisions(&self) -> usize {
        validate_plan(&self.trajectories, &self.map).len()
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub timings: Vec<AllocTiming>,
    pub events: Vec<TaskEvent>,
    pub trajectories: Vec<TimedPath>,
    pub released: u64,
    pub completed: u64,
    pub mean_throughput: f64,
    pub plan_stats: PlanStats,
}

impl RunOutput {
    pub fn mean_alloc_ms(&self) -> f64 {
        if self.timings.is_empty() {
            return 0.0;
        }
        self.timings.iter().map(|t| t.alloc_ms).sum::<f64>() / self.timings.len() as f64
    }
}

pub fn run(config: SimConfig) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(config)?;
    sim.run_to_end()?;
    Ok(finish(sim))
}

pub fn finish(sim: Simulation) -> RunOutput {
    RunOutput {
        released: sim.pool.released(),
        completed: sim.pool.completed(),
        mean_throughput: sim.mean_throughput(),
        plan_stats: sim.plan_stats,
        metrics: sim.metrics,
        timings: sim.timings,
        events: sim.events,
        trajectories: sim.trajectories,
    }
}

pub fn write_metrics(rows: &[MetricsRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "t,completions,window_completions,throughput,cumulative,density")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{},{:.6}",
            r.t, r.completions, r.window_completions, r.throughput, r.cumulative, r.density
        )?;
    }
    Ok(())
}

pub fn write_timings(rows: &[AllocTiming], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "t,alloc_wall_ms,candidates,lns_iterations")?;
    for r in rows {
        writeln!(out, "{},{:.3},{},{}", r.t, r.alloc_ms, r.candidates, r.lns_iterations)?;
    }
    Ok(())
}

pub fn write_events(events: &[TaskEvent], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "t,task_id,kind,sku,event")?;
    for e in events {
        writeln!(out, "{},{},{},{},{}", e.t, e.task, e.kind.as_str(), e.sku.0, e.event.as_str())?;
    }
    Ok(())
}
