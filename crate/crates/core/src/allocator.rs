//! Many-to-many task allocation.
//!
//! The four-dimensional (agent, task, start, destination) cost tensor is never
//! materialised. It is factored into agent-to-start durations `C_AS`,
//! start-to-destination durations `C_SD`, and per-task validity rows over
//! starts and destinations. Greedy construction repeatedly commits the
//! cheapest feasible tuple, ties broken by the lowest `(m, n, p, q)`.

use std::io::{self, Write};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::inventory::{Inventory, SkuId};
use crate::tasks::{TaskId, TaskKind, TaskPool, TaskState};
use crate::worldmap::{CellId, DistanceOracle, GridMap};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostMode {
    /// Sum of estimated travel durations.
    Base,
    /// Travel durations plus a nearest-same-SKU term that spreads items out.
    WSku,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams<S> {
    pub mode: CostMode,
    pub base_weight: S,
    pub sku_weight: S,
    /// Maximum tasks in one agent's sequence.
    pub max_sequence: usize,
}

impl<S: Scalar> Default for CostParams<S> {
    fn default() -> Self {
        Self {
            mode: CostMode::Base,
            base_weight: S::one(),
            sku_weight: S::from_f64(0.25).unwrap(),
            max_sequence: 3,
        }
    }
}

impl<S: Scalar> CostParams<S> {
    pub fn with_mode(mode: CostMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// The task an agent is already executing; never reassigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InProgress {
    pub task: TaskId,
    pub start: CellId,
    pub dest: CellId,
    pub picked_up: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentView {
    pub position: CellId,
    pub in_progress: Option<InProgress>,
}

impl AgentView {
    pub fn idle(position: CellId) -> Self {
        Self {
            position,
            in_progress: None,
        }
    }
}

/// A bound task as seen by one allocation round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskCandidates {
    pub id: TaskId,
    pub kind: TaskKind,
    pub sku: SkuId,
    pub starts: Vec<CellId>,
    pub dests: Vec<CellId>,
}

impl TaskCandidates {
    /// Free, bound tasks of the pool in id order.
    pub fn from_pool(pool: &TaskPool) -> Vec<Self> {
        pool.tasks()
            .filter(|t| t.state == TaskState::Free && t.is_bound())
            .map(|t| Self {
                id: t.id,
                kind: t.kind,
                sku: t.sku,
                starts: t.starts.clone(),
                dests: t.dests.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment<S> {
    pub task: TaskId,
    pub start: CellId,
    pub dest: CellId,
    /// Tuple cost at the time of commitment.
    pub est_cost: S,
}

/// Per-agent ordered task sequences. The first entry of a `locked` agent is
/// the in-progress task.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<S> {
    pub sequences: Vec<Vec<Assignment<S>>>,
    pub locked: Vec<bool>,
}

impl<S: Scalar> Allocation<S> {
    /// Only the in-progress tasks; everything else returned to the free set.
    pub fn from_agents(agents: &[AgentView], oracle: &DistanceOracle) -> Self {
        let mut sequences = Vec::with_capacity(agents.len());
        let mut locked = Vec::with_capacity(agents.len());
        for a in agents {
            match a.in_progress {
                Some(ip) => {
                    let remaining = if ip.picked_up {
                        oracle.cost(a.position, ip.dest)
                    } else {
                        oracle.cost(a.position, ip.start) + oracle.cost(ip.start, ip.dest)
                    };
                    sequences.push(vec![Assignment {
                        task: ip.task,
                        start: ip.start,
                        dest: ip.dest,
                        est_cost: S::from_u32(remaining).unwrap(),
                    }]);
                    locked.push(true);
                }
                None => {
                    sequences.push(Vec::new());
                    locked.push(false);
                }
            }
        }
        Self { sequences, locked }
    }

    pub fn num_tasks(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Assignment<S>)> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(m, seq)| seq.iter().enumerate().map(move |(i, a)| (m, i, a)))
    }

    /// Checks task uniqueness, cell exclusivity and the sequence cap. The
    /// start of an in-progress task whose item is already lifted is free.
    pub fn check_invariants(&self, agents: &[AgentView], max_sequence: usize) -> Result<(), String> {
        let mut tasks = rustc_hash::FxHashSet::default();
        let mut cells = rustc_hash::FxHashSet::default();
        for (m, seq) in self.sequences.iter().enumerate() {
            if seq.len() > max_sequence.max(usize::from(self.locked[m])) {
                return Err(format!("agent {m} holds {} tasks", seq.len()));
            }
            for (i, a) in seq.iter().enumerate() {
                if !tasks.insert(a.task) {
                    return Err(format!("task {} allocated twice", a.task));
                }
                let lifted = i == 0 && self.locked[m] && agents[m].in_progress.is_some_and(|ip| ip.picked_up);
                let claims = if lifted { &[a.dest][..] } else { &[a.start, a.dest][..] };
                for &c in claims {
                    if !cells.insert(c) {
                        return Err(format!("cell {c} claimed twice"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `agent,seq_pos,task_id,start_x,start_y,dest_x,dest_y,est_cost`.
    pub fn write_csv(&self, map: &GridMap, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "agent,seq_pos,task_id,start_x,start_y,dest_x,dest_y,est_cost")?;
        for (m, i, a) in self.iter() {
            let (s, d) = (map.vertex(a.start), map.vertex(a.dest));
            writeln!(out, "{m},{i},{},{},{},{},{},{}", a.task, s.x, s.y, d.x, d.y, a.est_cost)?;
        }
        Ok(())
    }
}

/// One greedy commitment in matrix coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Commit<S> {
    pub agent: usize,
    pub task: usize,
    pub start: usize,
    pub dest: usize,
    pub cost: S,
}

/// Factored cost tensor for one allocation round.
#[derive(Debug, Clone)]
pub struct CostMatrices<S> {
    agents: Vec<AgentView>,
    tasks: Vec<TaskCandidates>,
    start_cells: Vec<CellId>,
    dest_cells: Vec<CellId>,
    c_as: Vec<S>,
    c_sd: Vec<S>,
    task_starts: Vec<Vec<u32>>,
    task_dests: Vec<Vec<u32>>,
    /// Tasks with identical destination rows share a group, so per-start
    /// best-destination lookups can be reused across them.
    task_dest_group: Vec<u32>,
    // Round state, refreshed from an allocation.
    origin: Vec<CellId>,
    seq_len: Vec<usize>,
    claimed: Vec<bool>,
    open: Vec<bool>,
    /// Nearest-neighbour SKU terms, kept across repair passes. Matrices
    /// belong to one round, so the inventory does not change under them.
    sku_terms: FxHashMap<(CellId, u32, bool), S>,
}

fn column_index(cells: &[CellId], c: CellId) -> u32 {
    cells.binary_search(&c).expect("candidate cell indexed") as u32
}

impl<S: Scalar> CostMatrices<S> {
    /// Indexes the deduplicated start and destination cells of `tasks` and
    /// fills `C_AS` and `C_SD` from the oracle. Validity reflects only the
    /// agents' in-progress tasks until [`CostMatrices::refresh`] is called.
    pub fn build(agents: &[AgentView], tasks: Vec<TaskCandidates>, oracle: &DistanceOracle, num_cells: usize) -> Self {
        let mut start_cells: Vec<CellId> = tasks.iter().flat_map(|t| t.starts.iter().copied()).collect();
        start_cells.sort_unstable();
        start_cells.dedup();
        let mut dest_cells: Vec<CellId> = tasks.iter().flat_map(|t| t.dests.iter().copied()).collect();
        dest_cells.sort_unstable();
        dest_cells.dedup();

        let task_starts: Vec<Vec<u32>> = tasks
            .iter()
            .map(|t| {
                let mut v: Vec<u32> = t.starts.iter().map(|&c| column_index(&start_cells, c)).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let mut groups: FxHashMap<Vec<u32>, u32> = FxHashMap::default();
        let mut task_dests = Vec::with_capacity(tasks.len());
        let mut task_dest_group = Vec::with_capacity(tasks.len());
        for t in &tasks {
            let mut v: Vec<u32> = t.dests.iter().map(|&c| column_index(&dest_cells, c)).collect();
            v.sort_unstable();
            v.dedup();
            let next = groups.len() as u32;
            task_dest_group.push(*groups.entry(v.clone()).or_insert(next));
            task_dests.push(v);
        }

        let to_s = |d: u32| S::from_u32(d).unwrap();
        let mut c_sd = Vec::with_capacity(start_cells.len() * dest_cells.len());
        for &s in &start_cells {
            c_sd.extend(dest_cells.iter().map(|&d| to_s(oracle.cost(s, d))));
        }

        let m = agents.len();
        let mut mats = Self {
            agents: agents.to_vec(),
            open: vec![true; tasks.len()],
            tasks,
            c_as: vec![S::zero(); m * start_cells.len()],
            start_cells,
            dest_cells,
            c_sd,
            task_starts,
            task_dests,
            task_dest_group,
            origin: vec![0; m],
            seq_len: vec![0; m],
            claimed: vec![false; num_cells],
            sku_terms: FxHashMap::default(),
        };
        let base = Allocation::from_agents(agents, oracle);
        mats.refresh(&base, oracle);
        mats
    }

    /// Re-derives agent origins, sequence lengths, `C_AS`, claimed cells and
    /// open tasks from `alloc`.
    pub fn refresh(&mut self, alloc: &Allocation<S>, oracle: &DistanceOracle) {
        self.claimed.iter_mut().for_each(|c| *c = false);
        self.open.iter_mut().for_each(|o| *o = true);
        let index: FxHashMap<TaskId, usize> = self.tasks.iter().enumerate().map(|(n, t)| (t.id, n)).collect();
        for (m, seq) in alloc.sequences.iter().enumerate() {
            for (i, a) in seq.iter().enumerate() {
                let lifted = i == 0
                    && alloc.locked[m]
                    && self.agents[m].in_progress.is_some_and(|ip| ip.picked_up);
                if !lifted {
                    self.claimed[a.start] = true;
                }
                self.claimed[a.dest] = true;
                if let Some(&n) = index.get(&a.task) {
                    self.open[n] = false;
                }
            }
            self.seq_len[m] = seq.len();
            self.origin[m] = seq.last().map_or(self.agents[m].position, |a| a.dest);
            self.fill_agent_row(m, oracle);
        }
    }

    fn fill_agent_row(&mut self, m: usize, oracle: &DistanceOracle) {
        let p_len = self.start_cells.len();
        let origin = self.origin[m];
        let row = &mut self.c_as[m * p_len..(m + 1) * p_len];
        for (slot, &s) in row.iter_mut().zip(&self.start_cells) {
            *slot = S::from_u32(oracle.cost(origin, s)).unwrap();
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_starts(&self) -> usize {
        self.start_cells.len()
    }

    pub fn num_dests(&self) -> usize {
        self.dest_cells.len()
    }

    pub fn agents(&self) -> &[AgentView] {
        &self.agents
    }

    pub fn task(&self, n: usize) -> &TaskCandidates {
        &self.tasks[n]
    }

    pub fn tasks(&self) -> &[TaskCandidates] {
        &self.tasks
    }

    pub fn start_cell(&self, p: usize) -> CellId {
        self.start_cells[p]
    }

    pub fn dest_cell(&self, q: usize) -> CellId {
        self.dest_cells[q]
    }

    pub fn start_cells(&self) -> &[CellId] {
        &self.start_cells
    }

    pub fn dest_cells(&self) -> &[CellId] {
        &self.dest_cells
    }

    pub fn sequence_len(&self, m: usize) -> usize {
        self.seq_len[m]
    }

    pub fn is_claimed(&self, cell: CellId) -> bool {
        self.claimed[cell]
    }

    pub fn is_open(&self, n: usize) -> bool {
        self.open[n]
    }

    #[inline]
    pub fn c_as(&self, m: usize, p: usize) -> S {
        self.c_as[m * self.start_cells.len() + p]
    }

    #[inline]
    pub fn c_sd(&self, p: usize, q: usize) -> S {
        self.c_sd[p * self.dest_cells.len() + q]
    }

    /// `C_TS[n, p]`: start `p` is a candidate of open task `n` and unclaimed.
    pub fn ts(&self, n: usize, p: usize) -> bool {
        self.open[n] && !self.claimed[self.start_cells[p]] && self.task_starts[n].binary_search(&(p as u32)).is_ok()
    }

    /// `C_TD[n, q]`: destination `q` is a candidate of open task `n` and unclaimed.
    pub fn td(&self, n: usize, q: usize) -> bool {
        self.open[n] && !self.claimed[self.dest_cells[q]] && self.task_dests[n].binary_search(&(q as u32)).is_ok()
    }

    /// Cost of tuple `(m, n, p, q)`, or `None` when any infeasibility case
    /// holds: start or destination not a candidate of the task, already
    /// claimed, or the agent's sequence already full.
    pub fn tuple_cost(&self, m: usize, n: usize, p: usize, q: usize, inv: &Inventory, params: &CostParams<S>) -> Option<S> {
        if !self.ts(n, p) || !self.td(n, q) || self.seq_len[m] >= params.max_sequence {
            return None;
        }
        let travel = self.c_as(m, p) + self.c_sd(p, q);
        Some(match params.mode {
            CostMode::Base => travel,
            CostMode::WSku => {
                let t = &self.tasks[n];
                params.base_weight * travel + params.sku_weight * sku_term(t.kind, t.sku, self.start_cells[p], self.dest_cells[q], inv)
            }
        })
    }
}

/// Signed nearest-neighbour term: `-NN(start)` for outbound (the lifted item
/// itself excluded), `+NN(dest)` for inbound. A missing neighbour counts 0.
fn sku_term<S: Scalar>(kind: TaskKind, sku: SkuId, start: CellId, dest: CellId, inv: &Inventory) -> S {
    let nn = |cell: CellId, exclude: bool| {
        let v = inv.vertex_of(cell);
        inv.nearest_neighbor(sku, v, exclude.then_some(v))
            .map_or(S::zero(), |d| S::from_u32(d).unwrap())
    };
    match kind {
        TaskKind::Outbound => -nn(start, true),
        TaskKind::Inbound => nn(dest, false),
    }
}

#[derive(Clone, Copy)]
struct Best<S> {
    cost: S,
    m: u32,
    n: u32,
    p: u32,
    q: u32,
}

impl<S: Scalar> Best<S> {
    fn beats(&self, other: &Option<Best<S>>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.cost < o.cost || (self.cost == o.cost && (self.m, self.n, self.p, self.q) < (o.m, o.n, o.p, o.q))
            }
        }
    }
}

/// Scratch state for one greedy run.
struct Greedy<S> {
    /// Cheapest eligible agent per start column, lowest index on ties.
    col_min: Vec<Option<(S, u32)>>,
    /// Best destination for (start, dest group, sku key) by the
    /// destination-dependent part of the cost.
    best_dest: FxHashMap<(u32, u32, u32), Option<(S, u32)>>,
    /// SKU term per (cell, sku, outbound); the inventory is fixed during a run.
    nn: FxHashMap<(CellId, u32, bool), S>,
}

impl<S: Scalar> Greedy<S> {
    fn new(mats: &CostMatrices<S>) -> Self {
        Self {
            col_min: vec![None; mats.num_starts()],
            best_dest: FxHashMap::default(),
            nn: FxHashMap::default(),
        }
    }

    fn recompute_col_min(&mut self, mats: &CostMatrices<S>, params: &CostParams<S>) {
        let p_len = mats.num_starts();
        self.col_min.iter_mut().for_each(|c| *c = None);
        for m in 0..mats.num_agents() {
            if mats.seq_len[m] >= params.max_sequence {
                continue;
            }
            let row = &mats.c_as[m * p_len..(m + 1) * p_len];
            for (slot, &v) in self.col_min.iter_mut().zip(row) {
                if slot.map_or(true, |(b, _)| v < b) {
                    *slot = Some((v, m as u32));
                }
            }
        }
    }

    /// Folds a change of agent `m`'s row into the column minima.
    fn update_col_min(&mut self, mats: &CostMatrices<S>, m: usize, params: &CostParams<S>) {
        let p_len = mats.num_starts();
        let eligible = mats.seq_len[m] < params.max_sequence;
        let row = &mats.c_as[m * p_len..(m + 1) * p_len];
        for p in 0..p_len {
            match self.col_min[p] {
                Some((_, owner)) if owner as usize == m => {
                    let mut best: Option<(S, u32)> = None;
                    for k in 0..mats.num_agents() {
                        if mats.seq_len[k] >= params.max_sequence {
                            continue;
                        }
                        let v = mats.c_as[k * p_len + p];
                        if best.map_or(true, |(b, _)| v < b) {
                            best = Some((v, k as u32));
                        }
                    }
                    self.col_min[p] = best;
                }
                slot if eligible => {
                    let v = row[p];
                    if slot.map_or(true, |(b, owner)| v < b || (v == b && (m as u32) < owner)) {
                        self.col_min[p] = Some((v, m as u32));
                    }
                }
                _ => {}
            }
        }
    }

    /// Memoised [`sku_term`] at the task's start (outbound) or destination
    /// (inbound) cell.
    fn sku_term(&mut self, kind: TaskKind, sku: SkuId, cell: CellId, inv: &Inventory) -> S {
        let out = kind == TaskKind::Outbound;
        *self
            .nn
            .entry((cell, sku.0, out))
            .or_insert_with(|| if out { sku_term(kind, sku, cell, 0, inv) } else { sku_term(kind, sku, 0, cell, inv) })
    }

    fn dest_for(&mut self, mats: &CostMatrices<S>, n: usize, p: u32, inv: &Inventory, params: &CostParams<S>) -> Option<(S, u32)> {
        let task = &mats.tasks[n];
        let weighted_in = params.mode == CostMode::WSku && task.kind == TaskKind::Inbound;
        let key = (p, mats.task_dest_group[n], if weighted_in { task.sku.0 } else { u32::MAX });
        if let Some(&hit) = self.best_dest.get(&key) {
            return hit;
        }
        let mut best: Option<(S, u32)> = None;
        for &q in &mats.task_dests[n] {
            let cell = mats.dest_cells[q as usize];
            if mats.claimed[cell] {
                continue;
            }
            let sd = mats.c_sd(p as usize, q as usize);
            let v = if weighted_in {
                let term = self.sku_term(TaskKind::Inbound, task.sku, cell, inv);
                params.base_weight * sd + params.sku_weight * term
            } else {
                sd
            };
            if best.map_or(true, |(b, _)| v < b) {
                best = Some((v, q));
            }
        }
        self.best_dest.insert(key, best);
        best
    }

    fn best_for_task(&mut self, mats: &CostMatrices<S>, n: usize, inv: &Inventory, params: &CostParams<S>) -> Option<Best<S>> {
        let task = &mats.tasks[n];
        let (kind, sku) = (task.kind, task.sku);
        let mut best: Option<Best<S>> = None;
        for i in 0..mats.task_starts[n].len() {
            let p = mats.task_starts[n][i];
            if mats.claimed[mats.start_cells[p as usize]] {
                continue;
            }
            let Some((a, m)) = self.col_min[p as usize] else { continue };
            let Some((_, q)) = self.dest_for(mats, n, p, inv, params) else { continue };
            let travel = a + mats.c_sd(p as usize, q as usize);
            let cost = match params.mode {
                CostMode::Base => travel,
                CostMode::WSku => {
                    let cell = match kind {
                        TaskKind::Outbound => mats.start_cells[p as usize],
                        TaskKind::Inbound => mats.dest_cells[q as usize],
                    };
                    let term = self.sku_term(kind, sku, cell, inv);
                    params.base_weight * travel + params.sku_weight * term
                }
            };
            let cand = Best {
                cost,
                m,
                n: n as u32,
                p,
                q,
            };
            if cand.beats(&best) {
                best = Some(cand);
            }
        }
        best
    }
}

/// Greedy construction: commit the globally cheapest feasible tuple until no
/// open task has one. Continues from whatever `alloc` already holds, so the
/// same routine serves as the LNS repair operator.
///
/// `mats` must have been refreshed from `alloc`. Returns the commitments in
/// order.
///
/// For weighted inbound costs the destination is chosen by the
/// destination-dependent part of the cost alone; this matches a full scan
/// exactly whenever the weights and durations are exactly representable.
pub fn greedy_allocate<S: Scalar>(
    mats: &mut CostMatrices<S>,
    alloc: &mut Allocation<S>,
    inv: &Inventory,
    oracle: &DistanceOracle,
    params: &CostParams<S>,
) -> Vec<Commit<S>> {
    let mut scratch = Greedy::new(mats);
    scratch.nn = std::mem::take(&mut mats.sku_terms);
    let mut commits = Vec::new();
    scratch.recompute_col_min(mats, params);
    loop {
        let mut best: Option<Best<S>> = None;
        for n in 0..mats.num_tasks() {
            if !mats.open[n] {
                continue;
            }
            if let Some(cand) = scratch.best_for_task(mats, n, inv, params) {
                if cand.beats(&best) {
                    best = Some(cand);
                }
            }
        }
        let Some(b) = best else { break };
        let (m, n, p, q) = (b.m as usize, b.n as usize, b.p as usize, b.q as usize);
        let (start, dest) = (mats.start_cells[p], mats.dest_cells[q]);
        alloc.sequences[m].push(Assignment {
            task: mats.tasks[n].id,
            start,
            dest,
            est_cost: b.cost,
        });
        mats.seq_len[m] += 1;
        mats.origin[m] = dest;
        mats.fill_agent_row(m, oracle);
        scratch.update_col_min(mats, m, params);
        mats.claimed[start] = true;
        mats.claimed[dest] = true;
        mats.open[n] = false;
        let claimed = &mats.claimed;
        let dest_cells = &mats.dest_cells;
        scratch
            .best_dest
            .retain(|_, v| v.map_or(true, |(_, q)| !claimed[dest_cells[q as usize]]));
        commits.push(Commit {
            agent: m,
            task: n,
            start: p,
            dest: q,
            cost: b.cost,
        });
    }
    mats.sku_terms = scratch.nn;
    commits
}

/// Baseline conversion: collapses each free, bound, not yet converted task to
/// the single (start, destination) pair of least travel cost among cells not
/// claimed by earlier conversions, in task-id order. Ties go to the lowest
/// (start, destination) cell pair. Tasks with no unclaimed pair stay
/// unconverted. Returns the number converted.
pub fn convert_one_to_one(pool: &mut TaskPool, oracle: &DistanceOracle, claimed: &mut [bool]) -> usize {
    let mut converted = 0;
    for task in pool.tasks_mut() {
        if task.state != TaskState::Free || task.fixed || !task.is_bound() {
            continue;
        }
        let mut best: Option<(u32, CellId, CellId)> = None;
        for &s in task.starts.iter().filter(|&&s| !claimed[s]) {
            for &d in task.dests.iter().filter(|&&d| !claimed[d]) {
                let cand = (oracle.cost(s, d), s, d);
                if best.map_or(true, |b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        if let Some((_, s, d)) = best {
            task.starts = vec![s];
            task.dests = vec![d];
            task.fixed = true;
            claimed[s] = true;
            claimed[d] = true;
            converted += 1;
        }
    }
    converted
}
