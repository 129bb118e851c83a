//! Collision-free timed paths: space-time A* against reservation tables and
//! priority-based search over agent orderings.
//!
//! A path that ends leaves its agent parked on the last cell for good, so
//! every check pads the shorter path with waits.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{self, BufRead, Write};

use rustc_hash::{FxHashMap, FxHashSet};

use crate::worldmap::{CellId, DistanceOracle, GridMap, Vertex};

/// Cells visited at consecutive timesteps from `start_time`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedPath {
    pub start_time: u64,
    pub cells: Vec<CellId>,
}

impl TimedPath {
    pub fn stationary(start_time: u64, cell: CellId) -> Self {
        Self {
            start_time,
            cells: vec![cell],
        }
    }

    /// Location at `t`, clamped to the first and last cell.
    pub fn at(&self, t: u64) -> CellId {
        let i = t.saturating_sub(self.start_time) as usize;
        self.cells[i.min(self.cells.len() - 1)]
    }

    pub fn end_time(&self) -> u64 {
        self.start_time + self.cells.len() as u64 - 1
    }

    pub fn goal(&self) -> CellId {
        *self.cells.last().expect("non-empty path")
    }

    /// Number of moves, waits included.
    pub fn cost(&self) -> u64 {
        self.cells.len() as u64 - 1
    }

    /// Drops everything before `t`.
    pub fn advance_to(&mut self, t: u64) {
        if t <= self.start_time {
            return;
        }
        let k = ((t - self.start_time) as usize).min(self.cells.len() - 1);
        self.cells.drain(..k);
        self.start_time = t;
    }

    /// Every step is a wait or a move to a grid neighbour over traversable cells.
    pub fn is_valid(&self, map: &GridMap) -> bool {
        !self.cells.is_empty()
            && self.cells.iter().all(|&c| c < map.num_cells() && map.is_traversable(c))
            && self.cells.windows(2).all(|w| w[0] == w[1] || map.are_adjacent(w[0], w[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictKind {
    Vertex,
    Edge,
}

/// A vertex conflict at `t` shares `cell`; an edge conflict swaps `cell`
/// and `other` between `t` and `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conflict {
    pub t: u64,
    pub kind: ConflictKind,
    pub cell: CellId,
    pub other: CellId,
}

/// Earliest conflict between two paths, vertex before edge at equal `t`.
pub fn detect_collision(a: &TimedPath, b: &TimedPath) -> Option<Conflict> {
    let t0 = a.start_time.min(b.start_time);
    let t1 = a.end_time().max(b.end_time());
    for t in t0..=t1 {
        let (ua, ub) = (a.at(t), b.at(t));
        if ua == ub {
            return Some(Conflict {
                t,
                kind: ConflictKind::Vertex,
                cell: ua,
                other: ua,
            });
        }
        if t < t1 {
            let (va, vb) = (a.at(t + 1), b.at(t + 1));
            if ua == vb && va == ub {
                return Some(Conflict {
                    t,
                    kind: ConflictKind::Edge,
                    cell: ua,
                    other: va,
                });
            }
        }
    }
    None
}

/// Space-time occupancy of higher-priority paths.
#[derive(Debug, Default)]
struct Reservations {
    vertex: FxHashSet<(CellId, u64)>,
    /// `(from, to, t)` for a move between `t` and `t + 1`.
    edge: FxHashSet<(CellId, CellId, u64)>,
    /// Earliest time from which a cell stays occupied forever.
    parked_from: FxHashMap<CellId, u64>,
    /// Latest transient occupancy per cell.
    last_at: FxHashMap<CellId, u64>,
    /// After this time nothing but parked cells changes.
    settled: u64,
}

impl Reservations {
    fn add(&mut self, path: &TimedPath) {
        let end = path.end_time();
        for (i, &c) in path.cells.iter().enumerate() {
            let t = path.start_time + i as u64;
            self.vertex.insert((c, t));
            let last = self.last_at.entry(c).or_insert(t);
            *last = (*last).max(t);
            if let Some(&next) = path.cells.get(i + 1) {
                if next != c {
                    self.edge.insert((c, next, t));
                }
            }
        }
        let parked = self.parked_from.entry(path.goal()).or_insert(end);
        *parked = (*parked).min(end);
        self.settled = self.settled.max(end + 1);
    }

    fn vertex_free(&self, c: CellId, t: u64) -> bool {
        !self.vertex.contains(&(c, t)) && self.parked_from.get(&c).map_or(true, |&p| t < p)
    }

    fn move_free(&self, from: CellId, to: CellId, t: u64) -> bool {
        from == to || !self.edge.contains(&(to, from, t))
    }

    /// Whether an agent arriving at `goal` at `t` may stay there forever.
    fn can_park(&self, goal: CellId, t: u64) -> bool {
        !self.parked_from.contains_key(&goal) && self.last_at.get(&goal).map_or(true, |&l| t > l)
    }
}

/// Single-agent planner with a cache of goal distance fields for goals that
/// are not oracle endpoints.
#[derive(Debug, Default)]
pub struct LowLevel {
    fields: FxHashMap<CellId, Vec<u32>>,
}

impl LowLevel {
    pub fn new() -> Self {
        Self::default()
    }

    fn field<'a>(&'a mut self, goal: CellId, map: &GridMap, oracle: &'a DistanceOracle) -> &'a [u32] {
        if let Some(row) = oracle.row(goal) {
            return row;
        }
        self.fields.entry(goal).or_insert_with(|| map.bfs(goal))
    }

    /// Shortest path from `start` at `start_time` to `goal` avoiding
    /// `constraints`, reaching the goal at a time from which it may stay.
    /// `None` when no such path ends within `horizon` steps.
    pub fn plan(
        &mut self,
        start: CellId,
        goal: CellId,
        start_time: u64,
        constraints: &[&TimedPath],
        map: &GridMap,
        oracle: &DistanceOracle,
        horizon: u64,
    ) -> Option<TimedPath> {
        let mut res = Reservations::default();
        for p in constraints {
            res.add(p);
        }
        self.plan_reserved(start, goal, start_time, &res, map, oracle, horizon)
    }

    #[allow(clippy::too_many_arguments)]
    fn plan_reserved(
        &mut self,
        start: CellId,
        goal: CellId,
        start_time: u64,
        res: &Reservations,
        map: &GridMap,
        oracle: &DistanceOracle,
        horizon: u64,
    ) -> Option<TimedPath> {
        if res.parked_from.contains_key(&goal) {
            return None;
        }
        let h = self.field(goal, map, oracle);
        if h[start] == u32::MAX {
            return None;
        }
        // States past `settled` differ only by time, so they share a key.
        let settled = res.settled.max(start_time);
        let key = |c: CellId, t: u64| (c, t.min(settled));
        let mut parent: FxHashMap<(CellId, u64), (CellId, u64)> = FxHashMap::default();
        let mut seen: FxHashSet<(CellId, u64)> = FxHashSet::default();
        let mut open = BinaryHeap::new();
        // Ordered by f, then deeper g first, then cell for determinism.
        open.push(Reverse((h[start] as u64, Reverse(0u64), start)));
        seen.insert(key(start, start_time));
        while let Some(Reverse((_, Reverse(g), c))) = open.pop() {
            let t = start_time + g;
            if c == goal && res.can_park(goal, t) {
                let mut cells = vec![c];
                let mut cur = (c, t);
                while let Some(&prev) = parent.get(&cur) {
                    cells.push(prev.0);
                    cur = prev;
                }
                cells.reverse();
                return Some(TimedPath { start_time, cells });
            }
            if g >= horizon {
                continue;
            }
            for next in std::iter::once(c).chain(map.neighbors(c)) {
                let nt = t + 1;
                if !res.vertex_free(next, nt) || !res.move_free(c, next, t) {
                    continue;
                }
                if !seen.insert(key(next, nt)) {
                    continue;
                }
                parent.insert((next, nt), (c, t));
                open.push(Reverse((g + 1 + h[next] as u64, Reverse(g + 1), next)));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbsConfig {
    /// Maximum expanded search nodes before giving up.
    pub node_cap: usize,
    /// Low-level step limit; `None` uses four times width plus height.
    pub horizon: Option<u64>,
}

impl Default for PbsConfig {
    fn default() -> Self {
        Self {
            node_cap: 5000,
            horizon: None,
        }
    }
}

impl PbsConfig {
    pub fn horizon_for(&self, map: &GridMap) -> u64 {
        self.horizon.unwrap_or(4 * (map.width() + map.height()) as u64)
    }
}

/// One agent's planning input. A `committed` path that starts at `start`
/// and ends at `goal` is reused at the root instead of replanning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRequest {
    pub start: CellId,
    pub goal: CellId,
    pub committed: Option<TimedPath>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PbsFailure {
    /// Some agent has no path even without other agents.
    Unreachable(usize),
    NodeCap,
    Exhausted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PbsStats {
    pub expanded: usize,
    pub low_level_calls: usize,
}

/// Strict priority relation kept transitively closed: `higher[i]` holds the
/// agents that outrank `i`.
#[derive(Debug, Clone)]
struct Priorities {
    words: usize,
    higher: Vec<Vec<u64>>,
}

impl Priorities {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self {
            words,
            higher: vec![vec![0; words]; n],
        }
    }

    fn outranks(&self, a: usize, b: usize) -> bool {
        self.higher[b][a / 64] >> (a % 64) & 1 == 1
    }

    fn count(&self, i: usize) -> u32 {
        self.higher[i].iter().map(|w| w.count_ones()).sum()
    }

    fn above(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.higher.len()).filter(move |&a| self.outranks(a, i))
    }

    /// Adds `hi` above `lo` and closes the relation. Fails on a cycle.
    fn add(&mut self, hi: usize, lo: usize) -> bool {
        if hi == lo || self.outranks(lo, hi) {
            return false;
        }
        let mut add = self.higher[hi].clone();
        add[hi / 64] |= 1 << (hi % 64);
        let below: Vec<usize> = (0..self.higher.len()).filter(|&x| x == lo || self.outranks(lo, x)).collect();
        for x in below {
            for w in 0..self.words {
                self.higher[x][w] |= add[w];
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Node {
    paths: Vec<TimedPath>,
    prio: Priorities,
}

impl Node {
    fn cost(&self) -> u64 {
        self.paths.iter().map(TimedPath::cost).sum()
    }

    fn first_conflict(&self) -> Option<(Conflict, usize, usize)> {
        let mut best: Option<(Conflict, usize, usize)> = None;
        for i in 0..self.paths.len() {
            for j in i + 1..self.paths.len() {
                if let Some(c) = detect_collision(&self.paths[i], &self.paths[j]) {
                    if best.map_or(true, |(b, _, _)| c.t < b.t) {
                        best = Some((c, i, j));
                    }
                }
            }
        }
        best
    }
}

/// Priority-based search.
pub struct Pbs<'a> {
    map: &'a GridMap,
    oracle: &'a DistanceOracle,
    config: PbsConfig,
    low: &'a mut LowLevel,
    pub stats: PbsStats,
}

impl<'a> Pbs<'a> {
    pub fn new(map: &'a GridMap, oracle: &'a DistanceOracle, config: PbsConfig, low: &'a mut LowLevel) -> Self {
        Self {
            map,
            oracle,
            config,
            low,
            stats: PbsStats::default(),
        }
    }

    fn replan(&mut self, node: &Node, i: usize, goal: CellId, now: u64) -> Option<TimedPath> {
        let mut res = Reservations::default();
        for a in node.prio.above(i) {
            res.add(&node.paths[a]);
        }
        self.stats.low_level_calls += 1;
        let start = node.paths[i].at(now);
        let horizon = self.config.horizon_for(self.map);
        self.low.plan_reserved(start, goal, now, &res, self.map, self.oracle, horizon)
    }

    /// Imposes `hi` above `lo` and replans `lo` and every agent below it
    /// whose path now collides with something that outranks it.
    fn child(&mut self, parent: &Node, hi: usize, lo: usize, reqs: &[PlanRequest], now: u64) -> Option<Node> {
        let mut node = parent.clone();
        if !node.prio.add(hi, lo) {
            return None;
        }
        let mut order: Vec<usize> = (0..reqs.len()).filter(|&x| x == lo || node.prio.outranks(lo, x)).collect();
        order.sort_by_key(|&x| (node.prio.count(x), x));
        for x in order {
            let needs = x == lo
                || node
                    .prio
                    .above(x)
                    .any(|a| detect_collision(&node.paths[a], &node.paths[x]).is_some());
            if needs {
                node.paths[x] = self.replan(&node, x, reqs[x].goal, now)?;
            }
        }
        Some(node)
    }

    /// Plans every request from time `now`; paths start at each agent's
    /// current cell and end at its goal.
    pub fn solve(&mut self, reqs: &[PlanRequest], now: u64) -> Result<Vec<TimedPath>, PbsFailure> {
        let horizon = self.config.horizon_for(self.map);
        let mut paths = Vec::with_capacity(reqs.len());
        for (i, r) in reqs.iter().enumerate() {
            let reuse = r
                .committed
                .as_ref()
                .filter(|p| p.start_time == now && p.cells[0] == r.start && p.goal() == r.goal);
            let path = match reuse {
                Some(p) => p.clone(),
                None => {
                    self.stats.low_level_calls += 1;
                    self.low
                        .plan(r.start, r.goal, now, &[], self.map, self.oracle, horizon)
                        .ok_or(PbsFailure::Unreachable(i))?
                }
            };
            paths.push(path);
        }
        let mut stack = vec![Node {
            paths,
            prio: Priorities::new(reqs.len()),
        }];
        while let Some(node) = stack.pop() {
            if self.stats.expanded >= self.config.node_cap {
                return Err(PbsFailure::NodeCap);
            }
            self.stats.expanded += 1;
            let Some((_, i, j)) = node.first_conflict() else {
                return Ok(node.paths);
            };
            let mut kids: Vec<Node> = [(i, j), (j, i)]
                .into_iter()
                .filter_map(|(hi, lo)| self.child(&node, hi, lo, reqs, now))
                .collect();
            // Cheaper child on top of the stack.
            kids.sort_by_key(|k| Reverse(k.cost()));
            stack.extend(kids);
        }
        Err(PbsFailure::Exhausted)
    }
}

/// Convenience wrapper around [`Pbs::solve`] with a fresh planner cache.
pub fn pbs_solve(
    reqs: &[PlanRequest],
    now: u64,
    map: &GridMap,
    oracle: &DistanceOracle,
    config: PbsConfig,
) -> Result<Vec<TimedPath>, PbsFailure> {
    let mut low = LowLevel::new();
    Pbs::new(map, oracle, config, &mut low).solve(reqs, now)
}

/// Writes `agent,t,x,y` rows for every timestep of every path.
pub fn write_plan(paths: &[TimedPath], map: &GridMap, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "agent,t,x,y")?;
    for (a, p) in paths.iter().enumerate() {
        for (i, &c) in p.cells.iter().enumerate() {
            let v = map.vertex(c);
            writeln!(out, "{a},{},{},{}", p.start_time + i as u64, v.x, v.y)?;
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum PlanDumpError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("agent {agent}: cell ({x},{y}) is not traversable")]
    OffMap { agent: usize, x: i32, y: i32 },
    #[error("agent {agent}: timesteps not consecutive at t={t}")]
    Gap { agent: usize, t: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads an `agent,t,x,y` dump back into one path per agent id.
pub fn read_plan(map: &GridMap, input: impl BufRead) -> Result<Vec<TimedPath>, PlanDumpError> {
    let mut paths: Vec<Option<TimedPath>> = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| PlanDumpError::Malformed {
            line: k + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let agent: usize = f[0].parse().map_err(|_| bad("agent"))?;
        let t: u64 = f[1].parse().map_err(|_| bad("t"))?;
        let x: i32 = f[2].parse().map_err(|_| bad("x"))?;
        let y: i32 = f[3].parse().map_err(|_| bad("y"))?;
        let cell = map
            .index(Vertex::new(x, y))
            .filter(|&c| map.is_traversable(c))
            .ok_or(PlanDumpError::OffMap { agent, x, y })?;
        if paths.len() <= agent {
            paths.resize(agent + 1, None);
        }
        match &mut paths[agent] {
            Some(p) => {
                if t != p.end_time() + 1 {
                    return Err(PlanDumpError::Gap { agent, t });
                }
                p.cells.push(cell);
            }
            slot => *slot = Some(TimedPath::stationary(t, cell)),
        }
    }
    Ok(paths.into_iter().flatten().collect())
}

/// Every adjacency violation and pairwise conflict in a plan, as
/// `(agent, agent, conflict)`; adjacency violations repeat the agent.
pub fn validate_plan(paths: &[TimedPath], map: &GridMap) -> Vec<(usize, usize, Option<Conflict>)> {
    let mut found = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        if !p.is_valid(map) {
            found.push((i, i, None));
        }
    }
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            if let Some(c) = detect_collision(&paths[i], &paths[j]) {
                found.push((i, j, Some(c)));
            }
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: usize, h: usize) -> GridMap {
        let row = ".".repeat(w - 1) + "E";
        let body: Vec<String> = (0..h).map(|_| row.clone()).collect();
        GridMap::parse(&format!("height {h}\nwidth {w}\nmap\n{}\n", body.join("\n"))).unwrap()
    }

    fn path(start_time: u64, cells: &[CellId]) -> TimedPath {
        TimedPath {
            start_time,
            cells: cells.to_vec(),
        }
    }

    #[test]
    fn padding_and_advance() {
        let mut p = path(3, &[1, 2, 3]);
        assert_eq!((p.at(0), p.at(4), p.at(99)), (1, 2, 3));
        p.advance_to(4);
        assert_eq!(p, path(4, &[2, 3]));
        p.advance_to(10);
        assert_eq!(p, path(10, &[3]));
    }

    #[test]
    fn swap_is_edge_conflict() {
        let a = path(0, &[0, 1]);
        let b = path(0, &[1, 0]);
        let c = detect_collision(&a, &b).unwrap();
        assert_eq!((c.t, c.kind), (0, ConflictKind::Edge));
    }

    #[test]
    fn parked_agent_is_hit() {
        let a = path(0, &[5]);
        let b = path(0, &[3, 4, 5]);
        let c = detect_collision(&a, &b).unwrap();
        assert_eq!((c.t, c.kind, c.cell), (2, ConflictKind::Vertex, 5));
        assert_eq!(detect_collision(&path(0, &[0, 1, 2]), &path(0, &[10, 11, 12])), None);
    }

    #[test]
    fn unconstrained_matches_oracle() {
        let map = open(6, 4);
        let oracle = DistanceOracle::build(&map);
        let goal = map.storage_endpoints()[2];
        let mut low = LowLevel::new();
        for s in map.traversable_cells() {
            let p = low.plan(s, goal, 0, &[], &map, &oracle, 100).unwrap();
            assert_eq!(p.cost(), oracle.cost(s, goal) as u64);
            assert!(p.is_valid(&map));
        }
    }

    #[test]
    fn parked_blocker_in_corridor() {
        let map = GridMap::parse("height 1\nwidth 5\nmap\nE...E\n").unwrap();
        let oracle = DistanceOracle::build(&map);
        let blocker = TimedPath::stationary(0, 2);
        let mut low = LowLevel::new();
        assert_eq!(low.plan(0, 4, 0, &[&blocker], &map, &oracle, 40), None);
    }

    #[test]
    fn priorities_close_transitively() {
        let mut p = Priorities::new(4);
        assert!(p.add(0, 1));
        assert!(p.add(1, 2));
        assert!(p.outranks(0, 2));
        assert!(!p.add(2, 0));
        assert_eq!(p.count(2), 2);
    }

    #[test]
    fn head_on_with_passing_bay() {
        // A single corridor with one side pocket next to the right end.
        let map = GridMap::parse("height 3\nwidth 5\nmap\n@@@@@\nE...E\n@@@.@\n").unwrap();
        let oracle = DistanceOracle::build(&map);
        let (l, r) = (map.index(Vertex::new(0, 1)).unwrap(), map.index(Vertex::new(4, 1)).unwrap());
        let reqs = [
            PlanRequest {
                start: l,
                goal: r,
                committed: None,
            },
            PlanRequest {
                start: r,
                goal: l,
                committed: None,
            },
        ];
        let paths = pbs_solve(&reqs, 0, &map, &oracle, PbsConfig::default()).unwrap();
        assert!(validate_plan(&paths, &map).is_empty());
        assert_eq!((paths[0].goal(), paths[1].goal()), (r, l));
    }

    #[test]
    fn plan_dump_round_trip() {
        let map = open(4, 2);
        let paths = vec![path(2, &[0, 1, 2]), path(2, &[4, 4, 5])];
        let mut buf = Vec::new();
        write_plan(&paths, &map, &mut buf).unwrap();
        let back = read_plan(&map, buf.as_slice()).unwrap();
        assert_eq!(back, paths);
    }
}
