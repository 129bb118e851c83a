//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use m2m_core::allocator::{AgentView, CostMode, CostParams, InProgress, TaskCandidates};
use m2m_core::tasks::{TaskId, TaskKind};
use m2m_core::{CellId, DistanceOracle, GridMap, Inventory, SkuId, Vertex};
use rand::seq::SliceRandom;
use rand::Rng;

pub const SMALL_MAP: &str = "height 5\nwidth 7\nmap\nLE.E.EL\n.......\nE.E@E.E\n.......\nLE.E.EL\n";

pub struct Small {
    pub map: GridMap,
    pub oracle: DistanceOracle,
    pub inventory: Inventory,
    pub agents: Vec<AgentView>,
    pub tasks: Vec<TaskCandidates>,
}

fn subset(rng: &mut impl Rng, pool: &[CellId]) -> Vec<CellId> {
    let k = rng.gen_range(1..=pool.len());
    let mut v: Vec<CellId> = pool.choose_multiple(rng, k).copied().collect();
    v.sort_unstable();
    v
}

/// Up to `max_m` agents and `max_n` tasks whose candidate cells are drawn
/// from at most `max_pq` starts and `max_pq` destinations.
pub fn random_instance(rng: &mut impl Rng, max_m: usize, max_n: usize, max_pq: usize) -> Small {
    let map = GridMap::parse(SMALL_MAP).unwrap();
    let oracle = DistanceOracle::build(&map);
    let mut inventory = Inventory::empty(&map, 3);
    for &c in map.storage_endpoints() {
        if rng.gen_bool(0.4) {
            inventory.place_item(c, SkuId(rng.gen_range(0..3))).unwrap();
        }
    }
    let mut endpoints = map.endpoints().to_vec();
    endpoints.shuffle(rng);
    // Starts and destinations never share a cell within one task, as with
    // storage and loading endpoints; across tasks they may.
    let half = endpoints.len() / 2;
    let p = rng.gen_range(1..=max_pq.min(half));
    let q = rng.gen_range(1..=max_pq.min(half));
    let start_pool: Vec<CellId> = endpoints[..p].to_vec();
    let mut dest_pool: Vec<CellId> = endpoints[half..half + q].to_vec();
    if q > 1 && rng.gen_bool(0.3) {
        // Let one destination double as another task's start.
        dest_pool[0] = start_pool[rng.gen_range(0..p)];
    }
    let n = rng.gen_range(1..=max_n);
    let tasks = (0..n)
        .map(|i| TaskCandidates {
            id: TaskId(10 + i as u64),
            kind: if rng.gen_bool(0.5) { TaskKind::Inbound } else { TaskKind::Outbound },
            sku: SkuId(rng.gen_range(0..3)),
            starts: subset(rng, &start_pool),
            dests: subset(rng, &dest_pool),
        })
        .map(|mut t| {
            t.dests.retain(|d| !t.starts.contains(d));
            if t.dests.is_empty() {
                t.dests.push(*dest_pool.last().unwrap());
            }
            t
        })
        .collect();
    let m = rng.gen_range(1..=max_m);
    let mut cells: Vec<CellId> = map.traversable_cells().collect();
    cells.shuffle(rng);
    // In-progress tasks hold disjoint cells, as any real allocation does.
    let mut spare = endpoints.clone();
    spare.shuffle(rng);
    let agents = cells[..m]
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let in_progress = rng.gen_bool(0.3).then(|| InProgress {
                task: TaskId(i as u64),
                start: spare.pop().unwrap(),
                dest: spare.pop().unwrap(),
                picked_up: rng.gen_bool(0.5),
            });
            AgentView { position: c, in_progress }
        })
        .collect();
    Small {
        map,
        oracle,
        inventory,
        agents,
        tasks,
    }
}

/// Linear-scan L1 distance to the nearest item of `sku`, skipping `exclude`.
pub fn nn_scan(inv: &Inventory, sku: SkuId, q: Vertex, exclude: Option<Vertex>) -> Option<u32> {
    inv.items()
        .filter(|&(_, s)| s == sku)
        .map(|(c, _)| inv.vertex_of(c))
        .filter(|&v| Some(v) != exclude)
        .map(|v| q.l1(v))
        .min()
}

/// Greedy by exhaustive enumeration of every feasible tuple each round.
/// Returns `(agent, task id, start cell, dest cell, cost)` per commitment.
pub fn tensor_greedy(inst: &Small, params: &CostParams<f64>) -> Vec<(usize, u64, usize, usize, f64)> {
    let d = |a: CellId, b: CellId| f64::from(inst.oracle.cost(a, b));
    let m_len = inst.agents.len();
    let mut origin: Vec<CellId> = inst.agents.iter().map(|a| a.position).collect();
    let mut len = vec![0usize; m_len];
    let mut claimed = vec![false; inst.map.num_cells()];
    for (m, a) in inst.agents.iter().enumerate() {
        if let Some(ip) = a.in_progress {
            len[m] = 1;
            origin[m] = ip.dest;
            claimed[ip.dest] = true;
            if !ip.picked_up {
                claimed[ip.start] = true;
            }
        }
    }
    let mut open = vec![true; inst.tasks.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize, CellId, CellId)> = None;
        for m in 0..m_len {
            if len[m] >= params.max_sequence {
                continue;
            }
            for (n, t) in inst.tasks.iter().enumerate() {
                if !open[n] {
                    continue;
                }
                for &s in t.starts.iter().filter(|&&s| !claimed[s]) {
                    for &g in t.dests.iter().filter(|&&g| !claimed[g]) {
                        let travel = d(origin[m], s) + d(s, g);
                        let cost = match params.mode {
                            CostMode::Base => travel,
                            CostMode::WSku => {
                                let term = match t.kind {
                                    TaskKind::Outbound => {
                                        let v = inst.map.vertex(s);
                                        -f64::from(nn_scan(&inst.inventory, t.sku, v, Some(v)).unwrap_or(0))
                                    }
                                    TaskKind::Inbound => {
                                        f64::from(nn_scan(&inst.inventory, t.sku, inst.map.vertex(g), None).unwrap_or(0))
                                    }
                                };
                                params.base_weight * travel + params.sku_weight * term
                            }
                        };
                        let cand = (cost, m, n, s, g);
                        let better = match best {
                            None => true,
                            Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2, cand.3, cand.4) < (b.1, b.2, b.3, b.4)),
                        };
                        if better {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
        let Some((cost, m, n, s, g)) = best else { break };
        len[m] += 1;
        origin[m] = g;
        claimed[s] = true;
        claimed[g] = true;
        open[n] = false;
        out.push((m, inst.tasks[n].id.0, s, g, cost));
    }
    out
}
