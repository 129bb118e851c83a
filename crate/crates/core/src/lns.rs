//! Large neighbourhood search over allocations: Shaw removal, greedy repair
//! and Metropolis acceptance with geometric cooling.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use rand::Rng;

use crate::allocator::{greedy_allocate, AgentView, Allocation, CostMatrices, CostParams};
use crate::inventory::Inventory;
use crate::tasks::TaskId;
use crate::worldmap::{DistanceOracle, GridMap, Vertex};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LnsParams<S> {
    /// Weight of the start and destination L1 distances in relatedness.
    pub spatial_weight: S,
    /// Weight of the arrival-time differences in relatedness.
    pub temporal_weight: S,
    /// Tasks removed per iteration, seed included.
    pub remove_count: usize,
    pub initial_temperature: S,
    pub decay: S,
}

impl<S: Scalar> Default for LnsParams<S> {
    fn default() -> Self {
        Self {
            spatial_weight: S::from_f64(9.0).unwrap(),
            temporal_weight: S::from_f64(3.0).unwrap(),
            remove_count: 3,
            initial_temperature: S::one(),
            decay: S::from_f64(0.99).unwrap(),
        }
    }
}

impl<S: Scalar> LnsParams<S> {
    pub fn validate(&self) -> Result<(), String> {
        if self.spatial_weight < S::zero() || self.temporal_weight < S::zero() {
            return Err("relatedness weights must be non-negative".into());
        }
        if self.remove_count == 0 {
            return Err("remove count must be at least 1".into());
        }
        if !(self.decay > S::zero() && self.decay < S::one()) {
            return Err("decay must lie in (0, 1)".into());
        }
        if self.initial_temperature <= S::zero() {
            return Err("initial temperature must be positive".into());
        }
        Ok(())
    }

    /// Temperature at iteration `k`: `T0 * decay^k`.
    pub fn temperature(&self, k: u64) -> S {
        self.initial_temperature * self.decay.powi(k.min(i32::MAX as u64) as i32)
    }
}

/// Stop condition for one allocation round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Budget {
    pub deadline: Option<Instant>,
    pub max_iterations: Option<u64>,
}

impl Budget {
    pub fn wall_clock(limit: Duration) -> Self {
        Self {
            deadline: Some(Instant::now() + limit),
            max_iterations: None,
        }
    }

    pub fn iterations(n: u64) -> Self {
        Self {
            deadline: None,
            max_iterations: Some(n),
        }
    }

    pub fn exhausted(&self, iterations: u64) -> bool {
        self.max_iterations.is_some_and(|n| iterations >= n) || self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// Estimated arrival times at a triple's start and destination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleTimes<S> {
    pub at_start: S,
    pub at_dest: S,
}

/// Arrival times chained along each sequence from the agent's position. A
/// lifted in-progress task has its start time at 0.
pub fn schedule_times<S: Scalar>(alloc: &Allocation<S>, agents: &[AgentView], oracle: &DistanceOracle) -> Vec<Vec<ScheduleTimes<S>>> {
    let to_s = |d: u32| S::from_u32(d).unwrap();
    alloc
        .sequences
        .iter()
        .zip(agents)
        .enumerate()
        .map(|(m, (seq, agent))| {
            let mut pos = agent.position;
            let mut t = S::zero();
            seq.iter()
                .enumerate()
                .map(|(i, a)| {
                    let lifted = i == 0 && alloc.locked[m] && agent.in_progress.is_some_and(|ip| ip.picked_up);
                    let at_start = if lifted {
                        S::zero()
                    } else {
                        t = t + to_s(oracle.cost(pos, a.start));
                        pos = a.start;
                        t
                    };
                    t = t + to_s(oracle.cost(pos, a.dest));
                    pos = a.dest;
                    ScheduleTimes { at_start, at_dest: t }
                })
                .collect()
        })
        .collect()
}

/// Total estimated duration: the sum over agents of the chained travel time
/// from the current position through every start and destination.
pub fn score<S: Scalar>(alloc: &Allocation<S>, agents: &[AgentView], oracle: &DistanceOracle) -> S {
    schedule_times(alloc, agents, oracle)
        .iter()
        .filter_map(|seq| seq.last().map(|s| s.at_dest))
        .fold(S::zero(), |acc, t| acc + t)
}

/// An allocated triple with its location and timing, as compared by Shaw
/// relatedness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledTriple<S> {
    pub start: Vertex,
    pub dest: Vertex,
    pub times: ScheduleTimes<S>,
}

/// Weighted spatial plus temporal distance between two triples; lower is more
/// related.
pub fn relatedness<S: Scalar>(a: &ScheduledTriple<S>, b: &ScheduledTriple<S>, params: &LnsParams<S>) -> S {
    let spatial = S::from_u32(a.dest.l1(b.dest) + a.start.l1(b.start)).unwrap();
    let temporal = (a.times.at_start - b.times.at_start).abs() + (a.times.at_dest - b.times.at_dest).abs();
    params.spatial_weight * spatial + params.temporal_weight * temporal
}

/// Shaw removal. Draws a seed triple uniformly among those not locked as
/// in-progress, removes it with the `remove_count - 1` triples most related
/// to it, then truncates each affected sequence at its earliest removed
/// position. Returns every freed task; empty when nothing is removable.
pub fn shaw_remove<S: Scalar>(
    alloc: &mut Allocation<S>,
    sched: &[Vec<ScheduleTimes<S>>],
    map: &GridMap,
    params: &LnsParams<S>,
    rng: &mut impl Rng,
) -> Vec<TaskId> {
    let eligible: Vec<(usize, usize)> = alloc
        .iter()
        .filter(|&(m, i, _)| !(i == 0 && alloc.locked[m]))
        .map(|(m, i, _)| (m, i))
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let triple = |(m, i): (usize, usize)| {
        let a = &alloc.sequences[m][i];
        ScheduledTriple {
            start: map.vertex(a.start),
            dest: map.vertex(a.dest),
            times: sched[m][i],
        }
    };
    let seed_pos = eligible[rng.gen_range(0..eligible.len())];
    let seed = triple(seed_pos);
    let mut ranked: Vec<(S, (usize, usize))> = eligible
        .iter()
        .filter(|&&e| e != seed_pos)
        .map(|&e| (relatedness(&seed, &triple(e), params), e))
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut cut: Vec<Option<usize>> = vec![None; alloc.sequences.len()];
    let take = params.remove_count.saturating_sub(1);
    for (m, i) in std::iter::once(seed_pos).chain(ranked.into_iter().take(take).map(|(_, e)| e)) {
        cut[m] = Some(cut[m].map_or(i, |c| c.min(i)));
    }
    let mut freed = Vec::new();
    for (m, c) in cut.into_iter().enumerate() {
        if let Some(c) = c {
            freed.extend(alloc.sequences[m].drain(c..).map(|a| a.task));
        }
    }
    freed
}

/// Metropolis criterion for minimisation: improvements always pass, a worse
/// candidate passes with probability `exp(-(f_new - f_curr) / T)`.
pub fn accept<S: Scalar>(f_new: S, f_curr: S, temperature: S, rng: &mut impl Rng) -> bool {
    if f_new < f_curr {
        return true;
    }
    let p = (-(f_new - f_curr) / temperature).exp();
    S::from_f64(rng.gen::<f64>()).unwrap() < p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<S> {
    pub iter: u64,
    pub f_curr: S,
    pub f_new: S,
    pub temperature: S,
    pub accepted: bool,
}

pub fn write_trace<S: Scalar>(rows: &[TraceRow<S>], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "iter,f_curr,f_new,T,accepted")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.iter, r.f_curr, r.f_new, r.temperature, r.accepted as u8)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LnsOutcome<S> {
    pub best: Allocation<S>,
    pub initial_score: S,
    pub best_score: S,
    pub iterations: u64,
    pub accepted: u64,
}

/// Everything an LNS run reads besides the allocation itself.
pub struct LnsContext<'a, S> {
    pub map: &'a GridMap,
    pub oracle: &'a DistanceOracle,
    pub inventory: &'a Inventory,
    pub cost: &'a CostParams<S>,
    pub lns: &'a LnsParams<S>,
}

/// Improves `initial` until the budget runs out and returns the best
/// allocation seen. `mats` is left refreshed to an arbitrary iterate.
pub fn lns_improve<S: Scalar>(
    initial: Allocation<S>,
    mats: &mut CostMatrices<S>,
    ctx: &LnsContext<'_, S>,
    budget: Budget,
    rng: &mut impl Rng,
    mut trace: Option<&mut Vec<TraceRow<S>>>,
) -> LnsOutcome<S> {
    let agents = mats.agents().to_vec();
    let initial_score = score(&initial, &agents, ctx.oracle);
    let mut curr = initial;
    let mut f_curr = initial_score;
    let mut best = curr.clone();
    let mut f_best = f_curr;
    let mut k = 0;
    let mut accepted = 0;
    while !budget.exhausted(k) {
        let temperature = ctx.lns.temperature(k);
        let sched = schedule_times(&curr, &agents, ctx.oracle);
        let mut next = curr.clone();
        if shaw_remove(&mut next, &sched, ctx.map, ctx.lns, rng).is_empty() {
            break;
        }
        mats.refresh(&next, ctx.oracle);
        greedy_allocate(mats, &mut next, ctx.inventory, ctx.oracle, ctx.cost);
        let f_new = score(&next, &agents, ctx.oracle);
        let ok = accept(f_new, f_curr, temperature, rng);
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow {
                iter: k,
                f_curr,
                f_new,
                temperature,
                accepted: ok,
            });
        }
        if ok {
            accepted += 1;
            curr = next;
            f_curr = f_new;
            if f_curr < f_best {
                best = curr.clone();
                f_best = f_curr;
            }
        }
        k += 1;
    }
    LnsOutcome {
        best,
        initial_score,
        best_score: f_best,
        iterations: k,
        accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::{Assignment, InProgress, TaskCandidates};
    use crate::inventory::SkuId;
    use crate::tasks::TaskKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple(s: (i32, i32), d: (i32, i32), ts: f64, td: f64) -> ScheduledTriple<f64> {
        ScheduledTriple {
            start: Vertex::new(s.0, s.1),
            dest: Vertex::new(d.0, d.1),
            times: ScheduleTimes { at_start: ts, at_dest: td },
        }
    }

    #[test]
    fn relatedness_values() {
        let p = LnsParams::default();
        let a = triple((3, 3), (8, 1), 4.0, 9.0);
        assert_eq!(relatedness(&a, &a, &p), 0.0);
        let b = triple((4, 3), (8, 3), 4.0, 9.0);
        assert_eq!(relatedness(&a, &b, &p), 27.0);
        let c = triple((3, 3), (8, 1), 8.0, 13.0);
        assert_eq!(relatedness(&a, &c, &p), 24.0);
    }

    #[test]
    fn accept_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(accept(1.0, 2.0, 1e-9, &mut rng));
            assert!(accept(2.0, 2.0, 1e-9, &mut rng));
            assert!(!accept(3.0, 2.0, 1e-9, &mut rng));
        }
    }

    #[test]
    fn temperature_schedule() {
        let p = LnsParams::<f64>::default();
        assert_eq!(p.temperature(0), 1.0);
        assert_eq!(p.temperature(3), 0.99f64.powi(3));
        assert!(p.validate().is_ok());
        assert!(LnsParams { decay: 1.0, ..p }.validate().is_err());
        assert!(LnsParams { remove_count: 0, ..p }.validate().is_err());
    }

    fn corridor() -> (GridMap, DistanceOracle) {
        let map = GridMap::parse("height 2\nwidth 8\nmap\nLEEEEEEE\nL.......\n").unwrap();
        let oracle = DistanceOracle::build(&map);
        (map, oracle)
    }

    fn asg(task: u64, start: usize, dest: usize) -> Assignment<f64> {
        Assignment {
            task: TaskId(task),
            start,
            dest,
            est_cost: 0.0,
        }
    }

    #[test]
    fn score_chains_segments() {
        let (map, oracle) = corridor();
        let agents = [AgentView::idle(map.index(Vertex::new(2, 1)).unwrap())];
        let mut alloc = Allocation::<f64>::from_agents(&agents, &oracle);
        assert_eq!(score(&alloc, &agents, &oracle), 0.0);
        // agent (2,1) -> start (0,1): 2, -> dest (3,0): 4
        alloc.sequences[0].push(asg(0, 8, 3));
        assert_eq!(score(&alloc, &agents, &oracle), 6.0);
        let sched = schedule_times(&alloc, &agents, &oracle);
        assert_eq!(sched[0][0], ScheduleTimes { at_start: 2.0, at_dest: 6.0 });
    }

    #[test]
    fn in_progress_is_never_removed() {
        let (map, oracle) = corridor();
        let agents = [AgentView {
            position: 9,
            in_progress: Some(InProgress {
                task: TaskId(0),
                start: 8,
                dest: 3,
                picked_up: false,
            }),
        }];
        let mut alloc = Allocation::<f64>::from_agents(&agents, &oracle);
        let sched = schedule_times(&alloc, &agents, &oracle);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = alloc.clone();
        assert!(shaw_remove(&mut alloc, &sched, &map, &LnsParams::default(), &mut rng).is_empty());
        assert_eq!(alloc, before);
    }

    #[test]
    fn removal_cascades_down_the_sequence() {
        let (map, oracle) = corridor();
        let agents = [AgentView::idle(9)];
        let mut alloc = Allocation::<f64>::from_agents(&agents, &oracle);
        alloc.sequences[0] = vec![asg(0, 0, 1), asg(1, 8, 2), asg(2, 0, 3)];
        let sched = schedule_times(&alloc, &agents, &oracle);
        let params = LnsParams {
            remove_count: 1,
            ..LnsParams::default()
        };
        // Find a seed that hits the middle triple.
        for seed in 0..64 {
            let mut a = alloc.clone();
            let freed = shaw_remove(&mut a, &sched, &map, &params, &mut ChaCha8Rng::seed_from_u64(seed));
            if freed.first() == Some(&TaskId(1)) {
                assert_eq!(freed, vec![TaskId(1), TaskId(2)]);
                assert_eq!(a.sequences[0].len(), 1);
                return;
            }
        }
        panic!("middle triple never drawn");
    }

    #[test]
    fn zero_budget_returns_initial() {
        let (map, oracle) = corridor();
        let inv = Inventory::empty(&map, 1);
        let agents = [AgentView::idle(9)];
        let tasks = vec![TaskCandidates {
            id: TaskId(0),
            kind: TaskKind::Inbound,
            sku: SkuId(0),
            starts: vec![0, 8],
            dests: vec![4, 5],
        }];
        let mut mats = CostMatrices::<f64>::build(&agents, tasks, &oracle, map.num_cells());
        let cost = CostParams::default();
        let lns = LnsParams::default();
        let mut alloc = Allocation::from_agents(&agents, &oracle);
        greedy_allocate(&mut mats, &mut alloc, &inv, &oracle, &cost);
        let ctx = LnsContext {
            map: &map,
            oracle: &oracle,
            inventory: &inv,
            cost: &cost,
            lns: &lns,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = lns_improve(alloc.clone(), &mut mats, &ctx, Budget::iterations(0), &mut rng, None);
        assert_eq!(out.best, alloc);
        assert_eq!(out.iterations, 0);
        let out = lns_improve(alloc.clone(), &mut mats, &ctx, Budget::iterations(20), &mut rng, None);
        assert!(out.best_score <= out.initial_score);
    }
}
