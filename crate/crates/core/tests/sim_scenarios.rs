//! Whole-simulation scenarios: hand-traced timings, conservation and replay.

use m2m_core::sim::{self, write_events, write_metrics, AllocatorMode, SimConfig, Simulation};
use m2m_core::tasks::{Task, TaskEventKind, TaskId, TaskKind, TaskState};
use m2m_core::{DistanceOracle, GridMap, MapAsset, SkuId, Vertex};

fn quick(mode: AllocatorMode, seed: u64) -> SimConfig {
    SimConfig {
        mode,
        seed,
        agents: 12,
        horizon: 300,
        lns_iterations: Some(5),
        alloc_budget_ms: None,
        record_trajectories: true,
        ..SimConfig::default()
    }
}

#[test]
fn zero_agents_only_release_tasks() {
    let config = SimConfig {
        agents: 0,
        horizon: 50,
        ..SimConfig::default()
    };
    let out = sim::run(config).unwrap();
    assert!(out.released > 0);
    assert_eq!(out.completed, 0);
    assert_eq!(out.metrics.len(), 50);
    assert!(out.metrics.iter().all(|m| m.cumulative == 0));
}

#[test]
fn horizon_zero_records_nothing() {
    let out = sim::run(SimConfig {
        horizon: 0,
        ..SimConfig::default()
    })
    .unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.mean_throughput, 0.0);
}

#[test]
fn single_inbound_task_takes_both_legs_plus_the_delivery_tick() {
    let map = GridMap::parse("height 5\nwidth 5\nmap\nL....\n.....\n.....\n.....\n....E\n").unwrap();
    let oracle = DistanceOracle::build(&map);
    let config = SimConfig {
        agents: 1,
        num_skus: 1,
        density: 0.0,
        release_rate: 0,
        lns_iterations: Some(0),
        horizon: 40,
        ..SimConfig::default()
    };
    let mut sim = Simulation::with_map(config, map.clone()).unwrap();
    let home = map.index(Vertex::new(2, 1)).unwrap();
    let s = map.loading_endpoints()[0];
    let d = map.storage_endpoints()[0];
    sim.place_agent(0, home);
    let id = sim.pool_mut().insert(Task {
        id: TaskId(0),
        kind: TaskKind::Inbound,
        sku: SkuId(0),
        starts: vec![s],
        dests: vec![d],
        state: TaskState::Free,
        release_time: 0,
        fixed: false,
    });
    let (c1, c2) = (u64::from(oracle.cost(home, s)), u64::from(oracle.cost(s, d)));
    assert_eq!((c1, c2), (3, 8));

    // Ticks 0..c1+c2-1 carry the agent there; the delivery fires at the end
    // of the last one.
    for _ in 0..c1 + c2 - 1 {
        sim.step().unwrap();
    }
    assert_eq!(sim.cumulative_completions(), 0);
    sim.step().unwrap();
    assert_eq!(sim.cumulative_completions(), 1);
    let at = |kind: TaskEventKind| sim.events.iter().find(|e| e.task == id && e.event == kind).map(|e| e.t);
    assert_eq!(at(TaskEventKind::Allocated), Some(0));
    assert_eq!(at(TaskEventKind::PickedUp), Some(c1));
    let done = at(TaskEventKind::Completed).unwrap();
    assert_eq!(done, c1 + c2);
    // Inclusive span of timesteps from release to completion.
    assert_eq!(done + 1, c1 + c2 + 1);
    assert_eq!(sim.inventory().item_at(d), Some(SkuId(0)));
}

#[test]
fn replays_are_byte_identical() {
    for mode in AllocatorMode::ALL {
        let render = || {
            let out = sim::run(quick(mode, 4)).unwrap();
            let mut m = Vec::new();
            write_metrics(&out.metrics, &mut m).unwrap();
            let mut e = Vec::new();
            write_events(&out.events, &mut e).unwrap();
            (m, e, out.trajectories)
        };
        assert!(render() == render(), "{mode}");
    }
}

#[test]
fn runs_conserve_tasks_and_never_collide() {
    for mode in AllocatorMode::ALL {
        for (seed, map) in MapAsset::ALL.into_iter().enumerate() {
            let mut sim = Simulation::new(SimConfig { map, ..quick(mode, seed as u64) }).unwrap();
            sim.run_to_end().unwrap();
            assert_eq!(sim.replay_collisions(), 0, "{map} {mode} seed {seed}");
            let pool = sim.pool();
            assert!(pool.completed() <= pool.released());
            assert_eq!(pool.completed(), sim.cumulative_completions());
            assert!(pool.completed() > 0, "{map} {mode} seed {seed} completed nothing");
            assert!(sim.metrics.windows(2).all(|w| w[0].cumulative <= w[1].cumulative));
        }
    }
}

#[test]
fn window_throughput_recomputes_from_completions() {
    let config = SimConfig {
        window_seconds: 60.0,
        ..quick(AllocatorMode::Base, 9)
    };
    let out = sim::run(config).unwrap();
    for (i, row) in out.metrics.iter().enumerate() {
        let lo = i.saturating_sub(59);
        let sum: u64 = out.metrics[lo..=i].iter().map(|r| r.completions).sum();
        assert_eq!(row.window_completions, sum, "t={}", row.t);
        let minutes = (row.t.min(60)) as f64 / 60.0;
        assert!((row.throughput - sum as f64 / minutes).abs() < 1e-9);
    }
    let total: u64 = out.metrics.iter().map(|r| r.completions).sum();
    assert_eq!(total, out.completed);
    assert!((out.mean_throughput - total as f64 / 5.0).abs() < 1e-9);
}

#[test]
fn high_density_target_is_held() {
    let config = SimConfig {
        density: 0.9,
        horizon: 1000,
        lns_iterations: Some(0),
        alloc_budget_ms: None,
        ..SimConfig::default()
    };
    let out = sim::run(config).unwrap();
    let mean = out.metrics.iter().map(|r| r.density).sum::<f64>() / out.metrics.len() as f64;
    assert!((mean - 0.9).abs() <= 0.05, "window mean {mean}");
    assert!(out.metrics.iter().all(|r| (r.density - 0.9).abs() <= 0.1));
}
