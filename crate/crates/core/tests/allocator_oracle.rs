//! Greedy construction against a brute-force scan of the full
//! (agent, task, start, destination) tensor.

mod common;

use common::{random_instance, tensor_greedy, Small};
use m2m_core::allocator::{greedy_allocate, Allocation, CostMatrices, CostMode, CostParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run_greedy(inst: &Small, params: &CostParams<f64>) -> Vec<(usize, u64, usize, usize, f64)> {
    let mut mats = CostMatrices::build(&inst.agents, inst.tasks.clone(), &inst.oracle, inst.map.num_cells());
    let mut alloc = Allocation::from_agents(&inst.agents, &inst.oracle);
    let commits = greedy_allocate(&mut mats, &mut alloc, &inst.inventory, &inst.oracle, params);
    alloc.check_invariants(&inst.agents, params.max_sequence).unwrap();
    commits
        .iter()
        .map(|c| {
            (
                c.agent,
                inst.tasks[c.task].id.0,
                mats.start_cell(c.start),
                mats.dest_cell(c.dest),
                c.cost,
            )
        })
        .collect()
}

#[test]
fn matches_tensor_scan_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..200 {
        let inst = random_instance(&mut rng, 3, 3, 4);
        for mode in [CostMode::Base, CostMode::WSku] {
            let params = CostParams {
                mode,
                max_sequence: 1 + k % 3,
                ..CostParams::default()
            };
            assert_eq!(run_greedy(&inst, &params), tensor_greedy(&inst, &params), "instance {k} {mode:?}");
        }
    }
}

#[test]
fn single_precision_agrees_on_integer_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 3, 3, 4);
        let params = CostParams::<f32>::default();
        let mut mats = CostMatrices::<f32>::build(&inst.agents, inst.tasks.clone(), &inst.oracle, inst.map.num_cells());
        let mut alloc = Allocation::from_agents(&inst.agents, &inst.oracle);
        let c32: Vec<_> = greedy_allocate(&mut mats, &mut alloc, &inst.inventory, &inst.oracle, &params)
            .iter()
            .map(|c| (c.agent, c.task, c.start, c.dest, c.cost as f64))
            .collect();
        let mut mats = CostMatrices::<f64>::build(&inst.agents, inst.tasks.clone(), &inst.oracle, inst.map.num_cells());
        let mut alloc = Allocation::from_agents(&inst.agents, &inst.oracle);
        let c64: Vec<_> = greedy_allocate(&mut mats, &mut alloc, &inst.inventory, &inst.oracle, &CostParams::default())
            .iter()
            .map(|c| (c.agent, c.task, c.start, c.dest, c.cost))
            .collect();
        assert_eq!(c32, c64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn larger_instances_match_and_respect_invariants(seed in any::<u64>(), m in 1usize..6, n in 1usize..8, beta in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, m, n, 6);
        let params = CostParams { max_sequence: beta, ..CostParams::default() };
        let got = run_greedy(&inst, &params);
        prop_assert_eq!(&got, &tensor_greedy(&inst, &params));
    }

    #[test]
    fn uniform_weight_scaling_keeps_the_commit_order(seed in any::<u64>(), scale in 1u32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 3, 3, 4);
        let base = CostParams { mode: CostMode::WSku, ..CostParams::default() };
        let s = f64::from(scale);
        let scaled = CostParams { base_weight: base.base_weight * s, sku_weight: base.sku_weight * s, ..base };
        let strip = |v: Vec<(usize, u64, usize, usize, f64)>| v.into_iter().map(|c| (c.0, c.1, c.2, c.3)).collect::<Vec<_>>();
        prop_assert_eq!(strip(run_greedy(&inst, &base)), strip(run_greedy(&inst, &scaled)));
    }
}
