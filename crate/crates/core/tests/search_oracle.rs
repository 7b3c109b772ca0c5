mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crebm::proposer::ProposalCache;
use crebm::search::{
    beam_search_plan, greedy_dfs_routes, retrostar_plan, route_log_prob, CostOracle, SearchLimits,
    ValueFn,
};

use common::{enumerate_route_logps, micro_benchmark, random_onestep};

const K: usize = 5;

fn ample(width: usize) -> SearchLimits {
    SearchLimits {
        beam_width: width,
        max_depth: 3,
        expansions_budget: 1_000_000,
        proposals_per_node: K,
    }
}

#[test]
fn planners_match_exhaustive_enumeration() {
    let mut compared = 0;
    for seed in 0..6u64 {
        let bench = micro_benchmark(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = random_onestep(&bench, &mut rng, 0.5);
        let cache = ProposalCache::new(&model);
        let oracle = CostOracle::new(&cache, &bench.inventory, K);
        for t in bench.splits.test.iter().chain(&bench.splits.val) {
            let all = enumerate_route_logps(&model, &bench.inventory, t, 1, 3, K, &mut Vec::new());
            if all.is_empty() || all.len() > 20_000 {
                continue;
            }
            let best = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // Far wider than the route count, so dead-end partials never crowd out live ones.
            let limits = ample(100_000);
            let beam = beam_search_plan(t, &cache, &bench.inventory, limits).unwrap();
            assert_eq!(beam.len(), all.len(), "beam misses routes of {t}");
            assert!((beam[0].log_prob - best).abs() < 1e-9);
            let zero = retrostar_plan(t, &cache, &bench.inventory, &ValueFn::Zero, limits).unwrap();
            assert!((zero[0].log_prob - best).abs() < 1e-9);
            let informed = retrostar_plan(
                t,
                &cache,
                &bench.inventory,
                &ValueFn::Oracle(&oracle),
                limits,
            )
            .unwrap();
            assert!((informed[0].log_prob - best).abs() < 1e-9);
            assert!((oracle.cost(t, 3) + best).abs() < 1e-9);
            let greedy = greedy_dfs_routes(t, &cache, &bench.inventory, limits, 1).unwrap();
            assert_eq!(greedy.len(), 1);
            for r in beam.iter().chain(&zero).chain(&informed).chain(&greedy) {
                r.validate().unwrap();
                assert!(r.leaves().is_subset(&bench.inventory));
                assert!(r.is_acyclic());
                assert!(r.depth() <= 3);
                assert!((route_log_prob(r, &model).unwrap() - r.log_prob).abs() < 1e-9);
            }
            assert!(beam.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
            compared += 1;
        }
    }
    assert!(compared >= 10, "only {compared} targets compared");
}

#[test]
fn narrow_budgets_still_return_valid_routes() {
    let bench = micro_benchmark(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_onestep(&bench, &mut rng, 0.5);
    let cache = ProposalCache::new(&model);
    let limits = SearchLimits {
        beam_width: 2,
        max_depth: 3,
        expansions_budget: 5,
        proposals_per_node: 2,
    };
    for t in &bench.splits.test {
        for r in beam_search_plan(t, &cache, &bench.inventory, limits).unwrap() {
            assert!(r.leaves().is_subset(&bench.inventory));
        }
        let rs = retrostar_plan(t, &cache, &bench.inventory, &ValueFn::Zero, limits).unwrap();
        assert!(rs.len() <= 2);
    }
}

#[test]
fn paired_runs_order_planners() {
    let mut paired = 0;
    for seed in 0..6u64 {
        let bench = micro_benchmark(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let model = random_onestep(&bench, &mut rng, 0.5);
        let cache = ProposalCache::new(&model);
        let oracle = CostOracle::new(&cache, &bench.inventory, K);
        let tight = SearchLimits {
            beam_width: 10,
            max_depth: 3,
            expansions_budget: 40,
            proposals_per_node: K,
        };
        for t in bench.splits.test.iter().chain(&bench.splits.val) {
            let zero = retrostar_plan(t, &cache, &bench.inventory, &ValueFn::Zero, tight).unwrap();
            let informed = retrostar_plan(
                t,
                &cache,
                &bench.inventory,
                &ValueFn::Oracle(&oracle),
                tight,
            )
            .unwrap();
            if let Some(z) = zero.first() {
                let o = informed
                    .first()
                    .expect("oracle search solves what zero solves");
                assert!(-o.log_prob <= -z.log_prob + 1e-9, "{t}");
            }

            let beam = beam_search_plan(t, &cache, &bench.inventory, ample(10)).unwrap();
            let greedy = greedy_dfs_routes(t, &cache, &bench.inventory, ample(10), 1).unwrap();
            if let (Some(b), Some(g)) = (beam.first(), greedy.first()) {
                assert!(g.log_prob <= b.log_prob + 1e-9, "{t}");
            }

            let narrow = beam_search_plan(t, &cache, &bench.inventory, ample(1)).unwrap();
            if let Some(b) = narrow.first() {
                let g = greedy_dfs_routes(t, &cache, &bench.inventory, ample(1), 1).unwrap();
                assert_eq!(g[0].canonical_key(), b.canonical_key(), "{t}");
            }
            paired += 1;
        }
    }
    assert!(paired >= 30, "only {paired} targets paired");
}
