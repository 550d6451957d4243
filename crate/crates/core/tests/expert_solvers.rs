use advbid_core::expert::{
    build_slot_aggregates, solve_assignment_lp, solve_bruteforce, solve_day, solve_relaxed, Constraints, ExpertConfig,
    RatioGrid, RelaxedConfig, SlotAggregateTable,
};
use advbid_core::market::{generate_dataset, DayGroup, GeneratorConfig, Mechanism, Split};
use proptest::prelude::*;

// Monotone rows like a real grid: higher ratios win more and pay more.
fn table_strategy() -> impl Strategy<Value = SlotAggregateTable> {
    (1usize..=4, 2usize..=5).prop_flat_map(|(h, k)| {
        prop::collection::vec(prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), k - 1), h).prop_map(|rows| {
            let mut utility = Vec::new();
            let mut cost = Vec::new();
            for row in rows {
                let (mut u, mut c) = (vec![0.0], vec![0.0]);
                for (du, dc) in row {
                    u.push(u.last().unwrap() + du);
                    c.push(c.last().unwrap() + dc);
                }
                utility.push(u);
                cost.push(c);
            }
            SlotAggregateTable { utility, cost }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn relaxed_is_sandwiched(table in table_strategy(), budget in 0.5f64..8.0, roi in 0.5f64..2.0) {
        let cons = Constraints { budget, roi_target: roi };
        let exact = solve_bruteforce(&table, cons).unwrap();
        let relaxed = solve_relaxed(&table, cons, RelaxedConfig::default());
        prop_assert!(relaxed.converged);
        prop_assert!(cons.admits(relaxed.utility, relaxed.cost));
        prop_assert!(relaxed.utility <= exact.utility + 1e-9);
        prop_assert!(relaxed.utility >= 0.95 * exact.utility - 1e-12, "rounded {} exact {}", relaxed.utility, exact.utility);
        prop_assert!(exact.utility <= relaxed.bound + 1e-7 * (1.0 + relaxed.bound));
        let lp = solve_assignment_lp(&table, cons, 10_000);
        let integral = lp.z.iter().flatten().all(|&z| z < 1e-9 || z > 1.0 - 1e-9);
        let mut seq = vec![0usize; table.slots()];
        for code in 0..table.columns().pow(table.slots() as u32) {
            let mut rest = code;
            for slot in seq.iter_mut() {
                *slot = rest % table.columns();
                rest /= table.columns();
            }
            let (u, c) = table.totals(&seq);
            if cons.admits(u, c) {
                prop_assert!(u <= exact.utility);
            }
        }
        if integral {
            prop_assert!((lp.objective - exact.utility).abs() <= 1e-9 * (1.0 + exact.utility));
        }
    }
}

#[test]
fn generated_day_expert_is_feasible_and_tight() {
    let cfg = GeneratorConfig {
        seed: 11,
        auctions_per_day: 4000,
        groups: vec![
            DayGroup { split: Split::Train, mechanism: Mechanism::Gsp, days: 2, k_range: (0.0, 0.0) },
            DayGroup { split: Split::TestOod, mechanism: Mechanism::Mix, days: 2, k_range: (0.3, 1.0) },
        ],
        ..GeneratorConfig::default()
    };
    for day in generate_dataset(&cfg).unwrap() {
        let e = solve_day(&day, &ExpertConfig::default()).unwrap();
        assert!(!e.flagged, "day {}", day.day_id);
        assert!(e.solution.converged);
        assert!(e.solution.utility > 0.0);
        assert!(e.solution.gap <= 0.05 * e.solution.bound, "gap {} bound {}", e.solution.gap, e.solution.bound);
        let grid = RatioGrid::for_day(&day, 32).unwrap();
        let table = build_slot_aggregates(&day, &grid).unwrap();
        assert_eq!(table.totals(&e.solution.choice).0, e.solution.utility);
    }
}
