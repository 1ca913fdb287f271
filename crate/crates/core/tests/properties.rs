mod common;

use proptest::prelude::*;

use mg_core::belief::{belief_update, observation_probs, per_step_leakage};
use mg_core::bound::{interval_pmf, required_stages, tail_mass, PmfMode};
use mg_core::control::FixedRule;
use mg_core::model::{battery_update, feasible_purchases, stream, stream_rng};
use mg_core::oracle::{joint_table, HistoryController, OracleOptions};
use mg_core::policies::{bcp_to_action_rule, BatteryConditionedPolicy};
use mg_core::sim::{simulate_logged, SimOptions};
use mg_core::solver_infinite::ValueTable;
use mg_core::table::{read_value_table, write_value_table};
use mg_core::{ActionRule, Belief, BeliefGrid, Renewable, SystemConfig};

fn alphabet() -> impl Strategy<Value = SystemConfig> {
    (1usize..=3, 0usize..=2, 1usize..=4, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(x_max, extra, b_max, p_e, gamma)| {
        let n = x_max + 1;
        SystemConfig {
            x_max,
            y_max: x_max + extra,
            b_max,
            p_x: vec![1.0 / n as f64; n],
            p_e,
            gamma,
            ..SystemConfig::default()
        }
    })
}

fn binary() -> impl Strategy<Value = SystemConfig> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(p_e, gamma)| SystemConfig { p_e, gamma, ..SystemConfig::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn purchases_exist_and_keep_the_battery_in_range(cfg in alphabet()) {
        for b in 0..=cfg.b_max {
            for x in 0..=cfg.x_max {
                for e in Renewable::ALL {
                    let ys = feasible_purchases(b, x, e, &cfg).unwrap();
                    prop_assert!(!ys.is_empty());
                    for y in 0..=cfg.y_max {
                        match battery_update(b, x, y, e, &cfg) {
                            Ok(nb) => {
                                prop_assert!(nb <= cfg.b_max);
                                prop_assert!(ys.contains(&y));
                            }
                            Err(_) => prop_assert!(!ys.contains(&y)),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn random_rules_are_valid(cfg in alphabet(), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, stream::TEST, 0);
        for rule in [ActionRule::random(&cfg, &mut rng), ActionRule::uniform_feasible(&cfg), ActionRule::lowest_feasible(&cfg), ActionRule::reveal(&cfg)] {
            prop_assert!(rule.validate(&cfg).is_ok());
        }
    }

    #[test]
    fn updates_stay_on_the_simplex(cfg in alphabet(), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, stream::TEST, 1);
        let belief = Belief::random(cfg.n_states(), &mut rng);
        let rule = ActionRule::random(&cfg, &mut rng);
        let obs = observation_probs(&belief, &rule, &cfg);
        let total: f64 = obs.iter().flatten().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for e in Renewable::ALL {
            for y in 0..cfg.n_purchases() {
                if obs[e.index()][y] > 0.0 {
                    let next = belief_update(&belief, &rule, y, e, &cfg).unwrap();
                    prop_assert!(next.probs().iter().all(|p| *p >= 0.0));
                    prop_assert!((next.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
        let leak = per_step_leakage(&belief, &rule, &cfg);
        prop_assert!(leak >= -1e-12 && leak <= (cfg.n_states() as f64).log2() + 1e-12);
    }

    #[test]
    fn quantization_stays_within_radius(seed in any::<u64>(), m in 1usize..=12) {
        let grid = BeliefGrid::new(6, m).unwrap();
        let mut rng = stream_rng(seed, stream::TEST, 2);
        let b = Belief::random(6, &mut rng);
        let q = grid.point(grid.quantize(b.probs()));
        let d: f64 = b.probs().iter().zip(q).map(|(a, c)| (a - c).abs()).sum();
        prop_assert!(d <= grid.l1_radius() + 1e-12);
        prop_assert!(grid.l1_radius() <= 2.0 * 5.0 / (2.0 * m as f64) + 1e-12);
    }

    #[test]
    fn bcp_rules_respect_feasibility(cfg in alphabet(), pc in prop::collection::vec(0.0f64..=1.0, 5), pd in prop::collection::vec(0.0f64..=1.0, 5)) {
        let nl = cfg.n_levels();
        let bcp = BatteryConditionedPolicy { p_charge: pc[..nl].to_vec(), p_discharge: pd[..nl].to_vec() };
        let rule = bcp_to_action_rule(&bcp, &cfg).unwrap();
        prop_assert!(rule.validate(&cfg).is_ok());
    }

    #[test]
    fn oracle_leakage_is_bounded(cfg in binary(), seed in any::<u64>(), prior in prop::collection::vec(0.01f64..1.0, 3)) {
        let mut rng = stream_rng(seed, stream::TEST, 3);
        let sum: f64 = prior.iter().sum();
        let prior: Vec<f64> = prior.iter().map(|p| p / sum).collect();
        let opts = OracleOptions { initial_battery: Some(prior), ..OracleOptions::default() };
        let init = opts.initial_belief(&cfg).unwrap();
        let p = HistoryController { cfg: cfg.clone(), init, controller: FixedRule(ActionRule::random(&cfg, &mut rng)) };
        for t in 1..=2 {
            let table = joint_table(&p, t, &cfg, &opts).unwrap();
            prop_assert!((table.total_probability() - 1.0).abs() < 1e-10);
            let mi = table.mutual_information(true);
            let cap = (2f64.powi(t as i32) * 3.0).log2();
            prop_assert!(mi >= -1e-12 && mi <= cap + 1e-12);
        }
    }

    #[test]
    fn truncation_meets_epsilon(p in 0.01f64..=1.0, eps in 1e-8f64..1e-2, unnorm in any::<bool>()) {
        let mode = if unnorm { PmfMode::Unnormalized } else { PmfMode::Normalized };
        let k = required_stages(p, 0.75, eps, mode).unwrap();
        prop_assert!(tail_mass(k, p, mode) * 0.75 < eps);
        if k > 1 {
            prop_assert!(tail_mass(k - 1, p, mode) * 0.75 >= eps);
        }
        let head: f64 = (1..=k).map(|t| interval_pmf(t, p, mode).unwrap()).sum();
        let total = if unnorm { 1.0 - p } else { 1.0 };
        prop_assert!((head + tail_mass(k, p, mode) - total).abs() < 1e-12);
    }

    #[test]
    fn value_tables_round_trip(values in prop::collection::vec(-1e6f64..1e6, 56), lambda in -1.0f64..1.0, reference in 0usize..56) {
        let grid = BeliefGrid::new(6, 3).unwrap();
        let table = ValueTable { values, lambda, reference };
        let mut buf = Vec::new();
        write_value_table(&mut buf, &table, &grid).unwrap();
        prop_assert_eq!(read_value_table(&buf[..], &grid).unwrap(), table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_battery_follows_the_dynamics(cfg in binary(), seed in any::<u64>()) {
        let mut rng = stream_rng(seed, stream::TEST, 4);
        let rule = ActionRule::random(&cfg, &mut rng);
        let opts = SimOptions { total_slots: 2000, record: true, ..SimOptions::default() };
        let (_, log) = simulate_logged(&FixedRule(rule), &cfg, &opts, seed).unwrap();
        for w in log.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let e = Renewable::from_amount(a.e, &cfg).unwrap();
            prop_assert!(a.b <= cfg.b_max);
            prop_assert_eq!(battery_update(a.b, a.x, a.y, e, &cfg).unwrap(), b.b);
        }
    }
}
