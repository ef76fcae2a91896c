use lqmfpg_core::analytic::{exact_cost, truncated_cost};
use lqmfpg_core::config::ExperimentConfig;
use lqmfpg_core::finite::{build_stacked, eval_social_cost, phi_for_theta, social_stage_cost};
use lqmfpg_core::model::{is_admissible, GaussianReading};
use lqmfpg_core::rng::{Role, StreamId};
use lqmfpg_core::simulate::{max_heterogeneity, mkv_rollout, pop_rollout, PopulationConfig};
use lqmfpg_core::zo::sample_sphere;
use lqmfpg_core::{ControlParams, Mat, MfcModel};
use proptest::prelude::*;

const BASE: &str = include_str!("../configs/desk.ini");

fn reference_model() -> MfcModel {
    MfcModel::scalar_reference(GaussianReading::Variance)
}

fn admissible_theta() -> impl Strategy<Value = ControlParams> {
    // For the scalar reference model: |0.5 - 0.5k| and |1 - l| below 1/sqrt(0.9).
    (-1.0f64..3.0, -0.05f64..2.0).prop_map(|(k, l)| ControlParams::scalar(k, l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        a in -2.0f64..2.0,
        gamma in 0.0f64..0.99,
        eta in 1e-4f64..1.0,
        m in 1usize..5000,
        seed in any::<u64>(),
        h in 0.0f64..0.5,
    ) {
        let mut cfg = ExperimentConfig::parse(BASE).unwrap();
        cfg.model.a = Mat::from_element(1, 1, a);
        cfg.model.gamma = gamma;
        let learn = cfg.learn.as_mut().unwrap();
        learn.eta = eta;
        learn.m = m;
        learn.seed = seed;
        cfg.population.as_mut().unwrap().h_tilde = h;
        let text = cfg.to_ini();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn sphere_points_have_radius_tau(rows in 1usize..4, cols in 1usize..4, tau in 1e-3f64..10.0, seed in any::<u64>()) {
        let v = sample_sphere(rows, cols, tau, &mut StreamId::root(seed).rng()).unwrap();
        prop_assert!((v.norm() - tau).abs() <= 1e-12 * tau);
    }

    #[test]
    fn stacked_costs_match_per_agent_sum(n in 1usize..6, h in 0.0f64..1.0, seed in any::<u64>()) {
        let model = reference_model();
        let h = h * max_heterogeneity(&model) * 0.99;
        let pop = PopulationConfig::drawn(&model, n, h, StreamId::root(seed).child(Role::Variations, 0)).unwrap();
        let stacked = build_stacked(&model, &pop).unwrap();
        let mut rng = StreamId::root(seed).child(Role::Rollout, 1).rng();
        let x = Mat::from_fn(n, 1, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let u = Mat::from_fn(n, 1, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let quadratic = (x.transpose() * &stacked.q * &x + u.transpose() * &stacked.r * &u)[(0, 0)];
        let direct = social_stage_cost(&model, &pop, &x, &u);
        prop_assert!((quadratic - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn rollouts_are_nonnegative_and_deterministic(theta in admissible_theta(), horizon in 1usize..80, seed in any::<u64>(), n in 1usize..5) {
        let model = reference_model();
        let s = StreamId::root(seed);
        let a = mkv_rollout(&model, &theta, horizon, s).unwrap().value;
        let b = mkv_rollout(&model, &theta, horizon, s).unwrap().value;
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        let pop = PopulationConfig::homogeneous(&model, n).unwrap();
        let p = pop_rollout(&model, &pop, &theta, horizon, s).unwrap().value;
        prop_assert!(p >= 0.0);
        prop_assert_eq!(p.to_bits(), pop_rollout(&model, &pop, &theta, horizon, s).unwrap().value.to_bits());
    }

    #[test]
    fn truncated_cost_increases_to_exact(theta in admissible_theta(), horizon in 1usize..200) {
        let model = reference_model();
        prop_assume!(is_admissible(&model, &theta));
        let c = exact_cost(&model, &theta).unwrap().total;
        let t0 = truncated_cost(&model, &theta, horizon).unwrap().total;
        let t1 = truncated_cost(&model, &theta, horizon + 1).unwrap().total;
        prop_assert!(t0 <= t1 + 1e-12 * t1.abs());
        prop_assert!(t1 <= c * (1.0 + 1e-10));
    }

    #[test]
    fn single_agent_cost_ignores_k(k1 in -1.0f64..3.0, k2 in -1.0f64..3.0, l in 0.0f64..2.0) {
        let model = reference_model();
        let pop = PopulationConfig::homogeneous(&model, 1).unwrap();
        let stacked = build_stacked(&model, &pop).unwrap();
        let c1 = eval_social_cost(&stacked, &phi_for_theta(&ControlParams::scalar(k1, l), 1)).unwrap();
        let c2 = eval_social_cost(&stacked, &phi_for_theta(&ControlParams::scalar(k2, l), 1)).unwrap();
        prop_assert!((c1 - c2).abs() <= 1e-12 * c1);
    }
}
