use mgdispatch::async_engine::{run_asdpd, AsyncConfig, AsyncError};
use mgdispatch::benchmark;
use mgdispatch::plant::{bus_outflows, line_losses, PlantState};
use mgdispatch::splitting::{apply_r, apply_t, project_box, IterateVector};
use mgdispatch::{BoxSet, PhiMetric, StepSizes};
use proptest::prelude::*;

fn vec6(range: std::ops::Range<f64>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(range, 6)
}

fn iterate() -> impl Strategy<Value = IterateVector> {
    (vec6(-100.0..100.0), vec6(-100.0..100.0), vec6(-50.0..150.0)).prop_map(|(mu, z, p_g)| IterateVector { mu, z, p_g })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(x in vec6(-200.0..200.0), y in vec6(-200.0..200.0)) {
        let bx = BoxSet::new(benchmark::P_MIN.to_vec(), benchmark::P_MAX.to_vec());
        let (px, py) = (project_box(&x, &bx), project_box(&y, &bx));
        prop_assert_eq!(project_box(&px, &bx), px.clone());
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d(&px, &py) <= d(&x, &y) + 1e-12);
    }

    #[test]
    fn operators_are_phi_nonexpansive(x in iterate(), y in iterate()) {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let phi = PhiMetric::from_steps(&g, &ss);
        let d = phi.dist(&x, &y);
        prop_assert!(phi.dist(&apply_t(&x, &ss, &p, &g), &apply_t(&y, &ss, &p, &g)) <= d * (1.0 + 1e-9));
        prop_assert!(phi.dist(&apply_r(&x, &ss, &p, &g), &apply_r(&y, &ss, &p, &g)) <= d * (1.0 + 1e-9));
    }

    #[test]
    fn lossless_network_conserves_power(theta in vec6(-0.5..0.5), v in vec6(0.9..1.1)) {
        let params = benchmark::plant(0.0);
        let st = PlantState { t: 0.0, theta, omega: vec![0.0; 6], v, p_inj: vec![0.0; 6], p_flow: vec![] };
        prop_assert!(bus_outflows(&st, &params).iter().sum::<f64>().abs() < 1e-9);
        prop_assert_eq!(line_losses(&st, &params), 0.0);
    }

    #[test]
    fn lossy_network_dissipates(theta in vec6(-0.5..0.5), v in vec6(0.9..1.1), loss in 0.001..0.2f64) {
        let params = benchmark::plant(loss);
        let st = PlantState { t: 0.0, theta, omega: vec![0.0; 6], v, p_inj: vec![0.0; 6], p_flow: vec![] };
        let net: f64 = bus_outflows(&st, &params).iter().sum();
        prop_assert!((net - line_losses(&st, &params)).abs() < 1e-9);
        prop_assert!(net >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn observed_staleness_never_exceeds_chi(seed in 0u64..10_000, chi in 0u64..4) {
        let (p, g) = benchmark::table1();
        let ss = StepSizes::choose(&p, &g, 0.01).unwrap();
        let ss = ss.with_eta(0.9 * ss.eta_bound(chi as f64, 6)).unwrap();
        let acfg = AsyncConfig { max_activations: 3000, ..AsyncConfig::uniform(chi, seed) };
        let run = match run_asdpd(&p, &g, &ss, &acfg, &[]) {
            Ok(r) => r,
            Err(AsyncError::MaxItersExceeded { run, .. }) => *run,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(run.max_staleness <= chi);
    }
}
