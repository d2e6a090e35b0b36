use curlfree::bench::{CaseKind, ManufacturedCase};
use curlfree::grid::{average_node, discrete_curl, GridSpec, NodeField};
use curlfree::oracle::direct_solve;
use curlfree::solver::{recover_potential, solve, warm_start, Problem, SolveStatus, StopRule};
use curlfree::RelaxMethod;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(n: usize, seed: u64) -> Problem {
    let spec = GridSpec::cube(2, n, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = NodeField::from_values(&spec, (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let eps = NodeField::from_values(&spec, (0..spec.len()).map(|_| rng.gen_range(0.5..4.0)).collect()).unwrap();
    Problem::centered(rho, eps).unwrap()
}

fn method(i: usize) -> RelaxMethod {
    RelaxMethod::ALL[i]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn relaxation_converges_to_curl_free(n in prop::sample::select(vec![4usize, 8, 16, 32]), seed in 0u64..1000, m in 0usize..3) {
        let p = random_problem(n, seed)
            .with_method(method(m))
            .with_max_passes(10_000)
            .with_stop_rule(StopRule::CurlResidual(1e-10));
        let sol = solve(&p, None).unwrap();
        prop_assert_eq!(sol.report.status, SolveStatus::Converged);
        prop_assert!(discrete_curl(&sol.field).max_abs() <= 1e-10);
    }

    #[test]
    fn fixed_point_matches_direct_solve(n in prop::sample::select(vec![8usize, 16, 32, 64]), seed in 0u64..1000, m in 0usize..3) {
        let p = random_problem(n, seed)
            .with_method(method(m))
            .with_stop_rule(StopRule::CurlResidual(1e-12));
        let sol = solve(&p, None).unwrap();
        let oracle = direct_solve(&p).unwrap();
        let dev = sol.field.max_abs_diff(&oracle.field);
        prop_assert!(dev <= 1e-8, "deviation {dev:e}");
    }
}

#[test]
fn recovered_potential_is_second_order() {
    let errs: Vec<f64> = [32usize, 64]
        .iter()
        .map(|&n| {
            let case = ManufacturedCase::new(CaseKind::Trig2d, n).unwrap();
            let p = case.problem().unwrap().with_stop_rule(StopRule::CurlResidual(1e-12)).with_method(RelaxMethod::ZigzagHlr);
            let sol = solve(&p, None).unwrap();
            let phi = recover_potential(&sol.field).unwrap();
            assert!(average_node(&phi).abs() < 1e-12);
            case.phi_error_inf(&phi)
        })
        .collect();
    let order = (errs[0] / errs[1]).log2();
    assert!((1.9..=2.1).contains(&order), "potential order {order}");
}

#[test]
fn warm_start_beats_cold_start() {
    let p0 = random_problem(32, 11).with_method(RelaxMethod::ForwardHlr).with_tol(1e-10);
    let first = solve(&p0, None).unwrap();
    let mut rho = p0.rho().clone();
    for (i, v) in rho.values_mut().iter_mut().enumerate() {
        *v += 1e-3 * ((i % 7) as f64 - 3.0);
    }
    let m = average_node(&rho);
    rho.shift(-m);
    let p1 = p0.with_rho(rho).unwrap();
    let cold = solve(&p1, None).unwrap();
    let warm = solve(&p1, Some(warm_start(&first.field, &p1).unwrap())).unwrap();
    assert!(warm.report.passes < cold.report.passes, "warm {} cold {}", warm.report.passes, cold.report.passes);
}
