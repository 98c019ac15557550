use packsel::calibration::{fit_platt, CalibrationMap};
use packsel::lab::{brute_force_ivanov, brute_force_tikhonov, check_non_collinearity, enumerate_breakpoints};
use packsel::synth::random_cost_instance;
use packsel::{solve_tikhonov, CostMatrices};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn with_masked_cells_replaced(costs: &CostMatrices, ship: f64, damage: f64) -> CostMatrices {
    let (s, d, m) = costs.parts();
    let s = s.iter().zip(m).map(|(&v, &masked)| if masked { ship } else { v }).collect();
    let d = d.iter().zip(m).map(|(&v, &masked)| if masked { damage } else { v }).collect();
    CostMatrices::new(costs.types(), s, d, m.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn solution_is_constant_between_breakpoints(seed in 0u64..5000, pos in 0.01f64..0.99, pick in 0usize..64) {
        let costs = random_cost_instance(seed, 6, 4, 0.2).unwrap();
        let breaks = enumerate_breakpoints(&costs);
        let mut edges = vec![0.0];
        edges.extend_from_slice(breaks.lambdas());
        let k = pick % edges.len();
        let lo = edges[k];
        let hi = edges.get(k + 1).copied().unwrap_or(lo * 2.0 + 1.0);
        let mid = solve_tikhonov(&costs, 0.5 * (lo + hi)).unwrap();
        let here = solve_tikhonov(&costs, lo + pos * (hi - lo)).unwrap();
        prop_assert_eq!(here.assignment, mid.assignment);
    }

    #[test]
    fn masked_cells_do_not_matter(seed in 0u64..5000, lambda in 0.0f64..50.0, s in 0.0f64..1e6, d in 0.0f64..1e6) {
        let costs = random_cost_instance(seed, 10, 5, 0.4).unwrap();
        let other = with_masked_cells_replaced(&costs, s, d);
        prop_assert_eq!(
            solve_tikhonov(&costs, lambda).unwrap().assignment,
            solve_tikhonov(&other, lambda).unwrap().assignment
        );
    }

    #[test]
    fn solver_never_picks_a_masked_cell(seed in 0u64..5000, lambda in 0.0f64..100.0) {
        let costs = random_cost_instance(seed, 20, 6, 0.5).unwrap();
        let out = solve_tikhonov(&costs, lambda).unwrap();
        for (i, &j) in out.assignment.chosen().iter().enumerate() {
            prop_assert!(!costs.is_masked(i, j));
        }
    }
}

#[test]
fn random_instances_are_in_general_position() {
    for seed in 0..1000 {
        let costs = random_cost_instance(seed, 8, 5, 0.2).unwrap();
        let report = check_non_collinearity(&costs);
        assert!(report.is_clean(), "seed {seed}: {report:?}");
    }
}

#[test]
fn six_by_four_against_brute_force() {
    for seed in 0..50 {
        let costs = random_cost_instance(seed, 6, 4, 0.2).unwrap();
        let breaks = enumerate_breakpoints(&costs);
        let mut edges = vec![0.0];
        edges.extend_from_slice(breaks.lambdas());
        let last = *edges.last().unwrap();
        let mids: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).chain([0.0, 2.0 * last + 1.0]).collect();
        for lambda in mids {
            let fast = solve_tikhonov(&costs, lambda).unwrap();
            let brute = brute_force_tikhonov(&costs, lambda).unwrap();
            assert_eq!(fast.objective, brute.objective, "seed {seed} lambda {lambda}");
            assert_eq!(fast.assignment, brute.assignment, "seed {seed} lambda {lambda}");
        }
        // at a computed crossing the two sides of a tie differ by rounding
        for &lambda in breaks.lambdas() {
            let fast = solve_tikhonov(&costs, lambda).unwrap().objective;
            let brute = brute_force_tikhonov(&costs, lambda).unwrap().objective;
            assert!((fast - brute).abs() <= 1e-12 * brute.abs(), "seed {seed} lambda {lambda}");
        }
    }
}

#[test]
fn budgeted_optimum_meets_budget() {
    let costs = random_cost_instance(3, 6, 4, 0.2).unwrap();
    let d_hi = solve_tikhonov(&costs, 0.0).unwrap().damage_cost;
    for k in 1..20 {
        let budget = d_hi * k as f64 / 20.0;
        if let Ok(sol) = brute_force_ivanov(&costs, budget) {
            assert!(sol.damage_cost <= budget);
        }
    }
}

#[test]
fn platt_recovers_identity_on_calibrated_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (raw, labels): (Vec<f64>, Vec<bool>) = (0..10_000)
        .map(|_| {
            let p: f64 = rng.random_range(0.02..0.98);
            (p, rng.random_bool(p))
        })
        .unzip();
    let CalibrationMap::Platt { a, b } = fit_platt(&raw, &labels).unwrap() else {
        panic!("expected a Platt map");
    };
    assert!((a - 1.0).abs() < 0.1, "a = {a}");
    assert!(b.abs() < 0.1, "b = {b}");
}
