use std::sync::OnceLock;

use hjh_core::cell::{build_effective_table, ek_modify, CellOptions, EffectiveTable};
use hjh_core::effective_solver::{
    effective_operator, effective_residual, required_truncation, solve_effective, BoxGrid,
    BoxOptions, ValueField,
};
use hjh_core::epsilon_solver::{
    default_horizon, epsilon_operator, grid_tolerance, map_to_original, simulate_straightened,
    simulate_trajectory, solve_epsilon, Policy,
};
use hjh_core::geometry::{OscillationProfile, Vec2};
use hjh_core::model::{ControlId, ProblemInstance, Side};
use hjh_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn baseline() -> ProblemInstance<f64> {
    ProblemInstance::eikonal(1.0, 2.0, 64, OscillationProfile::sine(0.1), 1.0).unwrap()
}

fn constant(c: f64) -> ProblemInstance<f64> {
    ProblemInstance::eikonal(c, c, 32, OscillationProfile::sine(0.1), 1.0).unwrap()
}

fn coarse() -> CellOptions {
    CellOptions {
        h: 1.0 / 32.0,
        ..CellOptions::default()
    }
}

fn truncated(inst: &ProblemInstance<f64>, k: f64) -> EffectiveTable<f64> {
    let p2: Vec<f64> = (-5..=5).map(f64::from).collect();
    let t = build_effective_table(inst, &[0.0], &p2, &coarse()).unwrap();
    ek_modify(&t, k).unwrap()
}

fn baseline_table() -> &'static EffectiveTable<f64> {
    static TABLE: OnceLock<EffectiveTable<f64>> = OnceLock::new();
    TABLE.get_or_init(|| truncated(&baseline(), 5.0))
}

fn shifted(table: &EffectiveTable<f64>, s: f64) -> EffectiveTable<f64> {
    let mut t = table.clone();
    t.values.iter_mut().flatten().for_each(|v| *v -= s);
    t.m_ell += s;
    t
}

fn grid(h: f64) -> BoxGrid<f64> {
    BoxGrid::new(1.0, 0.5, h).unwrap()
}

fn max_gap(a: &ValueField<f64>, b: &ValueField<f64>, offset: f64) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y - offset).abs()).fold(0.0, f64::max)
}

#[test]
fn truncation_level_of_the_baseline() {
    let k = required_truncation(&baseline());
    assert!((k - 2.0 * 2.0 / (std::f64::consts::PI / 64.0).cos()).abs() < 1e-12);
    assert!(k > 4.0 && k < 4.01);
}

#[test]
fn effective_value_on_constant_cost() {
    let c = 1.5;
    let inst = constant(c);
    let table = truncated(&inst, 4.0);
    let opts = BoxOptions::default();
    let field = solve_effective(&inst, &table, grid(0.05), &opts).unwrap();
    let err = field.values.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
    assert!(err <= opts.eps_fix, "{err}");
    let flat = ValueField {
        values: vec![c / inst.discount; field.grid.len()],
        ..field.clone()
    };
    assert!(effective_residual(&flat, &inst, &table, &opts).unwrap() < 1e-12);
}

#[test]
fn effective_solution_bounds_shift_and_residual() {
    let inst = baseline();
    let table = baseline_table();
    let opts = BoxOptions::default();
    let g = grid(0.05);
    let field = solve_effective(&inst, table, g, &opts).unwrap();
    assert!(field.sup_norm() <= inst.m_ell() / inst.discount + 1e-9);
    assert!(field.residual < opts.eps_fix);
    assert!(effective_residual(&field, &inst, table, &opts).unwrap() < opts.eps_fix);

    let s = 0.25;
    let up = solve_effective(&inst.with_cost_shift(s), &shifted(table, s), g, &opts).unwrap();
    assert!(max_gap(&up, &field, s / inst.discount) < 1e-10);

    let op = effective_operator(&inst, table, &g, &opts).unwrap();
    let mut bumped = field.clone();
    let node = g.index(g.center() + 3, g.n2 / 2);
    bumped.values[node] += 0.1;
    let r = effective_residual(&bumped, &inst, table, &opts).unwrap();
    assert!(r >= 0.1 * (1.0 - op.beta()) * 0.99, "{r}");
}

#[test]
fn effective_solution_is_ordered_by_cost() {
    let cheap = baseline();
    let dear = ProblemInstance::eikonal(1.5, 2.0, 64, OscillationProfile::sine(0.1), 1.0).unwrap();
    let opts = BoxOptions::default();
    let g = grid(0.05);
    let a = solve_effective(&cheap, baseline_table(), g, &opts).unwrap();
    let b = solve_effective(&dear, &truncated(&dear, 5.0), g, &opts).unwrap();
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x <= y));
}

#[test]
fn tangential_controls_are_inactive_when_e_equals_e0() {
    let inst = baseline();
    let table = baseline_table();
    let g = grid(0.05);
    let with = solve_effective(&inst, table, g, &BoxOptions::default()).unwrap();
    let without = BoxOptions {
        tangential: false,
        ..BoxOptions::default()
    };
    let plain = solve_effective(&inst, table, g, &without).unwrap();
    assert!(max_gap(&with, &plain, 0.0) <= grid_tolerance(&with, &inst));
}

#[test]
fn epsilon_solutions() {
    let inst = baseline();
    let opts = BoxOptions::default();
    for eps in [0.4, 0.2] {
        let f = solve_epsilon(&inst, eps, grid(eps / 8.0), &opts).unwrap();
        assert!(f.sup_norm() <= inst.m_ell() / inst.discount + 1e-9);
        assert!(f.residual < opts.eps_fix);
    }
    let c = 1.5;
    let f = solve_epsilon(&constant(c), 0.4, grid(0.05), &opts).unwrap();
    assert!(f.values.iter().all(|v| (v - c).abs() <= opts.eps_fix));
    assert!(matches!(
        solve_epsilon(&inst, 0.2, grid(0.05), &opts),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn flat_interface_removes_the_scale() {
    let inst = baseline().with_profile(OscillationProfile::flat());
    let opts = BoxOptions::default();
    let a = solve_epsilon(&inst, 0.4, grid(0.025), &opts).unwrap();
    let b = solve_epsilon(&inst, 0.2, grid(0.025), &opts).unwrap();
    assert_eq!(a.values, b.values);
    let x = Vec2::new(0.13, -0.21);
    assert_eq!(map_to_original(&a, &inst.profile, 0.4, x).unwrap(), a.interpolate(x).unwrap());
}

#[test]
fn epsilon_solution_is_periodic_and_affine_in_the_cost() {
    let inst = baseline();
    let opts = BoxOptions::default();
    let eps = 0.2;
    let g = grid(eps / 8.0);
    let f = solve_epsilon(&inst, eps, g, &opts).unwrap();
    let shift = (eps / g.h2).round() as usize;
    let mut worst = 0.0f64;
    for j in 0..g.n2 - shift {
        if g.z2(j).abs() > 0.4 || g.z2(j + shift).abs() > 0.4 {
            continue;
        }
        for i in 0..g.n1 {
            if g.z1(i).abs() <= 0.8 {
                worst = worst.max((f.at(i, j) - f.at(i, j + shift)).abs());
            }
        }
    }
    // away from the outer box the field only sees the periodic coefficients
    assert!(worst <= 10.0 * opts.eps_fix, "{worst}");
    let s = 0.5;
    let up = solve_epsilon(&inst.with_cost_shift(s), eps, g, &opts).unwrap();
    assert!(max_gap(&up, &f, s) < 1e-10);

    // points of the interface land on the z1 = 0 column
    let z2 = g.z2(7);
    let x = Vec2::new(eps * inst.profile.g(z2 / eps), z2);
    let v = map_to_original(&f, &inst.profile, eps, x).unwrap();
    assert!((v - f.at(g.center(), 7)).abs() < 1e-12);
    assert!(matches!(
        map_to_original(&f, &inst.profile, eps, Vec2::new(3.0, 0.0)),
        Err(Error::OutOfBox { .. })
    ));
}

#[test]
fn resting_control_costs_a_geometric_integral() {
    let inst = baseline();
    let rest = ControlId::new(Side::Right, 64);
    let horizon = default_horizon(&inst);
    let run = simulate_trajectory(&inst, 0.2, Vec2::new(0.3, 0.1), &Policy::constant(rest), horizon, 0.01).unwrap();
    let expect = 2.0 * (1.0 - (-horizon).exp());
    assert!((run.discounted_cost - expect).abs() < 1e-9, "{}", run.discounted_cost);
    assert!(run.path.iter().all(|y| *y == Vec2::new(0.3, 0.1)));
    assert!((run.truncation_bound - 2.0 * (-10.0f64).exp()).abs() < 1e-15);
    assert!(run.to_csv().starts_with("t,y1,y2,a1,a2,side"));
}

#[test]
fn side_tags_must_match_the_region() {
    let inst = baseline();
    let wrong = Policy::constant(ControlId::new(Side::Left, 0));
    assert!(matches!(
        simulate_trajectory(&inst, 0.2, Vec2::new(0.5, 0.0), &wrong, 1.0, 0.01),
        Err(Error::MixingViolation { .. })
    ));
}

#[test]
fn straightened_and_original_trajectories_agree() {
    let inst = baseline();
    let eps = 0.2;
    let policy = Policy::new(vec![
        (0.0, ControlId::new(Side::Right, 8)),
        (0.7, ControlId::new(Side::Right, 20)),
        (1.5, ControlId::new(Side::Right, 60)),
    ])
    .unwrap();
    let x0 = Vec2::new(0.4, 0.05);
    let a = simulate_trajectory(&inst, eps, x0, &policy, 3.0, 1e-3).unwrap();
    let b = simulate_straightened(&inst, eps, inst.profile.straighten(x0, eps), &policy, 3.0, 1e-3).unwrap();
    assert!((a.discounted_cost - b.discounted_cost).abs() < 1e-3);
    let end = inst.profile.straighten(*a.path.last().unwrap(), eps);
    assert!((end - *b.path.last().unwrap()).norm() < 1e-3);
}

#[test]
fn simulated_costs_bound_the_value_from_above() {
    let inst = baseline();
    let eps = 0.2;
    let f = solve_epsilon(&inst, eps, grid(eps / 8.0), &BoxOptions::default()).unwrap();
    let tol = grid_tolerance(&f, &inst);
    let horizon = default_horizon(&inst);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..10 {
        let side = if n % 2 == 0 { Side::Left } else { Side::Right };
        let s = side.sigma() as f64;
        let outward: Vec<usize> = (0..65)
            .filter(|&k| s * inst.side(side).velocity(k).x1 >= 0.0)
            .collect();
        let mut segments = Vec::new();
        let mut t = 0.0;
        while t < horizon {
            segments.push((t, ControlId::new(side, outward[rng.gen_range(0..outward.len())])));
            t += rng.gen_range(0.2..2.0);
        }
        let x0 = Vec2::new(s * rng.gen_range(0.05..0.8), rng.gen_range(-0.4..0.4));
        let run = simulate_trajectory(&inst, eps, x0, &Policy::new(segments).unwrap(), horizon, 0.01).unwrap();
        let v = map_to_original(&f, &inst.profile, eps, x0).unwrap();
        assert!(run.discounted_cost + run.truncation_bound >= v - 2.0 * tol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn box_operators_are_monotone(seed in any::<u64>()) {
        let inst = baseline();
        let g = grid(0.05);
        let ops = [
            epsilon_operator(&inst, 0.4, &g).unwrap(),
            effective_operator(&inst, baseline_table(), &g, &BoxOptions::default()).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for op in &ops {
            let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let w: Vec<f64> = u.iter().map(|x| x + rng.gen_range(0.0..1.0)).collect();
            let (tu, tw) = (op.apply(&u), op.apply(&w));
            prop_assert!(tu.iter().zip(&tw).all(|(a, b)| a <= b));
        }
    }
}
