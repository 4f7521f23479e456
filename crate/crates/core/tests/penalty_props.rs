use fsdopt::distribution::Objective;
use fsdopt::dominance::FeasibleBox;
use fsdopt::harness::RunConfig;
use fsdopt::penalty::{project_box, star_project_h_analytic};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{blend, dist, feasible_grid_optimum, g_of, riskfree_instance, triangle};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Vertices of `{Σx ≤ 1, x ≥ c}`: `c` itself and `c + (1 - Σc) e_j`.
fn box_vertices(c: &[f64]) -> Vec<Vec<f64>> {
    let mass = 1.0 - c.iter().sum::<f64>();
    let mut out = vec![c.to_vec()];
    for j in 0..c.len() {
        let mut v = c.to_vec();
        v[j] += mass;
        out.push(v);
    }
    out
}

fn lower_and_point(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-0.3f64..0.2, n),
        prop::collection::vec(-2.0f64..2.0, n),
    )
        .prop_filter("nonempty box", |(c, _)| c.iter().sum::<f64>() < 0.95)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// `y` is the projection iff it is admissible and `(x - y)·(v - y) ≤ 0`
    /// for every vertex `v` of the polytope.
    #[test]
    fn box_projection_satisfies_variational_inequality((c, x) in (2usize..=6).prop_flat_map(lower_and_point)) {
        let bounds = FeasibleBox::new(c.clone()).unwrap();
        let y = project_box(&x, &bounds).unwrap();
        prop_assert!(bounds.budget_residual(&y) <= 1e-12);
        prop_assert!(bounds.lower_residual(&y) <= 1e-12);
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        for v in box_vertices(&c) {
            let w: Vec<f64> = v.iter().zip(&y).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&d, &w) <= 1e-10, "vertex {v:?} violates: {}", dot(&d, &w));
        }
    }

    #[test]
    fn box_projection_is_idempotent((c, x) in (2usize..=6).prop_flat_map(lower_and_point)) {
        let bounds = FeasibleBox::new(c).unwrap();
        let y = project_box(&x, &bounds).unwrap();
        let z = project_box(&y, &bounds).unwrap();
        prop_assert!(dist(&y, &z) <= 1e-12);
    }
}

#[test]
fn closed_form_lambda_matches_bisection_on_h() {
    let (worst, interior) = common::lambda_agreement(11, 100).unwrap();
    assert!(worst <= 1e-6, "largest gap {worst}");
    assert!(interior >= 30, "only {interior} instances had an infeasible start");
}

#[test]
fn segment_to_riskfree_anchor_changes_sign_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for instance in 0..100 {
        let inst = riskfree_instance(&mut rng);
        let x: Vec<f64> = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0];
        let a = inst.anchor.weights().to_vec();
        let flags: Vec<bool> = (0..=400)
            .map(|k| g_of(&inst.s, &blend(&a, &x, k as f64 / 400.0), &inst.reference) <= 0.0)
            .collect();
        let first_bad = flags.iter().position(|f| !f).unwrap_or(flags.len());
        assert!(
            flags[first_bad..].iter().all(|f| !f),
            "instance {instance}: feasibility re-enters along the segment"
        );
    }
}

#[test]
fn analytic_projection_is_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for instance in 0..100 {
        let inst = riskfree_instance(&mut rng);
        let x: Vec<f64> = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0];
        let p = star_project_h_analytic(&inst.s, &x, &inst.reference, &inst.anchor).unwrap();
        for j in 0..2 {
            for h in [1e-7, -1e-7] {
                let mut z = x.clone();
                z[j] += h;
                let q = star_project_h_analytic(&inst.s, &z, &inst.reference, &inst.anchor).unwrap();
                assert!(
                    dist(&p.point, &q.point) <= 1e-4,
                    "instance {instance}: jump of {} for step {h} in coordinate {j}",
                    dist(&p.point, &q.point)
                );
            }
        }
    }
}

#[test]
fn penalized_grid_argmax_is_feasible_optimum() {
    assert_eq!(common::exactness_suite(14, 20, 200).unwrap(), 20 * 7);
}

#[test]
fn two_asset_offsets_share_the_grid_optimum() {
    let steps = 400;
    let grid = triangle(steps);
    let mut optima = Vec::new();
    for name in ["preset:exp-2asset-c0659", "preset:exp-2asset-c1659"] {
        let problem = RunConfig::load(name).unwrap().problem().unwrap();
        let f = problem.penalized().unwrap();
        let s = &problem.dataset.matrix;
        let best = feasible_grid_optimum(s, &problem.reference, &grid, Objective::Mean);
        let (arg, value) = grid
            .iter()
            .map(|x| (x.clone(), f.value(x)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(value, best, "{name}");
        assert!(g_of(s, &arg, &problem.reference) <= 0.0, "{name}");
        optima.push((arg, value));
    }
    assert_eq!(optima[0], optima[1]);
    let value = optima[0].1;
    assert!((value - 0.0640).abs() <= 5e-4, "grid optimum {value}");
}
