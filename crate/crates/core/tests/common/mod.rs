//! Oracles shared by the property tests and the acceptance runner.
#![allow(dead_code)]

use fsdopt::distribution::{Objective, ScenarioMatrix, SortedReturns};
use fsdopt::dominance::{cdf_residual, quantile_residual, FeasibleBox, ReferenceProfile, Shift};
use fsdopt::penalty::{
    star_project_h_analytic, Anchor, PenalizedObjective, PenaltySpec, PenaltyVariant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn matrix(rows: Vec<Vec<f64>>) -> ScenarioMatrix {
    let n = rows[0].len();
    ScenarioMatrix::new(rows, (0..n).map(|j| format!("a{j}")).collect()).unwrap()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

pub fn blend(anchor: &[f64], x: &[f64], lambda: f64) -> Vec<f64> {
    anchor.iter().zip(x).map(|(a, v)| (1.0 - lambda) * a + lambda * v).collect()
}

pub fn h_of(s: &ScenarioMatrix, x: &[f64], reference: &ReferenceProfile) -> f64 {
    quantile_residual(&SortedReturns::of_portfolio(s, x).unwrap(), reference)
}

pub fn g_of(s: &ScenarioMatrix, x: &[f64], reference: &ReferenceProfile) -> f64 {
    cdf_residual(&SortedReturns::of_portfolio(s, x).unwrap(), reference)
}

pub struct RiskfreeInstance {
    pub s: ScenarioMatrix,
    pub reference: ReferenceProfile,
    pub anchor: Anchor,
    pub r: f64,
}

/// Two risky assets plus a constant column `r`, and a step reference that
/// tops out strictly below `r`.
pub fn riskfree_instance(rng: &mut ChaCha8Rng) -> RiskfreeInstance {
    let m = rng.random_range(3..=9);
    let r = rng.random_range(0.05..0.15);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| vec![rng.random_range(-0.4..0.6), rng.random_range(-0.3..0.5), r])
        .collect();
    let k = rng.random_range(1..=4);
    let mut thresholds: Vec<f64> = (0..k).map(|_| rng.random_range(-0.3..r - 0.005)).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut levels: Vec<f64> = (0..thresholds.len()).map(|_| rng.random_range(0.05..1.0)).collect();
    levels.sort_by(f64::total_cmp);
    *levels.last_mut().unwrap() = 1.0;
    let points: Vec<(f64, f64)> = thresholds.into_iter().zip(levels).collect();
    let reference = ReferenceProfile::from_steps(&points).unwrap();
    let s = matrix(rows);
    let anchor = Anchor::new(&s, vec![0.0, 0.0, 1.0]).unwrap();
    RiskfreeInstance { s, reference, anchor, r }
}

/// Largest feasible mixing weight for the quantile residual, by bisection on
/// direct evaluations.
pub fn bisect_lambda_h(inst: &RiskfreeInstance, x: &[f64]) -> f64 {
    let a = inst.anchor.weights();
    if h_of(&inst.s, x, &inst.reference) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if h_of(&inst.s, &blend(a, x, mid), &inst.reference) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Closed-form weight against bisection on `count` random instances. Returns
/// the largest gap and the number of instances with an infeasible start.
pub fn lambda_agreement(seed: u64, count: usize) -> Result<(f64, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut interior = 0;
    for instance in 0..count {
        let inst = riskfree_instance(&mut rng);
        let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0];
        let expected = bisect_lambda_h(&inst, &x);
        if expected < 1.0 {
            interior += 1;
        }
        let p = star_project_h_analytic(&inst.s, &x, &inst.reference, &inst.anchor)
            .map_err(|e| format!("instance {instance}: {e}"))?;
        worst = worst.max((p.lambda - expected).abs());
        if h_of(&inst.s, &p.point, &inst.reference) > 0.0 || g_of(&inst.s, &p.point, &inst.reference) > 0.0 {
            return Err(format!("instance {instance}: projected point infeasible"));
        }
    }
    Ok((worst, interior))
}

/// Grid over the triangle `x1, x2 ≥ 0, x1 + x2 ≤ 1`.
pub fn triangle(steps: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / steps as f64;
    let mut out = Vec::new();
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            out.push(vec![i as f64 * h, j as f64 * h]);
        }
    }
    out
}

pub fn feasible_grid_optimum(
    s: &ScenarioMatrix,
    reference: &ReferenceProfile,
    grid: &[Vec<f64>],
    objective: Objective,
) -> f64 {
    grid.iter()
        .filter(|x| g_of(s, x, reference) <= 0.0)
        .map(|x| objective.evaluate(&SortedReturns::of_portfolio(s, x).unwrap()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `‖μ‖·h·√2`: how far a linear objective can move within one grid cell.
pub fn mean_cell_slack(s: &ScenarioMatrix, h: f64) -> f64 {
    let mu: Vec<f64> = (0..s.assets())
        .map(|j| s.column(j).iter().sum::<f64>() / s.scenarios() as f64)
        .collect();
    mu.iter().map(|v| v * v).sum::<f64>().sqrt() * h * 2f64.sqrt()
}

/// Checks one penalized function against the feasible grid optimum `best`.
///
/// Discontinuous variants must attain `best` exactly at a feasible grid
/// point. Projective variants may beat `best` by at most `slack`, since an
/// infeasible grid point can project onto a feasible point off the grid; the
/// projected point must be feasible.
pub fn check_exactness(
    f: &PenalizedObjective,
    grid: &[Vec<f64>],
    best: f64,
    slack: f64,
) -> Result<(), String> {
    let (arg, value) = grid
        .iter()
        .map(|x| (x, f.value(x)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let eval = f.evaluate(arg);
    let s = f.scenarios();
    let p = &eval.recovered;
    if !f.bounds().contains(p) {
        return Err(format!("recovered point {p:?} leaves the box"));
    }
    if g_of(s, p, f.reference()) > 0.0 {
        return Err(format!("recovered point {p:?} infeasible"));
    }
    if value < best - 1e-12 {
        return Err(format!("argmax {value} below feasible optimum {best}"));
    }
    if f.variant().is_projective() {
        if value > best + slack {
            return Err(format!("argmax {value} exceeds {best} by more than {slack}"));
        }
    } else {
        if g_of(s, arg, f.reference()) > 0.0 {
            return Err(format!("grid argmax {arg:?} infeasible"));
        }
        if value != best {
            return Err(format!("argmax {value} differs from feasible optimum {best}"));
        }
    }
    Ok(())
}

/// Random two-asset instances, each checked for every applicable variant.
/// Returns the number of penalized functions checked.
pub fn exactness_suite(seed: u64, instances: usize, steps: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / steps as f64;
    let grid = triangle(steps);
    let mut checked = 0;
    for instance in 0..instances {
        // Two risky assets, portfolio reference.
        let m = rng.random_range(4..=10);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| vec![rng.random_range(-0.3..0.6), rng.random_range(-0.3..0.6)])
            .collect();
        let s = matrix(rows);
        let k = rng.random_range(5..=15);
        let x_ref = vec![k as f64 * 0.05, 1.0 - k as f64 * 0.05];
        let shift = rng.random_range(0.02..0.1);
        let reference = ReferenceProfile::from_portfolio(&s, &x_ref, Shift::Uniform(shift)).unwrap();
        let best = feasible_grid_optimum(&s, &reference, &grid, Objective::Mean);
        let slack = mean_cell_slack(&s, h) + 1e-12;
        for variant in [PenaltyVariant::DiscontinuousG, PenaltyVariant::DiscontinuousH, PenaltyVariant::ProjectiveG] {
            let spec = PenaltySpec::new(variant).with_anchor(x_ref.clone()).with_offset(2.0);
            let f = PenalizedObjective::new(s.clone(), reference.clone(), FeasibleBox::long_only(2), Objective::Mean, &spec)
                .map_err(|e| e.to_string())?;
            check_exactness(&f, &grid, best, slack)
                .map_err(|e| format!("risky instance {instance}, {variant:?}: {e}"))?;
            checked += 1;
        }

        // Risky asset plus a constant column, step reference below it.
        let inst = riskfree_instance(&mut rng);
        let s2 = inst.s.select_columns(&[0, 2]).unwrap();
        let best2 = feasible_grid_optimum(&s2, &inst.reference, &grid, Objective::Mean);
        let slack2 = mean_cell_slack(&s2, h) + 1e-12;
        for variant in [
            PenaltyVariant::DiscontinuousG,
            PenaltyVariant::DiscontinuousH,
            PenaltyVariant::ProjectiveG,
            PenaltyVariant::ProjectiveHAnalytic,
        ] {
            let spec = PenaltySpec::new(variant).with_anchor(vec![0.0, 1.0]).with_offset(2.0);
            let f = PenalizedObjective::new(
                s2.clone(),
                inst.reference.clone(),
                FeasibleBox::long_only(2),
                Objective::Mean,
                &spec,
            )
            .map_err(|e| e.to_string())?;
            check_exactness(&f, &grid, best2, slack2)
                .map_err(|e| format!("riskfree instance {instance}, {variant:?}: {e}"))?;
            checked += 1;
        }
    }
    Ok(checked)
}
