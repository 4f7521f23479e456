use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{self, StopReason};
use crate::distribution::{Objective, ScenarioMatrix, SortedReturns, StepCdf};
use crate::dominance::{cdf_residual, quantile_residual, FeasibleBox, ReferenceProfile};
use crate::error::{Error, Result};
use crate::harness::config::{Problem, RunConfig, SolverMethod};
use crate::penalty::{PenalizedObjective, PenaltyVariant};
use crate::smoother::{derive_seed, minimize_within, Bounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub level: f64,
    pub mean: f64,
    pub var: f64,
    /// Upper-tail average `AVaR(level, 1)`.
    pub avar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl From<&StepCdf> for Curve {
    fn from(c: &StepCdf) -> Self {
        Self {
            breakpoints: c.breakpoints().to_vec(),
            levels: c.levels().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurves {
    pub portfolio: Curve,
    pub reference: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    pub objective: Objective,
    pub objective_value: f64,
    pub penalized_value: f64,
    pub indicators: Indicators,
    pub residual_g: f64,
    pub residual_h: f64,
    /// `1 - Σx`.
    pub budget_slack: f64,
    /// `max(c - x)`; nonpositive inside the bounds.
    pub lower_residual: f64,
    pub feasible: bool,
    pub penalty: PenaltyVariant,
    pub offset: f64,
    pub method: SolverMethod,
    pub restarts: usize,
    pub evaluations: u64,
    pub budget_exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub profile: ProfileCurves,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Residuals and box membership of one portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub objective_value: f64,
    pub residual_g: f64,
    pub residual_h: f64,
    pub budget_slack: f64,
    pub lower_residual: f64,
    pub feasible: bool,
}

pub fn assess(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    bounds: &FeasibleBox,
    objective: Objective,
    check_quantiles: bool,
) -> Result<Assessment> {
    let r = SortedReturns::of_portfolio(s, x)?;
    let residual_g = cdf_residual(&r, reference);
    let residual_h = quantile_residual(&r, reference);
    let feasible =
        residual_g <= 0.0 && (!check_quantiles || residual_h <= 0.0) && bounds.contains(x);
    Ok(Assessment {
        objective_value: objective.evaluate(&r),
        residual_g,
        residual_h,
        budget_slack: -bounds.budget_residual(x),
        lower_residual: bounds.lower_residual(x),
        feasible,
    })
}

impl Problem {
    pub fn assess(&self, x: &[f64]) -> Result<Assessment> {
        assess(
            &self.dataset.matrix,
            x,
            &self.reference,
            &self.bounds,
            self.objective,
            self.quantile_form,
        )
    }
}

struct Candidate {
    x: Vec<f64>,
    assessment: Assessment,
}

impl Candidate {
    /// Feasible beats infeasible; then larger objective; then smaller residual.
    fn better_than(&self, other: &Candidate) -> bool {
        let (a, b) = (&self.assessment, &other.assessment);
        match (a.feasible, b.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => a.objective_value > b.objective_value,
            (false, false) => a.residual_g < b.residual_g,
        }
    }
}

struct RestartOutcome {
    best: Candidate,
    evaluations: u64,
    exhausted: bool,
}

fn best_of(problem: &Problem, f: &PenalizedObjective, raw: impl Iterator<Item = Vec<f64>>) -> Result<Candidate> {
    let mut best: Option<Candidate> = None;
    for x in raw {
        let y = f.recover(&x);
        let c = Candidate {
            assessment: problem.assess(&y)?,
            x: y,
        };
        if best.as_ref().is_none_or(|b| c.better_than(b)) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::Config("solver produced no candidates".into()))
}

fn solve_restart(
    config: &RunConfig,
    problem: &Problem,
    f: &PenalizedObjective,
    restart: usize,
) -> Result<RestartOutcome> {
    let seed = derive_seed(config.seed, &[restart as u64]);
    let (lower, upper) = problem.root_box();
    let negated = |x: &[f64]| -f.value(x);
    let solver = &config.solver;
    match solver.method {
        SolverMethod::Bnb => {
            let mut cfg = solver.bnb.clone();
            cfg.smoother = solver.smoother.clone();
            cfg.seed = seed;
            cfg.threads = None;
            if solver.max_evaluations.is_some() {
                cfg.max_evaluations = solver.max_evaluations;
            }
            let res = bnb::solve(&lower, &upper, &negated, &cfg)?;
            let points = std::iter::once(res.x_best.clone())
                .chain(res.partition.iter().map(|b| b.incumbent.clone()));
            Ok(RestartOutcome {
                best: best_of(problem, f, points)?,
                evaluations: res.evaluations,
                exhausted: res.stop_reason == StopReason::BudgetExhausted,
            })
        }
        SolverMethod::Restarts => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start: Vec<f64> = lower
                .iter()
                .zip(&upper)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect();
            let mut cfg = solver.smoother.clone();
            cfg.seed = rng.random();
            let budget = cfg.evaluation_budget() as u64;
            if solver.max_evaluations.is_some_and(|m| m < budget) {
                return Ok(RestartOutcome {
                    best: best_of(problem, f, std::iter::once(start))?,
                    evaluations: 1,
                    exhausted: true,
                });
            }
            let bounds = Bounds {
                lower: &lower,
                upper: &upper,
            };
            let res = minimize_within(&negated, &start, &cfg, Some(bounds))?;
            let points = std::iter::once(res.x_best).chain(std::iter::once(start));
            Ok(RestartOutcome {
                best: best_of(problem, f, points)?,
                evaluations: res.evaluations as u64,
                exhausted: false,
            })
        }
    }
}

/// Solve a configured problem and write the requested outputs.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let started = Instant::now();
    let problem = config.problem()?;
    let f = problem.penalized()?;
    let restarts = config.solver.restarts.max(1);
    let work = || -> Vec<Result<RestartOutcome>> {
        (0..restarts)
            .into_par_iter()
            .map(|k| solve_restart(config, &problem, &f, k))
            .collect()
    };
    let outcomes = match config.solver.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut evaluations = 0;
    let mut exhausted = false;
    let mut best: Option<Candidate> = None;
    for outcome in outcomes {
        let outcome = outcome?;
        evaluations += outcome.evaluations;
        exhausted |= outcome.exhausted;
        if best.as_ref().is_none_or(|b| outcome.best.better_than(b)) {
            best = Some(outcome.best);
        }
    }
    let best = best.expect("at least one restart");
    let report = build_report(config, &problem, &f, best.x, evaluations, exhausted)?;
    let report = RunReport {
        wall_time_s: config
            .output
            .include_timing
            .then(|| started.elapsed().as_secs_f64()),
        ..report
    };
    info!(
        "{}: objective {:.6}, feasible {}, {} evaluations",
        report.name, report.objective_value, report.feasible, report.evaluations
    );
    if let Some(path) = &config.output.report {
        write_atomic(path, report.to_json()?.as_bytes())?;
    }
    if let Some(path) = &config.output.profile {
        export_profile(&problem.dataset.matrix, &report.weights, &problem.reference, path)?;
    }
    Ok(report)
}

fn build_report(
    config: &RunConfig,
    problem: &Problem,
    f: &PenalizedObjective,
    weights: Vec<f64>,
    evaluations: u64,
    budget_exhausted: bool,
) -> Result<RunReport> {
    let s = &problem.dataset.matrix;
    let a = problem.assess(&weights)?;
    // Feasibility is only claimed after an independent re-check.
    let r = SortedReturns::of_portfolio(s, &weights)?;
    let feasible = a.feasible
        && cdf_residual(&r, &problem.reference) <= 0.0
        && (!problem.quantile_form || quantile_residual(&r, &problem.reference) <= 0.0);
    let level = config.indicators.level;
    Ok(RunReport {
        name: config.name.clone(),
        seed: config.seed,
        assets: s.asset_labels().to_vec(),
        objective: problem.objective,
        objective_value: a.objective_value,
        penalized_value: f.value(&weights),
        indicators: Indicators {
            level,
            mean: Objective::Mean.evaluate(&r),
            var: Objective::Var { level }.evaluate(&r),
            avar: Objective::avar_upper(level).evaluate(&r),
        },
        residual_g: a.residual_g,
        residual_h: a.residual_h,
        budget_slack: a.budget_slack,
        lower_residual: a.lower_residual,
        feasible,
        penalty: problem.spec.variant,
        offset: f.offset(),
        method: config.solver.method,
        restarts: config.solver.restarts.max(1),
        evaluations,
        budget_exhausted,
        wall_time_s: None,
        profile: ProfileCurves {
            portfolio: Curve::from(&r.to_cdf()),
            reference: Curve::from(problem.reference.cdf()),
        },
        weights,
    })
}

/// Rows `(t, F_x(t), F_ref(t))` that draw both step functions exactly: each
/// breakpoint appears at its pre-jump value and again just after the jump.
pub fn profile_rows(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
) -> Result<Vec<(f64, f64, f64)>> {
    let portfolio = SortedReturns::of_portfolio(s, x)?.to_cdf();
    let reference = reference.cdf();
    let mut ts: Vec<f64> = portfolio
        .breakpoints()
        .iter()
        .chain(reference.breakpoints())
        .copied()
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let lo = ts[0];
    let hi = ts[ts.len() - 1];
    let pad = 0.05 * (hi - lo).max(0.01);
    let mut rows = Vec::with_capacity(2 * ts.len() + 2);
    let mut push = |t: f64| rows.push((t, portfolio.value(t), reference.value(t)));
    push(lo - pad);
    for &t in &ts {
        push(t);
        push(t + 1e-9 * t.abs().max(1.0));
    }
    push(hi + pad);
    Ok(rows)
}

pub fn profile_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("t,cdf_portfolio,cdf_reference\n");
    for (t, a, b) in rows {
        out.push_str(&format!("{t},{a},{b}\n"));
    }
    out
}

pub fn export_profile(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    path: &Path,
) -> Result<()> {
    let rows = profile_rows(s, x, reference)?;
    write_atomic(path, profile_csv(&rows).as_bytes())
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appendix_pair() -> ScenarioMatrix {
        crate::harness::dataset::appendix()
            .matrix
            .select_columns(&[0, 9])
            .unwrap()
    }

    #[test]
    fn bond_profile_is_single_step() {
        let s = appendix_pair();
        let reference = ReferenceProfile::from_steps(&[(0.1, 1.0)]).unwrap();
        let rows = profile_rows(&s, &[0.0, 1.0], &reference).unwrap();
        for &(t, fp, _) in &rows {
            let expected = if t > 0.125 { 1.0 } else { 0.0 };
            assert_eq!(fp, expected, "t={t}");
        }
        assert!(rows.iter().any(|r| r.0 == 0.125 && r.1 == 0.0));
    }

    #[test]
    fn self_reference_coincides_at_jumps() {
        let s = appendix_pair();
        let x = [0.4, 0.6];
        let reference = ReferenceProfile::from_portfolio(&s, &x, Default::default()).unwrap();
        for (_, fp, fr) in profile_rows(&s, &x, &reference).unwrap() {
            assert_eq!(fp, fr);
        }
    }

    #[test]
    fn csv_header_exact() {
        let text = profile_csv(&[(0.5, 0.0, 1.0)]);
        assert_eq!(text, "t,cdf_portfolio,cdf_reference\n0.5,0,1\n");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
