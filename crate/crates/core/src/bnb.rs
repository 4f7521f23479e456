//! Branch and bound over weight boxes with the smoother as local search.
//!
//! Every active box receives a fresh random start each iteration. When the
//! new local result differs from the box incumbent by at least `epsilon` in
//! value or `delta` in position, the box is cut between the two points along
//! the coordinate where they differ most. Otherwise the box keeps the better
//! point and ages; boxes that stay unchanged for `stale_limit` iterations are
//! retired. Minimization throughout.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoother::{derive_seed, minimize_within, Bounds, Direction, SmootherConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnbConfig {
    /// Value difference that triggers a split.
    pub epsilon: f64,
    /// Point distance that triggers a split.
    pub delta: f64,
    pub max_iterations: usize,
    /// Iterations run before the progress test may stop the search.
    pub min_iterations: usize,
    pub progress_tol: f64,
    pub max_boxes: usize,
    pub stale_limit: usize,
    /// Stop with a budget flag once this many evaluations have been spent.
    pub max_evaluations: Option<u64>,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Scale the smoother's first radius by the widest side of each box.
    pub relative_theta: bool,
    #[serde(skip)]
    pub smoother: SmootherConfig,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            delta: 0.05,
            max_iterations: 12,
            min_iterations: 3,
            progress_tol: 1e-6,
            max_boxes: 32,
            stale_limit: 3,
            max_evaluations: None,
            seed: 0,
            threads: None,
            relative_theta: true,
            smoother: SmootherConfig {
                stages: 36,
                ..SmootherConfig::default()
            },
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("delta", "must be positive"));
        }
        if !(self.progress_tol >= 0.0) {
            return Err(Error::param("progress_tol", "must be nonnegative"));
        }
        if self.max_boxes == 0 {
            return Err(Error::param("max_boxes", "must be at least 1"));
        }
        if self.stale_limit == 0 {
            return Err(Error::param("stale_limit", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be at least 1"));
        }
        if self.smoother.direction != Direction::Minimize {
            return Err(Error::param("smoother.direction", "branch and bound minimizes"));
        }
        self.smoother.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxStatus {
    Active,
    /// Set aside under box-count pressure.
    Frozen,
    /// Dropped after staying unchanged for too long.
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub id: u64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub incumbent: Vec<f64>,
    pub value: f64,
    pub stale_count: usize,
    pub created: usize,
    pub status: BoxStatus,
}

impl SearchBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    fn widest_side(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_value: f64,
    pub active: usize,
    pub frozen: usize,
    pub retired: usize,
    pub splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbState {
    pub boxes: Vec<SearchBox>,
    pub iteration: usize,
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub evaluations: u64,
    pub history: Vec<IterationRecord>,
    next_id: u64,
}

impl BnbState {
    pub fn active(&self) -> impl Iterator<Item = &SearchBox> {
        self.boxes.iter().filter(|b| b.status == BoxStatus::Active)
    }

    fn count(&self, status: BoxStatus) -> usize {
        self.boxes.iter().filter(|b| b.status == status).count()
    }

    fn record(&mut self, splits: usize) {
        self.history.push(IterationRecord {
            iteration: self.iteration,
            best_value: self.best_value,
            active: self.count(BoxStatus::Active),
            frozen: self.count(BoxStatus::Frozen),
            retired: self.count(BoxStatus::Retired),
            splits,
        });
    }

    fn refresh_best(&mut self) {
        for b in &self.boxes {
            if b.value < self.best_value {
                self.best_value = b.value;
                self.best_x.clone_from(&b.incumbent);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    NoActiveBoxes,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbResult {
    pub x_best: Vec<f64>,
    pub value_best: f64,
    pub evaluations: u64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub history: Vec<IterationRecord>,
    pub partition: Vec<SearchBox>,
}

struct LocalOutcome {
    x: Vec<f64>,
    value: f64,
    evaluations: u64,
}

fn local_search<F>(f: &F, b: &SearchBox, cfg: &BnbConfig, iteration: usize) -> Result<LocalOutcome>
where
    F: Fn(&[f64]) -> f64,
{
    let seed = derive_seed(cfg.seed, &[iteration as u64, b.id]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = b
        .lower
        .iter()
        .zip(&b.upper)
        .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
        .collect();
    let start_value = f(&start);
    let mut smoother = cfg.smoother.clone();
    smoother.seed = rng.random();
    if cfg.relative_theta {
        smoother.theta1 *= b.widest_side().max(f64::EPSILON);
    }
    let bounds = Bounds {
        lower: &b.lower,
        upper: &b.upper,
    };
    let evaluations = smoother.evaluation_budget() as u64 + 1;
    let run = minimize_within(f, &start, &smoother, Some(bounds));
    let outcome = match run {
        Ok(res) if !start_value.is_finite() || res.value_best <= start_value => LocalOutcome {
            x: res.x_best,
            value: res.value_best,
            evaluations,
        },
        Ok(_) => LocalOutcome {
            x: start,
            value: start_value,
            evaluations,
        },
        Err(e) if start_value.is_finite() => {
            debug!("local search in box {} failed: {e}; keeping the start", b.id);
            LocalOutcome {
                x: start,
                value: start_value,
                evaluations,
            }
        }
        Err(e) => return Err(e),
    };
    Ok(outcome)
}

fn run_in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::param("threads", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

fn check_root(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(Error::DimensionMismatch {
            expected: lower.len(),
            got: upper.len(),
        });
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::param("root", "bounds must be finite with lower ≤ upper"));
    }
    Ok(())
}

/// Partition `{root}` with one local search from a random start.
pub fn initialize<F>(lower: &[f64], upper: &[f64], f: &F, cfg: &BnbConfig) -> Result<BnbState>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    check_root(lower, upper)?;
    let mut root = SearchBox {
        id: 0,
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        incumbent: Vec::new(),
        value: f64::INFINITY,
        stale_count: 0,
        created: 0,
        status: BoxStatus::Active,
    };
    let outcome = run_in_pool(cfg.threads, || local_search(f, &root, cfg, 0))??;
    root.incumbent = outcome.x;
    root.value = outcome.value;
    let mut state = BnbState {
        best_x: root.incumbent.clone(),
        best_value: root.value,
        boxes: vec![root],
        iteration: 0,
        evaluations: outcome.evaluations,
        history: Vec::new(),
        next_id: 1,
    };
    state.record(0);
    Ok(state)
}

fn split(b: &SearchBox, other_x: &[f64], other_value: f64, ids: (u64, u64), iteration: usize) -> Option<[SearchBox; 2]> {
    let (j, gap) = b
        .incumbent
        .iter()
        .zip(other_x)
        .map(|(u, v)| (u - v).abs())
        .enumerate()
        .fold((0, 0.0), |acc, (j, d)| if d > acc.1 { (j, d) } else { acc });
    if gap == 0.0 {
        return None;
    }
    let cut = 0.5 * (b.incumbent[j] + other_x[j]);
    if !(cut > b.lower[j] && cut < b.upper[j]) {
        return None;
    }
    let mut low = b.clone();
    let mut high = b.clone();
    low.upper[j] = cut;
    high.lower[j] = cut;
    let (low_point, low_value, high_point, high_value) = if b.incumbent[j] < other_x[j] {
        (b.incumbent.clone(), b.value, other_x.to_vec(), other_value)
    } else {
        (other_x.to_vec(), other_value, b.incumbent.clone(), b.value)
    };
    for (child, id, x, v) in [
        (&mut low, ids.0, low_point, low_value),
        (&mut high, ids.1, high_point, high_value),
    ] {
        child.id = id;
        child.incumbent = x;
        child.value = v;
        child.stale_count = 0;
        child.created = iteration;
        child.status = BoxStatus::Active;
    }
    Some([low, high])
}

/// One sweep over the active boxes.
pub fn iterate<F>(mut state: BnbState, f: &F, cfg: &BnbConfig) -> Result<BnbState>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let iteration = state.iteration + 1;
    let mut active: Vec<&SearchBox> = state.active().collect();
    active.sort_by_key(|b| b.id);
    if active.is_empty() {
        return Err(Error::param("partition", "no active boxes left"));
    }
    let outcomes: Vec<(u64, Result<LocalOutcome>)> = run_in_pool(cfg.threads, || {
        active
            .par_iter()
            .map(|b| (b.id, local_search(f, b, cfg, iteration)))
            .collect()
    })?;

    let mut next: Vec<SearchBox> = Vec::with_capacity(state.boxes.len() + outcomes.len());
    let mut outcomes = outcomes.into_iter();
    let mut splits = 0;
    let mut boxes = std::mem::take(&mut state.boxes);
    boxes.sort_by_key(|b| b.id);
    for b in boxes {
        if b.status != BoxStatus::Active {
            next.push(b);
            continue;
        }
        let (id, outcome) = outcomes.next().expect("one outcome per active box");
        debug_assert_eq!(id, b.id);
        let outcome = outcome?;
        state.evaluations += outcome.evaluations;
        let value_gap = (b.value - outcome.value).abs();
        let distance = b
            .incumbent
            .iter()
            .zip(&outcome.x)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        if value_gap >= cfg.epsilon || distance >= cfg.delta {
            let ids = (state.next_id, state.next_id + 1);
            if let Some(children) = split(&b, &outcome.x, outcome.value, ids, iteration) {
                state.next_id += 2;
                splits += 1;
                next.extend(children);
                continue;
            }
        }
        let mut b = b;
        if outcome.value < b.value {
            b.incumbent = outcome.x;
            b.value = outcome.value;
        }
        b.stale_count += 1;
        if b.stale_count >= cfg.stale_limit {
            info!(
                "retiring box {} after {} unchanged iterations (value {:.6})",
                b.id, b.stale_count, b.value
            );
            b.status = BoxStatus::Retired;
        }
        next.push(b);
    }

    // Freeze the worst active boxes beyond the budget; ties go to the younger box.
    let mut ranked: Vec<usize> = (0..next.len())
        .filter(|&i| next[i].status == BoxStatus::Active)
        .collect();
    if ranked.len() > cfg.max_boxes {
        ranked.sort_by(|&a, &b| {
            next[a]
                .value
                .total_cmp(&next[b].value)
                .then(next[a].created.cmp(&next[b].created))
                .then(next[a].id.cmp(&next[b].id))
        });
        for &i in &ranked[cfg.max_boxes..] {
            debug!("freezing box {} (value {:.6})", next[i].id, next[i].value);
            next[i].status = BoxStatus::Frozen;
        }
    }

    state.boxes = next;
    state.iteration = iteration;
    state.refresh_best();
    state.record(splits);
    Ok(state)
}

/// Iterate until progress stalls, the iteration limit, or the evaluation budget.
pub fn solve<F>(lower: &[f64], upper: &[f64], f: &F, cfg: &BnbConfig) -> Result<BnbResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = initialize(lower, upper, f, cfg)?;
    let stop_reason = loop {
        if let Some(limit) = cfg.max_evaluations {
            if state.evaluations >= limit {
                break StopReason::BudgetExhausted;
            }
        }
        if state.iteration >= cfg.max_iterations {
            break StopReason::MaxIterations;
        }
        if state.active().next().is_none() {
            break StopReason::NoActiveBoxes;
        }
        let previous = state.best_value;
        state = iterate(state, f, cfg)?;
        if state.iteration >= cfg.min_iterations && previous - state.best_value < cfg.progress_tol {
            break StopReason::Converged;
        }
    };
    info!(
        "branch and bound stopped after {} iterations ({stop_reason:?}), best {:.6}",
        state.iteration, state.best_value
    );
    Ok(BnbResult {
        x_best: state.best_x,
        value_best: state.best_value,
        evaluations: state.evaluations,
        iterations: state.iteration,
        stop_reason,
        history: state.history,
        partition: state.boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BnbConfig {
        BnbConfig {
            seed: 17,
            smoother: SmootherConfig {
                stages: 16,
                ..SmootherConfig::default()
            },
            ..BnbConfig::default()
        }
    }

    #[test]
    fn initialize_bookkeeping() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let state = initialize(&[0.0; 3], &[1.0; 3], &f, &quick()).unwrap();
        assert_eq!(state.boxes.len(), 1);
        assert!(state.best_value.is_finite());
        let again = initialize(&[0.0; 3], &[1.0; 3], &f, &quick()).unwrap();
        assert_eq!(state, again);
    }

    #[test]
    fn quadratic_sanity() {
        let target = [0.3, -0.6];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let res = solve(&[-1.0, -1.0], &[1.0, 1.0], &f, &BnbConfig { seed: 2, ..BnbConfig::default() }).unwrap();
        for (x, t) in res.x_best.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3, "{:?}", res.x_best);
        }
    }

    #[test]
    fn incumbent_never_worse_than_start() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let cfg = quick();
        let state = initialize(&[-1.0; 2], &[1.0; 2], &f, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0, 0]));
        let start: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect();
        assert!(state.best_value <= f(&start));
    }

    fn bimodal(x: f64) -> f64 {
        if (0.6..=0.7).contains(&x) {
            -1.0
        } else if (0.1..=0.4).contains(&x) {
            -0.5
        } else {
            0.0
        }
    }

    #[test]
    fn bimodal_step_global_basin() {
        let f = |x: &[f64]| bimodal(x[0]);
        let cfg = quick();
        let mut state = initialize(&[0.0], &[1.0], &f, &cfg).unwrap();
        for _ in 0..5 {
            if state.active().next().is_none() {
                break;
            }
            state = iterate(state, &f, &cfg).unwrap();
        }
        assert_eq!(state.best_value, -1.0, "{:?}", state.best_x);
    }

    #[test]
    fn split_separates_points() {
        let b = SearchBox {
            id: 0,
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            incumbent: vec![0.2, 0.5],
            value: 1.0,
            stale_count: 0,
            created: 0,
            status: BoxStatus::Active,
        };
        let [lo, hi] = split(&b, &[0.9, 0.4], 0.5, (1, 2), 1).unwrap();
        assert_eq!(lo.upper[0], 0.55);
        assert_eq!(hi.lower[0], 0.55);
        assert!(lo.contains(&lo.incumbent) && hi.contains(&hi.incumbent));
        assert_eq!(lo.incumbent, vec![0.2, 0.5]);
        assert_eq!(hi.incumbent, vec![0.9, 0.4]);
        assert!(split(&b, &[0.2, 0.5], 0.5, (1, 2), 1).is_none());
    }

    #[test]
    fn rejects_bad_root_and_config() {
        let f = |_: &[f64]| 0.0;
        assert!(initialize(&[1.0], &[0.0], &f, &quick()).is_err());
        assert!(initialize(&[0.0], &[1.0], &f, &BnbConfig { epsilon: 0.0, ..quick() }).is_err());
    }
}
