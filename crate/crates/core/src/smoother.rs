//! Successive stochastic smoothing for discontinuous objectives.
//!
//! The objective is replaced by its Gaussian average
//! `F_θ(x) = E F(x + θη)`, whose gradient is sampled with
//! `η/(2θ) [F(x+θη) - F(x-θη)]`. A sequence of stages with shrinking `θ`
//! runs normalized stochastic gradient steps and reports the trajectory
//! average of each stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    /// Smoothing radius of the first stage.
    pub theta1: f64,
    pub stages: usize,
    /// Steps per stage; `None` means `ceil(sqrt(stages))`.
    pub inner_steps: Option<usize>,
    /// Step length is `step_size * θ_ν` within stage `ν`.
    pub step_size: f64,
    /// Coefficient of the inter-stage extrapolation.
    pub extrapolation: f64,
    pub normalize_directions: bool,
    pub seed: u64,
    pub direction: Direction,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            theta1: 0.5,
            stages: 100,
            inner_steps: None,
            step_size: 0.1,
            extrapolation: 1.0,
            normalize_directions: true,
            seed: 0,
            direction: Direction::Minimize,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta1 > 0.0 && self.theta1.is_finite()) {
            return Err(Error::param("theta1", "must be positive and finite"));
        }
        if self.stages == 0 {
            return Err(Error::param("stages", "must be at least 1"));
        }
        if self.inner_steps == Some(0) {
            return Err(Error::param("inner_steps", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param("step_size", "must be positive and finite"));
        }
        if !self.extrapolation.is_finite() {
            return Err(Error::param("extrapolation", "must be finite"));
        }
        Ok(())
    }

    pub fn inner(&self) -> usize {
        self.inner_steps
            .unwrap_or_else(|| (self.stages as f64).sqrt().ceil() as usize)
    }

    /// Radius of stage `stage` (1-based).
    pub fn theta(&self, stage: usize) -> f64 {
        let n = self.stages as f64;
        let theta = self.theta1 * (1.0 - (stage as f64 - 1.0) / n);
        theta.max(self.theta1 / n)
    }

    /// Objective evaluations made by one call to [`minimize`].
    pub fn evaluation_budget(&self) -> usize {
        2 * self.stages * self.inner() + 1
    }
}

/// Deterministic seed for a substream identified by `parts`.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts
        .iter()
        .fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn checked(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: x.to_vec() })
    }
}

fn normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn offset(x: &[f64], eta: &[f64], scale: f64) -> Vec<f64> {
    x.iter().zip(eta).map(|(a, e)| a + scale * e).collect()
}

/// Two-point estimate of the gradient of the Gaussian average at radius `theta`.
pub fn gradient_sample<F, R>(f: &F, x: &[f64], theta: f64, rng: &mut R) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if !(theta > 0.0) {
        return Err(Error::param("theta", "must be positive"));
    }
    let eta = normal_vector(x.len(), rng);
    let plus = checked(f, &offset(x, &eta, theta))?;
    let minus = checked(f, &offset(x, &eta, -theta))?;
    let scale = (plus - minus) / (2.0 * theta);
    Ok(eta.iter().map(|e| e * scale).collect())
}

/// Single-difference estimate `η/θ [F(x+θη) - F(x)]`.
pub fn one_sided_gradient_sample<F, R>(
    f: &F,
    x: &[f64],
    theta: f64,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if !(theta > 0.0) {
        return Err(Error::param("theta", "must be positive"));
    }
    let eta = normal_vector(x.len(), rng);
    let plus = checked(f, &offset(x, &eta, theta))?;
    let base = checked(f, x)?;
    let scale = (plus - base) / theta;
    Ok(eta.iter().map(|e| e * scale).collect())
}

/// Running blend of gradient samples, `z ← z - λ(z - ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTracker {
    z: Vec<f64>,
    k: usize,
}

impl GradientTracker {
    pub fn new(n: usize) -> Self {
        Self { z: vec![0.0; n], k: 0 }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    pub fn norm(&self) -> f64 {
        self.z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn update(&mut self, sample: &[f64], lambda: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param("lambda", "must lie in [0, 1]"));
        }
        if sample.len() != self.z.len() {
            return Err(Error::DimensionMismatch {
                expected: self.z.len(),
                got: sample.len(),
            });
        }
        for (z, s) in self.z.iter_mut().zip(sample) {
            *z -= lambda * (*z - s);
        }
        self.k += 1;
        Ok(())
    }

    /// Update with `λ_k = 1/(k+1)`, giving the running arithmetic mean.
    pub fn update_harmonic(&mut self, sample: &[f64]) -> Result<()> {
        let lambda = 1.0 / (self.k as f64 + 1.0);
        self.update(sample, lambda)
    }
}

pub fn track_gradient(
    mut tracker: GradientTracker,
    sample: &[f64],
    lambda: f64,
) -> Result<GradientTracker> {
    tracker.update(sample, lambda)?;
    Ok(tracker)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub theta: f64,
    pub average: Vec<f64>,
    /// Norm of the harmonic gradient average over the stage.
    pub tracker_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub x_best: Vec<f64>,
    /// Objective at `x_best`, in the caller's orientation.
    pub value_best: f64,
    pub evaluations: usize,
    pub stage_trace: Vec<StageRecord>,
}

/// Axis-aligned bounds used to clip iterates.
#[derive(Debug, Clone, Copy)]
pub struct Bounds<'a> {
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl Bounds<'_> {
    fn clip(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

pub fn minimize<F>(f: &F, x_start: &[f64], cfg: &SmootherConfig) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64,
{
    minimize_within(f, x_start, cfg, None)
}

/// Run the staged method, clipping iterates to `bounds` when given.
pub fn minimize_within<F>(
    f: &F,
    x_start: &[f64],
    cfg: &SmootherConfig,
    bounds: Option<Bounds<'_>>,
) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if let Some(b) = bounds {
        if b.lower.len() != x_start.len() || b.upper.len() != x_start.len() {
            return Err(Error::DimensionMismatch {
                expected: x_start.len(),
                got: b.lower.len().min(b.upper.len()),
            });
        }
    }
    if x_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            point: x_start.to_vec(),
        });
    }
    let sign = match cfg.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let g = |x: &[f64]| sign * f(x);
    let n = x_start.len();
    let inner = cfg.inner();
    let clip = |x: &mut [f64]| {
        if let Some(b) = bounds {
            b.clip(x)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x_start.to_vec();
    clip(&mut x);
    let mut evaluations = 0;
    let mut trace: Vec<StageRecord> = Vec::with_capacity(cfg.stages);

    for stage in 1..=cfg.stages {
        let theta = cfg.theta(stage);
        match trace.len() {
            0 => {}
            1 => x.clone_from(&trace[0].average),
            len => {
                let last = &trace[len - 1].average;
                let before = &trace[len - 2].average;
                x = last
                    .iter()
                    .zip(before)
                    .map(|(a, b)| a + cfg.extrapolation * (a - b))
                    .collect();
                clip(&mut x);
            }
        }
        rng.set_stream(stage as u64);
        let mut tracker = GradientTracker::new(n);
        let mut sum = vec![0.0; n];
        for _ in 0..inner {
            let xi = gradient_sample(&g, &x, theta, &mut rng)?;
            evaluations += 2;
            tracker.update_harmonic(&xi)?;
            let scale = if cfg.normalize_directions {
                let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
                1.0 / norm.max(NORM_FLOOR)
            } else {
                1.0
            };
            let step = cfg.step_size * theta * scale;
            for (v, d) in x.iter_mut().zip(&xi) {
                *v -= step * d;
            }
            clip(&mut x);
            for (s, v) in sum.iter_mut().zip(&x) {
                *s += v;
            }
        }
        // Rounding in the mean can land an ulp outside the bounds.
        let mut average: Vec<f64> = sum.iter().map(|s| s / inner as f64).collect();
        clip(&mut average);
        trace.push(StageRecord {
            theta,
            average,
            tracker_norm: tracker.norm(),
        });
    }

    let x_best = trace.last().expect("at least one stage").average.clone();
    let value_best = checked(f, &x_best)?;
    evaluations += 1;
    Ok(OptimizeResult {
        x_best,
        value_best,
        evaluations,
        stage_trace: trace,
    })
}

/// Gaussian density with standard deviation `theta` in `z.len()` dimensions.
pub fn gaussian_kernel(z: &[f64], theta: f64) -> f64 {
    let n = z.len() as f64;
    let sq: f64 = z.iter().map(|v| v * v).sum();
    (-(sq) / (2.0 * theta * theta)).exp() / (theta * (2.0 * std::f64::consts::PI).sqrt()).powf(n)
}

/// Gaussian average of a 1-D function by midpoint quadrature over ±8θ.
pub fn smoothed_value_1d<F: Fn(f64) -> f64>(f: &F, x: f64, theta: f64, nodes: usize) -> f64 {
    let half = 8.0 * theta;
    let h = 2.0 * half / nodes as f64;
    (0..nodes)
        .map(|i| {
            let z = -half + (i as f64 + 0.5) * h;
            f(x - z) * gaussian_kernel(&[z], theta) * h
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn constant_function_gives_zero() {
        let f = |_: &[f64]| 3.5;
        let mut r = rng(1);
        for _ in 0..10 {
            assert_eq!(gradient_sample(&f, &[0.2, -1.0], 0.3, &mut r).unwrap(), vec![0.0, 0.0]);
            assert_eq!(
                one_sided_gradient_sample(&f, &[0.2, -1.0], 0.3, &mut r).unwrap(),
                vec![0.0, 0.0]
            );
        }
    }

    fn mean_and_stderr(samples: &[Vec<f64>], j: usize) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn linear_function_is_unbiased() {
        let a = [0.7, -1.3, 0.2];
        let f = |x: &[f64]| x.iter().zip(&a).map(|(u, v)| u * v).sum::<f64>();
        let mut r = rng(7);
        for one_sided in [false, true] {
            let samples: Vec<_> = (0..100_000)
                .map(|_| {
                    if one_sided {
                        one_sided_gradient_sample(&f, &[0.5, 0.5, 0.5], 0.2, &mut r).unwrap()
                    } else {
                        gradient_sample(&f, &[0.5, 0.5, 0.5], 0.2, &mut r).unwrap()
                    }
                })
                .collect();
            for (j, &aj) in a.iter().enumerate() {
                let (m, se) = mean_and_stderr(&samples, j);
                assert!((m - aj).abs() < 3.0 * se, "component {j}: {m} vs {aj} (se {se})");
            }
        }
    }

    #[test]
    fn step_gradient_matches_closed_form() {
        let theta = 0.5;
        let f = |x: &[f64]| if x[0] >= 0.0 { 1.0 } else { 0.0 };
        let expected = 1.0 / (theta * (2.0 * std::f64::consts::PI).sqrt());
        let mut r = rng(11);
        let draws = 1_000_000;
        let two: f64 = (0..draws)
            .map(|_| gradient_sample(&f, &[0.0], theta, &mut r).unwrap()[0])
            .sum::<f64>()
            / draws as f64;
        assert!((two / expected - 1.0).abs() < 0.01, "{two} vs {expected}");
        let one: f64 = (0..draws)
            .map(|_| one_sided_gradient_sample(&f, &[0.0], theta, &mut r).unwrap()[0])
            .sum::<f64>()
            / draws as f64;
        // single-difference samples have a larger spread
        assert!((one / expected - 1.0).abs() < 0.02, "{one} vs {expected}");
    }

    #[test]
    fn tracker_averages() {
        let t = GradientTracker::new(2);
        let t = track_gradient(t, &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(t.z(), &[1.0, 2.0]);
        let t = track_gradient(t, &[1.0, 2.0], 0.3).unwrap();
        assert_eq!(t.z(), &[1.0, 2.0]);

        let mut t = GradientTracker::new(1);
        let xs = [3.0, -1.0, 4.0, 1.0, -5.0];
        for (k, &v) in xs.iter().enumerate() {
            t.update_harmonic(&[v]).unwrap();
            let mean = xs[..=k].iter().sum::<f64>() / (k + 1) as f64;
            assert!((t.z()[0] - mean).abs() < 1e-12);
        }
        assert!(GradientTracker::new(1).update(&[1.0], 1.5).is_err());
    }

    #[test]
    fn tracker_converges_to_mean() {
        let g = [0.4, -0.2];
        let mut r = rng(3);
        let mut t = GradientTracker::new(2);
        let steps = 10_000;
        for _ in 0..steps {
            let s: Vec<f64> = g
                .iter()
                .map(|m| m + rng_normal(&mut r))
                .collect();
            t.update_harmonic(&s).unwrap();
        }
        let se = 1.0 / (steps as f64).sqrt();
        for (z, m) in t.z().iter().zip(&g) {
            assert!((z - m).abs() < 3.0 * se);
        }
    }

    fn rng_normal(r: &mut ChaCha8Rng) -> f64 {
        r.sample(StandardNormal)
    }

    #[test]
    fn quadratic_reaches_minimum() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let res = minimize(&f, &[1.0, 1.0], &SmootherConfig::default()).unwrap();
        assert!(res.value_best < 1e-2, "{}", res.value_best);
        assert_eq!(res.value_best, f(&res.x_best));
    }

    #[test]
    fn maximization_runs_on_negation() {
        let f = |x: &[f64]| -(x[0] - 0.3).powi(2);
        let cfg = SmootherConfig {
            direction: Direction::Maximize,
            ..SmootherConfig::default()
        };
        let res = minimize(&f, &[1.0], &cfg).unwrap();
        assert!((res.x_best[0] - 0.3).abs() < 0.05);
        assert_eq!(res.value_best, f(&res.x_best));
    }

    fn two_basin(x: f64) -> f64 {
        if (0.5..=2.5).contains(&x) {
            -1.0
        } else if (-1.5..=-0.5).contains(&x) {
            -0.5
        } else {
            0.0
        }
    }

    #[test]
    fn two_basin_step_finds_global_basin() {
        let f = |x: &[f64]| two_basin(x[0]);
        let hits = (0..100)
            .filter(|&seed| {
                let cfg = SmootherConfig {
                    theta1: 3.0,
                    seed,
                    ..SmootherConfig::default()
                };
                let res = minimize(&f, &[-1.0], &cfg).unwrap();
                res.value_best == -1.0
            })
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn evaluation_count_and_determinism() {
        let f = |x: &[f64]| (x[0] - 1.0).abs() + if x[1] > 0.0 { 1.0 } else { 0.0 };
        let cfg = SmootherConfig {
            stages: 17,
            seed: 99,
            ..SmootherConfig::default()
        };
        let a = minimize(&f, &[0.3, 0.4], &cfg).unwrap();
        let b = minimize(&f, &[0.3, 0.4], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evaluations, 2 * 17 * 5 + 1);
        assert_eq!(a.evaluations, cfg.evaluation_budget());
        assert_eq!(a.stage_trace.len(), 17);
        let c = minimize(&f, &[0.3, 0.4], &SmootherConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.x_best, c.x_best);
    }

    #[test]
    fn clipping_keeps_iterates_inside() {
        let f = |x: &[f64]| x[0] + x[1];
        let lower = [0.0, -0.5];
        let upper = [1.0, 0.5];
        let res = minimize_within(
            &f,
            &[0.5, 0.0],
            &SmootherConfig::default(),
            Some(Bounds {
                lower: &lower,
                upper: &upper,
            }),
        )
        .unwrap();
        for rec in &res.stage_trace {
            assert!(rec.average[0] >= 0.0 && rec.average[0] <= 1.0);
            assert!(rec.average[1] >= -0.5 && rec.average[1] <= 0.5);
        }
        assert!(res.value_best < -0.4);
    }

    #[test]
    fn non_finite_objective_reported() {
        let f = |x: &[f64]| if x[0] > 0.7 { f64::NAN } else { 0.0 };
        let err = minimize(&f, &[0.69], &SmootherConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn theta_schedule() {
        let cfg = SmootherConfig {
            theta1: 2.0,
            stages: 4,
            ..SmootherConfig::default()
        };
        let thetas: Vec<f64> = (1..=4).map(|k| cfg.theta(k)).collect();
        assert_eq!(thetas, vec![2.0, 1.5, 1.0, 0.5]);
        assert_eq!(cfg.inner(), 2);
        assert!(SmootherConfig { theta1: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(SmootherConfig { stages: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn kernel_integrates_to_one() {
        let theta = 0.7;
        let h = 0.01;
        let span = (8.0 * theta / h) as i64;
        let one_d: f64 = (-span..=span)
            .map(|i| gaussian_kernel(&[i as f64 * h], theta) * h)
            .sum();
        assert!((one_d - 1.0).abs() < 1e-9, "{one_d}");
        let h = 0.02;
        let span = (8.0 * theta / h) as i64;
        let mut two_d = 0.0;
        for i in -span..=span {
            for j in -span..=span {
                two_d += gaussian_kernel(&[i as f64 * h, j as f64 * h], theta) * h * h;
            }
        }
        assert!((two_d - 1.0).abs() < 1e-9, "{two_d}");
    }

    #[test]
    fn smoothed_step_matches_normal_cdf() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let step = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
        for &theta in &[0.1, 0.5, 2.0] {
            for &x in &[-0.3, 0.0, 0.2, 1.0] {
                let v = smoothed_value_1d(&step, x, theta, 20_000);
                assert!((v - normal.cdf(x / theta)).abs() < 1e-3, "θ={theta} x={x}");
            }
        }
    }

    #[test]
    fn smoothed_minimum_approaches_true_minimum() {
        // narrow well of depth 1 on [0, 0.1]
        let f = |x: f64| if (0.0..=0.1).contains(&x) { -1.0 } else { 0.0 };
        let grid: Vec<f64> = (0..=400).map(|i| -1.0 + i as f64 * 0.005).collect();
        let mut previous = f64::INFINITY;
        let mut theta = 0.4;
        for _ in 0..6 {
            let min = grid
                .iter()
                .map(|&x| smoothed_value_1d(&f, x, theta, 4000))
                .fold(f64::INFINITY, f64::min);
            assert!(min < previous, "θ={theta}: {min} !< {previous}");
            previous = min;
            theta /= 2.0;
        }
        assert!(previous < -0.99);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(5, &[2, 3]), derive_seed(5, &[2, 3]));
    }
}
