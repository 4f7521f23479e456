//! Empirical return distributions of portfolios.
//!
//! Every scenario carries probability `1/m`. The distribution function uses the
//! strict-below convention `F(t) = #{i : r_i < t} / m`, so it is continuous from
//! the left, and the quantile is its generalized inverse
//! `Q(α) = sup{t : F(t) ≤ α}`, continuous from the right and capped at the
//! largest return for `α = 1`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `m` equiprobable return scenarios over `n` assets, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    returns: Vec<f64>,
    m: usize,
    n: usize,
    asset_labels: Vec<String>,
}

impl ScenarioMatrix {
    pub fn new(rows: Vec<Vec<f64>>, asset_labels: Vec<String>) -> Result<Self> {
        let m = rows.len();
        let n = asset_labels.len();
        let mut returns = Vec::with_capacity(m * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidScenarios(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            returns.extend(row);
        }
        Self::from_row_major(m, n, returns, asset_labels)
    }

    pub fn from_row_major(
        m: usize,
        n: usize,
        returns: Vec<f64>,
        asset_labels: Vec<String>,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidScenarios(format!(
                "need at least one scenario and one asset (got {m}x{n})"
            )));
        }
        if returns.len() != m * n || asset_labels.len() != n {
            return Err(Error::InvalidScenarios(format!(
                "{} values and {} labels do not form a {m}x{n} matrix",
                returns.len(),
                asset_labels.len()
            )));
        }
        if let Some(k) = returns.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidScenarios(format!(
                "entry ({}, {}) is not finite",
                k / n,
                k % n
            )));
        }
        Ok(Self {
            returns,
            m,
            n,
            asset_labels,
        })
    }

    /// Number of scenarios `m`.
    pub fn scenarios(&self) -> usize {
        self.m
    }

    /// Number of assets `n`.
    pub fn assets(&self) -> usize {
        self.n
    }

    pub fn asset_labels(&self) -> &[String] {
        &self.asset_labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.returns[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.returns.chunks_exact(self.n)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|row| row[j]).collect()
    }

    /// Keeps the given zero-based columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidScenarios("empty column selection".into()));
        }
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.n) {
            return Err(Error::InvalidScenarios(format!(
                "column {bad} out of range (matrix has {} assets)",
                self.n
            )));
        }
        let mut returns = Vec::with_capacity(self.m * columns.len());
        for row in self.rows() {
            returns.extend(columns.iter().map(|&j| row[j]));
        }
        let labels = columns.iter().map(|&j| self.asset_labels[j].clone()).collect();
        Self::from_row_major(self.m, columns.len(), returns, labels)
    }

    /// Returns a copy where every entry of column `j` equals `value`.
    pub fn with_constant_column(&self, j: usize, value: f64) -> Result<Self> {
        if j >= self.n {
            return Err(Error::InvalidScenarios(format!("column {j} out of range")));
        }
        let mut out = self.clone();
        for i in 0..self.m {
            out.returns[i * self.n + j] = value;
        }
        Self::from_row_major(out.m, out.n, out.returns, out.asset_labels)
    }

    /// The common value of column `j` when every scenario agrees on it.
    pub fn constant_column(&self, j: usize) -> Option<f64> {
        let first = self.returns[j];
        self.rows().all(|row| row[j] == first).then_some(first)
    }

    /// Applies the same permutation to the scenario rows.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: order.len(),
            });
        }
        let mut returns = Vec::with_capacity(self.returns.len());
        for &i in order {
            returns.extend_from_slice(self.row(i));
        }
        Self::from_row_major(self.m, self.n, returns, self.asset_labels.clone())
    }
}

/// Asset weights. Membership in the admissible set is checked separately,
/// so arbitrary finite vectors are valid values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(pub Vec<f64>);

impl Weights {
    pub fn zeros(n: usize) -> Self {
        Weights(vec![0.0; n])
    }

    /// Unit weight on asset `j`.
    pub fn unit(n: usize, j: usize) -> Self {
        let mut w = vec![0.0; n];
        w[j] = 1.0;
        Weights(w)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Weights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Weights {
    fn from(v: Vec<f64>) -> Self {
        Weights(v)
    }
}

/// Per-scenario portfolio returns `r_i = ω_i · x`.
pub fn portfolio_returns(s: &ScenarioMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != s.n {
        return Err(Error::DimensionMismatch {
            expected: s.n,
            got: x.len(),
        });
    }
    Ok(s.rows()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect())
}

/// Largest `i` in `0..=m` with `i/m ≤ α`, computed with the same float
/// divisions used for CDF levels so both views agree bit for bit.
fn mass_index(alpha: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut i = ((alpha * mf).floor().max(0.0) as usize).min(m);
    while i < m && ((i + 1) as f64) / mf <= alpha {
        i += 1;
    }
    while i > 0 && (i as f64) / mf > alpha {
        i -= 1;
    }
    i
}

/// Sorted portfolio returns; the working representation behind every indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedReturns {
    sorted: Vec<f64>,
}

impl SortedReturns {
    pub fn new(mut returns: Vec<f64>) -> Self {
        assert!(!returns.is_empty(), "at least one return is required");
        returns.sort_by(f64::total_cmp);
        Self { sorted: returns }
    }

    pub fn of_portfolio(s: &ScenarioMatrix, x: &[f64]) -> Result<Self> {
        Ok(Self::new(portfolio_returns(s, x)?))
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sorted
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// Number of returns strictly below `t`.
    pub fn count_below(&self, t: f64) -> usize {
        self.sorted.partition_point(|&r| r < t)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.count_below(t) as f64 / self.len() as f64
    }

    pub fn quantile(&self, alpha: f64) -> f64 {
        let m = self.len();
        let i = mass_index(alpha, m);
        self.sorted[i.min(m - 1)]
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.len() as f64
    }

    /// `∫_a^b Q(α) dα`, exact for the step quantile.
    pub fn quantile_integral(&self, a: f64, b: f64) -> f64 {
        let mf = self.len() as f64;
        let mut acc = 0.0;
        for (i, &v) in self.sorted.iter().enumerate() {
            let lo = (i as f64 / mf).max(a);
            let hi = ((i + 1) as f64 / mf).min(b);
            if hi > lo {
                acc += v * (hi - lo);
            }
        }
        acc
    }

    pub fn to_cdf(&self) -> StepCdf {
        let mf = self.len() as f64;
        let mut breakpoints = Vec::new();
        let mut levels = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            let level = (i + 1) as f64 / mf;
            if breakpoints.last() == Some(&v) {
                *levels.last_mut().unwrap() = level;
            } else {
                breakpoints.push(v);
                levels.push(level);
            }
        }
        StepCdf {
            breakpoints,
            levels,
        }
    }

    pub fn to_quantile(&self) -> StepQuantile {
        self.to_cdf().to_quantile()
    }
}

/// Left-continuous step distribution function.
///
/// `levels[j]` is the mass at or below `breakpoints[j]`, so the value at `t`
/// is the level of the last breakpoint strictly below `t` (zero if none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCdf {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl StepCdf {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != levels.len() {
            return Err(Error::InvalidStepFunction(format!(
                "{} breakpoints and {} levels",
                breakpoints.len(),
                levels.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidStepFunction("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidStepFunction(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidStepFunction("levels must lie in [0, 1]".into()));
        }
        if levels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidStepFunction("levels must be nondecreasing".into()));
        }
        if *levels.last().unwrap() != 1.0 {
            return Err(Error::InvalidStepFunction("final level must equal 1".into()));
        }
        Ok(Self {
            breakpoints,
            levels,
        })
    }

    /// Builds a CDF from `(threshold, level)` pairs where `level` is the value
    /// reached just above `threshold`. Repeated thresholds keep the largest level,
    /// and pairs that do not raise the level are dropped.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidStepFunction("no points".into()));
        }
        if points.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::InvalidStepFunction("thresholds must be sorted".into()));
        }
        if points.windows(2).any(|w| w[0].1 > w[1].1) {
            return Err(Error::InvalidStepFunction("levels must be nondecreasing".into()));
        }
        let mut breakpoints: Vec<f64> = Vec::new();
        let mut levels: Vec<f64> = Vec::new();
        for &(t, l) in points {
            if !(0.0..=1.0).contains(&l) || !t.is_finite() {
                return Err(Error::InvalidStepFunction(format!(
                    "point ({t}, {l}) out of range"
                )));
            }
            if breakpoints.last() == Some(&t) {
                *levels.last_mut().unwrap() = l;
            } else if l > levels.last().copied().unwrap_or(0.0) {
                breakpoints.push(t);
                levels.push(l);
            }
        }
        if breakpoints.is_empty() {
            return Err(Error::InvalidStepFunction("all levels are zero".into()));
        }
        Self::new(breakpoints, levels)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Mass strictly below `t`.
    pub fn value(&self, t: f64) -> f64 {
        match self.breakpoints.partition_point(|&b| b < t) {
            0 => 0.0,
            k => self.levels[k - 1],
        }
    }

    /// Mass at or below `t` (the right limit).
    pub fn value_right(&self, t: f64) -> f64 {
        match self.breakpoints.partition_point(|&b| b <= t) {
            0 => 0.0,
            k => self.levels[k - 1],
        }
    }

    /// Generalized inverse `Q(α) = sup{t : F(t) ≤ α}` with `Q(1)` capped at the
    /// last breakpoint.
    pub fn to_quantile(&self) -> StepQuantile {
        let mut alphas = Vec::with_capacity(self.levels.len());
        alphas.push(0.0);
        alphas.extend_from_slice(&self.levels[..self.levels.len() - 1]);
        StepQuantile {
            alphas,
            values: self.breakpoints.clone(),
        }
    }

    /// Pointwise minimum of several distribution functions.
    pub fn pointwise_min(cdfs: &[&StepCdf]) -> Result<StepCdf> {
        let mut grid: Vec<f64> = cdfs
            .iter()
            .flat_map(|c| c.breakpoints.iter().copied())
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let points: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| {
                let level = cdfs
                    .iter()
                    .map(|c| c.value_right(t))
                    .fold(f64::INFINITY, f64::min);
                (t, level)
            })
            .collect();
        Self::from_points(&points)
    }
}

/// Right-continuous step quantile function.
///
/// `values[j]` holds on `[alphas[j], alphas[j+1])`, the last value on
/// `[alphas[k-1], 1]`. `alphas[0]` is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepQuantile {
    alphas: Vec<f64>,
    values: Vec<f64>,
}

impl StepQuantile {
    pub fn new(alphas: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != values.len() {
            return Err(Error::InvalidStepFunction(format!(
                "{} probability breakpoints and {} values",
                alphas.len(),
                values.len()
            )));
        }
        if alphas[0] != 0.0 {
            return Err(Error::InvalidStepFunction(
                "first probability breakpoint must be 0".into(),
            ));
        }
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a))
            || alphas.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidStepFunction(
                "probability breakpoints must be nondecreasing in [0, 1]".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidStepFunction(
                "values must be finite and nondecreasing".into(),
            ));
        }
        Ok(Self { alphas, values })
    }

    /// Probability breakpoints; these are the jump points checked by quantile constraints.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, alpha: f64) -> f64 {
        let k = self.alphas.partition_point(|&a| a <= alpha);
        self.values[k.max(1) - 1]
    }

    /// Value at `α = 1`.
    pub fn top(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// `∫_a^b Q(α) dα`, exact.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let k = self.values.len();
        let mut acc = 0.0;
        for j in 0..k {
            let lo = self.alphas[j].max(a);
            let hi = if j + 1 < k { self.alphas[j + 1] } else { 1.0 }.min(b);
            if hi > lo {
                acc += self.values[j] * (hi - lo);
            }
        }
        acc
    }

    /// Generalized inverse back to a left-continuous distribution function:
    /// `F(t)` is the measure of `{α : Q(α) < t}`.
    pub fn to_cdf(&self) -> StepCdf {
        let k = self.values.len();
        let mut breakpoints: Vec<f64> = Vec::new();
        let mut levels: Vec<f64> = Vec::new();
        for j in 0..k {
            let level = if j + 1 < k { self.alphas[j + 1] } else { 1.0 };
            if breakpoints.last() == Some(&self.values[j]) {
                *levels.last_mut().unwrap() = level;
            } else {
                breakpoints.push(self.values[j]);
                levels.push(level);
            }
        }
        StepCdf {
            breakpoints,
            levels,
        }
    }

    /// Quantile of the mixture `λx + (1-λ)x⁰` where `x⁰` returns `riskfree` in
    /// every scenario: `λ·Q(α) + (1-λ)·r`.
    pub fn mix_with_riskfree(&self, riskfree: f64, lambda: f64) -> Result<StepQuantile> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param("lambda", format!("{lambda} is outside [0, 1]")));
        }
        let values = self
            .values
            .iter()
            .map(|&v| lambda * v + (1.0 - lambda) * riskfree)
            .collect();
        Ok(StepQuantile {
            alphas: self.alphas.clone(),
            values,
        })
    }
}

/// Distribution function of the mixture with the risk-free portfolio,
/// `F_λ(t) = F((t - (1-λ)r) / λ)` for `λ > 0`.
pub fn mixed_cdf_value(cdf: &StepCdf, riskfree: f64, lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        return if riskfree < t { 1.0 } else { 0.0 };
    }
    cdf.value((t - (1.0 - lambda) * riskfree) / lambda)
}

pub fn empirical_cdf(s: &ScenarioMatrix, x: &[f64]) -> Result<StepCdf> {
    Ok(SortedReturns::of_portfolio(s, x)?.to_cdf())
}

pub fn empirical_quantile(s: &ScenarioMatrix, x: &[f64]) -> Result<StepQuantile> {
    Ok(SortedReturns::of_portfolio(s, x)?.to_quantile())
}

/// Return indicator to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    Mean,
    /// γ-quantile of the return.
    Var { level: f64 },
    /// Average of return quantiles over `[lower, upper]`.
    Avar { lower: f64, upper: f64 },
}

impl Objective {
    /// Upper-tail average `AVaR(γ, 1)`.
    pub fn avar_upper(level: f64) -> Self {
        Objective::Avar {
            lower: level,
            upper: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Mean => Ok(()),
            Objective::Var { level } if level > 0.0 && level < 1.0 => Ok(()),
            Objective::Var { level } => Err(Error::InvalidObjective(format!(
                "VaR level {level} must lie in (0, 1)"
            ))),
            Objective::Avar { lower, upper } if 0.0 <= lower && lower < upper && upper <= 1.0 => {
                Ok(())
            }
            Objective::Avar { lower, upper } => Err(Error::InvalidObjective(format!(
                "AVaR window [{lower}, {upper}] must satisfy 0 <= lower < upper <= 1"
            ))),
        }
    }

    /// Evaluates on already sorted returns; parameters are assumed valid.
    pub fn evaluate(&self, r: &SortedReturns) -> f64 {
        match *self {
            Objective::Mean => r.mean(),
            Objective::Var { level } => r.quantile(level),
            Objective::Avar { lower, upper } => r.quantile_integral(lower, upper) / (upper - lower),
        }
    }
}

pub fn indicator(s: &ScenarioMatrix, x: &[f64], objective: Objective) -> Result<f64> {
    objective.validate()?;
    Ok(objective.evaluate(&SortedReturns::of_portfolio(s, x)?))
}
