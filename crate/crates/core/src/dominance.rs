//! Reference risk profiles and first-order dominance residuals.
//!
//! A portfolio dominates a step reference when its distribution function lies
//! on or below the reference everywhere, equivalently when its quantile
//! function lies on or above the reference quantile. For step references both
//! conditions reduce to finitely many checks at the reference jumps. Residuals
//! are signed so that `≤ 0` means feasible.

use serde::{Deserialize, Serialize};

use crate::distribution::{ScenarioMatrix, SortedReturns, StepCdf, StepQuantile};
use crate::error::{Error, Result};

/// Box-membership slack for the budget and lower-bound checks.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// Relaxation of a reference profile, in return units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shift {
    Uniform(f64),
    /// One entry per jump of the unshifted profile.
    PerJump(Vec<f64>),
}

impl Shift {
    fn validate(&self, jumps: usize) -> Result<()> {
        let values: &[f64] = match self {
            Shift::Uniform(d) => std::slice::from_ref(d),
            Shift::PerJump(ds) => {
                if ds.len() != jumps {
                    return Err(Error::DimensionMismatch {
                        expected: jumps,
                        got: ds.len(),
                    });
                }
                ds
            }
        };
        if values.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::param("shift", "must be finite and nonnegative"));
        }
        Ok(())
    }

    fn at(&self, j: usize) -> f64 {
        match self {
            Shift::Uniform(d) => *d,
            Shift::PerJump(ds) => ds[j],
        }
    }
}

impl Default for Shift {
    fn default() -> Self {
        Shift::Uniform(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileForm {
    Cdf,
    Quantile,
}

/// Step reference that feasible portfolios must dominate.
///
/// Both the distribution-function and quantile views are kept; they encode
/// the same constraint set and are generalized inverses of each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    form: ProfileForm,
    cdf: StepCdf,
    quantile: StepQuantile,
    shift: Shift,
}

impl ReferenceProfile {
    pub fn from_cdf(cdf: StepCdf) -> Self {
        let quantile = cdf.to_quantile();
        Self {
            form: ProfileForm::Cdf,
            cdf,
            quantile,
            shift: Shift::default(),
        }
    }

    pub fn from_quantile(quantile: StepQuantile) -> Self {
        let cdf = quantile.to_cdf();
        Self {
            form: ProfileForm::Quantile,
            cdf,
            quantile,
            shift: Shift::default(),
        }
    }

    /// `F_ref(t) = F_{x_ref}(t + δ)`: every jump of the reference portfolio's
    /// distribution moves left by its shift.
    pub fn from_portfolio(s: &ScenarioMatrix, x_ref: &[f64], shift: Shift) -> Result<Self> {
        let base = SortedReturns::of_portfolio(s, x_ref)?.to_cdf();
        shift.validate(base.breakpoints().len())?;
        let breakpoints: Vec<f64> = base
            .breakpoints()
            .iter()
            .enumerate()
            .map(|(j, &t)| t - shift.at(j))
            .collect();
        let cdf = StepCdf::new(breakpoints, base.levels().to_vec())?;
        let mut profile = Self::from_cdf(cdf);
        profile.shift = shift;
        Ok(profile)
    }

    /// `Q_ref(α) = Q_{x_ref}(α) - δ(α)`.
    pub fn from_portfolio_quantiles(
        s: &ScenarioMatrix,
        x_ref: &[f64],
        shift: Shift,
    ) -> Result<Self> {
        let base = SortedReturns::of_portfolio(s, x_ref)?.to_quantile();
        shift.validate(base.values().len())?;
        let values = base
            .values()
            .iter()
            .enumerate()
            .map(|(j, &v)| v - shift.at(j))
            .collect();
        let quantile = StepQuantile::new(base.alphas().to_vec(), values)?;
        let mut profile = Self::from_quantile(quantile);
        profile.shift = shift;
        Ok(profile)
    }

    /// Step profile from `(threshold, level)` pairs, the level being the
    /// value reached just above the threshold.
    pub fn from_steps(points: &[(f64, f64)]) -> Result<Self> {
        if points.last().map(|p| p.1) != Some(1.0) {
            return Err(Error::InvalidStepFunction("last level must be 1".into()));
        }
        Ok(Self::from_cdf(StepCdf::from_points(points)?))
    }

    /// Single quantile constraint `Q_x(level) ≥ threshold` as a dominance
    /// profile; `floor` must not exceed any attainable return.
    pub fn var_constraint(level: f64, threshold: f64, floor: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::param("level", format!("{level} must lie in (0, 1)")));
        }
        if floor >= threshold {
            return Err(Error::param("floor", "must lie below the threshold"));
        }
        Self::from_steps(&[(floor, level), (threshold, 1.0)])
    }

    /// Several dominance constraints folded into one via the pointwise
    /// minimum of their distribution functions.
    pub fn merge(profiles: &[ReferenceProfile]) -> Result<Self> {
        match profiles {
            [] => Err(Error::InvalidStepFunction("no profiles to merge".into())),
            [single] => Ok(single.clone()),
            many => {
                let cdfs: Vec<&StepCdf> = many.iter().map(|p| &p.cdf).collect();
                Ok(Self::from_cdf(StepCdf::pointwise_min(&cdfs)?))
            }
        }
    }

    pub fn form(&self) -> ProfileForm {
        self.form
    }

    pub fn shift(&self) -> &Shift {
        &self.shift
    }

    pub fn cdf(&self) -> &StepCdf {
        &self.cdf
    }

    pub fn quantile(&self) -> &StepQuantile {
        &self.quantile
    }

    /// Return thresholds where the reference distribution jumps.
    pub fn jump_thresholds(&self) -> &[f64] {
        self.cdf.breakpoints()
    }

    /// Probability levels where the reference quantile jumps.
    pub fn jump_levels(&self) -> &[f64] {
        self.quantile.alphas()
    }
}

/// `max_{t ∈ T_ref} (F_x(t) - F_ref(t))` on precomputed returns.
pub fn cdf_residual(returns: &SortedReturns, reference: &ReferenceProfile) -> f64 {
    let cdf = reference.cdf();
    let m = returns.len() as f64;
    let mut below_ref = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (&t, &level) in cdf.breakpoints().iter().zip(cdf.levels()) {
        let gap = returns.count_below(t) as f64 / m - below_ref;
        worst = worst.max(gap);
        below_ref = level;
    }
    worst
}

/// `max_{α ∈ A_ref} (Q_ref(α) - Q_x(α))` on precomputed returns.
pub fn quantile_residual(returns: &SortedReturns, reference: &ReferenceProfile) -> f64 {
    let q = reference.quantile();
    q.alphas()
        .iter()
        .map(|&a| q.value(a) - returns.quantile(a))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Distribution-form residual `G(x)`.
pub fn g_residual(s: &ScenarioMatrix, x: &[f64], reference: &ReferenceProfile) -> Result<f64> {
    Ok(cdf_residual(&SortedReturns::of_portfolio(s, x)?, reference))
}

/// Quantile-form residual `H(x)`.
pub fn h_residual(s: &ScenarioMatrix, x: &[f64], reference: &ReferenceProfile) -> Result<f64> {
    Ok(quantile_residual(&SortedReturns::of_portfolio(s, x)?, reference))
}

/// Admissible portfolios `{x : Σx ≤ 1, x ≥ c}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleBox {
    lower: Vec<f64>,
}

impl FeasibleBox {
    pub fn new(lower: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::param("lower", "at least one asset is required"));
        }
        if lower.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("lower", "bounds must be finite"));
        }
        let total: f64 = lower.iter().sum();
        if total > 1.0 {
            return Err(Error::EmptyBox(total));
        }
        Ok(Self { lower })
    }

    /// Long-only box `x ≥ 0`.
    pub fn long_only(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// `Σx - 1`; positive means over budget.
    pub fn budget_residual(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>() - 1.0
    }

    /// `max_i (c_i - x_i)`; positive means some bound is violated.
    pub fn lower_residual(&self, x: &[f64]) -> f64 {
        self.lower
            .iter()
            .zip(x)
            .map(|(c, v)| c - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && self.budget_residual(x) <= BOX_TOLERANCE
            && self.lower_residual(x) <= BOX_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub cdf_residual: f64,
    pub quantile_residual: f64,
    pub budget_residual: f64,
    pub lower_residual: f64,
}

pub fn is_feasible(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    bounds: &FeasibleBox,
) -> Result<FeasibilityReport> {
    if x.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            got: x.len(),
        });
    }
    let returns = SortedReturns::of_portfolio(s, x)?;
    let g = cdf_residual(&returns, reference);
    Ok(FeasibilityReport {
        feasible: g <= 0.0 && bounds.contains(x),
        cdf_residual: g,
        quantile_residual: quantile_residual(&returns, reference),
        budget_residual: bounds.budget_residual(x),
        lower_residual: bounds.lower_residual(x),
    })
}
