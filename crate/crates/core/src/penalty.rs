//! Exact penalty reformulations of the dominance-constrained problem.
//!
//! Two families are provided. Discontinuous penalties subtract a fixed offset
//! plus the dominance residual at infeasible points. Projective penalties map
//! a point onto the feasible set along the segment towards a feasible anchor
//! and subtract the distance travelled. Both first project onto the budget box
//! in the Euclidean norm and subtract that distance too, so the resulting
//! functions are defined on all of `R^n`.

use serde::{Deserialize, Serialize};

use crate::distribution::{portfolio_returns, Objective, ScenarioMatrix, SortedReturns};
use crate::dominance::{cdf_residual, quantile_residual, FeasibleBox, ReferenceProfile};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyVariant {
    DiscontinuousG,
    DiscontinuousH,
    ProjectiveG,
    ProjectiveHAnalytic,
}

impl PenaltyVariant {
    pub fn is_projective(self) -> bool {
        matches!(self, PenaltyVariant::ProjectiveG | PenaltyVariant::ProjectiveHAnalytic)
    }

    fn uses_quantiles(self) -> bool {
        matches!(self, PenaltyVariant::DiscontinuousH | PenaltyVariant::ProjectiveHAnalytic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub variant: PenaltyVariant,
    /// Offset `c` subtracted at dominance-infeasible points. Defaults to the
    /// objective at the anchor plus `offset_margin`.
    pub offset: Option<f64>,
    pub offset_margin: f64,
    /// Feasible point used by the projective variants (and for the default offset).
    pub anchor: Option<Vec<f64>>,
    pub lambda_tolerance: f64,
    pub max_bisections: usize,
    /// Subtract the offset at every point, feasible or not.
    pub literal_offset: bool,
}

impl PenaltySpec {
    pub fn new(variant: PenaltyVariant) -> Self {
        Self {
            variant,
            offset: None,
            offset_margin: 0.0,
            anchor: None,
            lambda_tolerance: DEFAULT_LAMBDA_TOLERANCE,
            max_bisections: DEFAULT_MAX_BISECTIONS,
            literal_offset: false,
        }
    }

    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset = Some(c);
        self
    }

    pub fn with_anchor(mut self, anchor: Vec<f64>) -> Self {
        self.anchor = Some(anchor);
        self
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn blend(anchor: &[f64], x: &[f64], lambda: f64) -> Vec<f64> {
    anchor
        .iter()
        .zip(x)
        .map(|(a, v)| (1.0 - lambda) * a + lambda * v)
        .collect()
}

/// Euclidean projection onto `{x : Σx ≤ 1, x ≥ c}`.
///
/// Shift by `c` and clip at zero; when that breaks the budget, project the
/// shifted point onto the simplex of mass `1 - Σc` by sort-and-threshold.
pub fn project_box(x: &[f64], bounds: &FeasibleBox) -> Result<Vec<f64>> {
    let c = bounds.lower();
    if x.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            got: x.len(),
        });
    }
    let mass = 1.0 - c.iter().sum::<f64>();
    if mass < 0.0 {
        return Err(Error::EmptyBox(1.0 - mass));
    }
    let shifted: Vec<f64> = x.iter().zip(c).map(|(v, lo)| v - lo).collect();
    let clipped_total: f64 = shifted.iter().map(|v| v.max(0.0)).sum();
    let tau = if clipped_total <= mass {
        0.0
    } else {
        let mut u = shifted.clone();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cumulative = 0.0;
        let mut tau = 0.0;
        for (j, &v) in u.iter().enumerate() {
            cumulative += v;
            let candidate = (cumulative - mass) / (j + 1) as f64;
            if v - candidate > 0.0 {
                tau = candidate;
            } else {
                break;
            }
        }
        tau
    };
    Ok(shifted
        .iter()
        .zip(c)
        .map(|(v, lo)| (v - tau).max(0.0) + lo)
        .collect())
}

/// Feasible point towards which infeasible portfolios are pulled.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    weights: Vec<f64>,
    returns: Vec<f64>,
    riskfree: Option<f64>,
}

impl Anchor {
    pub fn new(s: &ScenarioMatrix, weights: Vec<f64>) -> Result<Self> {
        let returns = portfolio_returns(s, &weights)?;
        let riskfree = Self::detect_riskfree(s, &weights);
        Ok(Self {
            weights,
            returns,
            riskfree,
        })
    }

    /// A unit position in a column whose return never varies.
    fn detect_riskfree(s: &ScenarioMatrix, weights: &[f64]) -> Option<f64> {
        let mut nonzero = weights.iter().enumerate().filter(|(_, &w)| w != 0.0);
        let (j, &w) = nonzero.next()?;
        if nonzero.next().is_some() || w != 1.0 {
            return None;
        }
        s.constant_column(j)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Return of the anchor when it is a pure risk-free position.
    pub fn riskfree(&self) -> Option<f64> {
        self.riskfree
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarProjection {
    pub point: Vec<f64>,
    pub lambda: f64,
}

/// Largest certified `λ` with `G((1-λ)x⁰ + λx) ≤ 0`, by bisection.
///
/// The returned point always has a nonpositive residual when re-evaluated
/// directly from its weights.
pub fn star_project_g(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    anchor: &Anchor,
    tolerance: f64,
    max_bisections: usize,
) -> Result<StarProjection> {
    let anchor_returns = SortedReturns::new(anchor.returns.clone());
    let anchor_residual = cdf_residual(&anchor_returns, reference);
    if anchor_residual > 0.0 {
        return Err(Error::InfeasibleAnchor {
            residual: anchor_residual,
        });
    }
    let x_returns = portfolio_returns(s, x)?;
    Ok(star_project_g_unchecked(
        s,
        x,
        &x_returns,
        reference,
        anchor,
        tolerance,
        max_bisections,
    ))
}

fn star_project_g_unchecked(
    s: &ScenarioMatrix,
    x: &[f64],
    x_returns: &[f64],
    reference: &ReferenceProfile,
    anchor: &Anchor,
    tolerance: f64,
    max_bisections: usize,
) -> StarProjection {
    let sorted_x = SortedReturns::new(x_returns.to_vec());
    if cdf_residual(&sorted_x, reference) <= 0.0 {
        return StarProjection {
            point: x.to_vec(),
            lambda: 1.0,
        };
    }

    let lambda = match anchor.riskfree {
        // F_{x_λ}(t) = F_x((t - (1-λ)r)/λ): one sort serves every λ.
        Some(r) => bisect(0.0, 1.0, tolerance, max_bisections, |lambda| {
            mixed_cdf_residual(&sorted_x, reference, r, lambda) <= 0.0
        }),
        None => bisect(0.0, 1.0, tolerance, max_bisections, |lambda| {
            blended_residual(&anchor.returns, x_returns, lambda, reference) <= 0.0
        }),
    };

    let direct_ok = |lambda: f64| {
        let p = blend(&anchor.weights, x, lambda);
        let r = SortedReturns::of_portfolio(s, &p).expect("dimensions checked");
        cdf_residual(&r, reference) <= 0.0
    };
    let lambda = if direct_ok(lambda) {
        lambda
    } else {
        bisect(0.0, lambda, tolerance, max_bisections, direct_ok)
    };
    StarProjection {
        point: blend(&anchor.weights, x, lambda),
        lambda,
    }
}

/// Bisection keeping `accept(lo)` true and `accept(hi)` false; returns `lo`.
fn bisect(
    mut lo: f64,
    mut hi: f64,
    tolerance: f64,
    max_iter: usize,
    mut accept: impl FnMut(f64) -> bool,
) -> f64 {
    for _ in 0..max_iter {
        if hi - lo <= tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if accept(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn blended_residual(
    anchor_returns: &[f64],
    x_returns: &[f64],
    lambda: f64,
    reference: &ReferenceProfile,
) -> f64 {
    let mixed = anchor_returns
        .iter()
        .zip(x_returns)
        .map(|(a, v)| (1.0 - lambda) * a + lambda * v)
        .collect();
    cdf_residual(&SortedReturns::new(mixed), reference)
}

fn mixed_cdf_residual(
    sorted_x: &SortedReturns,
    reference: &ReferenceProfile,
    riskfree: f64,
    lambda: f64,
) -> f64 {
    let cdf = reference.cdf();
    let m = sorted_x.len() as f64;
    let mut below_ref = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (&t, &level) in cdf.breakpoints().iter().zip(cdf.levels()) {
        let f = if lambda == 0.0 {
            if riskfree < t {
                1.0
            } else {
                0.0
            }
        } else {
            sorted_x.count_below((t - (1.0 - lambda) * riskfree) / lambda) as f64 / m
        };
        worst = worst.max(f - below_ref);
        below_ref = level;
    }
    worst
}

/// Closed-form mixing weight for the quantile-form constraint with a
/// risk-free anchor returning `r > Q_ref(1)`:
/// `min (Q_ref(α) - r) / (Q_x(α) - r)` over the violated jump levels, or 1.
pub fn analytic_lambda(
    quantile_x: impl Fn(f64) -> f64,
    reference: &ReferenceProfile,
    riskfree: f64,
) -> Result<f64> {
    let q_ref = reference.quantile();
    if q_ref.top() >= riskfree {
        return Err(Error::RiskfreeBelowReference {
            riskfree,
            reference_top: q_ref.top(),
        });
    }
    let mut lambda: f64 = 1.0;
    for &a in q_ref.alphas() {
        let qr = q_ref.value(a);
        let qx = quantile_x(a);
        if qx < qr {
            lambda = lambda.min((qr - riskfree) / (qx - riskfree));
        }
    }
    Ok(lambda)
}

/// Closed-form star projection for the quantile constraint.
///
/// The mixing weight is stepped down by a few ulps when rounding in the
/// direct weight-based evaluation would otherwise leave the point infeasible.
pub fn star_project_h_analytic(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    anchor: &Anchor,
) -> Result<StarProjection> {
    let riskfree = anchor.riskfree.ok_or_else(|| {
        Error::param("anchor", "closed-form projection needs a risk-free anchor")
    })?;
    let returns = SortedReturns::of_portfolio(s, x)?;
    let lambda = analytic_lambda(|a| returns.quantile(a), reference, riskfree)?;
    Ok(finish_analytic(s, x, reference, anchor, lambda))
}

fn finish_analytic(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    anchor: &Anchor,
    lambda: f64,
) -> StarProjection {
    if lambda >= 1.0 {
        return StarProjection {
            point: x.to_vec(),
            lambda: 1.0,
        };
    }
    let mut lambda = lambda;
    for _ in 0..64 {
        let p = blend(&anchor.weights, x, lambda);
        let r = SortedReturns::of_portfolio(s, &p).expect("dimensions checked");
        if quantile_residual(&r, reference) <= 0.0 && cdf_residual(&r, reference) <= 0.0 {
            return StarProjection { point: p, lambda };
        }
        lambda = (lambda * (1.0 - 1e-14) - 1e-15).max(0.0);
    }
    StarProjection {
        point: blend(&anchor.weights, x, lambda),
        lambda,
    }
}

/// One evaluation of a penalized function, with the pieces that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedEvaluation {
    pub value: f64,
    /// Candidate solution recovered from the raw point: the box projection
    /// for discontinuous variants, the star projection for projective ones.
    pub recovered: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
    pub box_distance: f64,
    pub star_distance: f64,
    pub lambda: f64,
}

/// A penalized objective ready for repeated evaluation (to maximize).
#[derive(Debug, Clone)]
pub struct PenalizedObjective {
    scenarios: ScenarioMatrix,
    reference: ReferenceProfile,
    bounds: FeasibleBox,
    objective: Objective,
    variant: PenaltyVariant,
    offset: f64,
    anchor: Option<Anchor>,
    lambda_tolerance: f64,
    max_bisections: usize,
    literal_offset: bool,
}

impl PenalizedObjective {
    pub fn new(
        scenarios: ScenarioMatrix,
        reference: ReferenceProfile,
        bounds: FeasibleBox,
        objective: Objective,
        spec: &PenaltySpec,
    ) -> Result<Self> {
        objective.validate()?;
        if bounds.dim() != scenarios.assets() {
            return Err(Error::DimensionMismatch {
                expected: scenarios.assets(),
                got: bounds.dim(),
            });
        }
        if !(spec.lambda_tolerance > 0.0) {
            return Err(Error::param("lambda_tolerance", "must be positive"));
        }
        let anchor = match &spec.anchor {
            Some(w) => {
                let anchor = Anchor::new(&scenarios, w.clone())?;
                if !bounds.contains(w) {
                    return Err(Error::InfeasibleAnchor {
                        residual: bounds.budget_residual(w).max(bounds.lower_residual(w)),
                    });
                }
                let r = SortedReturns::new(anchor.returns.clone());
                let residual = if spec.variant.uses_quantiles() {
                    quantile_residual(&r, &reference)
                } else {
                    cdf_residual(&r, &reference)
                };
                if residual > 0.0 {
                    return Err(Error::InfeasibleAnchor { residual });
                }
                Some(anchor)
            }
            None => None,
        };
        if spec.variant.is_projective() && anchor.is_none() {
            return Err(Error::param("anchor", "projective penalties need a feasible anchor"));
        }
        if spec.variant == PenaltyVariant::ProjectiveHAnalytic {
            let a = anchor.as_ref().expect("checked above");
            let r = a.riskfree.ok_or_else(|| {
                Error::param("anchor", "closed-form projection needs a risk-free anchor")
            })?;
            let top = reference.quantile().top();
            if top >= r {
                return Err(Error::RiskfreeBelowReference {
                    riskfree: r,
                    reference_top: top,
                });
            }
        }
        let offset = match (spec.offset, &anchor) {
            (Some(c), _) => c,
            (None, Some(a)) => {
                objective.evaluate(&SortedReturns::new(a.returns.clone())) + spec.offset_margin
            }
            (None, None) if spec.variant.is_projective() => 0.0,
            (None, None) => {
                return Err(Error::param(
                    "offset",
                    "discontinuous penalties need an offset or an anchor to derive one",
                ))
            }
        };
        Ok(Self {
            scenarios,
            reference,
            bounds,
            objective,
            variant: spec.variant,
            offset,
            anchor,
            lambda_tolerance: spec.lambda_tolerance,
            max_bisections: spec.max_bisections,
            literal_offset: spec.literal_offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.scenarios.assets()
    }

    pub fn scenarios(&self) -> &ScenarioMatrix {
        &self.scenarios
    }

    pub fn reference(&self) -> &ReferenceProfile {
        &self.reference
    }

    pub fn bounds(&self) -> &FeasibleBox {
        &self.bounds
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn variant(&self) -> PenaltyVariant {
        self.variant
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn anchor(&self) -> Option<&Anchor> {
        self.anchor.as_ref()
    }

    fn residual(&self, r: &SortedReturns) -> f64 {
        if self.variant.uses_quantiles() {
            quantile_residual(r, &self.reference)
        } else {
            cdf_residual(r, &self.reference)
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x).value
    }

    /// Solution candidate associated with a raw point.
    pub fn recover(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate(x).recovered
    }

    pub fn evaluate(&self, x: &[f64]) -> PenalizedEvaluation {
        assert_eq!(x.len(), self.dim(), "point has wrong dimension");
        let y = project_box(x, &self.bounds).expect("box validated at construction");
        let box_distance = distance(x, &y);
        let y_returns = portfolio_returns(&self.scenarios, &y).expect("dimension checked");

        if !self.variant.is_projective() {
            let sorted = SortedReturns::new(y_returns);
            let objective = self.objective.evaluate(&sorted);
            let residual = self.residual(&sorted);
            let value = if self.literal_offset {
                objective - self.offset - residual.max(0.0) - box_distance
            } else if residual > 0.0 {
                objective - self.offset - residual - box_distance
            } else {
                objective - box_distance
            };
            return PenalizedEvaluation {
                value,
                recovered: y,
                objective,
                residual,
                box_distance,
                star_distance: 0.0,
                lambda: 1.0,
            };
        }

        let anchor = self.anchor.as_ref().expect("projective variants carry an anchor");
        let projection = match self.variant {
            PenaltyVariant::ProjectiveG => star_project_g_unchecked(
                &self.scenarios,
                &y,
                &y_returns,
                &self.reference,
                anchor,
                self.lambda_tolerance,
                self.max_bisections,
            ),
            _ => {
                let sorted = SortedReturns::new(y_returns);
                let r = anchor.riskfree.expect("checked at construction");
                let lambda = analytic_lambda(|a| sorted.quantile(a), &self.reference, r)
                    .expect("precondition checked at construction");
                finish_analytic(&self.scenarios, &y, &self.reference, anchor, lambda)
            }
        };
        let p = projection.point;
        let sorted = SortedReturns::of_portfolio(&self.scenarios, &p).expect("dimension checked");
        let objective = self.objective.evaluate(&sorted);
        let residual = self.residual(&sorted);
        let star_distance = distance(&p, &y);
        PenalizedEvaluation {
            value: objective - star_distance - box_distance,
            recovered: p,
            objective,
            residual,
            box_distance,
            star_distance,
            lambda: projection.lambda,
        }
    }
}

/// Discontinuous penalized value at a raw point.
pub fn penalized_discontinuous(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    bounds: &FeasibleBox,
    objective: Objective,
    spec: &PenaltySpec,
) -> Result<f64> {
    if spec.variant.is_projective() {
        return Err(Error::param("variant", "expected a discontinuous variant"));
    }
    check_dim(s, x)?;
    let f = PenalizedObjective::new(s.clone(), reference.clone(), bounds.clone(), objective, spec)?;
    Ok(f.value(x))
}

/// Projective penalized value at a raw point.
pub fn penalized_projective(
    s: &ScenarioMatrix,
    x: &[f64],
    reference: &ReferenceProfile,
    bounds: &FeasibleBox,
    objective: Objective,
    spec: &PenaltySpec,
) -> Result<f64> {
    if !spec.variant.is_projective() {
        return Err(Error::param("variant", "expected a projective variant"));
    }
    check_dim(s, x)?;
    let f = PenalizedObjective::new(s.clone(), reference.clone(), bounds.clone(), objective, spec)?;
    Ok(f.value(x))
}

fn check_dim(s: &ScenarioMatrix, x: &[f64]) -> Result<()> {
    if x.len() != s.assets() {
        return Err(Error::DimensionMismatch {
            expected: s.assets(),
            got: x.len(),
        });
    }
    Ok(())
}
