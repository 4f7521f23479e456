use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bnb::BnbConfig;
use crate::distribution::{Objective, StepQuantile, Weights};
use crate::dominance::{FeasibleBox, ProfileForm, ReferenceProfile, Shift};
use crate::error::{Error, Result};
use crate::harness::dataset::{load_csv, Dataset, BUILTIN_APPENDIX};
use crate::harness::presets;
use crate::penalty::{PenalizedObjective, PenaltySpec, PenaltyVariant, DEFAULT_LAMBDA_TOLERANCE, DEFAULT_MAX_BISECTIONS};
use crate::smoother::SmootherConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub indicators: IndicatorConfig,
    pub reference: Vec<ReferenceSpec>,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub check: Option<CheckConfig>,
}

fn default_objective() -> Objective {
    Objective::Mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV path, or `builtin:appendix`.
    #[serde(default = "default_data_path")]
    pub path: String,
    /// 1-based dataset columns to keep, in order. All columns when absent.
    #[serde(default)]
    pub assets: Option<Vec<usize>>,
    #[serde(default)]
    pub constant_overrides: Vec<ConstantOverride>,
}

fn default_data_path() -> String {
    BUILTIN_APPENDIX.to_owned()
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: default_data_path(),
            assets: None,
            constant_overrides: Vec::new(),
        }
    }
}

/// Replace a dataset column (1-based) by a constant return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverride {
    pub asset: usize,
    pub value: f64,
}

/// Levels for the reported VaR and upper-tail AVaR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorConfig {
    pub level: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self { level: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Distribution of a reference portfolio (weights over the selected
    /// assets), relaxed by `shift`.
    Portfolio {
        weights: Vec<f64>,
        #[serde(default)]
        shift: Shift,
        #[serde(default = "default_form")]
        form: ProfileForm,
    },
    /// Explicit `(threshold, level)` steps of a distribution function.
    Steps { points: Vec<(f64, f64)> },
    /// Explicit step quantile function.
    Quantile { alphas: Vec<f64>, values: Vec<f64> },
    /// `VaR_level ≥ threshold`, with returns bounded below by `floor`.
    Var {
        level: f64,
        threshold: f64,
        floor: f64,
    },
}

fn default_form() -> ProfileForm {
    ProfileForm::Cdf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub variant: PenaltyVariant,
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub offset_margin: f64,
    /// Anchor weights over the selected assets.
    #[serde(default)]
    pub anchor: Option<Vec<f64>>,
    /// Anchor as a unit position in this 1-based dataset column.
    #[serde(default)]
    pub anchor_asset: Option<usize>,
    #[serde(default)]
    pub literal_offset: bool,
    #[serde(default = "default_lambda_tolerance")]
    pub lambda_tolerance: f64,
    #[serde(default = "default_max_bisections")]
    pub max_bisections: usize,
}

fn default_lambda_tolerance() -> f64 {
    DEFAULT_LAMBDA_TOLERANCE
}

fn default_max_bisections() -> usize {
    DEFAULT_MAX_BISECTIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    #[default]
    Bnb,
    /// Independent smoother runs from random starts.
    Restarts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub method: SolverMethod,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Evaluation budget per restart.
    #[serde(default)]
    pub max_evaluations: Option<u64>,
    #[serde(default)]
    pub bnb: BnbConfig,
    #[serde(default = "default_smoother")]
    pub smoother: SmootherConfig,
}

fn default_restarts() -> usize {
    10
}

fn default_smoother() -> SmootherConfig {
    BnbConfig::default().smoother
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::default(),
            restarts: default_restarts(),
            threads: None,
            max_evaluations: None,
            bnb: BnbConfig::default(),
            smoother: default_smoother(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub scan: Option<PathBuf>,
    /// Record wall time in the report.
    #[serde(default = "default_true")]
    pub include_timing: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            report: None,
            profile: None,
            scan: None,
            include_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Grid intervals per axis.
    pub resolution: usize,
    /// Largest number of grid points accepted.
    pub max_points: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            resolution: 200,
            max_points: 4_000_000,
        }
    }
}

/// Portfolio examined by `feasible` and `profile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub weights: Vec<f64>,
}

fn toml_error(text: &str, origin: &Path, err: toml::de::Error) -> Error {
    let (line, column) = match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        column,
        message: err.message().to_owned(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, origin, e))
    }

    /// Load from a file path or `preset:<name>`.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("preset:") {
            let text = presets::get(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset `{name}`; available: {}",
                    presets::names().join(", ")
                ))
            })?;
            return Self::from_toml_str(text, Path::new(spec));
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Zero-based dataset columns selected by the config.
    fn columns(&self, available: usize) -> Result<Vec<usize>> {
        let Some(assets) = &self.data.assets else {
            return Ok((0..available).collect());
        };
        if assets.is_empty() {
            return Err(Error::Config("data.assets must not be empty".into()));
        }
        let mut seen = vec![false; available];
        assets
            .iter()
            .map(|&a| {
                if a == 0 || a > available {
                    return Err(Error::Config(format!(
                        "asset {a} outside 1..={available}"
                    )));
                }
                if std::mem::replace(&mut seen[a - 1], true) {
                    return Err(Error::Config(format!("asset {a} selected twice")));
                }
                Ok(a - 1)
            })
            .collect()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let mut data = load_csv(Path::new(&self.data.path))?;
        let n = data.matrix.assets();
        for o in &self.data.constant_overrides {
            if o.asset == 0 || o.asset > n {
                return Err(Error::Config(format!(
                    "constant override for asset {} outside 1..={n}",
                    o.asset
                )));
            }
            data.matrix = data.matrix.with_constant_column(o.asset - 1, o.value)?;
        }
        let columns = self.columns(n)?;
        data.select(&columns)
    }

    /// Dataset, constraint and penalty assembled and validated.
    pub fn problem(&self) -> Result<Problem> {
        self.objective.validate()?;
        if !(self.indicators.level > 0.0 && self.indicators.level < 1.0) {
            return Err(Error::param("indicators.level", "must lie in (0, 1)"));
        }
        let dataset = self.dataset()?;
        let n = dataset.matrix.assets();
        let s = &dataset.matrix;

        if self.reference.is_empty() {
            return Err(Error::Config("at least one [[reference]] is required".into()));
        }
        let mut profiles = Vec::with_capacity(self.reference.len());
        let mut quantile_form = false;
        for r in &self.reference {
            let profile = match r {
                ReferenceSpec::Portfolio {
                    weights,
                    shift,
                    form,
                } => {
                    if weights.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            got: weights.len(),
                        });
                    }
                    match form {
                        ProfileForm::Cdf => {
                            ReferenceProfile::from_portfolio(s, weights, shift.clone())?
                        }
                        ProfileForm::Quantile => {
                            ReferenceProfile::from_portfolio_quantiles(s, weights, shift.clone())?
                        }
                    }
                }
                ReferenceSpec::Steps { points } => ReferenceProfile::from_steps(points)?,
                ReferenceSpec::Quantile { alphas, values } => ReferenceProfile::from_quantile(
                    StepQuantile::new(alphas.clone(), values.clone())?,
                ),
                ReferenceSpec::Var {
                    level,
                    threshold,
                    floor,
                } => ReferenceProfile::var_constraint(*level, *threshold, *floor)?,
            };
            quantile_form |= profile.form() == ProfileForm::Quantile;
            profiles.push(profile);
        }
        let reference = ReferenceProfile::merge(&profiles)?;

        let bounds = match &self.bounds {
            Some(b) => {
                if b.lower.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: b.lower.len(),
                    });
                }
                FeasibleBox::new(b.lower.clone())?
            }
            None => FeasibleBox::long_only(n),
        };

        let p = &self.penalty;
        let anchor = match (&p.anchor, p.anchor_asset) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either penalty.anchor or penalty.anchor_asset, not both".into(),
                ))
            }
            (Some(w), None) => Some(w.clone()),
            (None, Some(a)) => {
                let columns = self.columns(self.dataset_width()?)?;
                let local = columns.iter().position(|&c| c + 1 == a).ok_or_else(|| {
                    Error::Config(format!("anchor asset {a} is not among the selected assets"))
                })?;
                Some(Weights::unit(n, local).into_inner())
            }
            (None, None) => None,
        };
        let spec = PenaltySpec {
            variant: p.variant,
            offset: p.offset,
            offset_margin: p.offset_margin,
            anchor,
            lambda_tolerance: p.lambda_tolerance,
            max_bisections: p.max_bisections,
            literal_offset: p.literal_offset,
        };
        Ok(Problem {
            dataset,
            reference,
            quantile_form,
            bounds,
            objective: self.objective,
            spec,
        })
    }

    fn dataset_width(&self) -> Result<usize> {
        Ok(load_csv(Path::new(&self.data.path))?.matrix.assets())
    }
}

/// Everything needed to evaluate and solve one configured problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dataset: Dataset,
    pub reference: ReferenceProfile,
    /// Some constraint was given in quantile form, so H is checked too.
    pub quantile_form: bool,
    pub bounds: FeasibleBox,
    pub objective: Objective,
    pub spec: PenaltySpec,
}

impl Problem {
    pub fn penalized(&self) -> Result<PenalizedObjective> {
        PenalizedObjective::new(
            self.dataset.matrix.clone(),
            self.reference.clone(),
            self.bounds.clone(),
            self.objective,
            &self.spec,
        )
    }

    /// Coordinate-wise hull of the admissible set.
    pub fn root_box(&self) -> (Vec<f64>, Vec<f64>) {
        let lower = self.bounds.lower().to_vec();
        let total: f64 = lower.iter().sum();
        let upper = lower.iter().map(|c| 1.0 - (total - c)).collect();
        (lower, upper)
    }
}
