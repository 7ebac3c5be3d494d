//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [model]
//! hurst = 0.4
//! epsilon = 0.01
//! delta = "eps^2"        # or a number
//! horizon = 1.0
//!
//! [chain]
//! generator = [[-1.0, 1.0], [1.0, -1.0]]
//!
//! [coefficients]
//! dim = 1
//! noise_dim = 1
//! diffusion = [{ basis = "const", coeffs = [1.0, -1.0] }]
//! drift = [{ basis = "tanh", params = [1.0, 0.0], coeffs = [-0.5, -0.5] }]
//!
//! [mc]
//! n_paths = 1000
//! seed = 7
//!
//! [output]
//! directory = "out"
//! ```
//!
//! Experiment-specific sections (`clt`, `second_order`, `homogenize`, `lln`,
//! `sigma`, `rough`, `sample_fbm`, `simulate`) are optional and take their
//! defaults when missing.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::ChainModel;
use crate::coefficients::{prepare_diffusion, Basis, CoefficientField, Field, FieldKind, Term};
use crate::error::{Error, Result};
use crate::fbm::HurstParam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSection>,
    #[serde(default)]
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub clt: CltSection,
    #[serde(default)]
    pub second_order: CltSection,
    #[serde(default)]
    pub homogenize: HomogenizeSection,
    #[serde(default)]
    pub lln: LlnSection,
    #[serde(default)]
    pub sigma: SigmaSection,
    #[serde(default)]
    pub rough: RoughSection,
    #[serde(default)]
    pub sample_fbm: SampleFbmSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

/// `delta` as a number or as the rule `"eps^p"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSetting {
    Value(f64),
    Rule(String),
}

impl Default for DeltaSetting {
    fn default() -> Self {
        DeltaSetting::Rule("eps^2".into())
    }
}

impl DeltaSetting {
    pub fn resolve(&self, eps: f64) -> Result<f64> {
        let d = match self {
            DeltaSetting::Value(v) => *v,
            DeltaSetting::Rule(r) => {
                let p = r
                    .trim()
                    .strip_prefix("eps^")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("delta rule '{r}' is not of the form eps^p")))?;
                eps.powf(p)
            }
        };
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {d}")));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hurst: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub delta: DeltaSetting,
    #[serde(default = "one")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    /// Rows of the generator `Q = -L`.
    pub generator: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub basis: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// Row-major `[state][i][k]`.
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    #[serde(default = "one_usize")]
    pub dim: usize,
    #[serde(default = "one_usize")]
    pub noise_dim: usize,
    /// Centre an uncentred diffusion field for `H > 1/2` instead of failing.
    #[serde(default)]
    pub auto_center: bool,
    #[serde(default)]
    pub diffusion: Vec<TermSpec>,
    #[serde(default)]
    pub drift: Vec<TermSpec>,
}

impl Default for CoefficientSection {
    fn default() -> Self {
        CoefficientSection {
            dim: 1,
            noise_dim: 1,
            auto_center: false,
            diffusion: Vec::new(),
            drift: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Pass threshold on `|z|` for mean-type statistics.
    #[serde(default = "default_z")]
    pub z_threshold: f64,
    /// Pass threshold on p-values of distributional tests.
    #[serde(default = "default_p")]
    pub p_threshold: f64,
    /// Divide the error rates by the number of tests.
    #[serde(default)]
    pub bonferroni: bool,
    /// Worker threads; zero means the rayon default. Results do not depend on it.
    #[serde(default)]
    pub workers: usize,
    /// Statistic families to report; empty means all.
    #[serde(default)]
    pub statistics: Vec<String>,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            n_paths: default_paths(),
            seed: 0,
            batches: default_batches(),
            z_threshold: default_z(),
            p_threshold: default_p(),
            bonferroni: false,
            workers: 0,
            statistics: Vec::new(),
        }
    }
}

impl McSection {
    pub fn wants(&self, family: &str) -> bool {
        self.statistics.is_empty() || self.statistics.iter().any(|s| s == family)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    /// Any of `csv`, `json`, `plot`.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

/// How the noise enters the first and second order processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    /// Raw fBM increments on a grid of step `epsilon / grid_ratio`.
    Increments,
    /// Mollified derivative at scale `delta`.
    Mollified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltSection {
    /// Report times; default `[horizon]`.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_driver")]
    pub driver: DriverKind,
    #[serde(default = "default_grid_ratio")]
    pub grid_ratio: usize,
}

impl Default for CltSection {
    fn default() -> Self {
        CltSection {
            times: Vec::new(),
            driver: default_driver(),
            grid_ratio: default_grid_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeSection {
    /// Initial point; default the origin.
    #[serde(default)]
    pub x0: Vec<f64>,
    /// Second initial point for the two-point flow comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_point: Option<Vec<f64>>,
    /// Euler step of the limit SDE; default `horizon / 400`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde_step: Option<f64>,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    /// Extra epsilons for the convergence sweep (energy distance only).
    #[serde(default)]
    pub eps_sweep: Vec<f64>,
    /// Alternate delta rule checked against the same limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate_delta: Option<DeltaSetting>,
}

impl Default for HomogenizeSection {
    fn default() -> Self {
        HomogenizeSection {
            x0: Vec::new(),
            two_point: None,
            sde_step: None,
            n_permutations: default_permutations(),
            eps_sweep: Vec::new(),
            alternate_delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlnSection {
    /// Observables `f`, `g` on the chain states; default the first diffusion column.
    #[serde(default)]
    pub f: Vec<f64>,
    #[serde(default)]
    pub g: Vec<f64>,
    #[serde(default)]
    pub lag: f64,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    #[serde(default = "default_slope_tol")]
    pub slope_tolerance: f64,
}

impl Default for LlnSection {
    fn default() -> Self {
        LlnSection {
            f: Vec::new(),
            g: Vec::new(),
            lag: 0.0,
            horizons: default_horizons(),
            n_seeds: default_seeds(),
            slope_tolerance: default_slope_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSection {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default)]
    pub xbar: Vec<f64>,
    /// Green–Kubo scales, expected decreasing.
    #[serde(default = "default_gk_deltas")]
    pub deltas: Vec<f64>,
}

impl Default for SigmaSection {
    fn default() -> Self {
        SigmaSection {
            x: Vec::new(),
            xbar: Vec::new(),
            deltas: default_gk_deltas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughSection {
    #[serde(default = "default_triples")]
    pub n_triples: usize,
    /// Grid points per `delta` of the mollified driver.
    #[serde(default = "default_points_per_delta")]
    pub points_per_delta: usize,
    #[serde(default = "default_rough_tol")]
    pub tolerance: f64,
}

impl Default for RoughSection {
    fn default() -> Self {
        RoughSection {
            n_triples: default_triples(),
            points_per_delta: default_points_per_delta(),
            tolerance: default_rough_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFbmSection {
    #[serde(default = "default_fbm_steps")]
    pub n_steps: usize,
    /// Grid step; default `horizon / n_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "one_usize")]
    pub components: usize,
}

impl Default for SampleFbmSection {
    fn default() -> Self {
        SampleFbmSection {
            n_steps: default_fbm_steps(),
            dt: None,
            components: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Initial points; default the origin.
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    /// Store every n-th solver step.
    #[serde(default = "default_record")]
    pub record_every: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            x0: Vec::new(),
            record_every: default_record(),
        }
    }
}

fn default_eps() -> f64 {
    0.01
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_paths() -> usize {
    1000
}
fn default_batches() -> usize {
    crate::stats::DEFAULT_BATCHES
}
fn default_z() -> f64 {
    3.0
}
fn default_p() -> f64 {
    0.01
}
fn default_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into(), "plot".into()]
}
fn default_driver() -> DriverKind {
    DriverKind::Increments
}
fn default_grid_ratio() -> usize {
    16
}
fn default_permutations() -> usize {
    199
}
fn default_horizons() -> Vec<f64> {
    vec![10.0, 30.0, 100.0, 300.0, 1000.0]
}
fn default_seeds() -> usize {
    400
}
fn default_slope_tol() -> f64 {
    0.1
}
fn default_gk_deltas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_triples() -> usize {
    100
}
fn default_points_per_delta() -> usize {
    8
}
fn default_rough_tol() -> f64 {
    1e-9
}
fn default_fbm_steps() -> usize {
    1024
}
fn default_record() -> usize {
    100
}

/// Model objects built from a validated configuration.
pub struct ResolvedModel {
    pub hurst: HurstParam,
    pub eps: f64,
    pub delta: f64,
    pub horizon: f64,
    pub chain: ChainModel,
    pub field: Arc<dyn Field>,
    pub drift: Option<Arc<dyn Field>>,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks that do not need the chain or the coefficients.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        HurstParam::new(m.hurst).map_err(|e| Error::Config(e.to_string()))?;
        if !(m.epsilon > 0.0 && m.epsilon.is_finite()) {
            return Err(Error::Config(format!("model.epsilon must be positive, got {}", m.epsilon)));
        }
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return Err(Error::Config(format!("model.horizon must be positive, got {}", m.horizon)));
        }
        m.delta.resolve(m.epsilon)?;
        if self.mc.n_paths < 2 * self.mc.batches || self.mc.batches < 2 {
            return Err(Error::Config(format!(
                "mc.n_paths = {} must be at least twice mc.batches = {} (and batches >= 2)",
                self.mc.n_paths, self.mc.batches
            )));
        }
        if !(self.mc.z_threshold > 0.0) || !(self.mc.p_threshold > 0.0 && self.mc.p_threshold < 1.0) {
            return Err(Error::Config("mc thresholds are out of range".into()));
        }
        for f in &self.output.formats {
            if !matches!(f.as_str(), "csv" | "json" | "plot") {
                return Err(Error::Config(format!("unknown output format '{f}'")));
            }
        }
        for (name, s) in [("clt", &self.clt), ("second_order", &self.second_order)] {
            if s.grid_ratio == 0 {
                return Err(Error::Config(format!("{name}.grid_ratio must be positive")));
            }
            if s.times.iter().any(|t| !(*t > 0.0 && *t <= m.horizon)) {
                return Err(Error::Config(format!("{name}.times must lie in (0, horizon]")));
            }
        }
        if self.lln.horizons.len() < 2 || self.lln.horizons.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("lln.horizons needs at least two positive values".into()));
        }
        if self.lln.lag < 0.0 || self.lln.n_seeds < 2 {
            return Err(Error::Config("lln.lag must be nonnegative and lln.n_seeds at least 2".into()));
        }
        if let Some(dt) = self.homogenize.sde_step {
            if !(dt > 0.0 && dt <= m.horizon / 100.0) {
                return Err(Error::Config("homogenize.sde_step must lie in (0, horizon / 100]".into()));
            }
        }
        if let Some(alt) = &self.homogenize.alternate_delta {
            alt.resolve(m.epsilon)?;
        }
        Ok(())
    }

    pub fn hurst(&self) -> HurstParam {
        HurstParam::new(self.model.hurst).expect("validated")
    }

    pub fn delta(&self) -> f64 {
        self.model.delta.resolve(self.model.epsilon).expect("validated")
    }

    pub fn chain(&self) -> Result<ChainModel> {
        let c = self
            .chain
            .as_ref()
            .ok_or_else(|| Error::Config("this experiment needs a [chain] section".into()))?;
        ChainModel::new(&c.generator).map_err(|e| Error::Config(format!("chain: {e}")))
    }

    fn field(&self, terms: &[TermSpec], kind: FieldKind, n: usize) -> Result<CoefficientField> {
        let c = &self.coefficients;
        let m = if kind == FieldKind::Drift { 1 } else { c.noise_dim };
        let terms = terms
            .iter()
            .map(|t| {
                Ok(Term {
                    basis: Basis::parse(&t.basis, &t.params, c.dim)?,
                    coeffs: t.coeffs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CoefficientField::new(c.dim, m, n, kind, terms).map_err(|e| Error::Config(e.to_string()))
    }

    /// Chain, coefficients and scales, with the centring rule applied.
    pub fn resolve(&self) -> Result<ResolvedModel> {
        let chain = self.chain()?;
        let hurst = self.hurst();
        let n = chain.n();
        let diffusion = self.field(&self.coefficients.diffusion, FieldKind::Diffusion, n)?;
        let (diffusion, warning) = prepare_diffusion(diffusion, chain.mu(), hurst, self.coefficients.auto_center)?;
        let drift = if self.coefficients.drift.is_empty() {
            None
        } else {
            Some(Arc::new(self.field(&self.coefficients.drift, FieldKind::Drift, n)?) as Arc<dyn Field>)
        };
        Ok(ResolvedModel {
            hurst,
            eps: self.model.epsilon,
            delta: self.delta(),
            horizon: self.model.horizon,
            chain,
            field: Arc::new(diffusion),
            drift,
            warnings: warning.into_iter().collect(),
        })
    }

    /// Copy with defaults written out and `delta` replaced by its value.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.model.delta = DeltaSetting::Value(self.delta());
        c
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
