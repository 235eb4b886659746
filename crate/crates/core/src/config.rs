//! TOML run configuration.
//!
//! ```toml
//! design = "parallel-gaussian"   # or "thompson"
//! n_sims = 50000
//! delta = 0.01
//! master_seed = 20240611
//!
//! [region]
//! lower = [-1.0, -1.0]
//! upper = [0.0, 0.0]
//! steps = [32, 32]
//! ```
//!
//! Hypotheses default to the design's own; design parameters default to the
//! reference configurations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{default_ladder, BoundOptions, RateBound};
use crate::designs::{ParallelGaussianDesign, ThompsonDesign, TrialDesign};
use crate::domain::{build_grid, Direction, Grid, Hypothesis, Region};
use crate::engine::DEFAULT_BATCH_SIZE;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignId {
    ParallelGaussian,
    Thompson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceChoice {
    #[default]
    Upper,
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub steps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisConfig {
    pub coord: usize,
    pub cutoff: f64,
    /// `"<="` or `">="`: the null set is θ[coord] REL cutoff.
    pub direction: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianConfig {
    pub n_arms: usize,
    pub n_per_arm: u64,
    pub sigma: f64,
    pub mu0: f64,
    pub alpha: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self {
            n_arms: 2,
            n_per_arm: 10,
            sigma: 1.0,
            mu0: 0.0,
            alpha: 0.025,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThompsonConfig {
    pub n_arms: usize,
    pub n_patients: u64,
    pub p0: f64,
    pub threshold: f64,
}

impl Default for ThompsonConfig {
    fn default() -> Self {
        Self {
            n_arms: 2,
            n_patients: 100,
            p0: 0.6,
            threshold: 0.95,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Explicit ladder; overrides the min/max/points triple.
    pub ladder: Option<Vec<f64>>,
    pub ladder_min: Option<f64>,
    pub ladder_max: Option<f64>,
    pub ladder_points: Option<usize>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedesignConfig {
    pub alpha: f64,
    /// Upper surface of the replacement design.
    pub g2_plus: PathBuf,
    /// Lower surface of the original remainder.
    pub g1_minus: PathBuf,
    /// Upper surface of the error already spent.
    pub g0_plus: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: DesignId,
    pub n_sims: u64,
    pub delta: f64,
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
    #[serde(default = "default_split")]
    pub budget_split: f64,
    #[serde(default)]
    pub normal_approx: bool,
    #[serde(default)]
    pub surface: SurfaceChoice,
    /// Per-corner deterministic caps on the linear term.
    pub det_caps: Option<Vec<f64>>,
    pub region: RegionConfig,
    pub hypotheses: Option<Vec<HypothesisConfig>>,
    #[serde(default)]
    pub gaussian: GaussianConfig,
    #[serde(default)]
    pub thompson: ThompsonConfig,
    pub calibrate: Option<CalibrateConfig>,
    pub redesign: Option<RedesignConfig>,
}

fn default_batch() -> u64 {
    DEFAULT_BATCH_SIZE
}

fn default_split() -> f64 {
    0.5
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// A configured design, concrete so callers can reach design-specific helpers.
#[derive(Clone, Debug)]
pub enum BuiltDesign {
    Gaussian(ParallelGaussianDesign),
    Thompson(ThompsonDesign),
}

impl BuiltDesign {
    pub fn as_dyn(&self) -> &dyn TrialDesign {
        match self {
            BuiltDesign::Gaussian(d) => d,
            BuiltDesign::Thompson(d) => d,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 8 bytes of SHA-256 over the canonical TOML rendering.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn seed(&self) -> Result<u64> {
        self.master_seed
            .ok_or_else(|| cfg_err("master_seed is required (set it in the config or pass --seed)"))
    }

    pub fn build_design(&self) -> Result<BuiltDesign> {
        Ok(match self.design {
            DesignId::ParallelGaussian => {
                let g = &self.gaussian;
                BuiltDesign::Gaussian(
                    ParallelGaussianDesign::new(g.n_arms, g.n_per_arm, g.sigma, g.mu0, g.alpha)?
                        .with_tuning(self.lambda),
                )
            }
            DesignId::Thompson => {
                let t = &self.thompson;
                BuiltDesign::Thompson(
                    ThompsonDesign::new(t.n_arms, t.n_patients, t.p0, t.threshold)?.with_tuning(self.lambda),
                )
            }
        })
    }

    pub fn hypotheses(&self, design: &dyn TrialDesign) -> Result<Vec<Hypothesis>> {
        match &self.hypotheses {
            None => Ok(design.default_hypotheses()),
            Some(hs) => hs
                .iter()
                .map(|h| {
                    let direction = match h.direction.trim() {
                        "<=" => Direction::AtMost,
                        ">=" => Direction::AtLeast,
                        other => return Err(cfg_err(format!("unknown hypothesis direction {other:?}"))),
                    };
                    Ok(Hypothesis {
                        coord_index: h.coord,
                        cutoff: h.cutoff,
                        direction,
                    })
                })
                .collect(),
        }
    }

    pub fn build_grid(&self, design: &dyn TrialDesign) -> Result<Grid> {
        let region = Region::new(self.region.lower.clone(), self.region.upper.clone())?;
        build_grid(region, &self.region.steps, &self.hypotheses(design)?)
    }

    pub fn bound_options(&self) -> BoundOptions {
        BoundOptions {
            split: self.budget_split,
            rate_bound: if self.normal_approx {
                RateBound::NormalApprox
            } else {
                RateBound::ClopperPearson
            },
            det_caps: self.det_caps.clone(),
            ..BoundOptions::default()
        }
    }

    pub fn ladder(&self) -> Result<Vec<f64>> {
        let c = self
            .calibrate
            .as_ref()
            .ok_or_else(|| cfg_err("calibrate needs a [calibrate] section"))?;
        if let Some(l) = &c.ladder {
            return Ok(l.clone());
        }
        let (lo, hi) = match self.design {
            DesignId::ParallelGaussian => (-1.0, 1.0),
            DesignId::Thompson => (-0.04, 0.04),
        };
        Ok(default_ladder(
            c.ladder_min.unwrap_or(lo),
            c.ladder_max.unwrap_or(hi),
            c.ladder_points.unwrap_or(41),
        ))
    }

    /// Checks that do not need a built design.
    pub fn validate(&self) -> Result<()> {
        if self.n_sims == 0 {
            return Err(cfg_err("n_sims must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(cfg_err(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size must be at least 1"));
        }
        if self.region.steps.contains(&0) {
            return Err(cfg_err("steps must be at least 1 in every dimension"));
        }
        if !(self.budget_split > 0.0 && self.budget_split < 1.0) {
            return Err(cfg_err("budget_split must be in (0, 1)"));
        }
        if !self.lambda.is_finite() {
            return Err(cfg_err("lambda must be finite"));
        }
        self.seed()?;
        Ok(())
    }
}
