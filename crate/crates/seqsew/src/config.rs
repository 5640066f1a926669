//! The single JSON document every CLI command reads.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batch::RiskVariant;
use crate::bounds::{BoundInputs, BoundName, Search, ALLOWANCE_REPLAYS};
use crate::datagen::{NoiseFamily, ScenarioSpec};
use crate::error::{Error, Result};
use crate::forecasters::ForecasterSpec;
use crate::posterior::BackendConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauRule {
    /// 1/√(dT)
    InvSqrtDt,
    /// 1/√(ΣₜΣⱼφⱼ²(xₜ)), the Gram trace of the sequence
    InvSqrtGram,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauChoice {
    Value(f64),
    Rule(TauRule),
}

impl Default for TauChoice {
    fn default() -> Self {
        TauChoice::Rule(TauRule::InvSqrtDt)
    }
}

/// The `forecaster` block. `cor3` and the τ rules are resolved against the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForecasterConfig {
    Fixed {
        b: f64,
        eta: f64,
        tau: f64,
    },
    Cor3 {
        #[serde(default)]
        b_y: Option<f64>,
        #[serde(default)]
        b_phi: Option<f64>,
    },
    Adaptive {
        #[serde(default)]
        tau: TauChoice,
    },
    Auto,
    Ridge {
        lambda: f64,
    },
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig::Adaptive { tau: TauChoice::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub spec: ForecasterSpec,
    pub inputs: BoundInputs,
    pub warnings: Vec<String>,
}

fn gram_trace(features: &[Vec<f64>]) -> f64 {
    features.iter().flatten().map(|v| v * v).sum()
}

impl ForecasterConfig {
    pub fn resolve(&self, features: &[Vec<f64>], ys: &[f64]) -> Result<Resolved> {
        let d = features.first().map_or(0, |f| f.len());
        let mut warnings = Vec::new();
        let mut inputs = BoundInputs::default();
        let spec = match *self {
            ForecasterConfig::Fixed { b, eta, tau } => {
                if eta > 1.0 / (8.0 * b * b) * (1.0 + 1e-12) {
                    warnings.push(format!("eta = {eta} exceeds 1/(8B²) = {}; the fixed-tuning regret bound does not apply", 1.0 / (8.0 * b * b)));
                }
                ForecasterSpec::Fixed { b, eta, tau }
            }
            ForecasterConfig::Cor3 { b_y, b_phi } => {
                let b_y = b_y.unwrap_or_else(|| ys.iter().fold(0.0, |m: f64, y| m.max(y.abs())));
                let b_phi = b_phi.unwrap_or_else(|| gram_trace(features));
                if !(b_y > 0.0 && b_phi > 0.0 && b_y.is_finite() && b_phi.is_finite()) {
                    return Err(Error::arg(format!("cor3 tuning needs positive B_y and B_Phi, got {b_y} and {b_phi}")));
                }
                inputs = BoundInputs { b_y: Some(b_y), b_phi: Some(b_phi) };
                ForecasterSpec::Fixed {
                    b: b_y,
                    eta: 1.0 / (8.0 * b_y * b_y),
                    tau: 4.0 * b_y / b_phi.sqrt(),
                }
            }
            ForecasterConfig::Adaptive { tau } => {
                let tau = match tau {
                    TauChoice::Value(v) => v,
                    TauChoice::Rule(TauRule::InvSqrtDt) => 1.0 / ((d * ys.len()) as f64).sqrt(),
                    TauChoice::Rule(TauRule::InvSqrtGram) => {
                        let g = gram_trace(features);
                        if g <= 0.0 {
                            return Err(Error::arg("inv_sqrt_gram needs a nonzero Gram trace"));
                        }
                        inputs.b_phi = Some(g);
                        1.0 / g.sqrt()
                    }
                };
                ForecasterSpec::Adaptive { tau }
            }
            ForecasterConfig::Auto => ForecasterSpec::Auto,
            ForecasterConfig::Ridge { lambda } => ForecasterSpec::Ridge { lambda },
        };
        Ok(Resolved { spec, inputs, warnings })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub bounds: Vec<BoundName>,
    /// Comparators are 0, the best s-sparse vector for s = 1..max_sparsity, and OLS.
    pub max_sparsity: usize,
    pub search: Search,
    pub replays: usize,
    pub b_y: Option<f64>,
    pub b_phi: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            bounds: vec![BoundName::Prop5],
            max_sparsity: 1,
            search: Search::Exact,
            replays: ALLOWANCE_REPLAYS,
            b_y: None,
            b_phi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchVariant {
    Thm10,
    Cor11,
    Cor12,
    Thm13,
    Cor14,
    Remark15,
    Psi,
}

impl BatchVariant {
    pub fn risk(self) -> Option<RiskVariant> {
        Some(match self {
            BatchVariant::Thm10 => RiskVariant::Thm10,
            BatchVariant::Cor11 => RiskVariant::Cor11,
            BatchVariant::Cor12 => RiskVariant::Cor12,
            BatchVariant::Thm13 => RiskVariant::Thm13,
            BatchVariant::Cor14 => RiskVariant::Cor14,
            BatchVariant::Remark15 | BatchVariant::Psi => return None,
        })
    }
}

impl std::str::FromStr for BatchVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::arg(format!("unknown batch variant `{s}`; expected thm10, cor11, cor12, thm13, cor14, remark15 or psi")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSection {
    pub variant: Option<BatchVariant>,
    pub replications: usize,
    pub n_eval: usize,
    pub witness: Option<Vec<f64>>,
    pub mc_draws: usize,
    /// Shift c for the remark15 equivariance check.
    pub shift: f64,
    /// Families for the psi table; empty means the built-in grid.
    pub families: Vec<NoiseFamily>,
    pub psi_replications: usize,
}

impl Default for BatchSection {
    fn default() -> Self {
        Self {
            variant: None,
            replications: 20,
            n_eval: 500,
            witness: None,
            mc_draws: 100_000,
            shift: 1.0,
            families: Vec::new(),
            psi_replications: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub dir: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub forecaster: ForecasterConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub batch: BatchSection,
}

impl RunConfig {
    /// Parses a config; a scenario without its own `seed` takes the top-level one.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: path.display().to_string(),
            line: e.line() as u64,
            message: e.to_string(),
        };
        let mut v: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        if let Some(obj) = v.as_object_mut() {
            let seed = obj.get("seed").cloned().unwrap_or(serde_json::Value::from(0u64));
            if let Some(sc) = obj.get_mut("scenario").and_then(|s| s.as_object_mut()) {
                sc.entry("seed").or_insert(seed);
            }
        }
        serde_json::from_value(v).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Seed for the forecaster's own randomness, kept apart from the data streams.
    pub fn forecaster_seed(&self) -> u64 {
        self.seed ^ 0x5851_F42D_4C95_7F2D
    }
}
