//! Numerical representations of the exponentially weighted posterior
//!
//! ```text
//! p(du) ∝ exp(−η Σₛ (yₛ − [u·φ(xₛ)]_{Bₛ})²) π_τ(du)
//! ```
//!
//! Every backend keeps the full round history, so a change of η re-weights all
//! past clipped losses exactly. Three backends:
//!
//! * `importance`: prior draws re-weighted in closed form, with ESS-triggered
//!   systematic resampling and Metropolis refresh moves.
//! * `chain`: a population of random-walk Metropolis chains advanced after
//!   every update.
//! * `quadrature`: a deterministic tensor grid (d ≤ 2), used as the oracle.

mod chain;
mod importance;
mod mh;
mod quadrature;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::SparsityPrior;

pub use quadrature::{quadrature_expectation, TensorGrid};

pub const SNAPSHOT_SCHEMA: &str = "seqsew.posterior.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Importance,
    Chain,
    Quadrature,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Importance => "importance",
            BackendKind::Chain => "chain",
            BackendKind::Quadrature => "quadrature",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != BackendKind::Quadrature
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "importance" => Ok(BackendKind::Importance),
            "chain" => Ok(BackendKind::Chain),
            "quadrature" => Ok(BackendKind::Quadrature),
            other => Err(Error::arg(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub n_samples: usize,
    /// Metropolis sweeps per update (chain backend).
    pub burn_in: usize,
    /// Random-walk step in units of τ before calibration.
    pub proposal_scale: f64,
    pub ess_floor: f64,
    /// Metropolis sweeps after each resampling (importance backend).
    pub refresh_sweeps: usize,
    pub grid_points_per_dim: usize,
    pub grid_radius_multiplier: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Importance,
            n_samples: 10_000,
            burn_in: 10,
            proposal_scale: 1.0,
            ess_floor: 0.5,
            refresh_sweeps: 1,
            grid_points_per_dim: 513,
            grid_radius_multiplier: 4.0,
        }
    }
}

impl BackendConfig {
    pub fn quadrature(points_per_dim: usize) -> Self {
        Self {
            kind: BackendKind::Quadrature,
            grid_points_per_dim: points_per_dim,
            ..Self::default()
        }
    }

    pub fn importance(n_samples: usize) -> Self {
        Self {
            kind: BackendKind::Importance,
            n_samples,
            ..Self::default()
        }
    }

    pub fn chain(n_samples: usize, burn_in: usize) -> Self {
        Self {
            kind: BackendKind::Chain,
            n_samples,
            burn_in,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_stochastic() && self.n_samples < 100 {
            return Err(Error::arg(format!("n_samples must be at least 100, got {}", self.n_samples)));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::arg("proposal_scale must be positive"));
        }
        if !(self.ess_floor > 0.0 && self.ess_floor < 1.0) {
            return Err(Error::arg("ess_floor must lie in (0, 1)"));
        }
        if self.grid_points_per_dim < 64 {
            return Err(Error::arg(format!(
                "grid_points_per_dim must be at least 64, got {}",
                self.grid_points_per_dim
            )));
        }
        if !(self.grid_radius_multiplier > 0.0 && self.grid_radius_multiplier.is_finite()) {
            return Err(Error::arg("grid_radius_multiplier must be positive"));
        }
        Ok(())
    }
}

/// `v` projected onto `[center − half_width, center + half_width]`.
#[inline]
pub fn clip(v: f64, center: f64, half_width: f64) -> f64 {
    let lo = center - half_width;
    let hi = center + half_width;
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// One past round as the posterior sees it, including the clipping interval in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub y: f64,
    pub center: f64,
    pub half_width: f64,
}

impl Observation {
    pub fn new(features: Vec<f64>, y: f64, half_width: f64) -> Self {
        Self {
            features,
            y,
            center: 0.0,
            half_width,
        }
    }

    #[inline]
    pub fn loss_at_margin(&self, margin: f64) -> f64 {
        let r = self.y - clip(margin, self.center, self.half_width);
        r * r
    }
}

/// Flat column-friendly copy of the observation history.
#[derive(Debug, Clone, Default)]
pub(crate) struct History {
    pub dim: usize,
    pub features: Vec<f64>,
    pub ys: Vec<f64>,
    pub centers: Vec<f64>,
    pub half_widths: Vec<f64>,
}

impl History {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    fn push(&mut self, obs: &Observation) {
        self.features.extend_from_slice(&obs.features);
        self.ys.push(obs.y);
        self.centers.push(obs.center);
        self.half_widths.push(obs.half_width);
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.features[s * self.dim..(s + 1) * self.dim]
    }

    #[inline]
    pub fn loss(&self, s: usize, margin: f64) -> f64 {
        let r = self.ys[s] - clip(margin, self.centers[s], self.half_widths[s]);
        r * r
    }

    pub fn cum_loss(&self, u: &[f64]) -> f64 {
        (0..self.len()).map(|s| self.loss(s, dot(self.row(s), u))).sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `−η·L` with the +∞ sentinel treated as "no information yet" when L = 0.
#[inline]
pub(crate) fn tempered(eta: f64, loss: f64) -> f64 {
    if loss == 0.0 {
        0.0
    } else {
        -eta * loss
    }
}

const SUM_CHUNK: usize = 1024;

/// Sum of `f(i)` for i in 0..n with a fixed reduction order, whatever the thread count.
pub(crate) fn det_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    let partial: Vec<f64> = (0..n.div_ceil(SUM_CHUNK))
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * SUM_CHUNK).min(n);
            (c * SUM_CHUNK..end).map(&f).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Normalizes log-weights in place into `weights`, returning the Kish ESS.
pub(crate) fn normalize(log_w: &[f64], weights: &mut Vec<f64>) -> Result<f64> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::State("posterior weights degenerated (no finite log-weight)".into()));
    }
    weights.clear();
    weights.extend(log_w.iter().map(|l| (l - m).exp()));
    let z: f64 = weights.iter().sum();
    let mut sq = 0.0;
    for w in weights.iter_mut() {
        *w /= z;
        sq += *w * *w;
    }
    Ok(1.0 / sq)
}

/// Weighted point set frozen at some round; cheap to clone (shared buffers).
#[derive(Debug, Clone)]
pub struct CloudSummary {
    pub dim: usize,
    pub points: Arc<Vec<f64>>,
    pub weights: Arc<Vec<f64>>,
}

impl CloudSummary {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Σᵢ wᵢ [uᵢ·φ] clipped to `[center ± half_width]`.
    pub fn clipped_mean(&self, features: &[f64], center: f64, half_width: f64) -> f64 {
        if half_width == 0.0 {
            return center;
        }
        let v = det_sum(self.len(), |i| {
            self.weights[i] * clip(dot(self.point(i), features), center, half_width)
        });
        clip(v, center, half_width)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PosteriorSnapshot {
    pub schema: String,
    pub backend: BackendKind,
    pub dim: usize,
    pub tau: f64,
    /// `None` encodes the initial η = +∞.
    pub eta: Option<f64>,
    pub rounds: usize,
    pub ess: f64,
    pub samples: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    pub cum_clipped_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Backend {
    Importance(importance::ImportanceState),
    Chain(chain::ChainState),
    Quadrature(quadrature::GridState),
}

/// The posterior pₜ together with its full observation history.
#[derive(Debug, Clone)]
pub struct PosteriorCloud {
    prior: SparsityPrior,
    config: BackendConfig,
    history: History,
    eta: f64,
    backend: Backend,
}

impl PosteriorCloud {
    /// p₁ = π_τ with η₁ = +∞.
    pub fn new(prior: SparsityPrior, config: &BackendConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let backend = match config.kind {
            BackendKind::Importance => Backend::Importance(importance::ImportanceState::new(&prior, config, rng)),
            BackendKind::Chain => Backend::Chain(chain::ChainState::new(&prior, config, rng)),
            BackendKind::Quadrature => Backend::Quadrature(quadrature::GridState::new(&prior, config)?),
        };
        Ok(Self {
            prior,
            config: config.clone(),
            history: History::new(prior.dim()),
            eta: f64::INFINITY,
            backend,
        })
    }

    pub fn prior(&self) -> &SparsityPrior {
        &self.prior
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn kind(&self) -> BackendKind {
        self.config.kind
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rounds(&self) -> usize {
        self.history.len()
    }

    pub fn ess(&self) -> f64 {
        match &self.backend {
            Backend::Importance(s) => s.ess,
            Backend::Chain(s) => s.n as f64,
            Backend::Quadrature(s) => s.ess,
        }
    }

    pub fn summary(&self) -> CloudSummary {
        let dim = self.dim();
        match &self.backend {
            Backend::Importance(s) => CloudSummary { dim, points: s.points.clone(), weights: s.weights.clone() },
            Backend::Chain(s) => CloudSummary { dim, points: s.points.clone(), weights: s.weights.clone() },
            Backend::Quadrature(s) => CloudSummary { dim, points: s.grid.points.clone(), weights: s.weights.clone() },
        }
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim() {
            return Err(Error::arg(format!(
                "feature vector has length {} but the posterior has dimension {}",
                features.len(),
                self.dim()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("feature vector contains a non-finite value"));
        }
        Ok(())
    }

    /// ∫ [u·φ] clipped to `[center ± half_width]` dp(u).
    pub fn predict_centered(&self, features: &[f64], center: f64, half_width: f64) -> Result<f64> {
        self.check_features(features)?;
        if !(half_width >= 0.0) {
            return Err(Error::arg("clipping threshold must be nonnegative"));
        }
        let s = self.summary();
        if s.is_empty() {
            return Err(Error::State("posterior cloud is empty".into()));
        }
        Ok(s.clipped_mean(features, center, half_width))
    }

    /// ŷ = ∫ [u·φ]_B dp(u).
    pub fn predict(&self, features: &[f64], threshold: f64) -> Result<f64> {
        self.predict_centered(features, 0.0, threshold)
    }

    /// Appends one round and moves to inverse temperature `new_eta` (which must not increase).
    pub fn update(&mut self, obs: Observation, new_eta: f64) -> Result<()> {
        self.check_features(&obs.features)?;
        if !obs.y.is_finite() || !obs.center.is_finite() {
            return Err(Error::arg("observation must be finite"));
        }
        if !(obs.half_width >= 0.0) {
            return Err(Error::arg("clipping threshold must be nonnegative"));
        }
        if new_eta.is_nan() || new_eta < 0.0 {
            return Err(Error::arg("inverse temperature must be nonnegative"));
        }
        if new_eta > self.eta {
            return Err(Error::Contract(format!(
                "inverse temperature may not increase ({} -> {new_eta})",
                self.eta
            )));
        }
        self.history.push(&obs);
        self.eta = new_eta;
        match &mut self.backend {
            Backend::Importance(s) => s.absorb(&self.prior, &self.config, &self.history, new_eta),
            Backend::Chain(s) => s.absorb(&self.prior, &self.config, &self.history, new_eta),
            Backend::Quadrature(s) => s.absorb(&self.prior, &self.config, &self.history, new_eta),
        }
    }

    pub fn snapshot(&self) -> PosteriorSnapshot {
        let dim = self.dim();
        let (points, log_w, losses): (&[f64], Vec<f64>, Vec<f64>) = match &self.backend {
            Backend::Importance(s) => (&s.points, s.log_weights.clone(), s.cum_loss.clone()),
            Backend::Chain(s) => {
                let l: Vec<f64> = s.points.chunks(dim).map(|u| self.history.cum_loss(u)).collect();
                (&s.points, vec![0.0; s.n], l)
            }
            Backend::Quadrature(s) => {
                let lw = s
                    .grid
                    .log_prior_weights
                    .iter()
                    .zip(&s.cum_loss)
                    .map(|(p, l)| p + tempered(self.eta, *l))
                    .collect();
                (&s.grid.points, lw, s.cum_loss.clone())
            }
        };
        PosteriorSnapshot {
            schema: SNAPSHOT_SCHEMA.to_string(),
            backend: self.kind(),
            dim,
            tau: self.prior.tau(),
            eta: self.eta.is_finite().then_some(self.eta),
            rounds: self.rounds(),
            ess: self.ess(),
            samples: points.chunks(dim).map(|c| c.to_vec()).collect(),
            log_weights: log_w,
            cum_clipped_loss: losses,
        }
    }

    /// Σₛ clipped loss of `u` over the recorded history.
    pub fn cumulative_loss_at(&self, u: &[f64]) -> f64 {
        self.history.cum_loss(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn prior1(tau: f64) -> SparsityPrior {
        SparsityPrior::new(tau, 1).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(6.0, 0.0, 4.0), 4.0);
        assert_eq!(clip(-6.0, 0.0, 4.0), -4.0);
        assert_eq!(clip(1.5, 0.0, 4.0), 1.5);
        assert_eq!(clip(3.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn importance_init_has_equal_weights() {
        let c = PosteriorCloud::new(prior1(1.0), &BackendConfig::importance(500), 1).unwrap();
        let snap = c.snapshot();
        assert!(snap.log_weights.iter().all(|w| *w == snap.log_weights[0]));
        assert_eq!(snap.eta, None);
        assert_abs_diff_eq!(c.ess(), 500.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_threshold_predicts_center() {
        for kind in [BackendConfig::importance(200), BackendConfig::quadrature(101)] {
            let c = PosteriorCloud::new(prior1(1.0), &kind, 3).unwrap();
            assert_eq!(c.predict(&[2.0], 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadrature_prior_moments() {
        let c = PosteriorCloud::new(prior1(1.0), &BackendConfig::quadrature(1001), 0).unwrap();
        let s = c.summary();
        let mean: f64 = (0..s.len()).map(|i| s.weights[i] * s.point(i)[0]).sum();
        let second: f64 = (0..s.len()).map(|i| s.weights[i] * s.point(i)[0].powi(2)).sum();
        assert!(mean.abs() < 1e-12);
        assert!((second - 1.0).abs() < 1e-3, "{second}");
    }

    #[test]
    fn point_mass_prediction() {
        let s = CloudSummary {
            dim: 1,
            points: Arc::new(vec![2.0]),
            weights: Arc::new(vec![1.0]),
        };
        assert_eq!(s.clipped_mean(&[3.0], 0.0, 4.0), 4.0);
    }

    #[test]
    fn zero_threshold_update_leaves_weights() {
        let mut c = PosteriorCloud::new(prior1(1.0), &BackendConfig::quadrature(129), 0).unwrap();
        let before = c.summary().weights.clone();
        c.update(Observation::new(vec![1.3], 2.0, 0.0), 0.5).unwrap();
        let after = c.summary().weights.clone();
        for (a, b) in before.iter().zip(after.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_increasing_eta() {
        let mut c = PosteriorCloud::new(prior1(1.0), &BackendConfig::importance(200), 0).unwrap();
        c.update(Observation::new(vec![1.0], 1.0, 1.0), 0.1).unwrap();
        let err = c.update(Observation::new(vec![1.0], 1.0, 1.0), 0.2).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_eta_is_prior() {
        let mut c = PosteriorCloud::new(prior1(1.0), &BackendConfig::quadrature(257), 0).unwrap();
        let before = c.predict(&[1.0], 3.0).unwrap();
        c.update(Observation::new(vec![1.0], 5.0, 3.0), 0.0).unwrap();
        assert_abs_diff_eq!(c.predict(&[1.0], 3.0).unwrap(), before, epsilon = 1e-14);
        assert!(before.abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::importance(50);
        assert!(cfg.validate().is_err());
        cfg.n_samples = 100;
        assert!(cfg.validate().is_ok());
        assert!(BackendConfig::quadrature(63).validate().is_err());
        assert!(BackendConfig::quadrature(10).validate().is_err());
        assert!("grid".parse::<BackendKind>().is_err());
    }

    #[test]
    fn snapshot_roundtrips_as_json() {
        let mut c = PosteriorCloud::new(prior1(0.5), &BackendConfig::importance(100), 9).unwrap();
        c.update(Observation::new(vec![1.0], 0.7, 1.0), 0.125).unwrap();
        let snap = c.snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        let back: PosteriorSnapshot = serde_json::from_str(&text).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.schema, SNAPSHOT_SCHEMA);
    }
}
