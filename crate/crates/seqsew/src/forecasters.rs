//! Online forecasters sharing one protocol: `predict(φ(xₜ))` then `observe(yₜ)`.
//!
//! * [`SeqSewFixed`]: fixed clipping B, inverse temperature η and prior scale τ.
//! * [`SeqSewAdaptive`]: dyadic data-driven B, η = 1/(8B²), fixed τ.
//! * [`SeqSewAuto`]: restarts the adaptive forecaster with τ_r = 1/(e^{2^r} − 1)
//!   whenever γₜ = ln(1 + √(Σₛ‖φ(xₛ)‖²)) crosses 2^r.
//! * [`Ridge`]: follow-the-regularized-leader least squares, for comparison.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::Dictionary;
use crate::error::{Error, Result};
use crate::posterior::{BackendConfig, Observation, PosteriorCloud};
use crate::prior::SparsityPrior;

/// Parameters a run was produced with; also the `forecaster` block of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForecasterSpec {
    Fixed { b: f64, eta: f64, tau: f64 },
    Adaptive { tau: f64 },
    Auto,
    Ridge { lambda: f64 },
}

impl ForecasterSpec {
    pub fn build(&self, dim: usize, backend: &BackendConfig, seed: u64) -> Result<Box<dyn Forecaster + Send>> {
        Ok(match *self {
            ForecasterSpec::Fixed { b, eta, tau } => Box::new(SeqSewFixed::new(b, eta, tau, dim, backend, seed)?),
            ForecasterSpec::Adaptive { tau } => Box::new(SeqSewAdaptive::new(tau, dim, backend, seed)?),
            ForecasterSpec::Auto => Box::new(SeqSewAuto::new(dim, backend, seed)?),
            ForecasterSpec::Ridge { lambda } => Box::new(Ridge::new(lambda, dim)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForecasterSpec::Fixed { .. } => "fixed",
            ForecasterSpec::Adaptive { .. } => "adaptive",
            ForecasterSpec::Auto => "auto",
            ForecasterSpec::Ridge { .. } => "ridge",
        }
    }
}

/// Adaptation state in force for the round being predicted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundState {
    pub center: f64,
    pub threshold: f64,
    pub eta: f64,
    pub regime: usize,
    pub ess: f64,
}

pub trait Forecaster {
    fn dim(&self) -> usize;
    /// Prediction for the current round from its features and the past only.
    fn predict(&mut self, features: &[f64]) -> Result<f64>;
    /// Reveals the outcome of the round last predicted.
    fn observe(&mut self, y: f64) -> Result<()>;
    fn state(&self) -> RoundState;
    fn spec(&self) -> ForecasterSpec;
}

fn check_features(dim: usize, features: &[f64]) -> Result<()> {
    if features.len() != dim {
        return Err(Error::arg(format!("expected {dim} features, got {}", features.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("features must be finite"));
    }
    Ok(())
}

fn begin(pending: &mut Option<Vec<f64>>, dim: usize, features: &[f64]) -> Result<()> {
    if pending.is_some() {
        return Err(Error::State("predict called twice without observe".into()));
    }
    check_features(dim, features)?;
    *pending = Some(features.to_vec());
    Ok(())
}

fn finish(pending: &mut Option<Vec<f64>>, y: f64) -> Result<Vec<f64>> {
    if !y.is_finite() {
        return Err(Error::arg("observation must be finite"));
    }
    pending.take().ok_or_else(|| Error::State("observe called before predict".into()))
}

/// ⌈log₂ z⌉ for finite z > 0, exact at powers of two.
pub fn dyadic_exponent(z: f64) -> i32 {
    debug_assert!(z > 0.0 && z.is_finite());
    let (m, e) = libm::frexp(z);
    if m == 0.5 {
        e - 1
    } else {
        e
    }
}

/// `2^⌈log₂ z⌉`, or 0 when z = 0.
pub fn dyadic_square(z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        libm::ldexp(1.0, dyadic_exponent(z))
    }
}

/// SeqSEW with fixed B, η, τ.
#[derive(Debug, Clone)]
pub struct SeqSewFixed {
    posterior: PosteriorCloud,
    b: f64,
    eta: f64,
    pending: Option<Vec<f64>>,
}

impl SeqSewFixed {
    pub fn new(b: f64, eta: f64, tau: f64, dim: usize, backend: &BackendConfig, seed: u64) -> Result<Self> {
        for (name, v) in [("B", b), ("eta", eta), ("tau", tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let prior = SparsityPrior::new(tau, dim)?;
        Ok(Self {
            posterior: PosteriorCloud::new(prior, backend, seed)?,
            b,
            eta,
            pending: None,
        })
    }

    pub fn posterior(&self) -> &PosteriorCloud {
        &self.posterior
    }
}

impl Forecaster for SeqSewFixed {
    fn dim(&self) -> usize {
        self.posterior.dim()
    }

    fn predict(&mut self, features: &[f64]) -> Result<f64> {
        let dim = self.dim();
        begin(&mut self.pending, dim, features)?;
        self.posterior.predict(features, self.b)
    }

    fn observe(&mut self, y: f64) -> Result<()> {
        let features = finish(&mut self.pending, y)?;
        self.posterior.update(Observation::new(features, y, self.b), self.eta)
    }

    fn state(&self) -> RoundState {
        RoundState {
            center: 0.0,
            threshold: self.b,
            eta: self.eta,
            regime: 0,
            ess: self.posterior.ess(),
        }
    }

    fn spec(&self) -> ForecasterSpec {
        ForecasterSpec::Fixed {
            b: self.b,
            eta: self.eta,
            tau: self.posterior.prior().tau(),
        }
    }
}

/// SeqSEW with the dyadic threshold schedule. Clipping is around `center`
/// (0 for the standard algorithm; the first observation in the offset variant).
#[derive(Debug, Clone)]
pub struct SeqSewAdaptive {
    posterior: PosteriorCloud,
    center: f64,
    max_sq: f64,
    b_sq: f64,
    b: f64,
    eta: f64,
    pending: Option<Vec<f64>>,
}

impl SeqSewAdaptive {
    pub fn new(tau: f64, dim: usize, backend: &BackendConfig, seed: u64) -> Result<Self> {
        Self::with_center(tau, dim, backend, seed, 0.0)
    }

    pub fn with_center(tau: f64, dim: usize, backend: &BackendConfig, seed: u64, center: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::arg("clipping center must be finite"));
        }
        let prior = SparsityPrior::new(tau, dim)?;
        Ok(Self {
            posterior: PosteriorCloud::new(prior, backend, seed)?,
            center,
            max_sq: 0.0,
            b_sq: 0.0,
            b: 0.0,
            eta: f64::INFINITY,
            pending: None,
        })
    }

    pub fn posterior(&self) -> &PosteriorCloud {
        &self.posterior
    }

    pub fn threshold(&self) -> f64 {
        self.b
    }

    pub fn threshold_sq(&self) -> f64 {
        self.b_sq
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn tau(&self) -> f64 {
        self.posterior.prior().tau()
    }
}

impl Forecaster for SeqSewAdaptive {
    fn dim(&self) -> usize {
        self.posterior.dim()
    }

    fn predict(&mut self, features: &[f64]) -> Result<f64> {
        let dim = self.dim();
        begin(&mut self.pending, dim, features)?;
        self.posterior.predict_centered(features, self.center, self.b)
    }

    fn observe(&mut self, y: f64) -> Result<()> {
        let features = finish(&mut self.pending, y)?;
        let obs = Observation {
            features,
            y,
            center: self.center,
            half_width: self.b,
        };
        let r = y - self.center;
        self.max_sq = self.max_sq.max(r * r);
        self.b_sq = dyadic_square(self.max_sq);
        self.b = self.b_sq.sqrt();
        self.eta = if self.b_sq > 0.0 { 1.0 / (8.0 * self.b_sq) } else { f64::INFINITY };
        self.posterior.update(obs, self.eta)
    }

    fn state(&self) -> RoundState {
        RoundState {
            center: self.center,
            threshold: self.b,
            eta: self.eta,
            regime: 0,
            ess: self.posterior.ess(),
        }
    }

    fn spec(&self) -> ForecasterSpec {
        ForecasterSpec::Adaptive { tau: self.tau() }
    }
}

/// Highest regime index; 2^10 > 700 would overflow e^{2^r}. Reaching it needs
/// a Gram trace above e^{1022}.
pub const MAX_REGIME: usize = 9;

/// τ_r = 1/(e^{2^r} − 1).
pub fn regime_tau(r: usize) -> f64 {
    let r = r.min(MAX_REGIME);
    1.0 / (2f64.powi(r as i32)).exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpan {
    pub regime: usize,
    pub tau: f64,
    /// First and last round (1-based, inclusive); `end` is `None` while open.
    pub start: usize,
    pub end: Option<usize>,
}

/// Parameter-free SeqSEW: adaptive forecaster restarted on a γ-doubling schedule.
#[derive(Debug, Clone)]
pub struct SeqSewAuto {
    dim: usize,
    backend: BackendConfig,
    seed: u64,
    regime: usize,
    t: usize,
    gram: f64,
    gammas: Vec<f64>,
    inner: SeqSewAdaptive,
    spans: Vec<RegimeSpan>,
    closing: bool,
}

fn regime_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl SeqSewAuto {
    pub fn new(dim: usize, backend: &BackendConfig, seed: u64) -> Result<Self> {
        let tau = regime_tau(0);
        Ok(Self {
            dim,
            backend: backend.clone(),
            seed,
            regime: 0,
            t: 0,
            gram: 0.0,
            gammas: Vec::new(),
            inner: SeqSewAdaptive::new(tau, dim, backend, regime_seed(seed, 0))?,
            spans: vec![RegimeSpan { regime: 0, tau, start: 1, end: None }],
            closing: false,
        })
    }

    pub fn regime(&self) -> usize {
        self.regime
    }

    pub fn spans(&self) -> &[RegimeSpan] {
        &self.spans
    }

    /// γₜ for every round predicted so far.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn inner(&self) -> &SeqSewAdaptive {
        &self.inner
    }
}

impl Forecaster for SeqSewAuto {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&mut self, features: &[f64]) -> Result<f64> {
        check_features(self.dim, features)?;
        let yhat = self.inner.predict(features)?;
        self.t += 1;
        self.gram += features.iter().map(|v| v * v).sum::<f64>();
        let gamma = self.gram.sqrt().ln_1p();
        self.gammas.push(gamma);
        self.closing = self.regime < MAX_REGIME && gamma > 2f64.powi(self.regime as i32);
        Ok(yhat)
    }

    fn observe(&mut self, y: f64) -> Result<()> {
        self.inner.observe(y)?;
        if self.closing {
            self.closing = false;
            if let Some(last) = self.spans.last_mut() {
                last.end = Some(self.t);
            }
            self.regime += 1;
            let tau = regime_tau(self.regime);
            self.inner = SeqSewAdaptive::new(tau, self.dim, &self.backend, regime_seed(self.seed, self.regime))?;
            self.spans.push(RegimeSpan {
                regime: self.regime,
                tau,
                start: self.t + 1,
                end: None,
            });
        }
        Ok(())
    }

    fn state(&self) -> RoundState {
        RoundState {
            regime: self.regime,
            ..self.inner.state()
        }
    }

    fn spec(&self) -> ForecasterSpec {
        ForecasterSpec::Auto
    }
}

/// Follow-the-regularized-leader least squares: uₜ = argmin Σ_{s<t}(yₛ − u·φₛ)² + λ‖u‖².
#[derive(Debug, Clone)]
pub struct Ridge {
    lambda: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    pending: Option<Vec<f64>>,
}

impl Ridge {
    pub fn new(lambda: f64, dim: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::arg(format!("regularization must be positive, got {lambda}")));
        }
        if dim == 0 {
            return Err(Error::arg("dimension must be at least 1"));
        }
        Ok(Self {
            lambda,
            a: DMatrix::identity(dim, dim) * lambda,
            b: DVector::zeros(dim),
            pending: None,
        })
    }

    pub fn weights(&self) -> DVector<f64> {
        if let Some(ch) = self.a.clone().cholesky() {
            return ch.solve(&self.b);
        }
        let svd = self.a.clone().svd(true, true);
        svd.solve(&self.b, 1e-12).unwrap_or_else(|_| DVector::zeros(self.b.len()))
    }
}

impl Forecaster for Ridge {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn predict(&mut self, features: &[f64]) -> Result<f64> {
        let dim = self.dim();
        begin(&mut self.pending, dim, features)?;
        Ok(self.weights().iter().zip(features).map(|(u, f)| u * f).sum())
    }

    fn observe(&mut self, y: f64) -> Result<()> {
        let features = finish(&mut self.pending, y)?;
        let phi = DVector::from_vec(features);
        self.a += &phi * phi.transpose();
        self.b += &phi * y;
        Ok(())
    }

    fn state(&self) -> RoundState {
        RoundState {
            center: 0.0,
            threshold: f64::NAN,
            eta: f64::NAN,
            regime: 0,
            ess: f64::NAN,
        }
    }

    fn spec(&self) -> ForecasterSpec {
        ForecasterSpec::Ridge { lambda: self.lambda }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub y: f64,
    pub yhat: f64,
    pub loss: f64,
    pub cumloss: f64,
    #[serde(rename = "B_t")]
    pub b_t: f64,
    pub eta_t: f64,
    pub regime: usize,
    pub ess: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: ForecasterSpec,
    pub dim: usize,
    pub records: Vec<RoundRecord>,
    pub features: Vec<Vec<f64>>,
    pub cumulative_loss: f64,
}

impl RunOutput {
    pub fn ys(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.yhat).collect()
    }

    /// Σₜ (yₜ − u·φₜ)² minus nothing: the comparator's cumulative loss on this run.
    pub fn comparator_loss(&self, u: &[f64]) -> f64 {
        self.features
            .iter()
            .zip(&self.records)
            .map(|(phi, r)| {
                let m: f64 = phi.iter().zip(u).map(|(a, b)| a * b).sum();
                (r.y - m) * (r.y - m)
            })
            .sum()
    }
}

/// Online protocol on precomputed feature vectors.
pub fn run_features(forecaster: &mut dyn Forecaster, features: &[Vec<f64>], ys: &[f64]) -> Result<RunOutput> {
    if features.is_empty() {
        return Err(Error::arg("sequence must be nonempty"));
    }
    if features.len() != ys.len() {
        return Err(Error::arg("need one feature vector per observation"));
    }
    let mut records = Vec::with_capacity(ys.len());
    let mut cum = 0.0;
    for (i, (phi, &y)) in features.iter().zip(ys).enumerate() {
        let t = i + 1;
        if phi.len() != forecaster.dim() || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data {
                round: t,
                message: "feature vector has the wrong length or a non-finite entry".into(),
            });
        }
        if !y.is_finite() {
            return Err(Error::Data { round: t, message: "observation is not finite".into() });
        }
        let yhat = forecaster.predict(phi)?;
        let st = forecaster.state();
        if st.threshold.is_finite() && (yhat - st.center).abs() > st.threshold {
            return Err(Error::State(format!(
                "round {t}: prediction {yhat} escapes the clipping interval {} ± {}",
                st.center, st.threshold
            )));
        }
        forecaster.observe(y)?;
        let loss = (y - yhat) * (y - yhat);
        cum += loss;
        records.push(RoundRecord {
            t,
            y,
            yhat,
            loss,
            cumloss: cum,
            b_t: st.threshold,
            eta_t: st.eta,
            regime: st.regime,
            ess: st.ess,
        });
    }
    Ok(RunOutput {
        spec: forecaster.spec(),
        dim: forecaster.dim(),
        records,
        features: features.to_vec(),
        cumulative_loss: cum,
    })
}

/// Online protocol on raw inputs, mapped through `dictionary`.
pub fn run_protocol(forecaster: &mut dyn Forecaster, dictionary: &Dictionary, sequence: &[(Vec<f64>, f64)]) -> Result<RunOutput> {
    if sequence.is_empty() {
        return Err(Error::arg("sequence must be nonempty"));
    }
    let mut features = Vec::with_capacity(sequence.len());
    for (i, (x, _)) in sequence.iter().enumerate() {
        let phi = dictionary.features(x).map_err(|e| Error::Data {
            round: i + 1,
            message: e.to_string(),
        })?;
        features.push(phi);
    }
    let ys: Vec<f64> = sequence.iter().map(|(_, y)| *y).collect();
    run_features(forecaster, &features, &ys)
}
