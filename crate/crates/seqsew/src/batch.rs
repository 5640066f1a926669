//! Online-to-batch conversion: regressors built from one pass of the adaptive
//! forecaster, their risk, and the stochastic risk bounds.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{feature_moments, Dictionary, FeatureMoments, NoiseFamily, Scenario, ScenarioSpec};
use crate::error::{Error, Result};
use crate::forecasters::{Forecaster, SeqSewAdaptive};
use crate::posterior::{BackendConfig, CloudSummary};
use crate::prior::{l0_norm, l1_norm, sparsity_log_term};

pub const BATCH_SCHEMA: &str = "seqsew.batch.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    RandomDesignAverage,
    FixedDesignGrouped,
    Remark15Offset,
}

#[derive(Debug, Clone)]
struct RoundSnapshot {
    cloud: CloudSummary,
    threshold: f64,
}

/// Consecutive rounds sharing one point set and threshold, with averaged weights.
#[derive(Debug, Clone)]
struct Group {
    cloud: CloudSummary,
    threshold: f64,
    rounds: usize,
}

fn design_key(x: &[f64]) -> Vec<u64> {
    // +0.0 folds −0.0 into 0.0
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

#[derive(Debug, Clone)]
pub struct BatchEstimator {
    mode: BatchMode,
    dictionary: Dictionary,
    tau: f64,
    anchor: f64,
    snapshots: Vec<RoundSnapshot>,
    groups: Vec<Group>,
    predictions: Vec<f64>,
    seen: HashMap<Vec<u64>, (f64, usize)>,
}

struct Pass {
    snapshots: Vec<RoundSnapshot>,
    predictions: Vec<f64>,
}

fn online_pass(dict: &Dictionary, xs: &[&Vec<f64>], ys: &[f64], tau: f64, backend: &BackendConfig, seed: u64) -> Result<Pass> {
    let mut f = SeqSewAdaptive::new(tau, dict.dim(), backend, seed)?;
    let mut snapshots = Vec::with_capacity(ys.len());
    let mut predictions = Vec::with_capacity(ys.len());
    for (k, (x, &y)) in xs.iter().zip(ys).enumerate() {
        let phi = dict.features(x).map_err(|e| Error::Data { round: k + 1, message: e.to_string() })?;
        if !y.is_finite() {
            return Err(Error::Data { round: k + 1, message: "observation is not finite".into() });
        }
        snapshots.push(RoundSnapshot {
            cloud: f.posterior().summary(),
            threshold: f.threshold(),
        });
        predictions.push(f.predict(&phi)?);
        f.observe(y)?;
    }
    Ok(Pass { snapshots, predictions })
}

fn group_snapshots(snapshots: &[RoundSnapshot]) -> Vec<Group> {
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (k, s) in snapshots.iter().enumerate() {
        match groups.last_mut() {
            Some((start, end))
                if Arc::ptr_eq(&snapshots[*start].cloud.points, &s.cloud.points)
                    && snapshots[*start].threshold == s.threshold =>
            {
                *end = k + 1
            }
            _ => groups.push((k, k + 1)),
        }
    }
    groups
        .into_iter()
        .map(|(a, b)| {
            let first = &snapshots[a];
            let n = first.cloud.len();
            let mut w = vec![0.0; n];
            if first.threshold > 0.0 {
                for s in &snapshots[a..b] {
                    for (acc, v) in w.iter_mut().zip(s.cloud.weights.iter()) {
                        *acc += v;
                    }
                }
                let norm = (b - a) as f64;
                w.iter_mut().for_each(|v| *v /= norm);
            }
            Group {
                cloud: CloudSummary {
                    dim: first.cloud.dim,
                    points: first.cloud.points.clone(),
                    weights: Arc::new(w),
                },
                threshold: first.threshold,
                rounds: b - a,
            }
        })
        .collect()
}

fn check_samples(samples: &[(Vec<f64>, f64)], min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::arg(format!("need at least {min} samples, got {}", samples.len())));
    }
    Ok(())
}

impl BatchEstimator {
    fn build(mode: BatchMode, dict: &Dictionary, tau: f64, anchor: f64, pass: Pass, samples: &[(Vec<f64>, f64)]) -> Self {
        let mut seen: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
        if mode == BatchMode::FixedDesignGrouped {
            for ((x, _), yhat) in samples.iter().zip(&pass.predictions) {
                let e = seen.entry(design_key(x)).or_insert((0.0, 0));
                e.0 += yhat;
                e.1 += 1;
            }
        }
        Self {
            mode,
            dictionary: dict.clone(),
            tau,
            anchor,
            groups: group_snapshots(&pass.snapshots),
            snapshots: pass.snapshots,
            predictions: pass.predictions,
            seen,
        }
    }

    pub fn mode(&self) -> BatchMode {
        self.mode
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Y₁ in the offset variant, 0 otherwise.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Number of averaged regressors.
    pub fn rounds(&self) -> usize {
        self.snapshots.len()
    }

    /// Point-set/threshold groups the average is evaluated through.
    pub fn groups(&self) -> usize {
        self.groups.len()
    }

    /// The online predictions of the pass, ŷₜ = f̃ₜ(xₜ) (plus the anchor in offset mode).
    pub fn online_predictions(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p + self.anchor).collect()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.threshold).collect()
    }

    /// f̃ₜ(x) for the k-th averaged round (0-based).
    pub fn round_regressor(&self, k: usize, x: &[f64]) -> Result<f64> {
        let s = self.snapshots.get(k).ok_or_else(|| Error::arg(format!("no round {k}")))?;
        let phi = self.dictionary.features(x)?;
        Ok(self.anchor + s.cloud.clipped_mean(&phi, 0.0, s.threshold))
    }

    /// The averaged regressor f̂(x).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let phi = self.dictionary.features(x)?;
        match self.mode {
            BatchMode::FixedDesignGrouped => Ok(self
                .seen
                .get(&design_key(x))
                .map_or(0.0, |(sum, n)| sum / *n as f64)),
            BatchMode::RandomDesignAverage | BatchMode::Remark15Offset => {
                let total = self.rounds() as f64;
                let mut acc = 0.0;
                for g in &self.groups {
                    acc += g.rounds as f64 / total * g.cloud.clipped_mean(&phi, 0.0, g.threshold);
                }
                Ok(self.anchor + acc)
            }
        }
    }
}

/// Averages the T regressors of one pass of the adaptive forecaster with τ = 1/√(dT).
pub fn fit_random_design(samples: &[(Vec<f64>, f64)], dict: &Dictionary, backend: &BackendConfig, seed: u64) -> Result<BatchEstimator> {
    check_samples(samples, 1)?;
    let tau = 1.0 / ((dict.dim() * samples.len()) as f64).sqrt();
    let xs: Vec<&Vec<f64>> = samples.iter().map(|(x, _)| x).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let pass = online_pass(dict, &xs, &ys, tau, backend, seed)?;
    Ok(BatchEstimator::build(BatchMode::RandomDesignAverage, dict, tau, 0.0, pass, samples))
}

/// Same pass; predicts the mean of the online predictions at each seen design point and 0 elsewhere.
pub fn fit_fixed_design(samples: &[(Vec<f64>, f64)], dict: &Dictionary, backend: &BackendConfig, seed: u64) -> Result<BatchEstimator> {
    check_samples(samples, 1)?;
    let tau = 1.0 / ((dict.dim() * samples.len()) as f64).sqrt();
    let xs: Vec<&Vec<f64>> = samples.iter().map(|(x, _)| x).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let pass = online_pass(dict, &xs, &ys, tau, backend, seed)?;
    Ok(BatchEstimator::build(BatchMode::FixedDesignGrouped, dict, tau, 0.0, pass, samples))
}

/// Offset-clipped variant: round 1 only records Y₁, rounds 2..T forecast Yₜ − Y₁
/// with τ = 1/√(d(T−1)) and the result is shifted back by Y₁, so every
/// prediction lies in [Y₁ − B′ₜ, Y₁ + B′ₜ].
pub fn fit_remark15(samples: &[(Vec<f64>, f64)], dict: &Dictionary, backend: &BackendConfig, seed: u64) -> Result<BatchEstimator> {
    check_samples(samples, 2)?;
    let anchor = samples[0].1;
    if !anchor.is_finite() {
        return Err(Error::Data { round: 1, message: "observation is not finite".into() });
    }
    let rest = &samples[1..];
    let tau = 1.0 / ((dict.dim() * rest.len()) as f64).sqrt();
    let xs: Vec<&Vec<f64>> = rest.iter().map(|(x, _)| x).collect();
    let ys: Vec<f64> = rest.iter().map(|(_, y)| y - anchor).collect();
    let pass = online_pass(dict, &xs, &ys, tau, backend, seed)?;
    Ok(BatchEstimator::build(BatchMode::Remark15Offset, dict, tau, anchor, pass, rest))
}

fn eval_all(est: &BatchEstimator, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| est.predict(x)).collect()
}

/// ∫(f − f̂)² dP^X by Monte Carlo over `n_eval` fresh design draws.
pub fn risk_random<F>(est: &BatchEstimator, truth: F, design: &crate::datagen::Design, n_eval: usize, rng: &mut ChaCha8Rng) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if n_eval < 1 {
        return Err(Error::arg("n_eval must be at least 1"));
    }
    let m = est.dictionary.input_dim();
    let xs: Vec<Vec<f64>> = (0..n_eval).map(|_| design.draw(m, rng)).collect::<Result<_>>()?;
    let preds = eval_all(est, &xs)?;
    let mut acc = 0.0;
    for (x, p) in xs.iter().zip(&preds) {
        let e = truth(x)? - p;
        acc += e * e;
    }
    Ok(acc / n_eval as f64)
}

/// (1/T) Σₜ (f(xₜ) − f̂(xₜ))² over the design points.
pub fn risk_fixed<F>(est: &BatchEstimator, truth: F, points: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if points.is_empty() {
        return Err(Error::arg("need at least one design point"));
    }
    let preds = eval_all(est, points)?;
    let mut acc = 0.0;
    for (x, p) in points.iter().zip(&preds) {
        let e = truth(x)? - p;
        acc += e * e;
    }
    Ok(acc / points.len() as f64)
}

/// ψ_T, the per-round cap on E[max εₜ²]/T for each noise family.
pub fn psi_bound(family: &NoiseFamily, t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::arg("T must be at least 1"));
    }
    family.validate()?;
    let tf = t as f64;
    Ok(match *family {
        NoiseFamily::Bd { b } => b * b / tf,
        NoiseFamily::Sg { sigma2 } => 2.0 * sigma2 * (2.0 * std::f64::consts::E * tf).ln() / tf,
        NoiseFamily::Bem { alpha, m } => ((m + std::f64::consts::E) * tf).ln().powi(2) / (alpha * alpha * tf),
        NoiseFamily::Bm { alpha, m } => m.powf(2.0 / alpha) / tf.powf((alpha - 2.0) / alpha),
    })
}

/// Average of max_{t≤T} Zₜ² over `reps` independent blocks of T draws.
pub fn empirical_max_sq<F: FnMut() -> f64>(mut draw: F, t: usize, reps: usize) -> Result<f64> {
    if reps < 100 {
        return Err(Error::arg(format!("need at least 100 replications, got {reps}")));
    }
    if t < 1 {
        return Err(Error::arg("T must be at least 1"));
    }
    let mut acc = 0.0;
    for _ in 0..reps {
        let mut m: f64 = 0.0;
        for _ in 0..t {
            let z = draw();
            m = m.max(z * z);
        }
        acc += m;
    }
    Ok(acc / reps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskVariant {
    Thm10,
    Cor11,
    Cor12,
    Thm13,
    Cor14,
}

impl RiskVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskVariant::Thm10 => "thm10",
            RiskVariant::Cor11 => "cor11",
            RiskVariant::Cor12 => "cor12",
            RiskVariant::Thm13 => "thm13",
            RiskVariant::Cor14 => "cor14",
        }
    }

    pub fn fixed_design(self) -> bool {
        matches!(self, RiskVariant::Thm13 | RiskVariant::Cor14)
    }
}

impl std::str::FromStr for RiskVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [RiskVariant::Thm10, RiskVariant::Cor11, RiskVariant::Cor12, RiskVariant::Thm13, RiskVariant::Cor14]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown risk bound `{s}`; expected thm10, cor11, cor12, thm13 or cor14")))
    }
}

/// Problem constants entering the risk bounds; which ones are required depends on the variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskInputs {
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    /// Σⱼ‖φⱼ‖²_{L²} (random design) or ΣₜΣⱼφⱼ²(xₜ) (fixed design).
    pub feature_sum: Option<f64>,
    /// E[max_{t≤T} Yₜ²]
    pub e_max_y_sq: Option<f64>,
    /// E[Y]²
    pub mean_y_sq: Option<f64>,
    pub psi: Option<f64>,
    /// ‖f‖∞²
    pub f_sup_sq: Option<f64>,
    pub sigma2: Option<f64>,
    /// max_t f²(xₜ)
    pub max_f_sq: Option<f64>,
}

fn need(v: Option<f64>, name: &str, variant: RiskVariant) -> Result<f64> {
    v.ok_or_else(|| Error::arg(format!("{} needs `{name}`", variant.as_str())))
}

/// Risk bound right-hand side at comparator `u` whose approximation error
/// (‖f − u·φ‖² in L² or on the design) is `approx_error`.
pub fn risk_bound_rhs(variant: RiskVariant, u: &[f64], approx_error: f64, inp: &RiskInputs) -> Result<f64> {
    if inp.t < 1 || inp.d < 1 {
        return Err(Error::arg("T and d must be positive"));
    }
    if u.len() != inp.d {
        return Err(Error::arg(format!("comparator has {} entries, d = {}", u.len(), inp.d)));
    }
    let t = inp.t as f64;
    let dt = (inp.d * inp.t) as f64;
    let sparse = sparsity_log_term(l0_norm(u) as f64, l1_norm(u), dt.sqrt());
    let feat = need(inp.feature_sum, "feature_sum", variant)?;
    Ok(match variant {
        RiskVariant::Thm10 | RiskVariant::Thm13 => {
            let m = need(inp.e_max_y_sq, "e_max_y_sq", variant)? / t;
            let ft = if variant == RiskVariant::Thm10 { feat / dt } else { feat / (dt * t) };
            approx_error + 64.0 * m * sparse + ft + 32.0 * m
        }
        RiskVariant::Cor11 => {
            let k = need(inp.mean_y_sq, "mean_y_sq", variant)? / t + need(inp.psi, "psi", variant)?;
            approx_error + 128.0 * k * sparse + feat / dt + 64.0 * k
        }
        RiskVariant::Cor12 => {
            let k = need(inp.f_sup_sq, "f_sup_sq", variant)?
                + 2.0 * need(inp.sigma2, "sigma2", variant)? * (2.0 * std::f64::consts::E * t).ln();
            approx_error + 128.0 * k / t * sparse + feat / dt + 64.0 * k / t
        }
        RiskVariant::Cor14 => {
            let k = need(inp.max_f_sq, "max_f_sq", variant)? / t + need(inp.psi, "psi", variant)?;
            approx_error + 128.0 * k * sparse + feat / (dt * t) + 64.0 * k
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub variant: RiskVariant,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_eval")]
    pub n_eval: usize,
    /// Extra comparator to try besides 0 and the true coefficients.
    #[serde(default)]
    pub witness: Option<Vec<f64>>,
    #[serde(default = "default_mc")]
    pub mc_draws: usize,
}

fn default_reps() -> usize {
    20
}
fn default_eval() -> usize {
    500
}
fn default_mc() -> usize {
    100_000
}

impl BatchConfig {
    pub fn new(variant: RiskVariant) -> Self {
        Self {
            variant,
            replications: default_reps(),
            n_eval: default_eval(),
            witness: None,
            mc_draws: default_mc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub schema: String,
    pub variant: RiskVariant,
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub family: String,
    pub measured_risk: f64,
    pub risk_std_error: f64,
    pub mc_allowance: f64,
    pub rhs: f64,
    pub witness: Vec<f64>,
    pub pass: bool,
    /// "measured": E[max Y²] is the replication average of max Yₜ².
    pub e_max_y_sq: f64,
    pub e_max_y_sq_source: String,
    pub feature_moments_exact: bool,
    pub replications: Vec<f64>,
}

fn derive_seed(seed: u64, k: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Replicated risk experiment: each replication redraws the data (scenario seed
/// varied), fits once and measures risk; the bound is evaluated at the best of
/// the candidate comparators {0, u_true, witness}.
pub fn run_experiment(scenario: &ScenarioSpec, backend: &BackendConfig, cfg: &BatchConfig, seed: u64) -> Result<BatchResult> {
    if cfg.replications < 1 {
        return Err(Error::arg("need at least one replication"));
    }
    let base = Scenario::new(scenario)?;
    let variant = cfg.variant;
    if variant.fixed_design() == scenario.design.is_iid() {
        return Err(Error::arg(format!(
            "{} needs a {} design",
            variant.as_str(),
            if variant.fixed_design() { "fixed" } else { "random (i.i.d.)" }
        )));
    }
    let dict = base.dictionary().clone();
    let (t, d) = (scenario.t, scenario.d);

    struct Rep {
        risk: f64,
        max_y_sq: f64,
    }
    let reps: Vec<Rep> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|k| {
            let mut spec = scenario.clone();
            spec.seed = derive_seed(scenario.seed, k, 1);
            if spec.u_true.is_none() {
                spec.u_true = Some(base.truth.u.clone());
                spec.s = None;
            }
            let sc = Scenario::new(&spec)?;
            let samples = sc.generate()?;
            let max_y_sq = samples.iter().map(|(_, y)| y * y).fold(0.0, f64::max);
            let fseed = derive_seed(seed, k, 2);
            let truth = |x: &[f64]| sc.truth.eval(x);
            let risk = if variant.fixed_design() {
                let est = fit_fixed_design(&samples, &dict, backend, fseed)?;
                let pts: Vec<Vec<f64>> = samples.iter().map(|(x, _)| x.clone()).collect();
                risk_fixed(&est, truth, &pts)?
            } else {
                let est = fit_random_design(&samples, &dict, backend, fseed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k, 3));
                risk_random(&est, truth, &scenario.design, cfg.n_eval, &mut rng)?
            };
            Ok(Rep { risk, max_y_sq })
        })
        .collect::<Result<_>>()?;

    let risks: Vec<f64> = reps.iter().map(|r| r.risk).collect();
    let (measured, se) = mean_se(&risks);
    let e_max_y_sq = reps.iter().map(|r| r.max_y_sq).sum::<f64>() / reps.len() as f64;

    let truth = &base.truth;
    let (moments, exact) = if variant.fixed_design() {
        let pts = base.inputs()?;
        (FeatureMoments::from_points(&dict, &pts)?, true)
    } else {
        let m = feature_moments(&dict, &scenario.design, cfg.mc_draws, derive_seed(seed, 0, 4))?;
        let exact = m.exact;
        (m, exact)
    };
    let noise = scenario.noise;
    let psi = match &noise {
        Some(n) => psi_bound(n, t)?,
        None => 0.0,
    };
    let mut inputs = RiskInputs {
        t,
        d,
        feature_sum: Some(moments.gram.trace()),
        e_max_y_sq: Some(e_max_y_sq),
        mean_y_sq: Some(moments.truth_mean(truth).powi(2)),
        psi: Some(psi),
        f_sup_sq: truth.sup_bound().map(|s| s * s),
        sigma2: match noise {
            None => Some(0.0),
            Some(NoiseFamily::Sg { sigma2 }) => Some(sigma2),
            Some(_) => None,
        },
        max_f_sq: None,
    };
    if variant.fixed_design() {
        let pts = base.inputs()?;
        inputs.feature_sum = Some(moments.gram.trace() * t as f64);
        let mut mf: f64 = 0.0;
        for x in &pts {
            mf = mf.max(truth.eval(x)?.powi(2));
        }
        inputs.max_f_sq = Some(mf);
    }
    let mut candidates = vec![vec![0.0; d], truth.u.clone()];
    if let Some(w) = &cfg.witness {
        candidates.push(w.clone());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for u in candidates {
        let approx = moments.approx_error(truth, &u);
        let rhs = risk_bound_rhs(variant, &u, approx, &inputs)?;
        if best.as_ref().is_none_or(|(r, _)| rhs < *r) {
            best = Some((rhs, u));
        }
    }
    let (rhs, witness) = best.expect("candidates are nonempty");
    let allowance = 3.0 * se;
    Ok(BatchResult {
        schema: BATCH_SCHEMA.into(),
        variant,
        t,
        d,
        family: noise.map_or("none".into(), |n| n.name().into()),
        measured_risk: measured,
        risk_std_error: se,
        mc_allowance: allowance,
        rhs,
        witness,
        pass: measured <= rhs + allowance,
        e_max_y_sq,
        e_max_y_sq_source: "measured".into(),
        feature_moments_exact: exact,
        replications: risks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheck {
    pub shift: f64,
    pub points: usize,
    /// max over evaluation points of |f̂_shifted(x) − f̂(x) − c|
    pub max_deviation: f64,
}

/// Fits the offset variant on the scenario data and on the data shifted by `shift`,
/// with matched seeds, and compares predictions on `n_eval` design points.
pub fn remark15_shift_check(scenario: &ScenarioSpec, backend: &BackendConfig, shift: f64, n_eval: usize, seed: u64) -> Result<ShiftCheck> {
    let sc = Scenario::new(scenario)?;
    let samples = sc.generate()?;
    let shifted: Vec<(Vec<f64>, f64)> = samples.iter().map(|(x, y)| (x.clone(), y + shift)).collect();
    let a = fit_remark15(&samples, sc.dictionary(), backend, seed)?;
    let b = fit_remark15(&shifted, sc.dictionary(), backend, seed)?;
    let mut pts: Vec<Vec<f64>> = samples.iter().map(|(x, _)| x.clone()).collect();
    if scenario.design.is_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 5));
        for _ in 0..n_eval {
            pts.push(scenario.design.draw(sc.dictionary().input_dim(), &mut rng)?);
        }
    }
    let pa = eval_all(&a, &pts)?;
    let pb = eval_all(&b, &pts)?;
    let max_deviation = pa.iter().zip(&pb).map(|(x, y)| (y - x - shift).abs()).fold(0.0, f64::max);
    Ok(ShiftCheck {
        shift,
        points: pts.len(),
        max_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub family: NoiseFamily,
    #[serde(rename = "T")]
    pub t: usize,
    pub psi: f64,
    /// T·ψ_T, the cap on E[max εₜ²].
    pub bound: f64,
    pub measured: f64,
    pub pass: bool,
}

pub fn default_family_grid() -> Vec<NoiseFamily> {
    vec![
        NoiseFamily::Bd { b: 1.0 },
        NoiseFamily::Bd { b: 3.0 },
        NoiseFamily::Sg { sigma2: 0.25 },
        NoiseFamily::Sg { sigma2: 1.0 },
        NoiseFamily::Sg { sigma2: 4.0 },
        NoiseFamily::Bem { alpha: 1.0, m: 2.0 },
        NoiseFamily::Bem { alpha: 2.0, m: 5.0 },
        NoiseFamily::Bm { alpha: 3.0, m: 1.0 },
        NoiseFamily::Bm { alpha: 4.0, m: 2.0 },
    ]
}

/// Empirical E[max εₜ²] against T·ψ_T for each family.
pub fn psi_table(families: &[NoiseFamily], t: usize, reps: usize, seed: u64) -> Result<Vec<PsiRow>> {
    families
        .par_iter()
        .enumerate()
        .map(|(k, fam)| {
            let psi = psi_bound(fam, t)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, 6));
            let measured = empirical_max_sq(|| fam.sample(&mut rng), t, reps)?;
            let bound = psi * t as f64;
            Ok(PsiRow {
                family: *fam,
                t,
                psi,
                bound,
                measured,
                pass: measured <= bound,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{DictionaryKind, DictionarySpec};
    use approx::assert_abs_diff_eq;

    fn fourier(d: usize) -> Dictionary {
        Dictionary::new(&DictionarySpec::new(DictionaryKind::Fourier, d)).unwrap()
    }

    fn q() -> BackendConfig {
        BackendConfig::quadrature(129)
    }

    fn data(t: usize) -> Vec<(Vec<f64>, f64)> {
        (0..t)
            .map(|k| {
                let x = ((k * 37) % 101) as f64 / 101.0;
                (vec![x], 1.2 * 2f64.sqrt() * (2.0 * std::f64::consts::PI * x).cos() + 0.3 * ((k % 7) as f64 - 3.0) / 3.0)
            })
            .collect()
    }

    #[test]
    fn single_round_average_is_first_regressor() {
        let dict = fourier(1);
        let est = fit_random_design(&data(1), &dict, &q(), 0).unwrap();
        for x in [0.1, 0.6] {
            assert_eq!(est.predict(&[x]).unwrap(), est.round_regressor(0, &[x]).unwrap());
        }
    }

    #[test]
    fn zero_outcomes_give_zero_regressor() {
        let dict = fourier(2);
        let s: Vec<(Vec<f64>, f64)> = (0..10).map(|k| (vec![k as f64 / 10.0], 0.0)).collect();
        let est = fit_random_design(&s, &dict, &q(), 0).unwrap();
        assert_eq!(est.predict(&[0.33]).unwrap(), 0.0);
    }

    #[test]
    fn grouped_average_matches_per_round_average() {
        let dict = fourier(1);
        let est = fit_random_design(&data(25), &dict, &q(), 0).unwrap();
        assert!(est.groups() < est.rounds());
        for x in [0.05, 0.4, 0.77] {
            let direct: f64 = (0..est.rounds()).map(|k| est.round_regressor(k, &[x]).unwrap()).sum::<f64>() / est.rounds() as f64;
            assert_abs_diff_eq!(est.predict(&[x]).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_design_grouping_by_hand() {
        // three rounds, x = a, b, a: f̂(a) is the mean of rounds 1 and 3
        let dict = fourier(1);
        let s = vec![(vec![0.25], 1.0), (vec![0.5], -0.5), (vec![0.25], 2.0)];
        let est = fit_fixed_design(&s, &dict, &q(), 0).unwrap();
        let yh = est.online_predictions();
        assert_eq!(est.predict(&[0.25]).unwrap(), (yh[0] + yh[2]) / 2.0);
        assert_eq!(est.predict(&[0.5]).unwrap(), yh[1]);
        assert_eq!(est.predict(&[0.75]).unwrap(), 0.0);
        // distinct points: f̂(xₜ) = f̃ₜ(xₜ)
        let s2 = vec![(vec![0.1], 1.0), (vec![0.2], 0.5), (vec![0.3], 2.0)];
        let est2 = fit_fixed_design(&s2, &dict, &q(), 0).unwrap();
        for (k, (x, _)) in s2.iter().enumerate() {
            assert_eq!(est2.predict(x).unwrap(), est2.round_regressor(k, x).unwrap());
        }
    }

    #[test]
    fn remark15_examples() {
        let dict = fourier(1);
        assert!(fit_remark15(&data(1), &dict, &q(), 0).is_err());
        let c: Vec<(Vec<f64>, f64)> = (0..6).map(|k| (vec![k as f64 / 6.0], 3.25)).collect();
        let est = fit_remark15(&c, &dict, &q(), 0).unwrap();
        assert_eq!(est.predict(&[0.9]).unwrap(), 3.25);
        let est = fit_remark15(&data(10), &dict, &q(), 0).unwrap();
        assert_eq!(est.online_predictions()[0], data(10)[0].1);
        assert_eq!(est.thresholds()[0], 0.0);
    }

    #[test]
    fn psi_examples() {
        assert_abs_diff_eq!(psi_bound(&NoiseFamily::Sg { sigma2: 1.0 }, 1).unwrap(), 2.0 * (2.0 * std::f64::consts::E).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(psi_bound(&NoiseFamily::Sg { sigma2: 1.0 }, 1).unwrap(), 3.386294, epsilon = 1e-6);
        assert_abs_diff_eq!(psi_bound(&NoiseFamily::Bd { b: 1.0 }, 7).unwrap(), 1.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_bound(&NoiseFamily::Bm { alpha: 4.0, m: 1.0 }, 16).unwrap(), 0.25, epsilon = 1e-15);
        assert!(psi_bound(&NoiseFamily::Bm { alpha: 2.0, m: 1.0 }, 16).is_err());
        assert!(psi_bound(&NoiseFamily::Bd { b: 1.0 }, 0).is_err());
    }

    #[test]
    fn max_sq_examples() {
        assert_eq!(empirical_max_sq(|| 0.0, 5, 100).unwrap(), 0.0);
        assert!(empirical_max_sq(|| 0.0, 5, 99).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = NoiseFamily::Sg { sigma2: 1.0 };
        let v = empirical_max_sq(|| g.sample(&mut rng), 1, 20_000).unwrap();
        assert!((v - 1.0).abs() < 0.05 && v <= 2.0 * (2.0 * std::f64::consts::E).ln());
        let b = NoiseFamily::Bd { b: 2.0 };
        assert!(empirical_max_sq(|| b.sample(&mut rng), 10, 200).unwrap() <= 4.0);
    }

    #[test]
    fn risk_bound_examples() {
        let u0 = [0.0, 0.0];
        let thm10 = RiskInputs { t: 10, d: 2, feature_sum: Some(2.0), e_max_y_sq: Some(5.0), ..Default::default() };
        assert_abs_diff_eq!(
            risk_bound_rhs(RiskVariant::Thm10, &u0, 0.7, &thm10).unwrap(),
            0.7 + 2.0 / 20.0 + 32.0 * 0.5,
            epsilon = 1e-12
        );
        let cor12 = RiskInputs { t: 10, d: 3, feature_sum: Some(3.0), f_sup_sq: Some(0.0), sigma2: Some(1.0), ..Default::default() };
        let want = 1.0 / 10.0 + 64.0 * (2.0 * (20.0 * std::f64::consts::E).ln()) / 10.0;
        assert_abs_diff_eq!(risk_bound_rhs(RiskVariant::Cor12, &[0.0; 3], 0.0, &cor12).unwrap(), want, epsilon = 1e-12);
        // design matching P^X moments: thm13 with ΣₜΣⱼφⱼ² = T·Σⱼ‖φⱼ‖² equals thm10
        let thm13 = RiskInputs { feature_sum: Some(2.0 * 10.0), ..thm10 };
        let u = [1.0, 0.0];
        assert_abs_diff_eq!(
            risk_bound_rhs(RiskVariant::Thm13, &u, 0.2, &thm13).unwrap(),
            risk_bound_rhs(RiskVariant::Thm10, &u, 0.2, &thm10).unwrap(),
            epsilon = 1e-12
        );
        assert!(risk_bound_rhs(RiskVariant::Cor11, &u, 0.2, &thm10).is_err());
    }

    #[test]
    fn risk_of_truth_and_of_zero() {
        let dict = fourier(1);
        let s: Vec<(Vec<f64>, f64)> = (0..4).map(|k| (vec![k as f64 / 4.0], 0.0)).collect();
        let est = fit_random_design(&s, &dict, &q(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zero = |_: &[f64]| Ok(0.0);
        assert_eq!(risk_random(&est, zero, &crate::datagen::Design::IidUniform, 10, &mut rng).unwrap(), 0.0);
        // f = φ₁ with ‖φ₁‖² = 1 against f̂ ≡ 0
        let phi1 = |x: &[f64]| Ok(2f64.sqrt() * (2.0 * std::f64::consts::PI * x[0]).cos());
        let r = risk_random(&est, phi1, &crate::datagen::Design::IidUniform, 40_000, &mut rng).unwrap();
        assert!((r - 1.0).abs() < 3.0 * (0.5f64 / 40_000.0).sqrt() * 2.0, "{r}");
        assert!(risk_random(&est, zero, &crate::datagen::Design::IidUniform, 0, &mut rng).is_err());
        let pts = vec![vec![0.1], vec![0.3]];
        let fixed = fit_fixed_design(&s, &dict, &q(), 0).unwrap();
        let f = |x: &[f64]| Ok(x[0]);
        assert_abs_diff_eq!(risk_fixed(&fixed, f, &pts).unwrap(), (0.01 + 0.09) / 2.0, epsilon = 1e-15);
    }
}
