//! Regret bound evaluators, sparse comparator oracle and verification reports.
//!
//! Every right-hand side follows the convention `0·ln(1 + U/0) = 0`, so the
//! sparsity terms vanish at u = 0.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasters::{dyadic_square, run_features, ForecasterSpec, RunOutput};
use crate::posterior::BackendConfig;
use crate::prior::{l0_norm, l1_norm, sparsity_log_term};

pub const REPORT_SCHEMA: &str = "seqsew.bounds.v1";

/// Largest dictionary for exhaustive support enumeration.
pub const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    #[serde(rename = "T")]
    pub t: usize,
    pub max_y_sq: f64,
    pub gram_trace: f64,
    /// 2^{⌈log₂ max_y_sq⌉}, or 0.
    pub b_t1_sq: f64,
    /// 2 + log₂ ln(e + √gram_trace)
    pub a_t: f64,
}

impl SequenceStats {
    pub fn new(features: &[Vec<f64>], ys: &[f64]) -> Self {
        let max_y_sq = ys.iter().map(|y| y * y).fold(0.0, f64::max);
        let gram_trace: f64 = features.iter().flatten().map(|v| v * v).sum();
        Self {
            t: ys.len(),
            max_y_sq,
            gram_trace,
            b_t1_sq: dyadic_square(max_y_sq),
            a_t: 2.0 + (std::f64::consts::E + gram_trace.sqrt()).ln().log2(),
        }
    }

    pub fn from_run(run: &RunOutput) -> Self {
        Self::new(&run.features, &run.ys())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparator {
    pub u: Vec<f64>,
    pub l0: usize,
    pub l1: f64,
    pub cumulative_loss: f64,
}

impl Comparator {
    pub fn new(u: Vec<f64>, features: &[Vec<f64>], ys: &[f64]) -> Self {
        let cumulative_loss = features
            .iter()
            .zip(ys)
            .map(|(phi, y)| {
                let m: f64 = phi.iter().zip(&u).map(|(a, b)| a * b).sum();
                (y - m) * (y - m)
            })
            .sum();
        Self {
            l0: l0_norm(&u),
            l1: l1_norm(&u),
            u,
            cumulative_loss,
        }
    }

    pub fn zero(features: &[Vec<f64>], ys: &[f64]) -> Self {
        let d = features.first().map_or(0, |f| f.len());
        Self::new(vec![0.0; d], features, ys)
    }

    fn s(&self) -> f64 {
        self.l0 as f64
    }
}

/// s·ln(1 + U/s), continuously extended by 0 at s = 0.
pub fn s_log_term(s: f64, u_norm: f64) -> f64 {
    sparsity_log_term(s, u_norm, 1.0)
}

pub fn prop2_rhs(u: &Comparator, eta: f64, tau: f64, stats: &SequenceStats) -> f64 {
    u.cumulative_loss + 4.0 / eta * sparsity_log_term(u.s(), u.l1, 1.0 / tau) + tau * tau * stats.gram_trace
}

pub fn cor3_rhs(u: &Comparator, b_y: f64, b_phi: f64) -> f64 {
    let b2 = b_y * b_y;
    u.cumulative_loss + 32.0 * b2 * sparsity_log_term(u.s(), u.l1, b_phi.sqrt() / (4.0 * b_y)) + 16.0 * b2
}

pub fn prop5_rhs(u: &Comparator, tau: f64, stats: &SequenceStats) -> f64 {
    let b2 = stats.b_t1_sq;
    u.cumulative_loss + 32.0 * b2 * sparsity_log_term(u.s(), u.l1, 1.0 / tau) + tau * tau * stats.gram_trace + 16.0 * b2
}

pub fn cor6_rhs(u: &Comparator, b_phi: f64, stats: &SequenceStats) -> f64 {
    let b2 = stats.b_t1_sq;
    u.cumulative_loss + 32.0 * b2 * sparsity_log_term(u.s(), u.l1, b_phi.sqrt()) + 16.0 * b2 + 1.0
}

pub fn cor7_rhs(u: &Comparator, d: usize, stats: &SequenceStats) -> f64 {
    let b2 = stats.b_t1_sq;
    let dt = (d * stats.t) as f64;
    u.cumulative_loss + 32.0 * b2 * sparsity_log_term(u.s(), u.l1, dt.sqrt()) + stats.gram_trace / dt + 16.0 * b2
}

fn thm8_regret(s: f64, l1: f64, stats: &SequenceStats) -> f64 {
    let my = stats.max_y_sq;
    256.0 * my * s * (std::f64::consts::E + stats.gram_trace.sqrt()).ln()
        + 64.0 * my * stats.a_t * s_log_term(s, l1)
        + (1.0 + 38.0 * my) * stats.a_t
}

pub fn thm8_rhs(u: &Comparator, stats: &SequenceStats) -> f64 {
    u.cumulative_loss + thm8_regret(u.s(), u.l1, stats)
}

/// Regret cap over comparators with ‖u‖₀ ≤ s and ‖u‖₁ ≤ U.
pub fn cor9_rhs(s: usize, u_max: f64, stats: &SequenceStats) -> f64 {
    thm8_regret(s as f64, u_max, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundName {
    Prop2,
    Cor3,
    Prop5,
    Cor6,
    Cor7,
    Thm8,
    Cor9,
}

impl BoundName {
    pub const ALL: [BoundName; 7] = [
        BoundName::Prop2,
        BoundName::Cor3,
        BoundName::Prop5,
        BoundName::Cor6,
        BoundName::Cor7,
        BoundName::Thm8,
        BoundName::Cor9,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundName::Prop2 => "prop2",
            BoundName::Cor3 => "cor3",
            BoundName::Prop5 => "prop5",
            BoundName::Cor6 => "cor6",
            BoundName::Cor7 => "cor7",
            BoundName::Thm8 => "thm8",
            BoundName::Cor9 => "cor9",
        }
    }
}

impl fmt::Display for BoundName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BoundName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown bound `{s}`; expected one of prop2, cor3, prop5, cor6, cor7, thm8, cor9")))
    }
}

/// Known constants a bound may need beyond what the run itself records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// Known bound on |yₜ| (defaults to the observed max).
    #[serde(default)]
    pub b_y: Option<f64>,
    /// Known bound on the Gram trace (defaults to the one the tuning implies).
    #[serde(default)]
    pub b_phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema: String,
    pub bound: BoundName,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub mc_allowance: f64,
    pub witness_u: Vec<f64>,
    pub witness_l0: usize,
    pub witness_loss: f64,
    pub pass: bool,
    /// Failed exactly but passed within the Monte Carlo allowance: approximation
    /// error and a genuine violation cannot be told apart.
    pub ambiguous: bool,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn mismatch(bound: BoundName, what: String) -> Error {
    Error::Contract(format!("{bound} does not apply to this run: {what}"))
}

/// Regret right-hand side at comparator `u`, after checking that the run's tuning
/// is the one the bound is stated for.
fn rhs_for(bound: BoundName, run: &RunOutput, inputs: &BoundInputs, stats: &SequenceStats, u: &Comparator) -> Result<f64> {
    let max_abs_y = stats.max_y_sq.sqrt();
    let need_fixed = || match run.spec {
        ForecasterSpec::Fixed { b, eta, tau } => Ok((b, eta, tau)),
        ref other => Err(mismatch(bound, format!("needs the fixed forecaster, run used {}", other.name()))),
    };
    let need_adaptive = || match run.spec {
        ForecasterSpec::Adaptive { tau } => Ok(tau),
        ref other => Err(mismatch(bound, format!("needs the adaptive forecaster, run used {}", other.name()))),
    };
    match bound {
        BoundName::Prop2 => {
            let (b, eta, tau) = need_fixed()?;
            let b_y = inputs.b_y.unwrap_or(max_abs_y);
            if b_y < max_abs_y {
                return Err(mismatch(bound, format!("B_y = {b_y} but max |y| = {max_abs_y}")));
            }
            if b < b_y {
                return Err(mismatch(bound, format!("B = {b} < B_y = {b_y}")));
            }
            if eta > 1.0 / (8.0 * b * b) * (1.0 + 1e-12) {
                return Err(mismatch(bound, format!("eta = {eta} exceeds 1/(8B²)")));
            }
            Ok(prop2_rhs(u, eta, tau, stats))
        }
        BoundName::Cor3 => {
            let (b, eta, tau) = need_fixed()?;
            let b_y = inputs.b_y.unwrap_or(b);
            let b_phi = inputs.b_phi.unwrap_or(16.0 * b_y * b_y / (tau * tau));
            if max_abs_y > b_y {
                return Err(mismatch(bound, format!("max |y| = {max_abs_y} exceeds B_y = {b_y}")));
            }
            if stats.gram_trace > b_phi * (1.0 + 1e-12) {
                return Err(mismatch(bound, format!("Gram trace {} exceeds B_Phi = {b_phi}", stats.gram_trace)));
            }
            if !close(b, b_y) || !close(eta, 1.0 / (8.0 * b_y * b_y)) || !close(tau, (16.0 * b_y * b_y / b_phi).sqrt()) {
                return Err(mismatch(bound, "tuning is not B = B_y, eta = 1/(8B_y²), tau = 4B_y/√B_Phi".into()));
            }
            Ok(cor3_rhs(u, b_y, b_phi))
        }
        BoundName::Prop5 => Ok(prop5_rhs(u, need_adaptive()?, stats)),
        BoundName::Cor6 => {
            let tau = need_adaptive()?;
            let b_phi = inputs.b_phi.unwrap_or(1.0 / (tau * tau));
            if !close(tau, 1.0 / b_phi.sqrt()) {
                return Err(mismatch(bound, format!("tau = {tau} but 1/√B_Phi = {}", 1.0 / b_phi.sqrt())));
            }
            if stats.gram_trace > b_phi * (1.0 + 1e-12) {
                return Err(mismatch(bound, format!("Gram trace {} exceeds B_Phi = {b_phi}", stats.gram_trace)));
            }
            Ok(cor6_rhs(u, b_phi, stats))
        }
        BoundName::Cor7 => {
            let tau = need_adaptive()?;
            let want = 1.0 / ((run.dim * stats.t) as f64).sqrt();
            if !close(tau, want) {
                return Err(mismatch(bound, format!("tau = {tau} but 1/√(dT) = {want}")));
            }
            Ok(cor7_rhs(u, run.dim, stats))
        }
        BoundName::Thm8 | BoundName::Cor9 => {
            if run.spec != ForecasterSpec::Auto {
                return Err(mismatch(bound, format!("needs the auto forecaster, run used {}", run.spec.name())));
            }
            Ok(if bound == BoundName::Thm8 {
                thm8_rhs(u, stats)
            } else {
                u.cumulative_loss + cor9_rhs(u.l0, u.l1, stats)
            })
        }
    }
}

/// Checks `bound` on `run` at each comparator; the report keeps the tightest.
pub fn verify(
    run: &RunOutput,
    bound: BoundName,
    inputs: &BoundInputs,
    comparators: &[Comparator],
    mc_allowance: f64,
) -> Result<BoundReport> {
    if comparators.is_empty() {
        return Err(Error::arg("at least one comparator is required"));
    }
    if !(mc_allowance >= 0.0 && mc_allowance.is_finite()) {
        return Err(Error::arg("mc_allowance must be finite and nonnegative"));
    }
    let stats = SequenceStats::from_run(run);
    let lhs = run.cumulative_loss;
    let mut best: Option<(f64, &Comparator)> = None;
    for u in comparators {
        if u.u.len() != run.dim {
            return Err(Error::arg(format!("comparator has dimension {}, run has {}", u.u.len(), run.dim)));
        }
        let rhs = rhs_for(bound, run, inputs, &stats, u)?;
        if best.is_none_or(|(r, _)| rhs < r) {
            best = Some((rhs, u));
        }
    }
    let (rhs, w) = best.expect("nonempty");
    let slack = rhs - lhs;
    let pass = slack + mc_allowance >= 0.0;
    Ok(BoundReport {
        schema: REPORT_SCHEMA.into(),
        bound,
        lhs,
        rhs,
        slack,
        mc_allowance,
        witness_u: w.u.clone(),
        witness_l0: w.l0,
        witness_loss: w.cumulative_loss,
        pass,
        ambiguous: pass && slack < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Search {
    /// Every support of size ≤ s; requires d ≤ 20.
    #[default]
    Exact,
    /// Greedy forward selection; approximate.
    Greedy,
}

struct Normal {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    yy: f64,
}

impl Normal {
    fn new(features: &[Vec<f64>], ys: &[f64]) -> Self {
        let d = features.first().map_or(0, |f| f.len());
        let mut gram = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        let mut yy = 0.0;
        for (phi, y) in features.iter().zip(ys) {
            let p = DVector::from_column_slice(phi);
            gram += &p * p.transpose();
            rhs += &p * *y;
            yy += y * y;
        }
        Self { gram, rhs, yy }
    }

    /// Least squares restricted to `support`: (u_S, loss via the normal equations).
    fn solve(&self, support: &[usize]) -> (Vec<f64>, f64) {
        let d = self.rhs.len();
        let mut u = vec![0.0; d];
        if support.is_empty() {
            return (u, self.yy);
        }
        let k = support.len();
        let g = DMatrix::from_fn(k, k, |a, b| self.gram[(support[a], support[b])]);
        let r = DVector::from_fn(k, |a, _| self.rhs[support[a]]);
        let tol = 1e-12 * g.abs().max().max(f64::MIN_POSITIVE);
        let sol = g.clone().svd(true, true).solve(&r, tol).unwrap_or_else(|_| DVector::zeros(k));
        for (a, &j) in support.iter().enumerate() {
            u[j] = sol[a];
        }
        let loss = self.yy - 2.0 * sol.dot(&r) + (sol.transpose() * &g * &sol)[(0, 0)];
        (u, loss.max(0.0))
    }
}

fn supports_of_size(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > d {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < d - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

struct Candidate {
    support: Vec<usize>,
    u: Vec<f64>,
    loss: f64,
}

/// Deterministic order: loss (to a relative tolerance), then ‖u‖₀, ‖u‖₁, support.
fn better(a: &Candidate, b: &Candidate, tol: f64) -> bool {
    if a.loss < b.loss - tol {
        return true;
    }
    if a.loss > b.loss + tol {
        return false;
    }
    let (la, lb) = (l0_norm(&a.u), l0_norm(&b.u));
    if la != lb {
        return la < lb;
    }
    let (ma, mb) = (l1_norm(&a.u), l1_norm(&b.u));
    if (ma - mb).abs() > 1e-12 * ma.max(mb).max(1.0) {
        return ma < mb;
    }
    a.support < b.support
}

/// Minimizer of Σₜ(yₜ − u·φₜ)² over ‖u‖₀ ≤ s.
pub fn best_sparse_comparator(features: &[Vec<f64>], ys: &[f64], s: usize, search: Search) -> Result<Comparator> {
    if features.len() != ys.len() || features.is_empty() {
        return Err(Error::arg("need a nonempty sequence with one feature vector per outcome"));
    }
    let d = features[0].len();
    if s > d {
        return Err(Error::arg(format!("sparsity s = {s} exceeds d = {d}")));
    }
    let normal = Normal::new(features, ys);
    let tol = 1e-10 * (1.0 + normal.yy);
    let u = match search {
        Search::Exact => {
            if d > MAX_ENUMERATION_DIM {
                return Err(Error::arg(format!(
                    "exact search enumerates supports only for d ≤ {MAX_ENUMERATION_DIM} (d = {d}); use the greedy search instead"
                )));
            }
            let supports: Vec<Vec<usize>> = (0..=s).flat_map(|k| supports_of_size(d, k)).collect();
            let cands: Vec<Candidate> = supports
                .into_par_iter()
                .map(|support| {
                    let (u, loss) = normal.solve(&support);
                    Candidate { support, u, loss }
                })
                .collect();
            let mut best = &cands[0];
            for c in &cands[1..] {
                if better(c, best, tol) {
                    best = c;
                }
            }
            best.u.clone()
        }
        Search::Greedy => {
            let mut support: Vec<usize> = Vec::new();
            let (mut u, mut loss) = normal.solve(&support);
            for _ in 0..s {
                let mut step: Option<Candidate> = None;
                for j in (0..d).filter(|j| !support.contains(j)) {
                    let mut trial = support.clone();
                    trial.push(j);
                    trial.sort_unstable();
                    let (tu, tl) = normal.solve(&trial);
                    let c = Candidate { support: trial, u: tu, loss: tl };
                    if step.as_ref().is_none_or(|b| better(&c, b, tol)) {
                        step = Some(c);
                    }
                }
                match step {
                    Some(c) if c.loss < loss - tol => {
                        support = c.support;
                        u = c.u;
                        loss = c.loss;
                    }
                    _ => break,
                }
            }
            u
        }
    };
    Ok(Comparator::new(u, features, ys))
}

/// {0, best s-sparse for s = 1..=max_s, least squares on all features}.
pub fn default_comparators(features: &[Vec<f64>], ys: &[f64], max_s: usize, search: Search) -> Result<Vec<Comparator>> {
    let d = features.first().map_or(0, |f| f.len());
    let mut out = vec![Comparator::zero(features, ys)];
    for s in 1..=max_s.min(d) {
        out.push(best_sparse_comparator(features, ys, s, search)?);
    }
    let ols = Normal::new(features, ys).solve(&(0..d).collect::<Vec<_>>()).0;
    out.push(Comparator::new(ols, features, ys));
    Ok(out)
}

/// Three times the standard deviation of the cumulative loss over `replays` runs
/// with the forecaster reseeded; the spread of a single run's loss.
pub fn mc_allowance_from_losses(losses: &[f64]) -> f64 {
    let n = losses.len();
    if n < 2 {
        return 0.0;
    }
    let mean = losses.iter().sum::<f64>() / n as f64;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    3.0 * var.sqrt()
}

/// Number of reseeded replays behind [`replay_allowance`].
pub const ALLOWANCE_REPLAYS: usize = 10;

/// Monte Carlo allowance for a run: 0 for deterministic backends, otherwise
/// [`mc_allowance_from_losses`] over reseeded replays of the same sequence.
pub fn replay_allowance(
    spec: &ForecasterSpec,
    backend: &BackendConfig,
    features: &[Vec<f64>],
    ys: &[f64],
    seed: u64,
    replays: usize,
) -> Result<f64> {
    if !backend.kind.is_stochastic() || matches!(spec, ForecasterSpec::Ridge { .. }) {
        return Ok(0.0);
    }
    let d = features.first().map_or(0, |f| f.len());
    let mut losses = Vec::with_capacity(replays);
    for k in 0..replays {
        let mut f = spec.build(d, backend, seed ^ (0xA076_1D64_78BD_642F_u64.wrapping_mul(k as u64 + 1)))?;
        losses.push(run_features(f.as_mut(), features, ys)?.cumulative_loss);
    }
    Ok(mc_allowance_from_losses(&losses))
}
