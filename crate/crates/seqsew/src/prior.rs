//! The sparsity prior π_τ on ℝᵈ: i.i.d. coordinates with density
//! `(3/τ) / (2 (1 + |u|/τ)⁴)`, plus the translated prior and the closed-form
//! quantities (KL caps, translation identity, finite-support duality).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityPrior {
    tau: f64,
    dim: usize,
}

impl SparsityPrior {
    pub fn new(tau: f64, dim: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::arg(format!("prior scale tau must be positive and finite, got {tau}")));
        }
        if dim == 0 {
            return Err(Error::arg("prior dimension must be at least 1"));
        }
        Ok(Self { tau, dim })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log-density of a single coordinate.
    pub fn coord_log_density(&self, x: f64) -> f64 {
        (1.5 / self.tau).ln() - 4.0 * (x.abs() / self.tau).ln_1p()
    }

    pub fn coord_density(&self, x: f64) -> f64 {
        let r = 1.0 + x.abs() / self.tau;
        1.5 / (self.tau * r * r * r * r)
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(Error::arg(format!(
                "vector has length {} but the prior has dimension {}",
                u.len(),
                self.dim
            )));
        }
        Ok(self.log_density_unchecked(u))
    }

    pub(crate) fn log_density_unchecked(&self, u: &[f64]) -> f64 {
        u.iter().map(|&x| self.coord_log_density(x)).sum()
    }

    /// Inverse of the magnitude CDF `1 − (1 + m/τ)⁻³`.
    pub fn magnitude_from_uniform(&self, v: f64) -> f64 {
        self.tau * ((1.0 - v).powf(-1.0 / 3.0) - 1.0)
    }

    pub fn magnitude_cdf(&self, m: f64) -> f64 {
        if m <= 0.0 {
            0.0
        } else {
            1.0 - (1.0 + m / self.tau).powi(-3)
        }
    }

    /// CDF of one coordinate on ℝ.
    pub fn coord_cdf(&self, x: f64) -> f64 {
        let tail = 0.5 * (1.0 + x.abs() / self.tau).powi(-3);
        if x < 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }

    pub fn sample_coord<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v: f64 = rng.random();
        let m = self.magnitude_from_uniform(v);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.sample_coord(rng);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        self.sample_into(rng, &mut u);
        u
    }

    /// ∫ g(u) π_τ(u) du for one coordinate, by quadrature in t = u/τ.
    pub fn coord_expectation<F: Fn(f64) -> f64>(&self, g: F, tol: f64) -> f64 {
        let tau = self.tau;
        quad::integrate_real_line(
            |t| g(tau * t) * 1.5 / (1.0 + t.abs()).powi(4),
            &[0.0],
            tol,
        )
    }
}

/// ρ_{u*,τ}: the sparsity prior shifted to `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatedPrior {
    base: SparsityPrior,
    center: Vec<f64>,
}

impl TranslatedPrior {
    pub fn new(base: SparsityPrior, center: Vec<f64>) -> Result<Self> {
        if center.len() != base.dim() {
            return Err(Error::arg("translation center has the wrong dimension"));
        }
        Ok(Self { base, center })
    }

    pub fn base(&self) -> &SparsityPrior {
        &self.base
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.center.len() {
            return Err(Error::arg("vector has the wrong dimension"));
        }
        Ok(u
            .iter()
            .zip(&self.center)
            .map(|(a, c)| self.base.coord_log_density(a - c))
            .sum())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = self.base.sample(rng);
        for (x, c) in u.iter_mut().zip(&self.center) {
            *x += c;
        }
        u
    }

    /// KL(ρ_{u*,τ} ‖ π_τ) by one-dimensional quadrature per coordinate.
    pub fn kl_to_base(&self) -> f64 {
        let tau = self.base.tau();
        self.center.iter().map(|&c| kl_shift_unit(c / tau)).sum()
    }
}

/// KL between the unit-scale coordinate density shifted by `a` and the unshifted one.
fn kl_shift_unit(a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let integrand = |v: f64| {
        let p = 1.5 / (1.0 + v.abs()).powi(4);
        4.0 * p * ((v + a).abs().ln_1p() - v.abs().ln_1p())
    };
    quad::integrate_real_line(integrand, &[0.0, -a], 1e-12)
}

pub fn l0_norm(u: &[f64]) -> usize {
    u.iter().filter(|x| **x != 0.0).count()
}

pub fn l1_norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x.abs()).sum()
}

/// `s · ln(1 + scale · U / s)`, continuously extended by 0 at `s = 0`.
pub fn sparsity_log_term(s: f64, l1: f64, scale: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s * (scale * l1 / s).ln_1p()
    }
}

pub fn kl_upper_bound(u_star: &[f64], tau: f64) -> f64 {
    let s = l0_norm(u_star) as f64;
    4.0 * sparsity_log_term(s, l1_norm(u_star), 1.0 / tau)
}

pub fn refined_sparsity_term(u: &[f64], tau: f64) -> f64 {
    4.0 * u.iter().map(|x| (x.abs() / tau).ln_1p()).sum::<f64>()
}

/// Σₜ (yₜ − u*·φₜ)² + τ² Σⱼ Σₜ φⱼ(xₜ)².
pub fn translated_expected_loss(u_star: &[f64], tau: f64, features: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut fit = 0.0;
    let mut gram = 0.0;
    for (phi, y) in features.iter().zip(ys) {
        let m: f64 = phi.iter().zip(u_star).map(|(a, b)| a * b).sum();
        fit += (y - m) * (y - m);
        gram += phi.iter().map(|v| v * v).sum::<f64>();
    }
    fit + tau * tau * gram
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub estimate: f64,
    pub std_error: f64,
    pub exact: f64,
}

/// Monte-Carlo estimate of ∫ Σₜ(yₜ − u·φₜ)² ρ_{u*,τ}(du) against its closed form.
///
/// The integrand has infinite variance under ρ itself (fourth moment of π_τ
/// diverges), so draws come from a per-coordinate proposal with density
/// `½(1+|t|)⁻²` in t = u/τ and are importance weighted.
pub fn translated_loss_identity_check<R: Rng + ?Sized>(
    u_star: &[f64],
    tau: f64,
    features: &[Vec<f64>],
    ys: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<IdentityCheck> {
    if n_mc < 1 {
        return Err(Error::arg("n_mc must be at least 1"));
    }
    if features.is_empty() || features.len() != ys.len() {
        return Err(Error::arg("sequence must be nonempty with one feature vector per observation"));
    }
    let d = u_star.len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::arg("feature length does not match u*"));
    }
    let prior = SparsityPrior::new(tau, d)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut u = vec![0.0; d];
    for _ in 0..n_mc {
        let mut log_w = 0.0;
        for (j, uj) in u.iter_mut().enumerate() {
            let v: f64 = rng.random();
            let t = v / (1.0 - v);
            let t = if rng.random::<bool>() { t } else { -t };
            let proposal = 0.5 / ((1.0 + t.abs()) * (1.0 + t.abs()));
            log_w += prior.coord_log_density(tau * t) + tau.ln() - proposal.ln();
            *uj = u_star[j] + tau * t;
        }
        let loss: f64 = features
            .iter()
            .zip(ys)
            .map(|(phi, y)| {
                let m: f64 = phi.iter().zip(&u).map(|(a, b)| a * b).sum();
                (y - m) * (y - m)
            })
            .sum();
        let val = log_w.exp() * loss;
        sum += val;
        sum_sq += val * val;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = if n_mc > 1 { (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0) } else { f64::INFINITY };
    Ok(IdentityCheck {
        estimate: mean,
        std_error: (var / n).sqrt(),
        exact: translated_expected_loss(u_star, tau, features, ys),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gibbs: Vec<f64>,
}

/// KL(ρ ‖ π) on a finite set, with 0·ln(0/·) = 0 and +∞ when ρ charges a π-null point.
pub fn kl_divergence(rho: &[f64], pi: &[f64]) -> f64 {
    rho.iter()
        .zip(pi)
        .map(|(&r, &p)| {
            if r == 0.0 {
                0.0
            } else if p == 0.0 {
                f64::INFINITY
            } else {
                r * (r / p).ln()
            }
        })
        .sum()
}

/// `Σ ρᵢhᵢ + KL(ρ‖π)`, the objective minimized by the Gibbs distribution.
pub fn gibbs_objective(rho: &[f64], pi: &[f64], h: &[f64]) -> f64 {
    rho.iter().zip(h).map(|(r, x)| r * x).sum::<f64>() + kl_divergence(rho, pi)
}

/// Both sides of `−ln Σ πᵢe^{−hᵢ} = min_ρ {Σρᵢhᵢ + KL(ρ,π)}` on a finite support.
pub fn kl_duality_check(weights_pi: &[f64], h: &[f64]) -> Result<DualityCheck> {
    if weights_pi.is_empty() || weights_pi.len() != h.len() {
        return Err(Error::arg("prior weights and h must be nonempty and of equal length"));
    }
    if weights_pi.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::arg("prior weights must be nonnegative and finite"));
    }
    let total: f64 = weights_pi.iter().sum();
    if (total - 1.0).abs() > 1e-12 * weights_pi.len() as f64 {
        return Err(Error::arg(format!("prior weights sum to {total}, not 1")));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("h must be finite"));
    }
    let m = weights_pi
        .iter()
        .zip(h)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, x)| *x)
        .fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = weights_pi.iter().zip(h).map(|(p, x)| p * (m - x).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let lhs = m - z.ln();
    let gibbs: Vec<f64> = unnorm.iter().map(|w| w / z).collect();
    let rhs = gibbs_objective(&gibbs, weights_pi, h);
    Ok(DualityCheck { lhs, rhs, gibbs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ln2() -> f64 {
        std::f64::consts::LN_2
    }

    #[test]
    fn log_density_examples() {
        let p = SparsityPrior::new(1.0, 1).unwrap();
        assert_abs_diff_eq!(p.log_density(&[0.0]).unwrap(), 1.5f64.ln(), epsilon = 1e-15);
        // direct evaluation of (3/2)(1+1)^-4
        assert_abs_diff_eq!(p.log_density(&[1.0]).unwrap(), (1.5f64 / 16.0).ln(), epsilon = 1e-14);
        let p2 = SparsityPrior::new(2.0, 2).unwrap();
        assert_abs_diff_eq!(p2.log_density(&[0.0, 0.0]).unwrap(), 2.0 * 0.75f64.ln(), epsilon = 1e-15);
        assert!(p2.log_density(&[0.0]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SparsityPrior::new(0.0, 1).is_err());
        assert!(SparsityPrior::new(-1.0, 1).is_err());
        assert!(SparsityPrior::new(f64::NAN, 1).is_err());
        assert!(SparsityPrior::new(1.0, 0).is_err());
    }

    // Bisection on the one-sided CDF ½(1 − (1+x/τ)⁻³), independent of the closed-form inverse.
    fn invert_numerically(tau: f64, v: f64) -> f64 {
        let target = 0.5 * v;
        let cdf = |x: f64| 0.5 * (1.0 - (1.0 + x / tau).powi(-3));
        let (mut lo, mut hi) = (0.0, 1.0);
        while cdf(hi) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn inverse_cdf_examples() {
        let p = SparsityPrior::new(1.0, 1).unwrap();
        assert_eq!(p.magnitude_from_uniform(0.0), 0.0);
        let m = p.magnitude_from_uniform(0.5);
        assert_abs_diff_eq!(m, invert_numerically(1.0, 0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(m, 0.259_921, epsilon = 1e-6);
        let p3 = SparsityPrior::new(3.0, 1).unwrap();
        assert_abs_diff_eq!(p3.magnitude_from_uniform(0.5), invert_numerically(3.0, 0.5), epsilon = 1e-11);
        assert_abs_diff_eq!(p3.magnitude_from_uniform(0.5), 3.0 * m, epsilon = 1e-12);
    }

    #[test]
    fn density_normalizes() {
        for tau in [0.01, 0.5, 1.0, 7.0] {
            let p = SparsityPrior::new(tau, 1).unwrap();
            assert_abs_diff_eq!(p.coord_expectation(|_| 1.0, 1e-12), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn second_moment_is_tau_squared() {
        for tau in [0.1, 1.0, 10.0] {
            let p = SparsityPrior::new(tau, 1).unwrap();
            let m2 = p.coord_expectation(|u| u * u, 1e-12 * tau * tau);
            assert!((m2 - tau * tau).abs() < 1e-6, "tau={tau}: {m2}");
        }
    }

    #[test]
    fn cdf_matches_density() {
        let p = SparsityPrior::new(0.7, 1).unwrap();
        for x in [-3.0f64, -0.2, 0.0, 0.4, 5.0] {
            let by_quad = quad::integrate_from_neg_inf(|u| p.coord_density(u), x.min(0.0), 1e-13)
                + if x > 0.0 { quad::integrate(|u| p.coord_density(u), 0.0, x, 1e-13) } else { 0.0 };
            assert_abs_diff_eq!(p.coord_cdf(x), by_quad, epsilon = 1e-10);
        }
    }

    #[test]
    fn kl_bound_examples() {
        assert_eq!(kl_upper_bound(&[0.0, 0.0], 1.0), 0.0);
        assert_abs_diff_eq!(kl_upper_bound(&[1.0, 0.0, 0.0], 1.0), 4.0 * ln2(), epsilon = 1e-15);
        assert_abs_diff_eq!(kl_upper_bound(&[1.0, 0.0, 0.0], 1.0), 2.772_589, epsilon = 1e-6);
        assert_abs_diff_eq!(kl_upper_bound(&[1.0, 1.0], 1.0), 8.0 * ln2(), epsilon = 1e-14);
    }

    #[test]
    fn refined_term_examples() {
        assert_eq!(refined_sparsity_term(&[0.0, 0.0], 1.0), 0.0);
        assert_abs_diff_eq!(refined_sparsity_term(&[1.0, 0.0], 1.0), 4.0 * ln2(), epsilon = 1e-15);
        assert_abs_diff_eq!(refined_sparsity_term(&[1.0, 1.0], 1.0), 8.0 * ln2(), epsilon = 1e-14);
    }

    #[test]
    fn exact_kl_below_caps() {
        let base = SparsityPrior::new(1.0, 3).unwrap();
        let rho = TranslatedPrior::new(base, vec![1.0, 0.0, 0.0]).unwrap();
        let kl = rho.kl_to_base();
        assert!(kl > 0.0);
        assert!(kl <= kl_upper_bound(&[1.0, 0.0, 0.0], 1.0));
    }

    #[test]
    fn translated_density_is_shifted_base() {
        let base = SparsityPrior::new(0.3, 2).unwrap();
        let rho = TranslatedPrior::new(base, vec![1.0, -2.0]).unwrap();
        let u = [0.4, 0.1];
        let shifted = [0.4 - 1.0, 0.1 + 2.0];
        assert_abs_diff_eq!(rho.log_density(&u).unwrap(), base.log_density(&shifted).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn identity_exact_side() {
        // u* fits the data exactly; only the τ² Σφ² part remains
        let features = vec![vec![1.0], vec![2.0], vec![-0.5]];
        let ys = vec![3.0, 6.0, -1.5];
        let exact = translated_expected_loss(&[3.0], 0.1, &features, &ys);
        assert_abs_diff_eq!(exact, 0.01 * (1.0 + 4.0 + 0.25), epsilon = 1e-14);
        let tiny = translated_expected_loss(&[0.0], 1e-12, &features, &ys);
        assert_abs_diff_eq!(tiny, 9.0 + 36.0 + 2.25, epsilon = 1e-9);
    }

    #[test]
    fn identity_mc_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let features = vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, 0.7]];
        let ys = vec![1.0, -2.0, 0.5];
        let c = translated_loss_identity_check(&[0.5, -1.0], 0.4, &features, &ys, 200_000, &mut rng).unwrap();
        assert!((c.estimate - c.exact).abs() < 4.0 * c.std_error, "{c:?}");
        assert!(translated_loss_identity_check(&[0.5, -1.0], 0.4, &features, &ys, 0, &mut rng).is_err());
    }

    #[test]
    fn duality_examples() {
        let c = kl_duality_check(&[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(c.lhs, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rhs, 0.0, epsilon = 1e-15);
        let c = kl_duality_check(&[0.5, 0.5], &[0.0, ln2()]).unwrap();
        // ½e⁰ + ½·½ = 3/4
        assert_abs_diff_eq!(c.lhs, -(0.75f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.rhs, c.lhs, epsilon = 1e-14);
        let c = kl_duality_check(&[1.0, 0.0], &[2.5, -100.0]).unwrap();
        assert_abs_diff_eq!(c.lhs, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rhs, 2.5, epsilon = 1e-15);
        assert!(kl_duality_check(&[0.5, 0.6], &[0.0, 0.0]).is_err());
    }
}
