//! Deterministic tensor-grid posterior for d ≤ 2.
//!
//! Each axis uses nodes `u = τ sinh(κ s)` on an equispaced `s ∈ [−1, 1]` with
//! κ = asinh(R/τ), so spacing is ≈ κτ·Δs near the origin and grows
//! geometrically into the tails. Trapezoid weights in `s` times the prior
//! density give the prior weights. The node count is forced odd so the
//! density's kink at 0 sits on a node.

use std::sync::Arc;

use rayon::prelude::*;

use super::{dot, normalize, tempered, BackendConfig, History};
use crate::error::{Error, Result};
use crate::prior::SparsityPrior;

/// Minimum axis radius in units of τ. The prior mass beyond it is
/// (1 + 10⁴)⁻³ ≈ 10⁻¹², and the truncated second moment ≈ 3·10⁻⁴ τ².
const MIN_RADIUS_IN_TAU: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct TensorGrid {
    pub dim: usize,
    pub radius: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    /// Flat `n_points × dim` node coordinates.
    pub points: Arc<Vec<f64>>,
    /// Log of (quadrature weight × prior density), unnormalized.
    pub log_prior_weights: Vec<f64>,
}

fn axis(prior: &SparsityPrior, nodes: usize, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let tau = prior.tau();
    let kappa = (radius / tau).asinh();
    let ds = 2.0 / (nodes - 1) as f64;
    let mut u = Vec::with_capacity(nodes);
    let mut lw = Vec::with_capacity(nodes);
    for i in 0..nodes {
        // symmetric construction so u(−s) = −u(s) exactly
        let k = i as f64 - ((nodes - 1) / 2) as f64;
        let s = k * ds;
        let x = tau * (kappa * s).sinh();
        let end = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
        u.push(x);
        lw.push((end * ds * tau * kappa * (kappa * s).cosh()).ln() + prior.coord_log_density(x));
    }
    (u, lw)
}

impl TensorGrid {
    pub fn new(prior: &SparsityPrior, points_per_dim: usize, radius: &[f64]) -> Result<Self> {
        let d = prior.dim();
        if d > 2 {
            return Err(Error::Unsupported(format!("quadrature backend supports d ≤ 2, got d = {d}")));
        }
        if radius.len() != d || radius.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::arg("grid radius must be positive, one per dimension"));
        }
        let nodes = points_per_dim | 1;
        let built: Vec<(Vec<f64>, Vec<f64>)> = radius.iter().map(|r| axis(prior, nodes, *r)).collect();
        let (points, log_w) = if d == 1 {
            (built[0].0.clone(), built[0].1.clone())
        } else {
            let mut p = Vec::with_capacity(2 * nodes * nodes);
            let mut w = Vec::with_capacity(nodes * nodes);
            for a in 0..nodes {
                for b in 0..nodes {
                    p.push(built[0].0[a]);
                    p.push(built[1].0[b]);
                    w.push(built[0].1[a] + built[1].1[b]);
                }
            }
            (p, w)
        };
        Ok(Self {
            dim: d,
            radius: radius.to_vec(),
            axes: built.into_iter().map(|(u, _)| u).collect(),
            points: Arc::new(points),
            log_prior_weights: log_w,
        })
    }

    pub fn len(&self) -> usize {
        self.log_prior_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prior_weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// `∫ g e^{−η L} dπ_τ / ∫ e^{−η L} dπ_τ` on the grid, where `cum_loss[i]` is L at node i.
pub fn quadrature_expectation<F: Fn(&[f64]) -> f64 + Sync>(
    grid: &TensorGrid,
    cum_loss: &[f64],
    eta: f64,
    integrand: F,
) -> Result<f64> {
    if cum_loss.len() != grid.len() {
        return Err(Error::arg("one loss value per grid node is required"));
    }
    let log_w: Vec<f64> = grid
        .log_prior_weights
        .iter()
        .zip(cum_loss)
        .map(|(p, l)| p + tempered(eta, *l))
        .collect();
    let mut w = Vec::new();
    normalize(&log_w, &mut w)?;
    Ok(super::det_sum(grid.len(), |i| w[i] * integrand(grid.point(i))))
}

/// Per-axis radius: the larger of 10⁴τ and the data heuristic
/// `multiplier · max|y| / min nonzero |φⱼ|`.
fn required_radius(prior: &SparsityPrior, cfg: &BackendConfig, hist: &History) -> Vec<f64> {
    let d = prior.dim();
    let floor = MIN_RADIUS_IN_TAU * prior.tau();
    let y_max = hist
        .ys
        .iter()
        .zip(&hist.centers)
        .map(|(y, c)| y.abs().max((y - c).abs()))
        .fold(0.0, f64::max);
    (0..d)
        .map(|j| {
            let phi_min = (0..hist.len())
                .map(|s| hist.row(s)[j].abs())
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min);
            if phi_min.is_finite() && y_max > 0.0 {
                floor.max(cfg.grid_radius_multiplier * y_max / phi_min)
            } else {
                floor
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct GridState {
    pub grid: TensorGrid,
    pub cum_loss: Vec<f64>,
    pub weights: Arc<Vec<f64>>,
    pub ess: f64,
    points_per_dim: usize,
    pub rebuilds: usize,
}

impl GridState {
    pub fn new(prior: &SparsityPrior, cfg: &BackendConfig) -> Result<Self> {
        let radius = vec![MIN_RADIUS_IN_TAU * prior.tau(); prior.dim()];
        let grid = TensorGrid::new(prior, cfg.grid_points_per_dim, &radius)?;
        let mut w = Vec::new();
        let ess = normalize(&grid.log_prior_weights, &mut w)?;
        Ok(Self {
            cum_loss: vec![0.0; grid.len()],
            grid,
            weights: Arc::new(w),
            ess,
            points_per_dim: cfg.grid_points_per_dim,
            rebuilds: 0,
        })
    }

    pub fn absorb(&mut self, prior: &SparsityPrior, cfg: &BackendConfig, hist: &History, eta: f64) -> Result<()> {
        let need = required_radius(prior, cfg, hist);
        let d = prior.dim();
        if need.iter().zip(&self.grid.radius).any(|(n, r)| n > r) {
            let radius: Vec<f64> = need.iter().zip(&self.grid.radius).map(|(n, r)| if n > r { 2.0 * n } else { *r }).collect();
            self.grid = TensorGrid::new(prior, self.points_per_dim, &radius)?;
            let pts = &self.grid.points;
            self.cum_loss = (0..self.grid.len())
                .into_par_iter()
                .map(|i| hist.cum_loss(&pts[i * d..(i + 1) * d]))
                .collect();
            self.rebuilds += 1;
        } else {
            let s = hist.len() - 1;
            let row = hist.row(s);
            let pts = &self.grid.points;
            self.cum_loss
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, l)| *l += hist.loss(s, dot(&pts[i * d..(i + 1) * d], row)));
        }
        let log_w: Vec<f64> = self
            .grid
            .log_prior_weights
            .iter()
            .zip(&self.cum_loss)
            .map(|(p, l)| p + tempered(eta, *l))
            .collect();
        let mut w = Vec::with_capacity(log_w.len());
        self.ess = normalize(&log_w, &mut w)?;
        self.weights = Arc::new(w);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{clip, Observation, PosteriorCloud};

    #[test]
    fn normalization_integrand_is_one() {
        let prior = SparsityPrior::new(0.5, 2).unwrap();
        let grid = TensorGrid::new(&prior, 65, &[50.0, 50.0]).unwrap();
        let loss: Vec<f64> = (0..grid.len()).map(|i| grid.point(i)[0].powi(2)).collect();
        let v = quadrature_expectation(&grid, &loss, 0.3, |_| 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_setup_gives_zero() {
        let prior = SparsityPrior::new(1.0, 1).unwrap();
        let grid = TensorGrid::new(&prior, 201, &[1e4]).unwrap();
        let zero = vec![0.0; grid.len()];
        let v = quadrature_expectation(&grid, &zero, 0.0, |u| clip(u[0] * 2.0, 0.0, 3.0)).unwrap();
        assert!(v.abs() < 1e-13);
    }

    #[test]
    fn rejects_three_dimensions() {
        let prior = SparsityPrior::new(1.0, 3).unwrap();
        assert!(matches!(TensorGrid::new(&prior, 65, &[1.0; 3]), Err(Error::Unsupported(_))));
        assert!(PosteriorCloud::new(prior, &BackendConfig::quadrature(65), 0).is_err());
    }

    #[test]
    fn single_round_matches_coarse_rectangle_rule() {
        // One observation (φ=1, y=1, B=2, η=1/32), τ=1. Independent rectangle rule on
        // a wide uniform grid of the same posterior integral.
        let tau = 1.0;
        let prior = SparsityPrior::new(tau, 1).unwrap();
        let mut cloud = PosteriorCloud::new(prior, &BackendConfig::quadrature(2001), 0).unwrap();
        let eta = 1.0 / 32.0;
        cloud.update(Observation::new(vec![1.0], 1.0, 2.0), eta).unwrap();
        let ours = cloud.predict(&[1.0], 2.0).unwrap();

        let dens = |u: f64| 1.5 / (1.0 + u.abs()).powi(4);
        let post = |u: f64| dens(u) * (-eta * (1.0 - clip(u, 0.0, 2.0)).powi(2)).exp();
        let h = 1e-3;
        let (mut num, mut den) = (0.0, 0.0);
        let mut u = -2000.0 + 0.5 * h;
        while u < 2000.0 {
            let w = post(u);
            num += w * clip(u, 0.0, 2.0);
            den += w;
            u += h;
        }
        assert!((ours - num / den).abs() < 1e-5, "{ours} vs {}", num / den);

        // and a 5-point rectangle rule on [-2, 2], to its (coarse) accuracy
        let nodes = [-1.6, -0.8, 0.0, 0.8, 1.6];
        let n5: f64 = nodes.iter().map(|u| post(*u) * clip(*u, 0.0, 2.0)).sum();
        let d5: f64 = nodes.iter().map(|u| post(*u)).sum();
        assert!((ours - n5 / d5).abs() < 0.1);
    }

    #[test]
    fn doubling_grid_changes_little() {
        let prior = SparsityPrior::new(0.2, 1).unwrap();
        let data: Vec<(f64, f64)> = (0..30).map(|t| ((t as f64 * 0.37).sin(), 0.8 * (t as f64 * 0.37).sin() + 0.1)).collect();
        let run = |g: usize| {
            let mut c = PosteriorCloud::new(prior, &BackendConfig::quadrature(g), 0).unwrap();
            for (x, y) in &data {
                c.update(Observation::new(vec![*x], *y, 1.0), 1.0 / 8.0).unwrap();
            }
            c.predict(&[0.9], 1.0).unwrap()
        };
        let a = run(1001);
        let b = run(2001);
        assert!((a - b).abs() < 1e-4, "{a} {b}");
    }
}
