use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mh::{self, Target};
use super::{dot, normalize, tempered, BackendConfig, History};
use crate::error::Result;
use crate::prior::SparsityPrior;

/// Weighted particles. Until the first resampling the proposal is the prior and
/// `log wᵢ = −η Lᵢ`. After resampling at (η_a, L_a) the population targets
/// the posterior at that time, so `log wᵢ = −η Lᵢ + η_a L_{a,i}` keeps the
/// weights exact for any later η and history.
#[derive(Debug, Clone)]
pub(crate) struct ImportanceState {
    pub n: usize,
    pub points: Arc<Vec<f64>>,
    pub cum_loss: Vec<f64>,
    anchor_eta: f64,
    anchor_loss: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub weights: Arc<Vec<f64>>,
    pub ess: f64,
    mult: Vec<f64>,
    rng: ChaCha8Rng,
    pub resamples: usize,
}

impl ImportanceState {
    pub fn new(prior: &SparsityPrior, cfg: &BackendConfig, mut rng: ChaCha8Rng) -> Self {
        let n = cfg.n_samples;
        let mut points = vec![0.0; n * prior.dim()];
        prior.sample_into(&mut rng, &mut points);
        Self {
            n,
            points: Arc::new(points),
            cum_loss: vec![0.0; n],
            anchor_eta: 0.0,
            anchor_loss: vec![0.0; n],
            log_weights: vec![0.0; n],
            weights: Arc::new(vec![1.0 / n as f64; n]),
            ess: n as f64,
            mult: vec![cfg.proposal_scale; prior.dim()],
            rng,
            resamples: 0,
        }
    }

    fn reweight(&mut self, eta: f64) -> Result<()> {
        let anchor = self.anchor_eta;
        self.log_weights
            .par_iter_mut()
            .zip(self.cum_loss.par_iter().zip(self.anchor_loss.par_iter()))
            .for_each(|(lw, (l, la))| *lw = tempered(eta, *l) - tempered(anchor, *la));
        let mut w = Vec::with_capacity(self.n);
        self.ess = normalize(&self.log_weights, &mut w)?;
        self.weights = Arc::new(w);
        Ok(())
    }

    pub fn absorb(&mut self, prior: &SparsityPrior, cfg: &BackendConfig, hist: &History, eta: f64) -> Result<()> {
        let d = prior.dim();
        let s = hist.len() - 1;
        let row = hist.row(s);
        let points = &self.points;
        self.cum_loss
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, l)| *l += hist.loss(s, dot(&points[i * d..(i + 1) * d], row)));
        self.reweight(eta)?;
        if eta.is_finite() && self.ess < cfg.ess_floor * self.n as f64 {
            self.resample_and_refresh(prior, cfg, hist, eta)?;
        }
        Ok(())
    }

    fn resample_and_refresh(&mut self, prior: &SparsityPrior, cfg: &BackendConfig, hist: &History, eta: f64) -> Result<()> {
        let d = prior.dim();
        let n = self.n;
        let offset: f64 = self.rng.random::<f64>() / n as f64;
        let mut new_points = Vec::with_capacity(n * d);
        let mut new_loss = Vec::with_capacity(n);
        let mut cum = 0.0;
        let mut i = 0;
        for k in 0..n {
            let target = offset + k as f64 / n as f64;
            while i + 1 < n && cum + self.weights[i] < target {
                cum += self.weights[i];
                i += 1;
            }
            new_points.extend_from_slice(&self.points[i * d..(i + 1) * d]);
            new_loss.push(self.cum_loss[i]);
        }

        let target = Target { prior, hist, eta };
        let base_scale = prior.tau();
        let seed = self.rng.next_u64();
        mh::calibrate(&target, &new_points, base_scale, &mut self.mult, seed);
        let scales: Vec<f64> = self.mult.iter().map(|c| c * base_scale).collect();
        let seed = self.rng.next_u64();
        mh::population_sweeps(&target, &mut new_points, &mut new_loss, &scales, cfg.refresh_sweeps, seed);

        self.points = Arc::new(new_points);
        self.anchor_loss.clone_from(&new_loss);
        self.cum_loss = new_loss;
        self.anchor_eta = eta;
        self.resamples += 1;
        self.reweight(eta)
    }
}
