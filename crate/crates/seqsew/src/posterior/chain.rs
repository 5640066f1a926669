use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::mh::{self, Target};
use super::{BackendConfig, History};
use crate::error::Result;
use crate::prior::SparsityPrior;

/// `n_samples` independent Metropolis chains started from prior draws. After
/// each update every chain runs `burn_in` sweeps from where it stopped, now
/// targeting the new posterior; the chain states are equally weighted.
#[derive(Debug, Clone)]
pub(crate) struct ChainState {
    pub n: usize,
    pub points: Arc<Vec<f64>>,
    pub weights: Arc<Vec<f64>>,
    mult: Vec<f64>,
    rng: ChaCha8Rng,
    pub acceptance: f64,
}

impl ChainState {
    pub fn new(prior: &SparsityPrior, cfg: &BackendConfig, mut rng: ChaCha8Rng) -> Self {
        let n = cfg.n_samples;
        let mut points = vec![0.0; n * prior.dim()];
        prior.sample_into(&mut rng, &mut points);
        Self {
            n,
            points: Arc::new(points),
            weights: Arc::new(vec![1.0 / n as f64; n]),
            mult: vec![cfg.proposal_scale; prior.dim()],
            rng,
            acceptance: f64::NAN,
        }
    }

    pub fn absorb(&mut self, prior: &SparsityPrior, cfg: &BackendConfig, hist: &History, eta: f64) -> Result<()> {
        if eta.is_infinite() {
            // η = +∞ only while every past loss is zero: the target is still π_τ.
            return Ok(());
        }
        let target = Target { prior, hist, eta };
        let base_scale = prior.tau();
        let seed = self.rng.next_u64();
        mh::calibrate(&target, &self.points, base_scale, &mut self.mult, seed);
        let scales: Vec<f64> = self.mult.iter().map(|c| c * base_scale).collect();
        let seed = self.rng.next_u64();
        let mut points = self.points.as_ref().clone();
        let mut losses = vec![0.0; self.n];
        let counts = mh::population_sweeps(&target, &mut points, &mut losses, &scales, cfg.burn_in, seed);
        let moves = (self.n * cfg.burn_in.max(1) * prior.dim()) as f64;
        self.acceptance = counts.iter().sum::<u64>() as f64 / moves;
        self.points = Arc::new(points);
        Ok(())
    }
}
