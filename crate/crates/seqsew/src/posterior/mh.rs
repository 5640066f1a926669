//! Component-wise random-walk Metropolis on π_τ(u)·exp(−η L(u)).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{dot, tempered, History};
use crate::prior::SparsityPrior;

const CALIBRATION_SUBSET: usize = 256;
const CALIBRATION_ROUNDS: usize = 12;
const TARGET_LOW: f64 = 0.2;
const TARGET_HIGH: f64 = 0.5;

pub(crate) struct Target<'a> {
    pub prior: &'a SparsityPrior,
    pub hist: &'a History,
    pub eta: f64,
}

impl Target<'_> {
    fn loss_with_shift(&self, margins: &[f64], j: usize, delta: f64) -> f64 {
        let d = self.hist.dim;
        let mut acc = 0.0;
        for (s, m) in margins.iter().enumerate() {
            let phi = self.hist.features[s * d + j];
            acc += self.hist.loss(s, m + delta * phi);
        }
        acc
    }
}

fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `sweeps` full coordinate sweeps on one particle; returns its final loss.
fn run_particle(
    target: &Target,
    u: &mut [f64],
    scales: &[f64],
    sweeps: usize,
    rng: &mut ChaCha8Rng,
    accepted: &mut [u32],
) -> f64 {
    let hist = target.hist;
    let t = hist.len();
    let mut margins: Vec<f64> = (0..t).map(|s| dot(hist.row(s), u)).collect();
    let mut loss: f64 = margins.iter().enumerate().map(|(s, m)| hist.loss(s, *m)).sum();
    for _ in 0..sweeps {
        for j in 0..u.len() {
            let z: f64 = rng.sample(StandardNormal);
            let delta = scales[j] * z;
            let old = u[j];
            let new = old + delta;
            let log_prior = target.prior.coord_log_density(new) - target.prior.coord_log_density(old);
            let new_loss = target.loss_with_shift(&margins, j, delta);
            let log_alpha = log_prior + tempered(target.eta, new_loss) - tempered(target.eta, loss);
            let v: f64 = rng.random();
            if v.ln() < log_alpha {
                u[j] = new;
                loss = new_loss;
                for (s, m) in margins.iter_mut().enumerate() {
                    *m += delta * hist.features[s * hist.dim + j];
                }
                accepted[j] += 1;
            }
        }
    }
    loss
}

/// Moves every particle in place; `losses` receives each particle's cumulative loss.
/// Returns the per-coordinate acceptance counts.
pub(crate) fn population_sweeps(
    target: &Target,
    points: &mut [f64],
    losses: &mut [f64],
    scales: &[f64],
    sweeps: usize,
    seed: u64,
) -> Vec<u64> {
    let d = target.prior.dim();
    let counts: Vec<Vec<u32>> = points
        .par_chunks_mut(d)
        .zip(losses.par_iter_mut())
        .enumerate()
        .map(|(i, (u, l))| {
            let mut rng = particle_rng(seed, i);
            let mut acc = vec![0u32; d];
            *l = run_particle(target, u, scales, sweeps, &mut rng, &mut acc);
            acc
        })
        .collect();
    let mut total = vec![0u64; d];
    for c in counts {
        for (t, a) in total.iter_mut().zip(c) {
            *t += a as u64;
        }
    }
    total
}

/// Tunes per-coordinate multipliers so single-sweep acceptance lands in [0.2, 0.5]
/// on a fixed subset of particles. The trial moves are discarded.
pub(crate) fn calibrate(target: &Target, points: &[f64], base_scale: f64, mult: &mut [f64], seed: u64) {
    let d = target.prior.dim();
    let m = (points.len() / d).min(CALIBRATION_SUBSET);
    if m == 0 {
        return;
    }
    for round in 0..CALIBRATION_ROUNDS {
        let mut trial = points[..m * d].to_vec();
        let mut losses = vec![0.0; m];
        let scales: Vec<f64> = mult.iter().map(|c| c * base_scale).collect();
        let counts = population_sweeps(target, &mut trial, &mut losses, &scales, 1, seed.wrapping_add(round as u64));
        let mut settled = true;
        for (c, n) in mult.iter_mut().zip(counts) {
            let rate = n as f64 / m as f64;
            if rate < TARGET_LOW {
                *c *= if rate < 0.02 { 0.2 } else { 0.5 };
                settled = false;
            } else if rate > TARGET_HIGH {
                *c *= if rate > 0.9 { 4.0 } else { 2.0 };
                settled = false;
            }
            *c = c.clamp(1e-8, 1e8);
        }
        if settled {
            break;
        }
    }
}
