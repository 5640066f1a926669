//! Draws from the sparsity prior and compares the empirical CDF with the exact one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqsew::prior::SparsityPrior;

fn main() -> seqsew::Result<()> {
    let prior = SparsityPrior::new(0.05, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws: Vec<f64> = (0..50_000).flat_map(|_| prior.sample(&mut rng)).collect();

    let mut ks = 0.0f64;
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    for (k, x) in sorted.iter().enumerate() {
        let f = prior.coord_cdf(*x);
        ks = ks.max((f - k as f64 / sorted.len() as f64).abs()).max((f - (k + 1) as f64 / sorted.len() as f64).abs());
    }
    println!("coordinates drawn: {}", draws.len());
    println!("KS distance:       {ks:.5}");
    for r in [0.01, 0.1, 1.0] {
        let share = draws.iter().filter(|v| v.abs() < r).count() as f64 / draws.len() as f64;
        println!("P(|u| < {r:<4}) empirical {share:.4}, exact {:.4}", prior.magnitude_cdf(r));
    }
    Ok(())
}
