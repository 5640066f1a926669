//! The same sequence through the three posterior backends; quadrature serves as reference.

use std::time::Instant;

use seqsew::datagen::{Design, NoiseFamily, Scenario, ScenarioSpec};
use seqsew::forecasters::{run_protocol, SeqSewAdaptive};
use seqsew::posterior::BackendConfig;

fn main() -> seqsew::Result<()> {
    let mut spec = ScenarioSpec::new(150, 2, Design::IidGaussian, 12);
    spec.u_true = Some(vec![1.5, 0.0]);
    spec.noise = Some(NoiseFamily::Sg { sigma2: 0.5 });
    let scenario = Scenario::new(&spec)?;
    let data = scenario.generate()?;

    let mut reference = None;
    for (name, backend) in [
        ("quadrature", BackendConfig::quadrature(513)),
        ("importance", BackendConfig::importance(4000)),
        ("chain", BackendConfig::chain(400, 50)),
    ] {
        let start = Instant::now();
        let mut f = SeqSewAdaptive::new(0.1, 2, &backend, 5)?;
        let run = run_protocol(&mut f, scenario.dictionary(), &data)?;
        let preds = run.predictions();
        let gap = reference.as_ref().map_or(0.0, |r: &Vec<f64>| preds.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        println!("{name:<10} loss {:>9.3}  max |Δŷ| {gap:.4}  {:>7.1?}", run.cumulative_loss, start.elapsed());
        reference.get_or_insert(preds);
    }
    Ok(())
}
