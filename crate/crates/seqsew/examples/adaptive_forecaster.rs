//! Runs the adaptive forecaster through an amplitude jump and prints the threshold staircase.

use seqsew::datagen::{Design, NoiseFamily, Scenario, ScenarioSpec, Segment};
use seqsew::forecasters::{run_protocol, SeqSewAdaptive};
use seqsew::posterior::BackendConfig;

fn main() -> seqsew::Result<()> {
    let segment = |rounds, amplitude| Segment { rounds, amplitude, feature_scale: 1.0 };
    let mut spec = ScenarioSpec::new(300, 2, Design::AdversarialScript { segments: vec![segment(100, 1.0), segment(100, 4.0), segment(100, 16.0)] }, 3);
    spec.u_true = Some(vec![1.0, -0.5]);
    spec.noise = Some(NoiseFamily::Sg { sigma2: 0.1 });
    let scenario = Scenario::new(&spec)?;
    let data = scenario.generate()?;

    let tau = 1.0 / (2.0 * 300f64).sqrt();
    let mut f = SeqSewAdaptive::new(tau, 2, &BackendConfig::quadrature(257), 1)?;
    let run = run_protocol(&mut f, scenario.dictionary(), &data)?;

    println!("{:>5} {:>10} {:>12}", "round", "B_t", "eta_t");
    let mut last = f64::NAN;
    for r in &run.records {
        if r.b_t != last {
            println!("{:>5} {:>10.4} {:>12.3e}", r.t, r.b_t, r.eta_t);
            last = r.b_t;
        }
    }
    println!("cumulative loss {:.2}, truth {:.2}", run.cumulative_loss, run.comparator_loss(&[1.0, -0.5]));
    Ok(())
}
