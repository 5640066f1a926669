//! The parameter-free forecaster on a sequence whose feature scale grows; prints its regimes.

use seqsew::datagen::{Design, NoiseFamily, Scenario, ScenarioSpec, Segment};
use seqsew::forecasters::{run_protocol, SeqSewAuto};
use seqsew::posterior::BackendConfig;

fn main() -> seqsew::Result<()> {
    let segments = [1.0, 4.0, 16.0, 64.0].map(|s| Segment { rounds: 75, amplitude: 1.0, feature_scale: s }).to_vec();
    let mut spec = ScenarioSpec::new(300, 1, Design::AdversarialScript { segments }, 5);
    spec.u_true = Some(vec![0.8]);
    spec.noise = Some(NoiseFamily::Sg { sigma2: 0.25 });
    let scenario = Scenario::new(&spec)?;
    let data = scenario.generate()?;

    let mut f = SeqSewAuto::new(1, &BackendConfig::quadrature(257), 2)?;
    let run = run_protocol(&mut f, scenario.dictionary(), &data)?;

    for span in f.spans() {
        let end = span.end.map_or("open".to_string(), |e| e.to_string());
        println!("regime {:>2}  tau {:>10.3e}  rounds {:>3}..{end}", span.regime, span.tau, span.start);
    }
    println!("cumulative loss {:.2}", run.cumulative_loss);
    Ok(())
}
