//! Checks several regret bounds on one run against the best sparse comparators.

use seqsew::bounds::{default_comparators, verify, BoundInputs, BoundName, Search};
use seqsew::datagen::{Design, NoiseFamily, Scenario, ScenarioSpec};
use seqsew::forecasters::{run_features, SeqSewAdaptive};
use seqsew::posterior::BackendConfig;

fn main() -> seqsew::Result<()> {
    let mut spec = ScenarioSpec::new(200, 2, Design::IidGaussian, 9);
    spec.u_true = Some(vec![2.0, 0.0]);
    spec.noise = Some(NoiseFamily::Sg { sigma2: 1.0 });
    let scenario = Scenario::new(&spec)?;
    let data = scenario.generate()?;
    let feats: Vec<Vec<f64>> = data.iter().map(|(x, _)| scenario.dictionary().features(x)).collect::<seqsew::Result<_>>()?;
    let ys: Vec<f64> = data.iter().map(|(_, y)| *y).collect();

    let mut f = SeqSewAdaptive::new(1.0 / 20.0, 2, &BackendConfig::quadrature(257), 0)?;
    let run = run_features(&mut f, &feats, &ys)?;
    let comps = default_comparators(&feats, &ys, 2, Search::Exact)?;

    for bound in [BoundName::Prop5, BoundName::Cor6, BoundName::Cor7] {
        let r = verify(&run, bound, &BoundInputs::default(), &comps, 0.0)?;
        println!("{:<6} regret-side {:>10.2}  bound {:>10.2}  slack {:>10.2}  {}", bound.as_str(), r.lhs, r.rhs, r.slack, if r.pass { "ok" } else { "VIOLATED" });
    }
    Ok(())
}
