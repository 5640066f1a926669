//! Online-to-batch risk on a Fourier dictionary compared with its oracle inequality.

use seqsew::batch::{run_experiment, BatchConfig, RiskVariant};
use seqsew::datagen::{Design, DictionaryKind, DictionarySpec, NoiseFamily, ScenarioSpec};
use seqsew::posterior::BackendConfig;

fn main() -> seqsew::Result<()> {
    let mut spec = ScenarioSpec::new(150, 2, Design::IidUniform, 4);
    spec.dictionary = Some(DictionarySpec::new(DictionaryKind::Fourier, 2));
    spec.u_true = Some(vec![1.5, 0.0]);

    for sigma2 in [0.25, 1.0, 4.0] {
        spec.noise = Some(NoiseFamily::Sg { sigma2 });
        let mut cfg = BatchConfig::new(RiskVariant::Cor12);
        cfg.replications = 10;
        cfg.n_eval = 200;
        let res = run_experiment(&spec, &BackendConfig::quadrature(129), &cfg, 17)?;
        println!(
            "sigma2 {sigma2:<5} risk {:.4} ± {:.4}  bound {:.3}  {}",
            res.measured_risk,
            res.risk_std_error,
            res.rhs,
            if res.pass { "ok" } else { "exceeded" }
        );
    }
    Ok(())
}
