//! `seqsew run | verify | batch | plot | gen`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::batch::{default_family_grid, psi_table, remark15_shift_check, run_experiment, BatchConfig, BATCH_SCHEMA};
use crate::bounds::{default_comparators, replay_allowance, verify, BoundInputs, BoundName, BoundReport};
use crate::config::{BatchVariant, RunConfig};
use crate::datagen::{write_samples_csv, Scenario};
use crate::error::{Error, Result};
use crate::forecasters::{run_features, RoundRecord, RunOutput};
use crate::plot::{render, PlotKind};
use crate::posterior::BackendKind;

pub const RUN_SCHEMA: &str = "seqsew.run.v1";
pub const SUMMARY_SCHEMA: &str = "seqsew.summary.v1";
pub const TRUTH_SCHEMA: &str = "seqsew.truth.v1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BOUND: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "seqsew", version, about = "Sparse online regression by exponential weighting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run config
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Output directory (overrides outputs.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Particle count for the stochastic backends
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the online protocol and write run.csv and summary.json
    Run(Common),
    /// Check regret bounds on a run and write bounds.json
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated bound names (prop2, cor3, prop5, cor6, cor7, thm8, cor9)
        #[arg(long)]
        bounds: Option<String>,
    },
    /// Batch risk experiment; writes batch.json
    Batch {
        #[command(flatten)]
        common: Common,
        /// thm10, cor11, cor12, thm13, cor14, remark15 or psi
        #[arg(long)]
        variant: Option<String>,
    },
    /// Render an SVG from run CSVs, bound reports or batch results
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a scenario's data and write data.csv and truth.json
    Gen(Common),
}

fn parse_backend(s: &str) -> std::result::Result<BackendKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown backend `{s}`; expected importance, chain or quadrature"))
}

enum Outcome {
    Ok,
    BoundFailure,
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.scenario.seed = seed;
    }
    if let Some(kind) = common.backend {
        cfg.backend.kind = kind;
    }
    if let Some(n) = common.samples {
        cfg.backend.n_samples = n;
    }
    let dir = common.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((cfg, dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::arg(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_run_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut buf = format!("# schema: {RUN_SCHEMA}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in records {
            w.serialize(r).map_err(|e| Error::arg(e.to_string()))?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::write(path, buf).map_err(io)
}

/// Generates the scenario, resolves the forecaster and runs the protocol.
pub struct Prepared {
    pub output: RunOutput,
    pub inputs: BoundInputs,
    pub warnings: Vec<String>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let scenario = Scenario::new(&cfg.scenario)?;
    let samples = scenario.generate()?;
    let dict = scenario.dictionary();
    let features = samples
        .iter()
        .enumerate()
        .map(|(k, (x, _))| dict.features(x).map_err(|e| Error::Data { round: k + 1, message: e.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let resolved = cfg.forecaster.resolve(&features, &ys)?;
    let mut f = resolved.spec.build(dict.dim(), &cfg.backend, cfg.forecaster_seed())?;
    let output = run_features(f.as_mut(), &features, &ys)?;
    Ok(Prepared { output, inputs: resolved.inputs, warnings: resolved.warnings })
}

#[derive(Serialize)]
struct ThresholdChange {
    t: usize,
    #[serde(rename = "B_t")]
    b_t: f64,
    eta_t: f64,
}

#[derive(Serialize)]
struct RegimeStart {
    t: usize,
    regime: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    forecaster: &'a crate::forecasters::ForecasterSpec,
    backend: &'a crate::posterior::BackendConfig,
    #[serde(rename = "T")]
    t: usize,
    d: usize,
    cumulative_loss: f64,
    threshold_changes: Vec<ThresholdChange>,
    regime_starts: Vec<RegimeStart>,
    min_ess: f64,
    warnings: &'a [String],
}

fn summarize<'a>(cfg: &'a RunConfig, p: &'a Prepared) -> Summary<'a> {
    let recs = &p.output.records;
    let mut threshold_changes = Vec::new();
    let mut regime_starts = Vec::new();
    for (k, r) in recs.iter().enumerate() {
        let prev = k.checked_sub(1).map(|j| &recs[j]);
        if prev.is_none_or(|q| q.b_t != r.b_t) {
            threshold_changes.push(ThresholdChange { t: r.t, b_t: r.b_t, eta_t: r.eta_t });
        }
        if prev.is_none_or(|q| q.regime != r.regime) {
            regime_starts.push(RegimeStart { t: r.t, regime: r.regime });
        }
    }
    Summary {
        schema: SUMMARY_SCHEMA,
        forecaster: &p.output.spec,
        backend: &cfg.backend,
        t: recs.len(),
        d: p.output.dim,
        cumulative_loss: p.output.cumulative_loss,
        threshold_changes,
        regime_starts,
        min_ess: recs.iter().map(|r| r.ess).fold(f64::INFINITY, f64::min),
        warnings: &p.warnings,
    }
}

fn warn(ws: &[String]) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn cmd_run(common: &Common) -> Result<Outcome> {
    let (cfg, dir) = load(common)?;
    let p = prepare(&cfg)?;
    warn(&p.warnings);
    write_run_csv(&dir.join("run.csv"), &p.output.records)?;
    write_json(&dir.join("summary.json"), &summarize(&cfg, &p))?;
    Ok(Outcome::Ok)
}

fn parse_bounds(list: &str) -> Result<Vec<BoundName>> {
    let names: Vec<BoundName> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?;
    if names.is_empty() {
        return Err(Error::arg("--bounds is empty"));
    }
    Ok(names)
}

/// Runs the configured forecaster and checks each bound; reports come back in request order.
pub fn verify_config(cfg: &RunConfig, bounds: &[BoundName]) -> Result<Vec<BoundReport>> {
    let p = prepare(cfg)?;
    warn(&p.warnings);
    let out = &p.output;
    let ys = out.ys();
    let comparators = default_comparators(&out.features, &ys, cfg.verify.max_sparsity, cfg.verify.search)?;
    let allowance = replay_allowance(&out.spec, &cfg.backend, &out.features, &ys, cfg.forecaster_seed(), cfg.verify.replays)?;
    let inputs = BoundInputs {
        b_y: cfg.verify.b_y.or(p.inputs.b_y),
        b_phi: cfg.verify.b_phi.or(p.inputs.b_phi),
    };
    bounds.iter().map(|b| verify(out, *b, &inputs, &comparators, allowance)).collect()
}

fn cmd_verify(common: &Common, bounds: Option<&str>) -> Result<Outcome> {
    let (cfg, dir) = load(common)?;
    let names = match bounds {
        Some(list) => parse_bounds(list)?,
        None => cfg.verify.bounds.clone(),
    };
    let reports = verify_config(&cfg, &names)?;
    write_json(&dir.join("bounds.json"), &reports)?;
    for r in &reports {
        eprintln!("{}: lhs {:.6} rhs {:.6} slack {:.6} {}", r.bound, r.lhs, r.rhs, r.slack, if r.pass { "pass" } else { "FAIL" });
    }
    Ok(if reports.iter().all(|r| r.pass) { Outcome::Ok } else { Outcome::BoundFailure })
}

#[derive(Serialize)]
struct ShiftOutput {
    schema: &'static str,
    variant: BatchVariant,
    #[serde(rename = "T")]
    t: usize,
    d: usize,
    #[serde(flatten)]
    check: crate::batch::ShiftCheck,
    pass: bool,
}

#[derive(Serialize)]
struct PsiOutput {
    schema: &'static str,
    variant: BatchVariant,
    rows: Vec<crate::batch::PsiRow>,
    pass: bool,
}

/// Relative tolerance for the shift check: equivariance holds exactly up to float rounding.
pub const SHIFT_TOLERANCE: f64 = 1e-9;

fn cmd_batch(common: &Common, variant: Option<&str>) -> Result<Outcome> {
    let (cfg, dir) = load(common)?;
    let variant = match variant {
        Some(v) => v.parse()?,
        None => cfg.batch.variant.ok_or_else(|| Error::arg("no batch variant: pass --variant or set batch.variant"))?,
    };
    let b = &cfg.batch;
    let pass = match variant.risk() {
        Some(risk) => {
            let bc = BatchConfig {
                variant: risk,
                replications: b.replications,
                n_eval: b.n_eval,
                witness: b.witness.clone(),
                mc_draws: b.mc_draws,
            };
            let res = run_experiment(&cfg.scenario, &cfg.backend, &bc, cfg.forecaster_seed())?;
            let path = dir.join("replications.csv");
            let mut text = format!("# schema: {BATCH_SCHEMA}\nreplication,risk\n");
            for (k, r) in res.replications.iter().enumerate() {
                text.push_str(&format!("{},{}\n", k + 1, r));
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            write_json(&dir.join("batch.json"), &res)?;
            eprintln!("{}: risk {:.6} ± {:.6}, bound {:.6}", res.variant.as_str(), res.measured_risk, res.risk_std_error, res.rhs);
            res.pass
        }
        None if variant == BatchVariant::Remark15 => {
            let check = remark15_shift_check(&cfg.scenario, &cfg.backend, b.shift, b.n_eval, cfg.forecaster_seed())?;
            let pass = check.max_deviation <= SHIFT_TOLERANCE * b.shift.abs().max(1.0);
            write_json(
                &dir.join("batch.json"),
                &ShiftOutput { schema: BATCH_SCHEMA, variant, t: cfg.scenario.t, d: cfg.scenario.d, check, pass },
            )?;
            pass
        }
        None => {
            let families = if b.families.is_empty() { default_family_grid() } else { b.families.clone() };
            let rows = psi_table(&families, cfg.scenario.t, b.psi_replications, cfg.seed)?;
            let pass = rows.iter().all(|r| r.pass);
            write_json(&dir.join("batch.json"), &PsiOutput { schema: BATCH_SCHEMA, variant, rows, pass })?;
            pass
        }
    };
    Ok(if pass { Outcome::Ok } else { Outcome::BoundFailure })
}

#[derive(Serialize)]
struct TruthOutput<'a> {
    schema: &'static str,
    u_true: &'a [f64],
    offset: f64,
}

fn cmd_gen(common: &Common) -> Result<Outcome> {
    let (cfg, dir) = load(common)?;
    let scenario = Scenario::new(&cfg.scenario)?;
    let samples = scenario.generate()?;
    write_samples_csv(&dir.join("data.csv"), &samples)?;
    write_json(
        &dir.join("truth.json"),
        &TruthOutput { schema: TRUTH_SCHEMA, u_true: &scenario.truth.u, offset: scenario.truth.offset },
    )?;
    Ok(Outcome::Ok)
}

fn cmd_plot(input: &[PathBuf], kind: PlotKind, out: &Path) -> Result<Outcome> {
    let svg = render(kind, input)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let name = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let path = out.join(format!("{name}.svg"));
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(Outcome::Ok)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.cmd {
        Cmd::Run(c) => cmd_run(c),
        Cmd::Verify { common, bounds } => cmd_verify(common, bounds.as_deref()),
        Cmd::Batch { common, variant } => cmd_batch(common, variant.as_deref()),
        Cmd::Plot { input, kind, out } => cmd_plot(input, *kind, out),
        Cmd::Gen(c) => cmd_gen(c),
    };
    match result {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::BoundFailure) => EXIT_BOUND,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
