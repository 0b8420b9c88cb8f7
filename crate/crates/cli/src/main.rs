use clap::{Args, Parser, Subcommand};
use o2n_cli::config::{RunConfig, StrategyName, TraceLevel};
use o2n_cli::error::{CliError, CliResult};
use o2n_cli::runner::summary_json;
use o2n_cli::{run, verify, write_artifacts, ParamsDocument, Suite, SCHEMA_VERSION};
use o2n_core::problem::problem_by_name;
use o2n_core::schedule_free::{derive_params, derive_params_with_gap, run_equivalence};
use o2n_core::Streams;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "o2n", version, about = "Online-to-nonconvex conversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded experiments and write summary, timings and trace artifacts.
    Run(RunArgs),
    /// Print the derived parameter set as JSON.
    Params(ParamsArgs),
    /// Run a named check suite; exits 1 on the first failing invariant.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Parameter-set JSON (as printed by `o2n params`) to check as well.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Where to write the JSON report (stdout if absent).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare OPTION_III with direct schedule-free SGD on shared streams.
    Equivalence(EquivalenceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    problem_file: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyName>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "steps", short = 'T')]
    steps: Option<usize>,
    #[arg(long = "epochs", short = 'N')]
    epochs: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long = "seed")]
    master_seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "D")]
    d: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Output directory for artifacts (summary is printed if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    trace: Option<TraceLevel>,
    /// Certificates on every trace row (same as `--trace full`).
    #[arg(long)]
    full_density: bool,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long = "G")]
    g: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long = "cx")]
    cx_bound: f64,
    /// Loss gap for the horizon threshold.
    #[arg(long)]
    delta_f: Option<f64>,
}

#[derive(Args)]
struct EquivalenceArgs {
    #[arg(long, default_value = "abs_sum")]
    problem: String,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long = "steps", short = 'T', default_value_t = 1000)]
    steps: usize,
    #[arg(long = "seed", default_value_t = 0)]
    seed: u64,
    /// Replace the derived SF step size (negative control).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn missing(name: &str) -> CliError {
    CliError::Config(format!("--{name} is required without --config"))
}

fn build_config(a: RunArgs) -> CliResult<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => RunConfig::new(
            a.problem.as_deref().ok_or_else(|| missing("problem"))?,
            a.strategy.ok_or_else(|| missing("strategy"))?,
            a.epsilon.ok_or_else(|| missing("epsilon"))?,
            a.sigma.ok_or_else(|| missing("sigma"))?,
            a.steps.ok_or_else(|| missing("steps"))?,
        ),
    };
    if a.config.is_none() {
        cfg.trace = TraceLevel::Checkpoints;
    }
    macro_rules! set {
        ($($field:ident).+ = $value:expr) => {
            if let Some(v) = $value {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(problem = a.problem);
    set!(strategy = a.strategy);
    set!(epsilon = a.epsilon);
    set!(sigma = a.sigma);
    set!(steps = a.steps);
    set!(dim = a.dim);
    set!(lambda = a.lambda);
    set!(epochs = a.epochs);
    set!(seeds = a.seeds);
    set!(master_seed = a.master_seed);
    set!(trace = a.trace);
    if a.problem_file.is_some() {
        cfg.problem_file = a.problem_file;
    }
    if a.out.is_some() {
        cfg.output_dir = a.out;
    }
    for (slot, v) in [
        (&mut cfg.overrides.beta, a.beta),
        (&mut cfg.overrides.d, a.d),
        (&mut cfg.overrides.mu, a.mu),
        (&mut cfg.overrides.eta, a.eta),
        (&mut cfg.overrides.gamma, a.gamma),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    if a.full_density {
        cfg.trace = TraceLevel::Full;
    }
    Ok(cfg)
}

fn emit(json: &str, path: Option<&PathBuf>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(args)?;
            let out = run(&cfg)?;
            match &cfg.output_dir {
                Some(dir) => {
                    write_artifacts(&out, dir)?;
                    eprintln!("wrote {}", dir.display());
                }
                None => print!("{}", summary_json(&out.summary)?),
            }
            Ok(())
        }
        Command::Params(a) => {
            let params = derive_params_with_gap(a.epsilon, a.lambda, a.g, a.sigma, a.cx_bound, a.delta_f)?;
            let doc = ParamsDocument { schema_version: SCHEMA_VERSION, params };
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(())
        }
        Command::Verify { suite, params, report } => {
            let fixture = match params {
                Some(path) => {
                    let doc: ParamsDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                    Some(doc.params)
                }
                None => None,
            };
            let rep = verify(suite, fixture.as_ref())?;
            emit(&(serde_json::to_string_pretty(&rep)? + "\n"), report.as_ref())?;
            rep.into_result().map(|_| ())
        }
        Command::Equivalence(a) => {
            let p = problem_by_name(&a.problem, a.dim)?;
            let params = derive_params(a.epsilon, a.lambda, p.lipschitz_g(), a.sigma, 16.0)?;
            let r = run_equivalence(&p, a.sigma, &params, a.gamma, &p.default_start(), a.steps, &Streams::new(a.seed))?;
            let mut doc = serde_json::to_value(&r.report)?;
            doc["schema_version"] = SCHEMA_VERSION.into();
            emit(&(serde_json::to_string_pretty(&doc)? + "\n"), a.report.as_ref())?;
            if r.report.pass {
                Ok(())
            } else {
                Err(CliError::Check(format!("equivalence: max z discrepancy {:e}", r.report.max_z)))
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("o2n: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
