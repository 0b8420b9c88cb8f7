use crate::config::{RunConfig, StrategyName, TraceLevel};
use crate::error::{CliError, CliResult};
use o2n_core::analysis::{assemble_lemma34_rhs, cx_row, mean_sem, BoundInputs};
use o2n_core::conversion::{cancellation_residual, comparators_from_gradients, AnchoringConfig};
use o2n_core::online_learner::{regret_bound_rhs, RunningRegret};
use o2n_core::schedule_free::{derive_params_with_gap, run_sf_sgd};
use o2n_core::stationarity::{certificate_curve, expected_certificate, IndexLaw};
use o2n_core::{
    run_anchoring, run_conversion, ConversionTrace, Error, OmdLearner, ParamSet, Problem, SfSgd, StoGradOracle,
    StreamId, Streams, Strategy, Vector,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

/// Constants actually used by a run, with the derived set they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub derived: ParamSet,
    pub beta: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub mu: f64,
    pub eta: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub cx_bound: f64,
    pub overridden: Vec<String>,
    /// `F(x0) - optimum_lower_bound`, when the problem supplies a bound.
    pub delta_f: Option<f64>,
    /// Whether T (or N for anchoring) reaches the derived threshold; `None`
    /// when `delta_f` is unknown and the threshold cannot be evaluated.
    pub horizon_sufficient: Option<bool>,
}

pub fn resolve_params(cfg: &RunConfig, problem: &Problem, x0: &Vector) -> CliResult<EffectiveParams> {
    let cx_bound = cfg.strategy.cx_bound();
    let delta_f = match problem.optimum_lower_bound() {
        Some(lb) => Some((problem.evaluate(x0)? - lb).max(0.0)),
        None => None,
    };
    let derived =
        derive_params_with_gap(cfg.epsilon, cfg.lambda, problem.lipschitz_g(), cfg.sigma, cx_bound, delta_f)?;
    let o = &cfg.overrides;
    let mut overridden = Vec::new();
    let mut pick = |name: &str, v: Option<f64>, default: f64| {
        v.map_or(default, |v| {
            overridden.push(name.to_string());
            v
        })
    };
    let beta = pick("beta", o.beta, derived.beta_star);
    let d = pick("D", o.d, derived.d_star);
    let mu = pick("mu", o.mu, derived.mu_star);
    let tuned = 2.0 * d * (1.0 - beta).sqrt() / (problem.lipschitz_g() + cfg.sigma);
    let eta_default = if o.beta.is_some() || o.d.is_some() { tuned } else { derived.eta_star };
    let eta = pick("eta", o.eta, eta_default);
    let zeta = beta / (1.0 + eta * mu);
    let gamma = pick("gamma", o.gamma, eta / (1.0 - zeta));
    // With gamma overridden the bookkeeping eta follows gamma.
    let eta = if o.gamma.is_some() { gamma * (1.0 - zeta) } else { eta };
    let horizon_sufficient = delta_f.map(|_| match (cfg.strategy, derived.epochs_min) {
        (StrategyName::Anchoring, Some(n)) => cfg.epochs as u64 >= n && cfg.steps as u64 >= derived.t_min,
        _ => cfg.steps as u64 >= derived.t_min,
    });
    Ok(EffectiveParams { derived, beta, d, mu, eta, zeta, gamma, cx_bound, overridden, delta_f, horizon_sufficient })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed_index: usize,
    /// Exact expectation over the output-index law (averaged over epochs).
    pub expected_certificate: f64,
    /// Certificate at `t = ceil(T/10)` and at `t = T` (last epoch).
    pub certificate_t10: f64,
    pub certificate_final: f64,
    /// Largest measured stability factor over epochs.
    pub measured_cx: f64,
    pub cx_pass: bool,
    /// `min_t (bound - Regret_t(u_t))`.
    pub regret_margin: f64,
    pub lemma34_rhs: Option<f64>,
    pub lemma34_slack: Option<f64>,
    pub lemma34_note: Option<String>,
    pub cancellation_residual: Option<f64>,
    pub final_loss: f64,
    pub degenerate_comparators: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub problem: String,
    pub dim: usize,
    pub strategy: StrategyName,
    pub config: RunConfig,
    pub params: EffectiveParams,
    pub seeds: Vec<SeedRow>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

/// One step of one seed, as written to the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub schema_version: u32,
    pub seed: usize,
    pub epoch: usize,
    pub t: usize,
    /// `s_t`, or `kappa_t` for SF_SGD_DIRECT.
    pub s_or_kappa: f64,
    pub delta_norm: f64,
    pub g_norm: f64,
    pub f_x: f64,
    pub f_w: f64,
    pub f_y: f64,
    pub certificate: Option<f64>,
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<TraceRow>,
    /// Wall-clock seconds per seed. Kept out of the summary so that summaries
    /// are reproducible byte for byte.
    pub seconds: Vec<f64>,
}

/// Worker count from `O2N_WORKERS`, defaulting to the available parallelism.
pub fn workers() -> usize {
    std::env::var("O2N_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// About ten log-spaced rounds per decade, plus `ceil(T/10)` and `T`.
pub fn checkpoints(steps: usize) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = (0..)
        .map(|k| 10f64.powf(k as f64 / 10.0).round() as usize)
        .take_while(|&t| t <= steps)
        .collect();
    set.insert(steps.div_ceil(10));
    set.insert(steps);
    set
}

struct Epoch {
    strategy: Strategy,
    trace: ConversionTrace,
    kappas: Option<Vec<f64>>,
}

fn simulate(cfg: &RunConfig, problem: &Problem, x0: &Vector, p: &EffectiveParams, streams: &Streams) -> o2n_core::Result<Vec<Epoch>> {
    let mut oracle = StoGradOracle::new(problem, cfg.sigma, streams.rng(StreamId::Oracle))?;
    let mut interp = streams.rng(StreamId::Interp);
    let learner = OmdLearner::new(problem.dim(), p.eta, p.mu, p.beta)?;
    let single = |strategy: Strategy, trace: ConversionTrace| vec![Epoch { strategy, trace, kappas: None }];
    Ok(match cfg.strategy {
        StrategyName::OptionI | StrategyName::OptionII | StrategyName::OptionIii => {
            let strategy = match cfg.strategy {
                StrategyName::OptionI => Strategy::OptionI,
                StrategyName::OptionII => Strategy::OptionII,
                _ => Strategy::option_iii_for(&learner),
            };
            single(strategy, run_conversion(&mut oracle, learner, strategy, cfg.steps, x0, &mut interp, true)?)
        }
        StrategyName::Anchoring => {
            let ac = AnchoringConfig { epochs: cfg.epochs, steps: cfg.steps };
            run_anchoring(&mut oracle, &learner, ac, x0, &mut interp, &mut streams.rng(StreamId::Anchor), true)?
                .into_iter()
                .map(|e| Epoch { strategy: Strategy::OptionII, trace: e.trace, kappas: None })
                .collect()
        }
        StrategyName::SfSgdDirect => {
            let state = SfSgd::exploratory(x0, p.gamma, 1.0 - p.zeta, p.zeta, 1.0)?;
            let sf = run_sf_sgd(state, &mut oracle, &mut interp, cfg.steps)?;
            let kappas = sf.steps.iter().map(|s| s.kappa).collect();
            let trace = sf.to_conversion_trace(p.eta, p.mu, p.beta, Some(problem))?;
            vec![Epoch { strategy: Strategy::OptionIII { zeta: p.zeta }, trace, kappas: Some(kappas) }]
        }
    })
}

struct EpochStats {
    expected: f64,
    curve: Vec<f64>,
    cx: f64,
    cx_pass: bool,
    regret_margin: f64,
    lemma: Result<(f64, f64), String>,
    cancellation: Option<f64>,
    degenerate: usize,
}

fn epoch_stats(cfg: &RunConfig, problem: &Problem, p: &EffectiveParams, e: &Epoch) -> o2n_core::Result<EpochStats> {
    let tr = &e.trace;
    let grads = tr.true_gradients(problem)?;
    let curve = certificate_curve(&tr.ys(), &grads, p.beta, cfg.lambda)?;
    let expected = expected_certificate(&curve, &IndexLaw::new(p.beta, tr.len())?)?;
    let row = cx_row(&e.strategy, tr);

    let comparators = comparators_from_gradients(&grads, p.beta, p.d);
    let bound = regret_bound_rhs(p.d, problem.lipschitz_g(), cfg.sigma, p.beta, p.mu)?;
    let mut running = RunningRegret::new(problem.dim(), p.beta, p.mu);
    let mut regret_margin = f64::INFINITY;
    for (s, c) in tr.steps.iter().zip(&comparators) {
        running.push(&s.g, &s.delta);
        regret_margin = regret_margin.min(bound - running.regret(&c.u));
    }

    let inputs = BoundInputs { d: p.d, lambda: cfg.lambda, sigma: cfg.sigma, cx_bound: p.cx_bound };
    let lemma = match assemble_lemma34_rhs(tr, problem, &inputs) {
        Ok(r) => Ok((r.rhs, r.slack)),
        Err(Error::Regime(m)) => Err(m),
        Err(other) => return Err(other),
    };
    let cancellation = matches!(e.strategy, Strategy::OptionIII { .. }).then(|| cancellation_residual(tr));
    Ok(EpochStats {
        expected,
        curve,
        cx: row.measured,
        cx_pass: row.pass,
        regret_margin,
        lemma,
        cancellation,
        degenerate: comparators.iter().filter(|c| c.degenerate).count(),
    })
}

fn run_seed(
    cfg: &RunConfig,
    problem: &Problem,
    x0: &Vector,
    p: &EffectiveParams,
    index: usize,
    marks: &BTreeSet<usize>,
) -> CliResult<(SeedRow, Vec<TraceRow>, f64)> {
    let clock = Instant::now();
    let streams = Streams::new(cfg.master_seed).child(index as u64);
    let fail = |e| CliError::from_core(e, index as u64);
    let epochs = simulate(cfg, problem, x0, p, &streams).map_err(fail)?;
    let stats = epochs.iter().map(|e| epoch_stats(cfg, problem, p, e)).collect::<o2n_core::Result<Vec<_>>>().map_err(fail)?;

    let mut rows = Vec::new();
    if cfg.trace != TraceLevel::Off {
        for (k, (e, st)) in epochs.iter().zip(&stats).enumerate() {
            for (i, s) in e.trace.steps.iter().enumerate() {
                let t = i + 1;
                let show = cfg.trace == TraceLevel::Full || marks.contains(&t);
                rows.push(TraceRow {
                    schema_version: SCHEMA_VERSION,
                    seed: index,
                    epoch: k + 1,
                    t,
                    s_or_kappa: e.kappas.as_ref().map_or(s.s, |ks| ks[i]),
                    delta_norm: s.delta.norm(),
                    g_norm: s.g.norm(),
                    f_x: s.f_x.unwrap_or(f64::NAN),
                    f_w: s.f_w.unwrap_or(f64::NAN),
                    f_y: s.f_y.unwrap_or(f64::NAN),
                    certificate: show.then(|| st.curve[i]),
                });
            }
        }
    }

    let n = stats.len() as f64;
    let last = stats.last().expect("at least one epoch");
    let last_trace = &epochs.last().expect("at least one epoch").trace;
    let lemma_ok: Vec<(f64, f64)> = stats.iter().filter_map(|s| s.lemma.clone().ok()).collect();
    let lemma_note = stats.iter().find_map(|s| s.lemma.clone().err());
    let (lemma34_rhs, lemma34_slack) = if lemma_note.is_none() {
        (
            Some(lemma_ok.iter().map(|v| v.0).sum::<f64>() / n),
            Some(lemma_ok.iter().map(|v| v.1).sum::<f64>() / n),
        )
    } else {
        (None, None)
    };
    let steps = last.curve.len();
    let last_step = last_trace.steps.last().expect("nonempty trace");
    let final_loss = if cfg.strategy == StrategyName::SfSgdDirect { last_step.f_x } else { last_step.f_w };
    let row = SeedRow {
        seed_index: index,
        expected_certificate: stats.iter().map(|s| s.expected).sum::<f64>() / n,
        certificate_t10: last.curve[steps.div_ceil(10) - 1],
        certificate_final: last.curve[steps - 1],
        measured_cx: stats.iter().map(|s| s.cx).fold(0.0, f64::max),
        cx_pass: stats.iter().all(|s| s.cx_pass),
        regret_margin: stats.iter().map(|s| s.regret_margin).fold(f64::INFINITY, f64::min),
        lemma34_rhs,
        lemma34_slack,
        lemma34_note: lemma_note,
        cancellation_residual: last.cancellation.map(|_| stats.iter().filter_map(|s| s.cancellation).fold(0.0, f64::max)),
        final_loss: final_loss.unwrap_or(f64::NAN),
        degenerate_comparators: stats.iter().map(|s| s.degenerate).sum(),
    };
    Ok((row, rows, clock.elapsed().as_secs_f64()))
}

fn aggregate(rows: &[SeedRow]) -> BTreeMap<String, Aggregate> {
    type Column = (&'static str, fn(&SeedRow) -> Option<f64>);
    let columns: [Column; 9] = [
        ("expected_certificate", |r| Some(r.expected_certificate)),
        ("certificate_t10", |r| Some(r.certificate_t10)),
        ("certificate_final", |r| Some(r.certificate_final)),
        ("measured_cx", |r| Some(r.measured_cx)),
        ("regret_margin", |r| Some(r.regret_margin)),
        ("lemma34_rhs", |r| r.lemma34_rhs),
        ("lemma34_slack", |r| r.lemma34_slack),
        ("cancellation_residual", |r| r.cancellation_residual),
        ("final_loss", |r| Some(r.final_loss)),
    ];
    columns
        .iter()
        .filter_map(|(name, get)| {
            let vals: Vec<f64> = rows.iter().filter_map(get).collect();
            (!vals.is_empty()).then(|| {
                let (mean, sem) = mean_sem(&vals);
                (name.to_string(), Aggregate { n: vals.len(), mean, sem })
            })
        })
        .collect()
}

/// Executes every seed of `cfg` on a pool of [`workers`] threads. Results are
/// collected in seed order, so output does not depend on scheduling.
pub fn run(cfg: &RunConfig) -> CliResult<RunOutput> {
    cfg.validate()?;
    let problem = cfg.load_problem()?;
    let x0 = cfg.start(&problem)?;
    let params = resolve_params(cfg, &problem, &x0)?;
    let marks = checkpoints(cfg.steps);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers())
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        (0..cfg.seeds).into_par_iter().map(|i| run_seed(cfg, &problem, &x0, &params, i, &marks)).collect()
    });
    let mut seeds = Vec::with_capacity(cfg.seeds);
    let mut trace = Vec::new();
    let mut seconds = Vec::with_capacity(cfg.seeds);
    for r in results {
        let (row, rows, secs) = r?;
        seeds.push(row);
        trace.extend(rows);
        seconds.push(secs);
    }
    let aggregates = aggregate(&seeds);
    // Where artifacts go does not change what they contain.
    let mut echoed = cfg.clone();
    echoed.output_dir = None;
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        problem: problem.name().to_string(),
        dim: problem.dim(),
        strategy: cfg.strategy,
        config: echoed,
        params,
        seeds,
        aggregates,
    };
    Ok(RunOutput { summary, trace, seconds })
}

pub fn summary_json(summary: &RunSummary) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "schema_version", "seed", "epoch", "t", "s_or_kappa", "delta_norm", "g_norm", "f_x", "f_w", "f_y",
            "certificate",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.json`, `timings.json` and (unless tracing is off) `trace.csv`.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), summary_json(&out.summary)?)?;
    let timings = serde_json::json!({ "schema_version": SCHEMA_VERSION, "seconds_per_seed": out.seconds });
    std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&timings)? + "\n")?;
    if out.summary.config.trace != TraceLevel::Off {
        write_trace_csv(&out.trace, std::fs::File::create(dir.join("trace.csv"))?)?;
    }
    Ok(())
}
