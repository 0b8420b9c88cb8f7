//! Named check suites behind `o2n verify`.

use crate::error::{CliError, CliResult};
use crate::runner::SCHEMA_VERSION;
use o2n_core::analysis::{cx_report, lambda_bound_check, mean_sem, mu_threshold};
use o2n_core::conversion::{cancellation_residual, comparators_from_gradients, loss_decrement_sum};
use o2n_core::online_learner::{composite_omd_step, regret_bound_rhs, RegretLedger, RunningRegret};
use o2n_core::problem::builtin_problems;
use o2n_core::schedule_free::{derive_params, extrapolated_z_residual, run_equivalence};
use o2n_core::stationarity::{q_weights, variance_decomposition, IndexLaw};
use o2n_core::{
    run_conversion, ConversionTrace, OmdLearner, ParamSet, Problem, StoGradOracle, StreamId, Streams, Strategy, Vector,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Identities,
    Appendix,
    Regret,
    Equivalence,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub suite: Suite,
    pub pass: bool,
    pub first_failure: Option<String>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn into_result(self) -> CliResult<Self> {
        match &self.first_failure {
            Some(name) => Err(CliError::Check(name.clone())),
            None => Ok(self),
        }
    }
}

fn check(name: &str, pass: bool, detail: impl Into<String>) -> Check {
    Check { name: name.to_string(), pass, detail: detail.into() }
}

fn run_one(p: &Problem, sigma: f64, learner: OmdLearner, strategy: Strategy, steps: usize, seed: u64) -> CliResult<ConversionTrace> {
    let s = Streams::new(seed);
    let mut o = StoGradOracle::new(p, sigma, s.rng(StreamId::Oracle))?;
    Ok(run_conversion(&mut o, learner, strategy, steps, &p.default_start(), &mut s.rng(StreamId::Interp), true)?)
}

const PARAM_GRID: [(f64, f64, f64, f64); 4] = [(0.7, 1.0, 1.0, 0.0), (0.5, 2.0, 3.0, 0.5), (0.05, 0.5, 1.0, 0.1), (3.5, 1.0, 0.8, 0.2)];

/// Invariants a parameter set must satisfy, checked on its stored fields.
pub fn param_checks(p: &ParamSet) -> Vec<Check> {
    let scale = p.g + p.sigma;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let mut out = vec![
        check(
            "eta_mu_identity",
            rel(p.eta_star * p.mu_star, p.epsilon * p.epsilon / (7.0 * scale * scale)) <= 1e-12,
            format!("eta* mu* = {}", p.eta_star * p.mu_star),
        ),
        check("zeta_definition", rel(p.zeta_star, p.beta_star / (1.0 + p.eta_star * p.mu_star)) <= 1e-12, ""),
        check("gamma_definition", rel(p.gamma * (1.0 - p.zeta_star), p.eta_star) <= 1e-12, ""),
        check(
            "mu_threshold",
            p.mu_star >= mu_threshold(p.lambda, p.d_star, p.cx_bound, p.beta_star) * (1.0 - 1e-12),
            format!("threshold {}", mu_threshold(p.lambda, p.d_star, p.cx_bound, p.beta_star)),
        ),
    ];
    if p.cx_bound == 16.0 {
        out.push(check("inverse_zeta_at_most_4", 1.0 / p.zeta_star <= 4.0, format!("1/zeta* = {}", 1.0 / p.zeta_star)));
    }
    out.push(match p.check_consistency() {
        Ok(()) => check("recomputed_from_inputs", true, ""),
        Err(e) => check("recomputed_from_inputs", false, e.to_string()),
    });
    out
}

pub fn identities() -> CliResult<Vec<Check>> {
    let mut out = Vec::new();
    for &(eps, lam, g, sigma) in &PARAM_GRID {
        for cx in [0.0, 1.0, 16.0] {
            let p = derive_params(eps, lam, g, sigma, cx)?;
            out.extend(param_checks(&p).into_iter().map(|mut c| {
                c.name = format!("params[eps={eps},cx={cx}].{}", c.name);
                c
            }));
        }
    }
    let grid: Vec<ParamSet> = [0.7, 0.35, 0.175].iter().map(|&e| derive_params(e, 1.0, 1.0, 0.0, 16.0)).collect::<Result<_, _>>()?;
    let ratios: Vec<f64> = grid.windows(2).map(|w| (1.0 - w[0].zeta_star) / (1.0 - w[1].zeta_star)).collect();
    out.push(check("one_minus_zeta_scaling", ratios.iter().all(|r| (3.5..=4.5).contains(r)), format!("{ratios:?}")));
    out.push(check(
        "large_step_ratio",
        grid.iter().all(|p| p.step_ratio() > 49.0 / (p.epsilon * p.epsilon) / 14.0),
        format!("{:?}", grid.iter().map(|p| p.step_ratio()).collect::<Vec<_>>()),
    ));

    let mut worst = 0.0f64;
    for beta in [0.5, 0.9, 0.99, 0.999] {
        for t in [1, 2, 10, 1000] {
            worst = worst.max((IndexLaw::new(beta, t)?.probs().iter().sum::<f64>() - 1.0).abs());
            worst = worst.max((q_weights(beta, t).iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(check("index_and_q_normalization", worst < 1e-12, format!("max error {worst:e}")));

    let p = Problem::abs_sum(10);
    let tr = run_one(&p, 0.1, OmdLearner::new(10, 0.01, 0.5, 0.99)?, Strategy::OptionI, 10_000, 1)?;
    let gap = (loss_decrement_sum(&tr)? - (tr.f_x0.unwrap() - tr.steps.last().unwrap().f_w.unwrap())).abs();
    out.push(check("option_i_telescoping", gap < 1e-10, format!("abs error {gap:e}")));

    for prob in builtin_problems(5) {
        let params = derive_params(0.5, 1.0, prob.lipschitz_g(), 0.1, 16.0)?;
        let l = params.learner(prob.dim())?;
        let strategies = [Strategy::OptionI, Strategy::OptionII, Strategy::option_iii_for(&l)];
        let traces = strategies.iter().map(|s| run_one(&prob, 0.1, l.clone(), *s, 500, 2)).collect::<CliResult<Vec<_>>>()?;
        let c = cancellation_residual(&traces[2]);
        let z = extrapolated_z_residual(&traces[2]);
        out.push(check(&format!("{}.cancellation", prob.name()), c < 1e-12, format!("{c:e}")));
        out.push(check(&format!("{}.extrapolated_z", prob.name()), z < 1e-10, format!("{z:e}")));
        for row in cx_report(strategies.iter().zip(&traces)) {
            out.push(check(&format!("{}.cx.{}", prob.name(), row.strategy), row.pass, format!("{} (bound {})", row.measured, row.bound)));
        }
    }
    Ok(out)
}

pub fn appendix() -> CliResult<Vec<Check>> {
    let r = lambda_bound_check(&[0.3, 0.5, 0.9, 0.99], 200)?;
    let mut out = vec![check(
        "lambda_grid",
        r.pass,
        format!("{} cells, max ratio {}, max closed-form rel err {:e}", r.cells, r.max_ratio, r.max_closed_form_rel_err),
    )];
    let mut worst = f64::NEG_INFINITY;
    for prob in builtin_problems(3) {
        let params = derive_params(0.5, 1.0, prob.lipschitz_g(), 0.1, 16.0)?;
        let l = OmdLearner::new(prob.dim(), params.eta_star * 50.0, params.mu_star, params.beta_star)?;
        for strategy in [Strategy::OptionI, Strategy::OptionII, Strategy::option_iii_for(&l)] {
            let tr = run_one(&prob, 0.1, l.clone(), strategy, 200, 3)?;
            for t in 1..=tr.len() {
                let (lhs, rhs) = variance_decomposition(&tr.xs(), &tr.ys(), params.beta_star, t)?;
                worst = worst.max(lhs - rhs - 1e-12 * (1.0 + rhs));
            }
        }
    }
    out.push(check("variance_decomposition", worst <= 0.0, format!("max excess {worst:e}")));
    Ok(out)
}

pub fn regret() -> CliResult<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = Streams::new(4).rng(StreamId::Aux);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (eta, mu, beta) = (rng.random_range(0.01..2.0), rng.random_range(0.0..3.0), rng.random_range(0.05..0.999));
        let t = rng.random_range(1..40);
        let delta = Vector::from((0..3).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>());
        let g = Vector::from((0..3).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>());
        let direct = OmdLearner::new(3, eta, mu, beta)?.with_delta(delta.clone())?.step(&g)?;
        let bt = f64::powi(beta, t);
        let general = composite_omd_step(&delta, &g.scaled(1.0 / bt), bt * eta, bt * beta * eta, mu / (bt * beta));
        worst = worst.max(direct.delta().dist(&general) / (1.0 + general.norm()));
    }
    out.push(check("composite_omd_consistency", worst <= 1e-12, format!("max rel diff {worst:e}")));

    let mut ledger = RegretLedger::new(0.95, 0.3)?;
    for _ in 0..100 {
        let v = |rng: &mut o2n_core::StreamRng| Vector::from([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        ledger.push(v(&mut rng), v(&mut rng));
    }
    let u = Vector::from([0.3, -0.7]);
    let (a, b) = (ledger.discounted_regret(&u, 100)?, ledger.discounted_regret_naive(&u, 100)?);
    out.push(check("regret_backward_vs_naive", (a - b).abs() <= 1e-10 * a.abs().max(1.0), format!("{a} vs {b}")));

    let (mean_ok, detail) = seed_averaged_regret(50, 1000)?;
    out.push(check("discounted_regret_bound", mean_ok, detail));
    Ok(out)
}

/// Seed-averaged regret against the comparators `u_t` on abs_sum (d = 10,
/// sigma = 0.1, epsilon = 1) with derived parameters, compared with the bound
/// at every round.
pub fn seed_averaged_regret(seeds: u64, steps: usize) -> CliResult<(bool, String)> {
    let p = Problem::abs_sum(10);
    let sigma = 0.1;
    let params = derive_params(1.0, 1.0, p.lipschitz_g(), sigma, 16.0)?;
    let bound = regret_bound_rhs(params.d_star, p.lipschitz_g(), sigma, params.beta_star, params.mu_star)?;
    let mut per_t: Vec<Vec<f64>> = vec![Vec::with_capacity(seeds as usize); steps];
    for seed in 0..seeds {
        let l = params.learner(10)?;
        let tr = run_one(&p, sigma, l.clone(), Strategy::option_iii_for(&l), steps, 1000 + seed)?;
        let grads = tr.true_gradients(&p)?;
        let comps = comparators_from_gradients(&grads, params.beta_star, params.d_star);
        let mut running = RunningRegret::new(10, params.beta_star, params.mu_star);
        for (t, (s, c)) in tr.steps.iter().zip(&comps).enumerate() {
            running.push(&s.g, &s.delta);
            per_t[t].push(running.regret(&c.u));
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for vals in &per_t {
        let (mean, sem) = mean_sem(vals);
        worst = worst.max(mean - bound - 3.0 * sem);
    }
    Ok((worst <= 0.0, format!("bound {bound}, max (mean - bound - 3 SEM) = {worst}")))
}

pub fn equivalence() -> CliResult<Vec<Check>> {
    let p = Problem::abs_sum(10);
    let params = derive_params(1.0, 1.0, p.lipschitz_g(), 0.1, 16.0)?;
    let ok = run_equivalence(&p, 0.1, &params, None, &p.default_start(), 1000, &Streams::new(5))?;
    let bad = run_equivalence(&p, 0.1, &params, Some(params.gamma * 1.1), &p.default_start(), 1000, &Streams::new(5))?;
    Ok(vec![
        check(
            "option_iii_equals_sf_sgd",
            ok.report.pass,
            format!("max x {:e}, y {:e}, z {:e}", ok.report.max_x, ok.report.max_y, ok.report.max_z),
        ),
        check("mismatched_gamma_detected", !bad.report.pass, format!("max z {:e}", bad.report.max_z)),
    ])
}

pub fn verify(suite: Suite, fixture: Option<&ParamSet>) -> CliResult<VerifyReport> {
    let mut checks = Vec::new();
    if let Some(p) = fixture {
        checks.extend(param_checks(p).into_iter().map(|mut c| {
            c.name = format!("fixture.{}", c.name);
            c
        }));
    }
    let run = |s: Suite| matches!(suite, Suite::All) || suite == s;
    if run(Suite::Identities) {
        checks.extend(identities()?);
    }
    if run(Suite::Appendix) {
        checks.extend(appendix()?);
    }
    if run(Suite::Regret) {
        checks.extend(regret()?);
    }
    if run(Suite::Equivalence) {
        checks.extend(equivalence()?);
    }
    let first_failure = checks.iter().find(|c| !c.pass).map(|c| c.name.clone());
    Ok(VerifyReport { schema_version: SCHEMA_VERSION, suite, pass: first_failure.is_none(), first_failure, checks })
}
