//! The general online-to-nonconvex conversion loop and its `x_t` rules.
//!
//! Each round receives `delta_t` from the learner, chooses `x_t`, and sets
//!
//! ```text
//! w_t = x_t + delta_t
//! y_t = x_t + s_t delta_t,   s_t ~ U[0, 1]
//! g_t = StoGrad(y_t)
//! ```
//!
//! then feeds `l_t(v) = <g_t, v> + (mu/2)||v||^2` back to the learner.

use crate::error::{check_dim, Error, Result};
use crate::online_learner::{OmdLearner, RegretLedger};
use crate::problem::{Problem, StoGradOracle};
use crate::rng::StreamRng;
use crate::vector::Vector;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Built-in rules for choosing `x_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// `x_t = w_{t-1}` (with `w_0 = x_0`).
    OptionI,
    /// `x_t = x_0`.
    OptionII,
    /// `x_t = x_{t-1} + delta_t / zeta`. `zeta` must equal the learner's.
    OptionIII { zeta: f64 },
}

impl Strategy {
    pub fn option_iii_for(learner: &OmdLearner) -> Self {
        Strategy::OptionIII { zeta: learner.zeta() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::OptionI => "OPTION_I",
            Strategy::OptionII => "OPTION_II",
            Strategy::OptionIII { .. } => "OPTION_III",
        }
    }

    /// Proven upper bound on the iterate stability factor.
    pub fn stability_bound(&self) -> f64 {
        match self {
            Strategy::OptionI => 1.0,
            Strategy::OptionII => 0.0,
            Strategy::OptionIII { .. } => 16.0,
        }
    }
}

/// Hook for custom `x_t` choices. No guarantee is attached to rules other
/// than the built-in [`Strategy`] variants.
pub trait IterateRule {
    fn next_x(&mut self, x0: &Vector, x_prev: &Vector, w_prev: &Vector, delta: &Vector) -> Vector;

    /// Called once before the first round with the learner that will be used.
    fn validate(&self, _learner: &OmdLearner) -> Result<()> {
        Ok(())
    }
}

impl IterateRule for Strategy {
    fn next_x(&mut self, x0: &Vector, x_prev: &Vector, w_prev: &Vector, delta: &Vector) -> Vector {
        match *self {
            Strategy::OptionI => w_prev.clone(),
            Strategy::OptionII => x0.clone(),
            Strategy::OptionIII { zeta } => x_prev.add_scaled(1.0 / zeta, delta),
        }
    }

    fn validate(&self, learner: &OmdLearner) -> Result<()> {
        if let Strategy::OptionIII { zeta } = *self {
            // Exact comparison: the cancellation identity needs the same constant.
            if zeta != learner.zeta() {
                return Err(Error::Config(format!(
                    "OPTION_III zeta {zeta} does not match learner zeta {}",
                    learner.zeta()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: Vector,
    pub w: Vector,
    pub y: Vector,
    pub delta: Vector,
    pub g: Vector,
    pub s: f64,
    pub f_x: Option<f64>,
    pub f_w: Option<f64>,
    pub f_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionTrace {
    pub x0: Vector,
    pub f_x0: Option<f64>,
    pub eta: f64,
    pub mu: f64,
    pub beta: f64,
    pub zeta: f64,
    pub steps: Vec<StepRecord>,
}

impl ConversionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn ys(&self) -> Vec<&Vector> {
        self.steps.iter().map(|s| &s.y).collect()
    }

    pub fn xs(&self) -> Vec<&Vector> {
        self.steps.iter().map(|s| &s.x).collect()
    }

    pub fn ledger(&self) -> RegretLedger {
        let mut ledger = RegretLedger::new(self.beta, self.mu).expect("trace beta already validated");
        for s in &self.steps {
            ledger.push(s.g.clone(), s.delta.clone());
        }
        ledger
    }

    /// `grad F(y_t)` for every round.
    pub fn true_gradients(&self, problem: &Problem) -> Result<Vec<Vector>> {
        self.steps.iter().map(|s| problem.gradient_at(&s.y)).collect()
    }

    pub fn has_losses(&self) -> bool {
        self.f_x0.is_some() && self.steps.iter().all(|s| s.f_x.is_some() && s.f_w.is_some())
    }
}

fn ensure_finite(step: usize, name: &str, v: &Vector) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, what: format!("non-finite {name}") })
    }
}

/// Runs `steps` rounds of the conversion with a built-in strategy.
pub fn run_conversion(
    oracle: &mut StoGradOracle<'_>,
    learner: OmdLearner,
    strategy: Strategy,
    steps: usize,
    x0: &Vector,
    interp: &mut StreamRng,
    record_losses: bool,
) -> Result<ConversionTrace> {
    let mut rule = strategy;
    run_conversion_with(oracle, learner, &mut rule, steps, x0, interp, record_losses)
}

pub fn run_conversion_with<R: IterateRule + ?Sized>(
    oracle: &mut StoGradOracle<'_>,
    mut learner: OmdLearner,
    rule: &mut R,
    steps: usize,
    x0: &Vector,
    interp: &mut StreamRng,
    record_losses: bool,
) -> Result<ConversionTrace> {
    if steps == 0 {
        return Err(Error::Config("at least one step is required".into()));
    }
    let problem = oracle.problem();
    check_dim(problem.dim(), x0.dim())?;
    check_dim(problem.dim(), learner.delta().dim())?;
    if learner.delta().norm_sq() != 0.0 {
        return Err(Error::Config("learner must start from a zero update".into()));
    }
    rule.validate(&learner)?;

    let loss = |v: &Vector| -> Result<Option<f64>> {
        if record_losses {
            problem.evaluate(v).map(Some)
        } else {
            Ok(None)
        }
    };

    let mut trace = ConversionTrace {
        x0: x0.clone(),
        f_x0: loss(x0)?,
        eta: learner.eta(),
        mu: learner.mu(),
        beta: learner.beta(),
        zeta: learner.zeta(),
        steps: Vec::with_capacity(steps),
    };
    let mut x_prev = x0.clone();
    let mut w_prev = x0.clone();
    for t in 1..=steps {
        let delta = learner.delta().clone();
        let x = rule.next_x(x0, &x_prev, &w_prev, &delta);
        check_dim(problem.dim(), x.dim())?;
        let w = x.add(&delta);
        let s: f64 = interp.random();
        let y = x.add_scaled(s, &delta);
        ensure_finite(t, "x", &x)?;
        ensure_finite(t, "w", &w)?;
        ensure_finite(t, "y", &y)?;
        let g = oracle.sample(&y)?;
        ensure_finite(t, "gradient", &g)?;
        learner.observe(&g)?;
        trace.steps.push(StepRecord {
            f_x: loss(&x)?,
            f_w: loss(&w)?,
            f_y: loss(&y)?,
            x: x.clone(),
            w: w.clone(),
            y,
            delta,
            g,
            s,
        });
        x_prev = x;
        w_prev = w;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoringConfig {
    pub epochs: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorEpoch {
    pub anchor: Vector,
    pub trace: ConversionTrace,
    /// 1-based round whose `w_t` became the next anchor.
    pub next_anchor_index: usize,
}

/// Multi-epoch OPTION_II: each epoch starts at its anchor with a fresh learner,
/// and the next anchor is a uniformly chosen `w_t` of that epoch.
pub fn run_anchoring(
    oracle: &mut StoGradOracle<'_>,
    learner_template: &OmdLearner,
    config: AnchoringConfig,
    x0: &Vector,
    interp: &mut StreamRng,
    anchor_rng: &mut StreamRng,
    record_losses: bool,
) -> Result<Vec<AnchorEpoch>> {
    if config.epochs == 0 || config.steps == 0 {
        return Err(Error::Config("anchoring needs at least one epoch and one step".into()));
    }
    let mut anchor = x0.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let trace = run_conversion(
            oracle,
            learner_template.reset(),
            Strategy::OptionII,
            config.steps,
            &anchor,
            interp,
            record_losses,
        )?;
        let idx = anchor_rng.random_range(0..config.steps);
        let next = trace.steps[idx].w.clone();
        epochs.push(AnchorEpoch { anchor, trace, next_anchor_index: idx + 1 });
        anchor = next;
    }
    Ok(epochs)
}

/// `sum ||x_t - x_{t-1}||^2 / sum ||delta_t||^2`, or 0 when every update is zero.
pub fn stability_factor(trace: &ConversionTrace) -> f64 {
    let mut prev = &trace.x0;
    let mut moved = 0.0;
    let mut updates = 0.0;
    for s in &trace.steps {
        moved += s.x.dist_sq(prev);
        updates += s.delta.norm_sq();
        prev = &s.x;
    }
    if updates == 0.0 {
        0.0
    } else {
        moved / updates
    }
}

/// Comparator `u_t = -D m_t / ||m_t||` with `m_t = sum_{s<=t} beta^{t-s} grad F(y_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparator {
    pub u: Vector,
    /// The discounted gradient sum had norm below 1e-12; `u` is zero.
    pub degenerate: bool,
}

const DEGENERATE_NORM: f64 = 1e-12;

pub fn comparators_from_gradients<V: AsRef<Vector>>(grads: &[V], beta: f64, d: f64) -> Vec<Comparator> {
    let Some(first) = grads.first() else {
        return Vec::new();
    };
    let mut m = Vector::zeros(first.as_ref().dim());
    grads
        .iter()
        .map(|g| {
            m.scale_and_add(beta, g.as_ref());
            let n = m.norm();
            if n < DEGENERATE_NORM {
                Comparator { u: Vector::zeros(m.dim()), degenerate: true }
            } else {
                Comparator { u: m.scaled(-d / n), degenerate: false }
            }
        })
        .collect()
}

pub fn comparator_sequence(trace: &ConversionTrace, problem: &Problem, beta: f64, d: f64) -> Result<Vec<Comparator>> {
    let grads = trace.true_gradients(problem)?;
    Ok(comparators_from_gradients(&grads, beta, d))
}

/// `sum_t (F(x_t) - F(w_t))`.
pub fn loss_decrement_sum(trace: &ConversionTrace) -> Result<f64> {
    trace
        .steps
        .iter()
        .map(|s| match (s.f_x, s.f_w) {
            (Some(fx), Some(fw)) => Ok(fx - fw),
            _ => Err(Error::Config("trace was recorded without loss values".into())),
        })
        .sum()
}

/// Lipschitz decomposition of the loss-decrement sum:
/// returns `(sum (F(x_t) - F(w_t)), sum G||x_t - w_{t-1}|| + F(w_0) - F(w_T))`.
/// The first never exceeds the second for a `G`-Lipschitz loss.
pub fn lipschitz_decomposition(trace: &ConversionTrace, lipschitz_g: f64) -> Result<(f64, f64)> {
    let lhs = loss_decrement_sum(trace)?;
    let f0 = trace.f_x0.ok_or_else(|| Error::Config("trace was recorded without loss values".into()))?;
    let f_last = trace.steps.last().and_then(|s| s.f_w).expect("losses present");
    let mut w_prev = &trace.x0;
    let mut drift = 0.0;
    for s in &trace.steps {
        drift += s.x.dist(w_prev);
        w_prev = &s.w;
    }
    Ok((lhs, lipschitz_g * drift + f0 - f_last))
}

/// Largest relative residual of `x_t - w_{t-1} + eta g_{t-1}` over `t >= 2`,
/// scaled by the magnitude of the operands.
pub fn cancellation_residual(trace: &ConversionTrace) -> f64 {
    trace
        .steps
        .windows(2)
        .map(|pair| {
            let (prev, cur) = (&pair[0], &pair[1]);
            let r = cur.x.sub(&prev.w).add_scaled(trace.eta, &prev.g);
            r.norm() / (cur.x.norm() + prev.w.norm() + trace.eta * prev.g.norm()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamId, Streams};

    fn setup(problem: &Problem, sigma: f64, seed: u64) -> (StoGradOracle<'_>, StreamRng) {
        let s = Streams::new(seed);
        (StoGradOracle::new(problem, sigma, s.rng(StreamId::Oracle)).unwrap(), s.rng(StreamId::Interp))
    }

    #[test]
    fn single_step_stays_at_start() {
        let p = Problem::abs_sum(3);
        for strat in [Strategy::OptionI, Strategy::OptionII] {
            let (mut o, mut r) = setup(&p, 0.1, 1);
            let l = OmdLearner::new(3, 0.1, 0.5, 0.9).unwrap();
            let x0 = Vector::from([1.0, -2.0, 0.5]);
            let tr = run_conversion(&mut o, l, strat, 1, &x0, &mut r, true).unwrap();
            assert_eq!(tr.len(), 1);
            assert_eq!(tr.steps[0].x, x0);
            assert_eq!(tr.steps[0].w, x0);
            assert_eq!(tr.steps[0].y, x0);
        }
    }

    #[test]
    fn option_iii_cancellation_by_hand() {
        // eta = 1, zeta = 0.75 / (1 + 0.5) = 0.5; abs_sum at x0 = 1 gives g_1 = 1.
        let p = Problem::abs_sum(1);
        let (mut o, mut r) = setup(&p, 0.0, 2);
        let l = OmdLearner::new(1, 1.0, 0.5, 0.75).unwrap();
        assert_eq!(l.zeta(), 0.5);
        let strat = Strategy::option_iii_for(&l);
        let tr = run_conversion(&mut o, l, strat, 2, &Vector::from([1.0]), &mut r, false).unwrap();
        assert_eq!(tr.steps[0].g, Vector::from([1.0]));
        assert_eq!(tr.steps[1].x.sub(&tr.steps[0].w), Vector::from([-1.0]));
        assert!(cancellation_residual(&tr) < 1e-15);
    }

    #[test]
    fn zeta_mismatch_rejected() {
        let p = Problem::abs_sum(2);
        let (mut o, mut r) = setup(&p, 0.0, 3);
        let l = OmdLearner::new(2, 0.1, 0.5, 0.9).unwrap();
        let bad = Strategy::OptionIII { zeta: l.zeta() * (1.0 + 1e-15) + 1e-16 };
        let err = run_conversion(&mut o, l, bad, 5, &Vector::zeros(2), &mut r, false).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn nonzero_initial_learner_rejected() {
        let p = Problem::abs_sum(1);
        let (mut o, mut r) = setup(&p, 0.0, 3);
        let l = OmdLearner::new(1, 0.1, 0.5, 0.9).unwrap().with_delta(Vector::from([1.0])).unwrap();
        assert!(run_conversion(&mut o, l, Strategy::OptionI, 2, &Vector::zeros(1), &mut r, false).is_err());
    }

    #[test]
    fn divergence_names_step() {
        struct Blowup;
        impl IterateRule for Blowup {
            fn next_x(&mut self, _: &Vector, x: &Vector, _: &Vector, _: &Vector) -> Vector {
                x.scaled(1e300)
            }
        }
        let p = Problem::abs_sum(1);
        let (mut o, mut r) = setup(&p, 0.0, 4);
        let l = OmdLearner::new(1, 0.1, 0.5, 0.9).unwrap();
        let err = run_conversion_with(&mut o, l, &mut Blowup, 5, &Vector::from([10.0]), &mut r, false).unwrap_err();
        assert_eq!(err, Error::Divergence { step: 2, what: "non-finite x".into() });
    }

    #[test]
    fn stability_factor_synthetic_option_iii() {
        let mk = |x: f64, d: f64| StepRecord {
            x: Vector::from([x]),
            w: Vector::from([x + d]),
            y: Vector::from([x]),
            delta: Vector::from([d]),
            g: Vector::from([0.0]),
            s: 0.0,
            f_x: None,
            f_w: None,
            f_y: None,
        };
        // x_t = x_{t-1} + delta_t / 0.5
        let tr = ConversionTrace {
            x0: Vector::from([0.0]),
            f_x0: None,
            eta: 1.0,
            mu: 0.0,
            beta: 0.5,
            zeta: 0.5,
            steps: vec![mk(2.0, 1.0), mk(3.0, 0.5), mk(3.5, 0.25)],
        };
        assert_eq!(stability_factor(&tr), 4.0);
        assert!(matches!(loss_decrement_sum(&tr), Err(Error::Config(_))));
    }

    #[test]
    fn comparator_examples() {
        let c = comparators_from_gradients(&[Vector::from([1.0, 0.0])], 0.3, 2.0);
        assert_eq!(c[0].u, Vector::from([-2.0, 0.0]));
        assert!(!c[0].degenerate);

        let c = comparators_from_gradients(&[Vector::zeros(2), Vector::zeros(2)], 0.5, 1.0);
        assert!(c.iter().all(|c| c.degenerate && c.u == Vector::zeros(2)));

        let c = comparators_from_gradients(&[Vector::from([1.0, 0.0]), Vector::from([0.0, 1.0])], 0.5, 1.0);
        let n = 1.25f64.sqrt();
        assert!((c[1].u[0] + 0.5 / n).abs() < 1e-15);
        assert!((c[1].u[1] + 1.0 / n).abs() < 1e-15);
    }

    #[test]
    fn anchoring_single_epoch_is_option_ii() {
        let p = Problem::abs_sum(2);
        let l = OmdLearner::new(2, 0.05, 0.5, 0.9).unwrap();
        let x0 = Vector::from([1.0, 1.0]);
        let s = Streams::new(11);
        let mut o = StoGradOracle::new(&p, 0.1, s.rng(StreamId::Oracle)).unwrap();
        let ep = run_anchoring(
            &mut o,
            &l,
            AnchoringConfig { epochs: 1, steps: 5 },
            &x0,
            &mut s.rng(StreamId::Interp),
            &mut s.rng(StreamId::Anchor),
            true,
        )
        .unwrap();
        let mut o2 = StoGradOracle::new(&p, 0.1, s.rng(StreamId::Oracle)).unwrap();
        let direct =
            run_conversion(&mut o2, l.clone(), Strategy::OptionII, 5, &x0, &mut s.rng(StreamId::Interp), true).unwrap();
        assert_eq!(ep.len(), 1);
        assert_eq!(ep[0].trace, direct);
    }
}
