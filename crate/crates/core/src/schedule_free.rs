//! Schedule-free SGD in its three-sequence form, the parameter calculator, and
//! the pathwise equivalence check against the OPTION_III conversion.
//!
//! ```text
//! x_t     = zeta x_{t-1} + (1 - zeta) z_t
//! y_t     = kappa_t x_t + (1 - kappa_t) z_t,   kappa_t ~ U[zeta, 1]
//! g_t     = StoGrad(y_t)
//! z_{t+1} = z_t - gamma g_t,                   gamma = eta / (1 - zeta)
//! ```

use crate::conversion::{run_conversion, ConversionTrace, StepRecord, Strategy};
use crate::error::{check_dim, Error, Result};
use crate::online_learner::OmdLearner;
use crate::problem::{Problem, StoGradOracle};
use crate::rng::{StreamId, StreamRng, Streams};
use crate::vector::Vector;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Every constant derived from `(epsilon, lambda, G, sigma, C_x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub epsilon: f64,
    pub lambda: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub sigma: f64,
    pub cx_bound: f64,
    pub beta_star: f64,
    pub d_star: f64,
    pub mu_star: f64,
    pub eta_star: f64,
    pub zeta_star: f64,
    pub gamma: f64,
    /// `ceil(49 (G + sigma)^2 / epsilon^2)`, raised to the rate term when a
    /// loss gap is known and the rule has one.
    pub t_min: u64,
    pub delta_f: Option<f64>,
    /// Rate term `c (G + sigma)^2 Delta_F lambda^{1/2} epsilon^{-7/2}` with
    /// `c = 392` for `C_x <= 1` and `c = 980` otherwise; absent for `C_x = 0`.
    pub t_rate: Option<f64>,
    /// Anchoring epochs `4 Delta_F lambda^{1/2} epsilon^{-3/2}` (only for `C_x = 0`).
    pub epochs_min: Option<u64>,
}

pub fn derive_params(epsilon: f64, lambda: f64, g: f64, sigma: f64, cx_bound: f64) -> Result<ParamSet> {
    derive_params_with_gap(epsilon, lambda, g, sigma, cx_bound, None)
}

pub fn derive_params_with_gap(
    epsilon: f64,
    lambda: f64,
    g: f64,
    sigma: f64,
    cx_bound: f64,
    delta_f: Option<f64>,
) -> Result<ParamSet> {
    let finite_pos = |v: f64| v.is_finite() && v > 0.0;
    let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
    if !finite_pos(epsilon) || !finite_pos(lambda) {
        return Err(Error::Config(format!("epsilon and lambda must be positive (got {epsilon}, {lambda})")));
    }
    if !finite_nonneg(g) || !finite_nonneg(sigma) || !finite_nonneg(cx_bound) {
        return Err(Error::Config("G, sigma and C_x must be finite and nonnegative".into()));
    }
    if delta_f.is_some_and(|d| !finite_nonneg(d)) {
        return Err(Error::Config("Delta_F must be finite and nonnegative".into()));
    }
    let scale = g + sigma;
    if epsilon > 3.5 * scale {
        return Err(Error::Regime(format!(
            "epsilon <= (7/2)(G + sigma) is required, but epsilon = {epsilon} > {}",
            3.5 * scale
        )));
    }

    let alpha = (epsilon / (7.0 * scale)).powi(2);
    let beta_star = 1.0 - alpha;
    let inflation = 1.0 + 49.0 * scale * scale / (epsilon * epsilon) * cx_bound.sqrt();
    let d_star = 0.25 * lambda.powf(-0.5) * epsilon.sqrt() / inflation;
    let mu_star = 2.0 * lambda.sqrt() * epsilon.sqrt() * inflation;
    let eta_star = 2.0 / scale * d_star * alpha.sqrt();
    let zeta_star = beta_star / (1.0 + eta_star * mu_star);
    let gamma = eta_star / (1.0 - zeta_star);

    let base = ceil_tolerant(49.0 * scale * scale / (epsilon * epsilon));
    let (t_rate, epochs_min) = match delta_f {
        Some(gap) if cx_bound == 0.0 => (None, Some(ceil_tolerant(4.0 * gap * lambda.sqrt() * epsilon.powf(-1.5)) as u64)),
        Some(gap) => {
            let c = if cx_bound <= 1.0 { 392.0 } else { 980.0 };
            (Some(c * scale * scale * gap * lambda.sqrt() * epsilon.powf(-3.5)), None)
        }
        None => (None, None),
    };
    let t_min = t_rate.map_or(base, |r| base.max(ceil_tolerant(r))) as u64;

    Ok(ParamSet {
        epsilon,
        lambda,
        g,
        sigma,
        cx_bound,
        beta_star,
        d_star,
        mu_star,
        eta_star,
        zeta_star,
        gamma,
        t_min,
        delta_f,
        t_rate,
        epochs_min,
    })
}

// Rounding noise should not push an exact integer (49 / 0.49) up by one.
fn ceil_tolerant(v: f64) -> f64 {
    (v * (1.0 - 1e-12)).ceil()
}

impl ParamSet {
    pub fn learner(&self, dim: usize) -> Result<OmdLearner> {
        OmdLearner::new(dim, self.eta_star, self.mu_star, self.beta_star)
    }

    /// `gamma / eta = 1 / (1 - zeta)`: how much larger the base SGD step is.
    pub fn step_ratio(&self) -> f64 {
        self.gamma / self.eta_star
    }

    /// Recomputes every derived field from the inputs and reports the first
    /// one that disagrees by more than 1e-12 relative.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check_consistency(&self) -> Result<()> {
        let fresh =
            derive_params_with_gap(self.epsilon, self.lambda, self.g, self.sigma, self.cx_bound, self.delta_f)?;
        let pairs = [
            ("beta_star", self.beta_star, fresh.beta_star),
            ("d_star", self.d_star, fresh.d_star),
            ("mu_star", self.mu_star, fresh.mu_star),
            ("eta_star", self.eta_star, fresh.eta_star),
            ("zeta_star", self.zeta_star, fresh.zeta_star),
            ("gamma", self.gamma, fresh.gamma),
        ];
        for (name, have, want) in pairs {
            if !((have - want).abs() <= 1e-12 * want.abs()) {
                return Err(Error::Config(format!("{name} = {have} but the inputs give {want}")));
            }
        }
        if self.t_min != fresh.t_min {
            return Err(Error::Config(format!("t_min = {} but the inputs give {}", self.t_min, fresh.t_min)));
        }
        Ok(())
    }
}

/// `z_t = x_t + delta_t / (1 - zeta)`.
pub fn extrapolate_z(x: &Vector, delta: &Vector, zeta: f64) -> Vector {
    x.add_scaled(1.0 / (1.0 - zeta), delta)
}

/// Largest relative residual of `z_{t+1} - z_t + (eta / (1 - zeta)) g_t` along
/// an OPTION_III trace, scaled by the operand magnitudes.
pub fn extrapolated_z_residual(trace: &ConversionTrace) -> f64 {
    let gamma = trace.eta / (1.0 - trace.zeta);
    trace
        .steps
        .windows(2)
        .map(|pair| {
            let z0 = extrapolate_z(&pair[0].x, &pair[0].delta, trace.zeta);
            let z1 = extrapolate_z(&pair[1].x, &pair[1].delta, trace.zeta);
            let r = z1.sub(&z0).add_scaled(gamma, &pair[0].g);
            r.norm() / (z1.norm() + z0.norm() + gamma * pair[0].g.norm()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfSgd {
    x: Vector,
    z: Vector,
    zeta: f64,
    gamma: f64,
    kappa_low: f64,
    kappa_high: f64,
    t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfStep {
    pub x: Vector,
    pub y: Vector,
    /// The `z_t` used in this round (before the SGD update).
    pub z: Vector,
    pub kappa: f64,
    pub g: Vector,
}

impl SfSgd {
    /// Parameters from the nonconvex analysis: `c_t = 1 - zeta*`,
    /// `kappa_t ~ U[zeta*, 1]`, `gamma = eta* / (1 - zeta*)`, `x_0 = z_1`.
    pub fn from_params(x0: &Vector, params: &ParamSet) -> Self {
        Self {
            x: x0.clone(),
            z: x0.clone(),
            zeta: params.zeta_star,
            gamma: params.gamma,
            kappa_low: params.zeta_star,
            kappa_high: 1.0,
            t: 0,
        }
    }

    /// Free-form variant: constant averaging weight `c`, step `gamma`, and
    /// `kappa_t ~ U[kappa_low, kappa_high]`.
    pub fn exploratory(x0: &Vector, gamma: f64, c: f64, kappa_low: f64, kappa_high: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Config(format!("c must lie in [0, 1], got {c}")));
        }
        if !(0.0 <= kappa_low && kappa_low <= kappa_high && kappa_high <= 1.0) {
            return Err(Error::Config("need 0 <= kappa_low <= kappa_high <= 1".into()));
        }
        Ok(Self { x: x0.clone(), z: x0.clone(), zeta: 1.0 - c, gamma, kappa_low, kappa_high, t: 0 })
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn z(&self) -> &Vector {
        &self.z
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kappa_range(&self) -> (f64, f64) {
        (self.kappa_low, self.kappa_high)
    }

    /// One round. `interp` supplies the uniform behind `kappa_t`:
    /// `kappa_t = kappa_high - u (kappa_high - kappa_low)`, which for the
    /// analysed parameters is `1 - u (1 - zeta)`.
    pub fn step(&mut self, oracle: &mut StoGradOracle<'_>, interp: &mut StreamRng) -> Result<SfStep> {
        check_dim(oracle.problem().dim(), self.x.dim())?;
        self.t += 1;
        let x = self.x.lin_comb(self.zeta, &self.z, 1.0 - self.zeta);
        let u: f64 = interp.random();
        let kappa = self.kappa_high - u * (self.kappa_high - self.kappa_low);
        assert!(
            (self.kappa_low..=self.kappa_high).contains(&kappa),
            "kappa {kappa} outside [{}, {}]",
            self.kappa_low,
            self.kappa_high
        );
        let y = x.lin_comb(kappa, &self.z, 1.0 - kappa);
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Divergence { step: self.t, what: "non-finite schedule-free iterate".into() });
        }
        let g = oracle.sample(&y)?;
        let z_next = self.z.add_scaled(-self.gamma, &g);
        if !z_next.is_finite() {
            return Err(Error::Divergence { step: self.t, what: "non-finite z".into() });
        }
        let z = std::mem::replace(&mut self.z, z_next);
        self.x = x.clone();
        Ok(SfStep { x, y, z, kappa, g })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfTrace {
    pub x0: Vector,
    pub zeta: f64,
    pub gamma: f64,
    pub steps: Vec<SfStep>,
}

impl SfTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Recasts the run in conversion coordinates: `delta_t = (1 - zeta)(z_t - x_t)`,
    /// `w_t = x_t + delta_t`, `s_t = (1 - kappa_t) / (1 - zeta)`. `eta`, `mu`
    /// and `beta` are carried along for regret and certificate computations.
    pub fn to_conversion_trace(&self, eta: f64, mu: f64, beta: f64, problem: Option<&Problem>) -> Result<ConversionTrace> {
        let c = 1.0 - self.zeta;
        let loss = |v: &Vector| problem.map(|p| p.evaluate(v)).transpose();
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let delta = s.z.sub(&s.x).scaled(c);
                let w = s.x.add(&delta);
                Ok(StepRecord {
                    f_x: loss(&s.x)?,
                    f_w: loss(&w)?,
                    f_y: loss(&s.y)?,
                    x: s.x.clone(),
                    w,
                    y: s.y.clone(),
                    delta,
                    g: s.g.clone(),
                    s: (1.0 - s.kappa) / c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConversionTrace { x0: self.x0.clone(), f_x0: loss(&self.x0)?, eta, mu, beta, zeta: self.zeta, steps })
    }
}

pub fn run_sf_sgd(
    mut state: SfSgd,
    oracle: &mut StoGradOracle<'_>,
    interp: &mut StreamRng,
    steps: usize,
) -> Result<SfTrace> {
    if steps == 0 {
        return Err(Error::Config("at least one step is required".into()));
    }
    let x0 = state.x.clone();
    let mut trace = SfTrace { x0, zeta: state.zeta, gamma: state.gamma, steps: Vec::with_capacity(steps) };
    for _ in 0..steps {
        trace.steps.push(state.step(oracle, interp)?);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub steps: usize,
    pub max_x: f64,
    pub max_y: f64,
    pub max_z: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Relative z discrepancy per round.
    pub z_discrepancy: Vec<f64>,
}

pub const EQUIVALENCE_TOL: f64 = 1e-8;

/// Compares an OPTION_III trace with a direct schedule-free run driven by the
/// same oracle and uniform streams. Discrepancies are `||a - b|| / (1 + ||x_t||)`.
pub fn verify_equivalence(option3: &ConversionTrace, sf: &SfTrace) -> Result<EquivalenceReport> {
    if option3.len() != sf.len() || option3.x0 != sf.x0 {
        return Err(Error::Config("stream misalignment: traces differ in length or start".into()));
    }
    let zeta = option3.zeta;
    let mut report = EquivalenceReport {
        steps: sf.len(),
        max_x: 0.0,
        max_y: 0.0,
        max_z: 0.0,
        tolerance: EQUIVALENCE_TOL,
        pass: false,
        z_discrepancy: Vec::with_capacity(sf.len()),
    };
    for (t, (a, b)) in option3.steps.iter().zip(&sf.steps).enumerate() {
        let expected_kappa = 1.0 - a.s * (1.0 - zeta);
        if (b.kappa - expected_kappa).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "stream misalignment at step {}: kappa {} vs 1 - s(1 - zeta) = {expected_kappa}",
                t + 1,
                b.kappa
            )));
        }
        let scale = 1.0 + a.x.norm();
        let dz = extrapolate_z(&a.x, &a.delta, zeta).dist(&b.z) / scale;
        report.max_x = report.max_x.max(a.x.dist(&b.x) / scale);
        report.max_y = report.max_y.max(a.y.dist(&b.y) / scale);
        report.max_z = report.max_z.max(dz);
        report.z_discrepancy.push(dz);
    }
    report.pass = report.max_x < EQUIVALENCE_TOL && report.max_y < EQUIVALENCE_TOL && report.max_z < EQUIVALENCE_TOL;
    Ok(report)
}

/// Both sides of an equivalence run driven by the same oracle and uniform
/// streams of `streams`.
#[derive(Debug, Clone)]
pub struct EquivalenceRun {
    pub option3: ConversionTrace,
    pub sf: SfTrace,
    pub report: EquivalenceReport,
}

/// Runs OPTION_III with `params` and direct schedule-free SGD with step
/// `gamma` (`params.gamma` unless overridden) from `x0` on identical streams.
pub fn run_equivalence(
    problem: &Problem,
    sigma: f64,
    params: &ParamSet,
    gamma: Option<f64>,
    x0: &Vector,
    steps: usize,
    streams: &Streams,
) -> Result<EquivalenceRun> {
    let learner = params.learner(problem.dim())?;
    let strategy = Strategy::option_iii_for(&learner);
    let mut oracle = StoGradOracle::new(problem, sigma, streams.rng(StreamId::Oracle))?;
    let option3 =
        run_conversion(&mut oracle, learner, strategy, steps, x0, &mut streams.rng(StreamId::Interp), false)?;
    let mut state = SfSgd::from_params(x0, params);
    if let Some(g) = gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {g}")));
        }
        state.gamma = g;
    }
    let mut oracle = StoGradOracle::new(problem, sigma, streams.rng(StreamId::Oracle))?;
    let sf = run_sf_sgd(state, &mut oracle, &mut streams.rng(StreamId::Interp), steps)?;
    let report = verify_equivalence(&option3, &sf)?;
    Ok(EquivalenceRun { option3, sf, report })
}
