//! Discounted composite-objective online mirror descent and regret auditing.
//!
//! The learner sees losses `l_t(v) = <g_t, v> + (mu/2)||v||^2` and plays
//!
//! ```text
//! delta_{t+1} = zeta * (delta_t - eta * g_t),   zeta = beta / (1 + eta * mu)
//! ```
//!
//! starting from `delta_1 = 0`.

use crate::error::{check_dim, Error, Result};
use crate::vector::Vector;
use serde::{Deserialize, Serialize};

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmdLearner {
    delta: Vector,
    eta: f64,
    mu: f64,
    beta: f64,
}

impl OmdLearner {
    pub fn new(dim: usize, eta: f64, mu: f64, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu must be >= 0, got {mu}")));
        }
        Ok(Self { delta: Vector::zeros(dim), eta, mu, beta })
    }

    pub fn with_delta(mut self, delta: Vector) -> Result<Self> {
        check_dim(self.delta.dim(), delta.dim())?;
        self.delta = delta;
        Ok(self)
    }

    pub fn delta(&self) -> &Vector {
        &self.delta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Contraction factor, recomputed on every call.
    pub fn zeta(&self) -> f64 {
        self.beta / (1.0 + self.eta * self.mu)
    }

    /// Fresh learner with the same constants and a zero output.
    pub fn reset(&self) -> Self {
        Self { delta: Vector::zeros(self.delta.dim()), ..self.clone() }
    }

    /// Pure update: returns the state after observing `g`.
    pub fn step(&self, g: &Vector) -> Result<Self> {
        check_dim(self.delta.dim(), g.dim())?;
        let delta = self.delta.add_scaled(-self.eta, g).scaled(self.zeta());
        Ok(Self { delta, ..self.clone() })
    }

    pub fn observe(&mut self, g: &Vector) -> Result<()> {
        *self = self.step(g)?;
        Ok(())
    }
}

/// General composite OMD step with time-varying constants:
///
/// ```text
/// delta' = (delta - eta_t v_t) / (1 + eta_t mu_{t+1} + eta_t (1/eta_{t+1} - 1/eta_t))
/// ```
///
/// With `v_t = beta^{-t} g_t`, `mu_t = beta^{-t} mu`, `eta_t = beta^t eta` this
/// reduces to [`OmdLearner::step`]; kept as an independent route for checking.
pub fn composite_omd_step(delta: &Vector, v: &Vector, eta_t: f64, eta_next: f64, mu_next: f64) -> Vector {
    let denom = 1.0 + eta_t * mu_next + eta_t * (1.0 / eta_next - 1.0 / eta_t);
    delta.add_scaled(-eta_t, v).scaled(1.0 / denom)
}

/// Round-ordered record of `(g_t, delta_t)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    beta: f64,
    mu: f64,
    entries: Vec<(Vector, Vector)>,
}

impl RegretLedger {
    pub fn new(beta: f64, mu: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { beta, mu, entries: Vec::new() })
    }

    pub fn push(&mut self, g: Vector, delta: Vector) {
        assert_eq!(g.dim(), delta.dim());
        self.entries.push((g, delta));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn entries(&self) -> &[(Vector, Vector)] {
        &self.entries
    }

    fn round_regret(&self, s: usize, u: &Vector, u_sq: f64) -> f64 {
        let (g, d) = &self.entries[s];
        g.dot(&d.sub(u)) + 0.5 * self.mu * (d.norm_sq() - u_sq)
    }

    /// `sum_{s<=t} beta^{t-s} (l_s(delta_s) - l_s(u))`, accumulated from round
    /// `t` backwards with a running discount.
    pub fn discounted_regret(&self, u: &Vector, t: usize) -> Result<f64> {
        if t == 0 || t > self.entries.len() {
            return Err(Error::Range { index: t, len: self.entries.len() });
        }
        check_dim(self.entries[0].0.dim(), u.dim())?;
        let u_sq = u.norm_sq();
        let mut weight = 1.0;
        let mut total = 0.0;
        for s in (0..t).rev() {
            total += weight * self.round_regret(s, u, u_sq);
            weight *= self.beta;
        }
        Ok(total)
    }

    /// Same quantity with explicit `beta.powi` weights.
    pub fn discounted_regret_naive(&self, u: &Vector, t: usize) -> Result<f64> {
        if t == 0 || t > self.entries.len() {
            return Err(Error::Range { index: t, len: self.entries.len() });
        }
        let u_sq = u.norm_sq();
        Ok((0..t).map(|s| self.beta.powi((t - 1 - s) as i32) * self.round_regret(s, u, u_sq)).sum())
    }

    /// `Regret_t(u_t)` for every `t`, with a per-round comparator, in one
    /// forward pass over sufficient statistics.
    pub fn regret_against(&self, comparators: &[Vector]) -> Result<Vec<f64>> {
        if comparators.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "{} comparators for {} rounds",
                comparators.len(),
                self.entries.len()
            )));
        }
        let mut stats = match self.entries.first() {
            Some((g, _)) => RunningRegret::new(g.dim(), self.beta, self.mu),
            None => return Ok(Vec::new()),
        };
        Ok(self
            .entries
            .iter()
            .zip(comparators)
            .map(|((g, d), u)| {
                stats.push(g, d);
                stats.regret(u)
            })
            .collect())
    }
}

/// Streaming statistics giving `Regret_t(u)` for any `u` at the current round:
/// `A_t - <B_t, u> - (mu/2)||u||^2 C_t` with discounted sums
/// `A_t = sum beta^{t-s} l_s(delta_s)`, `B_t = sum beta^{t-s} g_s`,
/// `C_t = sum beta^{t-s}`.
#[derive(Debug, Clone)]
pub struct RunningRegret {
    beta: f64,
    mu: f64,
    loss_sum: f64,
    grad_sum: Vector,
    weight_sum: f64,
}

impl RunningRegret {
    pub fn new(dim: usize, beta: f64, mu: f64) -> Self {
        Self { beta, mu, loss_sum: 0.0, grad_sum: Vector::zeros(dim), weight_sum: 0.0 }
    }

    pub fn push(&mut self, g: &Vector, delta: &Vector) {
        let loss = g.dot(delta) + 0.5 * self.mu * delta.norm_sq();
        self.loss_sum = self.beta * self.loss_sum + loss;
        self.grad_sum.scale_and_add(self.beta, g);
        self.weight_sum = self.beta * self.weight_sum + 1.0;
    }

    pub fn regret(&self, u: &Vector) -> f64 {
        self.loss_sum - self.grad_sum.dot(u) - 0.5 * self.mu * u.norm_sq() * self.weight_sum
    }
}

/// `2||u||(G + sigma) / (beta sqrt(1 - beta)) + (mu/2)||u||^2`.
pub fn regret_bound_rhs(u_norm: f64, g: f64, sigma: f64, beta: f64, mu: f64) -> Result<f64> {
    check_beta(beta)?;
    if u_norm < 0.0 || g < 0.0 || sigma < 0.0 {
        return Err(Error::Config("norms and constants must be nonnegative".into()));
    }
    Ok(2.0 * u_norm * (g + sigma) / (beta * (1.0 - beta).sqrt()) + 0.5 * mu * u_norm * u_norm)
}

/// Step size tuned to a comparator norm: `2 ||u|| sqrt(1 - beta) / (G + sigma)`.
pub fn tuned_eta(u_norm: f64, g: f64, sigma: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if g + sigma <= 0.0 {
        return Err(Error::Config("G + sigma must be positive to tune eta".into()));
    }
    Ok(2.0 * u_norm * (1.0 - beta).sqrt() / (g + sigma))
}
