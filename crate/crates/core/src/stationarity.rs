//! EMA iterates, the random output index, and the (lambda, epsilon)-stationarity
//! certificate.
//!
//! The certificate at round `t` evaluates the EMA-weighted distribution
//! `Pr(Y_t = y_s) = q_{t,s}` whose mean is `ybar_t`:
//!
//! ```text
//! cert_t = || sum_s q_{t,s} grad F(y_s) || + lambda sum_s q_{t,s} ||y_s - ybar_t||^2
//! ```
//!
//! It upper-bounds the regularized gradient norm at `ybar_t`, which is an
//! infimum over all distributions with that mean.

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::rng::StreamRng;
use crate::vector::Vector;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `1 - beta^t`, accurate when `beta^t` is close to 1 or underflows.
pub fn one_minus_pow(beta: f64, t: usize) -> f64 {
    -(t as f64 * beta.ln()).exp_m1()
}

/// `beta^t` via logs, flushed to zero below 1e-300.
pub fn pow_log(beta: f64, t: usize) -> f64 {
    let v = (t as f64 * beta.ln()).exp();
    if v < 1e-300 {
        0.0
    } else {
        v
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")))
    }
}

fn check_index(t: usize, len: usize) -> Result<()> {
    if t == 0 || t > len {
        Err(Error::Range { index: t, len })
    } else {
        Ok(())
    }
}

/// Streaming EMA: `weighted_sum' = beta weighted_sum + y_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    beta: f64,
    t: usize,
    weighted_sum: Vector,
    normalizer: f64,
}

impl EmaState {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { beta, t: 0, weighted_sum: Vector::zeros(dim), normalizer: 0.0 })
    }

    pub fn push(&mut self, y: &Vector) {
        self.weighted_sum.scale_and_add(self.beta, y);
        self.normalizer = self.beta * self.normalizer + 1.0;
        self.t += 1;
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn weighted_sum(&self) -> &Vector {
        &self.weighted_sum
    }

    /// `(1 - beta^t) / (1 - beta)`, accumulated alongside the sum.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `None` before the first push.
    pub fn value(&self) -> Option<Vector> {
        (self.t > 0).then(|| self.weighted_sum.scaled((1.0 - self.beta) / one_minus_pow(self.beta, self.t)))
    }
}

/// `q_{t,s} = beta^{t-s} (1 - beta) / (1 - beta^t)` for `s = 1..=t`.
pub fn q_weights(beta: f64, t: usize) -> Vec<f64> {
    let norm = (1.0 - beta) / one_minus_pow(beta, t);
    let mut q = vec![0.0; t];
    let mut p = norm;
    for s in (0..t).rev() {
        q[s] = p;
        p *= beta;
    }
    q
}

/// Batch EMA `ybar_t` of the first `t` points.
pub fn ema<V: AsRef<Vector>>(ys: &[V], beta: f64, t: usize) -> Result<Vector> {
    check_beta(beta)?;
    check_index(t, ys.len())?;
    let q = q_weights(beta, t);
    let mut out = Vector::zeros(ys[0].as_ref().dim());
    for (w, y) in q.iter().zip(ys) {
        out = out.add_scaled(*w, y.as_ref());
    }
    Ok(out)
}

/// Law of the output index on `{1..T}`: `p_t = (1 - beta^t) / T` for `t < T` and
/// `p_T = (1 - beta^T) / ((1 - beta) T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexLaw {
    beta: f64,
    horizon: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl IndexLaw {
    pub fn new(beta: f64, horizon: usize) -> Result<Self> {
        check_beta(beta)?;
        if horizon == 0 {
            return Err(Error::Config("index law needs T >= 1".into()));
        }
        let n = horizon as f64;
        let mut probs: Vec<f64> = (1..horizon).map(|t| one_minus_pow(beta, t) / n).collect();
        probs.push(one_minus_pow(beta, horizon) / ((1.0 - beta) * n));
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().expect("nonempty") = 1.0;
        Ok(Self { beta, horizon, probs, cdf })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `probs()[t - 1] = p_t`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF sample from one uniform draw; returns a 1-based index.
    pub fn sample(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.horizon - 1) + 1
    }
}

/// Certificate at round `t` computed directly from its definition, O(t d).
pub fn stationarity_certificate<V: AsRef<Vector>, W: AsRef<Vector>>(
    ys: &[V],
    grads: &[W],
    beta: f64,
    lambda: f64,
    t: usize,
) -> Result<f64> {
    check_beta(beta)?;
    if grads.len() < ys.len() {
        return Err(Error::Config("true gradients are required for every query point".into()));
    }
    let ybar = ema(ys, beta, t)?;
    let q = q_weights(beta, t);
    let mut mean_grad = Vector::zeros(ybar.dim());
    let mut spread = 0.0;
    for ((w, y), g) in q.iter().zip(ys).zip(grads) {
        mean_grad = mean_grad.add_scaled(*w, g.as_ref());
        spread += w * y.as_ref().dist_sq(&ybar);
    }
    Ok(mean_grad.norm() + lambda * spread)
}

/// Same value as [`stationarity_certificate`] but evaluates query points
/// through `problem`.
pub fn certificate_for_problem<V: AsRef<Vector>>(
    ys: &[V],
    problem: &Problem,
    beta: f64,
    lambda: f64,
    t: usize,
) -> Result<f64> {
    check_index(t, ys.len())?;
    let grads = ys[..t].iter().map(|y| problem.gradient_at(y.as_ref())).collect::<Result<Vec<_>>>()?;
    stationarity_certificate(&ys[..t], &grads, beta, lambda, t)
}

/// Exponentially weighted mean and spread, updated in O(d) per point.
///
/// `W_t = beta W + 1`, `m_t = m + e / W_t`, `S_t = beta S + e . (y_t - m_t)` with
/// `e = y_t - m_{t-1}`, so that `S_t / W_t = sum_s q_{t,s} ||y_s - m_t||^2`.
#[derive(Debug, Clone)]
struct WeightedSpread {
    beta: f64,
    weight: f64,
    mean: Vector,
    spread: f64,
}

impl WeightedSpread {
    fn new(dim: usize, beta: f64) -> Self {
        Self { beta, weight: 0.0, mean: Vector::zeros(dim), spread: 0.0 }
    }

    fn push(&mut self, y: &Vector) {
        self.weight = self.beta * self.weight + 1.0;
        let e = y.sub(&self.mean);
        self.mean = self.mean.add_scaled(1.0 / self.weight, &e);
        self.spread = self.beta * self.spread + e.dot(&y.sub(&self.mean));
    }

    fn variance(&self) -> f64 {
        (self.spread / self.weight).max(0.0)
    }
}

/// Certificates for every `t = 1..=T` in a single pass.
pub fn certificate_curve<V: AsRef<Vector>, W: AsRef<Vector>>(
    ys: &[V],
    grads: &[W],
    beta: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if grads.len() < ys.len() {
        return Err(Error::Config("true gradients are required for every query point".into()));
    }
    let Some(first) = ys.first() else { return Ok(Vec::new()) };
    let dim = first.as_ref().dim();
    let mut spread = WeightedSpread::new(dim, beta);
    let mut grad_sum = Vector::zeros(dim);
    let mut curve = Vec::with_capacity(ys.len());
    for (y, g) in ys.iter().zip(grads) {
        spread.push(y.as_ref());
        grad_sum.scale_and_add(beta, g.as_ref());
        curve.push(grad_sum.norm() / spread.weight + lambda * spread.variance());
    }
    Ok(curve)
}

/// `E_tau cert_tau = sum_t p_t cert_t`, exact over the index law.
pub fn expected_certificate(curve: &[f64], law: &IndexLaw) -> Result<f64> {
    if curve.len() != law.horizon() {
        return Err(Error::Config(format!(
            "certificate curve has {} points but the index law covers {}",
            curve.len(),
            law.horizon()
        )));
    }
    Ok(curve.iter().zip(law.probs()).map(|(c, p)| c * p).sum())
}

/// Monte Carlo version of [`expected_certificate`]; returns `(mean, sem)`.
pub fn sampled_certificate(curve: &[f64], law: &IndexLaw, rng: &mut StreamRng, draws: usize) -> Result<(f64, f64)> {
    if curve.len() != law.horizon() || draws < 2 {
        return Err(Error::Config("need a full curve and at least two draws".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let c = curve[law.sample(rng) - 1];
        sum += c;
        sum_sq += c * c;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// `lambda = L^2 / epsilon`, the regularization under which a small certificate
/// on an L-smooth function implies a small gradient.
pub fn reduction_lambda(smoothness: f64, epsilon: f64) -> f64 {
    smoothness * smoothness / epsilon
}

/// Given a certificate computed with `lambda = L^2 / epsilon`, checks that a
/// value at most `epsilon` comes with `||grad F(point)|| <= 2 epsilon`.
/// Certificates above `epsilon` make no claim and pass vacuously.
pub fn smooth_reduction_check(problem: &Problem, point: &Vector, certificate: f64, epsilon: f64) -> Result<bool> {
    if problem.smoothness().is_none() {
        return Err(Error::Config(format!("{} has no smoothness constant", problem.name())));
    }
    if certificate > epsilon {
        return Ok(true);
    }
    Ok(problem.gradient_at(point)?.norm() <= 2.0 * epsilon)
}

/// Both sides of the variance decomposition at round `t`:
/// `sum q ||y_s - ybar||^2` and `2 sum q ||x_s - xbar||^2 + 2 sum q ||y_s - x_s||^2`.
pub fn variance_decomposition<V: AsRef<Vector>, W: AsRef<Vector>>(
    xs: &[V],
    ys: &[W],
    beta: f64,
    t: usize,
) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Config("x and y sequences differ in length".into()));
    }
    let xbar = ema(xs, beta, t)?;
    let ybar = ema(ys, beta, t)?;
    let q = q_weights(beta, t);
    let (mut lhs, mut x_spread, mut gap) = (0.0, 0.0, 0.0);
    for ((w, x), y) in q.iter().zip(xs).zip(ys) {
        let (x, y) = (x.as_ref(), y.as_ref());
        lhs += w * y.dist_sq(&ybar);
        x_spread += w * x.dist_sq(&xbar);
        gap += w * y.dist_sq(x);
    }
    Ok((lhs, 2.0 * x_spread + 2.0 * gap))
}
