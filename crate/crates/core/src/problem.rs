//! Test objectives and the stochastic gradient oracle.
//!
//! Every problem is `G`-Lipschitz with a closed-form gradient away from a
//! measure-zero kink set. At kinks a fixed subgradient is returned, using the
//! convention `sign(0) = 0`.

use crate::error::{check_dim, Error, Result};
use crate::rng::StreamRng;
use crate::vector::Vector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const LIPSCHITZ_RTOL: f64 = 1e-9;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Half-space `normal . x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Affine piece `slope . x + intercept`, active on the intersection of its
/// region's half-spaces. An empty region matches everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub slope: Vec<f64>,
    pub intercept: f64,
    #[serde(default)]
    pub region: Vec<HalfSpace>,
}

/// JSON description of a user-supplied piecewise-linear objective.
///
/// Pieces are tried in order and the first whose region contains `x` defines
/// both the value and the gradient there. The last piece must have an empty
/// region so the function is defined everywhere. Continuity across region
/// boundaries is the author's responsibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearSpec {
    pub name: String,
    pub dim: usize,
    pub pieces: Vec<AffinePiece>,
    #[serde(default)]
    pub optimum_lower_bound: Option<f64>,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
}

impl PiecewiseLinearSpec {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::ProblemSpec("dim must be positive".into()));
        }
        if self.pieces.is_empty() {
            return Err(Error::ProblemSpec("at least one piece is required".into()));
        }
        for (i, p) in self.pieces.iter().enumerate() {
            if p.slope.len() != self.dim {
                return Err(Error::ProblemSpec(format!(
                    "piece {i}: slope has {} entries, expected {}",
                    p.slope.len(),
                    self.dim
                )));
            }
            if !p.intercept.is_finite() || p.slope.iter().any(|v| !v.is_finite()) {
                return Err(Error::ProblemSpec(format!("piece {i}: non-finite coefficient")));
            }
            for h in &p.region {
                if h.normal.len() != self.dim {
                    return Err(Error::ProblemSpec(format!(
                        "piece {i}: half-space normal has {} entries, expected {}",
                        h.normal.len(),
                        self.dim
                    )));
                }
            }
        }
        if !self.pieces.last().is_some_and(|p| p.region.is_empty()) {
            return Err(Error::ProblemSpec(
                "the last piece must have an empty region (catch-all)".into(),
            ));
        }
        if let Some(start) = &self.start {
            if start.len() != self.dim {
                return Err(Error::ProblemSpec("start has the wrong dimension".into()));
            }
        }
        Ok(())
    }

    fn active_piece(&self, x: &[f64]) -> &AffinePiece {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        self.pieces
            .iter()
            .find(|p| p.region.iter().all(|h| dot(&h.normal) <= h.offset))
            .expect("validated: last piece is a catch-all")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    AbsSum,
    SharpValley,
    SmoothQuadratic { radius: f64 },
    Constant { value: f64 },
    PiecewiseLinear(PiecewiseLinearSpec),
}

/// A loss `F` with true-gradient access and known Lipschitz constant `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    name: String,
    dim: usize,
    lipschitz_g: f64,
    smoothness: Option<f64>,
    optimum_lower_bound: Option<f64>,
    start: Vector,
    kind: Kind,
}

impl Problem {
    /// `F(x) = sum_i |x_i|`, `G = sqrt(d)`, starting at the all-ones vector.
    pub fn abs_sum(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            name: "abs_sum".into(),
            dim,
            lipschitz_g: (dim as f64).sqrt(),
            smoothness: None,
            optimum_lower_bound: Some(0.0),
            start: Vector::filled(dim, 1.0),
            kind: Kind::AbsSum,
        }
    }

    /// Two-dimensional piecewise-linear valley
    ///
    /// ```text
    /// F(x, y) = min(|x - 1|, |x + 1| + 1/2) + 2|y|
    /// ```
    ///
    /// Global minimum 0 at `(1, 0)`, a spurious local minimum 1/2 at `(-1, 0)`,
    /// and a concave ridge along `x = -1/4` where the two branches meet. All
    /// three are Goldstein stationary. `G = sqrt(5)`, start `(2, 1)`.
    pub fn sharp_valley_2d() -> Self {
        Self {
            name: "sharp_valley_2d".into(),
            dim: 2,
            lipschitz_g: 5f64.sqrt(),
            smoothness: None,
            optimum_lower_bound: Some(0.0),
            start: Vector::from([2.0, 1.0]),
            kind: Kind::SharpValley,
        }
    }

    /// `F(x) = ||x||^2 / 2` inside the ball of the given radius, continued
    /// linearly (Huber style) outside so that `G = radius` holds globally.
    /// The gradient is 1-Lipschitz, so `L = 1`.
    pub fn smooth_quadratic(dim: usize, radius: f64) -> Self {
        assert!(dim > 0 && radius > 0.0);
        Self {
            name: "smooth_quadratic".into(),
            dim,
            lipschitz_g: radius,
            smoothness: Some(1.0),
            optimum_lower_bound: Some(0.0),
            start: Vector::filled(dim, radius / (dim as f64).sqrt() * 0.75),
            kind: Kind::SmoothQuadratic { radius },
        }
    }

    /// `F = value` everywhere; zero gradient.
    pub fn constant(dim: usize, value: f64) -> Self {
        Self {
            name: "constant".into(),
            dim,
            lipschitz_g: 1.0,
            smoothness: Some(0.0),
            optimum_lower_bound: Some(value),
            start: Vector::zeros(dim),
            kind: Kind::Constant { value },
        }
    }

    pub fn piecewise_linear(spec: PiecewiseLinearSpec) -> Result<Self> {
        spec.validate()?;
        let g = spec
            .pieces
            .iter()
            .map(|p| p.slope.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let start = spec.start.clone().map(Vector::from).unwrap_or_else(|| Vector::zeros(spec.dim));
        Ok(Self {
            name: spec.name.clone(),
            dim: spec.dim,
            lipschitz_g: if g > 0.0 { g } else { 1.0 },
            smoothness: None,
            optimum_lower_bound: spec.optimum_lower_bound,
            start,
            kind: Kind::PiecewiseLinear(spec),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PiecewiseLinearSpec =
            serde_json::from_str(text).map_err(|e| Error::ProblemSpec(e.to_string()))?;
        Self::piecewise_linear(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz_g(&self) -> f64 {
        self.lipschitz_g
    }

    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    pub fn optimum_lower_bound(&self) -> Option<f64> {
        self.optimum_lower_bound
    }

    pub fn default_start(&self) -> Vector {
        self.start.clone()
    }

    pub fn evaluate(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim, x.dim())?;
        Ok(self.value_unchecked(x.as_slice()))
    }

    /// Closed-form gradient (selected subgradient at kinks). Fails if the
    /// returned norm exceeds `G` beyond a relative tolerance of 1e-9.
    pub fn gradient_at(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.dim())?;
        let g = self.gradient_unchecked(x.as_slice());
        let norm = g.norm();
        if norm > self.lipschitz_g * (1.0 + LIPSCHITZ_RTOL) {
            return Err(Error::Lipschitz { problem: self.name.clone(), norm, bound: self.lipschitz_g });
        }
        Ok(g)
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::AbsSum => x.iter().map(|v| v.abs()).sum(),
            Kind::SharpValley => {
                let (a, b) = (x[0], x[1]);
                (a - 1.0).abs().min((a + 1.0).abs() + 0.5) + 2.0 * b.abs()
            }
            Kind::SmoothQuadratic { radius } => {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n <= *radius {
                    0.5 * n * n
                } else {
                    radius * n - 0.5 * radius * radius
                }
            }
            Kind::Constant { value } => *value,
            Kind::PiecewiseLinear(spec) => {
                let p = spec.active_piece(x);
                p.slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p.intercept
            }
        }
    }

    fn gradient_unchecked(&self, x: &[f64]) -> Vector {
        match &self.kind {
            Kind::AbsSum => x.iter().map(|&v| sign(v)).collect::<Vec<_>>().into(),
            Kind::SharpValley => {
                let (a, b) = (x[0], x[1]);
                let gx = if (a - 1.0).abs() <= (a + 1.0).abs() + 0.5 { sign(a - 1.0) } else { sign(a + 1.0) };
                Vector::from([gx, 2.0 * sign(b)])
            }
            Kind::SmoothQuadratic { radius } => {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let c = if n <= *radius { 1.0 } else { radius / n };
                x.iter().map(|v| c * v).collect::<Vec<_>>().into()
            }
            Kind::Constant { .. } => Vector::zeros(x.len()),
            Kind::PiecewiseLinear(spec) => spec.active_piece(x).slope.clone().into(),
        }
    }
}

/// Built-in catalog. `dim` applies to the dimension-generic problems.
pub fn builtin_problems(dim: usize) -> Vec<Problem> {
    vec![Problem::abs_sum(dim), Problem::sharp_valley_2d(), Problem::smooth_quadratic(dim, 2.0)]
}

pub fn problem_by_name(name: &str, dim: usize) -> Result<Problem> {
    builtin_problems(dim)
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown problem `{name}`")))
}

/// Unbiased stochastic gradients `grad F(x) + xi` with
/// `xi ~ N(0, (sigma^2 / d) I)`, so `E||xi||^2 = sigma^2`.
#[derive(Debug, Clone)]
pub struct StoGradOracle<'p> {
    problem: &'p Problem,
    sigma: f64,
    rng: StreamRng,
    calls: u64,
}

impl<'p> StoGradOracle<'p> {
    pub fn new(problem: &'p Problem, sigma: f64, rng: StreamRng) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { problem, sigma, rng, calls: 0 })
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// One oracle call. Always consumes exactly `d` normal draws, also when
    /// `sigma == 0`, so streams stay aligned across noise levels.
    pub fn sample(&mut self, x: &Vector) -> Result<Vector> {
        let mut g = self.problem.gradient_at(x)?;
        let scale = self.sigma / (self.problem.dim as f64).sqrt();
        for gi in g.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *gi += scale * z;
        }
        self.calls += 1;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamId, Streams};

    #[test]
    fn abs_sum_values_and_gradient() {
        let p = Problem::abs_sum(2);
        assert_eq!(p.evaluate(&Vector::from([0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(p.evaluate(&Vector::from([1.0, -2.0])).unwrap(), 3.0);
        assert_eq!(p.gradient_at(&Vector::from([3.0, -1.0])).unwrap(), Vector::from([1.0, -1.0]));
        assert_eq!(p.gradient_at(&Vector::from([0.0, 2.0])).unwrap(), Vector::from([0.0, 1.0]));
    }

    #[test]
    fn sharp_valley_by_hand() {
        let p = Problem::sharp_valley_2d();
        // min(|1-1|, |1+1| + 0.5) + 2|1| = min(0, 2.5) + 2
        assert_eq!(p.evaluate(&Vector::from([1.0, 1.0])).unwrap(), 2.0);
        // left branch: min(|-1-1|, 0 + 0.5) = 0.5
        assert_eq!(p.evaluate(&Vector::from([-1.0, 0.0])).unwrap(), 0.5);
        // ridge x = -1/4: both branches equal 1.25
        assert_eq!(p.evaluate(&Vector::from([-0.25, 0.0])).unwrap(), 1.25);
        assert_eq!(p.gradient_at(&Vector::from([2.0, -3.0])).unwrap(), Vector::from([1.0, -2.0]));
        assert_eq!(p.gradient_at(&Vector::from([-0.5, 0.0])).unwrap(), Vector::from([1.0, 0.0]));
        assert_eq!(p.gradient_at(&Vector::from([0.0, 1.0])).unwrap(), Vector::from([-1.0, 2.0]));
    }

    #[test]
    fn smooth_quadratic_gradient_inside_ball() {
        let p = Problem::smooth_quadratic(3, 2.0);
        let x = Vector::from([0.5, -0.25, 1.0]);
        assert_eq!(p.gradient_at(&x).unwrap(), x);
        let far = Vector::from([10.0, 0.0, 0.0]);
        assert_eq!(p.gradient_at(&far).unwrap(), Vector::from([2.0, 0.0, 0.0]));
        assert_eq!(p.smoothness(), Some(1.0));
    }

    #[test]
    fn catalog_contract() {
        let cat = builtin_problems(4);
        assert!(cat.len() >= 3);
        assert!(cat.iter().all(|p| p.lipschitz_g() > 0.0));
        assert_eq!(problem_by_name("abs_sum", 4).unwrap().lipschitz_g(), 2.0);
        assert!(matches!(problem_by_name("nope", 4), Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = Problem::abs_sum(3);
        assert!(matches!(
            p.evaluate(&Vector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        let mut o = StoGradOracle::new(&p, 1.0, Streams::new(1).rng(StreamId::Oracle)).unwrap();
        assert!(o.sample(&Vector::zeros(4)).is_err());
    }

    #[test]
    fn zero_noise_returns_exact_gradient() {
        let p = Problem::sharp_valley_2d();
        let mut o = StoGradOracle::new(&p, 0.0, Streams::new(3).rng(StreamId::Oracle)).unwrap();
        let x = Vector::from([0.3, -0.7]);
        assert_eq!(o.sample(&x).unwrap(), p.gradient_at(&x).unwrap());
    }

    #[test]
    fn piecewise_linear_json() {
        // |x| in 1-D written as two pieces.
        let text = r#"{
            "name": "abs1",
            "dim": 1,
            "pieces": [
                {"slope": [-1.0], "intercept": 0.0, "region": [{"normal": [1.0], "offset": 0.0}]},
                {"slope": [1.0], "intercept": 0.0}
            ],
            "optimum_lower_bound": 0.0
        }"#;
        let p = Problem::from_json(text).unwrap();
        assert_eq!(p.evaluate(&Vector::from([-2.0])).unwrap(), 2.0);
        assert_eq!(p.evaluate(&Vector::from([3.0])).unwrap(), 3.0);
        assert_eq!(p.gradient_at(&Vector::from([-2.0])).unwrap(), Vector::from([-1.0]));
        assert_eq!(p.lipschitz_g(), 1.0);
    }

    #[test]
    fn piecewise_linear_requires_catch_all() {
        let text = r#"{"name": "bad", "dim": 1,
            "pieces": [{"slope": [1.0], "intercept": 0.0, "region": [{"normal": [1.0], "offset": 0.0}]}]}"#;
        assert!(matches!(Problem::from_json(text), Err(Error::ProblemSpec(_))));
    }
}
