//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; the `demo` module holds the same functions with plain Rust errors
//! so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod demo {
    use o2n_core::schedule_free::{derive_params, run_sf_sgd};
    use o2n_core::stationarity::{certificate_curve, expected_certificate, IndexLaw};
    use o2n_core::{Problem, SfSgd, StoGradOracle, StreamId, Streams, Vector};
    use serde::Serialize;

    type DemoResult = Result<String, String>;

    fn json<T: Serialize>(v: &T) -> DemoResult {
        serde_json::to_string(v).map_err(|e| e.to_string())
    }

    /// Parameter set for the given accuracy target, as JSON.
    pub fn params(epsilon: f64, lambda: f64, g: f64, sigma: f64, cx_bound: f64) -> DemoResult {
        json(&derive_params(epsilon, lambda, g, sigma, cx_bound).map_err(|e| e.to_string())?)
    }

    #[derive(Serialize)]
    struct Trajectory {
        zeta: f64,
        gamma: f64,
        /// Round index of each stored point.
        t: Vec<usize>,
        x: Vec<[f64; 2]>,
        y: Vec<[f64; 2]>,
        z: Vec<[f64; 2]>,
        certificate: Vec<f64>,
        expected_certificate: f64,
        final_loss: f64,
    }

    fn pair(v: &Vector) -> [f64; 2] {
        [v[0], v[1]]
    }

    /// Schedule-free SGD on `sharp_valley_2d` with derived parameters and the
    /// step size scaled by `gamma_scale`. At most `max_points` rounds are kept.
    #[allow(clippy::too_many_arguments)]
    pub fn trajectory(
        epsilon: f64,
        lambda: f64,
        sigma: f64,
        steps: usize,
        seed: u64,
        start: [f64; 2],
        gamma_scale: f64,
        max_points: usize,
    ) -> DemoResult {
        let p = Problem::sharp_valley_2d();
        if steps == 0 || steps > 200_000 {
            return Err("steps must lie in 1..=200000".into());
        }
        let params = derive_params(epsilon, lambda, p.lipschitz_g(), sigma, 16.0).map_err(|e| e.to_string())?;
        let x0 = Vector::from(start);
        let gamma = params.gamma * gamma_scale;
        let state = SfSgd::exploratory(&x0, gamma, 1.0 - params.zeta_star, params.zeta_star, 1.0)
            .map_err(|e| e.to_string())?;
        let streams = Streams::new(seed);
        let mut oracle = StoGradOracle::new(&p, sigma, streams.rng(StreamId::Oracle)).map_err(|e| e.to_string())?;
        let trace = run_sf_sgd(state, &mut oracle, &mut streams.rng(StreamId::Interp), steps).map_err(|e| e.to_string())?;

        let ys: Vec<&Vector> = trace.steps.iter().map(|s| &s.y).collect();
        let grads = ys.iter().map(|y| p.gradient_at(y)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
        let curve = certificate_curve(&ys, &grads, params.beta_star, lambda).map_err(|e| e.to_string())?;
        let law = IndexLaw::new(params.beta_star, steps).map_err(|e| e.to_string())?;
        let expected = expected_certificate(&curve, &law).map_err(|e| e.to_string())?;

        let stride = steps.div_ceil(max_points.max(2)).max(1);
        let keep: Vec<usize> = (0..steps).step_by(stride).chain(std::iter::once(steps - 1)).collect();
        let mut keep = keep;
        keep.dedup();
        let last = trace.steps.last().expect("nonempty");
        json(&Trajectory {
            zeta: params.zeta_star,
            gamma,
            t: keep.iter().map(|i| i + 1).collect(),
            x: keep.iter().map(|&i| pair(&trace.steps[i].x)).collect(),
            y: keep.iter().map(|&i| pair(&trace.steps[i].y)).collect(),
            z: keep.iter().map(|&i| pair(&trace.steps[i].z)).collect(),
            certificate: keep.iter().map(|&i| curve[i]).collect(),
            expected_certificate: expected,
            final_loss: p.evaluate(&last.x).map_err(|e| e.to_string())?,
        })
    }

    #[derive(Serialize)]
    struct Grid {
        nx: usize,
        ny: usize,
        bounds: [f64; 4],
        values: Vec<f64>,
    }

    /// `sharp_valley_2d` sampled row by row on `[x0, x1] x [y0, y1]`.
    pub fn valley_grid(nx: usize, ny: usize, bounds: [f64; 4]) -> DemoResult {
        if nx < 2 || ny < 2 || nx * ny > 1_000_000 {
            return Err("grid must be at least 2x2 and at most 10^6 cells".into());
        }
        let p = Problem::sharp_valley_2d();
        let [x0, x1, y0, y1] = bounds;
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = y1 - (y1 - y0) * j as f64 / (ny - 1) as f64;
            for i in 0..nx {
                let x = x0 + (x1 - x0) * i as f64 / (nx - 1) as f64;
                values.push(p.evaluate(&Vector::from([x, y])).map_err(|e| e.to_string())?);
            }
        }
        json(&Grid { nx, ny, bounds, values })
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = deriveParams)]
pub fn derive_params(epsilon: f64, lambda: f64, g: f64, sigma: f64, cx_bound: f64) -> Result<String, JsError> {
    js(demo::params(epsilon, lambda, g, sigma, cx_bound))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = sfTrajectory)]
pub fn sf_trajectory(
    epsilon: f64,
    lambda: f64,
    sigma: f64,
    steps: u32,
    seed: u32,
    start_x: f64,
    start_y: f64,
    gamma_scale: f64,
) -> Result<String, JsError> {
    js(demo::trajectory(epsilon, lambda, sigma, steps as usize, seed as u64, [start_x, start_y], gamma_scale, 1500))
}

#[wasm_bindgen(js_name = valleyGrid)]
pub fn valley_grid(nx: u32, ny: u32, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<String, JsError> {
    js(demo::valley_grid(nx as usize, ny as usize, [x0, x1, y0, y1]))
}
