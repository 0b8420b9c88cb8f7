use o2n_core::online_learner::{composite_omd_step, RegretLedger, RunningRegret};
use o2n_core::schedule_free::derive_params;
use o2n_core::stationarity::{
    certificate_curve, ema, q_weights, stationarity_certificate, variance_decomposition, EmaState,
};
use o2n_core::{OmdLearner, Vector};
use proptest::prelude::*;

fn vec_of(dim: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-5.0f64..5.0, dim).prop_map(Vector::from)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-14
}

proptest! {
    #[test]
    fn omd_matches_composite_route(
        delta in vec_of(3),
        g in vec_of(3),
        eta in 0.01f64..2.0,
        mu in 0.0f64..3.0,
        beta in 0.05f64..0.999,
        t in 1i32..40,
    ) {
        let l = OmdLearner::new(3, eta, mu, beta).unwrap().with_delta(delta.clone()).unwrap();
        let direct = l.step(&g).unwrap();
        let bt = beta.powi(t);
        let v = g.scaled(1.0 / bt);
        let general = composite_omd_step(&delta, &v, bt * eta, bt * beta * eta, mu / (bt * beta));
        for i in 0..3 {
            prop_assert!((direct.delta()[i] - general[i]).abs() <= 1e-12 * (1.0 + general[i].abs()));
        }
    }

    #[test]
    fn omd_contracts(delta in vec_of(4), g in vec_of(4), eta in 0.01f64..2.0, mu in 0.0f64..3.0, beta in 0.05f64..0.999) {
        let l = OmdLearner::new(4, eta, mu, beta).unwrap().with_delta(delta.clone()).unwrap();
        let next = l.step(&g).unwrap();
        prop_assert!(next.delta().norm() <= l.zeta() * (delta.norm() + eta * g.norm()) * (1.0 + 1e-12));
    }

    #[test]
    fn regret_evaluations_agree(
        rounds in prop::collection::vec((vec_of(2), vec_of(2)), 100),
        u in vec_of(2),
        beta in 0.5f64..0.999,
        mu in 0.0f64..2.0,
    ) {
        let mut ledger = RegretLedger::new(beta, mu).unwrap();
        let mut running = RunningRegret::new(2, beta, mu);
        for (g, d) in &rounds {
            ledger.push(g.clone(), d.clone());
            running.push(g, d);
        }
        let back = ledger.discounted_regret(&u, 100).unwrap();
        let naive = ledger.discounted_regret_naive(&u, 100).unwrap();
        prop_assert!(rel_close(back, naive, 1e-10), "{back} vs {naive}");
        prop_assert!(rel_close(back, running.regret(&u), 1e-10));
    }

    #[test]
    fn q_weights_normalized(beta in 0.01f64..0.9999, t in 1usize..2000) {
        let s: f64 = q_weights(beta, t).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn certificate_monotone_in_lambda(
        ys in prop::collection::vec(vec_of(2), 1..30),
        beta in 0.1f64..0.99,
        lam in 0.0f64..5.0,
        extra in 0.0f64..5.0,
    ) {
        let grads: Vec<Vector> = ys.iter().map(|y| y.scaled(0.5)).collect();
        let t = ys.len();
        let a = stationarity_certificate(&ys, &grads, beta, lam, t).unwrap();
        let b = stationarity_certificate(&ys, &grads, beta, lam + extra, t).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn streaming_certificate_matches_direct(
        ys in prop::collection::vec(vec_of(3), 1..60),
        beta in 0.1f64..0.999,
        lam in 0.0f64..10.0,
    ) {
        let grads: Vec<Vector> = ys.iter().map(|y| Vector::from(y.iter().map(|v| v.signum()).collect::<Vec<_>>())).collect();
        let curve = certificate_curve(&ys, &grads, beta, lam).unwrap();
        for t in 1..=ys.len() {
            let direct = stationarity_certificate(&ys, &grads, beta, lam, t).unwrap();
            prop_assert!((curve[t - 1] - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "t={t}: {} vs {direct}", curve[t - 1]);
        }
    }

    #[test]
    fn variance_decomposition_holds(
        pairs in prop::collection::vec((vec_of(2), vec_of(2)), 1..40),
        beta in 0.05f64..0.999,
    ) {
        let xs: Vec<Vector> = pairs.iter().map(|p| p.0.clone()).collect();
        let ys: Vec<Vector> = pairs.iter().map(|p| p.1.clone()).collect();
        for t in 1..=xs.len() {
            let (lhs, rhs) = variance_decomposition(&xs, &ys, beta, t).unwrap();
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
        }
    }

    #[test]
    fn params_scale_invariant(eps in 0.01f64..1.0, g in 0.2f64..3.0, sigma in 0.0f64..1.0, c in 0.1f64..10.0, cx in prop::sample::select(vec![0.0, 1.0, 16.0])) {
        prop_assume!(eps <= 3.5 * (g + sigma));
        let a = derive_params(eps, 1.0, g, sigma, cx).unwrap();
        let b = derive_params(c * eps, 1.0, c * g, c * sigma, cx).unwrap();
        prop_assert!(rel_close(a.beta_star, b.beta_star, 1e-12));
        // zeta also depends on eta mu, itself a function of eps / (G + sigma)
        prop_assert!(rel_close(a.zeta_star, b.zeta_star, 1e-12));
        prop_assert!(rel_close(a.eta_star * a.mu_star, eps * eps / (7.0 * (g + sigma).powi(2)), 1e-12));
    }
}

#[test]
fn streaming_ema_on_long_trace() {
    let beta = 0.995;
    let ys: Vec<Vector> = (0..1000).map(|i| Vector::from([(i as f64 * 0.01).cos() * 3.0, i as f64 / 100.0])).collect();
    let mut st = EmaState::new(2, beta).unwrap();
    for (t, y) in ys.iter().enumerate() {
        st.push(y);
        if (t + 1) % 97 == 0 || t + 1 == ys.len() {
            let batch = ema(&ys, beta, t + 1).unwrap();
            let live = st.value().unwrap();
            assert!(live.dist(&batch) <= 1e-10 * batch.norm(), "t={}", t + 1);
        }
    }
}
