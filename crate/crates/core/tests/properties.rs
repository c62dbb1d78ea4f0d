use nalgebra::DVector;
use pbound::canonical::{build_theta, BlockKind};
use pbound::closed_loop::control_derivatives;
use pbound::feedback::{kappa_eval, static_bound, FeedbackDescriptor, GainSchedule};
use pbound::jet::{g_derivative_coeff, Jet, Scalar};
use pbound::sim::{integrate, DisturbanceSignal, SimOptions};
use pbound::spectral::p_beta;
use pbound::verify::tail_closed_loop;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

proptest! {
    #[test]
    fn lyapunov_identity_holds(omega in 0.1f64..10.0, beta in 0.01f64..=1.0) {
        let lp = p_beta(omega, beta).unwrap();
        let scale = 1.0 + lp.matrix().norm();
        prop_assert!(lp.residual() <= 1e-13 * scale);
        prop_assert!(lp.sigma_lo > 0.0 && lp.sigma_lo <= lp.sigma_hi);
    }

    #[test]
    fn theta_identities(tail in prop::collection::vec(0.05f64..=1.0, 0..6)) {
        let th = build_theta(&tail).unwrap();
        let mu = tail.len() + 1;
        for i in 1..=mu {
            prop_assert_eq!(th.get(i, i + 1), 1.0);
            for k in i + 1..=mu {
                // one more step divides by the next gain
                let ratio = th.get(i, k + 1) / th.get(i, k);
                prop_assert!((ratio * tail[k - 2] - 1.0).abs() <= 1e-12);
            }
            if i < mu {
                for k in i + 2..=mu + 1 {
                    prop_assert!((th.get(i, k) * tail[i - 1] - th.get(i + 1, k)).abs() <= 1e-12 * th.get(i + 1, k));
                }
            }
        }
    }

    #[test]
    fn jet_reciprocal_square_root(c in prop::collection::vec(-2.0f64..2.0, 6), c0 in 0.2f64..5.0) {
        let mut coeffs = c;
        coeffs[0] = c0;
        let x = Jet::from_coeffs(coeffs);
        let r = x.recip_sqrt();
        let one = r.clone() * r * x;
        prop_assert!((one.coeffs[0] - 1.0).abs() <= 1e-12);
        for v in &one.coeffs[1..] {
            prop_assert!(v.abs() <= 1e-9);
        }
    }

    #[test]
    fn g_coefficients_recurse(k in 0usize..12) {
        let (a, b) = (g_derivative_coeff(k), g_derivative_coeff(k + 1));
        prop_assert!((b + (k as f64 + 0.5) * a).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn taylor_prediction_error_has_order_k_plus_one(x0 in prop::collection::vec(-2.0f64..2.0, 2), order in 2usize..5) {
        let g = GainSchedule::new(vec![0.5]).unwrap();
        let cl = tail_closed_loop(&[BlockKind::Oscillator { omega: 1.0 }], &g, 1).unwrap();
        let jet = cl.state_jet(&x0, order).unwrap();
        let taus = [0.05, 0.1, 0.2];
        let opts = SimOptions { rtol: 1e-13, atol: 1e-15, ..Default::default() };
        let errs: Vec<f64> = taus.iter().map(|&tau| {
            let exact = integrate(&cl, &DisturbanceSignal::zero(), &x0, tau, &opts).unwrap();
            jet.iter().zip(exact.final_state()).map(|(j, e)| (j.eval(tau) - e).abs()).fold(0.0, f64::max)
        }).collect();
        prop_assume!(errs.iter().all(|&e| e > 1e-12));
        let slope = log_slope(&taus, &errs);
        prop_assert!((slope - (order + 1) as f64).abs() < 0.5, "slope {slope} for order {order}");
    }
}

#[test]
fn kappa_respects_static_bound() {
    let layout = vec![BlockKind::Oscillator { omega: 2.0 }, BlockKind::Integrator, BlockKind::Integrator];
    let g = GainSchedule::new(vec![0.8, 0.5, 0.3]).unwrap();
    let bound = static_bound(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let r = 10f64.powf(rng.gen_range(-3.0..4.0));
        let y = DVector::from_fn(4, |_, _| r * rng.gen_range(-1.0..1.0));
        assert!(kappa_eval(&y, &g, &layout).unwrap().abs() <= bound);
    }
}

#[test]
fn central_differences_of_the_law_have_order_two() {
    let layout = vec![BlockKind::Integrator, BlockKind::Integrator];
    let g = GainSchedule::new(vec![0.5, 0.25]).unwrap();
    let cl = tail_closed_loop(&layout, &g, 1).unwrap();
    let x = [0.7, -0.4];
    let v = [0.6, 0.8];
    let exact = {
        let xs: Vec<Jet> = x.iter().zip(&v).map(|(xi, vi)| Jet::from_coeffs(vec![*xi, *vi])).collect();
        cl.feedback.control(&xs).unwrap()[0].coeffs[1]
    };
    let nu = |s: f64| cl.control(&[x[0] + s * v[0], x[1] + s * v[1]]).unwrap()[0];
    let hs = [0.08, 0.04, 0.02, 0.01];
    let errs: Vec<f64> = hs.iter().map(|&h| ((nu(h) - nu(-h)) / (2.0 * h) - exact).abs()).collect();
    let slope = log_slope(&hs, &errs);
    assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
}

#[test]
fn control_jets_match_along_flow() {
    // U(t + τ) from the jet agrees with re-evaluating the law on the integrated state
    let g = GainSchedule::new(vec![0.5, 0.5]).unwrap();
    let cl = tail_closed_loop(&[BlockKind::Integrator, BlockKind::Integrator], &g, 1).unwrap();
    let x0 = [1.0, -2.0];
    let d = control_derivatives(&x0, &cl, 6).unwrap();
    let tau: f64 = 0.05;
    let predicted: f64 = (0..=6).map(|k| d[0][k] * tau.powi(k as i32) / pbound::jet::factorial(k) as f64).sum();
    let opts = SimOptions { rtol: 1e-13, atol: 1e-15, ..Default::default() };
    let exact = integrate(&cl, &DisturbanceSignal::zero(), &x0, tau, &opts).unwrap();
    assert!((predicted - exact.controls.last().unwrap()[0]).abs() < 1e-10);
    assert!(matches!(cl.feedback, FeedbackDescriptor::CanonicalSingle { .. }));
}
