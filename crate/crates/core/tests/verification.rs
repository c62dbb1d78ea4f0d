use nalgebra::DMatrix;
use pbound::closed_loop::{control_derivatives, ClosedLoop};
use pbound::feedback::{BoundSpec, FeedbackDescriptor, Saturation};
use pbound::sim::DisturbanceSignal;
use pbound::verify::{
    battery, certify, disturbance_families, oscillator_loop, oscillator_system, run_battery, siss_l_test,
    verify_battery, RunOptions, SissTestSpec,
};

fn metrics_of(cl: &ClosedLoop, p: usize) -> Vec<pbound::sim::SupMetrics> {
    run_battery(cl, &battery(2, 12, 50.0, 4), p, &RunOptions::default())
        .unwrap()
        .into_iter()
        .map(|r| r.metrics)
        .collect()
}

#[test]
fn certification_is_monotone_in_the_bounds() {
    let cl = oscillator_loop(1.0, 0.25).unwrap();
    let m = metrics_of(&cl, 2);
    let loose = certify(&m, &BoundSpec::uniform(2, 0.3).unwrap());
    assert!(loose.pass);
    let looser = certify(&m, &BoundSpec::uniform(2, 0.6).unwrap());
    assert!(looser.pass);
    let tight_r: Vec<f64> = loose.worst.iter().map(|w| w * 0.9).collect();
    let tight = certify(&m, &BoundSpec::new(tight_r).unwrap());
    assert!(!tight.pass);
    assert_eq!(tight.violations.iter().filter(|v| v.order == 0).count() > 0, true);
}

#[test]
fn battery_runs_are_deterministic() {
    let cl = oscillator_loop(2.0, 0.5).unwrap();
    let pts = battery(2, 8, 20.0, 11);
    let a = verify_battery(&cl, &BoundSpec::uniform(1, 1.0).unwrap(), &pts, &RunOptions::default()).unwrap();
    let b = verify_battery(&cl, &BoundSpec::uniform(1, 1.0).unwrap(), &pts, &RunOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn halving_the_disturbance_halves_the_eventual_state() {
    let cl = oscillator_loop(1.0, 0.5).unwrap();
    let spec = SissTestSpec {
        delta: 0.02,
        n_candidate: f64::INFINITY,
        families: vec![DisturbanceSignal::constant(vec![0.3, 1.0], 1.0)],
        horizon: 300.0,
        window_fraction: 0.2,
        initial_conditions: vec![vec![2.0, 0.0]],
        sim: Default::default(),
    };
    let rep = siss_l_test(&cl, &spec).unwrap();
    let norm_at = |d: f64| rep.rows.iter().find(|r| (r.delta - d).abs() < 1e-15).unwrap().trailing_norm;
    let ratio = norm_at(0.01) / norm_at(0.02);
    assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    assert!(rep.rows.iter().all(|r| r.ratio < 10.0));
}

#[test]
fn small_input_test_over_standard_families() {
    let cl = oscillator_loop(1.0, 1.0).unwrap();
    let spec = SissTestSpec {
        delta: 0.05,
        n_candidate: 20.0,
        families: disturbance_families(2, 3),
        horizon: 300.0,
        window_fraction: 0.2,
        initial_conditions: battery(2, 2, 3.0, 3),
        sim: Default::default(),
    };
    let rep = siss_l_test(&cl, &spec).unwrap();
    assert!(rep.pass, "worst ratio {}", rep.worst_ratio);
    assert_eq!(rep.rows.len(), 7 * 3 * 2);
}

#[test]
fn rescaled_saturation_keeps_the_initial_rate() {
    let plant = oscillator_system(2.0);
    let x0 = [4.0, -2.0];
    let rates: Vec<f64> = [0.25, 1.0, 3.0]
        .iter()
        .flat_map(|&c| [Saturation::Tanh, Saturation::ArctanNormalized].map(|s| (c, s)))
        .map(|(scale, saturation)| {
            let fd = FeedbackDescriptor::SaturatedLinear { k: [1.0, 2.0], saturation, scale };
            let cl = ClosedLoop::new(plant.a.clone(), plant.b.clone(), fd).unwrap();
            control_derivatives(&x0, &cl, 1).unwrap()[0][1]
        })
        .collect();
    for r in &rates {
        assert!((r - rates[0]).abs() <= 1e-12 * rates[0].abs(), "{rates:?}");
    }
    // amplitude does change with the scale
    let amp = |scale: f64| {
        let fd = FeedbackDescriptor::SaturatedLinear { k: [1.0, 2.0], saturation: Saturation::Tanh, scale };
        fd.control(&[10.0, 0.0]).unwrap()[0].abs()
    };
    assert!(amp(0.5) > amp(2.0));
}

#[test]
fn saturated_law_at_origin_is_zero_with_hurwitz_linearization() {
    let plant = oscillator_system(2.0);
    let fd = FeedbackDescriptor::SaturatedLinear { k: [1.0, 2.0], saturation: Saturation::Tanh, scale: 1.0 };
    let cl = ClosedLoop::new(plant.a, plant.b, fd).unwrap();
    assert_eq!(cl.control(&[0.0, 0.0]).unwrap()[0], 0.0);
    let j = cl.jacobian_at_origin().unwrap();
    assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -3.0, -2.0]));
}
