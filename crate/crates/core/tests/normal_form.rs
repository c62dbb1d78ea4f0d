use nalgebra::{DMatrix, DVector};
use pbound::canonical::{block_layout, decompose_stabilizable, synthesize, BlockKind};
use pbound::closed_loop::ClosedLoop;
use pbound::feedback::{FeedbackDescriptor, GainSchedule};
use pbound::scenario::{integrator_chain, mixed_4d, oscillator};
use pbound::sim::{integrate, DisturbanceSignal, Sampling, SimOptions};
use pbound::spectral::{characteristic_polynomial, spectral_profile};
use pbound::verify::{original_feedback, tail_closed_loop};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn systems() -> Vec<(DMatrix<f64>, DVector<f64>)> {
    vec![integrator_chain(3).unwrap(), oscillator(1.5).unwrap(), mixed_4d()]
}

fn scramble(a: &DMatrix<f64>, b: &DVector<f64>, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
    let inv = s.clone().try_inverse().unwrap();
    (&s * a * inv, &s * b)
}

fn gains(mu: usize) -> GainSchedule {
    GainSchedule::new((0..mu).map(|i| 0.7f64.powi(i as i32 + 1)).collect()).unwrap()
}

#[test]
fn scrambled_coordinates_reach_the_same_normal_form() {
    for (k, (a, b)) in systems().iter().enumerate() {
        let (sa, sb) = scramble(a, b, k as u64);
        let mu = spectral_profile(a, None).unwrap().mu;
        let g = gains(mu);
        let plain = synthesize(a, b, &g, None).unwrap();
        let mixed = synthesize(&sa, &sb, &g, None).unwrap();
        let c = &mixed.canonical;
        let scale = 1.0 + sa.norm();
        assert!((&c.transform * &sa - &c.j * &c.transform).norm() <= 1e-8 * scale);
        assert!((&c.transform * &sb - &c.bhat).norm() <= 1e-8 * scale);
        // the target pair depends on the spectrum and the gains alone
        assert!((&c.j - &plain.canonical.j).norm() <= 1e-9);
        let (pa, pj) = (characteristic_polynomial(&sa), characteristic_polynomial(&c.j));
        for (x, y) in pa.iter().zip(&pj) {
            assert!((x - y).abs() <= 1e-6, "{pa:?} vs {pj:?}");
        }
    }
}

#[test]
fn transform_rows_ignore_earlier_gains() {
    let (a, b) = mixed_4d();
    let base = GainSchedule::new(vec![0.5, 0.25]).unwrap();
    let t = synthesize(&a, &b, &base, None).unwrap().canonical.transform;
    // a₁ never enters T
    let t1 = synthesize(&a, &b, &GainSchedule::new(vec![0.9, 0.25]).unwrap(), None).unwrap().canonical.transform;
    assert!((&t - &t1).norm() <= 1e-12);
    // a₂ only reaches the rows of the first block
    let t2 = synthesize(&a, &b, &GainSchedule::new(vec![0.5, 0.8]).unwrap(), None).unwrap().canonical.transform;
    assert!((t.rows(2, 2) - t2.rows(2, 2)).norm() <= 1e-12);
    assert!((t.rows(0, 2) - t2.rows(0, 2)).norm() > 1e-3);

    let (a, b) = integrator_chain(3).unwrap();
    let t = synthesize(&a, &b, &GainSchedule::new(vec![0.5, 0.5, 0.5]).unwrap(), None).unwrap().canonical.transform;
    let t3 = synthesize(&a, &b, &GainSchedule::new(vec![0.5, 0.5, 0.1]).unwrap(), None).unwrap().canonical.transform;
    assert!((t.row(2) - t3.row(2)).norm() <= 1e-12);
}

#[test]
fn normal_form_and_original_trajectories_correspond() {
    for (a, b) in systems() {
        let mu = spectral_profile(&a, None).unwrap().mu;
        let g = gains(mu);
        let syn = synthesize(&a, &b, &g, None).unwrap();
        let map = syn.coordinate_map();
        let original = ClosedLoop::single(a.clone(), &b, original_feedback(&syn, &g)).unwrap();
        let normal = tail_closed_loop(&syn.canonical.layout, &g, 1).unwrap();
        let x0: Vec<f64> = (0..a.nrows()).map(|i| 1.0 - 0.3 * i as f64).collect();
        let y0 = (&map * DVector::from_column_slice(&x0)).as_slice().to_vec();
        let opts = SimOptions { rtol: 1e-11, atol: 1e-13, sampling: Sampling::Grid { dt: 0.5 }, ..Default::default() };
        let xs = integrate(&original, &DisturbanceSignal::zero(), &x0, 20.0, &opts).unwrap();
        let ys = integrate(&normal, &DisturbanceSignal::zero(), &y0, 20.0, &opts).unwrap();
        assert_eq!(xs.times.len(), ys.times.len());
        for (x, y) in xs.states.iter().zip(&ys.states) {
            let mx = &map * DVector::from_column_slice(x);
            assert!((mx - DVector::from_column_slice(y)).norm() <= 1e-7);
        }
        for (u, v) in xs.controls.iter().zip(&ys.controls) {
            assert!((u[0] - v[0]).abs() <= 1e-7);
        }
    }
}

#[test]
fn stable_modes_are_split_off() {
    // critical double integrator coupled to a stable mode
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, -2.0]);
    let b = DVector::from_vec(vec![0.0, 1.0, 1.0]);
    let d = decompose_stabilizable(&a, &b, None).unwrap();
    assert_eq!(d.n_hurwitz, 1);
    assert_eq!(block_layout(&d.profile), vec![BlockKind::Integrator, BlockKind::Integrator]);
    let g = GainSchedule::new(vec![0.5, 0.25]).unwrap();
    let syn = synthesize(&a, &b, &g, None).unwrap();
    let cl = ClosedLoop::single(a, &b, original_feedback(&syn, &g)).unwrap();
    let traj = integrate(&cl, &DisturbanceSignal::zero(), &[3.0, -1.0, 2.0], 400.0, &SimOptions::default()).unwrap();
    let end: f64 = traj.final_state().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(end < 1e-4, "{end}");
    assert!(matches!(cl.feedback, FeedbackDescriptor::OriginalSingle { .. }));
}
