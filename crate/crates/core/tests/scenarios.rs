use std::fs;
use std::path::Path;

use pbound::canonical::ReducedForm;
use pbound::feedback::{BoundSpec, FeedbackDescriptor};
use pbound::scenario::{
    closed_loop_with, read_json, run_scenario, two_block_reduced, verify_scenario, write_json, CanonicalBundle,
    Scenario, SissOutcome, SissSpec, SystemSpec, TuningSummary,
};
use pbound::sim::Trajectory;
use pbound::verify::BatteryReport;
use pbound::Error;

fn chain_scenario(out: &Path) -> Scenario {
    let mut sc = Scenario::new(SystemSpec::IntegratorChain { n: 3 }, BoundSpec::uniform(2, 1.0).unwrap());
    sc.name = "chain".into();
    sc.siss = Some(SissSpec { delta: 0.001, n_candidate: None, horizon: 600.0, initial_conditions: 2, max_radius: 1.0 });
    sc.simulation.horizon = 50.0;
    sc.output = Some(out.to_path_buf());
    sc
}

#[test]
fn triple_integrator_is_certified_and_artifacts_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let sc = chain_scenario(dir.path());
    let outcome = run_scenario(&sc).unwrap();
    assert!(outcome.success(), "{}", outcome.summary);
    assert!(outcome.summary.contains("certificate     PASS"));

    let back: Scenario = read_json(&dir.path().join("scenario.json")).unwrap();
    assert_eq!(back.system, sc.system);
    let fd: FeedbackDescriptor = read_json(&dir.path().join("feedback.json")).unwrap();
    let bundle: CanonicalBundle = read_json(&dir.path().join("canonical.json")).unwrap();
    assert_eq!(bundle.layout.len(), 3);
    assert!(matches!(read_json::<TuningSummary>(&dir.path().join("tuning.json")).unwrap(), TuningSummary::Single(_)));
    assert!(read_json::<SissOutcome>(&dir.path().join("siss.json")).unwrap().pass());
    let cert: BatteryReport = read_json(&dir.path().join("certificate.json")).unwrap();

    // the written law reproduces the written certificate
    let cl = closed_loop_with(&sc, fd).unwrap();
    assert_eq!(verify_scenario(&sc, &cl).unwrap(), cert);

    let csv = fs::File::open(dir.path().join("trajectories/trajectory_0.csv")).unwrap();
    let traj = Trajectory::read_csv(csv, 3, 1).unwrap();
    assert_eq!(traj.jet_order(), Some(2));
    assert!((traj.times.last().unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn runs_are_reproducible_byte_for_byte() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut sc = Scenario::new(SystemSpec::Oscillator { omega: 1.0 }, BoundSpec::uniform(1, 0.5).unwrap());
    sc.simulation.horizon = 20.0;
    for d in [&d1, &d2] {
        sc.output = Some(d.path().to_path_buf());
        run_scenario(&sc).unwrap();
    }
    for name in ["feedback.json", "tuning.json", "certificate.json", "summary.txt", "trajectories/trajectory_2.csv"] {
        assert_eq!(fs::read(d1.path().join(name)).unwrap(), fs::read(d2.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn inadmissible_plant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"schema":1,"system":{"preset":"matrices","a":[[1,0],[0,0]],"b":[[1],[1]]},"bounds":{"p":0,"r":[1]}}"#,
    )
    .unwrap();
    let mut sc = Scenario::load(&path).unwrap();
    sc.output = Some(dir.path().join("out"));
    assert!(matches!(run_scenario(&sc), Err(Error::PositiveRealPartEigenvalue { .. })));
}

#[test]
fn reduced_form_file_is_resolved_next_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("forms/two.json"), &two_block_reduced()).unwrap();
    fs::write(
        dir.path().join("sc.json"),
        r#"{"schema":1,"system":{"preset":"reduced-form-file","path":"forms/two.json"},"bounds":{"p":1,"r":[1,1]}}"#,
    )
    .unwrap();
    let sc = Scenario::load(&dir.path().join("sc.json")).unwrap();
    match sc.plant().unwrap() {
        pbound::scenario::Plant::Multi(rf) => assert_eq!(rf, two_block_reduced()),
        other => panic!("unexpected plant {other:?}"),
    }
    let rf: ReducedForm = read_json(&dir.path().join("forms/two.json")).unwrap();
    assert_eq!(rf.q(), 2);
}

#[test]
fn mixed_case_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = Scenario::new(SystemSpec::Mixed4d, BoundSpec::uniform(2, 0.5).unwrap());
    sc.simulation.trajectories = 1;
    sc.simulation.horizon = 10.0;
    sc.output = Some(dir.path().to_path_buf());
    let outcome = run_scenario(&sc).unwrap();
    assert!(outcome.success(), "{}", outcome.summary);
}
