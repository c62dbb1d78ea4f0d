//! Scenario files and the synthesis, verification and report pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::canonical::{decompose_stabilizable, CanonicalForm, Coupling, ReducedBlock, ReducedForm};
use crate::closed_loop::ClosedLoop;
use crate::error::{Error, Result};
use crate::feedback::{BoundSpec, FeedbackDescriptor};
use crate::io;
use crate::sim::{integrate, DisturbanceSignal, Sampling, SimOptions, Trajectory};
use crate::spectral::{a0, b0, spectral_profile, LinearSystem, SpectralProfile};
use crate::verify::{
    battery, disturbance_families, estimate_siss_gain, linearization_abscissa, original_feedback, siss_l_test,
    tune_gains, tune_multi_input, verify_battery, BatteryReport, GainEstimate, MultiInputReport, RunOptions,
    SissReport, SissTestSpec, TuningOptions, TuningReport,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Plant description: a named preset, inline matrices or a reduced form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum SystemSpec {
    IntegratorChain {
        n: usize,
    },
    Oscillator {
        omega: f64,
    },
    /// `A = [[A₀, I], [0, A₀]]`, `b = e₄`.
    #[serde(rename = "mixed-4d")]
    Mixed4d,
    /// Oscillator and double integrator in reduced form, two inputs.
    TwoBlockReduced,
    Matrices {
        #[serde(with = "io::matrix_rows")]
        a: DMatrix<f64>,
        #[serde(with = "io::matrix_rows")]
        b: DMatrix<f64>,
    },
    ReducedForm {
        form: ReducedForm,
    },
    /// Path to a JSON reduced form, relative to the scenario file.
    ReducedFormFile {
        path: PathBuf,
    },
}

/// What the pipeline acts on.
#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    Single { a: DMatrix<f64>, b: DVector<f64> },
    Multi(ReducedForm),
}

impl Plant {
    pub fn system(&self) -> Result<LinearSystem> {
        match self {
            Plant::Single { a, b } => LinearSystem::single_input(a.clone(), b.clone()),
            Plant::Multi(rf) => rf.to_system(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Plant::Single { a, .. } => a.nrows(),
            Plant::Multi(rf) => rf.dim(),
        }
    }
}

pub fn integrator_chain(n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n == 0 {
        return Err(Error::Config("integrator chain needs n ≥ 1".into()));
    }
    let a = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    Ok((a, b))
}

pub fn oscillator(omega: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveParameter { name: "omega", value: omega });
    }
    Ok((DMatrix::from_row_slice(2, 2, (a0() * omega).transpose().as_slice()), b0()))
}

pub fn mixed_4d() -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(4, 4);
    a.view_mut((0, 0), (2, 2)).copy_from(&a0());
    a.view_mut((2, 2), (2, 2)).copy_from(&a0());
    a.view_mut((0, 2), (2, 2)).fill_with_identity();
    (a, DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]))
}

pub fn two_block_reduced() -> ReducedForm {
    ReducedForm {
        blocks: vec![
            ReducedBlock { a: oscillator(1.0).expect("unit frequency").0, b: b0() },
            ReducedBlock { a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), b: DVector::from_vec(vec![0.0, 1.0]) },
        ],
        coupling: vec![Coupling {
            row: 1,
            col: 2,
            a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            b: DVector::from_vec(vec![0.0, 0.5]),
        }],
        hurwitz_block: None,
    }
}

impl SystemSpec {
    pub fn plant(&self, base: &Path) -> Result<Plant> {
        let single = |(a, b): (DMatrix<f64>, DVector<f64>)| Plant::Single { a, b };
        Ok(match self {
            SystemSpec::IntegratorChain { n } => single(integrator_chain(*n)?),
            SystemSpec::Oscillator { omega } => single(oscillator(*omega)?),
            SystemSpec::Mixed4d => single(mixed_4d()),
            SystemSpec::TwoBlockReduced => Plant::Multi(two_block_reduced()),
            SystemSpec::Matrices { a, b } => {
                if b.ncols() != 1 {
                    return Err(Error::Config("multi-input plants must be given in reduced form".into()));
                }
                LinearSystem::new(a.clone(), b.clone())?;
                Plant::Single { a: a.clone(), b: b.column(0).into_owned() }
            }
            SystemSpec::ReducedForm { form } => Plant::Multi(form.clone()),
            SystemSpec::ReducedFormFile { path } => Plant::Multi(read_json(&base.join(path))?),
        })
    }
}

/// Seeded initial-condition battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub count: usize,
    pub max_radius: f64,
    pub seed: u64,
}

impl BatterySpec {
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        battery(n, self.count, self.max_radius, self.seed)
    }
}

fn default_tuning() -> BatterySpec {
    BatterySpec { count: 50, max_radius: 100.0, seed: 1 }
}

fn default_validation() -> BatterySpec {
    BatterySpec { count: 50, max_radius: 100.0, seed: 2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Defaults to `p`.
    pub jet_order: Option<usize>,
    /// Number of validation points exported as trajectories.
    pub trajectories: usize,
    pub disturbance: Option<DisturbanceSignal>,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec { rtol: 1e-8, atol: 1e-10, horizon: 200.0, dt: 0.1, jet_order: None, trajectories: 3, disturbance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SissSpec {
    pub delta: f64,
    /// Gain to test; estimated from the data when absent.
    #[serde(default)]
    pub n_candidate: Option<f64>,
    #[serde(default = "default_siss_horizon")]
    pub horizon: f64,
    #[serde(default = "default_siss_points")]
    pub initial_conditions: usize,
    #[serde(default = "default_siss_radius")]
    pub max_radius: f64,
}

fn default_siss_horizon() -> f64 {
    200.0
}

fn default_siss_points() -> usize {
    3
}

fn default_siss_radius() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub system: SystemSpec,
    pub bounds: BoundSpec,
    #[serde(default = "default_tuning")]
    pub tuning: BatterySpec,
    #[serde(default = "default_validation")]
    pub validation: BatterySpec,
    /// Families for the small-input test; the standard set when empty.
    #[serde(default)]
    pub disturbances: Vec<DisturbanceSignal>,
    #[serde(default)]
    pub siss: Option<SissSpec>,
    /// Multi-input exponent, `p + 1` when absent.
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jet_order: Option<usize>,
    pub horizon: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub output: Option<PathBuf>,
}

impl Scenario {
    pub fn new(system: SystemSpec, bounds: BoundSpec) -> Self {
        Scenario {
            schema: SCHEMA_VERSION,
            name: String::new(),
            system,
            bounds,
            tuning: default_tuning(),
            validation: default_validation(),
            disturbances: vec![],
            siss: None,
            exponent: None,
            tolerance: None,
            simulation: SimulationSpec::default(),
            output: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut sc = Scenario::from_json(&text)?;
        sc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        self.bounds.validate()?;
        for b in [&self.tuning, &self.validation] {
            if b.count == 0 || !(b.max_radius > 0.0) {
                return Err(Error::Config("batteries need at least one point and a positive radius".into()));
            }
        }
        let s = &self.simulation;
        for (name, v) in [("rtol", s.rtol), ("atol", s.atol), ("horizon", s.horizon), ("dt", s.dt)] {
            if !(v > 0.0) {
                return Err(Error::NonPositiveParameter { name, value: v });
            }
        }
        Ok(())
    }

    /// Seeds shift both batteries so they stay disjoint.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.tuning.seed = seed;
            self.validation.seed = seed.wrapping_add(1);
        }
        if let Some(k) = o.jet_order {
            self.simulation.jet_order = Some(k);
        }
        if let Some(h) = o.horizon {
            self.simulation.horizon = h;
        }
        if let Some(r) = o.rtol {
            self.simulation.rtol = r;
        }
        if let Some(a) = o.atol {
            self.simulation.atol = a;
        }
        if let Some(out) = &o.output {
            self.output = Some(out.clone());
        }
        self.validate()
    }

    pub fn plant(&self) -> Result<Plant> {
        self.system.plant(&self.base_dir)
    }

    pub fn exponent(&self) -> f64 {
        self.exponent.unwrap_or((self.bounds.p + 1) as f64)
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions { rtol: self.simulation.rtol, atol: self.simulation.atol, ..Default::default() }
    }

    fn run_options(&self) -> RunOptions {
        RunOptions { sim: self.sim_options(), ..Default::default() }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TuningSummary {
    Single(TuningReport),
    Multi(Box<MultiInputReport>),
    /// Feedback supplied by the caller.
    Given,
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub profile: SpectralProfile,
    pub canonical: Option<CanonicalForm>,
    pub tuning: TuningSummary,
    pub closed_loop: ClosedLoop,
}

/// Profile, decomposition, normal form and tuned feedback.
pub fn synthesize_scenario(sc: &Scenario) -> Result<Synthesized> {
    let plant = sc.plant()?;
    let system = plant.system()?;
    let profile = spectral_profile(&system.a, sc.tolerance)?;
    let topts = TuningOptions { run: sc.run_options(), ..Default::default() };
    let points = sc.tuning.points(plant.dim());
    match &plant {
        Plant::Single { a, b } => {
            let decomposition = decompose_stabilizable(a, b, sc.tolerance)?;
            let (report, synthesis) = tune_gains(&decomposition, &sc.bounds, &points, &topts)?;
            let feedback = original_feedback(&synthesis, &report.gains);
            let closed_loop = ClosedLoop::single(a.clone(), b, feedback)?;
            Ok(Synthesized {
                profile,
                canonical: Some(synthesis.canonical),
                tuning: TuningSummary::Single(report),
                closed_loop,
            })
        }
        Plant::Multi(rf) => {
            let report = tune_multi_input(rf, &sc.bounds, sc.exponent(), &points, &topts)?;
            let closed_loop = ClosedLoop::new(system.a, system.b, report.feedback.clone())?;
            Ok(Synthesized { profile, canonical: None, tuning: TuningSummary::Multi(Box::new(report)), closed_loop })
        }
    }
}

/// Closed loop of the scenario plant with a caller-supplied law.
pub fn closed_loop_with(sc: &Scenario, feedback: FeedbackDescriptor) -> Result<ClosedLoop> {
    let system = sc.plant()?.system()?;
    spectral_profile(&system.a, sc.tolerance)?;
    ClosedLoop::new(system.a, system.b, feedback)
}

/// Runs the unseen validation battery against the bounds.
pub fn verify_scenario(sc: &Scenario, cl: &ClosedLoop) -> Result<BatteryReport> {
    verify_battery(cl, &sc.bounds, &sc.validation.points(cl.dim()), &sc.run_options())
}

/// Sampled trajectories from the first validation points, with jets.
pub fn simulate_scenario(sc: &Scenario, cl: &ClosedLoop) -> Result<Vec<Trajectory>> {
    let s = &sc.simulation;
    let opts = SimOptions {
        sampling: Sampling::Grid { dt: s.dt },
        jet_order: Some(s.jet_order.unwrap_or(sc.bounds.p)),
        ..sc.sim_options()
    };
    let dist = s.disturbance.clone().unwrap_or_else(DisturbanceSignal::zero);
    sc.validation
        .points(cl.dim())
        .iter()
        .take(s.trajectories)
        .map(|x0| integrate(cl, &dist, x0, s.horizon, &opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SissOutcome {
    Tested(SissReport),
    Estimated(Box<GainEstimate>),
}

impl SissOutcome {
    pub fn pass(&self) -> bool {
        match self {
            SissOutcome::Tested(r) => r.pass,
            SissOutcome::Estimated(g) => g.validation.pass,
        }
    }
}

pub fn siss_scenario(sc: &Scenario, cl: &ClosedLoop) -> Result<Option<SissOutcome>> {
    let Some(spec) = &sc.siss else { return Ok(None) };
    let n = cl.dim();
    let families =
        if sc.disturbances.is_empty() { disturbance_families(n, sc.tuning.seed) } else { sc.disturbances.clone() };
    let test = SissTestSpec {
        delta: spec.delta,
        n_candidate: spec.n_candidate.unwrap_or(f64::INFINITY),
        families,
        horizon: spec.horizon,
        window_fraction: 0.2,
        initial_conditions: battery(n, spec.initial_conditions, spec.max_radius, sc.tuning.seed),
        sim: sc.sim_options(),
    };
    Ok(Some(match spec.n_candidate {
        Some(_) => SissOutcome::Tested(siss_l_test(cl, &test)?),
        None => {
            let validation = SissTestSpec {
                families: disturbance_families(n, sc.validation.seed.wrapping_add(100)),
                initial_conditions: battery(n, spec.initial_conditions, spec.max_radius, sc.validation.seed),
                ..test.clone()
            };
            SissOutcome::Estimated(Box::new(estimate_siss_gain(cl, &test, &validation)?))
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub certified: bool,
    pub siss_pass: Option<bool>,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl ScenarioOutcome {
    pub fn success(&self) -> bool {
        self.certified && self.siss_pass.unwrap_or(true)
    }
}

/// Writes pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// `(J, b̂, T, θ)` and the block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalBundle {
    #[serde(with = "io::matrix_rows")]
    pub j: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub bhat: DVector<f64>,
    #[serde(with = "io::matrix_rows")]
    pub transform: DMatrix<f64>,
    pub theta: Vec<Vec<f64>>,
    pub layout: Vec<crate::canonical::BlockKind>,
    pub residuals: (f64, f64),
}

impl From<&CanonicalForm> for CanonicalBundle {
    fn from(c: &CanonicalForm) -> Self {
        CanonicalBundle {
            j: c.j.clone(),
            bhat: c.bhat.clone(),
            transform: c.transform.clone(),
            theta: c.theta.values.clone(),
            layout: c.layout.clone(),
            residuals: c.residuals,
        }
    }
}

/// Trajectory CSVs under `dir`, named `trajectory_<k>.csv`.
pub fn write_trajectories(dir: &Path, trajectories: &[Trajectory]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    trajectories
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let path = dir.join(format!("trajectory_{k}.csv"));
            t.save_csv(&path)?;
            Ok(path)
        })
        .collect()
}

/// The whole pipeline; artifacts land in the scenario's output directory.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioOutcome> {
    let out = sc.output_dir();
    let mut artifacts = Vec::new();
    let mut put = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = out.join(name);
        f(&path)?;
        artifacts.push(path);
        Ok(())
    };
    put("scenario.json", &|p| write_json(p, sc))?;
    let syn = synthesize_scenario(sc)?;
    put("profile.json", &|p| write_json(p, &syn.profile))?;
    if let Some(c) = &syn.canonical {
        put("canonical.json", &|p| write_json(p, &CanonicalBundle::from(c)))?;
    }
    put("feedback.json", &|p| write_json(p, &syn.closed_loop.feedback))?;
    put("tuning.json", &|p| write_json(p, &syn.tuning))?;
    let report = verify_scenario(sc, &syn.closed_loop)?;
    put("certificate.json", &|p| write_json(p, &report))?;
    let abscissa = linearization_abscissa(&syn.closed_loop)?;
    let trajectories = simulate_scenario(sc, &syn.closed_loop)?;
    let csvs = write_trajectories(&out.join("trajectories"), &trajectories)?;
    let siss = siss_scenario(sc, &syn.closed_loop)?;
    if let Some(s) = &siss {
        put("siss.json", &|p| write_json(p, s))?;
    }
    let summary = summary_table(sc, &syn, &report, abscissa, siss.as_ref());
    put("summary.txt", &|p| write_text(p, &summary))?;
    artifacts.extend(csvs);
    Ok(ScenarioOutcome { certified: report.pass(), siss_pass: siss.as_ref().map(SissOutcome::pass), summary, artifacts })
}

pub fn run_scenario_file(path: &Path, overrides: &Overrides) -> Result<ScenarioOutcome> {
    let mut sc = Scenario::load(path)?;
    sc.apply(overrides)?;
    run_scenario(&sc)
}

fn summary_table(
    sc: &Scenario,
    syn: &Synthesized,
    report: &BatteryReport,
    abscissa: f64,
    siss: Option<&SissOutcome>,
) -> String {
    let mut s = String::new();
    let pf = |b: bool| if b { "PASS" } else { "FAIL" };
    let _ = writeln!(s, "scenario        {}", if sc.name.is_empty() { "(unnamed)" } else { &sc.name });
    let _ = writeln!(s, "seeds           tuning {} validation {}", sc.tuning.seed, sc.validation.seed);
    let pr = &syn.profile;
    let _ = writeln!(s, "profile         s={} z={} mu={} hurwitz={} omegas={:?}", pr.s, pr.z, pr.mu, pr.hurwitz, pr.omegas);
    match &syn.tuning {
        TuningSummary::Single(r) => {
            let _ = writeln!(s, "gains           {:?} (halvings {:?})", r.gains.a, r.halvings());
        }
        TuningSummary::Multi(r) => {
            let g: Vec<_> = r.block_gains.iter().map(|g| g.a.clone()).collect();
            let _ = writeln!(s, "block gains     {g:?} (composition halvings {})", r.composition_halvings);
        }
        TuningSummary::Given => {
            let _ = writeln!(s, "gains           supplied");
        }
    }
    let _ = writeln!(s, "{:<15} {:>14} {:>14}", "derivative", "bound", "worst sup");
    for (j, (r, w)) in sc.bounds.r.iter().zip(&report.certificate.worst).enumerate() {
        let _ = writeln!(s, "U^({j}){:<10} {r:>14.6e} {w:>14.6e}", "");
    }
    let _ = writeln!(
        s,
        "certificate     {} ({} runs, {} violations, {} unsettled)",
        pf(report.pass()),
        report.runs.len(),
        report.certificate.violations.len(),
        report.unsettled
    );
    let _ = writeln!(s, "linearization   max Re = {abscissa:.6e} ({})", pf(abscissa < -1e-9));
    match siss {
        Some(SissOutcome::Tested(r)) => {
            let _ = writeln!(s, "small-input     {} (worst ratio {:.4})", pf(r.pass), r.worst_ratio);
        }
        Some(SissOutcome::Estimated(g)) => {
            let _ = writeln!(
                s,
                "small-input     estimated gain {:.4} (observed {:.4}), validation {}",
                g.estimate,
                g.worst_observed,
                pf(g.validation.pass)
            );
        }
        None => {}
    }
    s
}
