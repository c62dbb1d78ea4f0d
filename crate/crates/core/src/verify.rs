//! Empirical verification: derivative-bound certificates, the top-down gain
//! tuner, small-input small-state tests, the oscillator Lyapunov checks and
//! the saturated-linear growth experiment.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::{
    block_layout, block_offsets, build_target_pair, build_theta, layout_dim, synthesize_from, BlockKind, CanonicalForm,
    CriticalDecomposition, ReducedForm, Synthesis, ThetaTable,
};
use crate::closed_loop::{control_derivatives, ClosedLoop};
use crate::error::{Error, Result};
use crate::feedback::{BlockFeedback, BoundSpec, FeedbackDescriptor, GainSchedule, Saturation};
use crate::sim::{sup_metrics, DisturbanceSignal, MetricsAccumulator, SimOptions, Simulation, SupMetrics, Trajectory};
use crate::spectral::{a0, b0, eigenvalues, gamma_constant, p_beta, LinearSystem};

/// `count` initial conditions in `ℝⁿ` with log-uniform radii in
/// `[min_radius, max_radius]`; the first point sits on the outer sphere.
pub fn battery(n: usize, count: usize, max_radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_radius = (max_radius * 1e-4).min(0.01);
    (0..count)
        .map(|i| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let r = if i == 0 { max_radius } else { (min_radius.ln() + rng.gen::<f64>() * (max_radius / min_radius).ln()).exp() };
            v.iter_mut().for_each(|x| *x *= r / norm);
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub sim: SimOptions,
    pub initial_horizon: f64,
    pub max_horizon: f64,
    /// Trailing-window norm below which a run counts as settled.
    pub settle_norm: f64,
    pub window_fraction: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            sim: SimOptions::default(),
            initial_horizon: 200.0,
            max_horizon: 2e5,
            settle_norm: 1e-6,
            window_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub x0: Vec<f64>,
    pub metrics: SupMetrics,
    pub converged: bool,
    pub diverged: bool,
}

/// Undisturbed run with control derivatives up to `p`, doubling the horizon
/// until the trailing-window norm settles or `max_horizon` is reached.
pub fn run_until_settled(cl: &ClosedLoop, x0: &[f64], p: usize, opts: &RunOptions) -> Result<RunRecord> {
    let mut acc = MetricsAccumulator::new(p, cl.inputs());
    let mut sim = Simulation::new(cl, DisturbanceSignal::zero(), x0, SimOptions { jet_order: None, ..opts.sim.clone() })?;
    let mut horizon = opts.initial_horizon;
    loop {
        let r = sim.advance(horizon, |t, x| {
            let d = control_derivatives(x, cl, p)?;
            acc.observe(t, x, &d);
            Ok(())
        });
        match r {
            Ok(()) => {}
            Err(Error::Divergence { .. }) | Err(Error::StepSizeUnderflow { .. }) => {
                return Ok(RunRecord { x0: x0.to_vec(), metrics: acc.finish(opts.window_fraction), converged: false, diverged: true })
            }
            Err(e) => return Err(e),
        }
        let trailing = acc.trailing_norm(opts.window_fraction * horizon);
        if trailing < opts.settle_norm || horizon >= opts.max_horizon {
            return Ok(RunRecord {
                x0: x0.to_vec(),
                metrics: acc.finish(opts.window_fraction),
                converged: trailing < opts.settle_norm,
                diverged: false,
            });
        }
        horizon = (2.0 * horizon).min(opts.max_horizon);
    }
}

pub fn run_battery(cl: &ClosedLoop, points: &[Vec<f64>], p: usize, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    points.par_iter().map(|x0| run_until_settled(cl, x0, p, opts)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub run: usize,
    pub order: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub pass: bool,
    pub bounds: BoundSpec,
    /// Worst `sup |U⁽ʲ⁾|` over all runs, `j = 0..=p`.
    pub worst: Vec<f64>,
    pub violations: Vec<Violation>,
    pub runs: usize,
}

/// Checks `sup |U⁽ʲ⁾| ≤ R_j` on every run.
pub fn certify(metrics: &[SupMetrics], bounds: &BoundSpec) -> Certificate {
    let mut worst = vec![0.0; bounds.p + 1];
    let mut violations = Vec::new();
    for (run, m) in metrics.iter().enumerate() {
        for j in 0..=bounds.p {
            let v = m.sup.get(j).copied().unwrap_or(f64::INFINITY);
            worst[j] = f64::max(worst[j], v);
            if !(v <= bounds.r[j]) {
                violations.push(Violation { run, order: j, value: v, bound: bounds.r[j] });
            }
        }
    }
    Certificate { pass: violations.is_empty(), bounds: bounds.clone(), worst, violations, runs: metrics.len() }
}

/// Certificate for undisturbed trajectories carrying jets to order `p`.
pub fn check_p_bounded(trajectories: &[Trajectory], bounds: &BoundSpec) -> Result<Certificate> {
    let metrics = trajectories.iter().map(|t| sup_metrics(t, bounds.p, 0.2)).collect::<Result<Vec<_>>>()?;
    Ok(certify(&metrics, bounds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOptions {
    pub run: RunOptions,
    /// Smallest gain tried before giving up.
    pub floor: f64,
}

impl Default for TuningOptions {
    fn default() -> Self {
        TuningOptions { run: RunOptions::default(), floor: 2f64.powi(-40) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// 1-based block index.
    pub stage: usize,
    pub halvings: usize,
    pub gain: f64,
    pub budget: f64,
    pub worst: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub gains: GainSchedule,
    pub stages: Vec<StageRecord>,
    /// Final full-system runs on the tuning battery (normal-form coordinates).
    pub battery: Vec<RunRecord>,
    pub certified: Option<BoundSpec>,
}

impl TuningReport {
    pub fn halvings(&self) -> Vec<usize> {
        let mut h = vec![0; self.gains.mu()];
        for s in &self.stages {
            h[s.stage - 1] = s.halvings;
        }
        h
    }
}

/// Normal-form closed loop of the trailing blocks `i..μ` (1-based `first`).
pub fn tail_closed_loop(layout: &[BlockKind], gains: &GainSchedule, first: usize) -> Result<ClosedLoop> {
    let sub_layout = layout[first - 1..].to_vec();
    let sub_gains = GainSchedule::new(gains.a[first - 1..].to_vec())?;
    let theta = build_theta(&sub_gains.a[1..])?;
    let (j, bhat) = build_target_pair(&sub_layout, &theta)?;
    let n = j.nrows();
    let canonical = CanonicalForm {
        j: j.clone(),
        bhat: bhat.clone(),
        transform: DMatrix::identity(n, n),
        theta,
        layout: sub_layout,
        residuals: (0.0, 0.0),
    };
    ClosedLoop::single(j, &bhat, FeedbackDescriptor::CanonicalSingle { gains: sub_gains, canonical })
}

fn worst_sup(runs: &[RunRecord], p: usize) -> Vec<f64> {
    (0..=p).map(|j| runs.iter().map(|r| r.metrics.sup[j]).fold(0.0, f64::max)).collect()
}

/// Top-down halving search: for `i = μ, …, 1`, start from `a_i = 1` and
/// halve until the closed loop of blocks `i..μ` settles from the battery
/// with `sup |Ũ_i⁽ʲ⁾| ≤ (μ − i + 1) R_min / (μ (p + 1))`, `Ũ_i` being the
/// partial control of those blocks. `battery` is in normal-form coordinates.
pub fn tune_canonical(layout: &[BlockKind], bounds: &BoundSpec, battery: &[Vec<f64>], opts: &TuningOptions) -> Result<TuningReport> {
    let n = layout_dim(layout);
    if battery.iter().any(|x| x.len() != n) {
        return Err(Error::DimensionMismatch(format!("battery points must have length {n}")));
    }
    tune_stages(layout, bounds, battery.len(), opts, |_, start| {
        Ok(battery.iter().map(|x| x[start..].to_vec()).collect())
    })
}

/// Tunes the gains of a stabilizable single-input system from a battery in
/// original coordinates.
pub fn tune_gains(
    decomposition: &CriticalDecomposition,
    bounds: &BoundSpec,
    battery: &[Vec<f64>],
    opts: &TuningOptions,
) -> Result<(TuningReport, Synthesis)> {
    let n = decomposition.transform.ncols();
    if battery.iter().any(|x| x.len() != n) {
        return Err(Error::DimensionMismatch(format!("battery points must have length {n}")));
    }
    let layout = block_layout(&decomposition.profile);
    let report = tune_stages(&layout, bounds, battery.len(), opts, |gains, start| {
        // rows of T for blocks i..μ depend only on a_{i+1..μ}, which are final here
        let map = synthesize_from(decomposition.clone(), gains)?.coordinate_map();
        Ok(battery
            .iter()
            .map(|x| (&map * DVector::from_column_slice(x)).as_slice()[start..].to_vec())
            .collect())
    })?;
    let synthesis = synthesize_from(decomposition.clone(), &report.gains)?;
    Ok((report, synthesis))
}

fn tune_stages<F>(layout: &[BlockKind], bounds: &BoundSpec, count: usize, opts: &TuningOptions, points_for: F) -> Result<TuningReport>
where
    F: Fn(&GainSchedule, usize) -> Result<Vec<Vec<f64>>>,
{
    bounds.validate()?;
    if count == 0 {
        return Err(Error::Config("tuning battery is empty".into()));
    }
    let mu = layout.len();
    if mu == 0 {
        return Ok(TuningReport { gains: GainSchedule::unit(0), stages: vec![], battery: vec![], certified: Some(bounds.clone()) });
    }
    let offsets = block_offsets(layout);
    let p = bounds.p;
    let mut gains = GainSchedule::unit(mu);
    let mut stages = Vec::new();
    let mut last_runs = Vec::new();
    for i in (1..=mu).rev() {
        let budget = (mu - i + 1) as f64 * bounds.r_min() / (mu as f64 * (p + 1) as f64);
        let points = points_for(&gains, offsets[i - 1])?;
        let mut halvings = 0;
        loop {
            let cl = tail_closed_loop(layout, &gains, i)?;
            let runs = run_battery(&cl, &points, p, &opts.run)?;
            let worst = worst_sup(&runs, p);
            if runs.iter().all(|r| r.converged) && worst.iter().all(|&w| w <= budget) {
                stages.push(StageRecord { stage: i, halvings, gain: gains.a[i - 1], budget, worst });
                last_runs = runs;
                break;
            }
            gains.a[i - 1] *= 0.5;
            halvings += 1;
            if gains.a[i - 1] < opts.floor {
                let unsettled = runs.iter().filter(|r| !r.converged).count();
                return Err(Error::TuningFailed(format!(
                    "stage {i}: gain fell below {:e} ({unsettled} unsettled runs, worst sups {worst:?}, budget {budget})",
                    opts.floor
                )));
            }
        }
    }
    let metrics: Vec<SupMetrics> = last_runs.iter().map(|r| r.metrics.clone()).collect();
    let cert = certify(&metrics, bounds);
    Ok(TuningReport { gains, stages, battery: last_runs, certified: cert.pass.then(|| bounds.clone()) })
}

/// Original-coordinates law `ν(x) = κ(T W_c x)` for a synthesis.
pub fn original_feedback(synthesis: &Synthesis, gains: &GainSchedule) -> FeedbackDescriptor {
    FeedbackDescriptor::OriginalSingle {
        gains: gains.clone(),
        canonical: synthesis.canonical.clone(),
        map: synthesis.coordinate_map(),
        state_dim: synthesis.decomposition.transform.ncols(),
    }
}

/// Battery certificate of a closed loop in its own coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub certificate: Certificate,
    pub runs: Vec<RunRecord>,
    pub unsettled: usize,
}

impl BatteryReport {
    pub fn pass(&self) -> bool {
        self.certificate.pass && self.unsettled == 0
    }
}

pub fn verify_battery(cl: &ClosedLoop, bounds: &BoundSpec, points: &[Vec<f64>], opts: &RunOptions) -> Result<BatteryReport> {
    let runs = run_battery(cl, points, bounds.p, opts)?;
    let metrics: Vec<SupMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let unsettled = runs.iter().filter(|r| !r.converged).count();
    Ok(BatteryReport { certificate: certify(&metrics, bounds), runs, unsettled })
}

/// Largest real part of the closed-loop Jacobian spectrum at the origin.
pub fn linearization_abscissa(cl: &ClosedLoop) -> Result<f64> {
    let j = cl.jacobian_at_origin()?;
    Ok(eigenvalues(&j).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Composed law for a reduced form whose diagonal blocks carry single-input laws.
pub fn compose_multi_input(rf: &ReducedForm, laws: Vec<FeedbackDescriptor>, exponent: f64) -> Result<FeedbackDescriptor> {
    if laws.len() != rf.q() {
        return Err(Error::DimensionMismatch(format!("{} laws for {} blocks", laws.len(), rf.q())));
    }
    let blocks = laws
        .into_iter()
        .enumerate()
        .map(|(k, law)| BlockFeedback { offset: rf.offset(k + 1), dim: rf.blocks[k].a.nrows(), law })
        .collect();
    Ok(FeedbackDescriptor::MultiInput { blocks, exponent, state_dim: rf.dim() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiInputReport {
    pub feedback: FeedbackDescriptor,
    pub block_gains: Vec<GainSchedule>,
    pub block_reports: Vec<TuningReport>,
    /// Extra halvings applied to all blocks above the last during composition.
    pub composition_halvings: usize,
    pub verification: BatteryReport,
}

/// Tunes every diagonal block on its own with half of each bound, composes
/// the cascade law, and halves the gains of the upper blocks until the
/// composed loop passes on the battery.
pub fn tune_multi_input(
    rf: &ReducedForm,
    bounds: &BoundSpec,
    exponent: f64,
    battery: &[Vec<f64>],
    opts: &TuningOptions,
) -> Result<MultiInputReport> {
    let report = crate::canonical::validate_reduced_form(rf, None);
    if !report.valid {
        return Err(Error::Config(format!("invalid reduced form: {}", report.violations.join("; "))));
    }
    let system = rf.to_system()?;
    let half = BoundSpec::new(bounds.r.iter().map(|r| r / 2.0).collect())?;
    let mut decomps = Vec::new();
    let mut block_reports = Vec::new();
    let mut block_gains = Vec::new();
    for (k, blk) in rf.blocks.iter().enumerate() {
        let d = crate::canonical::decompose_stabilizable(&blk.a, &blk.b, None)?;
        let o = rf.offset(k + 1);
        let pts: Vec<Vec<f64>> = battery.iter().map(|x| x[o..o + blk.a.nrows()].to_vec()).collect();
        let (rep, _) = tune_gains(&d, &half, &pts, opts)?;
        block_gains.push(rep.gains.clone());
        block_reports.push(rep);
        decomps.push(d);
    }
    let mut composition_halvings = 0;
    loop {
        let laws = decomps
            .iter()
            .zip(&block_gains)
            .map(|(d, g)| Ok(original_feedback(&synthesize_from(d.clone(), g)?, g)))
            .collect::<Result<Vec<_>>>()?;
        let feedback = compose_multi_input(rf, laws, exponent)?;
        let cl = ClosedLoop::new(system.a.clone(), system.b.clone(), feedback.clone())?;
        let verification = verify_battery(&cl, bounds, battery, &opts.run)?;
        if verification.pass() {
            return Ok(MultiInputReport { feedback, block_gains, block_reports, composition_halvings, verification });
        }
        let q = block_gains.len();
        for g in block_gains.iter_mut().take(q.saturating_sub(1).max(1)) {
            *g = g.scaled(0.5)?;
        }
        composition_halvings += 1;
        if block_gains.iter().any(|g| g.a.iter().any(|&a| a < opts.floor)) {
            return Err(Error::TuningFailed(format!(
                "composed law still fails after {composition_halvings} halvings (worst sups {:?})",
                verification.certificate.worst
            )));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SissTestSpec {
    pub delta: f64,
    pub n_candidate: f64,
    /// Disturbance shapes; amplitudes are set per run to `δ'`.
    pub families: Vec<DisturbanceSignal>,
    pub horizon: f64,
    pub window_fraction: f64,
    pub initial_conditions: Vec<Vec<f64>>,
    pub sim: SimOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SissRow {
    pub family: usize,
    pub delta: f64,
    pub initial_condition: usize,
    pub trailing_norm: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SissReport {
    pub rows: Vec<SissRow>,
    pub worst_ratio: f64,
    pub window: f64,
    pub pass: bool,
}

fn with_amplitude(d: &DisturbanceSignal, delta: f64) -> DisturbanceSignal {
    let mut d = d.clone();
    d.amplitude = delta;
    d
}

/// Eventual-bound test: for every family and `δ' ∈ {δ, δ/2, δ/4}`, the state
/// norm on the trailing window must stay below `N δ'`.
pub fn siss_l_test(cl: &ClosedLoop, spec: &SissTestSpec) -> Result<SissReport> {
    if !(spec.delta > 0.0) {
        return Err(Error::NonPositiveParameter { name: "delta", value: spec.delta });
    }
    let window = spec.window_fraction * spec.horizon;
    let mut jobs = Vec::new();
    for (f, fam) in spec.families.iter().enumerate() {
        for scale in [1.0, 0.5, 0.25] {
            for (ic, x0) in spec.initial_conditions.iter().enumerate() {
                jobs.push((f, fam, spec.delta * scale, ic, x0));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(family, fam, delta, initial_condition, x0)| {
            let mut sim = Simulation::new(cl, with_amplitude(fam, delta), x0, spec.sim.clone())?;
            let mut trailing = 0.0f64;
            let start = spec.horizon - window;
            sim.advance(spec.horizon, |t, x| {
                if t >= start {
                    trailing = trailing.max(x.iter().map(|v| v * v).sum::<f64>().sqrt());
                }
                Ok(())
            })?;
            let ratio = trailing / delta;
            Ok(SissRow { family, delta, initial_condition, trailing_norm: trailing, ratio, pass: ratio <= spec.n_candidate })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    Ok(SissReport { rows, worst_ratio, window, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub estimate: f64,
    pub worst_observed: f64,
    pub validation: SissReport,
}

/// Estimates the linear gain as 1.5 × the worst observed ratio, then checks
/// it on a second, disjoint set of disturbances and initial conditions.
pub fn estimate_siss_gain(cl: &ClosedLoop, spec: &SissTestSpec, validation: &SissTestSpec) -> Result<GainEstimate> {
    let probe = siss_l_test(cl, &SissTestSpec { n_candidate: f64::INFINITY, ..spec.clone() })?;
    let estimate = 1.5 * probe.worst_ratio;
    let validation = siss_l_test(cl, &SissTestSpec { n_candidate: estimate, ..validation.clone() })?;
    Ok(GainEstimate { estimate, worst_observed: probe.worst_ratio, validation })
}

/// Standard disturbance families for an `n`-dimensional state.
pub fn disturbance_families(n: usize, seed: u64) -> Vec<DisturbanceSignal> {
    let dir: Vec<f64> = (0..n).map(|i| if i == n - 1 { 1.0 } else { 0.5 }).collect();
    vec![
        DisturbanceSignal::zero(),
        DisturbanceSignal::constant(dir.clone(), 1.0),
        DisturbanceSignal::constant(dir.iter().map(|d| -d).collect(), 1.0),
        DisturbanceSignal::sinusoid(dir.clone(), 1.0, 1.0),
        DisturbanceSignal::sinusoid(dir, 0.1, 1.0),
        DisturbanceSignal::piecewise_random(seed, 1.0),
        DisturbanceSignal::piecewise_random(seed + 1, 1.0).with_onset(20.0, 5.0),
    ]
}

/// `V(x) = xᵀPx + ((σ̄ + σ̲)/3)((1 + ‖x‖²)^{3/2} − 1)`.
pub fn oscillator_lyapunov(omega: f64, beta: f64, x: &[f64; 2]) -> Result<f64> {
    let lp = p_beta(omega, beta)?;
    let p = lp.p;
    let quad = p[0][0] * x[0] * x[0] + 2.0 * p[0][1] * x[0] * x[1] + p[1][1] * x[1] * x[1];
    let r2 = x[0] * x[0] + x[1] * x[1];
    Ok(quad + (lp.sigma_hi + lp.sigma_lo) / 3.0 * ((1.0 + r2).powf(1.5) - 1.0))
}

/// `ẋ = ωA₀x − β b₀ b₀ᵀx / sqrt(1 + ‖x‖²)`.
pub fn oscillator_field(omega: f64, beta: f64, x: &[f64; 2]) -> [f64; 2] {
    let s = (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt();
    [omega * x[1], -omega * x[0] - beta * x[1] / s]
}

/// `∇V(x) · ẋ` along the undisturbed oscillator field.
pub fn oscillator_lyapunov_rate(omega: f64, beta: f64, x: &[f64; 2]) -> Result<f64> {
    let lp = p_beta(omega, beta)?;
    let p = lp.p;
    let s = (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt();
    let c = lp.sigma_hi + lp.sigma_lo;
    let g = [
        2.0 * (p[0][0] * x[0] + p[0][1] * x[1]) + c * s * x[0],
        2.0 * (p[1][0] * x[0] + p[1][1] * x[1]) + c * s * x[1],
    ];
    let f = oscillator_field(omega, beta, x);
    Ok(g[0] * f[0] + g[1] * f[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub omega: f64,
    pub beta: f64,
    pub residual: f64,
    /// `min V(x)/‖x‖²` over the samples.
    pub min_v_ratio: f64,
    /// `max V̇(x)` over the samples.
    pub max_rate: f64,
    /// Largest relative gap between the analytic rate and a central difference along the flow.
    pub rate_fd_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub rows: Vec<LyapunovRow>,
    pub pass: bool,
}

/// Lyapunov-equation residuals, positivity of `V` and decrease of `V`
/// along the oscillator field for `‖x‖ ∈ [0.1, 100]`.
pub fn oscillator_lyapunov_suite(omegas: &[f64], betas: &[f64], samples: usize, seed: u64) -> Result<LyapunovReport> {
    let mut rows = Vec::new();
    for &omega in omegas {
        for &beta in betas {
            let lp = p_beta(omega, beta)?;
            let residual = lp.residual();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut min_v_ratio, mut max_rate, mut gap) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
            for _ in 0..samples {
                let r = (0.1f64.ln() + rng.gen::<f64>() * (1000f64).ln()).exp();
                let th = rng.gen::<f64>() * std::f64::consts::TAU;
                let x = [r * th.cos(), r * th.sin()];
                let v = oscillator_lyapunov(omega, beta, &x)?;
                min_v_ratio = min_v_ratio.min(v / (r * r));
                let rate = oscillator_lyapunov_rate(omega, beta, &x)?;
                max_rate = max_rate.max(rate);
                let f = oscillator_field(omega, beta, &x);
                let h = 1e-6 / (1.0 + f[0].abs() + f[1].abs());
                let fwd = oscillator_lyapunov(omega, beta, &[x[0] + h * f[0], x[1] + h * f[1]])?;
                let bwd = oscillator_lyapunov(omega, beta, &[x[0] - h * f[0], x[1] - h * f[1]])?;
                let fd = (fwd - bwd) / (2.0 * h);
                gap = gap.max((fd - rate).abs() / (v.abs().max(1.0) * 1e-6 + rate.abs()));
            }
            let pass = residual <= 1e-12 && min_v_ratio > 0.0 && max_rate < 0.0 && gap < 1e-3;
            rows.push(LyapunovRow { omega, beta, residual, min_v_ratio, max_rate, rate_fd_gap: gap, pass });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(LyapunovReport { rows, pass })
}

/// Closed loop `ẋ = ωA₀x + b₀u` with the law `u = −β b₀ᵀx / sqrt(1 + ‖x‖²)`.
pub fn oscillator_loop(omega: f64, beta: f64) -> Result<ClosedLoop> {
    let gains = GainSchedule::new(vec![beta])?;
    let (j, bhat) = build_target_pair(&[BlockKind::Oscillator { omega }], &ThetaTable { mu: 1, values: vec![vec![0.0, 1.0]] })?;
    let canonical = CanonicalForm {
        j: j.clone(),
        bhat: bhat.clone(),
        transform: DMatrix::identity(2, 2),
        theta: ThetaTable { mu: 1, values: vec![vec![0.0, 1.0]] },
        layout: vec![BlockKind::Oscillator { omega }],
        residuals: (0.0, 0.0),
    };
    ClosedLoop::single(j, &bhat, FeedbackDescriptor::CanonicalSingle { gains, canonical })
}

/// Closed loop `ẋ = −β x / sqrt(1 + x²)`.
pub fn integrator_loop(beta: f64) -> Result<ClosedLoop> {
    if !(beta > 0.0) {
        return Err(Error::NonPositiveParameter { name: "beta", value: beta });
    }
    // β may exceed 1 here, so the gain enters through B instead of the schedule
    let gains = GainSchedule::unit(1);
    let theta = build_theta(&[])?;
    let canonical = CanonicalForm {
        j: DMatrix::zeros(1, 1),
        bhat: DVector::from_element(1, 1.0),
        transform: DMatrix::identity(1, 1),
        theta,
        layout: vec![BlockKind::Integrator],
        residuals: (0.0, 0.0),
    };
    ClosedLoop::single(DMatrix::zeros(1, 1), &DVector::from_element(1, beta), FeedbackDescriptor::CanonicalSingle { gains, canonical })
}

/// Oscillator plant `ẋ = ωA₀x + b₀u` as a [`LinearSystem`].
pub fn oscillator_system(omega: f64) -> LinearSystem {
    let a = DMatrix::from_fn(2, 2, |i, j| omega * a0()[(i, j)]);
    LinearSystem::single_input(a, b0()).expect("oscillator pair is well formed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub l: f64,
    /// `u̇(0)` from the control jet of the closed loop.
    pub simulated: f64,
    /// `u̇(0)` from central differences of a simulated trajectory.
    pub finite_difference: f64,
    /// The printed closed form.
    pub formula: f64,
    pub relative_error: f64,
    /// Error against the closed form with its sign reversed.
    pub relative_error_reversed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    /// Least-squares slope of `|u̇(0)|` against `l`.
    pub slope: f64,
    pub expected_slope: f64,
    pub matches_formula: bool,
    pub matches_magnitude: bool,
    /// `sup |U̇|` of the bounded law over the same initial conditions, if run.
    pub contrast_sup: Option<Vec<f64>>,
}

/// Growth of `u̇(0)` for `u = −σ(kᵀx)` on the oscillator from `(l, −k₁l/k₂)`.
pub fn counterexample_growth(
    l_values: &[f64],
    k: [f64; 2],
    omega: f64,
    sigma: Saturation,
    contrast: Option<&ClosedLoop>,
) -> Result<GrowthReport> {
    if k[1] == 0.0 {
        return Err(Error::ZeroK2);
    }
    let plant = oscillator_system(omega);
    let fd = FeedbackDescriptor::SaturatedLinear { k, saturation: sigma, scale: 1.0 };
    let cl = ClosedLoop::new(plant.a.clone(), plant.b.clone(), fd)?;
    let mut rows = Vec::new();
    for &l in l_values {
        let x0 = [l, -k[0] * l / k[1]];
        let simulated = control_derivatives(&x0, &cl, 1)?[0][1];
        let finite_difference = initial_rate_by_differences(&cl, &x0, simulated)?;
        let formula = crate::feedback::counterexample_initial_derivative(l, &k, omega, sigma.slope_at_zero())?;
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { (a - b).abs() / b.abs() };
        rows.push(GrowthRow {
            l,
            simulated,
            finite_difference,
            formula,
            relative_error: rel(simulated, formula),
            relative_error_reversed: rel(simulated, -formula),
        });
    }
    let (sxy, sxx) = rows.iter().fold((0.0, 0.0), |(a, b), r| (a + r.l * r.simulated.abs(), b + r.l * r.l));
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let expected_slope = sigma.slope_at_zero() * omega * (k[0] * k[0] / k[1] + k[1]).abs();
    let matches_formula = rows.iter().all(|r| r.relative_error <= 1e-9);
    let matches_magnitude =
        rows.iter().all(|r| r.relative_error_reversed <= 1e-9) && (slope - expected_slope).abs() <= 1e-9 * expected_slope.max(1.0);
    let contrast_sup = contrast
        .map(|c| {
            l_values
                .iter()
                .map(|&l| {
                    let x0 = [l, -k[0] * l / k[1]];
                    Ok(run_until_settled(c, &x0, 1, &RunOptions::default())?.metrics.sup[1])
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(GrowthReport { rows, slope, expected_slope, matches_formula, matches_magnitude, contrast_sup })
}

// the control varies on a time scale of about 1 / |u̇|
fn initial_rate_by_differences(cl: &ClosedLoop, x0: &[f64], rate: f64) -> Result<f64> {
    Ok(fd_control_derivatives(cl, x0, 1, 1e-2 / (1.0 + rate.abs()), 6)?[0][1])
}

/// `U, U', …, U⁽ᴷ⁾` of the normal-form law along `ẏ = Jy + b̂κ(y)`, built
/// without jets: each summand is `Q_i · drive_i · g(f_i)` with
/// `g(s) = s^{−1/2}` and `f_i = 1 + Σ_{m≥i} ‖y_m‖²`, differentiated by
/// Leibniz and Faà di Bruno, while the state derivatives follow from
/// `y⁽ᵏ⁺¹⁾ = J y⁽ᵏ⁾ + b̂ U⁽ᵏ⁾`.
pub fn fdb_control_derivatives(
    y: &[f64],
    j: &DMatrix<f64>,
    bhat: &DVector<f64>,
    gains: &GainSchedule,
    layout: &[BlockKind],
    order: usize,
) -> Result<Vec<f64>> {
    let n = layout_dim(layout);
    if y.len() != n || j.shape() != (n, n) || bhat.len() != n || gains.mu() != layout.len() {
        return Err(Error::DimensionMismatch("normal-form data do not match the layout".into()));
    }
    let offsets = block_offsets(layout);
    let q = gains.q_table();
    // ys[k] = y⁽ᵏ⁾
    let mut ys: Vec<DVector<f64>> = vec![DVector::from_column_slice(y)];
    let mut u = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let mut uk = 0.0;
        for (i, kind) in layout.iter().enumerate() {
            let (r, drive) = match kind {
                BlockKind::Oscillator { .. } => (offsets[i], offsets[i] + 1),
                BlockKind::Integrator => (offsets[i], offsets[i]),
            };
            // f_i⁽ᵐ⁾ for m = 0..=k
            let f: Vec<f64> = (0..=k)
                .map(|m| {
                    let mut s = if m == 0 { 1.0 } else { 0.0 };
                    for c in r..n {
                        for l in 0..=m {
                            s += crate::jet::binomial(m, l) as f64 * ys[l][c] * ys[m - l][c];
                        }
                    }
                    s
                })
                .collect();
            // (g ∘ f_i)⁽ᵐ⁾ for m = 0..=k
            let mut gf = vec![crate::jet::g_derivative(0, f[0])];
            if k > 0 {
                let rho: Vec<f64> = (1..=k).map(|a| crate::jet::g_derivative(a, f[0])).collect();
                gf.extend(crate::jet::faa_di_bruno(&rho, &f[1..])?);
            }
            let term: f64 = (0..=k).map(|l| crate::jet::binomial(k, l) as f64 * ys[l][drive] * gf[k - l]).sum();
            uk -= q[i] * term;
        }
        u.push(uk);
        let next = j * &ys[k] + bhat * uk;
        ys.push(next);
    }
    Ok(u)
}

/// Central-difference estimates of `U⁽ᵏ⁾`, `k = 0..=order`, at `x`, from a
/// uniformly sampled high-accuracy solution through `x` in both time directions.
pub fn fd_control_derivatives(cl: &ClosedLoop, x: &[f64], order: usize, h: f64, accuracy: usize) -> Result<Vec<Vec<f64>>> {
    let half = crate::jet::stencil_half_width(order.max(1), accuracy);
    let reversed = ClosedLoop::new(-cl.a.clone(), -cl.b.clone(), cl.feedback.clone())?;
    let opts = SimOptions { rtol: 1e-13, atol: 1e-16, sampling: crate::sim::Sampling::Grid { dt: h }, ..Default::default() };
    let span = (half as f64 + 0.5) * h;
    let fwd = crate::sim::integrate(cl, &DisturbanceSignal::zero(), x, span, &opts)?;
    let bwd = crate::sim::integrate(&reversed, &DisturbanceSignal::zero(), x, span, &opts)?;
    let m = cl.inputs();
    (0..m)
        .map(|i| {
            let mut u: Vec<f64> = bwd.controls[..=half].iter().rev().map(|c| c[i]).collect();
            u.pop();
            u.extend(fwd.controls[..=half].iter().map(|c| c[i]));
            (0..=order)
                .map(|k| {
                    if k == 0 {
                        return Ok(u[half]);
                    }
                    let nodes: Vec<f64> = (0..u.len()).map(|j| j as f64 - half as f64).collect();
                    let w = &crate::jet::fornberg_weights(0.0, &nodes, k)[k];
                    Ok(w.iter().zip(&u).map(|(wj, uj)| wj * uj).sum::<f64>() / h.powi(k as i32))
                })
                .collect()
        })
        .collect()
}

/// The β-oscillator's Lyapunov constants; `Γ(ω)` gives the disturbance radius `βΓ`.
pub fn oscillator_siss_radius(omega: f64, beta: f64) -> Result<f64> {
    Ok(beta * gamma_constant(omega)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_derivative_paths_agree() {
        let layout = vec![BlockKind::Oscillator { omega: 1.0 }, BlockKind::Integrator];
        let gains = GainSchedule::new(vec![0.5, 0.25]).unwrap();
        let cl = tail_closed_loop(&layout, &gains, 1).unwrap();
        let bhat = cl.b.column(0).into_owned();
        let y = [0.7, -1.2, 0.4];
        let jets = control_derivatives(&y, &cl, 4).unwrap();
        let fdb = fdb_control_derivatives(&y, &cl.a, &bhat, &gains, &layout, 4).unwrap();
        let fd = fd_control_derivatives(&cl, &y, 4, 0.05, 8).unwrap();
        for k in 0..=4 {
            assert!((jets[0][k] - fdb[k]).abs() <= 1e-12 * (1.0 + jets[0][k].abs()), "k={k}");
            assert!((jets[0][k] - fd[0][k]).abs() <= 1e-6, "k={k}: {} vs {}", jets[0][k], fd[0][k]);
        }
    }

    #[test]
    fn battery_is_deterministic_and_bounded() {
        let a = battery(3, 20, 100.0, 5);
        assert_eq!(a, battery(3, 20, 100.0, 5));
        assert_ne!(a, battery(3, 20, 100.0, 6));
        let norms: Vec<f64> = a.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        assert!((norms[0] - 100.0).abs() < 1e-9);
        assert!(norms.iter().all(|&r| r <= 100.0 + 1e-9 && r >= 0.01 - 1e-12));
    }

    #[test]
    fn zero_feedback_certifies_anything() {
        let bounds = BoundSpec::uniform(2, 1e-9).unwrap();
        let r = tune_canonical(&[], &bounds, &[vec![]], &TuningOptions::default()).unwrap();
        assert_eq!(r.certified, Some(bounds));
        let c = certify(&[], &BoundSpec::uniform(1, 0.1).unwrap());
        assert!(c.pass);
    }

    #[test]
    fn scalar_law_exceeds_small_amplitude_bound() {
        let cl = tail_closed_loop(&[BlockKind::Integrator], &GainSchedule::new(vec![0.5]).unwrap(), 1).unwrap();
        let rep = verify_battery(&cl, &BoundSpec::new(vec![0.4]).unwrap(), &[vec![1000.0]], &RunOptions::default()).unwrap();
        assert!(!rep.certificate.pass);
        assert_eq!(rep.certificate.violations[0].order, 0);
        assert!(rep.certificate.worst[0] > 0.49);
    }

    #[test]
    fn lyapunov_suite_small_grid() {
        let r = oscillator_lyapunov_suite(&[0.5, 1.0, 2.0], &[0.1, 1.0], 200, 1).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(oscillator_lyapunov(1.0, 0.5, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn lyapunov_value_by_hand() {
        let lp = p_beta(1.0, 0.5).unwrap();
        let want = 2.25 + (lp.sigma_hi + lp.sigma_lo) / 3.0 * (2f64.powf(1.5) - 1.0);
        assert!((oscillator_lyapunov(1.0, 0.5, &[1.0, 0.0]).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn counterexample_rate_has_reversed_sign() {
        let r = counterexample_growth(&[0.0, 1.0, 2.0, 4.0, 8.0], [1.0, 2.0], 2.0, Saturation::Tanh, None).unwrap();
        assert_eq!(r.rows[0].simulated, 0.0);
        for row in &r.rows[1..] {
            assert!((row.simulated - 5.0 * row.l).abs() < 1e-12 * row.l);
            assert!((row.finite_difference - row.simulated).abs() < 1e-6 * row.l);
        }
        assert!(!r.matches_formula);
        assert!(r.matches_magnitude);
        assert!((r.slope - 5.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_tuning_unit_bounds() {
        let layout = [BlockKind::Integrator];
        let bounds = BoundSpec::uniform(1, 1.0).unwrap();
        let pts = battery(1, 8, 100.0, 3);
        let r = tune_canonical(&layout, &bounds, &pts, &TuningOptions::default()).unwrap();
        assert!(r.gains.a[0] > 0.0 && r.gains.a[0] <= 1.0);
        assert!(r.certified.is_some());
        let cl = tail_closed_loop(&layout, &r.gains, 1).unwrap();
        let fresh = verify_battery(&cl, &bounds, &battery(1, 8, 100.0, 99), &RunOptions::default()).unwrap();
        assert!(fresh.pass());
    }
}
