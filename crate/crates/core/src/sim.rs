//! Adaptive Dormand–Prince 5(4) integration with dense output, disturbance
//! injection, trajectory records and sup-norm metrics.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{control_derivatives, ClosedLoop};
use crate::error::{Error, Result};
use crate::jet::finite_difference_derivatives;

// Butcher tableau and dense-output weights of DOPRI5.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// step-size controller
const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampling {
    /// Uniform grid with spacing `dt` (dense output).
    Grid { dt: f64 },
    /// `per_step` equally spaced points inside every accepted step.
    Steps { per_step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub rtol: f64,
    pub atol: f64,
    #[serde(with = "crate::io::unbounded")]
    pub h_max: f64,
    pub max_steps: usize,
    pub divergence_norm: f64,
    pub sampling: Sampling,
    /// Order of control derivatives recorded at each sample, if any.
    pub jet_order: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            rtol: 1e-8,
            atol: 1e-10,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
            divergence_norm: 1e9,
            sampling: Sampling::Steps { per_step: 1 },
            jet_order: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub rtol: f64,
    pub atol: f64,
}

/// Embedded 5(4) stepper with PI control and dense output.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub t: f64,
    pub y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    fsal: bool,
    facold: f64,
    last_rejected: bool,
    rcont: [Vec<f64>; 5],
    ytmp: Vec<f64>,
    pub stats: IntegratorStats,
    rtol: f64,
    atol: f64,
    h_max: f64,
    max_steps: usize,
}

/// Continuous extension over the last accepted step `[t0, t0 + h]`.
pub struct DenseStep<'a> {
    pub t0: f64,
    pub h: f64,
    rcont: &'a [Vec<f64>; 5],
}

impl DenseStep<'_> {
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rcont[0].len()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

impl Dopri5 {
    pub fn new(t0: f64, y0: Vec<f64>, rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0) || !(atol > 0.0) {
            return Err(Error::NonPositiveParameter { name: "tolerance", value: rtol.min(atol) });
        }
        let n = y0.len();
        let z = || vec![0.0; n];
        Ok(Dopri5 {
            t: t0,
            y: y0,
            h: 0.0,
            k: [z(), z(), z(), z(), z(), z(), z()],
            fsal: false,
            facold: 1e-4,
            last_rejected: false,
            rcont: [z(), z(), z(), z(), z()],
            ytmp: z(),
            stats: IntegratorStats { rtol, atol, ..Default::default() },
            rtol,
            atol,
            h_max: f64::INFINITY,
            max_steps: usize::MAX,
        })
    }

    pub fn with_limits(mut self, h_max: f64, max_steps: usize) -> Self {
        self.h_max = h_max;
        self.max_steps = max_steps;
        self
    }

    /// Forces a fresh derivative evaluation, e.g. after a discontinuity of the field.
    pub fn reset_fsal(&mut self) {
        self.fsal = false;
    }

    fn sk(&self, a: f64, b: f64) -> f64 {
        self.atol + self.rtol * a.abs().max(b.abs())
    }

    fn initial_step<F>(&mut self, f: &mut F, t_end: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..self.y.len() {
            let sk = self.sk(self.y[i], 0.0);
            dnf += (self.k[0][i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let span = t_end - self.t;
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.h_max).min(span);
        for i in 0..self.y.len() {
            self.ytmp[i] = self.y[i] + h * self.k[0][i];
        }
        let mut f1 = vec![0.0; self.y.len()];
        f(self.t + h, &self.ytmp, &mut f1)?;
        self.stats.evaluations += 1;
        let mut der2 = 0.0;
        for i in 0..self.y.len() {
            der2 += ((f1[i] - self.k[0][i]) / self.sk(self.y[i], 0.0)).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        Ok((100.0 * h).min(h1).min(self.h_max).min(span))
    }

    /// Integrates up to `t_end` (the field must be smooth on `[t, t_end]`),
    /// calling `on_step` after each accepted step.
    pub fn advance<F, G>(&mut self, f: &mut F, t_end: f64, mut on_step: G) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
        G: FnMut(&DenseStep<'_>, &[f64]) -> Result<()>,
    {
        let n = self.y.len();
        if !self.fsal {
            let y = self.y.clone();
            f(self.t, &y, &mut self.k[0])?;
            self.stats.evaluations += 1;
            self.fsal = true;
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(f, t_end)?;
        }
        let expo1 = 0.2 - BETA * 0.75;
        let mut ynew = vec![0.0; n];
        let mut err_vec = vec![0.0; n];
        while self.t < t_end {
            if self.stats.steps + self.stats.rejected >= self.max_steps {
                return Err(Error::NonConvergent(format!("step budget exhausted at t = {}", self.t)));
            }
            let remaining = t_end - self.t;
            let mut h = self.h.min(self.h_max);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let ytmp = &mut self.ytmp;
            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, ytmp, k2)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, ytmp, k3)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, ytmp, k4)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, ytmp, k5)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let tph = if last { t_end } else { t + h };
            f(tph, ytmp, k6)?;
            for i in 0..n {
                ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(tph, &ynew, k7)?;
            self.stats.evaluations += 6;
            let mut err = 0.0;
            for i in 0..n {
                err_vec[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sk = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                err += (err_vec[i] / sk).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            let fac11 = err.powf(expo1);
            if err <= 1.0 {
                let fac = (fac11 / self.facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut hnew = h / fac;
                self.facold = err.max(1e-4);
                if self.last_rejected {
                    hnew = hnew.min(h);
                }
                self.last_rejected = false;
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    self.rcont[0][i] = y[i];
                    self.rcont[1][i] = ydiff;
                    self.rcont[2][i] = bspl;
                    self.rcont[3][i] = ydiff - h * k7[i] - bspl;
                    self.rcont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                std::mem::swap(k1, k7);
                self.y.copy_from_slice(&ynew);
                self.t = tph;
                self.stats.steps += 1;
                // a step shortened to hit t_end keeps the controller's proposal
                if !last || hnew < self.h {
                    self.h = hnew;
                }
                let dense = DenseStep { t0: t, h, rcont: &self.rcont };
                on_step(&dense, &self.y)?;
            } else {
                self.h = h / (1.0 / FAC_MIN).min(fac11 / SAFE);
                self.last_rejected = true;
                self.stats.rejected += 1;
            }
        }
        Ok(())
    }
}

/// Disturbance shapes; amplitudes live in [`DisturbanceSignal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceKind {
    Zero,
    /// Fixed direction, normalized on use.
    Constant { direction: Vec<f64> },
    /// `sin(ω t + φ)` along a fixed direction.
    Sinusoid { frequency: f64, phase: f64, direction: Vec<f64> },
    /// Piecewise constant, values uniform in the ball.
    PiecewiseRandom { interval: f64, seed: u64 },
}

/// Additive disturbance with `‖e(t)‖ ≤ amplitude` for `t ≥ onset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSignal {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub onset: f64,
    #[serde(default)]
    pub pre_onset_amplitude: f64,
}

impl DisturbanceSignal {
    pub fn zero() -> Self {
        DisturbanceSignal { kind: DisturbanceKind::Zero, amplitude: 0.0, onset: 0.0, pre_onset_amplitude: 0.0 }
    }

    pub fn constant(direction: Vec<f64>, amplitude: f64) -> Self {
        DisturbanceSignal { kind: DisturbanceKind::Constant { direction }, amplitude, onset: 0.0, pre_onset_amplitude: 0.0 }
    }

    pub fn sinusoid(direction: Vec<f64>, frequency: f64, amplitude: f64) -> Self {
        DisturbanceSignal {
            kind: DisturbanceKind::Sinusoid { frequency, phase: 0.0, direction },
            amplitude,
            onset: 0.0,
            pre_onset_amplitude: 0.0,
        }
    }

    pub fn piecewise_random(seed: u64, amplitude: f64) -> Self {
        DisturbanceSignal {
            kind: DisturbanceKind::PiecewiseRandom { interval: 0.1, seed },
            amplitude,
            onset: 0.0,
            pre_onset_amplitude: 0.0,
        }
    }

    pub fn with_onset(mut self, onset: f64, pre_onset_amplitude: f64) -> Self {
        self.onset = onset;
        self.pre_onset_amplitude = pre_onset_amplitude;
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DisturbanceKind::Zero) || (self.amplitude == 0.0 && self.pre_onset_amplitude == 0.0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.amplitude < 0.0 || self.pre_onset_amplitude < 0.0 {
            return Err(Error::Config("disturbance amplitudes must be nonnegative".into()));
        }
        match &self.kind {
            DisturbanceKind::Constant { direction } | DisturbanceKind::Sinusoid { direction, .. } => {
                if direction.len() != n || direction.iter().all(|&d| d == 0.0) {
                    return Err(Error::DimensionMismatch(format!(
                        "disturbance direction must be a nonzero {n}-vector"
                    )));
                }
            }
            DisturbanceKind::PiecewiseRandom { interval, .. } if !(*interval > 0.0) => {
                return Err(Error::NonPositiveParameter { name: "interval", value: *interval });
            }
            _ => {}
        }
        Ok(())
    }

    /// First discontinuity strictly after `t`.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        let onset = (self.onset > t && self.pre_onset_amplitude != self.amplitude).then_some(self.onset);
        let piece = match &self.kind {
            DisturbanceKind::PiecewiseRandom { interval, .. } => Some((piece_index(t, *interval) + 1) as f64 * interval),
            _ => None,
        };
        match (onset, piece) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// `e(t)` on the smooth piece that starts at `segment_start`.
    pub fn eval_into(&self, t: f64, segment_start: f64, out: &mut [f64]) {
        let amp = if segment_start >= self.onset { self.amplitude } else { self.pre_onset_amplitude };
        out.iter_mut().for_each(|o| *o = 0.0);
        if amp == 0.0 {
            return;
        }
        match &self.kind {
            DisturbanceKind::Zero => {}
            DisturbanceKind::Constant { direction } => fill_direction(out, direction, amp),
            DisturbanceKind::Sinusoid { frequency, phase, direction } => {
                fill_direction(out, direction, amp * (frequency * t + phase).sin())
            }
            DisturbanceKind::PiecewiseRandom { interval, seed } => {
                let piece = piece_index(segment_start, *interval);
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(piece);
                let mut norm = 0.0;
                for o in out.iter_mut() {
                    *o = rng.sample::<f64, _>(StandardNormal);
                    norm += *o * *o;
                }
                let radius = amp * rng.gen::<f64>().powf(1.0 / out.len() as f64);
                let norm = norm.sqrt();
                out.iter_mut().for_each(|o| *o *= radius / norm);
            }
        }
    }

    /// `e(t)`, taking the piece that contains `t`.
    pub fn eval(&self, t: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.eval_into(t, t, &mut out);
        out
    }
}

/// Index of the piece containing `t`, robust to `t` landing on a breakpoint
/// computed as `k · interval`.
fn piece_index(t: f64, interval: f64) -> u64 {
    let k = (t / interval).floor().max(0.0) as u64;
    if (k + 1) as f64 * interval <= t {
        k + 1
    } else {
        k
    }
}

fn fill_direction(out: &mut [f64], direction: &[f64], scale: f64) {
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    for (o, d) in out.iter_mut().zip(direction) {
        *o = scale * d / norm;
    }
}

/// A closed loop being integrated; can be advanced repeatedly.
pub struct Simulation<'a> {
    pub closed_loop: &'a ClosedLoop,
    pub disturbance: DisturbanceSignal,
    pub options: SimOptions,
    solver: Dopri5,
    next_grid: f64,
    started: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(closed_loop: &'a ClosedLoop, disturbance: DisturbanceSignal, x0: &[f64], options: SimOptions) -> Result<Self> {
        if x0.len() != closed_loop.dim() {
            return Err(Error::DimensionMismatch(format!(
                "initial state of length {} for a system of dimension {}",
                x0.len(),
                closed_loop.dim()
            )));
        }
        disturbance.validate(closed_loop.dim())?;
        if let Sampling::Grid { dt } = options.sampling {
            if !(dt > 0.0) {
                return Err(Error::NonPositiveParameter { name: "dt", value: dt });
            }
        }
        let solver = Dopri5::new(0.0, x0.to_vec(), options.rtol, options.atol)?.with_limits(options.h_max, options.max_steps);
        Ok(Simulation { closed_loop, disturbance, options, solver, next_grid: 0.0, started: false })
    }

    pub fn time(&self) -> f64 {
        self.solver.t
    }

    pub fn state(&self) -> &[f64] {
        &self.solver.y
    }

    pub fn stats(&self) -> IntegratorStats {
        self.solver.stats
    }

    /// Integrates to `t_end`, reporting each sample `(t, x)`.
    pub fn advance<S>(&mut self, t_end: f64, mut on_sample: S) -> Result<()>
    where
        S: FnMut(f64, &[f64]) -> Result<()>,
    {
        if !self.started {
            self.started = true;
            let y0 = self.solver.y.clone();
            on_sample(0.0, &y0)?;
            if let Sampling::Grid { dt } = self.options.sampling {
                self.next_grid = dt;
            }
        }
        let n = self.closed_loop.dim();
        let sampling = self.options.sampling;
        let guard = self.options.divergence_norm;
        let mut xs = vec![0.0; n];
        while self.solver.t < t_end {
            let seg_start = self.solver.t;
            let seg_end = self.disturbance.next_breakpoint(seg_start).map_or(t_end, |b| b.min(t_end));
            let cl = self.closed_loop;
            let dist = &self.disturbance;
            let quiet = dist.is_zero();
            let mut e = vec![0.0; n];
            let mut rhs = |t: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
                if quiet {
                    cl.field_into(x, None, out)
                } else {
                    dist.eval_into(t, seg_start, &mut e);
                    cl.field_into(x, Some(&e), out)
                }
            };
            let next_grid = &mut self.next_grid;
            self.solver.advance(&mut rhs, seg_end, |dense, y1| {
                let norm = y1.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm <= guard) {
                    return Err(Error::Divergence { t: dense.t1(), norm });
                }
                match sampling {
                    Sampling::Steps { per_step } => {
                        for i in 1..per_step.max(1) {
                            let t = dense.t0 + dense.h * i as f64 / per_step as f64;
                            dense.eval_into(t, &mut xs);
                            on_sample(t, &xs)?;
                        }
                        on_sample(dense.t1(), y1)?;
                    }
                    Sampling::Grid { dt } => {
                        let t1 = dense.t1();
                        while *next_grid <= t1 + 1e-12 * t1.abs().max(1.0) {
                            dense.eval_into(*next_grid, &mut xs);
                            on_sample(*next_grid, &xs)?;
                            *next_grid += dt;
                        }
                    }
                }
                Ok(())
            })?;
            if seg_end < t_end {
                self.solver.reset_fsal();
            }
        }
        Ok(())
    }
}

/// Recorded closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// `[sample][input][k]` for `k = 0..=order`.
    pub jets: Option<Vec<Vec<Vec<f64>>>>,
    pub disturbance: DisturbanceSignal,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn jet_order(&self) -> Option<usize> {
        self.jets.as_ref().and_then(|j| j.first()).and_then(|s| s.first()).map(|d| d.len() - 1)
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    /// Columns `t, x1.., u1.., u1_d1..u1_dK, u2_d1..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let order = self.jet_order().unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        for i in 1..=m {
            header.extend((1..=order).map(|k| format!("u{i}_d{k}")));
        }
        let io_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        wr.write_record(&header).map_err(io_err)?;
        for s in 0..self.times.len() {
            let mut row = vec![self.times[s]];
            row.extend(&self.states[s]);
            row.extend(&self.controls[s]);
            if let Some(jets) = &self.jets {
                for d in &jets[s] {
                    row.extend(&d[1..]);
                }
            }
            wr.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io_err)?;
        }
        wr.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a file produced by [`Trajectory::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R, n: usize, m: usize) -> Result<Trajectory> {
        let mut rd = csv::Reader::from_reader(r);
        let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        let width = rd.headers().map_err(err)?.len();
        let order = (width - 1 - n - m) / m.max(1);
        let mut t = Trajectory {
            times: vec![],
            states: vec![],
            controls: vec![],
            jets: (order > 0).then(Vec::new),
            disturbance: DisturbanceSignal::zero(),
            stats: IntegratorStats::default(),
        };
        for rec in rd.records() {
            let rec = rec.map_err(err)?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("csv value {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            t.times.push(v[0]);
            t.states.push(v[1..1 + n].to_vec());
            t.controls.push(v[1 + n..1 + n + m].to_vec());
            if let Some(j) = &mut t.jets {
                let base = 1 + n + m;
                j.push(
                    (0..m)
                        .map(|i| {
                            let mut d = vec![v[1 + n + i]];
                            d.extend(&v[base + i * order..base + (i + 1) * order]);
                            d
                        })
                        .collect(),
                );
            }
        }
        Ok(t)
    }
}

/// Integrates `ẋ = Ax + Bu(x) + e(t)` on `[0, horizon]`.
pub fn integrate(
    closed_loop: &ClosedLoop,
    disturbance: &DisturbanceSignal,
    x0: &[f64],
    horizon: f64,
    options: &SimOptions,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveParameter { name: "horizon", value: horizon });
    }
    let mut sim = Simulation::new(closed_loop, disturbance.clone(), x0, options.clone())?;
    let mut traj = Trajectory {
        times: vec![],
        states: vec![],
        controls: vec![],
        jets: options.jet_order.map(|_| Vec::new()),
        disturbance: disturbance.clone(),
        stats: IntegratorStats::default(),
    };
    let order = options.jet_order;
    sim.advance(horizon, |t, x| {
        traj.times.push(t);
        traj.states.push(x.to_vec());
        match order {
            Some(k) => {
                let d = control_derivatives(x, closed_loop, k)?;
                traj.controls.push(d.iter().map(|di| di[0]).collect());
                traj.jets.as_mut().unwrap().push(d);
            }
            None => traj.controls.push(closed_loop.control(x)?),
        }
        Ok(())
    })?;
    traj.stats = sim.stats();
    Ok(traj)
}

/// Running sup of `|U⁽ʲ⁾|` and the state-norm history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub p: usize,
    /// `[input][j]`.
    pub sup: Vec<Vec<f64>>,
    pub norms: Vec<(f64, f64)>,
}

impl MetricsAccumulator {
    pub fn new(p: usize, inputs: usize) -> Self {
        MetricsAccumulator { p, sup: vec![vec![0.0; p + 1]; inputs], norms: Vec::new() }
    }

    pub fn observe(&mut self, t: f64, x: &[f64], derivs: &[Vec<f64>]) {
        for (s, d) in self.sup.iter_mut().zip(derivs) {
            for (sj, dj) in s.iter_mut().zip(d) {
                *sj = sj.max(dj.abs());
            }
        }
        self.norms.push((t, x.iter().map(|v| v * v).sum::<f64>().sqrt()));
    }

    /// Largest state norm on `[t_end − window, t_end]`.
    pub fn trailing_norm(&self, window: f64) -> f64 {
        let t_end = self.norms.last().map_or(0.0, |n| n.0);
        self.norms
            .iter()
            .rev()
            .take_while(|(t, _)| *t >= t_end - window)
            .map(|n| n.1)
            .fold(0.0, f64::max)
    }

    pub fn finish(&self, window_fraction: f64) -> SupMetrics {
        let t_end = self.norms.last().map_or(0.0, |n| n.0);
        let window = window_fraction * t_end;
        SupMetrics {
            p: self.p,
            sup: (0..=self.p).map(|j| self.sup.iter().map(|s| s[j]).fold(0.0, f64::max)).collect(),
            sup_by_input: self.sup.clone(),
            horizon: t_end,
            window,
            trailing_norm: self.trailing_norm(window),
            final_norm: self.norms.last().map_or(0.0, |n| n.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupMetrics {
    pub p: usize,
    /// `max_t |U⁽ʲ⁾(t)|` over all inputs, `j = 0..=p`.
    pub sup: Vec<f64>,
    pub sup_by_input: Vec<Vec<f64>>,
    pub horizon: f64,
    pub window: f64,
    pub trailing_norm: f64,
    pub final_norm: f64,
}

/// Sup norms of the control derivatives and trailing state norm over the
/// last `window_fraction` of the horizon. Uses recorded jets, falling back to
/// central differences on uniformly sampled runs.
pub fn sup_metrics(traj: &Trajectory, p: usize, window_fraction: f64) -> Result<SupMetrics> {
    let m = traj.controls.first().map_or(0, Vec::len);
    let mut acc = MetricsAccumulator::new(p, m);
    match (&traj.jets, traj.jet_order()) {
        (Some(jets), Some(order)) if order >= p => {
            for s in 0..traj.times.len() {
                acc.observe(traj.times[s], &traj.states[s], &jets[s]);
            }
        }
        _ => {
            if p > 0 && !is_uniform(&traj.times) {
                return Err(Error::MissingJets(p));
            }
            let h = traj.times.get(1).map_or(1.0, |t1| t1 - traj.times[0]);
            let mut derivs = vec![vec![0.0; p + 1]; m];
            for i in 0..m {
                let u: Vec<f64> = traj.controls.iter().map(|c| c[i]).collect();
                for j in 0..=p {
                    let est = finite_difference_derivatives(&u, h, j, 2)?;
                    derivs[i][j] = est.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
                }
            }
            for s in 0..traj.times.len() {
                acc.observe(traj.times[s], &traj.states[s], &[]);
            }
            acc.sup = derivs;
        }
    }
    Ok(acc.finish(window_fraction))
}

fn is_uniform(times: &[f64]) -> bool {
    if times.len() < 3 {
        return true;
    }
    let h = times[1] - times[0];
    times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300) + 1e-12 * w[1].abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::synthesize;
    use crate::feedback::{FeedbackDescriptor, GainSchedule, Saturation};
    use nalgebra::{DMatrix, DVector};

    fn scalar_loop(a1: f64) -> ClosedLoop {
        let g = GainSchedule::new(vec![a1]).unwrap();
        let a = DMatrix::zeros(1, 1);
        let b = DVector::from_vec(vec![1.0]);
        let syn = synthesize(&a, &b, &g, None).unwrap();
        ClosedLoop::single(a, &b, FeedbackDescriptor::CanonicalSingle { gains: g, canonical: syn.canonical }).unwrap()
    }

    // ẋ = ωA₀x with a zero-slope saturated law is a pure rotation
    fn rotation(omega: f64) -> ClosedLoop {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, omega, -omega, 0.0]);
        let fd = FeedbackDescriptor::SaturatedLinear { k: [0.0, 1e-300], saturation: Saturation::Tanh, scale: 1.0 };
        ClosedLoop::single(a, &DVector::from_vec(vec![0.0, 0.0]), fd).unwrap()
    }

    #[test]
    fn scalar_loop_converges() {
        let t = integrate(&scalar_loop(1.0), &DisturbanceSignal::zero(), &[3.0], 30.0, &SimOptions::default()).unwrap();
        assert!(t.final_state()[0].abs() <= 1e-3);
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn equilibrium_stays_put() {
        let t = integrate(&scalar_loop(1.0), &DisturbanceSignal::zero(), &[0.0], 5.0, &SimOptions::default()).unwrap();
        assert!(t.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn rotation_returns_home() {
        let t = integrate(
            &rotation(1.0),
            &DisturbanceSignal::zero(),
            &[1.0, 0.0],
            2.0 * std::f64::consts::PI,
            &SimOptions::default(),
        )
        .unwrap();
        let x = t.final_state();
        assert!((x[0] - 1.0).abs() < 1e-6 && x[1].abs() < 1e-6);
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let opts = SimOptions { sampling: Sampling::Grid { dt: 0.37 }, ..Default::default() };
        let t = integrate(&rotation(2.0), &DisturbanceSignal::zero(), &[1.0, 0.0], 20.0, &opts).unwrap();
        for (ti, x) in t.times.iter().zip(&t.states) {
            assert!((x[0] - (2.0 * ti).cos()).abs() < 1e-7);
            assert!((x[1] + (2.0 * ti).sin()).abs() < 1e-7);
        }
        assert_eq!(t.times.len(), (20.0f64 / 0.37).floor() as usize + 1);
    }

    #[test]
    fn divergence_is_reported() {
        let fd = FeedbackDescriptor::SaturatedLinear { k: [0.0, 1e-300], saturation: Saturation::Tanh, scale: 1.0 };
        let cl = ClosedLoop::single(DMatrix::identity(2, 2), &DVector::zeros(2), fd).unwrap();
        let r = integrate(&cl, &DisturbanceSignal::zero(), &[1.0, 0.0], 100.0, &SimOptions::default());
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn disturbance_respects_bounds() {
        let d = DisturbanceSignal::piecewise_random(7, 0.3).with_onset(2.0, 5.0);
        for i in 0..200 {
            let t = i as f64 * 0.05;
            let start = (t / 0.1).floor() * 0.1;
            let mut e = vec![0.0; 3];
            d.eval_into(t, start, &mut e);
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cap = if start >= 2.0 { 0.3 } else { 5.0 };
            assert!(norm <= cap + 1e-15);
        }
        assert_eq!(d.next_breakpoint(0.05).unwrap(), 0.1);
        let s = DisturbanceSignal::sinusoid(vec![1.0], 3.0, 0.5).with_onset(4.0, 1.0);
        assert_eq!(s.next_breakpoint(0.0), Some(4.0));
        assert_eq!(s.next_breakpoint(4.0), None);
    }

    #[test]
    fn breakpoints_always_advance() {
        let d = DisturbanceSignal::piecewise_random(3, 0.1);
        let mut t = 0.0;
        for _ in 0..5000 {
            let next = d.next_breakpoint(t).unwrap();
            assert!(next > t);
            t = next;
        }
        assert!((t - 500.0).abs() < 1e-9);
        let cl = scalar_loop(1.0);
        let mut sim = Simulation::new(&cl, d, &[5.0], SimOptions::default()).unwrap();
        sim.advance(50.0, |_, _| Ok(())).unwrap();
        assert_eq!(sim.time(), 50.0);
    }

    #[test]
    fn sup_metrics_of_zero_run() {
        let opts = SimOptions { jet_order: Some(2), ..Default::default() };
        let t = integrate(&scalar_loop(0.5), &DisturbanceSignal::zero(), &[0.0], 5.0, &opts).unwrap();
        let m = sup_metrics(&t, 2, 0.2).unwrap();
        assert_eq!(m.sup, vec![0.0; 3]);
    }

    #[test]
    fn scalar_sup_below_static_bound() {
        let opts = SimOptions { jet_order: Some(1), ..Default::default() };
        let t = integrate(&scalar_loop(0.5), &DisturbanceSignal::zero(), &[100.0], 60.0, &opts).unwrap();
        let m = sup_metrics(&t, 1, 0.2).unwrap();
        assert!(m.sup[0] <= 0.5 && m.sup[0] > 0.49);
    }

    #[test]
    fn missing_jets_reported() {
        let t = integrate(&scalar_loop(0.5), &DisturbanceSignal::zero(), &[1.0], 5.0, &SimOptions::default()).unwrap();
        assert_eq!(sup_metrics(&t, 1, 0.2), Err(Error::MissingJets(1)));
    }

    #[test]
    fn csv_round_trip() {
        let opts = SimOptions { jet_order: Some(2), sampling: Sampling::Grid { dt: 0.5 }, ..Default::default() };
        let t = integrate(&scalar_loop(0.5), &DisturbanceSignal::zero(), &[2.0], 3.0, &opts).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(buf.as_slice(), 1, 1).unwrap();
        assert_eq!(back.times, t.times);
        assert_eq!(back.states, t.states);
        assert_eq!(back.jets, t.jets);
    }
}
