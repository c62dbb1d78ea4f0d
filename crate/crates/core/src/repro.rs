//! The acceptance experiments, each runnable on its own, with a pass/fail
//! matrix for the whole set.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::canonical::{decompose_stabilizable, synthesize, BlockKind};
use crate::closed_loop::{control_derivatives, ClosedLoop};
use crate::error::Result;
use crate::feedback::{BoundSpec, GainSchedule, Saturation};
use crate::jet::{bell_polynomial, g_derivative_coeff};
use crate::scenario::{integrator_chain, mixed_4d, oscillator, two_block_reduced};
use crate::sim::{integrate, DisturbanceSignal, Sampling, SimOptions};
use crate::spectral::{a_beta, characteristic_polynomial, gamma_constant, p_beta, spectral_profile};
use crate::verify::{
    battery, counterexample_growth, disturbance_families, fd_control_derivatives, fdb_control_derivatives,
    integrator_loop, linearization_abscissa, original_feedback, siss_l_test, tail_closed_loop, tune_gains,
    tune_multi_input, verify_battery, RunOptions, SissTestSpec, TuningOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriterionInfo {
    pub id: usize,
    pub name: &'static str,
    /// Runtime budget in seconds.
    pub budget: f64,
}

pub const CRITERIA: [CriterionInfo; 10] = [
    CriterionInfo { id: 1, name: "oscillator Lyapunov identity", budget: 1.0 },
    CriterionInfo { id: 2, name: "explicit constants", budget: 1.0 },
    CriterionInfo { id: 3, name: "saturated-linear counterexample", budget: 10.0 },
    CriterionInfo { id: 4, name: "normal form residuals", budget: 5.0 },
    CriterionInfo { id: 5, name: "derivative engine cross-validation", budget: 30.0 },
    CriterionInfo { id: 6, name: "p-bounded certification", budget: 300.0 },
    CriterionInfo { id: 7, name: "attractivity by T = 200", budget: 300.0 },
    CriterionInfo { id: 8, name: "scalar small-input small-state", budget: 60.0 },
    CriterionInfo { id: 9, name: "two-input cascade", budget: 300.0 },
    CriterionInfo { id: 10, name: "Bell numbers", budget: 1.0 },
];

/// A criterion whose literal check is known to fail, together with the
/// weaker statement that was verified in its place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub description: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub runtime: f64,
    pub budget: f64,
    pub deviation: Option<Deviation>,
}

impl CriterionOutcome {
    pub fn within_budget(&self) -> bool {
        self.runtime < self.budget
    }

    /// Passed, or failed literally with its replacement statement confirmed.
    pub fn acceptable(&self) -> bool {
        self.within_budget() && (self.pass || self.deviation.as_ref().is_some_and(|d| d.holds))
    }

    /// One line of the pass/fail matrix.
    pub fn line(&self) -> String {
        let verdict = if self.pass && self.within_budget() { "PASS" } else { "FAIL" };
        let mut s = format!(
            "[{verdict}] {:>2} {:<36} {:>8.3}s / {:>5.0}s  {}",
            self.id, self.name, self.runtime, self.budget, self.detail
        );
        if let Some(d) = &self.deviation {
            s.push_str(&format!("  | deviation {}: {}", if d.holds { "confirmed" } else { "NOT confirmed" }, d.description));
        }
        s
    }
}

struct Check {
    pass: bool,
    detail: String,
    deviation: Option<Deviation>,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail, deviation: None }
}

fn timed(id: usize, f: impl FnOnce() -> Result<Check>) -> CriterionOutcome {
    let info = CRITERIA[id - 1];
    let start = Instant::now();
    let result = f();
    let runtime = start.elapsed().as_secs_f64();
    let (pass, detail, deviation) = match result {
        Ok(c) => (c.pass, c.detail, c.deviation),
        Err(e) => (false, format!("error: {e}"), None),
    };
    CriterionOutcome { id, name: info.name.to_string(), pass, detail, runtime, budget: info.budget, deviation }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// `‖P_β A_β + A_βᵀ P_β + I‖_F ≤ 1e−12` on the 5 × 3 grid.
pub fn lyapunov_identity() -> CriterionOutcome {
    timed(1, || {
        let mut worst = 0.0f64;
        for omega in [0.25, 0.5, 1.0, 2.0, 5.0] {
            for beta in [0.1, 0.5, 1.0] {
                let lp = p_beta(omega, beta)?;
                let p = Matrix2::new(lp.p[0][0], lp.p[0][1], lp.p[1][0], lp.p[1][1]);
                let a = a_beta(omega, beta);
                worst = worst.max((p * a + a.transpose() * p + Matrix2::identity()).norm());
            }
        }
        Ok(check(worst <= 1e-12, format!("worst residual {worst:.2e} over 15 grid points")))
    })
}

/// Oracle for `P_β`: the Lyapunov equation as a 3 × 3 linear system in the
/// entries of the symmetric solution.
fn lyapunov_by_elimination(a: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    // unknowns (p11, p12, p22); PA + AᵀP = −I
    let m = nalgebra::Matrix3::new(
        2.0 * a[(0, 0)],
        2.0 * a[(1, 0)],
        0.0,
        a[(0, 1)],
        a[(0, 0)] + a[(1, 1)],
        a[(1, 0)],
        0.0,
        2.0 * a[(0, 1)],
        2.0 * a[(1, 1)],
    );
    let x = m.lu().solve(&nalgebra::Vector3::new(-1.0, 0.0, -1.0))?;
    Some(Matrix2::new(x[0], x[1], x[1], x[2]))
}

/// `‖P_β b₀‖`, `σ̲_β`, `σ̄_β`, `Γ(ω)` and `d_k` against independent evaluations.
pub fn explicit_constants() -> CriterionOutcome {
    timed(2, || {
        let mut worst = 0.0f64;
        for omega in [0.25, 0.5, 1.0, 2.0, 5.0] {
            for beta in [0.1, 0.5, 1.0] {
                let lp = p_beta(omega, beta)?;
                let p = lyapunov_by_elimination(&a_beta(omega, beta)).expect("A_β is Hurwitz");
                let eig = p.symmetric_eigen().eigenvalues;
                let (lo, hi) = (eig.min(), eig.max());
                let pb0 = (p[(0, 1)].powi(2) + p[(1, 1)].powi(2)).sqrt();
                for (got, want) in [(lp.pb0_norm, pb0), (lp.sigma_lo, lo), (lp.sigma_hi, hi)] {
                    worst = worst.max(rel(got, want));
                }
                for i in 0..2 {
                    for j in 0..2 {
                        worst = worst.max(rel(lp.p[i][j], p[(i, j)]));
                    }
                }
            }
            // Γ = ω² / (2 (1 + 4ω²))
            worst = worst.max(rel(gamma_constant(omega)?, omega * omega / (2.0 * (1.0 + 4.0 * omega * omega))));
        }
        // d_k = (−1)ᵏ (2k − 1)!! / 2ᵏ
        for k in 0..=6u32 {
            let double_factorial: u64 = (1..=k as u64).map(|j| 2 * j - 1).product();
            let want = (-1f64).powi(k as i32) * double_factorial as f64 / 2f64.powi(k as i32);
            worst = worst.max(rel(g_derivative_coeff(k as usize), want));
        }
        Ok(check(worst <= 1e-12, format!("worst relative deviation {worst:.2e}")))
    })
}

/// Certified law on `ω = 2` used as the bounded contrast.
fn tuned_oscillator(omega: f64, bounds: &BoundSpec) -> Result<ClosedLoop> {
    let (a, b) = oscillator(omega)?;
    let d = decompose_stabilizable(&a, &b, None)?;
    let (rep, syn) = tune_gains(&d, bounds, &battery(2, 50, 100.0, 1), &TuningOptions::default())?;
    ClosedLoop::single(a, &b, original_feedback(&syn, &rep.gains))
}

/// `u̇(0)` along `u = −σ(kᵀx)` from `(l, −k₁l/k₂)` against the printed closed form.
pub fn counterexample() -> CriterionOutcome {
    timed(3, || {
        let (omega, k) = (2.0, [1.0, 2.0]);
        let bounds = BoundSpec::uniform(1, 0.5)?;
        let contrast = tuned_oscillator(omega, &bounds)?;
        let rep = counterexample_growth(&[1.0, 2.0, 4.0, 8.0, 16.0], k, omega, Saturation::Tanh, Some(&contrast))?;
        let contrast_sup = rep.contrast_sup.clone().unwrap_or_default();
        let contrast_ok = contrast_sup.iter().all(|&s| s <= bounds.r[1]);
        let fd_ok = rep.rows.iter().all(|r| (r.finite_difference - r.simulated).abs() <= 1e-9 * r.simulated.abs());
        let worst = rep.rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
        let worst_rev = rep.rows.iter().map(|r| r.relative_error_reversed).fold(0.0, f64::max);
        let max_contrast = contrast_sup.iter().copied().fold(0.0, f64::max);
        let detail = format!(
            "rel. error vs printed form {worst:.2e}, vs reversed sign {worst_rev:.2e}; slope {:.6} (expected {:.6}); bounded law sup|U'| {max_contrast:.3e} ≤ {}",
            rep.slope, rep.expected_slope, bounds.r[1]
        );
        Ok(Check {
            pass: rep.matches_formula && contrast_ok && fd_ok,
            detail,
            deviation: Some(Deviation {
                description: "u'(0) = +σ'(0)ωl(k₁²/k₂+k₂): same magnitude and linear growth, opposite sign".into(),
                holds: rep.matches_magnitude && contrast_ok && fd_ok,
            }),
        })
    })
}

/// Monic characteristic polynomial, ascending powers, by the
/// Faddeev–LeVerrier recursion.
fn faddeev_leverrier(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * c[n - k + 1];
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    c
}

/// Residuals and characteristic polynomials of the normal form.
pub fn normal_form_residuals() -> CriterionOutcome {
    timed(4, || {
        let mut systems = vec![];
        for n in 2..=4 {
            systems.push((format!("chain{n}"), integrator_chain(n)?));
        }
        for omega in [1.0, 2.0] {
            systems.push((format!("osc{omega}"), oscillator(omega)?));
        }
        systems.push(("mixed4d".into(), mixed_4d()));
        let (mut worst_res, mut worst_poly) = (0.0f64, 0.0f64);
        for (_, (a, b)) in &systems {
            let mu = spectral_profile(a, None)?.mu;
            for gains in [GainSchedule::unit(mu), GainSchedule::new((1..=mu).map(|i| 0.5f64.powi(i as i32)).collect())?] {
                let syn = synthesize(a, b, &gains, None)?;
                let c = &syn.canonical;
                let t = &c.transform;
                worst_res = worst_res.max((t * a - &c.j * t).norm()).max((t * b - &c.bhat).norm());
                let (pa, pj) = (faddeev_leverrier(a), characteristic_polynomial(&c.j));
                worst_poly = worst_poly.max(pa.iter().zip(&pj).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
            }
        }
        Ok(check(
            worst_res <= 1e-8 && worst_poly <= 1e-8,
            format!("{} systems × 2 schedules: worst residual {worst_res:.2e}, char-poly {worst_poly:.2e}", systems.len()),
        ))
    })
}

/// Jets against Faà di Bruno (1e−10) and finite differences (1e−5), `k ≤ 4`,
/// errors relative to the largest of `|U|, …, |U⁽⁴⁾|` at the point.
pub fn derivative_cross_check() -> CriterionOutcome {
    timed(5, || {
        let layouts = [
            vec![BlockKind::Integrator],
            vec![BlockKind::Integrator, BlockKind::Integrator],
            vec![BlockKind::Oscillator { omega: 1.0 }],
            vec![BlockKind::Oscillator { omega: 1.0 }, BlockKind::Oscillator { omega: 1.0 }],
        ];
        let (mut worst_fdb, mut worst_fd, mut points) = (0.0f64, 0.0f64, 0usize);
        for (s, layout) in layouts.iter().enumerate() {
            let gains = GainSchedule::new((0..layout.len()).map(|i| 0.5f64.powi(i as i32)).collect())?;
            let cl = tail_closed_loop(layout, &gains, 1)?;
            let bhat = cl.b.column(0).into_owned();
            let x0 = battery(cl.dim(), 1, 3.0, 40 + s as u64).remove(0);
            let opts = SimOptions { rtol: 1e-12, atol: 1e-14, sampling: Sampling::Grid { dt: 0.4 }, ..Default::default() };
            let traj = integrate(&cl, &DisturbanceSignal::zero(), &x0, 10.0, &opts)?;
            for y in traj.states.iter().skip(1).take(25) {
                let jets = &control_derivatives(y, &cl, 4)?[0];
                let fdb = fdb_control_derivatives(y, &cl.a, &bhat, &gains, layout, 4)?;
                let fd = &fd_control_derivatives(&cl, y, 4, 0.05, 8)?[0];
                let scale = jets.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                for k in 0..=4 {
                    worst_fdb = worst_fdb.max((jets[k] - fdb[k]).abs() / scale);
                    worst_fd = worst_fd.max((jets[k] - fd[k]).abs() / scale);
                }
                points += 1;
            }
        }
        Ok(check(
            points == 100 && worst_fdb <= 1e-10 && worst_fd <= 1e-5,
            format!("{points} points: jet vs Faà di Bruno {worst_fdb:.2e}, jet vs differences {worst_fd:.2e}"),
        ))
    })
}

/// A tuned test system and its closed loop.
#[derive(Debug, Clone)]
pub struct TunedSystem {
    pub name: &'static str,
    pub gains: GainSchedule,
    pub closed_loop: ClosedLoop,
}

fn test_systems() -> Result<Vec<(&'static str, DMatrix<f64>, DVector<f64>)>> {
    let (sa, sb) = integrator_chain(1)?;
    let (da, db) = integrator_chain(2)?;
    let (oa, ob) = oscillator(1.0)?;
    let (ma, mb) = mixed_4d();
    Ok(vec![("scalar", sa, sb), ("double integrator", da, db), ("oscillator", oa, ob), ("mixed 4d", ma, mb)])
}

pub fn certification_bounds() -> BoundSpec {
    BoundSpec::uniform(2, 0.5).expect("positive bounds")
}

pub const TUNING_SEED: u64 = 1;
pub const VALIDATION_SEED: u64 = 2;

/// Gains tuned on the tuning battery, shared by the certification and
/// attractivity experiments.
pub fn tuned_systems() -> Result<&'static [TunedSystem]> {
    static CELL: OnceLock<std::result::Result<Vec<TunedSystem>, crate::Error>> = OnceLock::new();
    CELL.get_or_init(|| {
        test_systems()?
            .into_iter()
            .map(|(name, a, b)| {
                let d = decompose_stabilizable(&a, &b, None)?;
                let pts = battery(a.nrows(), 50, 100.0, TUNING_SEED);
                let (rep, syn) = tune_gains(&d, &certification_bounds(), &pts, &TuningOptions::default())?;
                let closed_loop = ClosedLoop::single(a, &b, original_feedback(&syn, &rep.gains))?;
                Ok(TunedSystem { name, gains: rep.gains, closed_loop })
            })
            .collect()
    })
    .as_deref()
    .map_err(Clone::clone)
}

/// Tuned schedules pass on an unseen battery with `p = 2`, `R = 0.5`.
pub fn certification() -> CriterionOutcome {
    timed(6, || {
        let bounds = certification_bounds();
        let mut parts = vec![];
        let mut pass = true;
        for sys in tuned_systems()? {
            let pts = battery(sys.closed_loop.dim(), 50, 100.0, VALIDATION_SEED);
            let rep = verify_battery(&sys.closed_loop, &bounds, &pts, &RunOptions::default())?;
            pass &= rep.pass();
            parts.push(format!(
                "{} a={:?} worst {:?} violations {}",
                sys.name,
                sys.gains.a,
                rep.certificate.worst.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>(),
                rep.certificate.violations.len() + rep.unsettled
            ));
        }
        Ok(check(pass, parts.join("; ")))
    })
}

/// Trailing-window norm below `1e−3` by `T = 200` and a Hurwitz linearization.
pub fn attractivity() -> CriterionOutcome {
    timed(7, || {
        let (horizon, window) = (200.0, 0.2 * 200.0);
        let r0 = certification_bounds().r[0];
        let mut parts = vec![];
        let (mut settled_all, mut hurwitz_all, mut infeasible) = (true, true, false);
        for sys in tuned_systems()? {
            let pts = battery(sys.closed_loop.dim(), 50, 100.0, VALIDATION_SEED);
            let abscissa = linearization_abscissa(&sys.closed_loop)?;
            hurwitz_all &= abscissa < -1e-9;
            let mut failing = 0;
            for x0 in &pts {
                let opts = SimOptions { sampling: Sampling::Steps { per_step: 1 }, ..Default::default() };
                let traj = integrate(&sys.closed_loop, &DisturbanceSignal::zero(), x0, horizon, &opts)?;
                let trailing = traj
                    .times
                    .iter()
                    .zip(&traj.states)
                    .filter(|(t, _)| **t >= horizon - window)
                    .map(|(_, x)| x.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                if trailing >= 1e-3 {
                    failing += 1;
                    // with |ẋ| = |U| ≤ R₀ the scalar state cannot reach the window from here
                    if sys.closed_loop.dim() == 1 && x0[0].abs() - r0 * (horizon - window) > 1e-3 {
                        infeasible = true;
                    }
                }
            }
            settled_all &= failing == 0;
            parts.push(format!("{}: {failing}/50 unsettled, max Re λ {abscissa:.3e}", sys.name));
        }
        Ok(Check {
            pass: settled_all && hurwitz_all,
            detail: parts.join("; "),
            deviation: Some(Deviation {
                description: format!(
                    "a scalar start with |x₀| > R₀·{:.0} + 1e−3 cannot enter the window under |U| ≤ R₀ = {r0}; linearizations Hurwitz",
                    horizon - window
                ),
                holds: infeasible && hurwitz_all,
            }),
        })
    })
}

/// `ẋ = −βx / sqrt(1 + x²) + d`, eventual `|x| ≤ (2ε/β) δ`.
pub fn scalar_siss() -> CriterionOutcome {
    timed(8, || {
        let (beta, eps) = (1.0, 1.1);
        let cl = integrator_loop(beta)?;
        let mut worst = 0.0f64;
        let mut pass = true;
        for delta in [0.1, 0.25, 0.4] {
            let spec = SissTestSpec {
                delta,
                n_candidate: 2.0 * eps / beta,
                families: disturbance_families(1, 8),
                // from |x₀| = 100 the state drifts back at speed ≤ 1 − δ
                horizon: 1000.0,
                window_fraction: 0.2,
                initial_conditions: battery(1, 5, 100.0, 8),
                sim: SimOptions::default(),
            };
            let rep = siss_l_test(&cl, &spec)?;
            pass &= rep.pass;
            worst = worst.max(rep.worst_ratio);
        }
        Ok(check(pass, format!("worst eventual |x|/δ = {worst:.4} against {:.2}", 2.0 * eps / beta)))
    })
}

/// Composed two-input law, `p = 1`, `R = (1, 1)`, exponent `p + 1`.
pub fn multi_input() -> CriterionOutcome {
    timed(9, || {
        let rf = two_block_reduced();
        let bounds = BoundSpec::uniform(1, 1.0)?;
        let exponent = (bounds.p + 1) as f64;
        let rep = tune_multi_input(&rf, &bounds, exponent, &battery(rf.dim(), 50, 100.0, TUNING_SEED), &TuningOptions::default())?;
        let system = rf.to_system()?;
        let cl = ClosedLoop::new(system.a, system.b, rep.feedback.clone())?;
        let unseen = verify_battery(&cl, &bounds, &battery(rf.dim(), 50, 100.0, VALIDATION_SEED), &RunOptions::default())?;
        let gains: Vec<_> = rep.block_gains.iter().map(|g| g.a.clone()).collect();
        Ok(check(
            rep.verification.pass() && unseen.pass(),
            format!(
                "block gains {gains:?}; tuning battery worst {:?}; unseen battery worst {:?}, {} violations, {} unsettled",
                rep.verification.certificate.worst,
                unseen.certificate.worst,
                unseen.certificate.violations.len(),
                unseen.unsettled
            ),
        ))
    })
}

/// Set partitions of `{1..k}` counted by block number, by restricted growth strings.
fn stirling_by_enumeration(k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k + 1];
    let mut word = vec![0usize; k];
    loop {
        let blocks = word.iter().max().map_or(0, |m| m + 1);
        counts[blocks] += 1;
        // next restricted growth string
        let mut i = k;
        loop {
            if i <= 1 {
                return counts;
            }
            i -= 1;
            let prefix_max = word[..i].iter().copied().max().unwrap_or(0);
            if word[i] <= prefix_max {
                word[i] += 1;
                word[i + 1..].iter_mut().for_each(|w| *w = 0);
                break;
            }
        }
    }
}

/// `Σ_a B_{k,a}(1, …, 1)` against the Bell numbers and set-partition counts.
pub fn bell_numbers() -> CriterionOutcome {
    timed(10, || {
        let expected = [1u64, 2, 5, 15, 52];
        let mut sums = vec![];
        let mut pass = true;
        for k in 1..=5 {
            let ones = vec![1.0; k];
            let by_enumeration = stirling_by_enumeration(k);
            let mut total = 0.0;
            for a in 1..=k {
                let b = bell_polynomial(k, a, &ones)?;
                pass &= b == by_enumeration[a] as f64;
                total += b;
            }
            pass &= total == expected[k - 1] as f64;
            sums.push(total);
        }
        Ok(check(pass, format!("sums {sums:?}")))
    })
}

/// Runs one criterion by id.
pub fn run_criterion(id: usize) -> Option<CriterionOutcome> {
    Some(match id {
        1 => lyapunov_identity(),
        2 => explicit_constants(),
        3 => counterexample(),
        4 => normal_form_residuals(),
        5 => derivative_cross_check(),
        6 => certification(),
        7 => attractivity(),
        8 => scalar_siss(),
        9 => multi_input(),
        10 => bell_numbers(),
        _ => return None,
    })
}

pub fn reproduce_all() -> Vec<CriterionOutcome> {
    CRITERIA.iter().filter_map(|c| run_criterion(c.id)).collect()
}

/// A schedule of unit gains does not respect a tight amplitude bound.
pub fn sensitivity_demo() -> Result<bool> {
    let (a, b) = integrator_chain(1)?;
    let gains = GainSchedule::unit(1);
    let syn = synthesize(&a, &b, &gains, None)?;
    let cl = ClosedLoop::single(a, &b, original_feedback(&syn, &gains))?;
    let bounds = BoundSpec::new(vec![0.4])?;
    let rep = verify_battery(&cl, &bounds, &battery(1, 50, 100.0, VALIDATION_SEED), &RunOptions::default())?;
    Ok(!rep.pass())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::block_layout;

    #[test]
    fn restricted_growth_strings_count_set_partitions() {
        assert_eq!(stirling_by_enumeration(1), vec![0, 1]);
        assert_eq!(stirling_by_enumeration(4), vec![0, 1, 7, 6, 1]);
    }

    #[test]
    fn elimination_solves_lyapunov() {
        let a = a_beta(2.0, 0.5);
        let p = lyapunov_by_elimination(&a).unwrap();
        assert!((p * a + a.transpose() * p + Matrix2::identity()).norm() < 1e-14);
    }

    #[test]
    fn faddeev_leverrier_matches_roots() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(faddeev_leverrier(&a), vec![-2.0, -5.0, 1.0]);
        let (m, _) = mixed_4d();
        // (s² + 1)²
        assert_eq!(faddeev_leverrier(&m), vec![1.0, 0.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn unknown_criterion() {
        assert!(run_criterion(11).is_none());
        assert_eq!(CRITERIA.iter().map(|c| c.id).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn tuning_unit_gain_is_too_aggressive() {
        assert!(sensitivity_demo().unwrap());
    }

    #[test]
    fn layout_of_the_mixed_case() {
        let (a, _) = mixed_4d();
        let layout = block_layout(&spectral_profile(&a, None).unwrap());
        assert_eq!(layout.len(), 2);
        assert!(layout.iter().all(|b| matches!(b, BlockKind::Oscillator { omega } if (omega - 1.0).abs() < 1e-6)));
    }
}
