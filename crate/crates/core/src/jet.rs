//! Truncated Taylor arithmetic and the combinatorics of composite derivatives.
//!
//! A [`Jet`] stores normalized Taylor coefficients `c_k = f⁽ᵏ⁾(t)/k!`.
//! Feedback laws are written once against [`Scalar`] and evaluated either on
//! plain `f64` states or on jets, which yields exact time derivatives of the
//! control signal once the state jet is known.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Highest supported jet order; `20!` still fits in a `u64`.
pub const MAX_ORDER: usize = 20;

/// Arithmetic needed by the feedback laws, shared by `f64` and [`Jet`].
pub trait Scalar:
    Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    /// A constant with the same shape (jet order) as `self`.
    fn constant_like(&self, v: f64) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn value(&self) -> f64;
    fn recip(&self) -> Self;
    fn powf(&self, alpha: f64) -> Self;
    fn recip_sqrt(&self) -> Self {
        self.powf(-0.5)
    }
    fn tanh(&self) -> Self;
    fn atan(&self) -> Self;
}

impl Scalar for f64 {
    fn constant_like(&self, v: f64) -> Self {
        v
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
    fn powf(&self, alpha: f64) -> Self {
        f64::powf(*self, alpha)
    }
    fn recip_sqrt(&self) -> Self {
        1.0 / self.sqrt()
    }
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    fn atan(&self) -> Self {
        f64::atan(*self)
    }
}

/// Truncated power series `Σ c_k (τ)^k` around a time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub coeffs: Vec<f64>,
}

impl Jet {
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a jet needs at least one coefficient");
        Jet { coeffs }
    }

    pub fn constant(v: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = v;
        Jet { coeffs }
    }

    /// The independent variable `t₀ + τ`.
    pub fn variable(t0: f64, order: usize) -> Self {
        let mut j = Jet::constant(t0, order);
        if order > 0 {
            j.coeffs[1] = 1.0;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `f⁽ᵏ⁾(t)`; zero above the stored order.
    pub fn derivative(&self, k: usize) -> f64 {
        self.coeffs.get(k).map_or(0.0, |c| c * factorial(k) as f64)
    }

    /// `f(t), f'(t), …, f⁽ᴷ⁾(t)`.
    pub fn derivatives(&self) -> Vec<f64> {
        (0..=self.order()).map(|k| self.derivative(k)).collect()
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(order + 1, 0.0);
        Jet { coeffs }
    }

    /// Taylor polynomial evaluated at offset `tau`.
    pub fn eval(&self, tau: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * tau + c)
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let n = self.coeffs.len().min(other.coeffs.len());
        Jet { coeffs: (0..n).map(|k| f(self.coeffs[k], other.coeffs[k])).collect() }
    }

    fn cauchy(&self, other: &Jet) -> Jet {
        let n = self.coeffs.len().min(other.coeffs.len());
        let coeffs = (0..n)
            .map(|k| (0..=k).map(|j| self.coeffs[j] * other.coeffs[k - j]).sum())
            .collect();
        Jet { coeffs }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        self.zip_with(&rhs, |a, b| a + b)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self.zip_with(&rhs, |a, b| a - b)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.cauchy(&rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Scalar for Jet {
    fn constant_like(&self, v: f64) -> Self {
        Jet::constant(v, self.order())
    }

    fn scale(&self, c: f64) -> Self {
        Jet { coeffs: self.coeffs.iter().map(|x| x * c).collect() }
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn recip(&self) -> Self {
        let v = &self.coeffs;
        let mut w = vec![0.0; v.len()];
        w[0] = 1.0 / v[0];
        for k in 1..v.len() {
            let s: f64 = (1..=k).map(|j| v[j] * w[k - j]).sum();
            w[k] = -s / v[0];
        }
        Jet { coeffs: w }
    }

    fn powf(&self, alpha: f64) -> Self {
        let v = &self.coeffs;
        let mut w = vec![0.0; v.len()];
        w[0] = v[0].powf(alpha);
        for k in 1..v.len() {
            let s: f64 = (1..=k).map(|j| ((alpha + 1.0) * j as f64 - k as f64) * v[j] * w[k - j]).sum();
            w[k] = s / (k as f64 * v[0]);
        }
        Jet { coeffs: w }
    }

    fn tanh(&self) -> Self {
        // w' = (1 − w²) v'
        let v = &self.coeffs;
        let n = v.len();
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        w[0] = v[0].tanh();
        z[0] = 1.0 - w[0] * w[0];
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| j as f64 * v[j] * z[k - j]).sum();
            w[k] = s / k as f64;
            z[k] = -(0..=k).map(|i| w[i] * w[k - i]).sum::<f64>();
        }
        Jet { coeffs: w }
    }

    fn atan(&self) -> Self {
        // w' = v' / (1 + v²)
        let v = &self.coeffs;
        let r = (self.clone() * self.clone()).add(self.constant_like(1.0)).recip();
        let mut w = vec![0.0; v.len()];
        w[0] = v[0].atan();
        for k in 1..v.len() {
            let s: f64 = (1..=k).map(|j| j as f64 * v[j] * r.coeffs[k - j]).sum();
            w[k] = s / k as f64;
        }
        Jet { coeffs: w }
    }
}

pub fn factorial(k: usize) -> u64 {
    assert!(k <= MAX_ORDER, "factorial({k}) overflows u64");
    (1..=k as u64).product()
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k as u64).fold(1u64, |acc, i| acc * (n as u64 - i) / (i + 1))
}

/// `d_k` in `g⁽ᵏ⁾(s) = d_k s^{−1/2−k}` for `g(s) = s^{−1/2}`.
pub fn g_derivative_coeff(k: usize) -> f64 {
    let mag: f64 = (0..k).map(|l| 0.5 + l as f64).product();
    if k % 2 == 0 {
        mag
    } else {
        -mag
    }
}

/// `g⁽ᵏ⁾(s)` for `g(s) = s^{−1/2}`.
pub fn g_derivative(k: usize, s: f64) -> f64 {
    g_derivative_coeff(k) * s.powf(-0.5 - k as f64)
}

/// All tuples `(δ_1, …, δ_{k−a+1})` of nonnegative integers with
/// `Σ δ_l = a` and `Σ l δ_l = k`, with their coefficients
/// `c_δ = k! / (∏ δ_l! · ∏ (l!)^{δ_l})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSet {
    pub k: usize,
    pub a: usize,
    pub tuples: Vec<Vec<u32>>,
    pub coefficients: Vec<u64>,
}

impl PartitionSet {
    pub fn new(k: usize, a: usize) -> Result<Self> {
        check_ka(k, a)?;
        let len = k - a + 1;
        let mut tuples = Vec::new();
        let mut cur = vec![0u32; len];
        enumerate(&mut cur, 0, a, k, &mut tuples);
        let kf = factorial(k) as u128;
        let coefficients = tuples
            .iter()
            .map(|d| {
                let den: u128 = d
                    .iter()
                    .enumerate()
                    .map(|(i, &dl)| factorial(dl as usize) as u128 * (factorial(i + 1) as u128).pow(dl))
                    .product();
                (kf / den) as u64
            })
            .collect();
        Ok(PartitionSet { k, a, tuples, coefficients })
    }
}

fn check_ka(k: usize, a: usize) -> Result<()> {
    if a < 1 || a > k {
        return Err(Error::InvalidOrder(format!("need 1 ≤ a ≤ k, got k = {k}, a = {a}")));
    }
    if k > MAX_ORDER {
        return Err(Error::OrderTooHigh { requested: k, max: MAX_ORDER });
    }
    Ok(())
}

// lexicographic backtracking over positions; `parts` and `weight` are what remains
fn enumerate(cur: &mut Vec<u32>, pos: usize, parts: usize, weight: usize, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() {
        if parts == 0 && weight == 0 {
            out.push(cur.clone());
        }
        return;
    }
    let l = pos + 1;
    for d in 0..=parts.min(weight / l) {
        cur[pos] = d as u32;
        enumerate(cur, pos + 1, parts - d, weight - d * l, out);
    }
    cur[pos] = 0;
}

const CACHED_ORDER: usize = 12;

fn partition_table() -> &'static Vec<Vec<PartitionSet>> {
    static TABLE: OnceLock<Vec<Vec<PartitionSet>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (1..=CACHED_ORDER)
            .map(|k| (1..=k).map(|a| PartitionSet::new(k, a).unwrap()).collect())
            .collect()
    })
}

/// Partition set for `(k, a)`, memoized up to order 12.
pub fn partitions(k: usize, a: usize) -> Result<std::borrow::Cow<'static, PartitionSet>> {
    check_ka(k, a)?;
    if k <= CACHED_ORDER {
        Ok(std::borrow::Cow::Borrowed(&partition_table()[k - 1][a - 1]))
    } else {
        Ok(std::borrow::Cow::Owned(PartitionSet::new(k, a)?))
    }
}

/// Partial Bell polynomial `B_{k,a}(φ⁽¹⁾, …, φ⁽ᵏ⁻ᵃ⁺¹⁾)`.
pub fn bell_polynomial(k: usize, a: usize, phi_derivs: &[f64]) -> Result<f64> {
    check_ka(k, a)?;
    let len = k - a + 1;
    if phi_derivs.len() < len {
        return Err(Error::InvalidOrder(format!(
            "B_{{{k},{a}}} needs {len} derivatives, got {}",
            phi_derivs.len()
        )));
    }
    let set = partitions(k, a)?;
    Ok(set
        .tuples
        .iter()
        .zip(&set.coefficients)
        .map(|(d, &c)| {
            d.iter()
                .enumerate()
                .fold(c as f64, |acc, (i, &dl)| acc * phi_derivs[i].powi(dl as i32))
        })
        .sum())
}

/// `[ρ∘φ]⁽ᵏ⁾` for `k = 1..K`, given `ρ⁽ᵃ⁾(φ(t))` and `φ⁽ˡ⁾(t)` for `a, l = 1..K`.
pub fn faa_di_bruno(rho_derivs: &[f64], phi_derivs: &[f64]) -> Result<Vec<f64>> {
    let order = phi_derivs.len();
    if rho_derivs.len() < order {
        return Err(Error::InvalidOrder(format!(
            "{order} derivatives of the inner function need as many of the outer one, got {}",
            rho_derivs.len()
        )));
    }
    (1..=order)
        .map(|k| {
            (1..=k).try_fold(0.0, |acc, a| Ok(acc + rho_derivs[a - 1] * bell_polynomial(k, a, phi_derivs)?))
        })
        .collect()
}

/// Finite-difference weights for derivatives `0..=m` at `x0` on nodes `xs`.
/// Returns `w[d][j]`.
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Half-width of the central stencil for derivative `k` at accuracy `h^accuracy`.
pub fn stencil_half_width(k: usize, accuracy: usize) -> usize {
    (k + 1) / 2 + accuracy.max(2).div_ceil(2) - 1
}

/// Central finite-difference estimates of the `k`-th derivative of a uniformly
/// sampled signal, at every index where the stencil fits. `accuracy` is the
/// (even) order in `h`; 2 gives the classical stencils.
pub fn finite_difference_derivatives(samples: &[f64], h: f64, k: usize, accuracy: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Ok(samples.iter().copied().enumerate().collect());
    }
    let half = stencil_half_width(k, accuracy);
    let needed = (k + 3).max(2 * half + 1);
    if samples.len() < needed {
        return Err(Error::TooFewSamples { needed, got: samples.len() });
    }
    let nodes: Vec<f64> = (0..=2 * half).map(|j| j as f64 - half as f64).collect();
    let w = &fornberg_weights(0.0, &nodes, k)[k];
    let hk = h.powi(k as i32);
    Ok((half..samples.len() - half)
        .map(|c| {
            let s: f64 = w.iter().enumerate().map(|(j, wj)| wj * samples[c - half + j]).sum();
            (c, s / hk)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn g_coefficients() {
        assert_eq!(g_derivative_coeff(0), 1.0);
        assert_eq!(g_derivative_coeff(1), -0.5);
        assert_eq!(g_derivative_coeff(2), 0.75);
        assert_eq!(g_derivative_coeff(3), -1.875);
        for k in 0..=10 {
            assert_eq!(g_derivative_coeff(k + 1), -(0.5 + k as f64) * g_derivative_coeff(k));
        }
    }

    #[test]
    fn bell_examples() {
        assert_eq!(bell_polynomial(3, 3, &[2.0]).unwrap(), 8.0);
        assert_eq!(bell_polynomial(3, 2, &[2.0, 5.0]).unwrap(), 30.0);
        let (x1, x2, x3) = (1.5, -2.0, 0.5);
        assert_abs_diff_eq!(
            bell_polynomial(4, 2, &[x1, x2, x3]).unwrap(),
            4.0 * x1 * x3 + 3.0 * x2 * x2,
            epsilon = 1e-12
        );
        assert!(matches!(bell_polynomial(2, 3, &[1.0]), Err(Error::InvalidOrder(_))));
        assert!(matches!(bell_polynomial(2, 0, &[1.0]), Err(Error::InvalidOrder(_))));
    }

    #[test]
    fn bell_numbers() {
        let want = [1.0, 2.0, 5.0, 15.0, 52.0, 203.0];
        for (k, w) in (1..=6).zip(want) {
            let ones = vec![1.0; k];
            let total: f64 = (1..=k).map(|a| bell_polynomial(k, a, &ones).unwrap()).sum();
            assert_eq!(total, w);
        }
    }

    #[test]
    fn partition_tuples() {
        let p = PartitionSet::new(4, 2).unwrap();
        assert_eq!(p.tuples, vec![vec![0, 2, 0], vec![1, 0, 1]]);
        assert_eq!(p.coefficients, vec![3, 4]);
    }

    #[test]
    fn faa_di_bruno_examples() {
        let phi = [0.3, -1.2, 2.5, 0.7];
        let id = faa_di_bruno(&[1.0, 0.0, 0.0, 0.0], &phi).unwrap();
        assert_eq!(id, phi.to_vec());
        // ρ(s) = s², φ(t) = t
        let sq = faa_di_bruno(&[2.0, 2.0], &[1.0, 0.0]).unwrap();
        assert_eq!(sq, vec![2.0, 2.0]);
    }

    #[test]
    fn jet_recip_sqrt_identity() {
        let v = Jet::from_coeffs(vec![2.0, 0.5, -0.3, 0.1, 0.05]);
        let r = v.recip_sqrt();
        let one = r.clone() * r * v;
        assert_abs_diff_eq!(one.coeffs[0], 1.0, epsilon = 1e-15);
        for c in &one.coeffs[1..] {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn jet_transcendentals_match_known_series() {
        let t = Jet::variable(0.0, 7);
        let th = t.tanh();
        let want = [0.0, 1.0, 0.0, -1.0 / 3.0, 0.0, 2.0 / 15.0, 0.0, -17.0 / 315.0];
        for (c, w) in th.coeffs.iter().zip(want) {
            assert_abs_diff_eq!(*c, w, epsilon = 1e-15);
        }
        let at = t.atan();
        let want = [0.0, 1.0, 0.0, -1.0 / 3.0, 0.0, 0.2, 0.0, -1.0 / 7.0];
        for (c, w) in at.coeffs.iter().zip(want) {
            assert_abs_diff_eq!(*c, w, epsilon = 1e-15);
        }
        let inv = (t.constant_like(1.0) - t.clone()).recip();
        assert!(inv.coeffs.iter().all(|&c| (c - 1.0).abs() < 1e-15));
    }

    #[test]
    fn jet_derivatives_of_product() {
        // (t²)(t) = t³ at t = 2: 8, 12, 12, 6
        let t = Jet::variable(2.0, 3);
        let cube = t.clone() * t.clone() * t;
        assert_eq!(cube.derivatives(), vec![8.0, 12.0, 12.0, 6.0]);
    }

    #[test]
    fn finite_difference_examples() {
        let h = 0.1;
        let quad: Vec<f64> = (0..7).map(|i| (i as f64 * h).powi(2)).collect();
        for (c, d) in finite_difference_derivatives(&quad, h, 1, 2).unwrap() {
            assert_abs_diff_eq!(d, 2.0 * c as f64 * h, epsilon = 1e-12);
        }
        let h = 1e-3;
        let t0 = 0.7;
        let s: Vec<f64> = (0..5).map(|i| (t0 + (i as f64 - 2.0) * h).sin()).collect();
        let est = finite_difference_derivatives(&s, h, 2, 2).unwrap();
        let (_, d) = est.iter().find(|(c, _)| *c == 2).unwrap();
        assert_abs_diff_eq!(*d, -t0.sin(), epsilon = 1e-6);
        let flat = vec![3.0; 9];
        for k in 1..=4 {
            for (_, d) in finite_difference_derivatives(&flat, 0.01, k, 2).unwrap() {
                assert_abs_diff_eq!(d, 0.0, epsilon = 1e-6);
            }
        }
        assert_eq!(
            finite_difference_derivatives(&[1.0; 4], 0.1, 2, 2),
            Err(Error::TooFewSamples { needed: 5, got: 4 })
        );
    }

    #[test]
    fn classical_stencils() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 4);
        for (a, b) in w[4].iter().zip([1.0, -4.0, 6.0, -4.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_eq!(stencil_half_width(1, 2), 1);
        assert_eq!(stencil_half_width(3, 2), 2);
        assert_eq!(stencil_half_width(4, 8), 5);
    }
}
