//! Bounded feedback laws: the normal-form law `κ`, its pull-back `ν(x) = κ(Tx)`,
//! the cascade composition for several inputs, and a saturated linear law.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::canonical::{block_offsets, layout_dim, BlockKind, CanonicalForm};
use crate::error::{Error, Result};
use crate::io;
use crate::jet::Scalar;

/// Gains `a_1, …, a_μ ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub a: Vec<f64>,
}

impl GainSchedule {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        for (i, &v) in a.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::NonPositiveGain { index: i + 1, value: v });
            }
        }
        Ok(GainSchedule { a })
    }

    pub fn unit(mu: usize) -> Self {
        GainSchedule { a: vec![1.0; mu] }
    }

    pub fn mu(&self) -> usize {
        self.a.len()
    }

    /// `Q_{i,μ} = ∏_{l=i}^{μ} a_l` for `i = 1..μ`, returned 0-based.
    pub fn q_table(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.a.len()];
        let mut acc = 1.0;
        for i in (0..self.a.len()).rev() {
            acc *= self.a[i];
            q[i] = acc;
        }
        q
    }

    /// `Q_{i,μ}` with 1-based `i`.
    pub fn q(&self, i: usize) -> f64 {
        self.a[i - 1..].iter().product()
    }

    /// Every gain multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        GainSchedule::new(self.a.iter().map(|a| a * factor).collect())
    }
}

/// `a_μ + Σ_{i<μ} a_i Q_{i+1,μ}`, which dominates `|κ|` everywhere.
pub fn static_bound(gains: &GainSchedule) -> f64 {
    gains.q_table().iter().sum()
}

/// Derivative order `p` and bounds `R_0, …, R_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub p: usize,
    pub r: Vec<f64>,
}

impl BoundSpec {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::Config("at least R_0 is required".into()));
        }
        for &v in &r {
            if !(v > 0.0) {
                return Err(Error::NonPositiveParameter { name: "R_j", value: v });
            }
        }
        Ok(BoundSpec { p: r.len() - 1, r })
    }

    pub fn uniform(p: usize, r: f64) -> Result<Self> {
        BoundSpec::new(vec![r; p + 1])
    }

    pub fn r_min(&self) -> f64 {
        self.r.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r.len() != self.p + 1 {
            return Err(Error::Config(format!("p = {} needs {} bounds, got {}", self.p, self.p + 1, self.r.len())));
        }
        BoundSpec::new(self.r.clone()).map(|_| ())
    }
}

/// Summands of `κ`, each `−Q_{i,μ} (b₀ᵀ y_i or y_i) / sqrt(1 + Σ_{m≥i} ‖y_m‖²)`.
pub fn kappa_terms<S: Scalar>(y: &[S], q: &[f64], layout: &[BlockKind]) -> Result<Vec<S>> {
    if y.len() != layout_dim(layout) || q.len() != layout.len() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} for a layout of dimension {} with {} gains",
            y.len(),
            layout_dim(layout),
            q.len()
        )));
    }
    if layout.is_empty() {
        return Ok(Vec::new());
    }
    let offsets = block_offsets(layout);
    let one = y[0].constant_like(1.0);
    let mut tail = one.clone();
    let mut terms = vec![one; layout.len()];
    for i in (0..layout.len()).rev() {
        let r = offsets[i];
        let drive = match layout[i] {
            BlockKind::Oscillator { .. } => {
                tail = tail + y[r].clone() * y[r].clone() + y[r + 1].clone() * y[r + 1].clone();
                y[r + 1].clone()
            }
            BlockKind::Integrator => {
                tail = tail + y[r].clone() * y[r].clone();
                y[r].clone()
            }
        };
        terms[i] = (drive * tail.recip_sqrt()).scale(-q[i]);
    }
    Ok(terms)
}

pub fn kappa_generic<S: Scalar>(y: &[S], q: &[f64], layout: &[BlockKind]) -> Result<Option<S>> {
    Ok(kappa_terms(y, q, layout)?.into_iter().reduce(|a, b| a + b))
}

/// `κ(y)` on normal-form coordinates.
pub fn kappa_eval(y: &DVector<f64>, gains: &GainSchedule, layout: &[BlockKind]) -> Result<f64> {
    if gains.mu() != layout.len() {
        return Err(Error::DimensionMismatch(format!("{} gains for {} blocks", gains.mu(), layout.len())));
    }
    Ok(kappa_generic(y.as_slice(), &gains.q_table(), layout)?.unwrap_or(0.0))
}

/// Bounded odd function used by the saturated linear law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Saturation {
    #[default]
    Tanh,
    /// `(2/π) atan(π s / 2)`, normalized to slope 1 and level 1.
    ArctanNormalized,
}

impl Saturation {
    /// `σ(c s)/c`, which keeps `σ'(0) = 1`.
    pub fn apply<S: Scalar>(&self, s: S, scale: f64) -> S {
        let inner = s.scale(scale);
        let out = match self {
            Saturation::Tanh => inner.tanh(),
            Saturation::ArctanNormalized => inner.scale(std::f64::consts::FRAC_PI_2).atan().scale(std::f64::consts::FRAC_2_PI),
        };
        out.scale(1.0 / scale)
    }

    pub fn slope_at_zero(&self) -> f64 {
        1.0
    }
}

/// `−σ(kᵀx)`.
pub fn saturated_linear_eval(x: &[f64; 2], k: &[f64; 2], sigma: Saturation) -> Result<f64> {
    if k[1] == 0.0 {
        return Err(Error::ZeroK2);
    }
    Ok(-sigma.apply(k[0] * x[0] + k[1] * x[1], 1.0))
}

/// Closed-form `u̇(0)` of the saturated linear law on `ẋ = ωA₀x + b₀u`
/// from `x(0) = (l, −k₁l/k₂)`, as printed: `−σ'(0) ω l (k₁²/k₂ + k₂)`.
pub fn counterexample_initial_derivative(l: f64, k: &[f64; 2], omega: f64, sigma_prime_0: f64) -> Result<f64> {
    if k[1] == 0.0 {
        return Err(Error::ZeroK2);
    }
    Ok(-sigma_prime_0 * omega * l * (k[0] * k[0] / k[1] + k[1]))
}

/// One block of a cascade law: a single-input law on a slice of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFeedback {
    pub offset: usize,
    pub dim: usize,
    pub law: FeedbackDescriptor,
}

/// Serializable description of a static state feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeedbackDescriptor {
    /// `κ(y)` with the state already in normal-form coordinates.
    CanonicalSingle { gains: GainSchedule, canonical: CanonicalForm },
    /// `ν(x) = κ(M x)` with `M` mapping original to normal-form coordinates.
    OriginalSingle {
        gains: GainSchedule,
        canonical: CanonicalForm,
        #[serde(with = "io::matrix_rows")]
        map: DMatrix<f64>,
        state_dim: usize,
    },
    /// `u_i = κ_i(x_i) / (1 + ‖x_{i+1}‖² + … + ‖x_q‖²)^exponent`.
    MultiInput { blocks: Vec<BlockFeedback>, exponent: f64, state_dim: usize },
    /// `u = −σ(kᵀx)` on a planar state.
    SaturatedLinear {
        k: [f64; 2],
        #[serde(default)]
        saturation: Saturation,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl FeedbackDescriptor {
    pub fn state_dim(&self) -> usize {
        match self {
            FeedbackDescriptor::CanonicalSingle { canonical, .. } => canonical.dim(),
            FeedbackDescriptor::OriginalSingle { state_dim, .. } => *state_dim,
            FeedbackDescriptor::MultiInput { state_dim, .. } => *state_dim,
            FeedbackDescriptor::SaturatedLinear { .. } => 2,
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            FeedbackDescriptor::MultiInput { blocks, .. } => blocks.len(),
            _ => 1,
        }
    }

    /// Control vector at state `x`, on any [`Scalar`].
    pub fn control<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "feedback expects a state of length {}, got {}",
                self.state_dim(),
                x.len()
            )));
        }
        let zero = || x.first().map(|v| v.constant_like(0.0));
        match self {
            FeedbackDescriptor::CanonicalSingle { gains, canonical } => {
                let u = kappa_generic(x, &gains.q_table(), &canonical.layout)?;
                Ok(vec![u.or_else(zero).expect("nonempty state")])
            }
            FeedbackDescriptor::OriginalSingle { gains, canonical, map, .. } => {
                let y = mat_apply(map, x);
                let u = kappa_generic(&y, &gains.q_table(), &canonical.layout)?;
                Ok(vec![u.or_else(zero).expect("nonempty state")])
            }
            FeedbackDescriptor::MultiInput { blocks, exponent, .. } => {
                let mut out = Vec::with_capacity(blocks.len());
                let norms: Vec<S> = blocks.iter().map(|b| sq_norm(&x[b.offset..b.offset + b.dim])).collect();
                for (i, b) in blocks.iter().enumerate() {
                    let u = b.law.control(&x[b.offset..b.offset + b.dim])?.remove(0);
                    if i + 1 == blocks.len() {
                        out.push(u);
                        continue;
                    }
                    let den = norms[i + 1..].iter().cloned().fold(x[0].constant_like(1.0), |a, n| a + n);
                    out.push(u * den.powf(-exponent));
                }
                Ok(out)
            }
            FeedbackDescriptor::SaturatedLinear { k, saturation, scale } => {
                if k[1] == 0.0 {
                    return Err(Error::ZeroK2);
                }
                let s = x[0].scale(k[0]) + x[1].scale(k[1]);
                Ok(vec![-saturation.apply(s, *scale)])
            }
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.control(x.as_slice())?))
    }

    /// Upper bound on `|u_i|` valid at every state, where one is known.
    pub fn amplitude_bounds(&self) -> Vec<f64> {
        match self {
            FeedbackDescriptor::CanonicalSingle { gains, .. } | FeedbackDescriptor::OriginalSingle { gains, .. } => {
                vec![static_bound(gains)]
            }
            FeedbackDescriptor::MultiInput { blocks, .. } => {
                blocks.iter().flat_map(|b| b.law.amplitude_bounds()).collect()
            }
            FeedbackDescriptor::SaturatedLinear { saturation, scale, .. } => {
                let level = match saturation {
                    Saturation::Tanh | Saturation::ArctanNormalized => 1.0,
                };
                vec![level / scale]
            }
        }
    }
}

/// `ν(x) = κ(Mx)` for an original-coordinates descriptor.
pub fn nu_eval(x: &DVector<f64>, fd: &FeedbackDescriptor) -> Result<f64> {
    match fd {
        FeedbackDescriptor::OriginalSingle { .. } => Ok(fd.control(x.as_slice())?[0]),
        _ => Err(Error::DimensionMismatch("nu_eval needs an original-coordinates single-input law".into())),
    }
}

/// Cascade composition evaluated from per-block states.
pub fn multi_input_eval(x_blocks: &[DVector<f64>], fds: &[FeedbackDescriptor], exponent: f64) -> Result<DVector<f64>> {
    if x_blocks.len() != fds.len() || fds.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} block states for {} laws", x_blocks.len(), fds.len())));
    }
    let q = fds.len();
    let mut u = DVector::zeros(q);
    for i in 0..q {
        let k = fds[i].control(x_blocks[i].as_slice())?[0];
        let den: f64 = 1.0 + x_blocks[i + 1..].iter().map(|v| v.norm_squared()).sum::<f64>();
        u[i] = if i + 1 == q { k } else { k / den.powf(exponent) };
    }
    Ok(u)
}

pub(crate) fn mat_apply<S: Scalar>(m: &DMatrix<f64>, x: &[S]) -> Vec<S> {
    (0..m.nrows())
        .map(|r| {
            let mut acc = x[0].constant_like(0.0);
            for (c, xc) in x.iter().enumerate() {
                let w = m[(r, c)];
                if w != 0.0 {
                    acc = acc + xc.scale(w);
                }
            }
            acc
        })
        .collect()
}

fn sq_norm<S: Scalar>(x: &[S]) -> S {
    x.iter().fold(x[0].constant_like(0.0), |acc, v| acc + v.clone() * v.clone())
}
