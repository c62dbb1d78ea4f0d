//! Small dense linear algebra: eigenvalue classification, controllability
//! tests and the closed-form 2×2 oscillator Lyapunov solution.

use nalgebra::{Complex, DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Rank threshold relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-10;

/// `A₀`, the generator of planar rotations.
pub fn a0() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// `b₀ = (0, 1)ᵀ` as a dense column.
pub fn b0() -> DVector<f64> {
    DVector::from_vec(vec![0.0, 1.0])
}

/// Plant `ẋ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    #[serde(with = "io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "io::matrix_rows")]
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let sys = LinearSystem { a, b };
        sys.validate()?;
        Ok(sys)
    }

    /// Single-input system from a matrix and a column.
    pub fn single_input(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = b.len();
        Self::new(a, DMatrix::from_column_slice(n, 1, b.as_slice()))
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.a.shape();
        if r == 0 || r != c {
            return Err(Error::DimensionMismatch(format!("A must be square and non-empty, got {r}×{c}")));
        }
        if self.b.nrows() != r || self.b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {r}×m with m ≥ 1, got {}×{}",
                self.b.nrows(),
                self.b.ncols()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// First input column; the single-input synthesis works on this.
    pub fn input_column(&self) -> DVector<f64> {
        self.b.column(0).into_owned()
    }
}

/// Counts of critical eigenvalues: `s` nonzero imaginary pairs, `z` zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub s: usize,
    pub z: usize,
    pub mu: usize,
    /// Positive frequencies of the imaginary pairs, with multiplicity, descending.
    pub omegas: Vec<f64>,
    /// Number of eigenvalues with real part below `-tol`.
    pub hurwitz: usize,
    pub tol: f64,
}

impl SpectralProfile {
    /// Profile of a system with only critical modes, built directly.
    pub fn from_parts(mut omegas: Vec<f64>, z: usize) -> Self {
        omegas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let s = omegas.len();
        SpectralProfile { s, z, mu: s + z, omegas, hurwitz: 0, tol: 0.0 }
    }

    /// Dimension of the critical part, `2s + z`.
    pub fn critical_dim(&self) -> usize {
        2 * self.s + self.z
    }
}

/// Default classification tolerance, `1e-9·max(‖A‖_F, 1)`.
pub fn default_tolerance(a: &DMatrix<f64>) -> f64 {
    1e-9 * a.norm().max(1.0)
}

/// All eigenvalues from the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().schur().complex_eigenvalues().iter().copied().collect()
}

/// A group of computed eigenvalues that perturb one exact eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenCluster {
    pub centroid: Complex<f64>,
    pub members: Vec<Complex<f64>>,
}

// A defective eigenvalue of multiplicity m is perturbed by roughly eps^(1/m);
// the merge radius scales the same way.
fn cluster_radius(m: usize, scale: f64, tol: f64) -> f64 {
    (scale * 1e-11f64.powf(1.0 / m.max(1) as f64)).max(tol)
}

fn link_components(points: &[Complex<f64>], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (points[i] - points[j]).norm() <= radius {
                let (ri, rj) = (find(&mut label, i), find(&mut label, j));
                if ri != rj {
                    label[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut label, i);
        match root_of[r] {
            Some(g) => groups[g].push(i),
            None => {
                root_of[r] = Some(groups.len());
                groups.push(vec![i]);
            }
        }
    }
    groups
}

fn split_recursive(points: Vec<Complex<f64>>, scale: f64, tol: f64, out: &mut Vec<EigenCluster>) {
    let groups = link_components(&points, cluster_radius(points.len(), scale, tol));
    if groups.len() == 1 {
        let m = points.len() as f64;
        let centroid = points.iter().sum::<Complex<f64>>() / m;
        out.push(EigenCluster { centroid, members: points });
        return;
    }
    for g in groups {
        split_recursive(g.iter().map(|&i| points[i]).collect(), scale, tol, out);
    }
}

/// Groups eigenvalues that are numerically one (possibly defective) eigenvalue.
/// Cluster centroids are well conditioned even when the members are not.
pub fn cluster_eigenvalues(eigs: &[Complex<f64>], scale: f64, tol: f64) -> Vec<EigenCluster> {
    let mut out = Vec::new();
    if !eigs.is_empty() {
        split_recursive(eigs.to_vec(), scale.max(1.0), tol, &mut out);
    }
    out
}

/// Classifies the spectrum of `a` into zero, imaginary-pair and Hurwitz parts.
pub fn spectral_profile(a: &DMatrix<f64>, tol: Option<f64>) -> Result<SpectralProfile> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("A must be square".into()));
    }
    let tol = tol.unwrap_or_else(|| default_tolerance(a));
    if !(tol > 0.0) {
        return Err(Error::NonPositiveParameter { name: "tol", value: tol });
    }
    let clusters = cluster_eigenvalues(&eigenvalues(a), a.norm(), tol);
    let (mut z, mut hurwitz) = (0, 0);
    let mut omegas = Vec::new();
    for c in &clusters {
        let m = c.members.len();
        let (re, im) = (c.centroid.re, c.centroid.im);
        if re > tol {
            return Err(Error::PositiveRealPartEigenvalue { re, im });
        } else if re < -tol {
            hurwitz += m;
        } else if im.abs() <= tol {
            z += m;
        } else if im > 0.0 {
            omegas.extend(std::iter::repeat(im).take(m));
        }
    }
    omegas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let s = omegas.len();
    Ok(SpectralProfile { s, z, mu: s + z, omegas, hurwitz, tol })
}

/// Monic characteristic polynomial, coefficients in ascending powers.
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    poly_from_roots(&eigenvalues(a))
}

pub fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut c = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); c.len() + 1];
        for (k, &ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= r * ck;
        }
        c = next;
    }
    c.into_iter().map(|x| x.re).collect()
}

/// `[b, Ab, …, A^{n-1}b]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut c = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        c.set_column(k, &col);
        col = a * col;
    }
    c
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Number of singular values above `tol·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tol * top).count(),
        _ => 0,
    }
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Kalman rank test.
pub fn is_controllable(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> bool {
    if a.nrows() != b.len() || a.nrows() != a.ncols() {
        return false;
    }
    numerical_rank(&controllability_matrix(a, b), tol) == a.nrows()
}

/// Popov–Belevitch–Hautus test: `rank [A − λI, b] = n` at every eigenvalue.
pub fn pbh_controllable(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> bool {
    let n = a.nrows();
    let clusters = cluster_eigenvalues(&eigenvalues(a), a.norm(), default_tolerance(a));
    clusters.iter().all(|c| {
        let lambda = c.centroid;
        let m = DMatrix::<Complex<f64>>::from_fn(n, n + 1, |i, j| {
            if j < n {
                let d = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                Complex::new(a[(i, j)], 0.0) - d
            } else {
                Complex::new(b[i], 0.0)
            }
        });
        let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let top = sv[0].max(f64::MIN_POSITIVE);
        sv.iter().filter(|&&s| s > tol.max(1e-8) * top).count() == n
    })
}

/// Closed-form solution of `P A_β + A_βᵀ P = −I₂` for `A_β = ωA₀ − β b₀b₀ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPair {
    pub omega: f64,
    pub beta: f64,
    /// Row-major `P_β`.
    pub p: [[f64; 2]; 2],
    /// `‖P_β b₀‖`.
    pub pb0_norm: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl LyapunovPair {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.p[0][0], self.p[0][1], self.p[1][0], self.p[1][1])
    }

    /// `A_β = ωA₀ − β b₀b₀ᵀ`.
    pub fn a_beta(&self) -> Matrix2<f64> {
        a_beta(self.omega, self.beta)
    }

    /// Frobenius norm of `P A_β + A_βᵀ P + I₂`.
    pub fn residual(&self) -> f64 {
        let p = self.matrix();
        let a = self.a_beta();
        (p * a + a.transpose() * p + Matrix2::identity()).norm()
    }
}

pub fn a_beta(omega: f64, beta: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, omega, -omega, -beta)
}

pub fn p_beta(omega: f64, beta: f64) -> Result<LyapunovPair> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveParameter { name: "omega", value: omega });
    }
    if !(beta > 0.0) || beta > 1.0 {
        return Err(Error::NonPositiveParameter { name: "beta", value: beta });
    }
    let off = 1.0 / (2.0 * omega);
    let p = [[beta / (2.0 * omega * omega) + 1.0 / beta, off], [off, 1.0 / beta]];
    let pb0_norm = (1.0 / (4.0 * omega * omega) + 1.0 / (beta * beta)).sqrt();
    let centre = beta * pb0_norm * pb0_norm;
    let half_gap = beta / (2.0 * omega) * pb0_norm;
    Ok(LyapunovPair {
        omega,
        beta,
        p,
        pb0_norm,
        sigma_lo: centre - half_gap,
        sigma_hi: centre + half_gap,
    })
}

/// `Γ(ω) = 1 / (8 (1/(4ω²) + 1))`.
pub fn gamma_constant(omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveParameter { name: "omega", value: omega });
    }
    Ok(1.0 / (8.0 * (1.0 / (4.0 * omega * omega) + 1.0)))
}
