//! Triangular oscillator/integrator normal form and the coordinate changes
//! that lead to it.
//!
//! A controllable single-input pair `(A, b)` whose eigenvalues are all
//! critical is similar to a cascade of `s` planar oscillators `ω_i A₀`
//! followed by `z` scalar integrators. The upper-triangular couplings and
//! the input column are scaled by the coefficients `θ_{i,k}`, which are
//! products of reciprocal gains. Stabilizable pairs are first split into a
//! Hurwitz part and a controllable critical part.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::GainSchedule;
use crate::io;
use crate::spectral::{
    self, cluster_eigenvalues, condition_number, controllability_matrix, eigenvalues,
    is_controllable, singular_values, spectral_profile, SpectralProfile, RANK_TOL,
};

/// Kind of a diagonal block of the normal form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlockKind {
    Oscillator { omega: f64 },
    Integrator,
}

impl BlockKind {
    pub fn dim(&self) -> usize {
        match self {
            BlockKind::Oscillator { .. } => 2,
            BlockKind::Integrator => 1,
        }
    }

    pub fn is_oscillator(&self) -> bool {
        matches!(self, BlockKind::Oscillator { .. })
    }
}

/// Oscillators by descending frequency, then integrators.
pub fn block_layout(profile: &SpectralProfile) -> Vec<BlockKind> {
    let mut omegas = profile.omegas.clone();
    omegas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    omegas
        .into_iter()
        .map(|omega| BlockKind::Oscillator { omega })
        .chain(std::iter::repeat(BlockKind::Integrator).take(profile.z))
        .collect()
}

/// Starting row of each block.
pub fn block_offsets(layout: &[BlockKind]) -> Vec<usize> {
    layout
        .iter()
        .scan(0, |acc, b| {
            let at = *acc;
            *acc += b.dim();
            Some(at)
        })
        .collect()
}

pub fn layout_dim(layout: &[BlockKind]) -> usize {
    layout.iter().map(BlockKind::dim).sum()
}

/// Coupling coefficients `θ_{i,k}`, `1 ≤ i < k ≤ μ+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTable {
    pub mu: usize,
    /// `values[i-1][k-1]`; entries with `k ≤ i` are unused and zero.
    pub values: Vec<Vec<f64>>,
}

impl ThetaTable {
    /// θ with index convention of the normal form (1-based).
    pub fn get(&self, i: usize, k: usize) -> f64 {
        assert!(1 <= i && i < k && k <= self.mu + 1, "θ index out of range: ({i}, {k})");
        self.values[i - 1][k - 1]
    }

    pub fn empty() -> Self {
        ThetaTable { mu: 0, values: Vec::new() }
    }
}

/// Builds the θ table from `a_2, …, a_μ` (so `μ = tail.len() + 1`):
/// `θ_{i,i+1} = 1` and `θ_{i,k} = ∏_{h=i}^{k-2} 1/a_{h+1}`.
pub fn build_theta(tail: &[f64]) -> Result<ThetaTable> {
    for (idx, &a) in tail.iter().enumerate() {
        if !(a > 0.0) {
            return Err(Error::NonPositiveGain { index: idx + 2, value: a });
        }
    }
    let mu = tail.len() + 1;
    // gain(h) = a_h for h in 2..=mu
    let gain = |h: usize| tail[h - 2];
    let mut values = vec![vec![0.0; mu + 1]; mu + 1];
    for i in 1..=mu {
        let mut prod = 1.0;
        values[i - 1][i] = 1.0;
        for k in i + 2..=mu + 1 {
            prod /= gain(k - 1);
            values[i - 1][k - 1] = prod;
        }
    }
    Ok(ThetaTable { mu, values })
}

/// Assembles `(J, b̂)` from the block layout and θ.
pub fn build_target_pair(layout: &[BlockKind], theta: &ThetaTable) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mu = layout.len();
    if theta.mu != mu {
        return Err(Error::DimensionMismatch(format!(
            "θ table built for μ = {} but the layout has {} blocks",
            theta.mu, mu
        )));
    }
    let n = layout_dim(layout);
    let offsets = block_offsets(layout);
    let mut j = DMatrix::zeros(n, n);
    let mut bhat = DVector::zeros(n);
    for (bi, kind) in layout.iter().enumerate() {
        let (i, r) = (bi + 1, offsets[bi]);
        // row receiving the couplings and the input: b₀ for oscillators
        let drive = match *kind {
            BlockKind::Oscillator { omega } => {
                j[(r, r + 1)] = omega;
                j[(r + 1, r)] = -omega;
                r + 1
            }
            BlockKind::Integrator => r,
        };
        for bk in bi + 1..mu {
            let c = offsets[bk];
            // b₀ᵀ y_k picks the second coordinate of an oscillator block
            let col = if layout[bk].is_oscillator() { c + 1 } else { c };
            j[(drive, col)] = theta.get(i, bk + 1);
        }
        bhat[drive] = theta.get(i, mu + 1);
    }
    Ok((j, bhat))
}

/// Solves `T A = J T`, `T b = b̂` through `T = C_(J,b̂) C_(A,b)⁻¹`.
pub fn similarity_transform(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    j: &DMatrix<f64>,
    bhat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.len() != n || j.shape() != (n, n) || bhat.len() != n {
        return Err(Error::DimensionMismatch("similarity_transform operands".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ca = controllability_matrix(a, b);
    let cj = controllability_matrix(j, bhat);
    let sv = singular_values(&ca);
    if sv[n - 1] <= RANK_TOL * sv[0] {
        return Err(Error::NotControllable);
    }
    let cond = sv[0] / sv[n - 1];
    if cond > 1e12 {
        return Err(Error::IllConditioned(format!("controllability matrix condition {cond:.3e}")));
    }
    if !is_controllable(j, bhat, RANK_TOL) {
        return Err(Error::NotControllable);
    }
    // T C_A = C_J  ⇔  C_Aᵀ Tᵀ = C_Jᵀ
    let lu = ca.transpose().lu();
    let tt = lu
        .solve(&cj.transpose())
        .ok_or_else(|| Error::IllConditioned("singular controllability matrix".into()))?;
    Ok(tt.transpose())
}

/// `(‖TA − JT‖_F, ‖Tb − b̂‖)`.
pub fn similarity_residuals(
    t: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    j: &DMatrix<f64>,
    bhat: &DVector<f64>,
) -> (f64, f64) {
    ((t * a - j * t).norm(), (t * b - bhat).norm())
}

/// Split of a stabilizable single-input pair into Hurwitz and critical parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalDecomposition {
    pub profile: SpectralProfile,
    pub n_hurwitz: usize,
    #[serde(with = "io::matrix_rows")]
    pub hurwitz: DMatrix<f64>,
    #[serde(with = "io::matrix_rows")]
    pub critical_a: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub critical_b: DVector<f64>,
    /// `ξ = W x` with `ξ = (ξ_hurwitz, ξ_critical)`.
    #[serde(with = "io::matrix_rows")]
    pub transform: DMatrix<f64>,
}

impl CriticalDecomposition {
    /// Rows of `W` producing the critical coordinates.
    pub fn projection(&self) -> DMatrix<f64> {
        let n = self.transform.nrows();
        self.transform.rows(self.n_hurwitz, n - self.n_hurwitz).into_owned()
    }
}

fn orthonormal_range(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].partial_cmp(&svd.singular_values[x]).unwrap());
    let top = svd.singular_values[idx[0]];
    if rank > 0 && svd.singular_values[idx[rank - 1]] <= 1e-10 * top {
        return Err(Error::IllConditioned("spectral projector lost rank".into()));
    }
    let mut basis = DMatrix::zeros(n, rank);
    for (c, &k) in idx.iter().take(rank).enumerate() {
        let mut col = u.column(k).into_owned();
        let lead = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            col = -col;
        }
        basis.set_column(c, &col);
    }
    Ok(basis)
}

/// Splits `(A, b)` into a Hurwitz block and a controllable critical pair.
pub fn decompose_stabilizable(a: &DMatrix<f64>, b: &DVector<f64>, tol: Option<f64>) -> Result<CriticalDecomposition> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch("decompose_stabilizable operands".into()));
    }
    let profile = spectral_profile(a, tol)?;
    let n_h = profile.hurwitz;
    let n_c = n - n_h;
    if n_h == 0 {
        if !is_controllable(a, b, RANK_TOL) {
            return Err(Error::NotStabilizable);
        }
        return Ok(CriticalDecomposition {
            profile,
            n_hurwitz: 0,
            hurwitz: DMatrix::zeros(0, 0),
            critical_a: a.clone(),
            critical_b: b.clone(),
            transform: DMatrix::identity(n, n),
        });
    }
    let id = DMatrix::<f64>::identity(n, n);
    // p_h(A) annihilates the Hurwitz subspace, p_c(A) the critical one
    let mut p_h = id.clone();
    let clusters = cluster_eigenvalues(&eigenvalues(a), a.norm(), profile.tol);
    for c in clusters.iter().filter(|c| c.centroid.re < -profile.tol) {
        let (re, im) = (c.centroid.re, c.centroid.im);
        let factor = if im.abs() <= profile.tol {
            a - &id * re
        } else if im > 0.0 {
            a * a - a * (2.0 * re) + &id * (re * re + im * im)
        } else {
            continue;
        };
        for _ in 0..c.members.len() {
            p_h = &factor * p_h;
        }
    }
    let mut p_c = id.clone();
    for w in &profile.omegas {
        p_c = (a * a + &id * (w * w)) * p_c;
    }
    for _ in 0..profile.z {
        p_c = a * p_c;
    }
    let v_c = orthonormal_range(&p_h, n_c)?;
    let v_h = orthonormal_range(&p_c, n_h)?;
    let mut v = DMatrix::zeros(n, n);
    v.columns_mut(0, n_h).copy_from(&v_h);
    v.columns_mut(n_h, n_c).copy_from(&v_c);
    if condition_number(&v) > 1e10 {
        return Err(Error::IllConditioned("Hurwitz and critical subspaces nearly parallel".into()));
    }
    let w = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("singular block basis".into()))?;
    let ap = &w * a * &v;
    let bp = &w * b;
    let leak = ap.view((0, n_h), (n_h, n_c)).norm() + ap.view((n_h, 0), (n_c, n_h)).norm();
    if leak > 1e-6 * (1.0 + a.norm()) {
        return Err(Error::IllConditioned(format!("block decoupling residual {leak:.3e}")));
    }
    let critical_a = ap.view((n_h, n_h), (n_c, n_c)).into_owned();
    let critical_b = bp.rows(n_h, n_c).into_owned();
    if n_c > 0 && !is_controllable(&critical_a, &critical_b, RANK_TOL) {
        return Err(Error::NotStabilizable);
    }
    Ok(CriticalDecomposition {
        profile,
        n_hurwitz: n_h,
        hurwitz: ap.view((0, 0), (n_h, n_h)).into_owned(),
        critical_a,
        critical_b,
        transform: w,
    })
}

/// Normal form `(J, b̂)` of the critical pair with its transform `y = T ξ_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalForm {
    #[serde(with = "io::matrix_rows")]
    pub j: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub bhat: DVector<f64>,
    #[serde(with = "io::matrix_rows")]
    pub transform: DMatrix<f64>,
    pub theta: ThetaTable,
    pub layout: Vec<BlockKind>,
    /// `‖TA − JT‖_F` and `‖Tb − b̂‖`.
    pub residuals: (f64, f64),
}

impl CanonicalForm {
    /// Builds the normal form of a critical controllable pair for the given gains.
    pub fn build(a: &DMatrix<f64>, b: &DVector<f64>, profile: &SpectralProfile, gains: &GainSchedule) -> Result<Self> {
        let layout = block_layout(profile);
        if gains.mu() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "gain schedule has {} entries, μ = {}",
                gains.mu(),
                layout.len()
            )));
        }
        if layout.is_empty() {
            return Ok(CanonicalForm {
                j: DMatrix::zeros(0, 0),
                bhat: DVector::zeros(0),
                transform: DMatrix::zeros(0, 0),
                theta: ThetaTable::empty(),
                layout,
                residuals: (0.0, 0.0),
            });
        }
        let theta = build_theta(&gains.a[1..])?;
        let (j, bhat) = build_target_pair(&layout, &theta)?;
        let transform = similarity_transform(a, b, &j, &bhat)?;
        let residuals = similarity_residuals(&transform, a, b, &j, &bhat);
        let scale = 1.0 + a.norm();
        // T carries the θ scaling, so the residual is judged against it too
        let allowed = 1e-8 * scale * (1.0 + transform.norm());
        if residuals.0 > allowed || residuals.1 > allowed {
            return Err(Error::IllConditioned(format!(
                "similarity residuals ({:.3e}, {:.3e}) exceed {allowed:.3e}",
                residuals.0, residuals.1
            )));
        }
        Ok(CanonicalForm { j, bhat, transform, theta, layout, residuals })
    }

    pub fn mu(&self) -> usize {
        self.layout.len()
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }
}

/// Full single-input synthesis: critical split plus normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub decomposition: CriticalDecomposition,
    pub canonical: CanonicalForm,
}

impl Synthesis {
    /// `y = T W_c x`, mapping original coordinates to normal-form ones.
    pub fn coordinate_map(&self) -> DMatrix<f64> {
        if self.canonical.dim() == 0 {
            return DMatrix::zeros(0, self.decomposition.transform.ncols());
        }
        &self.canonical.transform * self.decomposition.projection()
    }
}

pub fn synthesize(a: &DMatrix<f64>, b: &DVector<f64>, gains: &GainSchedule, tol: Option<f64>) -> Result<Synthesis> {
    let decomposition = decompose_stabilizable(a, b, tol)?;
    synthesize_from(decomposition, gains)
}

/// Rebuilds only the gain-dependent part on a cached decomposition.
pub fn synthesize_from(decomposition: CriticalDecomposition, gains: &GainSchedule) -> Result<Synthesis> {
    let canonical = CanonicalForm::build(
        &decomposition.critical_a,
        &decomposition.critical_b,
        &decomposition.profile,
        gains,
    )?;
    Ok(Synthesis { decomposition, canonical })
}

/// Multi-input system in reduced controllability form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedForm {
    pub blocks: Vec<ReducedBlock>,
    #[serde(default)]
    pub coupling: Vec<Coupling>,
    #[serde(default)]
    pub hurwitz_block: Option<HurwitzBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBlock {
    #[serde(with = "io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub b: DVector<f64>,
}

/// `A_ij`, `b_ij` for `i < j` (1-based block indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub row: usize,
    pub col: usize,
    #[serde(with = "io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurwitzBlock {
    #[serde(with = "io::matrix_rows")]
    pub a00: DMatrix<f64>,
    /// `A_0j`, `b_0j` for `j = 1..q`.
    #[serde(default)]
    pub couplings: Vec<HurwitzCoupling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurwitzCoupling {
    pub col: usize,
    #[serde(with = "io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<String>,
}

impl ReducedForm {
    pub fn q(&self) -> usize {
        self.blocks.len()
    }

    pub fn hurwitz_dim(&self) -> usize {
        self.hurwitz_block.as_ref().map_or(0, |h| h.a00.nrows())
    }

    /// Offset of block `i` (1-based; 0 is the Hurwitz block) in the stacked state.
    pub fn offset(&self, i: usize) -> usize {
        self.hurwitz_dim() + self.blocks[..i.saturating_sub(1)].iter().map(|b| b.a.nrows()).sum::<usize>()
    }

    pub fn dim(&self) -> usize {
        self.hurwitz_dim() + self.blocks.iter().map(|b| b.a.nrows()).sum::<usize>()
    }

    /// Stacked `(A, B)` with state `(x₀, x₁, …, x_q)` and inputs `u₁ … u_q`.
    pub fn to_system(&self) -> Result<spectral::LinearSystem> {
        let report = self.check_dimensions();
        if !report.is_empty() {
            return Err(Error::DimensionMismatch(report.join("; ")));
        }
        let n = self.dim();
        let q = self.q();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, q);
        for (k, blk) in self.blocks.iter().enumerate() {
            let o = self.offset(k + 1);
            let d = blk.a.nrows();
            a.view_mut((o, o), (d, d)).copy_from(&blk.a);
            b.view_mut((o, k), (d, 1)).copy_from(&blk.b);
        }
        for c in &self.coupling {
            let (ro, co) = (self.offset(c.row), self.offset(c.col));
            a.view_mut((ro, co), c.a.shape()).copy_from(&c.a);
            b.view_mut((ro, c.col - 1), (c.b.len(), 1)).copy_from(&c.b);
        }
        if let Some(h) = &self.hurwitz_block {
            let d = h.a00.nrows();
            a.view_mut((0, 0), (d, d)).copy_from(&h.a00);
            for c in &h.couplings {
                let co = self.offset(c.col);
                a.view_mut((0, co), c.a.shape()).copy_from(&c.a);
                b.view_mut((0, c.col - 1), (d, 1)).copy_from(&c.b);
            }
        }
        spectral::LinearSystem::new(a, b)
    }

    fn check_dimensions(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.blocks.is_empty() {
            v.push("no input blocks".to_string());
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let (r, c) = blk.a.shape();
            if r == 0 || r != c || blk.b.len() != r {
                v.push(format!("block {}: A is {r}×{c}, b has {} entries", k + 1, blk.b.len()));
            }
        }
        if !v.is_empty() {
            return v;
        }
        let dim = |i: usize| self.blocks[i - 1].a.nrows();
        for c in &self.coupling {
            if c.row == 0 || c.col > self.q() || c.row >= c.col {
                v.push(format!("coupling ({}, {}) is not strictly upper triangular", c.row, c.col));
                continue;
            }
            if c.a.shape() != (dim(c.row), dim(c.col)) || c.b.len() != dim(c.row) {
                v.push(format!("coupling ({}, {}) has wrong shape", c.row, c.col));
            }
        }
        if let Some(h) = &self.hurwitz_block {
            let d = h.a00.nrows();
            if h.a00.ncols() != d {
                v.push("A00 must be square".to_string());
            }
            for c in &h.couplings {
                if c.col == 0 || c.col > self.q() || c.a.shape() != (d, dim(c.col)) || c.b.len() != d {
                    v.push(format!("Hurwitz coupling to block {} has wrong shape", c.col));
                }
            }
        }
        v
    }
}

/// Checks every structural requirement of the reduced form.
pub fn validate_reduced_form(rf: &ReducedForm, tol: Option<f64>) -> ValidationReport {
    let mut violations = rf.check_dimensions();
    if violations.is_empty() {
        for (k, blk) in rf.blocks.iter().enumerate() {
            if !is_controllable(&blk.a, &blk.b, RANK_TOL) {
                violations.push(format!("block {}: (A_ii, b_ii) is not controllable", k + 1));
            }
            match spectral_profile(&blk.a, tol) {
                Ok(p) if p.hurwitz == 0 => {}
                Ok(_) | Err(Error::PositiveRealPartEigenvalue { .. }) => {
                    violations.push(format!("block {}: A_ii has a non-critical eigenvalue", k + 1))
                }
                Err(e) => violations.push(format!("block {}: {e}", k + 1)),
            }
        }
        if let Some(h) = &rf.hurwitz_block {
            let t = tol.unwrap_or_else(|| spectral::default_tolerance(&h.a00));
            if eigenvalues(&h.a00).iter().any(|l| l.re >= -t) {
                violations.push("A00 is not Hurwitz".to_string());
            }
        }
    }
    ValidationReport { valid: violations.is_empty(), violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    #[test]
    fn theta_three_blocks() {
        let t = build_theta(&[0.5, 0.25]).unwrap();
        assert_eq!(t.mu, 3);
        let want = [((1, 2), 1.0), ((1, 3), 2.0), ((1, 4), 8.0), ((2, 3), 1.0), ((2, 4), 4.0), ((3, 4), 1.0)];
        for ((i, k), v) in want {
            assert_abs_diff_eq!(t.get(i, k), v, epsilon = 1e-15);
        }
    }

    #[test]
    fn theta_unit_gains_and_single_factor() {
        let t = build_theta(&[1.0, 1.0, 1.0]).unwrap();
        for i in 1..=4 {
            for k in i + 1..=5 {
                assert_eq!(t.get(i, k), 1.0);
            }
        }
        assert_abs_diff_eq!(build_theta(&[0.1]).unwrap().get(1, 3), 10.0, epsilon = 1e-12);
        assert!(matches!(build_theta(&[0.5, 0.0]), Err(Error::NonPositiveGain { index: 3, .. })));
    }

    #[test]
    fn target_pair_examples() {
        let (j, b) = build_target_pair(&[BlockKind::Integrator], &build_theta(&[]).unwrap()).unwrap();
        assert_eq!(j, DMatrix::zeros(1, 1));
        assert_eq!(b, col(&[1.0]));

        let (j, b) = build_target_pair(&[BlockKind::Oscillator { omega: 2.0 }], &build_theta(&[]).unwrap()).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]));
        assert_eq!(b, col(&[0.0, 1.0]));

        let layout = [BlockKind::Integrator, BlockKind::Integrator];
        let (j, b) = build_target_pair(&layout, &build_theta(&[0.5]).unwrap()).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(b, col(&[2.0, 1.0]));

        assert!(build_target_pair(&layout, &build_theta(&[]).unwrap()).is_err());
    }

    #[test]
    fn identity_similarity() {
        let layout = [BlockKind::Oscillator { omega: 1.0 }, BlockKind::Integrator];
        let (j, b) = build_target_pair(&layout, &build_theta(&[0.5]).unwrap()).unwrap();
        let t = similarity_transform(&j, &b, &j, &b).unwrap();
        assert!((t - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn double_integrator_transform() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = col(&[0.0, 1.0]);
        let layout = [BlockKind::Integrator, BlockKind::Integrator];
        let (j, bh) = build_target_pair(&layout, &build_theta(&[0.5]).unwrap()).unwrap();
        let t = similarity_transform(&a, &b, &j, &bh).unwrap();
        // T = [[1, 2], [0, 1]] solves TA = JT, Tb = (2, 1) by hand
        assert!((&t - DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).norm() < 1e-12);
        let (r1, r2) = similarity_residuals(&t, &a, &b, &j, &bh);
        assert!(r1 < 1e-10 && r2 < 1e-10);
    }

    #[test]
    fn uncontrollable_pair_rejected() {
        let a = DMatrix::identity(2, 2);
        let r = similarity_transform(&a, &col(&[1.0, 0.0]), &a, &col(&[1.0, 0.0]));
        assert_eq!(r, Err(Error::NotControllable));
    }

    #[test]
    fn decompose_examples() {
        let di = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let d = decompose_stabilizable(&di, &col(&[0.0, 1.0]), None).unwrap();
        assert_eq!(d.n_hurwitz, 0);
        assert_eq!(d.transform, DMatrix::identity(2, 2));

        let a = DMatrix::from_diagonal(&col(&[-1.0, 0.0]));
        let d = decompose_stabilizable(&a, &col(&[0.0, 1.0]), None).unwrap();
        assert_eq!(d.n_hurwitz, 1);
        assert_abs_diff_eq!(d.hurwitz[(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.critical_a[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.critical_b[0], 1.0, epsilon = 1e-12);

        assert_eq!(decompose_stabilizable(&a, &col(&[1.0, 0.0]), None), Err(Error::NotStabilizable));

        let bad = DMatrix::from_diagonal(&col(&[1.0, 0.0]));
        assert!(matches!(
            decompose_stabilizable(&bad, &col(&[1.0, 1.0]), None),
            Err(Error::PositiveRealPartEigenvalue { .. })
        ));
    }

    #[test]
    fn reduced_form_validation() {
        let osc = ReducedBlock {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            b: col(&[0.0, 1.0]),
        };
        let single = ReducedForm { blocks: vec![osc.clone()], coupling: vec![], hurwitz_block: None };
        assert!(validate_reduced_form(&single, None).valid);

        let unstable = ReducedForm {
            blocks: vec![ReducedBlock { a: DMatrix::from_element(1, 1, 1.0), b: col(&[1.0]) }],
            coupling: vec![],
            hurwitz_block: None,
        };
        let r = validate_reduced_form(&unstable, None);
        assert!(!r.valid);
        assert!(r.violations[0].contains("non-critical"));

        let int = ReducedBlock { a: DMatrix::zeros(1, 1), b: col(&[1.0]) };
        let chain = ReducedForm {
            blocks: vec![int.clone(), int],
            coupling: vec![Coupling { row: 1, col: 2, a: DMatrix::from_element(1, 1, 1.0), b: col(&[0.0]) }],
            hurwitz_block: None,
        };
        assert!(validate_reduced_form(&chain, None).valid);
        let sys = chain.to_system().unwrap();
        assert_eq!(sys.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(sys.b, DMatrix::identity(2, 2));

        let lower = ReducedForm {
            coupling: vec![Coupling { row: 2, col: 1, a: DMatrix::zeros(1, 1), b: col(&[0.0]) }],
            ..chain
        };
        assert!(!validate_reduced_form(&lower, None).valid);
    }

    #[test]
    fn reduced_form_json_has_named_fields() {
        let rf = ReducedForm {
            blocks: vec![ReducedBlock { a: DMatrix::zeros(1, 1), b: col(&[1.0]) }],
            coupling: vec![],
            hurwitz_block: Some(HurwitzBlock { a00: DMatrix::from_element(1, 1, -1.0), couplings: vec![] }),
        };
        let s = serde_json::to_string(&rf).unwrap();
        assert!(s.contains("\"blocks\"") && s.contains("\"a00\""));
        let back: ReducedForm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rf);
    }
}
