//! Discrete bipartite qudit states.
//!
//! The joint space of idler and signal is ordered row-major: `|j⟩_i|k⟩_s`
//! maps to index `j * d + k`. Every module in the crate relies on this.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector, ONE, ZERO};

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = -1e-10;

/// Rectangular spectral window `|ω − center| < half_width` (relative
/// angular frequency, rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub center: f64,
    pub half_width: f64,
}

impl FrequencyBin {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::NonFinite("bin center"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid("half_width", format!("must be positive, got {half_width}")));
        }
        Ok(Self { center, half_width })
    }

    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }

    /// Plateau value of the unit-norm mode function.
    pub fn amplitude(&self) -> f64 {
        self.width().sqrt().recip()
    }

    pub fn contains(&self, omega: f64) -> bool {
        (omega - self.center).abs() < self.half_width
    }

    /// Mode function value at `omega`.
    pub fn mode(&self, omega: f64) -> f64 {
        if self.contains(omega) {
            self.amplitude()
        } else {
            0.0
        }
    }

    /// The bin reflected through degeneracy (`ω → −ω`).
    pub fn mirrored(&self) -> Self {
        Self {
            center: -self.center,
            half_width: self.half_width,
        }
    }

    /// `∫ f_a(ω) f_b(ω) dω`, computed from the interval overlap.
    pub fn overlap(&self, other: &FrequencyBin) -> f64 {
        let len = (self.upper().min(other.upper()) - self.lower().max(other.lower())).max(0.0);
        len * self.amplitude() * other.amplitude()
    }
}

/// Checks that no two bins share a point of their open intervals.
pub fn validate_bins(bins: &[FrequencyBin]) -> Result<()> {
    for (a, ba) in bins.iter().enumerate() {
        for (b, bb) in bins.iter().enumerate().skip(a + 1) {
            if ba.lower() < bb.upper() && bb.lower() < ba.upper() {
                return Err(Error::OverlappingBins(a, b));
            }
        }
    }
    Ok(())
}

/// `d` equal bins tiling `[start, end]` with a fractional fill factor; the
/// remaining space is split into equal gaps around each bin.
pub fn equal_bins(d: usize, start: f64, end: f64, fill: f64) -> Result<Vec<FrequencyBin>> {
    if d == 0 {
        return Err(invalid("d", "need at least one bin"));
    }
    if !(end > start) {
        return Err(invalid("span", "end must exceed start"));
    }
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(invalid("fill", format!("must be in (0, 1], got {fill}")));
    }
    let slot = (end - start) / d as f64;
    (0..d)
        .map(|j| FrequencyBin::new(start + slot * (j as f64 + 0.5), 0.5 * fill * slot))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    Idler,
    Signal,
}

impl TryFrom<usize> for Subsystem {
    type Error = Error;

    fn try_from(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Subsystem::Idler),
            1 => Ok(Subsystem::Signal),
            _ => Err(invalid("subsystem", format!("index {index} is not 0 (idler) or 1 (signal)"))),
        }
    }
}

/// Pure two-photon state `Σ c_jk |j⟩_i |k⟩_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateJson", into = "StateJson")]
pub struct BipartiteState {
    coefficients: CMatrix,
}

impl BipartiteState {
    /// Wraps a normalized `d × d` coefficient matrix.
    pub fn new(coefficients: CMatrix) -> Result<Self> {
        let d = coefficients.nrows();
        if coefficients.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: coefficients.ncols(),
            });
        }
        if d < 2 {
            return Err(invalid("d", format!("need d >= 2, got {d}")));
        }
        if !linalg::is_finite(&coefficients) {
            return Err(Error::NonFinite("state coefficients"));
        }
        let norm_sq = coefficients.norm_squared();
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm_sq));
        }
        Ok(Self { coefficients })
    }

    /// Rescales to unit norm first.
    pub fn normalized(coefficients: CMatrix) -> Result<Self> {
        let norm = coefficients.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroAmplitude("state has zero norm".into()));
        }
        Self::new(coefficients.unscale(norm))
    }

    /// Diagonal form `Σ c_j |j⟩_i |j⟩_s`, normalized.
    pub fn from_diagonal(c: &[Complex64]) -> Result<Self> {
        Self::normalized(CMatrix::from_diagonal(&CVector::from_column_slice(c)))
    }

    pub fn dim(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn coefficients(&self) -> &CMatrix {
        &self.coefficients
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        self.coefficients.diagonal().iter().copied().collect()
    }

    /// Amplitudes in the row-major joint basis.
    pub fn amplitudes(&self) -> CVector {
        let d = self.dim();
        CVector::from_fn(d * d, |idx, _| self.coefficients[(idx / d, idx % d)])
    }

    pub fn density(&self) -> DensityMatrix {
        let v = self.amplitudes();
        DensityMatrix::from_hermitian_unchecked(self.dim(), linalg::projector(&v))
    }

    /// Reduced state of one photon, `c c†` (idler) or `cᵀ c̄` (signal).
    pub fn reduced(&self, subsystem: Subsystem) -> CMatrix {
        match subsystem {
            Subsystem::Idler => &self.coefficients * self.coefficients.adjoint(),
            Subsystem::Signal => self.coefficients.transpose() * self.coefficients.conjugate(),
        }
    }

    /// Squared Schmidt coefficients, descending.
    pub fn schmidt_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self
            .coefficients
            .singular_values()
            .iter()
            .map(|s| s * s)
            .collect();
        w.sort_by(|a, b| b.total_cmp(a));
        w
    }
}

/// `(1/√d) Σ_j |j⟩_i |j⟩_s`.
pub fn maximally_entangled(d: usize) -> Result<BipartiteState> {
    if d < 2 {
        return Err(invalid("d", format!("need d >= 2, got {d}")));
    }
    BipartiteState::from_diagonal(&vec![ONE; d])
}

/// The partially entangled qubit `(|00⟩ + γ|11⟩)/√(1+γ²)` or qutrit
/// `(|00⟩ + γ|11⟩ + |22⟩)/√(2+γ²)`.
pub fn gamma_state(d: usize, gamma: f64) -> Result<BipartiteState> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    let g = Complex64::new(gamma, 0.0);
    match d {
        2 => BipartiteState::from_diagonal(&[ONE, g]),
        3 => BipartiteState::from_diagonal(&[ONE, g, ONE]),
        _ => Err(invalid("d", format!("gamma states exist for d = 2, 3 only, got {d}"))),
    }
}

/// Bipartite density operator on the `d²`-dimensional joint space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityJson", into = "DensityJson")]
pub struct DensityMatrix {
    dim: usize,
    elements: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(dim: usize, elements: CMatrix) -> Result<Self> {
        let n = dim * dim;
        if elements.nrows() != n || elements.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: elements.nrows(),
            });
        }
        if !linalg::is_finite(&elements) {
            return Err(Error::NonFinite("density matrix"));
        }
        let herm = linalg::hermiticity_defect(&elements);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("not Hermitian (defect {herm:.3e})")));
        }
        let tr = linalg::trace(&elements);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        let min_eig = linalg::hermitian_eigenvalues(&elements)[0];
        if min_eig < PSD_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { dim, elements })
    }

    /// Symmetrizes and trace-normalizes a PSD matrix before validating it.
    pub fn from_psd(dim: usize, m: CMatrix) -> Result<Self> {
        let sym = (&m + m.adjoint()).scale(0.5);
        let tr = linalg::trace(&sym).re;
        if !(tr > 0.0) {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        Self::new(dim, sym.unscale(tr))
    }

    pub(crate) fn from_hermitian_unchecked(dim: usize, elements: CMatrix) -> Self {
        Self { dim, elements }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let n = dim * dim;
        Self {
            dim,
            elements: CMatrix::identity(n, n).unscale(n as f64),
        }
    }

    /// Local dimension `d` of each photon.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &CMatrix {
        &self.elements
    }

    pub fn into_elements(self) -> CMatrix {
        self.elements
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.elements)
    }

    /// `Tr(ρ²)`
    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ab|² for Hermitian ρ
        self.elements.norm_squared()
    }

    /// `⟨v|ρ|v⟩` for a joint-space vector.
    pub fn expectation(&self, v: &CVector) -> f64 {
        linalg::expectation(&self.elements, v)
    }

    /// Partial trace over the complementary photon.
    pub fn reduced(&self, subsystem: Subsystem) -> CMatrix {
        let d = self.dim;
        let rho = &self.elements;
        match subsystem {
            Subsystem::Idler => CMatrix::from_fn(d, d, |j, jp| {
                (0..d).map(|k| rho[(j * d + k, jp * d + k)]).sum()
            }),
            Subsystem::Signal => CMatrix::from_fn(d, d, |k, kp| {
                (0..d).map(|j| rho[(j * d + k, j * d + kp)]).sum()
            }),
        }
    }

    /// Relabels levels on both photons: level `j` moves to `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.dim;
        if perm.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: perm.len(),
            });
        }
        let mut seen = vec![false; d];
        for &p in perm {
            if p >= d || std::mem::replace(&mut seen[p], true) {
                return Err(invalid("perm", "not a permutation"));
            }
        }
        let map = |idx: usize| perm[idx / d] * d + perm[idx % d];
        let mut out = CMatrix::zeros(d * d, d * d);
        for r in 0..d * d {
            for c in 0..d * d {
                out[(map(r), map(c))] = self.elements[(r, c)];
            }
        }
        Ok(Self {
            dim: d,
            elements: out,
        })
    }
}

/// `λ |ψ⟩⟨ψ| + (1 − λ) 𝟙/d²`
pub fn symmetric_noise(state: &BipartiteState, lambda: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    let d = state.dim();
    let n = d * d;
    let pure = linalg::projector(&state.amplitudes());
    let mixed = CMatrix::identity(n, n).unscale(n as f64);
    Ok(DensityMatrix::from_hermitian_unchecked(
        d,
        pure.scale(lambda) + mixed.scale(1.0 - lambda),
    ))
}

/// Uhlmann fidelity `Tr √(√ρ σ √ρ)` (root convention, 1 for identical states).
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim != sigma.dim {
        return Err(Error::DimensionMismatch {
            expected: rho.dim,
            found: sigma.dim,
        });
    }
    let root = linalg::psd_sqrt(&rho.elements);
    let inner = &root * &sigma.elements * &root;
    let f: f64 = linalg::hermitian_eigenvalues(&inner)
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum();
    Ok(f.clamp(0.0, 1.0))
}

/// Fidelity against a pure target, `√⟨ψ|ρ|ψ⟩`.
pub fn fidelity_pure(rho: &DensityMatrix, target: &BipartiteState) -> Result<f64> {
    if rho.dim != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim,
            found: target.dim(),
        });
    }
    Ok(rho.expectation(&target.amplitudes()).max(0.0).sqrt().min(1.0))
}

/// `Tr(m²)` for an arbitrary Hermitian matrix (e.g. a reduced state).
pub fn purity(m: &CMatrix) -> f64 {
    (m * m).diagonal().iter().map(|z| z.re).sum()
}

#[derive(Serialize, Deserialize)]
struct StateJson {
    dim: usize,
    coefficients: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityJson {
    dim: usize,
    elements: Vec<Vec<[f64; 2]>>,
}

fn to_nested(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn from_nested(rows: &[Vec<[f64; 2]>], n: usize) -> Result<CMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rows.len(),
        });
    }
    Ok(CMatrix::from_fn(n, n, |r, c| {
        Complex64::new(rows[r][c][0], rows[r][c][1])
    }))
}

impl From<BipartiteState> for StateJson {
    fn from(s: BipartiteState) -> Self {
        Self {
            dim: s.dim(),
            coefficients: to_nested(&s.coefficients),
        }
    }
}

impl TryFrom<StateJson> for BipartiteState {
    type Error = Error;

    fn try_from(j: StateJson) -> Result<Self> {
        BipartiteState::new(from_nested(&j.coefficients, j.dim)?)
    }
}

impl From<DensityMatrix> for DensityJson {
    fn from(m: DensityMatrix) -> Self {
        Self {
            dim: m.dim,
            elements: to_nested(&m.elements),
        }
    }
}

impl TryFrom<DensityJson> for DensityMatrix {
    type Error = Error;

    fn try_from(j: DensityJson) -> Result<Self> {
        DensityMatrix::new(j.dim, from_nested(&j.elements, j.dim * j.dim)?)
    }
}

/// Diagonal matrix helper used by tests and the shaper.
pub fn diag(values: &[Complex64]) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_column_slice(values))
}

/// Product state `|a⟩_i |b⟩_s` for basis levels.
pub fn product_basis_state(d: usize, a: usize, b: usize) -> Result<BipartiteState> {
    if a >= d || b >= d {
        return Err(invalid("level", "out of range"));
    }
    let mut c = CMatrix::from_element(d, d, ZERO);
    c[(a, b)] = ONE;
    BipartiteState::new(c)
}
