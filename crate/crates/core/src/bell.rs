//! CGLMP Bell parameter: Fourier measurement bases, joint probabilities,
//! evaluation from states and from counts, the local bound, γ-scans and the
//! Horodecki optimum for qubits.
//!
//! The idler is party A, the signal is party B. Settings are indexed `0, 1`
//! (the usual `a, b ∈ {1, 2}` shifted down by one).

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::qudit::{gamma_state, symmetric_noise, BipartiteState, DensityMatrix};
use crate::seed;
use crate::shaper::poisson;

/// Phase offsets in units of the basis index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSettings {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl Default for DetectionSettings {
    fn default() -> Self {
        Self {
            alpha: [0.0, 0.5],
            beta: [0.25, -0.25],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

/// `|m⟩_A^a = (1/√d) Σ_j e^{i2πj(m+α_a)/d} |j⟩` and
/// `|n⟩_B^b = (1/√d) Σ_j e^{i2πj(−n+β_b)/d} |j⟩`.
pub fn cglmp_vector(d: usize, party: Party, setting: usize, outcome: usize, settings: &DetectionSettings) -> Result<CVector> {
    if d < 2 {
        return Err(invalid("d", format!("must be >= 2, got {d}")));
    }
    if setting > 1 {
        return Err(invalid("setting", format!("must be 0 or 1, got {setting}")));
    }
    if outcome >= d {
        return Err(invalid("outcome", format!("must be < {d}, got {outcome}")));
    }
    let shift = match party {
        Party::A => outcome as f64 + settings.alpha[setting],
        Party::B => -(outcome as f64) + settings.beta[setting],
    };
    let norm = 1.0 / (d as f64).sqrt();
    Ok(CVector::from_fn(d, |j, _| {
        Complex64::from_polar(norm, 2.0 * PI / d as f64 * j as f64 * shift)
    }))
}

fn check_settings(s: &DetectionSettings) -> Result<()> {
    if s.alpha.iter().chain(&s.beta).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid("settings", "phases must be finite"))
    }
}

/// Normalized `P(A_a = m, B_b = n)` as a `d × d` matrix indexed `(m, n)`.
pub fn joint_probabilities(rho: &DensityMatrix, settings: &DetectionSettings, a: usize, b: usize) -> Result<DMatrix<f64>> {
    check_settings(settings)?;
    let d = rho.dim();
    let va: Vec<CVector> = (0..d).map(|m| cglmp_vector(d, Party::A, a, m, settings)).collect::<Result<_>>()?;
    let vb: Vec<CVector> = (0..d).map(|n| cglmp_vector(d, Party::B, b, n, settings)).collect::<Result<_>>()?;
    let raw = DMatrix::from_fn(d, d, |m, n| rho.expectation(&linalg::kron_vec(&va[m], &vb[n])).max(0.0));
    normalize_table(raw, (a, b))
}

/// Same as [`joint_probabilities`] from amplitudes, `|⟨χ_mn|ψ⟩|²`.
pub fn joint_probabilities_pure(state: &BipartiteState, settings: &DetectionSettings, a: usize, b: usize) -> Result<DMatrix<f64>> {
    check_settings(settings)?;
    let d = state.dim();
    let psi = state.amplitudes();
    let va: Vec<CVector> = (0..d).map(|m| cglmp_vector(d, Party::A, a, m, settings)).collect::<Result<_>>()?;
    let vb: Vec<CVector> = (0..d).map(|n| cglmp_vector(d, Party::B, b, n, settings)).collect::<Result<_>>()?;
    let raw = DMatrix::from_fn(d, d, |m, n| linalg::kron_vec(&va[m], &vb[n]).dotc(&psi).norm_sqr());
    normalize_table(raw, (a, b))
}

fn normalize_table(raw: DMatrix<f64>, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    let total = raw.sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::ZeroTotal(pair));
    }
    Ok(raw / total)
}

/// Normalized probability tables for all four setting pairs, `tables[a][b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BellOutcomeTable {
    pub dim: usize,
    pub tables: [[DMatrix<f64>; 2]; 2],
}

impl BellOutcomeTable {
    pub fn from_density(rho: &DensityMatrix, settings: &DetectionSettings) -> Result<Self> {
        let t = |a, b| joint_probabilities(rho, settings, a, b);
        Ok(Self {
            dim: rho.dim(),
            tables: [[t(0, 0)?, t(0, 1)?], [t(1, 0)?, t(1, 1)?]],
        })
    }

    pub fn from_state(state: &BipartiteState, settings: &DetectionSettings) -> Result<Self> {
        let t = |a, b| joint_probabilities_pure(state, settings, a, b);
        Ok(Self {
            dim: state.dim(),
            tables: [[t(0, 0)?, t(0, 1)?], [t(1, 0)?, t(1, 1)?]],
        })
    }

    /// Normalizes raw count tables, each by its own total.
    pub fn from_counts(counts: &[[DMatrix<f64>; 2]; 2]) -> Result<Self> {
        let d = counts[0][0].nrows();
        for (a, row) in counts.iter().enumerate() {
            for (b, t) in row.iter().enumerate() {
                if t.nrows() != d || t.ncols() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: t.nrows() });
                }
                if t.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(invalid("counts", format!("table ({a}, {b}) has negative or non-finite entries")));
                }
            }
        }
        let n = |a: usize, b: usize| normalize_table(counts[a][b].clone(), (a, b));
        Ok(Self {
            dim: d,
            tables: [[n(0, 0)?, n(0, 1)?], [n(1, 0)?, n(1, 1)?]],
        })
    }

    /// `P(A_a = B_b + k) = Σ_j P(A_a = j + k, B_b = j)`
    pub fn a_equals_b_plus(&self, a: usize, b: usize, k: i64) -> f64 {
        let d = self.dim;
        let t = &self.tables[a][b];
        (0..d).map(|j| t[(shift(j, k, d), j)]).sum()
    }

    /// `P(B_b = A_a + k) = Σ_j P(A_a = j, B_b = j + k)`
    pub fn b_equals_a_plus(&self, a: usize, b: usize, k: i64) -> f64 {
        let d = self.dim;
        let t = &self.tables[a][b];
        (0..d).map(|j| t[(j, shift(j, k, d))]).sum()
    }

    /// General CGLMP sum over `k = 0 … ⌊d/2⌋ − 1`.
    pub fn cglmp(&self) -> f64 {
        let d = self.dim;
        (0..(d / 2) as i64)
            .map(|k| {
                let w = 1.0 - 2.0 * k as f64 / (d as f64 - 1.0);
                let plus = self.a_equals_b_plus(0, 0, k)
                    + self.b_equals_a_plus(1, 0, k + 1)
                    + self.a_equals_b_plus(1, 1, k)
                    + self.b_equals_a_plus(0, 1, k);
                let minus = self.a_equals_b_plus(0, 0, -k - 1)
                    + self.b_equals_a_plus(1, 0, -k)
                    + self.a_equals_b_plus(1, 1, -k - 1)
                    + self.b_equals_a_plus(0, 1, -k - 1);
                w * (plus - minus)
            })
            .sum()
    }

    /// The written-out `d = 2, 3` expression, evaluated by scanning outcome
    /// pairs for the required difference.
    pub fn cglmp_explicit(&self) -> Result<f64> {
        let d = self.dim;
        if !(d == 2 || d == 3) {
            return Err(invalid("d", format!("explicit form exists for d = 2, 3 only, got {d}")));
        }
        // Σ P(A_a = m, B_b = n) over pairs with m − n ≡ diff (mod d)
        let p = |a: usize, b: usize, diff: i64| -> f64 {
            let mut s = 0.0;
            for m in 0..d {
                for n in 0..d {
                    if (m as i64 - n as i64 - diff).rem_euclid(d as i64) == 0 {
                        s += self.tables[a][b][(m, n)];
                    }
                }
            }
            s
        };
        // P(A_a = B_b + x) is diff x; P(B_b = A_a + x) is diff −x
        Ok(p(0, 0, 0) + p(1, 0, -1) + p(1, 1, 0) + p(0, 1, 0) - p(0, 0, -1) - p(1, 0, 0) - p(1, 1, -1) - p(0, 1, 1))
    }
}

fn shift(j: usize, k: i64, d: usize) -> usize {
    (j as i64 + k).rem_euclid(d as i64) as usize
}

pub fn cglmp_parameter(rho: &DensityMatrix, settings: &DetectionSettings) -> Result<f64> {
    Ok(BellOutcomeTable::from_density(rho, settings)?.cglmp())
}

pub fn cglmp_parameter_pure(state: &BipartiteState, settings: &DetectionSettings) -> Result<f64> {
    Ok(BellOutcomeTable::from_state(state, settings)?.cglmp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellEstimate {
    pub value: f64,
    pub two_sigma: f64,
}

/// Bell parameter from background-subtracted count tables `counts[a][b]`,
/// with a 2σ band from Poisson resampling of every count.
pub fn cglmp_from_counts(counts: &[[DMatrix<f64>; 2]; 2], n_resamples: usize, seed_value: u64) -> Result<BellEstimate> {
    let value = BellOutcomeTable::from_counts(counts)?.cglmp();
    if n_resamples < 2 {
        return Ok(BellEstimate { value, two_sigma: 0.0 });
    }
    let samples: Vec<f64> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed_value, i));
            let resampled = counts.clone().map(|row| row.map(|t| t.map(|n| poisson(n, &mut rng) as f64)));
            BellOutcomeTable::from_counts(&resampled).map(|t| t.cglmp())
        })
        .collect::<Result<_>>()?;
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(BellEstimate { value, two_sigma: 2.0 * var.sqrt() })
}

/// Expected coincidence signals `(a⊗b)† ρ (a⊗b)` for all four setting pairs,
/// before normalization.
pub fn bell_signals(rho: &DensityMatrix, settings: &DetectionSettings) -> Result<[[DMatrix<f64>; 2]; 2]> {
    check_settings(settings)?;
    let d = rho.dim();
    let table = |a: usize, b: usize| -> Result<DMatrix<f64>> {
        let va: Vec<CVector> = (0..d).map(|m| cglmp_vector(d, Party::A, a, m, settings)).collect::<Result<_>>()?;
        let vb: Vec<CVector> = (0..d).map(|n| cglmp_vector(d, Party::B, b, n, settings)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(d, d, |m, n| rho.expectation(&linalg::kron_vec(&va[m], &vb[n])).max(0.0)))
    };
    Ok([[table(0, 0)?, table(0, 1)?], [table(1, 0)?, table(1, 1)?]])
}

/// Maximum of `I_d` over all deterministic local strategies
/// `(A₁, A₂, B₁, B₂) ∈ {0, …, d−1}⁴`.
pub fn local_deterministic_bound(d: usize) -> Result<f64> {
    if !(2..=4).contains(&d) {
        return Err(invalid("d", format!("enumeration supports d = 2, 3, 4, got {d}")));
    }
    let di = d as i64;
    let mut best = i64::MIN;
    // scores carry the weights multiplied by (d − 1) so every sum is an integer
    for a1 in 0..di {
        for a2 in 0..di {
            for b1 in 0..di {
                for b2 in 0..di {
                    let is = |x: i64, y: i64, k: i64| ((x - y - k).rem_euclid(di) == 0) as i64;
                    let mut score = 0;
                    for k in 0..di / 2 {
                        let w = di - 1 - 2 * k;
                        let plus = is(a1, b1, k) + is(b1, a2, k + 1) + is(a2, b2, k) + is(b2, a1, k);
                        let minus = is(a1, b1, -k - 1) + is(b1, a2, -k) + is(a2, b2, -k - 1) + is(b2, a1, -k - 1);
                        score += w * (plus - minus);
                    }
                    best = best.max(score);
                }
            }
        }
    }
    Ok(best as f64 / (d - 1) as f64)
}

fn pauli(u: usize) -> CMatrix {
    let (z, o, i) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0));
    match u {
        0 => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        1 => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        _ => CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

/// `T_uv = Tr(ρ σ_u ⊗ σ_v)` with the Pauli matrices taken in `order`
/// (indices into `x, y, z`).
pub fn correlation_matrix(rho: &DensityMatrix, order: [usize; 3]) -> Result<Matrix3<f64>> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho.dim() });
    }
    let mut t = Matrix3::zeros();
    for (r, &u) in order.iter().enumerate() {
        for (c, &v) in order.iter().enumerate() {
            let op = linalg::kron(&pauli(u), &pauli(v));
            t[(r, c)] = linalg::trace(&(rho.elements() * op)).re;
        }
    }
    Ok(t)
}

/// Maximal CHSH value `2√(m₁ + m₂)` over all settings, with `m₁, m₂` the two
/// largest eigenvalues of `TᵀT`.
pub fn horodecki_chsh(rho: &DensityMatrix) -> Result<f64> {
    horodecki_with_order(rho, [0, 1, 2])
}

pub fn horodecki_with_order(rho: &DensityMatrix, order: [usize; 3]) -> Result<f64> {
    let t = correlation_matrix(rho, order)?;
    let mut m: Vec<f64> = (t.transpose() * t).symmetric_eigenvalues().iter().copied().collect();
    m.sort_by(|a, b| b.total_cmp(a));
    Ok(2.0 * (m[0] + m[1]).max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub gamma: f64,
    pub value: f64,
}

/// `I_d` of the noise-mixed γ-state at each grid point.
pub fn gamma_scan(d: usize, gammas: &[f64], lambda: f64, settings: &DetectionSettings) -> Result<Vec<ScanPoint>> {
    gammas
        .par_iter()
        .map(|&gamma| {
            let rho = symmetric_noise(&gamma_state(d, gamma)?, lambda)?;
            Ok(ScanPoint { gamma, value: cglmp_parameter(&rho, settings)? })
        })
        .collect()
}

/// `n` uniform points on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    crate::spectra::linspace(0.0, 1.0, n)
}

pub const DEFAULT_SCAN_POINTS: usize = 101;
pub const DEFAULT_ARGMAX_TOL: f64 = 1e-4;

/// Location and value of the maximum of `I_d(γ)` on `[0, 1]`: the best grid
/// point is refined by golden-section search on its neighbouring interval.
pub fn gamma_argmax(d: usize, lambda: f64, settings: &DetectionSettings, grid_points: usize, tol: f64) -> Result<ScanPoint> {
    if grid_points < 3 {
        return Err(invalid("grid_points", format!("need at least 3, got {grid_points}")));
    }
    let grid = unit_grid(grid_points);
    let scan = gamma_scan(d, &grid, lambda, settings)?;
    let best = (0..scan.len()).max_by(|&i, &j| scan[i].value.total_cmp(&scan[j].value)).unwrap_or(0);
    let f = |g: f64| -> Result<f64> { cglmp_parameter(&symmetric_noise(&gamma_state(d, g)?, lambda)?, settings) };
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let gamma = 0.5 * (lo + hi);
    let refined = ScanPoint { gamma, value: f(gamma)? };
    Ok(if refined.value >= scan[best].value { refined } else { scan[best] })
}

/// Scan curve CSV: `gamma,value,two_sigma` (the 2σ column is empty for
/// ideal curves).
pub fn write_scan_csv<W: Write>(points: &[(ScanPoint, Option<f64>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "value", "two_sigma"])?;
    for (p, s) in points {
        w.write_record([p.gamma.to_string(), p.value.to_string(), s.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}
