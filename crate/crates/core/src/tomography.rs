//! Measurement set, maximum-likelihood reconstruction and Monte-Carlo error
//! bars for two-photon frequency-bin states.
//!
//! Each photon is projected onto a single bin `|j⟩` or onto a two-bin
//! superposition `(|j₁⟩ + e^{iα}|j₂⟩)/√2` with `α ∈ {0, π/2}`. Taking every
//! combination for both photons gives `d⁴` product projectors, which is
//! informationally complete.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector, ONE};
use crate::qudit::DensityMatrix;
use crate::seed;
use crate::shaper::{sample_counts, CountRecord, DetectorModel};

/// Relative singular-value cutoff for the completeness check.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoBinPhase {
    /// `α = 0`
    Real,
    /// `α = π/2`
    Imaginary,
}

/// One photon's projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonProjector {
    SingleBin(usize),
    TwoBin { j1: usize, j2: usize, phase: TwoBinPhase },
}

impl PhotonProjector {
    /// Unit vector `|χ⟩` in the `d`-level space.
    pub fn vector(&self, d: usize) -> Result<CVector> {
        let mut v = CVector::zeros(d);
        match *self {
            PhotonProjector::SingleBin(j) => {
                if j >= d {
                    return Err(invalid("projector", format!("bin {j} out of range for d = {d}")));
                }
                v[j] = ONE;
            }
            PhotonProjector::TwoBin { j1, j2, phase } => {
                if !(j1 < j2 && j2 < d) {
                    return Err(invalid("projector", format!("need j1 < j2 < d, got ({j1}, {j2}) for d = {d}")));
                }
                let h = std::f64::consts::FRAC_1_SQRT_2;
                v[j1] = Complex64::new(h, 0.0);
                v[j2] = match phase {
                    TwoBinPhase::Real => Complex64::new(h, 0.0),
                    TwoBinPhase::Imaginary => Complex64::new(0.0, h),
                };
            }
        }
        Ok(v)
    }

    /// All `d²` single-photon projections: `d` single bins, then the pairs.
    pub fn all(d: usize) -> Vec<PhotonProjector> {
        let mut out: Vec<_> = (0..d).map(PhotonProjector::SingleBin).collect();
        for j1 in 0..d {
            for j2 in j1 + 1..d {
                for phase in [TwoBinPhase::Real, TwoBinPhase::Imaginary] {
                    out.push(PhotonProjector::TwoBin { j1, j2, phase });
                }
            }
        }
        out
    }
}

impl fmt::Display for PhotonProjector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PhotonProjector::SingleBin(j) => write!(f, "z{j}"),
            PhotonProjector::TwoBin { j1, j2, phase } => {
                let p = if phase == TwoBinPhase::Real { 'x' } else { 'y' };
                write!(f, "{p}{j1}.{j2}")
            }
        }
    }
}

/// Product projector `|χ_i⟩|χ_s⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub idler: PhotonProjector,
    pub signal: PhotonProjector,
}

impl ProjectorSpec {
    pub fn vector(&self, d: usize) -> Result<CVector> {
        Ok(linalg::kron_vec(&self.idler.vector(d)?, &self.signal.vector(d)?))
    }

    /// Label such as `z0|x0.1`.
    pub fn label(&self) -> String {
        format!("{}|{}", self.idler, self.signal)
    }
}

pub fn tomography_basis(d: usize) -> Result<Vec<ProjectorSpec>> {
    if d < 2 {
        return Err(invalid("d", format!("must be >= 2, got {d}")));
    }
    let photon = PhotonProjector::all(d);
    Ok(photon
        .iter()
        .flat_map(|&idler| photon.iter().map(move |&signal| ProjectorSpec { idler, signal }))
        .collect())
}

/// Real `K × n²` matrix mapping Hermitian-basis coordinates of `ρ` to
/// `Tr(ρ Π_k)`.
///
/// Basis order: `E_aa`, then for each `a < b` the symmetric
/// `(E_ab + E_ba)/√2` and antisymmetric `i(E_ab − E_ba)/√2` elements.
pub fn measurement_matrix(vectors: &[CVector]) -> Result<DMatrix<f64>> {
    let n = vectors.first().map(|v| v.len()).unwrap_or(0);
    if let Some(v) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: v.len() });
    }
    let s2 = std::f64::consts::SQRT_2;
    let mut a = DMatrix::zeros(vectors.len(), n * n);
    for (k, chi) in vectors.iter().enumerate() {
        let mut m = 0;
        for i in 0..n {
            a[(k, m)] = chi[i].norm_sqr();
            m += 1;
        }
        for i in 0..n {
            for j in i + 1..n {
                let z = chi[i].conj() * chi[j];
                a[(k, m)] = s2 * z.re;
                a[(k, m + 1)] = -s2 * z.im;
                m += 2;
            }
        }
    }
    Ok(a)
}

fn hermitian_from_coordinates(x: &DVector<f64>, n: usize) -> CMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut rho = CMatrix::zeros(n, n);
    let mut m = 0;
    for i in 0..n {
        rho[(i, i)] = Complex64::new(x[m], 0.0);
        m += 1;
    }
    for i in 0..n {
        for j in i + 1..n {
            let z = Complex64::new(x[m] * h, x[m + 1] * h);
            rho[(i, j)] = z;
            rho[(j, i)] = z.conj();
            m += 2;
        }
    }
    rho
}

/// Fails unless the projectors span the full operator space.
pub fn check_complete(vectors: &[CVector]) -> Result<()> {
    let n = vectors.first().map(|v| v.len()).unwrap_or(0);
    let a = measurement_matrix(vectors)?;
    let rank = linalg::rank(&a, RANK_TOL);
    if rank < n * n || n == 0 {
        return Err(Error::RankDeficient { rank, required: n * n });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Poisson,
    /// Weighted least squares with variance `max(n, 1)`, for imported data
    /// that is not Poisson distributed.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleOptions {
    /// Relative objective change that counts as converged.
    pub tolerance: f64,
    /// Gradient norm below which the optimizer stops immediately.
    pub gradient_tolerance: f64,
    /// Largest gradient norm accepted together with a stalled objective.
    pub max_gradient_norm: f64,
    pub max_iterations: usize,
    pub likelihood: Likelihood,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            gradient_tolerance: 1e-9,
            max_gradient_norm: 1e-6,
            max_iterations: 20_000,
            likelihood: Likelihood::Poisson,
        }
    }
}

/// Projectors with their aligned count records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyRun {
    pub dim: usize,
    pub projectors: Vec<ProjectorSpec>,
    pub records: Vec<CountRecord>,
    pub options: MleOptions,
}

impl TomographyRun {
    pub fn new(dim: usize, projectors: Vec<ProjectorSpec>, records: Vec<CountRecord>, options: MleOptions) -> Result<Self> {
        if projectors.len() != records.len() {
            return Err(Error::DimensionMismatch {
                expected: projectors.len(),
                found: records.len(),
            });
        }
        let run = Self { dim, projectors, records, options };
        check_complete(&run.vectors()?)?;
        Ok(run)
    }

    pub fn vectors(&self) -> Result<Vec<CVector>> {
        self.projectors.iter().map(|p| p.vector(self.dim)).collect()
    }

    /// Background-subtracted counts.
    pub fn net_counts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.net_counts() as f64).collect()
    }
}

/// `Tr(ρ Π_k)` for every projector.
pub fn expected_signals(state: &DensityMatrix, projectors: &[ProjectorSpec]) -> Result<Vec<f64>> {
    projectors
        .iter()
        .map(|p| Ok(state.expectation(&p.vector(state.dim())?).max(0.0)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountNoise {
    Poisson,
    /// Mean counts rounded to integers, no background.
    Noiseless,
}

/// Largest single-bin-pair probability `max_jk ⟨jk|ρ|jk⟩`, the projection the
/// detector's peak rate refers to.
pub fn brightest_bin_pair(state: &DensityMatrix) -> f64 {
    state.elements().diagonal().iter().map(|z| z.re).fold(0.0, f64::max)
}

/// Simulates one count record per projector. Signals are scaled so the
/// brightest single-bin-pair projection counts at the detector's peak rate.
pub fn simulate_tomography(
    state: &DensityMatrix,
    projectors: &[ProjectorSpec],
    detector: &DetectorModel,
    noise: CountNoise,
    options: MleOptions,
) -> Result<TomographyRun> {
    let peak = brightest_bin_pair(state);
    if !(peak > 0.0) {
        return Err(invalid("state", "no population in any single-bin pair"));
    }
    let signals: Vec<f64> = expected_signals(state, projectors)?.into_iter().map(|s| s / peak).collect();
    let mut rng = detector.rng();
    let records = projectors
        .iter()
        .zip(&signals)
        .map(|(p, &s)| match noise {
            CountNoise::Poisson => sample_counts(s, detector, p.label(), &mut rng),
            CountNoise::Noiseless => {
                let mean = s * detector.peak_pair_rate * detector.integration_time;
                Ok(CountRecord::new(p.label(), mean.round() as u64, 0, detector.integration_time))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    TomographyRun::new(state.dim(), projectors.to_vec(), records, options)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub density: DensityMatrix,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective (negative scaled log-likelihood) after each accepted step.
    pub objective_history: Vec<f64>,
}

/// Negative log-likelihood as a function of the lower-triangular factor `L`
/// of the unnormalized state `L L†`, whose trace plays the role of the count
/// scale.
pub struct Objective<'a> {
    chi: CMatrix,
    /// Counts divided by their total.
    p: &'a [f64],
    total: f64,
    likelihood: Likelihood,
}

impl<'a> Objective<'a> {
    pub fn new(vectors: &[CVector], p: &'a [f64], total: f64, likelihood: Likelihood) -> Self {
        let n = vectors.first().map(|v| v.len()).unwrap_or(0);
        let chi = CMatrix::from_fn(n, vectors.len(), |a, k| vectors[k][a]);
        Self { chi, p, total, likelihood }
    }

    fn dim(&self) -> usize {
        self.chi.nrows()
    }

    /// Value and gradient with respect to the packed parameters of `L`.
    pub fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.dim();
        let l = unpack(x, n);
        let y = l.adjoint() * &self.chi;
        let q: Vec<f64> = y.column_iter().map(|c| c.norm_squared()).collect();
        let mut value = 0.0;
        let mut w = vec![0.0; q.len()];
        match self.likelihood {
            Likelihood::Poisson => {
                for (k, (&qk, &pk)) in q.iter().zip(self.p).enumerate() {
                    if pk > 0.0 {
                        if !(qk > 0.0) {
                            return (f64::INFINITY, DVector::zeros(x.len()));
                        }
                        value -= pk * qk.ln();
                        w[k] = 1.0 - pk / qk;
                    } else {
                        w[k] = 1.0;
                    }
                    value += qk;
                }
            }
            Likelihood::Gaussian => {
                let var = |pk: f64| (pk * self.total).max(1.0) / (self.total * self.total);
                for (k, (&qk, &pk)) in q.iter().zip(self.p).enumerate() {
                    let r = qk - pk;
                    value += r * r / var(pk) / self.total;
                    w[k] = 2.0 * r / var(pk) / self.total;
                }
            }
        }
        // ∂f/∂L_ab = Σ_k w_k χ_a conj(y_b), split into real and imaginary parts
        let mut chi_w = self.chi.clone();
        for (k, mut col) in chi_w.column_iter_mut().enumerate() {
            col *= Complex64::new(w[k], 0.0);
        }
        let m = chi_w * y.adjoint();
        (value, pack_gradient(&m, n))
    }
}

fn param_len(n: usize) -> usize {
    n * n
}

/// Packs `L` row by row: `Re L_ab` for `b ≤ a`, then `Im L_ab` for `b < a`.
pub fn pack(l: &CMatrix) -> DVector<f64> {
    let n = l.nrows();
    let mut x = Vec::with_capacity(param_len(n));
    for a in 0..n {
        for b in 0..=a {
            x.push(l[(a, b)].re);
            if b < a {
                x.push(l[(a, b)].im);
            }
        }
    }
    DVector::from_vec(x)
}

pub fn unpack(x: &DVector<f64>, n: usize) -> CMatrix {
    let mut l = CMatrix::zeros(n, n);
    let mut m = 0;
    for a in 0..n {
        for b in 0..=a {
            if b < a {
                l[(a, b)] = Complex64::new(x[m], x[m + 1]);
                m += 2;
            } else {
                l[(a, b)] = Complex64::new(x[m], 0.0);
                m += 1;
            }
        }
    }
    l
}

fn pack_gradient(m: &CMatrix, n: usize) -> DVector<f64> {
    let mut g = Vec::with_capacity(param_len(n));
    for a in 0..n {
        for b in 0..=a {
            g.push(2.0 * m[(a, b)].re);
            if b < a {
                g.push(2.0 * m[(a, b)].im);
            }
        }
    }
    DVector::from_vec(g)
}

/// Clipped linear-inversion estimate, scaled so that `Σ_k Tr(ρ Π_k) = 1`.
fn initial_state(vectors: &[CVector], p: &[f64]) -> Result<CMatrix> {
    let n = vectors[0].len();
    let a = measurement_matrix(vectors)?;
    let b = DVector::from_column_slice(p);
    let x = a
        .clone()
        .svd(true, true)
        .solve(&b, RANK_TOL)
        .map_err(|e| Error::InvalidDensityMatrix(e.to_string()))?;
    let rho = hermitian_from_coordinates(&x, n);
    let (values, vectors_e) = linalg::hermitian_eigen(&rho);
    let top = values.iter().copied().fold(0.0, f64::max).max(1e-12);
    let floor = 1e-3 * top;
    let clipped = DVector::from_iterator(values.len(), values.iter().map(|&v| Complex64::new(v.max(floor), 0.0)));
    let rho = &vectors_e * CMatrix::from_diagonal(&clipped) * vectors_e.adjoint();
    let rho = (&rho + rho.adjoint()).scale(0.5);
    let total: f64 = vectors.iter().map(|v| linalg::expectation(&rho, v)).sum();
    Ok(rho.unscale(total))
}

fn cholesky_lower(rho: &CMatrix) -> Result<CMatrix> {
    let n = rho.nrows();
    match rho.clone().cholesky() {
        Some(c) => Ok(c.l()),
        None => {
            let tr = linalg::trace(rho).re.max(1e-12);
            Ok(CMatrix::identity(n, n).scale((tr / n as f64).sqrt()))
        }
    }
}

#[derive(Clone, Debug)]
struct Minimum {
    x: DVector<f64>,
    iterations: usize,
    gradient_norm: f64,
    history: Vec<f64>,
}

/// L-BFGS with Armijo backtracking. Every accepted step lowers the objective.
fn lbfgs<F: Fn(&DVector<f64>) -> (f64, DVector<f64>)>(f: F, x0: DVector<f64>, opts: &MleOptions) -> Result<Minimum> {
    const MEMORY: usize = 12;
    const STALL_ITERATIONS: usize = 5;
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite("initial likelihood"));
    }
    let mut history = vec![fx];
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut stalled = 0;
    for iter in 1..=opts.max_iterations {
        let gnorm = g.norm();
        if gnorm <= opts.gradient_tolerance {
            return Ok(Minimum { x, iterations: iter - 1, gradient_norm: gnorm, history });
        }
        // two-loop recursion
        let mut dir = -g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * s.dot(&dir);
            dir.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            dir *= s.dot(y) / y.dot(y);
        } else {
            dir *= 1.0 / gnorm.max(1.0);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&dir);
            dir.axpy(a - b, s, 1.0);
        }
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            mem.clear();
            dir = -g.clone() / gnorm.max(1.0);
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * step;
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no further decrease representable
            if gnorm <= opts.max_gradient_norm {
                return Ok(Minimum { x, iterations: iter - 1, gradient_norm: gnorm, history });
            }
            if !mem.is_empty() {
                mem.clear();
                continue;
            }
            return Err(Error::NonConvergence { iterations: iter, gradient_norm: gnorm });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() {
            mem.push_back((s, y, 1.0 / sy));
            if mem.len() > MEMORY {
                mem.pop_front();
            }
        }
        let change = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        stalled = if change < opts.tolerance { stalled + 1 } else { 0 };
        if stalled >= STALL_ITERATIONS && g.norm() <= opts.max_gradient_norm {
            return Ok(Minimum { x, iterations: iter, gradient_norm: g.norm(), history });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        gradient_norm: g.norm(),
    })
}

/// Maximum-likelihood state for arbitrary projector vectors and counts.
pub fn mle_from_vectors(dim: usize, vectors: &[CVector], counts: &[f64], options: &MleOptions) -> Result<MleResult> {
    let n = dim * dim;
    if vectors.len() != counts.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            found: counts.len(),
        });
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: v.len() });
    }
    if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(invalid("counts", "must be finite and nonnegative"));
    }
    check_complete(vectors)?;
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("counts", "all counts are zero"));
    }
    let p: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let objective = Objective::new(vectors, &p, total, options.likelihood);
    let l0 = cholesky_lower(&initial_state(vectors, &p)?)?;
    let min = lbfgs(|x| objective.evaluate(x), pack(&l0), options)?;
    let l = unpack(&min.x, n);
    let density = DensityMatrix::from_psd(dim, &l * l.adjoint())?;
    Ok(MleResult {
        density,
        iterations: min.iterations,
        gradient_norm: min.gradient_norm,
        objective_history: min.history,
    })
}

pub fn mle_reconstruct(run: &TomographyRun) -> Result<MleResult> {
    mle_from_vectors(run.dim, &run.vectors()?, &run.net_counts(), &run.options)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub two_sigma: f64,
    pub samples: usize,
    pub failures: usize,
}

/// Largest tolerated fraction of failed resamples.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Perturbs every count by `N(0, √n)·noise_scale` (clamped at zero),
/// reconstructs and evaluates `statistic`. Resample `i` uses seed
/// `derive(seed, i)`, so the result does not depend on thread count.
pub fn monte_carlo_error<S>(run: &TomographyRun, statistic: S, n_samples: usize, seed: u64, noise_scale: f64) -> Result<MonteCarloEstimate>
where
    S: Fn(&DensityMatrix) -> f64 + Sync,
{
    if n_samples < 2 {
        return Err(invalid("n_samples", format!("must be >= 2, got {n_samples}")));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(invalid("noise_scale", format!("must be finite and >= 0, got {noise_scale}")));
    }
    let vectors = run.vectors()?;
    let counts = run.net_counts();
    let results: Vec<Option<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, i));
            let perturbed: Vec<f64> = counts
                .iter()
                .map(|&n| {
                    let sd = n.sqrt() * noise_scale;
                    let noise = if sd > 0.0 {
                        Normal::new(0.0, sd).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    };
                    (n + noise).max(0.0)
                })
                .collect();
            mle_from_vectors(run.dim, &vectors, &perturbed, &run.options)
                .ok()
                .map(|r| statistic(&r.density))
                .filter(|v| v.is_finite())
        })
        .collect();
    let values: Vec<f64> = results.iter().flatten().copied().collect();
    let failures = n_samples - values.len();
    if failures as f64 > MAX_FAILURE_FRACTION * n_samples as f64 || values.len() < 2 {
        return Err(Error::MonteCarloFailures { failed: failures, total: n_samples });
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(MonteCarloEstimate {
        mean,
        two_sigma: 2.0 * var.sqrt(),
        samples: values.len(),
        failures,
    })
}

/// Real and imaginary parts as `row,col,re,im` CSV.
pub fn write_density_csv<W: std::io::Write>(rho: &DensityMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "re", "im"])?;
    let m = rho.elements();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_record([r.to_string(), c.to_string(), m[(r, c)].re.to_string(), m[(r, c)].im.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;
    use crate::qudit::{fidelity, fidelity_pure, gamma_state, maximally_entangled, product_basis_state, symmetric_noise, BipartiteState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn detector(rate_t: f64, seed: u64) -> DetectorModel {
        DetectorModel::new(rate_t, 0.0, 1.0, seed).unwrap()
    }

    fn noiseless(state: &DensityMatrix) -> TomographyRun {
        let basis = tomography_basis(state.dim()).unwrap();
        simulate_tomography(state, &basis, &detector(1e9, 0), CountNoise::Noiseless, MleOptions::default()).unwrap()
    }

    fn random_pure(d: usize, rng: &mut impl Rng) -> BipartiteState {
        let c = CMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        BipartiteState::normalized(c).unwrap()
    }

    #[test]
    fn basis_sizes() {
        assert_eq!(PhotonProjector::all(2).len(), 4);
        assert_eq!(tomography_basis(2).unwrap().len(), 16);
        assert_eq!(PhotonProjector::all(3).len(), 9);
        assert_eq!(tomography_basis(3).unwrap().len(), 81);
        assert_eq!(tomography_basis(4).unwrap().len(), 256);
        assert!(tomography_basis(1).is_err());
    }

    #[test]
    fn projector_vectors_are_unit() {
        for d in 2..=4 {
            for p in tomography_basis(d).unwrap() {
                assert_relative_eq!(p.vector(d).unwrap().norm(), 1.0, epsilon = 1e-15);
            }
        }
        let v = PhotonProjector::TwoBin { j1: 0, j2: 2, phase: TwoBinPhase::Imaginary }.vector(3).unwrap();
        assert_relative_eq!(v[2].im, std::f64::consts::FRAC_1_SQRT_2);
        assert!(PhotonProjector::TwoBin { j1: 1, j2: 1, phase: TwoBinPhase::Real }.vector(3).is_err());
    }

    #[test]
    fn labels_are_unique() {
        let basis = tomography_basis(3).unwrap();
        let mut labels: Vec<_> = basis.iter().map(|p| p.label()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 81);
    }

    /// Rank of the Gram matrix `G_kl = Tr(Π_k Π_l)` of the projector operators.
    fn gram_rank(vectors: &[CVector]) -> usize {
        let g = DMatrix::from_fn(vectors.len(), vectors.len(), |k, l| vectors[k].dotc(&vectors[l]).norm_sqr());
        linalg::rank(&g, 1e-10)
    }

    #[test]
    fn basis_is_complete() {
        for d in 2..=3 {
            let v: Vec<_> = tomography_basis(d).unwrap().iter().map(|p| p.vector(d).unwrap()).collect();
            assert_eq!(gram_rank(&v), d.pow(4));
            check_complete(&v).unwrap();
        }
    }

    #[test]
    fn single_and_pair_products_alone_are_incomplete() {
        // |j⟩|j⟩ and the real and imaginary two-bin pairs on both photons together
        let d = 2;
        let mut v = Vec::new();
        for p in PhotonProjector::all(d) {
            v.push(ProjectorSpec { idler: p, signal: p }.vector(d).unwrap());
        }
        assert!(gram_rank(&v) < 16);
        assert!(matches!(check_complete(&v), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn expected_signal_examples() {
        let rho = maximally_entangled(2).unwrap().density();
        let p = |i, s| ProjectorSpec { idler: i, signal: s };
        let x = PhotonProjector::TwoBin { j1: 0, j2: 1, phase: TwoBinPhase::Real };
        let y = PhotonProjector::TwoBin { j1: 0, j2: 1, phase: TwoBinPhase::Imaginary };
        let z0 = PhotonProjector::SingleBin(0);
        let s = expected_signals(&rho, &[p(z0, z0), p(x, x), p(y, x)]).unwrap();
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn linear_inversion_is_exact_for_exact_data() {
        let rho = symmetric_noise(&maximally_entangled(3).unwrap(), 0.6).unwrap();
        let basis = tomography_basis(3).unwrap();
        let v: Vec<_> = basis.iter().map(|p| p.vector(3).unwrap()).collect();
        let p = expected_signals(&rho, &basis).unwrap();
        let a = measurement_matrix(&v).unwrap();
        let x = a.svd(true, true).solve(&DVector::from_vec(p), 1e-12).unwrap();
        let est = hermitian_from_coordinates(&x, 9);
        assert!((est - rho.elements()).norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seed::rng(5);
        for likelihood in [Likelihood::Poisson, Likelihood::Gaussian] {
            let d = 2;
            let basis = tomography_basis(d).unwrap();
            let v: Vec<_> = basis.iter().map(|p| p.vector(d).unwrap()).collect();
            let counts: Vec<f64> = (0..v.len()).map(|_| rng.random_range(1.0..100.0)).collect();
            let total: f64 = counts.iter().sum();
            let p: Vec<f64> = counts.iter().map(|c| c / total).collect();
            let obj = Objective::new(&v, &p, total, likelihood);
            for _ in 0..10 {
                let x = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
                let (_, g) = obj.evaluate(&x);
                let h = 1e-6;
                for i in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (obj.evaluate(&xp).0 - obj.evaluate(&xm).0) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{likelihood:?} param {i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn pack_round_trip() {
        let mut rng = seed::rng(1);
        let x = DVector::from_fn(9, |_, _| rng.random::<f64>());
        assert_eq!(pack(&unpack(&x, 3)), x);
        let l = unpack(&x, 3);
        assert_eq!(l[(0, 1)], ZERO);
        assert_eq!(l[(1, 1)].im, 0.0);
    }

    #[test]
    fn noiseless_round_trip_me() {
        for d in 2..=4 {
            let target = maximally_entangled(d).unwrap();
            let r = mle_reconstruct(&noiseless(&target.density())).unwrap();
            let f = fidelity_pure(&r.density, &target).unwrap();
            assert!(f >= 0.9999, "d={d}: F={f}");
            assert!(r.gradient_norm < 1e-6);
        }
    }

    #[test]
    fn noiseless_recovers_mixing_parameter() {
        let lambda = 0.807;
        let target = maximally_entangled(3).unwrap();
        let rho = symmetric_noise(&target, lambda).unwrap();
        let r = mle_reconstruct(&noiseless(&rho)).unwrap();
        // F² = ⟨ψ|ρ|ψ⟩ = λ + (1 − λ)/d²
        let f2 = fidelity_pure(&r.density, &target).unwrap().powi(2);
        let est = (f2 - 1.0 / 9.0) / (1.0 - 1.0 / 9.0);
        assert!((est - lambda).abs() < 0.01, "λ̂ = {est}");
    }

    #[test]
    fn uniform_counts_give_maximally_mixed() {
        let basis = tomography_basis(2).unwrap();
        let v: Vec<_> = basis.iter().map(|p| p.vector(2).unwrap()).collect();
        let counts = vec![1000.0; v.len()];
        let r = mle_from_vectors(2, &v, &counts, &MleOptions::default()).unwrap();
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((r.density.elements() - mixed.elements()).norm() < 1e-6);
    }

    #[test]
    fn objective_never_increases() {
        let rho = symmetric_noise(&gamma_state(3, 0.6).unwrap(), 0.8).unwrap();
        let basis = tomography_basis(3).unwrap();
        let run = simulate_tomography(&rho, &basis, &DetectorModel::new(13.0, 0.2, 10.0, 3).unwrap(), CountNoise::Poisson, MleOptions::default()).unwrap();
        let r = mle_reconstruct(&run).unwrap();
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.gradient_norm < 1e-6);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let rho = symmetric_noise(&maximally_entangled(2).unwrap(), 0.9).unwrap();
        let basis = tomography_basis(2).unwrap();
        let run = simulate_tomography(&rho, &basis, &DetectorModel::new(43.0, 0.2, 10.0, 8).unwrap(), CountNoise::Poisson, MleOptions::default()).unwrap();
        let r = mle_reconstruct(&run).unwrap();
        // re-evaluate the gradient at the normalized optimum, scaled to Σq = 1
        let v = run.vectors().unwrap();
        let counts = run.net_counts();
        let total: f64 = counts.iter().sum();
        let p: Vec<f64> = counts.iter().map(|c| c / total).collect();
        let rho_hat = r.density.elements();
        let scale: f64 = v.iter().map(|x| linalg::expectation(rho_hat, x)).sum();
        let l = rho_hat.unscale(scale).cholesky().unwrap().l();
        let (_, g) = Objective::new(&v, &p, total, Likelihood::Poisson).evaluate(&pack(&l));
        assert!(g.norm() < 1e-5, "|g| = {}", g.norm());
    }

    #[test]
    fn permutation_equivariance() {
        let d = 3;
        let perm = [2, 0, 1];
        let rho = symmetric_noise(&gamma_state(3, 0.7).unwrap(), 0.85).unwrap();
        let basis = tomography_basis(d).unwrap();
        let run = simulate_tomography(&rho, &basis, &DetectorModel::new(13.0, 0.2, 10.0, 21).unwrap(), CountNoise::Poisson, MleOptions::default()).unwrap();
        let counts = run.net_counts();
        let v = run.vectors().unwrap();
        let map = |idx: usize| perm[idx / d] * d + perm[idx % d];
        let moved: Vec<CVector> = v
            .iter()
            .map(|x| {
                let mut y = CVector::zeros(d * d);
                for i in 0..d * d {
                    y[map(i)] = x[i];
                }
                y
            })
            .collect();
        let a = mle_from_vectors(d, &v, &counts, &run.options).unwrap().density;
        let b = mle_from_vectors(d, &moved, &counts, &run.options).unwrap().density;
        let expected = a.permuted(&perm).unwrap();
        assert!((b.elements() - expected.elements()).norm() < 1e-5);
    }

    #[test]
    fn monte_carlo_without_noise_has_zero_spread() {
        let target = maximally_entangled(2).unwrap();
        let run = noiseless(&symmetric_noise(&target, 0.9).unwrap());
        let est = monte_carlo_error(&run, |r| fidelity_pure(r, &target).unwrap(), 4, 1, 0.0).unwrap();
        assert_eq!(est.two_sigma, 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_at_experiment_scale() {
        let target = maximally_entangled(2).unwrap();
        let rho = symmetric_noise(&target, 0.920).unwrap();
        let basis = tomography_basis(2).unwrap();
        let run = simulate_tomography(&rho, &basis, &DetectorModel::new(43.0, 0.2, 10.0, 77).unwrap(), CountNoise::Poisson, MleOptions::default()).unwrap();
        let stat = |r: &DensityMatrix| fidelity_pure(r, &target).unwrap();
        let a = monte_carlo_error(&run, stat, 40, 9, 1.0).unwrap();
        let b = monte_carlo_error(&run, stat, 40, 9, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.two_sigma > 0.002 && a.two_sigma < 0.03, "2σ = {}", a.two_sigma);
    }

    #[test]
    fn monte_carlo_rejects_single_sample() {
        let run = noiseless(&maximally_entangled(2).unwrap().density());
        assert!(monte_carlo_error(&run, |_| 0.0, 1, 0, 1.0).is_err());
    }

    #[test]
    fn run_validates_lengths() {
        let basis = tomography_basis(2).unwrap();
        assert!(TomographyRun::new(2, basis, vec![], MleOptions::default()).is_err());
    }

    #[test]
    fn product_state_round_trip_via_full_fidelity() {
        let target = product_basis_state(3, 1, 2).unwrap().density();
        let r = mle_reconstruct(&noiseless(&target)).unwrap();
        assert!(fidelity(&r.density, &target).unwrap() > 0.999);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn noisy_reconstructions_are_valid_states(seed in any::<u64>(), lambda in 0.0..1.0f64) {
            let rho = symmetric_noise(&maximally_entangled(2).unwrap(), lambda).unwrap();
            let basis = tomography_basis(2).unwrap();
            let det = DetectorModel::new(43.0, 0.2, 10.0, seed).unwrap();
            let run = simulate_tomography(&rho, &basis, &det, CountNoise::Poisson, MleOptions::default()).unwrap();
            let r = mle_reconstruct(&run).unwrap();
            // revalidate from scratch
            let again = DensityMatrix::new(2, r.density.elements().clone());
            prop_assert!(again.is_ok());
        }
    }

    #[test]
    fn random_pure_states_round_trip() {
        let mut rng = seed::rng(2024);
        for d in 2..=4 {
            for _ in 0..20 {
                let psi = random_pure(d, &mut rng);
                let r = mle_reconstruct(&noiseless(&psi.density())).unwrap();
                let f = fidelity_pure(&r.density, &psi).unwrap();
                assert!(f >= 0.999, "d={d}: F={f}");
            }
        }
    }
}
