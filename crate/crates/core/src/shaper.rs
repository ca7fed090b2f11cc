//! Spectral pulse shaper, up-conversion coincidence signal and photon
//! counting.
//!
//! The shaper multiplies each photon's spectrum by a transfer function made
//! of weighted frequency bins. Idler bins live at negative detuning, signal
//! bins at positive detuning. Coincidence detection through sum-frequency
//! generation picks out the anti-diagonal `ω_s = −ω_i`, so the detected
//! amplitude is `∫ Γ(ω) M_i(ω) M_s(−ω) dω`.

use std::f64::consts::SQRT_2;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{CMatrix, ZERO};
use crate::output::Provenance;
use crate::qudit::{validate_bins, FrequencyBin};
use crate::spectra::{phase_matching, CrystalModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Idler,
    Signal,
}

/// Complex SLM mask `M(ω) = Σ u_j f_j(ω)`, optionally blurred by the finite
/// spectral resolution of the setup.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    side: Side,
    bins: Vec<FrequencyBin>,
    weights: Vec<Complex64>,
    blur_sigma: f64,
}

impl TransferFunction {
    pub fn new(side: Side, bins: Vec<FrequencyBin>, weights: Vec<Complex64>, blur_sigma: f64) -> Result<Self> {
        if bins.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: bins.len(),
                found: weights.len(),
            });
        }
        if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) {
            return Err(invalid("blur_sigma", format!("must be finite and >= 0, got {blur_sigma}")));
        }
        if let Some(u) = weights.iter().find(|u| !(u.norm() <= 1.0 + 1e-12)) {
            return Err(invalid("weights", format!("|u| = {} exceeds 1; the mask only attenuates", u.norm())));
        }
        validate_bins(&bins)?;
        let wrong_side = |b: &FrequencyBin| match side {
            Side::Idler => b.upper() > 0.0,
            Side::Signal => b.lower() < 0.0,
        };
        if let Some(j) = bins.iter().position(wrong_side) {
            return Err(invalid("bins", format!("bin {j} is on the wrong side of degeneracy for {side:?}")));
        }
        Ok(Self {
            side,
            bins,
            weights,
            blur_sigma,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn bins(&self) -> &[FrequencyBin] {
        &self.bins
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn blur_sigma(&self) -> f64 {
        self.blur_sigma
    }

    pub fn with_weights(&self, weights: Vec<Complex64>) -> Result<Self> {
        Self::new(self.side, self.bins.clone(), weights, self.blur_sigma)
    }

    /// Window of bin `j`: an indicator, or its convolution with a unit-area
    /// Gaussian of width `blur_sigma`.
    fn window(&self, j: usize, omega: f64) -> f64 {
        let b = &self.bins[j];
        if self.blur_sigma == 0.0 {
            return if b.contains(omega) { 1.0 } else { 0.0 };
        }
        let s = SQRT_2 * self.blur_sigma;
        let (x, y) = ((omega - b.lower()) / s, (omega - b.upper()) / s);
        // erfc keeps the far tails accurate where erf(x) − erf(y) cancels
        if y > 0.0 {
            0.5 * (libm::erfc(y) - libm::erfc(x))
        } else if x < 0.0 {
            0.5 * (libm::erfc(-x) - libm::erfc(-y))
        } else {
            0.5 * (libm::erf(x) - libm::erf(y))
        }
    }

    /// Unit-weight mode of bin `j`.
    pub fn mode(&self, j: usize, omega: f64) -> f64 {
        self.window(j, omega) * self.bins[j].amplitude()
    }

    pub fn evaluate(&self, omega: f64) -> Complex64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, u)| u * self.mode(j, omega))
            .sum()
    }

    /// Intervals outside of which the mask is negligible.
    fn support(&self) -> Vec<(f64, f64)> {
        let margin = 8.0 * self.blur_sigma;
        self.bins
            .iter()
            .map(|b| (b.lower() - margin, b.upper() + margin))
            .collect()
    }
}

/// `M(ω)` as a free function.
pub fn evaluate_transfer(m: &TransferFunction, omega: f64) -> Complex64 {
    m.evaluate(omega)
}

/// Spectral amplitude Γ(ω) seen by the up-conversion detector along the
/// anti-diagonal `(ω, −ω)`.
pub trait SpectralAmplitude {
    fn at(&self, omega: f64) -> Complex64;
}

impl<F: Fn(f64) -> Complex64> SpectralAmplitude for F {
    fn at(&self, omega: f64) -> Complex64 {
        self(omega)
    }
}

/// Phase matching of the source times a Gaussian acceptance of the
/// detection crystal.
#[derive(Clone, Copy, Debug)]
pub struct DetectionAmplitude {
    pub crystal: CrystalModel,
    pub acceptance_sigma: f64,
}

impl DetectionAmplitude {
    /// Acceptance ten times wider than the outermost bin edge.
    pub fn wide_for(crystal: CrystalModel, bins: &[FrequencyBin]) -> Self {
        let span = bins
            .iter()
            .map(|b| b.lower().abs().max(b.upper().abs()))
            .fold(0.0, f64::max);
        Self {
            crystal,
            acceptance_sigma: 10.0 * span,
        }
    }
}

impl SpectralAmplitude for DetectionAmplitude {
    fn at(&self, omega: f64) -> Complex64 {
        let acc = (-omega * omega / (2.0 * self.acceptance_sigma * self.acceptance_sigma)).exp();
        phase_matching(omega, -omega, &self.crystal) * acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureOptions {
    pub samples_per_bin: usize,
    pub rel_tol: f64,
    pub max_doublings: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            samples_per_bin: 64,
            rel_tol: 1e-8,
            max_doublings: 10,
        }
    }
}

/// Union of possibly overlapping intervals as sorted disjoint intervals.
fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (lo, hi) in iv {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// Disjoint pieces of the ω axis where both `M_i(ω)` and `M_s(−ω)` can be
/// nonzero, split at every bin edge.
fn overlap_pieces(m_i: &TransferFunction, m_s: &TransferFunction) -> Vec<(f64, f64)> {
    let idler = merge_intervals(m_i.support());
    let mirrored = merge_intervals(m_s.support().into_iter().map(|(lo, hi)| (-hi, -lo)).collect());
    let mut edges: Vec<f64> = Vec::new();
    for b in m_i.bins.iter() {
        edges.extend([b.lower(), b.upper()]);
    }
    for b in m_s.bins.iter() {
        edges.extend([-b.upper(), -b.lower()]);
    }
    let mut pieces = Vec::new();
    for &(a0, a1) in &idler {
        for &(b0, b1) in &mirrored {
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if hi <= lo {
                continue;
            }
            let mut cuts: Vec<f64> = edges.iter().copied().filter(|&e| e > lo && e < hi).collect();
            cuts.push(lo);
            cuts.push(hi);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            pieces.extend(cuts.windows(2).map(|w| (w[0], w[1])));
        }
    }
    pieces
}

/// Midpoint sums of `f` and `|f|` over all pieces.
fn midpoint_pieces(pieces: &[(f64, f64)], step: f64, f: &impl Fn(f64) -> Complex64) -> (Complex64, f64) {
    let mut acc = ZERO;
    let mut abs = 0.0;
    for &(lo, hi) in pieces {
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        for k in 0..n {
            let v = f(lo + h * (k as f64 + 0.5));
            acc += v * h;
            abs += v.norm() * h;
        }
    }
    (acc, abs)
}

/// `∫ Γ(ω) M_i(ω) M_s(−ω) dω` by midpoint quadrature, doubled until two
/// successive estimates differ by less than `rel_tol · ∫|integrand|`.
pub fn coincidence_amplitude<G: SpectralAmplitude + ?Sized>(
    m_i: &TransferFunction,
    m_s: &TransferFunction,
    gamma: &G,
    opts: &QuadratureOptions,
) -> Result<Complex64> {
    if m_i.side != Side::Idler || m_s.side != Side::Signal {
        return Err(invalid("transfer functions", "expected (idler, signal) masks"));
    }
    let pieces = overlap_pieces(m_i, m_s);
    if pieces.is_empty() {
        return Ok(ZERO);
    }
    let min_width = m_i
        .bins
        .iter()
        .chain(m_s.bins.iter())
        .map(FrequencyBin::width)
        .fold(f64::INFINITY, f64::min);
    let integrand = |w: f64| gamma.at(w) * m_i.evaluate(w) * m_s.evaluate(-w);
    // Cauchy–Schwarz bound on |∫|, used as an absolute floor
    let weight_norm = |m: &TransferFunction| m.weights.iter().map(|u| u.norm_sqr()).sum::<f64>().sqrt();
    let gamma_max = pieces
        .iter()
        .flat_map(|&(lo, hi)| [lo, 0.5 * (lo + hi), hi])
        .map(|w| gamma.at(w).norm())
        .fold(0.0, f64::max);
    let floor = 1e-15 * weight_norm(m_i) * weight_norm(m_s) * gamma_max;
    let mut step = min_width / opts.samples_per_bin.max(1) as f64;
    let (mut prev, _) = midpoint_pieces(&pieces, step, &integrand);
    let mut rel = f64::INFINITY;
    for _ in 0..opts.max_doublings {
        step *= 0.5;
        let (next, abs) = midpoint_pieces(&pieces, step, &integrand);
        let change = (next - prev).norm();
        if abs == 0.0 {
            return Ok(next);
        }
        rel = change / abs;
        if change <= opts.rel_tol * abs + floor {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNonConvergence(rel))
}

/// Detected coincidence signal `S = |∫ Γ M_i M_s dω|²`.
pub fn coincidence_signal_continuum<G: SpectralAmplitude + ?Sized>(
    m_i: &TransferFunction,
    m_s: &TransferFunction,
    gamma: &G,
    opts: &QuadratureOptions,
) -> Result<f64> {
    Ok(coincidence_amplitude(m_i, m_s, gamma, opts)?.norm_sqr())
}

/// Matrix `C_jk = ∫ Γ(ω) g_j(ω) g_k(−ω) dω` of unit-weight (possibly
/// blurred) modes. For any weights the continuum amplitude equals
/// `u_iᵀ C u_s`, so `C` is the state the shaper actually measures.
pub fn effective_coefficients<G: SpectralAmplitude + ?Sized>(
    bins_i: &[FrequencyBin],
    bins_s: &[FrequencyBin],
    blur_sigma: f64,
    gamma: &G,
    opts: &QuadratureOptions,
) -> Result<CMatrix> {
    let unit = |n: usize, j: usize| {
        let mut v = vec![ZERO; n];
        v[j] = Complex64::new(1.0, 0.0);
        v
    };
    let (di, ds) = (bins_i.len(), bins_s.len());
    let mut c = CMatrix::zeros(di, ds);
    for j in 0..di {
        let m_i = TransferFunction::new(Side::Idler, bins_i.to_vec(), unit(di, j), blur_sigma)?;
        for k in 0..ds {
            let m_s = TransferFunction::new(Side::Signal, bins_s.to_vec(), unit(ds, k), blur_sigma)?;
            c[(j, k)] = coincidence_amplitude(&m_i, &m_s, gamma, opts)?;
        }
    }
    Ok(c)
}

/// `S = |Σ_l u^i_l u^s_l c_l|²` for the diagonal state `Σ c_l |l⟩|l⟩`.
pub fn projective_signal(u_i: &[Complex64], u_s: &[Complex64], c: &[Complex64]) -> Result<f64> {
    if u_i.len() != c.len() || u_s.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            found: if u_i.len() != c.len() { u_i.len() } else { u_s.len() },
        });
    }
    let amp: Complex64 = u_i.iter().zip(u_s).zip(c).map(|((a, b), c)| a * b * c).sum();
    Ok(amp.norm_sqr())
}

/// Same as [`projective_signal`] for a general coefficient matrix.
pub fn projective_signal_matrix(u_i: &[Complex64], u_s: &[Complex64], c: &CMatrix) -> Result<f64> {
    if u_i.len() != c.nrows() || u_s.len() != c.ncols() {
        return Err(Error::DimensionMismatch {
            expected: c.nrows(),
            found: u_i.len(),
        });
    }
    let mut amp = ZERO;
    for (j, a) in u_i.iter().enumerate() {
        for (k, b) in u_s.iter().enumerate() {
            amp += a * b * c[(j, k)];
        }
    }
    Ok(amp.norm_sqr())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Net pair rate (Hz) of the brightest single-bin-pair projection, which
    /// has unit signal.
    pub peak_pair_rate: f64,
    pub background_rate: f64,
    /// Integration time per projector (s).
    pub integration_time: f64,
    pub rng_seed: u64,
}

impl DetectorModel {
    pub fn new(peak_pair_rate: f64, background_rate: f64, integration_time: f64, rng_seed: u64) -> Result<Self> {
        if !(peak_pair_rate >= 0.0 && peak_pair_rate.is_finite()) {
            return Err(invalid("peak_pair_rate", format!("must be >= 0, got {peak_pair_rate}")));
        }
        if !(background_rate >= 0.0 && background_rate.is_finite()) {
            return Err(invalid("background_rate", format!("must be >= 0, got {background_rate}")));
        }
        if !(integration_time > 0.0 && integration_time.is_finite()) {
            return Err(invalid("integration_time", format!("must be > 0, got {integration_time}")));
        }
        Ok(Self {
            peak_pair_rate,
            background_rate,
            integration_time,
            rng_seed,
        })
    }

    /// Mean raw counts for a peak-normalized signal.
    pub fn mean_counts(&self, signal: f64) -> f64 {
        (signal * self.peak_pair_rate + self.background_rate) * self.integration_time
    }

    pub fn mean_background(&self) -> f64 {
        self.background_rate * self.integration_time
    }

    /// The generator for this detector's seed.
    pub fn rng(&self) -> rand_chacha::ChaCha8Rng {
        crate::seed::rng(self.rng_seed)
    }
}

/// Outcome of one projective measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub projector: String,
    pub raw_counts: u64,
    pub background_counts: u64,
    pub integration_time: f64,
    /// Set when background subtraction hit zero.
    #[serde(default)]
    pub clamped: bool,
}

impl CountRecord {
    pub fn new(projector: impl Into<String>, raw_counts: u64, background_counts: u64, integration_time: f64) -> Self {
        Self {
            projector: projector.into(),
            raw_counts,
            background_counts,
            integration_time,
            clamped: background_counts > raw_counts,
        }
    }

    /// `raw − background`, clamped at zero.
    pub fn net_counts(&self) -> u64 {
        self.raw_counts.saturating_sub(self.background_counts)
    }
}

pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Draws raw and background counts for a peak-normalized signal.
pub fn sample_counts<R: Rng + ?Sized>(
    signal: f64,
    detector: &DetectorModel,
    projector: impl Into<String>,
    rng: &mut R,
) -> Result<CountRecord> {
    if !(signal >= 0.0 && signal.is_finite()) {
        return Err(invalid("signal", format!("must be finite and >= 0, got {signal}")));
    }
    let raw = poisson(detector.mean_counts(signal), rng);
    let bg = poisson(detector.mean_background(), rng);
    Ok(CountRecord::new(projector, raw, bg, detector.integration_time))
}

pub const COUNTS_SCHEMA_VERSION: u32 = 1;
const CSV_MAGIC: &str = "# qudit-lab counts v";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsJson {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    records: Vec<CountRecord>,
}

pub fn counts_to_json(records: &[CountRecord], provenance: Option<&Provenance>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CountsJson {
        schema_version: COUNTS_SCHEMA_VERSION,
        provenance: provenance.cloned(),
        records: records.to_vec(),
    })?)
}

pub fn counts_from_json(text: &str) -> Result<Vec<CountRecord>> {
    let parsed: CountsJson = serde_json::from_str(text)?;
    if parsed.schema_version != COUNTS_SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported counts schema {}", parsed.schema_version)));
    }
    Ok(parsed
        .records
        .into_iter()
        .map(|r| CountRecord::new(r.projector, r.raw_counts, r.background_counts, r.integration_time))
        .collect())
}

/// CSV with a version line, an optional provenance comment, then
/// `projector,raw,background,time` rows.
pub fn write_counts_csv<W: Write>(records: &[CountRecord], provenance: Option<&Provenance>, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_MAGIC}{COUNTS_SCHEMA_VERSION}")?;
    if let Some(p) = provenance {
        writeln!(out, "{}", p.csv_comment())?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["projector", "raw", "background", "time"])?;
    for r in records {
        w.write_record([
            r.projector.clone(),
            r.raw_counts.to_string(),
            r.background_counts.to_string(),
            r.integration_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: BufRead>(mut input: R) -> Result<Vec<CountRecord>> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let version = first
        .trim()
        .strip_prefix(CSV_MAGIC)
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Config("missing counts CSV version line".into()))?;
    if version != COUNTS_SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported counts schema {version}")));
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<(String, u64, u64, f64)>() {
        let (p, raw, bg, t) = row?;
        out.push(CountRecord::new(p, raw, bg, t));
    }
    Ok(out)
}

/// Per-level attenuation equalizing `|c_j|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcrusteanFilter {
    /// Product `|u^i_j u^s_j|` for each level; the weakest level is 1.
    pub pair_amplitudes: Vec<f64>,
}

impl ProcrusteanFilter {
    /// Amplitude applied to each photon separately (`√` of the pair value).
    pub fn photon_amplitudes(&self) -> Vec<f64> {
        self.pair_amplitudes.iter().map(|a| a.sqrt()).collect()
    }

    /// Intensity transmission per photon.
    pub fn photon_intensities(&self) -> Vec<f64> {
        self.pair_amplitudes.clone()
    }

    /// Filtered, unnormalized coefficients.
    pub fn apply(&self, c: &[Complex64]) -> Vec<Complex64> {
        c.iter().zip(&self.pair_amplitudes).map(|(z, a)| z * a).collect()
    }
}

fn check_nonzero(c: &[Complex64]) -> Result<()> {
    if let Some(j) = c.iter().position(|z| !(z.norm() > 0.0)) {
        return Err(Error::ZeroAmplitude(format!("level {j} has zero amplitude and cannot be equalized; drop the bin")));
    }
    Ok(())
}

/// Attenuates every level down to the weakest one.
pub fn procrustean_filter(c: &[Complex64]) -> Result<ProcrusteanFilter> {
    check_nonzero(c)?;
    let min = c.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    Ok(ProcrusteanFilter {
        pair_amplitudes: c.iter().map(|z| min / z.norm()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativeProcrustes {
    pub filter: ProcrusteanFilter,
    pub rounds: usize,
    /// Net counts per level in the last round.
    pub final_counts: Vec<u64>,
}

/// Two counts agree within their combined Poisson 2σ.
pub fn counts_agree(counts: &[u64]) -> bool {
    counts.iter().enumerate().all(|(j, &a)| {
        counts[j + 1..]
            .iter()
            .all(|&b| (a as f64 - b as f64).abs() <= 2.0 * ((a + b) as f64).sqrt())
    })
}

/// Measure the `|j⟩|j⟩` rates, attenuate toward the weakest, repeat until the
/// rates agree within Poisson 2σ.
pub fn procrustean_filter_iterative<R: Rng + ?Sized>(
    c: &[Complex64],
    detector: &DetectorModel,
    max_rounds: usize,
    rng: &mut R,
) -> Result<IterativeProcrustes> {
    check_nonzero(c)?;
    let peak = c.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    let mut amps = vec![1.0; c.len()];
    let mut counts = vec![0u64; c.len()];
    for round in 1..=max_rounds {
        for (j, z) in c.iter().enumerate() {
            let s = (amps[j] * z.norm()).powi(2) / peak;
            counts[j] = sample_counts(s, detector, format!("z{j}z{j}"), rng)?.net_counts();
        }
        if counts_agree(&counts) {
            return Ok(IterativeProcrustes {
                filter: ProcrusteanFilter { pair_amplitudes: amps },
                rounds: round,
                final_counts: counts,
            });
        }
        let min = *counts.iter().min().unwrap_or(&0);
        if min == 0 {
            return Err(Error::ZeroAmplitude("a level produced no counts; increase integration time".into()));
        }
        for (a, &n) in amps.iter_mut().zip(&counts) {
            *a *= (min as f64 / n as f64).sqrt();
        }
    }
    Err(Error::NonConvergence {
        iterations: max_rounds,
        gradient_norm: f64::NAN,
    })
}
