//! Continuous joint spectral amplitude of cw/pulsed down-conversion and its
//! projection onto frequency bins.
//!
//! All frequencies are relative angular frequencies (rad/s) measured from
//! the degenerate point, so a monochromatic pump enforces `ω_i + ω_s = 0`.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, ZERO};
use crate::qudit::{validate_bins, FrequencyBin};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// `sin(u)/u = 1/2`
pub const SINC_HALF_MAX: f64 = 1.895_494_267_033_981;

/// Gaussian σ for a given full width at half maximum.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

/// Angular-frequency width spanned by a wavelength interval of `width`
/// centred on `center` (exact, not linearized).
pub fn wavelength_width_to_angular(width: f64, center: f64) -> f64 {
    let w = |l: f64| 2.0 * PI * SPEED_OF_LIGHT / l;
    w(center - 0.5 * width) - w(center + 0.5 * width)
}

/// Relative angular frequency of a wavelength, measured from `center`.
pub fn wavelength_to_detuning(wavelength: f64, center: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT * (1.0 / wavelength - 1.0 / center)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpMode {
    ContinuousWave,
    GaussianPulse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpModel {
    pub mode: PumpMode,
    /// Absolute pump angular frequency; informational only.
    pub center_frequency: f64,
    /// Full width at half maximum of the envelope in `ω_i + ω_s`; unused
    /// for a continuous-wave pump.
    pub bandwidth_fwhm: f64,
    /// Width ε of the Gaussian surrogate for `δ(ω_i + ω_s)`.
    pub cw_width: f64,
}

impl PumpModel {
    pub fn continuous_wave(center_frequency: f64, cw_width: f64) -> Result<Self> {
        if !(cw_width > 0.0) {
            return Err(invalid("cw_width", format!("must be positive, got {cw_width}")));
        }
        Ok(Self {
            mode: PumpMode::ContinuousWave,
            center_frequency,
            bandwidth_fwhm: 0.0,
            cw_width,
        })
    }

    pub fn gaussian(center_frequency: f64, bandwidth_fwhm: f64) -> Result<Self> {
        if !(bandwidth_fwhm > 0.0 && bandwidth_fwhm.is_finite()) {
            return Err(invalid(
                "bandwidth_fwhm",
                format!("must be positive for a pulsed pump, got {bandwidth_fwhm}"),
            ));
        }
        Ok(Self {
            mode: PumpMode::GaussianPulse,
            center_frequency,
            bandwidth_fwhm,
            cw_width: 0.0,
        })
    }

    /// σ of the Gaussian in `ω_i + ω_s` actually evaluated.
    pub fn sigma(&self) -> f64 {
        match self.mode {
            PumpMode::ContinuousWave => self.cw_width,
            PumpMode::GaussianPulse => fwhm_to_sigma(self.bandwidth_fwhm),
        }
    }
}

/// Unit-peak pump envelope α(ω_i, ω_s).
pub fn pump_envelope(omega_i: f64, omega_s: f64, pump: &PumpModel) -> Complex64 {
    let sum = omega_i + omega_s;
    let sigma = pump.sigma();
    Complex64::new((-sum * sum / (2.0 * sigma * sigma)).exp(), 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMatchingProfile {
    Sinc,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalModel {
    /// Degenerate down-conversion wavelength (m).
    pub center_wavelength: f64,
    /// Full width at half maximum of the amplitude envelope, in wavelength (m).
    pub spdc_bandwidth_fwhm: f64,
    pub profile: PhaseMatchingProfile,
}

impl Default for CrystalModel {
    fn default() -> Self {
        Self {
            center_wavelength: 1064e-9,
            spdc_bandwidth_fwhm: 105e-9,
            profile: PhaseMatchingProfile::Sinc,
        }
    }
}

impl CrystalModel {
    pub fn new(center_wavelength: f64, spdc_bandwidth_fwhm: f64, profile: PhaseMatchingProfile) -> Result<Self> {
        if !(center_wavelength > 0.0) {
            return Err(invalid("center_wavelength", "must be positive"));
        }
        if !(spdc_bandwidth_fwhm > 0.0 && spdc_bandwidth_fwhm < 2.0 * center_wavelength) {
            return Err(invalid(
                "spdc_bandwidth_fwhm",
                format!("must be positive and below twice the center wavelength, got {spdc_bandwidth_fwhm}"),
            ));
        }
        Ok(Self {
            center_wavelength,
            spdc_bandwidth_fwhm,
            profile,
        })
    }

    /// FWHM of the envelope in single-photon detuning (rad/s).
    pub fn bandwidth_angular(&self) -> f64 {
        wavelength_width_to_angular(self.spdc_bandwidth_fwhm, self.center_wavelength)
    }

    /// Scale κ such that the envelope is `sinc(κ x)` / `exp(−(κx)²/2)`.
    fn kappa(&self) -> f64 {
        let half = 0.5 * self.bandwidth_angular();
        match self.profile {
            PhaseMatchingProfile::Sinc => SINC_HALF_MAX / half,
            PhaseMatchingProfile::Gaussian => 1.0 / fwhm_to_sigma(2.0 * half),
        }
    }

    /// Detuning of the first zero of the sinc profile.
    pub fn first_zero(&self) -> f64 {
        PI / self.kappa()
    }
}

/// Unit-peak phase-matching envelope Φ as a function of the single-photon
/// detuning `x = (ω_i − ω_s)/2`.
pub fn phase_matching(omega_i: f64, omega_s: f64, crystal: &CrystalModel) -> Complex64 {
    let u = crystal.kappa() * 0.5 * (omega_i - omega_s);
    let v = match crystal.profile {
        PhaseMatchingProfile::Sinc => {
            if u.abs() < 1e-8 {
                1.0 - u * u / 6.0
            } else {
                u.sin() / u
            }
        }
        PhaseMatchingProfile::Gaussian => (-0.5 * u * u).exp(),
    };
    Complex64::new(v, 0.0)
}

/// Sampled joint spectral amplitude Λ on a rectangular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct JsaGrid {
    pub values: CMatrix,
    pub axis_i: Vec<f64>,
    pub axis_s: Vec<f64>,
}

fn check_axis(axis: &[f64], name: &'static str) -> Result<()> {
    if axis.is_empty() || axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|x| !x.is_finite()) {
        return Err(Error::BadAxis(name));
    }
    Ok(())
}

/// Cell `[lo, hi]` owned by each sample: midpoints between neighbours,
/// clipped to the sampled range.
fn cells(axis: &[f64]) -> Vec<(f64, f64)> {
    let n = axis.len();
    (0..n)
        .map(|k| {
            let lo = if k == 0 { axis[0] } else { 0.5 * (axis[k - 1] + axis[k]) };
            let hi = if k == n - 1 { axis[n - 1] } else { 0.5 * (axis[k] + axis[k + 1]) };
            (lo, hi)
        })
        .collect()
}

/// Length of each cell inside the bin.
fn bin_weights(axis: &[f64], bin: &FrequencyBin) -> Vec<(usize, f64)> {
    cells(axis)
        .into_iter()
        .enumerate()
        .filter_map(|(k, (lo, hi))| {
            let w = hi.min(bin.upper()) - lo.max(bin.lower());
            (w > 0.0).then_some((k, w))
        })
        .collect()
}

impl JsaGrid {
    /// Validates axes against the matrix shape.
    pub fn new(values: CMatrix, axis_i: Vec<f64>, axis_s: Vec<f64>) -> Result<Self> {
        check_axis(&axis_i, "axis_i")?;
        check_axis(&axis_s, "axis_s")?;
        if values.nrows() != axis_i.len() {
            return Err(Error::DimensionMismatch {
                expected: axis_i.len(),
                found: values.nrows(),
            });
        }
        if values.ncols() != axis_s.len() {
            return Err(Error::DimensionMismatch {
                expected: axis_s.len(),
                found: values.ncols(),
            });
        }
        Ok(Self { values, axis_i, axis_s })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.norm()
    }

    /// Writes `omega_i,omega_s,re,im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega_i", "omega_s", "re", "im"])?;
        for (r, wi) in self.axis_i.iter().enumerate() {
            for (c, ws) in self.axis_s.iter().enumerate() {
                let z = self.values[(r, c)];
                w.write_record([wi.to_string(), ws.to_string(), z.re.to_string(), z.im.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` evenly spaced samples on `[start, end]`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n).map(|k| start + step * k as f64).collect()
        }
    }
}

/// Λ = α·Φ sampled on the given axes and scaled to unit Frobenius norm.
pub fn build_jsa(pump: &PumpModel, crystal: &CrystalModel, axis_i: &[f64], axis_s: &[f64]) -> Result<JsaGrid> {
    check_axis(axis_i, "axis_i")?;
    check_axis(axis_s, "axis_s")?;
    let values = CMatrix::from_fn(axis_i.len(), axis_s.len(), |r, c| {
        let (wi, ws) = (axis_i[r], axis_s[c]);
        pump_envelope(wi, ws, pump) * phase_matching(wi, ws, crystal)
    });
    let norm = values.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroAmplitude("joint spectral amplitude vanishes on the grid".into()));
    }
    JsaGrid::new(values.unscale(norm), axis_i.to_vec(), axis_s.to_vec())
}

/// Entanglement content of a bipartite amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchmidtReport {
    pub entropy_ebits: f64,
    pub schmidt_number: f64,
    /// Normalized singular values, nonincreasing, `Σ s² = 1`.
    pub singular_values: Vec<f64>,
}

pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-15;

impl SchmidtReport {
    /// Builds the report from (unnormalized) singular values.
    pub fn from_singular_values(mut sv: Vec<f64>, floor: f64) -> Result<Self> {
        if sv.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::NonFinite("singular values"));
        }
        sv.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sv.iter().map(|s| s * s).sum();
        if !(total > 0.0) {
            return Err(Error::ZeroAmplitude("all singular values vanish".into()));
        }
        let norm = total.sqrt();
        sv.iter_mut().for_each(|s| *s /= norm);
        let weights: Vec<f64> = sv.iter().map(|s| s * s).collect();
        let entropy = -weights
            .iter()
            .filter(|&&w| w >= floor)
            .map(|&w| w * w.log2())
            .sum::<f64>();
        let schmidt_number = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        Ok(Self {
            entropy_ebits: entropy.max(0.0),
            schmidt_number,
            singular_values: sv,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "singular_value"])?;
        for (k, s) in self.singular_values.iter().enumerate() {
            w.write_record([k.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Schmidt decomposition of a sampled amplitude on a uniform grid.
pub fn schmidt_analysis(grid: &JsaGrid, floor: f64) -> Result<SchmidtReport> {
    if !linalg::is_finite(&grid.values) {
        return Err(Error::NonFinite("joint spectral amplitude"));
    }
    let sv: Vec<f64> = grid.values.singular_values().iter().copied().collect();
    SchmidtReport::from_singular_values(sv, floor)
}

/// `exp(−(ω_i+ω_s)²/2σ_p²) · exp(−x²/2σ_c²)`, `x = (ω_i−ω_s)/2`, sampled on
/// `n × n` points covering ±8 standard deviations of either marginal.
pub fn double_gaussian_jsa(sigma_p: f64, sigma_c: f64, n: usize) -> Result<JsaGrid> {
    if !(sigma_p > 0.0 && sigma_c > 0.0) {
        return Err(invalid("sigma", "widths must be positive"));
    }
    let marginal = (sigma_p * sigma_p + 4.0 * sigma_c * sigma_c).sqrt() / 2.0;
    let ax = linspace(-8.0 * marginal, 8.0 * marginal, n);
    let values = CMatrix::from_fn(n, n, |r, c| {
        let (u, x) = (ax[r] + ax[c], 0.5 * (ax[r] - ax[c]));
        Complex64::new((-u * u / (2.0 * sigma_p * sigma_p) - x * x / (2.0 * sigma_c * sigma_c)).exp(), 0.0)
    });
    let norm = values.norm();
    JsaGrid::new(values.unscale(norm), ax.clone(), ax)
}

/// Closed-form `K = (r + 1/r)/2` with `r = 2σ_c/σ_p`.
pub fn double_gaussian_schmidt_number(sigma_p: f64, sigma_c: f64) -> f64 {
    let r = 2.0 * sigma_c / sigma_p;
    0.5 * (r + 1.0 / r)
}

/// Anything that can be projected onto a pair of frequency bins.
pub trait JointAmplitude {
    /// Unnormalized `∬ f_j^{i*} f_k^{s*} Λ dω_i dω_s` using `samples` midpoint
    /// nodes per bin and axis.
    fn bin_coefficient(&self, bin_i: &FrequencyBin, bin_s: &FrequencyBin, samples: usize) -> Result<Complex64>;
}

/// Analytic Λ = α·Φ. A continuous-wave pump is treated as an exact
/// `δ(ω_i + ω_s)`, which reduces the bin integral to a line integral.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticJsa {
    pub pump: PumpModel,
    pub crystal: CrystalModel,
}

fn midpoint(lo: f64, hi: f64, n: usize, mut f: impl FnMut(f64) -> Complex64) -> Complex64 {
    let h = (hi - lo) / n as f64;
    (0..n).map(|k| f(lo + h * (k as f64 + 0.5))).sum::<Complex64>() * h
}

impl JointAmplitude for AnalyticJsa {
    fn bin_coefficient(&self, bin_i: &FrequencyBin, bin_s: &FrequencyBin, samples: usize) -> Result<Complex64> {
        let n = samples.max(1);
        let norm = bin_i.amplitude() * bin_s.amplitude();
        match self.pump.mode {
            PumpMode::ContinuousWave => {
                let mirror = bin_s.mirrored();
                let lo = bin_i.lower().max(mirror.lower());
                let hi = bin_i.upper().min(mirror.upper());
                if hi <= lo {
                    return Ok(ZERO);
                }
                Ok(midpoint(lo, hi, n, |w| phase_matching(w, -w, &self.crystal)) * norm)
            }
            PumpMode::GaussianPulse => {
                let v = midpoint(bin_i.lower(), bin_i.upper(), n, |wi| {
                    midpoint(bin_s.lower(), bin_s.upper(), n, |ws| {
                        pump_envelope(wi, ws, &self.pump) * phase_matching(wi, ws, &self.crystal)
                    })
                });
                Ok(v * norm)
            }
        }
    }
}

/// Arbitrary analytic amplitude Λ(ω_i, ω_s).
pub struct FnJsa<F>(pub F);

impl<F: Fn(f64, f64) -> Complex64> JointAmplitude for FnJsa<F> {
    fn bin_coefficient(&self, bin_i: &FrequencyBin, bin_s: &FrequencyBin, samples: usize) -> Result<Complex64> {
        let n = samples.max(1);
        let v = midpoint(bin_i.lower(), bin_i.upper(), n, |wi| {
            midpoint(bin_s.lower(), bin_s.upper(), n, |ws| (self.0)(wi, ws))
        });
        Ok(v * bin_i.amplitude() * bin_s.amplitude())
    }
}

impl JointAmplitude for JsaGrid {
    /// Integrates the piecewise-constant interpolant of the grid over the
    /// bin rectangle; `samples` is ignored since the grid fixes the
    /// resolution. Bins must lie inside the sampled range.
    fn bin_coefficient(&self, bin_i: &FrequencyBin, bin_s: &FrequencyBin, _samples: usize) -> Result<Complex64> {
        let inside = |axis: &[f64], bin: &FrequencyBin| {
            axis.len() > 1 && bin.lower() >= axis[0] && bin.upper() <= axis[axis.len() - 1]
        };
        if !inside(&self.axis_i, bin_i) || !inside(&self.axis_s, bin_s) {
            return Err(Error::BinOutsideSupport(usize::MAX));
        }
        let rows = bin_weights(&self.axis_i, bin_i);
        let cols = bin_weights(&self.axis_s, bin_s);
        let mut acc = ZERO;
        for &(r, wr) in &rows {
            for &(c, wc) in &cols {
                acc += self.values[(r, c)] * (wr * wc);
            }
        }
        Ok(acc * bin_i.amplitude() * bin_s.amplitude())
    }
}

pub const DEFAULT_SAMPLES_PER_BIN: usize = 64;

/// Projects Λ onto `bins_i × bins_s` and normalizes `Σ|c_jk|² = 1`.
pub fn bin_coefficients<A: JointAmplitude + ?Sized>(
    amplitude: &A,
    bins_i: &[FrequencyBin],
    bins_s: &[FrequencyBin],
    samples: usize,
) -> Result<CMatrix> {
    let raw = raw_bin_coefficients(amplitude, bins_i, bins_s, samples)?;
    let norm = raw.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroAmplitude("all bin coefficients vanish".into()));
    }
    Ok(raw.unscale(norm))
}

/// As [`bin_coefficients`] without the final normalization.
pub fn raw_bin_coefficients<A: JointAmplitude + ?Sized>(
    amplitude: &A,
    bins_i: &[FrequencyBin],
    bins_s: &[FrequencyBin],
    samples: usize,
) -> Result<CMatrix> {
    validate_bins(bins_i)?;
    validate_bins(bins_s)?;
    let mut c = CMatrix::zeros(bins_i.len(), bins_s.len());
    for (j, bi) in bins_i.iter().enumerate() {
        for (k, bs) in bins_s.iter().enumerate() {
            c[(j, k)] = amplitude.bin_coefficient(bi, bs, samples).map_err(|e| match e {
                Error::BinOutsideSupport(_) => Error::BinOutsideSupport(j.max(k)),
                e => e,
            })?;
        }
    }
    if !linalg::is_finite(&c) {
        return Err(Error::NonFinite("bin coefficients"));
    }
    Ok(c)
}

pub const DEFAULT_OFF_DIAGONAL_TOL: f64 = 1e-9;

/// The diagonal `c_j` of a mirror-paired projection, normalized.
pub fn diagonal_coefficients<A: JointAmplitude + ?Sized>(
    amplitude: &A,
    bins_i: &[FrequencyBin],
    bins_s: &[FrequencyBin],
    samples: usize,
    off_diagonal_tol: f64,
) -> Result<Vec<Complex64>> {
    if bins_i.len() != bins_s.len() {
        return Err(Error::DimensionMismatch {
            expected: bins_i.len(),
            found: bins_s.len(),
        });
    }
    let c = bin_coefficients(amplitude, bins_i, bins_s, samples)?;
    let diag_mass: f64 = c.diagonal().iter().map(|z| z.norm_sqr()).sum();
    let off = (1.0 - diag_mass).max(0.0);
    if off > off_diagonal_tol {
        return Err(Error::OffDiagonal(off));
    }
    let norm = diag_mass.sqrt();
    Ok(c.diagonal().iter().map(|z| z / norm).collect())
}
