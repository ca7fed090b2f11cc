//! End-to-end pipelines shared by the command-line runner and the
//! acceptance checks: shaped and filtered sources, simulated tomography and
//! Bell scans.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::CMatrix;
use crate::qudit::{equal_bins, fidelity_pure, maximally_entangled, symmetric_noise, BipartiteState, DensityMatrix, FrequencyBin};
use crate::shaper::{effective_coefficients, procrustean_filter, DetectionAmplitude, DetectorModel, ProcrusteanFilter, QuadratureOptions};
use crate::spectra::{fwhm_to_sigma, wavelength_to_detuning, wavelength_width_to_angular, CrystalModel};
use crate::tomography::{mle_reconstruct, monte_carlo_error, simulate_tomography, tomography_basis, CountNoise, MleOptions, MleResult, MonteCarloEstimate, TomographyRun};

/// `d` signal bins tiling a fixed band, mirrored onto the idler side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub dim: usize,
    /// Band edges as signal wavelengths (m); the band is the same for every `d`.
    pub band_start_wavelength: f64,
    pub band_end_wavelength: f64,
    /// Fraction of each slot covered by its bin.
    pub fill: f64,
}

impl BinLayout {
    /// `(idler, signal)` bins in detuning (rad/s).
    pub fn bins(&self, crystal: &CrystalModel) -> Result<(Vec<FrequencyBin>, Vec<FrequencyBin>)> {
        let a = wavelength_to_detuning(self.band_start_wavelength, crystal.center_wavelength);
        let b = wavelength_to_detuning(self.band_end_wavelength, crystal.center_wavelength);
        let (lo, hi) = (a.min(b), a.max(b));
        if !(lo >= 0.0) {
            return Err(invalid("band", "signal band must lie on the short-wavelength side of degeneracy"));
        }
        let signal = equal_bins(self.dim, lo, hi, self.fill)?;
        let idler = signal.iter().map(FrequencyBin::mirrored).collect();
        Ok((idler, signal))
    }
}

/// Gaussian σ (rad/s) of a resolution given as a wavelength FWHM.
pub fn blur_sigma_for(resolution_fwhm: f64, crystal: &CrystalModel) -> f64 {
    fwhm_to_sigma(wavelength_width_to_angular(resolution_fwhm, crystal.center_wavelength))
}

/// A cw source seen through the shaper with finite resolution, after
/// Procrustean equalization of the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapedSource {
    pub bins_i: Vec<FrequencyBin>,
    pub bins_s: Vec<FrequencyBin>,
    /// Unfiltered effective coefficients of the blurred modes.
    pub coefficients: CMatrix,
    pub filter: ProcrusteanFilter,
    /// Normalized measured state `a_j a_k C_jk`.
    pub state: BipartiteState,
}

pub fn shaped_source(crystal: &CrystalModel, layout: &BinLayout, blur_sigma: f64, quadrature: &QuadratureOptions) -> Result<ShapedSource> {
    let (bins_i, bins_s) = layout.bins(crystal)?;
    let gamma = DetectionAmplitude::wide_for(*crystal, &bins_s);
    let c = effective_coefficients(&bins_i, &bins_s, blur_sigma, &gamma, quadrature)?;
    let diag: Vec<Complex64> = c.diagonal().iter().copied().collect();
    let filter = procrustean_filter(&diag)?;
    let a = filter.photon_amplitudes();
    let filtered = CMatrix::from_fn(c.nrows(), c.ncols(), |j, k| c[(j, k)] * (a[j] * a[k]));
    let state = BipartiteState::normalized(filtered)?;
    Ok(ShapedSource { bins_i, bins_s, coefficients: c, filter, state })
}

/// Options for one simulated tomography experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographySetup {
    pub state: DensityMatrix,
    pub target: BipartiteState,
    pub detector: DetectorModel,
    pub noise: CountNoise,
    pub mle: MleOptions,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyOutcome {
    pub run: TomographyRun,
    pub result: MleResult,
    pub fidelity: f64,
    pub error: Option<MonteCarloEstimate>,
}

/// Simulate counts, reconstruct, and attach a Monte-Carlo 2σ to the fidelity
/// when `mc_samples ≥ 2`.
pub fn run_tomography(setup: &TomographySetup) -> Result<TomographyOutcome> {
    let basis = tomography_basis(setup.state.dim())?;
    let run = simulate_tomography(&setup.state, &basis, &setup.detector, setup.noise, setup.mle)?;
    let result = mle_reconstruct(&run)?;
    let fidelity = fidelity_pure(&result.density, &setup.target)?;
    let error = if setup.mc_samples >= 2 {
        let target = setup.target.clone();
        Some(monte_carlo_error(
            &run,
            move |r| fidelity_pure(r, &target).unwrap_or(f64::NAN),
            setup.mc_samples,
            setup.mc_seed,
            1.0,
        )?)
    } else {
        None
    };
    Ok(TomographyOutcome { run, result, fidelity, error })
}

/// `λ|ψ⟩⟨ψ| + (1−λ)𝟙/d²` of a shaped source, or of `me(d)` without one.
pub fn prepared_state(source: Option<&ShapedSource>, dim: usize, lambda: f64) -> Result<DensityMatrix> {
    match source {
        Some(s) => symmetric_noise(&s.state, lambda),
        None => symmetric_noise(&maximally_entangled(dim)?, lambda),
    }
}
