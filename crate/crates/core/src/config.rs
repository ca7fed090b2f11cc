//! TOML experiment configuration. Unknown keys are rejected and physical
//! quantities carry their unit in the key name (`_nm`, `_hz`, `_s`,
//! `_rad_per_s`). Every section is optional and falls back to the defaults
//! documented on each field; `configs/` holds commented examples.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bell::DetectionSettings;
use crate::error::{invalid, Error, Result};
use crate::experiment::BinLayout;
use crate::shaper::{DetectorModel, QuadratureOptions};
use crate::spectra::{CrystalModel, PhaseMatchingProfile, PumpMode};
use crate::tomography::{CountNoise, Likelihood, MleOptions};

const NM: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub schmidt: SchmidtConfig,
    #[serde(default)]
    pub tomography: TomographyConfig,
    #[serde(default)]
    pub bell: BellConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchmidtConfig {
    /// Refuse grids with more than this many samples.
    pub max_grid_cells: usize,
    /// Schmidt weights below this are left out of the entropy sum.
    pub entropy_floor: f64,
    pub model: SchmidtModel,
}

impl Default for SchmidtConfig {
    fn default() -> Self {
        Self {
            max_grid_cells: 4_000_000,
            entropy_floor: crate::spectra::DEFAULT_ENTROPY_FLOOR,
            model: SchmidtModel::DoubleGaussian(DoubleGaussianConfig::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchmidtModel {
    Spdc(SpdcConfig),
    DoubleGaussian(DoubleGaussianConfig),
    Flat(FlatConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdcConfig {
    pub pump: PumpMode,
    /// Pulse FWHM in `ω_i + ω_s`, or the width of the line surrogate for a
    /// continuous-wave pump.
    pub pump_fwhm_rad_per_s: f64,
    pub crystal_center_wavelength_nm: f64,
    pub spdc_bandwidth_fwhm_nm: f64,
    pub phase_matching: PhaseMatchingProfile,
    /// Samples per axis.
    pub grid_points: usize,
    /// Grid covers `±` this detuning; defaults to three SPDC bandwidths.
    pub grid_half_span_rad_per_s: Option<f64>,
}

impl Default for SpdcConfig {
    fn default() -> Self {
        Self {
            pump: PumpMode::GaussianPulse,
            pump_fwhm_rad_per_s: 2.0e13,
            crystal_center_wavelength_nm: 1064.0,
            spdc_bandwidth_fwhm_nm: 105.0,
            phase_matching: PhaseMatchingProfile::Gaussian,
            grid_points: 400,
            grid_half_span_rad_per_s: None,
        }
    }
}

impl SpdcConfig {
    pub fn crystal(&self) -> Result<CrystalModel> {
        CrystalModel::new(self.crystal_center_wavelength_nm * NM, self.spdc_bandwidth_fwhm_nm * NM, self.phase_matching)
    }
}

/// `exp(−(ω_i+ω_s)²/2σ_p²) · exp(−x²/2σ_c²)` with `x = (ω_i−ω_s)/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoubleGaussianConfig {
    pub pump_sigma_rad_per_s: f64,
    pub correlation_sigma_rad_per_s: f64,
    pub grid_points: usize,
}

impl Default for DoubleGaussianConfig {
    fn default() -> Self {
        Self {
            pump_sigma_rad_per_s: 1.0,
            correlation_sigma_rad_per_s: 5.0,
            grid_points: 480,
        }
    }
}

/// `d` equal Schmidt coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlatConfig {
    pub levels: usize,
}

impl Default for FlatConfig {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyConfig {
    pub dimension: usize,
    /// Weight of the pure state in the white-noise mixture.
    pub mixing_lambda: f64,
    pub count_noise: CountNoise,
    /// Net coincidence rate of the brightest single-bin pair.
    pub peak_pair_rate_hz: f64,
    pub background_rate_hz: f64,
    /// Integration time per projector.
    pub integration_time_s: f64,
    /// Resamples for the fidelity 2σ; below 2 disables the estimate.
    pub monte_carlo_samples: usize,
    pub mle_tolerance: f64,
    pub mle_max_iterations: usize,
    pub likelihood: Likelihood,
    /// Shaped, blurred and Procrustean-filtered source; absent means an
    /// ideal maximally entangled state.
    pub shaper: Option<ShaperConfig>,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            dimension: 2,
            mixing_lambda: 0.920,
            count_noise: CountNoise::Poisson,
            peak_pair_rate_hz: 43.0,
            background_rate_hz: 0.2,
            integration_time_s: 10.0,
            monte_carlo_samples: 100,
            mle_tolerance: 1e-10,
            mle_max_iterations: 20_000,
            likelihood: Likelihood::Poisson,
            shaper: None,
        }
    }
}

impl TomographyConfig {
    pub fn detector(&self, seed: u64) -> Result<DetectorModel> {
        DetectorModel::new(self.peak_pair_rate_hz, self.background_rate_hz, self.integration_time_s, seed)
    }

    pub fn mle(&self) -> Result<MleOptions> {
        if !(self.mle_tolerance > 0.0) {
            return Err(invalid("mle_tolerance", "must be positive"));
        }
        Ok(MleOptions {
            tolerance: self.mle_tolerance,
            max_iterations: self.mle_max_iterations,
            likelihood: self.likelihood,
            ..MleOptions::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.dimension) {
            return Err(invalid("dimension", format!("must be in 2..=8, got {}", self.dimension)));
        }
        if !(0.0..=1.0).contains(&self.mixing_lambda) {
            return Err(invalid("mixing_lambda", "must lie in [0, 1]"));
        }
        self.detector(0)?;
        self.mle()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShaperConfig {
    pub crystal_center_wavelength_nm: f64,
    pub spdc_bandwidth_fwhm_nm: f64,
    pub phase_matching: PhaseMatchingProfile,
    /// Signal-band edges; the same band is split into `dimension` bins.
    pub band_start_nm: f64,
    pub band_end_nm: f64,
    pub bin_fill: f64,
    /// Spectral resolution of the shaper as a FWHM; 0 disables blurring.
    pub resolution_fwhm_nm: f64,
    pub quadrature_rel_tol: f64,
}

impl Default for ShaperConfig {
    fn default() -> Self {
        Self {
            crystal_center_wavelength_nm: 1064.0,
            spdc_bandwidth_fwhm_nm: 105.0,
            phase_matching: PhaseMatchingProfile::Sinc,
            band_start_nm: 1062.0,
            band_end_nm: 1014.0,
            bin_fill: 0.9,
            resolution_fwhm_nm: 9.0,
            quadrature_rel_tol: 1e-8,
        }
    }
}

impl ShaperConfig {
    pub fn crystal(&self) -> Result<CrystalModel> {
        CrystalModel::new(self.crystal_center_wavelength_nm * NM, self.spdc_bandwidth_fwhm_nm * NM, self.phase_matching)
    }

    pub fn layout(&self, dim: usize) -> BinLayout {
        BinLayout {
            dim,
            band_start_wavelength: self.band_start_nm * NM,
            band_end_wavelength: self.band_end_nm * NM,
            fill: self.bin_fill,
        }
    }

    pub fn resolution_fwhm(&self) -> f64 {
        self.resolution_fwhm_nm * NM
    }

    pub fn quadrature(&self) -> QuadratureOptions {
        QuadratureOptions {
            rel_tol: self.quadrature_rel_tol,
            ..QuadratureOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellConfig {
    /// 2 or 3.
    pub dimension: usize,
    pub mixing_lambda: f64,
    /// Phase offsets in units of the basis index.
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub scan_points: usize,
    pub argmax_tolerance: f64,
    /// Simulated measurement points; absent means theory curves only.
    pub counts: Option<BellCountsConfig>,
}

impl Default for BellConfig {
    fn default() -> Self {
        let s = DetectionSettings::default();
        Self {
            dimension: 3,
            mixing_lambda: 1.0,
            alpha: s.alpha,
            beta: s.beta,
            scan_points: crate::bell::DEFAULT_SCAN_POINTS,
            argmax_tolerance: crate::bell::DEFAULT_ARGMAX_TOL,
            counts: None,
        }
    }
}

impl BellConfig {
    pub fn settings(&self) -> DetectionSettings {
        DetectionSettings { alpha: self.alpha, beta: self.beta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(invalid("dimension", format!("γ-states exist for 2 and 3, got {}", self.dimension)));
        }
        if !(0.0..=1.0).contains(&self.mixing_lambda) {
            return Err(invalid("mixing_lambda", "must lie in [0, 1]"));
        }
        if self.scan_points < 3 {
            return Err(invalid("scan_points", "need at least 3"));
        }
        if !(self.argmax_tolerance > 0.0) {
            return Err(invalid("argmax_tolerance", "must be positive"));
        }
        if let Some(c) = &self.counts {
            DetectorModel::new(c.peak_pair_rate_hz, c.background_rate_hz, c.integration_time_s, 0)?;
            if c.gamma_points < 2 {
                return Err(invalid("gamma_points", "need at least 2"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellCountsConfig {
    pub peak_pair_rate_hz: f64,
    pub background_rate_hz: f64,
    pub integration_time_s: f64,
    /// Uniform γ points on `[0, 1]` at which counts are simulated.
    pub gamma_points: usize,
    /// Poisson resamples per point for the 2σ bars.
    pub resamples: usize,
}

impl Default for BellCountsConfig {
    fn default() -> Self {
        Self {
            peak_pair_rate_hz: 13.0,
            background_rate_hz: 0.2,
            integration_time_s: 10.0,
            gamma_points: 11,
            resamples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Multiplies every tolerance.
    pub tolerance_scale: f64,
    /// Resamples for the tomography 2σ checks.
    pub monte_carlo_samples: usize,
    /// Random shaper settings in the continuum check.
    pub continuum_settings: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tolerance_scale: 1.0,
            monte_carlo_samples: 40,
            continuum_settings: 100,
        }
    }
}
