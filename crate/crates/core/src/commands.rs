//! The `schmidt`, `tomography` and `bell-scan` commands. Each returns its
//! files in memory so that callers decide where and how to write them.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bell::{self, bell_signals, cglmp_from_counts, gamma_argmax, gamma_scan, horodecki_chsh, local_deterministic_bound, unit_grid, ScanPoint};
use crate::config::{BellConfig, SchmidtConfig, SchmidtModel, SpdcConfig, TomographyConfig};
use crate::error::{invalid, Error, Result};
use crate::experiment::{blur_sigma_for, prepared_state, run_tomography, shaped_source, ShapedSource, TomographySetup};
use crate::linalg::CMatrix;
use crate::output::{stamped_csv, stamped_json, OutputSet, Provenance};
use crate::qudit::{fidelity_pure, gamma_state, maximally_entangled, symmetric_noise, DensityMatrix};
use crate::seed::{derive_path, stream};
use crate::shaper::{counts_to_json, sample_counts, write_counts_csv, CountRecord, DetectorModel};
use crate::tomography::brightest_bin_pair;
use crate::spectra::{build_jsa, double_gaussian_jsa, double_gaussian_schmidt_number, linspace, schmidt_analysis, JsaGrid, PumpMode, PumpModel, SchmidtReport, SPEED_OF_LIGHT};

#[derive(Serialize)]
struct SchmidtSummary<'a> {
    model: &'static str,
    grid_points: usize,
    entropy_ebits: f64,
    schmidt_number: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic_schmidt_number: Option<f64>,
    model_parameters: &'a SchmidtModel,
}

fn check_grid(n: usize, cap: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid("grid_points", "need at least 2"));
    }
    match n.checked_mul(n) {
        Some(cells) if cells <= cap => Ok(()),
        _ => Err(invalid("grid_points", format!("{n}² samples exceed max_grid_cells = {cap}"))),
    }
}

/// Sampled JSA of a crystal pumped at twice its center frequency.
pub fn spdc_grid(s: &SpdcConfig) -> Result<JsaGrid> {
    let crystal = s.crystal()?;
    let pump_center = 2.0 * PI * SPEED_OF_LIGHT / (0.5 * crystal.center_wavelength);
    let pump = match s.pump {
        PumpMode::ContinuousWave => PumpModel::continuous_wave(pump_center, s.pump_fwhm_rad_per_s)?,
        PumpMode::GaussianPulse => PumpModel::gaussian(pump_center, s.pump_fwhm_rad_per_s)?,
    };
    let half = s.grid_half_span_rad_per_s.unwrap_or(3.0 * crystal.bandwidth_angular());
    if !(half > 0.0) {
        return Err(invalid("grid_half_span_rad_per_s", "must be positive"));
    }
    let ax = linspace(-half, half, s.grid_points);
    build_jsa(&pump, &crystal, &ax, &ax)
}

pub fn cmd_schmidt(cfg: &SchmidtConfig, provenance: &Provenance) -> Result<OutputSet> {
    let (report, name, n, analytic): (SchmidtReport, _, _, _) = match &cfg.model {
        SchmidtModel::Spdc(s) => {
            check_grid(s.grid_points, cfg.max_grid_cells)?;
            let grid = spdc_grid(s)?;
            (schmidt_analysis(&grid, cfg.entropy_floor)?, "spdc", s.grid_points, None)
        }
        SchmidtModel::DoubleGaussian(g) => {
            check_grid(g.grid_points, cfg.max_grid_cells)?;
            let grid = double_gaussian_jsa(g.pump_sigma_rad_per_s, g.correlation_sigma_rad_per_s, g.grid_points)?;
            let k = double_gaussian_schmidt_number(g.pump_sigma_rad_per_s, g.correlation_sigma_rad_per_s);
            (schmidt_analysis(&grid, cfg.entropy_floor)?, "double_gaussian", g.grid_points, Some(k))
        }
        SchmidtModel::Flat(f) => {
            if f.levels == 0 {
                return Err(invalid("levels", "need at least one level"));
            }
            let sv = vec![1.0 / (f.levels as f64).sqrt(); f.levels];
            (SchmidtReport::from_singular_values(sv, cfg.entropy_floor)?, "flat", f.levels, None)
        }
    };
    let mut out = OutputSet::default();
    let summary = SchmidtSummary {
        model: name,
        grid_points: n,
        entropy_ebits: report.entropy_ebits,
        schmidt_number: report.schmidt_number,
        analytic_schmidt_number: analytic,
        model_parameters: &cfg.model,
    };
    out.add("schmidt_report.json", stamped_json(provenance, &summary)?);
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    out.add("schmidt_singular_values.csv", stamped_csv(provenance, csv));
    Ok(out)
}

#[derive(Serialize)]
struct TomographySummary {
    dimension: usize,
    mixing_lambda: f64,
    count_noise: crate::tomography::CountNoise,
    /// Fidelity of the simulated state itself with the target.
    prepared_fidelity: f64,
    fidelity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fidelity_two_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo_failures: Option<usize>,
    purity: f64,
    trace: f64,
    min_eigenvalue: f64,
    iterations: usize,
    gradient_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    procrustean_intensities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blur_sigma_rad_per_s: Option<f64>,
}

#[derive(Serialize)]
struct DensityFile<'a> {
    density: &'a DensityMatrix,
}

fn matrix_csv(m: &CMatrix, part: fn(num_complex::Complex64) -> f64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend((0..m.ncols()).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for r in 0..m.nrows() {
        let mut row = vec![r.to_string()];
        row.extend((0..m.ncols()).map(|c| part(m[(r, c)]).to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Source used by the tomography command: shaped if configured.
pub fn tomography_source(cfg: &TomographyConfig) -> Result<Option<(ShapedSource, f64)>> {
    cfg.shaper
        .as_ref()
        .map(|s| {
            let crystal = s.crystal()?;
            let sigma = if s.resolution_fwhm() > 0.0 { blur_sigma_for(s.resolution_fwhm(), &crystal) } else { 0.0 };
            Ok((shaped_source(&crystal, &s.layout(cfg.dimension), sigma, &s.quadrature())?, sigma))
        })
        .transpose()
}

pub fn cmd_tomography(cfg: &TomographyConfig, provenance: &Provenance) -> Result<OutputSet> {
    cfg.validate()?;
    let d = cfg.dimension;
    let source = tomography_source(cfg)?;
    let state = prepared_state(source.as_ref().map(|s| &s.0), d, cfg.mixing_lambda)?;
    let target = maximally_entangled(d)?;
    let prepared_fidelity = fidelity_pure(&state, &target)?;
    let setup = TomographySetup {
        state,
        target,
        detector: cfg.detector(derive_path(provenance.seed, &[stream::TOMOGRAPHY, stream::COUNTS]))?,
        noise: cfg.count_noise,
        mle: cfg.mle()?,
        mc_samples: cfg.monte_carlo_samples,
        mc_seed: derive_path(provenance.seed, &[stream::TOMOGRAPHY, stream::MONTE_CARLO]),
    };
    let outcome = run_tomography(&setup)?;
    let rho = &outcome.result.density;
    let eig = rho.eigenvalues();
    let summary = TomographySummary {
        dimension: d,
        mixing_lambda: cfg.mixing_lambda,
        count_noise: cfg.count_noise,
        prepared_fidelity,
        fidelity: outcome.fidelity,
        fidelity_two_sigma: outcome.error.as_ref().map(|e| e.two_sigma),
        monte_carlo_mean: outcome.error.as_ref().map(|e| e.mean),
        monte_carlo_failures: outcome.error.as_ref().map(|e| e.failures),
        purity: rho.purity(),
        trace: crate::linalg::trace(rho.elements()).re,
        min_eigenvalue: eig.first().copied().unwrap_or(0.0),
        iterations: outcome.result.iterations,
        gradient_norm: outcome.result.gradient_norm,
        procrustean_intensities: source.as_ref().map(|s| s.0.filter.photon_intensities()),
        blur_sigma_rad_per_s: source.as_ref().map(|s| s.1),
    };
    let mut out = OutputSet::default();
    out.add("tomography_report.json", stamped_json(provenance, &summary)?);
    out.add("density.json", stamped_json(provenance, &DensityFile { density: rho })?);
    out.add("density_real.csv", stamped_csv(provenance, matrix_csv(rho.elements(), |z| z.re)?));
    out.add("density_imag.csv", stamped_csv(provenance, matrix_csv(rho.elements(), |z| z.im)?));
    let mut csv = Vec::new();
    write_counts_csv(&outcome.run.records, Some(provenance), &mut csv)?;
    out.add("counts.csv", csv);
    let mut json = counts_to_json(&outcome.run.records, Some(provenance))?.into_bytes();
    json.push(b'\n');
    out.add("counts.json", json);
    Ok(out)
}

/// One simulated Bell measurement point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellPoint {
    pub gamma: f64,
    pub value: f64,
    pub two_sigma: f64,
    pub predicted: f64,
}

/// Simulates the `4 d²` coincidence counts of one γ-state and evaluates the
/// Bell parameter with its Poisson 2σ.
pub fn simulate_bell_point(
    d: usize,
    gamma: f64,
    lambda: f64,
    settings: &bell::DetectionSettings,
    detector: &DetectorModel,
    resamples: usize,
    resample_seed: u64,
) -> Result<(BellPoint, Vec<CountRecord>)> {
    let rho = symmetric_noise(&gamma_state(d, gamma)?, lambda)?;
    // the peak rate belongs to the brightest single-bin pair, as in tomography
    let peak = brightest_bin_pair(&rho);
    let signals = bell_signals(&rho, settings)?.map(|row| row.map(|t| t / peak));
    let mut rng = detector.rng();
    let mut records = Vec::with_capacity(4 * d * d);
    let mut tables: [[DMatrix<f64>; 2]; 2] = Default::default();
    for a in 0..2 {
        for b in 0..2 {
            let mut t = DMatrix::zeros(d, d);
            for m in 0..d {
                for n in 0..d {
                    let label = format!("a{a}b{b}|m{m}n{n}");
                    let r = sample_counts(signals[a][b][(m, n)], detector, label, &mut rng)?;
                    t[(m, n)] = r.net_counts() as f64;
                    records.push(r);
                }
            }
            tables[a][b] = t;
        }
    }
    let est = cglmp_from_counts(&tables, resamples, resample_seed)?;
    let predicted = bell::cglmp_parameter(&rho, settings)?;
    Ok((BellPoint { gamma, value: est.value, two_sigma: est.two_sigma, predicted }, records))
}

#[derive(Serialize)]
struct BellSummary {
    dimension: usize,
    mixing_lambda: f64,
    alpha: [f64; 2],
    beta: [f64; 2],
    argmax_gamma: f64,
    max_value: f64,
    value_at_gamma_one: f64,
    local_bound: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    simulated_points: Vec<BellPoint>,
}

pub fn cmd_bell_scan(cfg: &BellConfig, provenance: &Provenance) -> Result<OutputSet> {
    cfg.validate()?;
    let d = cfg.dimension;
    let settings = cfg.settings();
    let grid = unit_grid(cfg.scan_points);
    let curve = gamma_scan(d, &grid, cfg.mixing_lambda, &settings)?;
    let horodecki: Vec<Option<f64>> = grid
        .iter()
        .map(|&g| {
            if d == 2 {
                Ok(Some(horodecki_chsh(&symmetric_noise(&gamma_state(2, g)?, cfg.mixing_lambda)?)?))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let best = gamma_argmax(d, cfg.mixing_lambda, &settings, cfg.scan_points, cfg.argmax_tolerance)?;
    let local_bound = local_deterministic_bound(d)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gamma", "ideal", "horodecki", "local_bound"])?;
    for (p, h) in curve.iter().zip(&horodecki) {
        w.write_record([
            p.gamma.to_string(),
            p.value.to_string(),
            h.map(|v| v.to_string()).unwrap_or_default(),
            local_bound.to_string(),
        ])?;
    }
    let curve_csv = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;

    let mut out = OutputSet::default();
    let mut points = Vec::new();
    if let Some(c) = &cfg.counts {
        let mut all_records = Vec::new();
        for (i, &g) in unit_grid(c.gamma_points).iter().enumerate() {
            let seed = derive_path(provenance.seed, &[stream::BELL, stream::COUNTS, i as u64]);
            let detector = DetectorModel::new(c.peak_pair_rate_hz, c.background_rate_hz, c.integration_time_s, seed)?;
            let resample_seed = derive_path(provenance.seed, &[stream::BELL, stream::MONTE_CARLO, i as u64]);
            let (point, records) = simulate_bell_point(d, g, cfg.mixing_lambda, &settings, &detector, c.resamples, resample_seed)?;
            all_records.extend(records.into_iter().map(|mut r| {
                r.projector = format!("g{i}|{}", r.projector);
                r
            }));
            points.push(point);
        }
        let mut pts = Vec::new();
        bell::write_scan_csv(
            &points.iter().map(|p| (ScanPoint { gamma: p.gamma, value: p.value }, Some(p.two_sigma))).collect::<Vec<_>>(),
            &mut pts,
        )?;
        out.add("bell_points.csv", stamped_csv(provenance, pts));
        let mut counts = Vec::new();
        write_counts_csv(&all_records, Some(provenance), &mut counts)?;
        out.add("bell_counts.csv", counts);
    }
    let at_one = curve.last().map(|p| p.value).unwrap_or(f64::NAN);
    let summary = BellSummary {
        dimension: d,
        mixing_lambda: cfg.mixing_lambda,
        alpha: cfg.alpha,
        beta: cfg.beta,
        argmax_gamma: best.gamma,
        max_value: best.value,
        value_at_gamma_one: at_one,
        local_bound,
        simulated_points: points,
    };
    out.add("bell_report.json", stamped_json(provenance, &summary)?);
    out.add("bell_curve.csv", stamped_csv(provenance, curve_csv));
    Ok(out)
}
