//! Acceptance criteria, one printed line each. Reference values are computed
//! here from first principles rather than through the library paths under
//! test.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qudit_lab::bell::{cglmp_parameter, cglmp_parameter_pure, gamma_argmax, horodecki_chsh, local_deterministic_bound, DetectionSettings};
use qudit_lab::commands::spdc_grid;
use qudit_lab::config::{ShaperConfig, SpdcConfig};
use qudit_lab::experiment::{blur_sigma_for, run_tomography, shaped_source, TomographySetup};
use qudit_lab::qudit::{gamma_state, maximally_entangled, symmetric_noise, BipartiteState, DensityMatrix, FrequencyBin};
use qudit_lab::shaper::{coincidence_signal_continuum, projective_signal, DetectorModel, QuadratureOptions, Side, TransferFunction};
use qudit_lab::spectra::{double_gaussian_jsa, schmidt_analysis, PumpMode, SchmidtReport, DEFAULT_ENTROPY_FLOOR};
use qudit_lab::tomography::{CountNoise, MleOptions};

const ALPHA: [f64; 2] = [0.0, 0.5];
const BETA: [f64; 2] = [0.25, -0.25];

/// `P(A_a = m, B_b = n)` for `Σ_j c_j |jj⟩` with Fourier settings, by the
/// explicit sum `|Σ_j c_j e^{−i2πj(m−n+α_a+β_b)/d}|² / d²`.
fn oracle_prob(c: &[f64], a: usize, b: usize, m: usize, n: usize) -> f64 {
    let d = c.len();
    let norm: f64 = c.iter().map(|x| x * x).sum();
    let phase = m as f64 - n as f64 + ALPHA[a] + BETA[b];
    let amp: Complex64 = c
        .iter()
        .enumerate()
        .map(|(j, &cj)| Complex64::from_polar(cj, -TAU * j as f64 * phase / d as f64))
        .sum();
    amp.norm_sqr() / (d * d) as f64 / norm
}

/// CGLMP value from a probability function `p(a, b, m, n)`, written out term
/// by term from the inequality.
fn oracle_cglmp(d: usize, p: &dyn Fn(usize, usize, usize, usize) -> f64) -> f64 {
    let md = |x: i64| x.rem_euclid(d as i64) as usize;
    // P(X = Y + k) where X belongs to party `first`
    let a_eq_b = |a: usize, b: usize, k: i64| (0..d).map(|j| p(a, b, md(j as i64 + k), j)).sum::<f64>();
    let b_eq_a = |a: usize, b: usize, k: i64| (0..d).map(|j| p(a, b, j, md(j as i64 + k))).sum::<f64>();
    let mut total = 0.0;
    for k in 0..(d / 2) as i64 {
        let w = 1.0 - 2.0 * k as f64 / (d - 1) as f64;
        total += w
            * (a_eq_b(0, 0, k) + b_eq_a(1, 0, k + 1) + a_eq_b(1, 1, k) + b_eq_a(0, 1, k)
                - a_eq_b(0, 0, -k - 1)
                - b_eq_a(1, 0, -k)
                - a_eq_b(1, 1, -k - 1)
                - b_eq_a(0, 1, -k - 1));
    }
    total
}

fn oracle_i(c: &[f64]) -> f64 {
    oracle_cglmp(c.len(), &|a, b, m, n| oracle_prob(c, a, b, m, n))
}

fn oracle_gamma(d: usize, g: f64) -> Vec<f64> {
    if d == 2 {
        vec![1.0, g]
    } else {
        vec![1.0, g, 1.0]
    }
}

/// Root fidelity `√⟨ψ|ρ|ψ⟩` with `me(d)`, read off the matrix elements.
fn oracle_fidelity_me(rho: &DensityMatrix) -> f64 {
    let d = rho.dim();
    let m = rho.elements();
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..d {
        for k in 0..d {
            s += m[(j * d + j, k * d + k)];
        }
    }
    (s.re / d as f64).sqrt()
}

struct Ledger {
    lines: Vec<(u32, bool, String)>,
}

impl Ledger {
    fn record(&mut self, criterion: u32, passed: bool, detail: String) {
        println!("criterion {criterion:>2}: {} | {detail}", if passed { "PASS" } else { "FAIL" });
        self.lines.push((criterion, passed, detail));
    }
}

fn criterion_1(l: &mut Ledger) {
    let s = DetectionSettings::default();
    let start = Instant::now();
    let i2 = cglmp_parameter_pure(&maximally_entangled(2).unwrap(), &s).unwrap();
    let i3 = cglmp_parameter_pure(&maximally_entangled(3).unwrap(), &s).unwrap();
    let t = start.elapsed().as_secs_f64();
    let o3 = oracle_i(&[1.0, 1.0, 1.0]);
    let ok = (i2 - 2.0 * 2f64.sqrt()).abs() < 1e-9 && (i3 - o3).abs() < 1e-6 && (o3 - 2.872_934).abs() < 1e-6 && t < 1.0;
    l.record(1, ok, format!("I2 = {i2:.12}, I3 = {i3:.9} (oracle {o3:.9}), {t:.2e} s"));
}

fn criterion_2(l: &mut Ledger) {
    let best = gamma_argmax(3, 1.0, &DetectionSettings::default(), 101, 1e-4).unwrap();
    let closed = (11f64.sqrt() - 3f64.sqrt()) / 2.0;
    // dense scan of the oracle as a second opinion
    let dense = (0..=20_000)
        .map(|i| i as f64 / 20_000.0)
        .max_by(|a, b| oracle_i(&oracle_gamma(3, *a)).total_cmp(&oracle_i(&oracle_gamma(3, *b))))
        .unwrap();
    let ok = (best.gamma - closed).abs() < 1e-3 && (dense - closed).abs() < 1e-3;
    l.record(2, ok, format!("argmax {:.5}, oracle scan {dense:.5}, closed form {closed:.5}", best.gamma));
}

/// Float enumeration of deterministic strategies.
fn oracle_local_bound(d: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for s in 0..d.pow(4) {
        let (a1, a2, b1, b2) = (s % d, (s / d) % d, (s / d / d) % d, s / d / d / d);
        let (av, bv) = ([a1, a2], [b1, b2]);
        let p = |a: usize, b: usize, m: usize, n: usize| if av[a] == m && bv[b] == n { 1.0 } else { 0.0 };
        best = best.max(oracle_cglmp(d, &p));
    }
    best
}

fn criterion_3(l: &mut Ledger) {
    let start = Instant::now();
    let lib: Vec<f64> = (2..=4).map(|d| local_deterministic_bound(d).unwrap()).collect();
    let t = start.elapsed().as_secs_f64();
    let oracle: Vec<f64> = (2..=4).map(oracle_local_bound).collect();
    let ok = lib.iter().all(|&b| b == 2.0) && oracle.iter().all(|&b| (b - 2.0).abs() < 1e-12) && t < 1.0;
    l.record(3, ok, format!("bounds {lib:?}, oracle {oracle:?}, {t:.2e} s"));
}

fn criterion_4(l: &mut Ledger) {
    let s = DetectionSettings::default();
    let mut worst: f64 = 0.0;
    for d in [2, 3] {
        for gi in 0..10 {
            let g = gi as f64 / 9.0;
            let ideal = oracle_i(&oracle_gamma(d, g));
            for li in 0..10 {
                let lam = li as f64 / 9.0;
                let v = cglmp_parameter(&symmetric_noise(&gamma_state(d, g).unwrap(), lam).unwrap(), &s).unwrap();
                worst = worst.max((v - lam * ideal).abs());
            }
        }
    }
    l.record(4, worst < 1e-12, format!("max deviation {worst:.2e}"));
}

fn criterion_5(l: &mut Ledger) {
    let s = DetectionSettings::default();
    let i2 = cglmp_parameter(&symmetric_noise(&gamma_state(2, 1.0).unwrap(), 0.920).unwrap(), &s).unwrap();
    let i3 = cglmp_parameter(&symmetric_noise(&gamma_state(3, 1.0).unwrap(), 0.807).unwrap(), &s).unwrap();
    let (e2, e3) = (0.920 * 2.0 * 2f64.sqrt(), 0.807 * oracle_i(&[1.0, 1.0, 1.0]));
    let ok = (i2 - e2).abs() < 1e-3 && (i3 - e3).abs() < 1e-3 && (i2 - 2.602).abs() < 1e-3 && (i3 - 2.318).abs() < 1e-3;
    l.record(5, ok, format!("I2 = {i2:.4} (expected {e2:.4}), I3 = {i3:.4} (expected {e3:.4})"));
}

fn setup(state: DensityMatrix, d: usize, detector: DetectorModel, noise: CountNoise, mc: usize, mc_seed: u64) -> TomographySetup {
    TomographySetup {
        state,
        target: maximally_entangled(d).unwrap(),
        detector,
        noise,
        mle: MleOptions::default(),
        mc_samples: mc,
        mc_seed,
    }
}

fn criterion_6(l: &mut Ledger) {
    let mut ok = true;
    let mut detail = Vec::new();
    for d in 2..=4 {
        let me = maximally_entangled(d).unwrap().density();
        let out = run_tomography(&setup(me, d, DetectorModel::new(1e6, 0.0, 10.0, 0).unwrap(), CountNoise::Noiseless, 0, 0)).unwrap();
        let f = oracle_fidelity_me(&out.result.density);
        ok &= f >= 0.999;
        detail.push(format!("noiseless F{d} {f:.5}"));
    }
    for (k, (rate, lam)) in [(43.0, 0.920), (13.0, 0.807), (6.0, 0.584)].into_iter().enumerate() {
        let d = k + 2;
        let state = symmetric_noise(&maximally_entangled(d).unwrap(), lam).unwrap();
        let det = DetectorModel::new(rate, 0.2, 10.0, 1000 + d as u64).unwrap();
        let out = run_tomography(&setup(state, d, det, CountNoise::Poisson, 40, 2000 + d as u64)).unwrap();
        let rho = out.result.density.elements();
        let eig_min = rho.clone().symmetric_eigenvalues().min();
        let tr = rho.trace().re;
        let two_sigma = out.error.as_ref().unwrap().two_sigma;
        ok &= two_sigma <= 0.03 && eig_min >= -1e-10 && (tr - 1.0).abs() < 1e-12;
        detail.push(format!("d={d} F {:.3} 2sigma {two_sigma:.4} min eig {eig_min:.1e}", oracle_fidelity_me(&out.result.density)));
    }
    let shaper = ShaperConfig::default();
    let crystal = shaper.crystal().unwrap();
    let sigma = blur_sigma_for(shaper.resolution_fwhm(), &crystal);
    let f: Vec<f64> = (2..=4)
        .map(|d| {
            let src = shaped_source(&crystal, &shaper.layout(d), sigma, &shaper.quadrature()).unwrap();
            let out = run_tomography(&setup(src.state.density(), d, DetectorModel::new(1e6, 0.0, 10.0, 0).unwrap(), CountNoise::Noiseless, 0, 0)).unwrap();
            oracle_fidelity_me(&out.result.density)
        })
        .collect();
    ok &= f[0] > f[1] && f[1] > f[2];
    detail.push(format!("blurred F {:.4} > {:.4} > {:.4}", f[0], f[1], f[2]));
    l.record(6, ok, detail.join("; "));
}

fn criterion_7(l: &mut Ledger) {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let start = Instant::now();
    let mut worst_lib: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..100 {
        let d = r.random_range(2..=5);
        let mut edge = r.random_range(0.1..1.0);
        let signal: Vec<FrequencyBin> = (0..d)
            .map(|_| {
                let w = r.random_range(0.2..2.0);
                let b = FrequencyBin::new(edge + 0.5 * w, 0.5 * w).unwrap();
                edge += w + r.random_range(0.0..1.0);
                b
            })
            .collect();
        let idler: Vec<FrequencyBin> = signal.iter().map(FrequencyBin::mirrored).collect();
        let mut weights = || -> Vec<Complex64> { (0..d).map(|_| Complex64::from_polar(r.random_range(0.0..1.0), r.random_range(0.0..TAU))).collect() };
        let (ui, us) = (weights(), weights());
        let g = Complex64::from_polar(r.random_range(0.5..2.0), r.random_range(0.0..TAU));
        let flat = move |_: f64| g;
        let cont = coincidence_signal_continuum(
            &TransferFunction::new(Side::Idler, idler, ui.clone(), 0.0).unwrap(),
            &TransferFunction::new(Side::Signal, signal, us.clone(), 0.0).unwrap(),
            &flat,
            &QuadratureOptions::default(),
        )
        .unwrap();
        let disc = projective_signal(&ui, &us, &vec![g; d]).unwrap();
        // each mirrored bin pair overlaps over one full width: ∫ f_l f_l = 1
        let exact = (g * ui.iter().zip(&us).map(|(a, b)| a * b).sum::<Complex64>()).norm_sqr();
        worst_lib = worst_lib.max((cont - disc).abs() / disc);
        worst_oracle = worst_oracle.max((cont - exact).abs() / exact);
    }
    let t = start.elapsed().as_secs_f64();
    let ok = worst_lib < 1e-6 && worst_oracle < 1e-6 && t < 10.0;
    l.record(7, ok, format!("max rel gap {worst_lib:.2e} (analytic {worst_oracle:.2e}), {t:.2} s"));
}

/// `K` of the double-Gaussian JSA sampled directly, via an SVD of our own grid.
fn oracle_double_gaussian_k(sp: f64, sc: f64, n: usize) -> f64 {
    let half = 8.0 * (sp * sp + 4.0 * sc * sc).sqrt() / 2.0;
    let ax: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
    let m = DMatrix::from_fn(n, n, |r, c| {
        let (u, x) = (ax[r] + ax[c], 0.5 * (ax[r] - ax[c]));
        (-u * u / (2.0 * sp * sp) - x * x / (2.0 * sc * sc)).exp()
    });
    let lambdas: Vec<f64> = m.singular_values().iter().map(|s| s * s).collect();
    let total: f64 = lambdas.iter().sum();
    1.0 / lambdas.iter().map(|l| (l / total).powi(2)).sum::<f64>()
}

fn criterion_8(l: &mut Ledger) {
    let mut ok = true;
    for d in [2usize, 3, 4, 8] {
        let r = SchmidtReport::from_singular_values(vec![1.0 / (d as f64).sqrt(); d], DEFAULT_ENTROPY_FLOOR).unwrap();
        ok &= (r.entropy_ebits - (d as f64).log2()).abs() < 1e-9 && (r.schmidt_number - d as f64).abs() < 1e-9;
    }
    let (sp, sc) = (1.0, 5.0);
    let k = schmidt_analysis(&double_gaussian_jsa(sp, sc, 120).unwrap(), DEFAULT_ENTROPY_FLOOR).unwrap().schmidt_number;
    let oracle = oracle_double_gaussian_k(sp, sc, 480);
    let closed = 0.5 * (10.0 + 0.1);
    ok &= (k - oracle).abs() / oracle < 5e-3 && (oracle - closed).abs() / closed < 5e-3;
    let ks: Vec<f64> = [8e13, 4e13, 2e13, 1e13]
        .iter()
        .map(|&w| {
            let grid = spdc_grid(&SpdcConfig {
                pump: PumpMode::GaussianPulse,
                pump_fwhm_rad_per_s: w,
                ..SpdcConfig::default()
            })
            .unwrap();
            schmidt_analysis(&grid, DEFAULT_ENTROPY_FLOOR).unwrap().schmidt_number
        })
        .collect();
    ok &= ks.windows(2).all(|w| w[1] > w[0]);
    l.record(8, ok, format!("Gaussian K {k:.5} vs 4x oracle {oracle:.5} (closed {closed}); pump sweep K {ks:.3?}"));
}

fn criterion_9(l: &mut Ledger) {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let mut above = true;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=200 {
        let g = i as f64 / 200.0;
        let h = horodecki_chsh(&gamma_state(2, g).unwrap().density()).unwrap();
        let closed = 2.0 * (1.0 + 4.0 * g * g / (1.0 + g * g).powi(2)).sqrt();
        worst = worst.max((h - closed).abs());
        monotone &= h > prev;
        prev = h;
        above &= h >= oracle_i(&[1.0, g]) - 1e-12;
    }
    l.record(9, worst < 1e-9 && monotone && above, format!("max deviation {worst:.2e}, increasing in gamma {monotone}, above I2 {above}"));
}

fn criterion_10(l: &mut Ledger) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("verify.toml");
    // fewer resamples keep this quick; determinism does not depend on them
    std::fs::write(&config, "[verify]\nmonte_carlo_samples = 8\ncontinuum_settings = 20\n").unwrap();
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_qudit-lab"))
            .args(["verify", "--seed", "17", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (run(&a), run(&b));
    let files = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(p)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e != "log"))
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    };
    let (fa, fb) = (files(&a), files(&b));
    let ok = !fa.is_empty() && fa == fb && ra.status.code() == rb.status.code();
    l.record(10, ok, format!("{} result files compared, exit codes {:?}/{:?}", fa.len(), ra.status.code(), rb.status.code()));
}

#[test]
fn acceptance() {
    let mut l = Ledger { lines: Vec::new() };
    criterion_1(&mut l);
    criterion_2(&mut l);
    criterion_3(&mut l);
    criterion_4(&mut l);
    criterion_5(&mut l);
    criterion_6(&mut l);
    criterion_7(&mut l);
    criterion_8(&mut l);
    criterion_9(&mut l);
    criterion_10(&mut l);
    let failed: Vec<u32> = l.lines.iter().filter(|x| !x.1).map(|x| x.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn oracle_sanity() {
    assert!((oracle_i(&[1.0, 1.0]) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    assert!(oracle_i(&[1.0, 0.0]).abs() <= 2.0);
    let s: BipartiteState = maximally_entangled(2).unwrap();
    assert!((oracle_fidelity_me(&s.density()) - 1.0).abs() < 1e-12);
}
