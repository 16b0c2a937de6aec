//! Single-photon spectral tomography: clicks drawn from `|psi(t)|^2`, a
//! smoothed histogram density, KK phase retrieval on an analysis window and
//! fidelity / phase-spectrum diagnostics.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detectors::shot_rng;
use crate::dsp::HilbertKernel;
use crate::error::{invalid, KkError, Result};
use crate::grid::{fft_plan, inner_product, ComplexSignal, TimeGrid};
use crate::states::{fwhm, SinglePhotonState};

pub const MIN_CLICKS: usize = 1000;
/// PSD bins whose true-phase power is below this fraction of the peak are
/// treated as off-signal when measuring the noise floor.
pub const OFF_SIGNAL_LEVEL: f64 = 1e-6;
/// The noise floor is read within this multiple of the true-phase PSD peak
/// frequency.
pub const NOISE_BAND_MULTIPLE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClickSample {
    pub grid: TimeGrid,
    pub times: Vec<f64>,
}

impl ClickSample {
    pub fn n_clicks(&self) -> usize {
        self.times.len()
    }
}

/// Inverse-CDF draws from `|psi|^2` with uniform jitter inside the bin
/// `[t_k, t_k + dt)`.
pub fn sample_clicks(state: &SinglePhotonState, n_clicks: usize, seed: u64) -> Result<ClickSample> {
    sample_clicks_from_density(state.grid(), &state.density(), n_clicks, seed)
}

pub fn sample_clicks_from_density(grid: &TimeGrid, density: &[f64], n_clicks: usize, seed: u64) -> Result<ClickSample> {
    if n_clicks == 0 {
        return Err(invalid("n_clicks", "must be >= 1"));
    }
    if density.len() != grid.n_samples {
        return Err(KkError::InvalidGrid("density length differs from grid".into()));
    }
    if let Some(k) = density.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(KkError::NonFinite(k));
    }
    let mut cdf = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    for p in density {
        acc += p;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(invalid("density", "zero everywhere"));
    }
    let mut rng = shot_rng(seed, 0);
    let last = grid.n_samples - 1;
    let times = (0..n_clicks)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(last);
            let jitter: f64 = rng.random();
            grid.time(k) + jitter * grid.dt
        })
        .collect();
    Ok(ClickSample { grid: *grid, times })
}

/// Normalized density on the grid plus the floor applied before logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: TimeGrid,
    /// `sum p_hat dt = 1`, `p_hat >= 0`.
    pub p_hat: Vec<f64>,
    pub bin_counts: Vec<u64>,
    pub n_clicks: usize,
    /// `1 / (10 n_clicks T)`.
    pub floor: f64,
}

impl DensityEstimate {
    /// Wraps a known density (noiseless injection). The floor is the smallest
    /// positive double.
    pub fn from_density(grid: TimeGrid, p: &[f64]) -> Result<Self> {
        if p.len() != grid.n_samples {
            return Err(KkError::InvalidGrid("density length differs from grid".into()));
        }
        if let Some(k) = p.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(KkError::NonFinite(k));
        }
        let mass: f64 = p.iter().sum::<f64>() * grid.dt;
        if !(mass > 0.0) {
            return Err(invalid("density", "zero everywhere"));
        }
        Ok(Self {
            grid,
            p_hat: p.iter().map(|x| x / mass).collect(),
            bin_counts: Vec::new(),
            n_clicks: 0,
            floor: f64::MIN_POSITIVE,
        })
    }

    /// `max(p_hat, floor)`.
    pub fn floored(&self) -> Vec<f64> {
        self.p_hat.iter().map(|p| p.max(self.floor)).collect()
    }
}

fn gaussian_taps(sigma_bins: f64) -> Vec<f64> {
    let half = (4.0 * sigma_bins).ceil() as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|m| (-0.5 * (m as f64 / sigma_bins).powi(2)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|x| *x /= s);
    taps
}

/// Histogram on the grid bins, smoothed by a Gaussian of standard deviation
/// `smoothing_bandwidth` seconds (0 disables smoothing), then renormalized.
pub fn estimate_density(clicks: &ClickSample, grid: &TimeGrid, smoothing_bandwidth: f64) -> Result<DensityEstimate> {
    let n = clicks.n_clicks();
    if n == 0 {
        return Err(KkError::EmptySample("no clicks".into()));
    }
    if n < MIN_CLICKS {
        return Err(KkError::EmptySample(format!("{n} clicks, need >= {MIN_CLICKS}")));
    }
    if !(smoothing_bandwidth >= 0.0 && smoothing_bandwidth.is_finite()) {
        return Err(invalid("smoothing_bandwidth", "must be finite and >= 0"));
    }
    let mut counts = vec![0u64; grid.n_samples];
    for &t in &clicks.times {
        let k = ((t - grid.t_start) / grid.dt).floor();
        if k < 0.0 || k >= grid.n_samples as f64 {
            return Err(invalid("clicks", format!("time {t} outside the grid")));
        }
        counts[k as usize] += 1;
    }
    let norm = 1.0 / (n as f64 * grid.dt);
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 * norm).collect();
    let sigma_bins = smoothing_bandwidth / grid.dt;
    let mut p = if sigma_bins > 0.0 {
        let taps = gaussian_taps(sigma_bins);
        let half = (taps.len() / 2) as isize;
        let len = raw.len() as isize;
        (0..len)
            .map(|k| {
                taps.iter()
                    .enumerate()
                    .filter_map(|(m, h)| {
                        let j = k + m as isize - half;
                        (0..len).contains(&j).then(|| h * raw[j as usize])
                    })
                    .sum()
            })
            .collect::<Vec<f64>>()
    } else {
        raw
    };
    let mass: f64 = p.iter().sum::<f64>() * grid.dt;
    p.iter_mut().for_each(|x| *x /= mass);
    Ok(DensityEstimate {
        grid: *grid,
        p_hat: p,
        bin_counts: counts,
        n_clicks: n,
        floor: 1.0 / (10.0 * n as f64 * grid.duration()),
    })
}

/// Default smoothing: two grid bins.
pub fn default_bandwidth(grid: &TimeGrid) -> f64 {
    2.0 * grid.dt
}

/// Window centred on the grid, `multiple` times the chi duration wide.
pub fn default_window(state: &SinglePhotonState, multiple: f64) -> (f64, f64) {
    let grid = state.grid();
    let c = grid.time(grid.n_samples / 2);
    let half = 0.5 * multiple * fwhm(state.chi());
    (c - half, c + half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpectrum {
    /// Angular frequencies, ascending.
    pub omega: Vec<f64>,
    pub psd_true: Vec<f64>,
    pub psd_reconstructed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub psi_tilde: ComplexSignal,
    pub chi_tilde: ComplexSignal,
    /// Retrieved phase on the window.
    pub phase: Vec<f64>,
    /// Sample range `[lo, hi)` of the analysis window.
    pub window: (usize, usize),
    pub fidelity_total: f64,
    pub fidelity_chi: f64,
    pub spectrum: PhaseSpectrum,
    /// Median reconstructed PSD over off-signal bins with
    /// `|w| <= NOISE_BAND_MULTIPLE |w_peak|`.
    pub noise_floor: f64,
    /// Samples raised to the density floor.
    pub clamped: usize,
}

/// Window indices `[lo, hi)` for `(t_lo, t_hi)`.
fn window_indices(grid: &TimeGrid, window: (f64, f64)) -> Result<(usize, usize)> {
    let (t_lo, t_hi) = window;
    if !(t_hi > t_lo) {
        return Err(invalid("window", format!("({t_lo}, {t_hi}) is empty")));
    }
    let lo = grid
        .index_of(t_lo)
        .ok_or_else(|| invalid("window", format!("start {t_lo} is off the grid")))?;
    let hi = grid
        .index_of(t_hi)
        .ok_or_else(|| invalid("window", format!("end {t_hi} is off the grid")))?;
    if hi <= lo + 1 {
        return Err(invalid("window", "fewer than two samples"));
    }
    Ok((lo, hi))
}

/// Enforces `5 x chi duration <= window <= 0.5 x envelope duration`, with 1%
/// slack for the sampled widths.
pub fn check_window(state: &SinglePhotonState, window: (f64, f64)) -> Result<()> {
    let width = window.1 - window.0;
    let chi = fwhm(state.chi());
    let env = fwhm(state.envelope());
    if width < 0.99 * 5.0 * chi {
        return Err(invalid("window", format!("width {width} < 5 x chi duration {chi}")));
    }
    if width > 1.01 * 0.5 * env {
        return Err(invalid(
            "window",
            format!("width {width} > 0.5 x envelope duration {env}"),
        ));
    }
    Ok(())
}

/// Periodogram `|sum x_k e^{i w t_k}|^2` of the mean-removed signal, in
/// ascending frequency order.
pub fn phase_psd(phase: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(k) = phase.iter().position(|x| !x.is_finite()) {
        return Err(KkError::NonFinite(k));
    }
    let n = phase.len();
    if n == 0 {
        return Err(invalid("phase", "empty"));
    }
    let mean = phase.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = phase.iter().map(|x| Complex64::new(x - mean, 0.0)).collect();
    fft_plan(n, false).process(&mut buf);
    let grid = TimeGrid::new(0.0, dt, n)?;
    let mut pairs: Vec<(f64, f64)> = buf
        .iter()
        .enumerate()
        .map(|(j, z)| (grid.omega(j), z.norm_sqr() * dt * dt))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// KK reconstruction of a single-photon wavefunction from its click density.
///
/// On the window, `psi~ = sqrt(p) e^{i(theta + phi)}` with `phi` the KK
/// transform of `ln p - ln A^2` and `theta` the LO phase; outside it,
/// `sqrt(p) e^{i theta}`.
/// `chi~ = psi~ - A env(t)` on the window and zero elsewhere. The LO amplitude,
/// envelope and truth for the fidelities come from `state`.
pub fn reconstruct_wavefunction(
    est: &DensityEstimate,
    state: &SinglePhotonState,
    window: (f64, f64),
) -> Result<ReconstructionReport> {
    let grid = *state.grid();
    if !est.grid.same_as(&grid) {
        return Err(KkError::GridMismatch);
    }
    check_window(state, window)?;
    let (lo, hi) = window_indices(&grid, window)?;
    let p = &est.p_hat;
    if p[lo..hi].iter().all(|&x| x == 0.0)
        || (!est.bin_counts.is_empty() && est.bin_counts[lo..hi].iter().all(|&c| c == 0))
    {
        return Err(KkError::EmptySample("no clicks in the analysis window".into()));
    }
    let a = state.lo_amplitude();
    let mid = grid.n_samples / 2;
    let theta = state.envelope().samples()[mid].arg();
    let base = (a * a).ln();
    let mut clamped = 0;
    let x: Vec<f64> = p[lo..hi]
        .iter()
        .map(|&v| {
            if v < est.floor {
                clamped += 1;
            }
            v.max(est.floor).ln() - base
        })
        .collect();
    let phase = HilbertKernel::new(x.len()).apply(&x);

    let mut psi = Vec::with_capacity(grid.n_samples);
    let mut chi = vec![Complex64::new(0.0, 0.0); grid.n_samples];
    let env = state.envelope().samples();
    for (k, &v) in p.iter().enumerate() {
        let amp = v.max(0.0).sqrt();
        if (lo..hi).contains(&k) {
            let z = Complex64::from_polar(amp, theta + phase[k - lo]);
            chi[k] = z - env[k] * a;
            psi.push(z);
        } else {
            psi.push(Complex64::from_polar(amp, theta));
        }
    }
    let psi_tilde = ComplexSignal::new(grid, psi)?;
    let chi_tilde = ComplexSignal::new(grid, chi)?;

    let fidelity_total = inner_product(&psi_tilde, state.psi())?.norm_sqr().clamp(0.0, 1.0);
    let nrm = chi_tilde.norm_sqr() * state.chi().norm_sqr();
    let fidelity_chi = if nrm > 0.0 {
        (inner_product(&chi_tilde, state.chi())?.norm_sqr() / nrm).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let true_phase: Vec<f64> = state.psi().samples()[lo..hi]
        .iter()
        .map(|z| (z * Complex64::from_polar(1.0, -theta)).arg())
        .collect();
    let rec_phase = phase.clone();
    let (omega, psd_true) = phase_psd(&true_phase, grid.dt)?;
    let (_, psd_rec) = phase_psd(&rec_phase, grid.dt)?;
    let peak = psd_true.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let psd_true: Vec<f64> = psd_true.iter().map(|x| x * scale).collect();
    let psd_reconstructed: Vec<f64> = psd_rec.iter().map(|x| x * scale).collect();
    let w_peak = omega
        .iter()
        .zip(&psd_true)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0.0, |(w, _)| w.abs());
    let band = if w_peak > 0.0 {
        NOISE_BAND_MULTIPLE * w_peak
    } else {
        f64::INFINITY
    };
    let noise_floor = median(
        omega
            .iter()
            .zip(&psd_true)
            .zip(&psd_reconstructed)
            .filter(|((w, t), _)| w.abs() <= band && **t < OFF_SIGNAL_LEVEL)
            .map(|(_, r)| *r)
            .collect(),
    );

    Ok(ReconstructionReport {
        psi_tilde,
        chi_tilde,
        phase,
        window: (lo, hi),
        fidelity_total,
        fidelity_chi,
        spectrum: PhaseSpectrum {
            omega,
            psd_true,
            psd_reconstructed,
        },
        noise_floor,
        clamped,
    })
}
