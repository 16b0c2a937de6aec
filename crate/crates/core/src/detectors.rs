//! Homodyne (HD), double-homodyne (DHD) and Kramers-Kronig (KK) receivers:
//! analytic moments, shot-noise calibration and semiclassical Monte Carlo.
//!
//! Photodetection of coherent fields is modelled by independent Poisson counts
//! per bin with mean `|c(t_k)|^2 dt`, which is exact for coherent inputs. Shot
//! `i` of a run draws from a ChaCha8 stream selected by `(seed, i)`, so runs are
//! reproducible regardless of thread count.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{min_phase_holds, validate_analysis_mode, BeamsplitterParams, KkRetrievalConfig, KkRetriever};
use crate::error::{invalid, KkError, Result};
use crate::grid::{forward_transform, inner_product, ComplexSignal, TimeGrid};
use crate::states::CoherentField;

/// Minimum expected LO counts per bin for Monte Carlo runs.
pub const STRONG_LO_COUNTS: f64 = 1e3;
/// Minimum expected counts per bin for the Gaussian photocurrent model.
pub const GAUSSIAN_MIN_COUNTS: f64 = 100.0;
pub const MIN_SHOTS: usize = 100;
pub const MIN_CALIBRATION_SHOTS: usize = 10_000;
/// Required minimum-phase margin as a fraction of `r A`.
pub const KK_MARGIN_FRACTION: f64 = 0.5;
/// Largest allowed product of kernel support and RMS signal bandwidth.
pub const MAX_SUPPORT_BANDWIDTH: f64 = 0.2;
/// Largest RMS signal bandwidth times `dt` for KK reception.
pub const MAX_BANDWIDTH_DT: f64 = 0.1;

pub(crate) fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

/// Photodiode impulse response, applied as a centred discrete convolution of
/// the count record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhotodiodeResponse {
    #[default]
    IdealDelta,
    Kernel {
        taps: Vec<f64>,
    },
}

impl PhotodiodeResponse {
    pub fn kernel(taps: Vec<f64>) -> Result<Self> {
        let r = Self::Kernel { taps };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Kernel { taps } = self {
            if taps.is_empty() || taps.len() % 2 == 0 {
                return Err(invalid("response", "kernel needs an odd, nonzero number of taps"));
            }
            if let Some(k) = taps.iter().position(|x| !x.is_finite()) {
                return Err(KkError::NonFinite(k));
            }
        }
        Ok(())
    }

    pub fn support(&self) -> usize {
        match self {
            Self::IdealDelta => 1,
            Self::Kernel { taps } => taps.len(),
        }
    }

    /// `y_k = sum_m h_m x_{k + c - m}`, zero outside the record.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::IdealDelta => x.to_vec(),
            Self::Kernel { taps } => {
                let c = taps.len() / 2;
                let n = x.len() as isize;
                (0..n)
                    .map(|k| {
                        taps.iter()
                            .enumerate()
                            .filter_map(|(m, h)| {
                                let j = k + c as isize - m as isize;
                                (0..n).contains(&j).then(|| h * x[j as usize])
                            })
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// Transpose of [`apply`](Self::apply): `sum_k w_k (H x)_k = sum_j x_j (H^T w)_j`.
    pub fn adjoint(&self, w: &[f64]) -> Vec<f64> {
        match self {
            Self::IdealDelta => w.to_vec(),
            Self::Kernel { taps } => {
                let c = taps.len() / 2;
                let n = w.len() as isize;
                (0..n)
                    .map(|j| {
                        taps.iter()
                            .enumerate()
                            .filter_map(|(m, h)| {
                                let k = j - c as isize + m as isize;
                                (0..n).contains(&k).then(|| h * w[k as usize])
                            })
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// Effective pointwise weight of an integrated photocurrent, `H^T 1`.
    pub fn integration_weight(&self, n: usize) -> Vec<f64> {
        self.adjoint(&vec![1.0; n])
    }

    /// Rejects kernels whose support is not short against the signal:
    /// `support * dt * rms_bandwidth <= 0.2`.
    pub fn check_against(&self, sig: &ComplexSignal) -> Result<()> {
        self.validate()?;
        if self.support() == 1 {
            return Ok(());
        }
        let product = self.support() as f64 * sig.grid().dt * rms_bandwidth(sig);
        if product > MAX_SUPPORT_BANDWIDTH {
            return Err(invalid(
                "response",
                format!("support x bandwidth = {product:.3} exceeds {MAX_SUPPORT_BANDWIDTH}"),
            ));
        }
        Ok(())
    }
}

/// RMS frequency `sqrt(<w^2>) / 2 pi` of the spectrum, in Hz.
pub fn rms_bandwidth(sig: &ComplexSignal) -> f64 {
    let spec = forward_transform(sig);
    let omegas = spec.omegas();
    let (mut num, mut den) = (0.0, 0.0);
    for (z, w) in spec.samples().iter().zip(&omegas) {
        num += z.norm_sqr() * w * w;
        den += z.norm_sqr();
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt() / (2.0 * std::f64::consts::PI)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoMode {
    Monochromatic,
    Shaped(ComplexSignal),
}

/// Coherent local oscillator `A e^{i theta} f(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOscillator {
    pub amplitude: f64,
    pub phase: f64,
    pub mode: LoMode,
}

impl LocalOscillator {
    pub fn monochromatic(amplitude: f64, phase: f64) -> Result<Self> {
        check_amplitude(amplitude)?;
        Ok(Self {
            amplitude,
            phase,
            mode: LoMode::Monochromatic,
        })
    }

    pub fn shaped(amplitude: f64, phase: f64, mode: ComplexSignal) -> Result<Self> {
        check_amplitude(amplitude)?;
        let norm = mode.norm_sqr();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(invalid("lo.mode", format!("must be normalized, <f|f> = {norm}")));
        }
        Ok(Self {
            amplitude,
            phase,
            mode: LoMode::Shaped(mode),
        })
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        check_amplitude(amplitude)?;
        Ok(Self {
            amplitude,
            ..self.clone()
        })
    }

    pub fn with_phase(&self, phase: f64) -> Self {
        Self { phase, ..self.clone() }
    }

    /// The LO field on `grid`.
    pub fn field(&self, grid: &TimeGrid) -> Result<ComplexSignal> {
        let c = Complex64::from_polar(self.amplitude, self.phase);
        match &self.mode {
            LoMode::Monochromatic => Ok(ComplexSignal::from_fn(*grid, |_| c)),
            LoMode::Shaped(f) => {
                if !f.grid().same_as(grid) {
                    return Err(KkError::GridMismatch);
                }
                Ok(f.scale(c))
            }
        }
    }

    /// Unit-amplitude, zero-phase mode profile on `grid`.
    fn profile(&self, grid: &TimeGrid) -> Result<ComplexSignal> {
        match &self.mode {
            LoMode::Monochromatic => Ok(ComplexSignal::from_fn(*grid, |_| Complex64::new(1.0, 0.0))),
            LoMode::Shaped(f) => {
                if !f.grid().same_as(grid) {
                    return Err(KkError::GridMismatch);
                }
                Ok(f.clone())
            }
        }
    }

    /// `xi(t) = |A| (H^T 1)(t) f(t)`: the effective detection mode.
    pub fn detection_mode(&self, grid: &TimeGrid, response: &PhotodiodeResponse) -> Result<ComplexSignal> {
        let w = response.integration_weight(grid.n_samples);
        let f = self.profile(grid)?;
        ComplexSignal::new(
            *grid,
            f.samples()
                .iter()
                .zip(&w)
                .map(|(z, w)| z * (self.amplitude * w))
                .collect(),
        )
    }

    fn peak_counts(&self, grid: &TimeGrid) -> Result<f64> {
        let f = self.profile(grid)?;
        Ok(self.amplitude * self.amplitude * f.max_abs().powi(2) * grid.dt)
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid("lo.amplitude", format!("must be finite and >= 0, got {a}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Receiver {
    Hd,
    Dhd,
    Kk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureStats {
    pub mean: f64,
    pub var: f64,
    /// `mean^2 / (4 var)`, which is `Re{alpha}^2` for calibrated HD.
    pub snr: f64,
    pub stderr_mean: f64,
    pub stderr_var: f64,
}

impl QuadratureStats {
    pub fn exact(mean: f64, var: f64) -> Self {
        Self {
            mean,
            var,
            snr: snr(mean, var),
            stderr_mean: 0.0,
            stderr_var: 0.0,
        }
    }

    /// Sample statistics; the variance error uses the fourth central moment.
    pub fn from_samples(x: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(KkError::EmptySample(format!("{n} samples")));
        }
        let nf = n as f64;
        let mean = x.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for v in x {
            let d = (v - mean) * (v - mean);
            m2 += d;
            m4 += d * d;
        }
        let var = m2 / (nf - 1.0);
        let m2b = m2 / nf;
        let m4b = m4 / nf;
        Ok(Self {
            mean,
            var,
            snr: snr(mean, var),
            stderr_mean: (var / nf).sqrt(),
            stderr_var: ((m4b - m2b * m2b).max(0.0) / nf).sqrt(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mean: self.mean * s,
            var: self.var * s * s,
            snr: self.snr,
            stderr_mean: self.stderr_mean * s.abs(),
            stderr_var: self.stderr_var * s * s,
        }
    }
}

fn snr(mean: f64, var: f64) -> f64 {
    if var > 0.0 {
        mean * mean / (4.0 * var)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub receiver: Receiver,
    /// Zero for analytic results.
    pub shots: usize,
    pub q: QuadratureStats,
    /// Absent for single-quadrature HD.
    pub p: Option<QuadratureStats>,
}

/// Vacuum-input HD variance of the raw estimator and the rescalings derived
/// from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoiseCalibration {
    pub reference_variance: f64,
}

impl ShotNoiseCalibration {
    pub fn new(reference_variance: f64) -> Result<Self> {
        if !(reference_variance > 0.0 && reference_variance.is_finite()) {
            return Err(invalid(
                "reference_variance",
                format!("must be > 0, got {reference_variance}"),
            ));
        }
        Ok(Self { reference_variance })
    }

    /// Maps HD vacuum variance to 1/4.
    pub fn hd_scale(&self) -> f64 {
        0.5 / self.reference_variance.sqrt()
    }

    /// Maps each DHD arm's output to the field quadrature, vacuum variance 1/2.
    pub fn dhd_scale(&self) -> f64 {
        std::f64::consts::FRAC_1_SQRT_2 / self.reference_variance.sqrt()
    }

    pub fn scale_for(&self, receiver: Receiver) -> f64 {
        match receiver {
            Receiver::Hd => self.hd_scale(),
            Receiver::Dhd => self.dhd_scale(),
            Receiver::Kk => 1.0,
        }
    }

    pub fn apply(&self, stats: &DetectionStats) -> DetectionStats {
        let s = self.scale_for(stats.receiver);
        DetectionStats {
            q: stats.q.scaled(s),
            p: stats.p.map(|p| p.scaled(s)),
            ..*stats
        }
    }
}

/// Calibration from raw vacuum-input HD or DHD statistics (`q` arm).
pub fn calibrate(vacuum: &DetectionStats) -> Result<ShotNoiseCalibration> {
    if vacuum.receiver == Receiver::Kk {
        return Err(invalid("calibration", "needs an HD or DHD vacuum run"));
    }
    if vacuum.shots != 0 && vacuum.shots < MIN_CALIBRATION_SHOTS {
        return Err(invalid(
            "shots",
            format!(
                "calibration needs >= {MIN_CALIBRATION_SHOTS} shots, got {}",
                vacuum.shots
            ),
        ));
    }
    ShotNoiseCalibration::new(vacuum.q.var)
}

fn overlap_with_detection_mode(
    state: &CoherentField,
    lo: &LocalOscillator,
    response: &PhotodiodeResponse,
) -> Result<(Complex64, f64)> {
    response.validate()?;
    let grid = state.grid();
    let xi = lo.detection_mode(grid, response)?;
    let v = xi.norm_sqr();
    if !(v > 0.0) {
        return Err(invalid("lo", "detection mode xi has zero norm"));
    }
    let z = inner_product(&xi, state.psi())? * Complex64::from_polar(1.0, -lo.phase);
    Ok((z, v))
}

/// Raw HD moments in the strong-LO limit: mean `2 Re{e^{-i theta} <xi|a>}`,
/// variance `<xi|xi>`.
pub fn hd_analytic(
    state: &CoherentField,
    lo: &LocalOscillator,
    response: &PhotodiodeResponse,
) -> Result<DetectionStats> {
    let (z, v) = overlap_with_detection_mode(state, lo, response)?;
    Ok(DetectionStats {
        receiver: Receiver::Hd,
        shots: 0,
        q: QuadratureStats::exact(2.0 * z.re, v),
        p: None,
    })
}

/// Raw DHD moments: means `sqrt 2 Re/Im{e^{-i theta} <xi|a>}`, variances `<xi|xi>`.
pub fn dhd_analytic(
    state: &CoherentField,
    lo: &LocalOscillator,
    response: &PhotodiodeResponse,
) -> Result<DetectionStats> {
    let (z, v) = overlap_with_detection_mode(state, lo, response)?;
    let s = std::f64::consts::SQRT_2;
    Ok(DetectionStats {
        receiver: Receiver::Dhd,
        shots: 0,
        q: QuadratureStats::exact(s * z.re, v),
        p: Some(QuadratureStats::exact(s * z.im, v)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Poisson,
    Gaussian,
}

fn poisson_count<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda > 0.0 {
        Poisson::new(lambda).expect("finite positive rate").sample(rng)
    } else {
        0.0
    }
}

/// Per-bin counts with mean `|c_k|^2 dt`.
fn sample_counts<R: Rng + ?Sized>(rates: &[f64], dt: f64, model: NoiseModel, rng: &mut R) -> Vec<f64> {
    match model {
        NoiseModel::Poisson => rates.iter().map(|&r| poisson_count(r * dt, rng)).collect(),
        NoiseModel::Gaussian => rates
            .iter()
            .map(|&r| {
                let l = r * dt;
                Normal::new(l, l.sqrt()).expect("finite rate").sample(rng)
            })
            .collect(),
    }
}

/// Photocurrent `H ⊛ (counts / dt)` for a field envelope `c(t)` (flux^{1/2}).
pub fn sample_photocurrent_with<R: Rng + ?Sized>(
    envelope: &ComplexSignal,
    response: &PhotodiodeResponse,
    model: NoiseModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    response.validate()?;
    let dt = envelope.grid().dt;
    let rates = envelope.intensity();
    if model == NoiseModel::Gaussian {
        let lmin = rates.iter().cloned().fold(f64::INFINITY, f64::min) * dt;
        if lmin < GAUSSIAN_MIN_COUNTS {
            return Err(invalid(
                "model",
                format!("gaussian photocurrent needs >= {GAUSSIAN_MIN_COUNTS} counts per bin, min is {lmin:.3}"),
            ));
        }
    }
    let counts = sample_counts(&rates, dt, model, rng);
    let current: Vec<f64> = counts.iter().map(|n| n / dt).collect();
    Ok(response.apply(&current))
}

pub fn sample_photocurrent(
    envelope: &ComplexSignal,
    response: &PhotodiodeResponse,
    model: NoiseModel,
    seed: u64,
) -> Result<Vec<f64>> {
    sample_photocurrent_with(envelope, response, model, &mut shot_rng(seed, 0))
}

/// Per-shot outputs of a Monte Carlo run, in shot order.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub stats: DetectionStats,
    pub q: Vec<f64>,
    pub p: Option<Vec<f64>>,
    /// KK only: retrieved total phase at the probe sample.
    pub probe_phase: Option<Vec<f64>>,
}

impl MonteCarloRun {
    pub fn calibrated(&self, cal: &ShotNoiseCalibration) -> Self {
        let s = cal.scale_for(self.stats.receiver);
        Self {
            stats: cal.apply(&self.stats),
            q: self.q.iter().map(|x| x * s).collect(),
            p: self.p.as_ref().map(|p| p.iter().map(|x| x * s).collect()),
            probe_phase: self.probe_phase.clone(),
        }
    }

    /// `shot,q[,p][,phase]` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| KkError::Parse(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["shot", "q"];
        if self.p.is_some() {
            header.push("p");
        }
        if self.probe_phase.is_some() {
            header.push("phase");
        }
        out.write_record(&header).map_err(err)?;
        for (i, q) in self.q.iter().enumerate() {
            let mut row = vec![i.to_string(), format_float(*q)];
            if let Some(p) = &self.p {
                row.push(format_float(p[i]));
            }
            if let Some(ph) = &self.probe_phase {
                row.push(format_float(ph[i]));
            }
            out.write_record(&row).map_err(err)?;
        }
        out.flush().map_err(|e| KkError::Parse(e.to_string()))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

fn check_shots(shots: usize) -> Result<()> {
    if shots < MIN_SHOTS {
        return Err(invalid("shots", format!("need >= {MIN_SHOTS}, got {shots}")));
    }
    Ok(())
}

fn check_strong_lo(counts: f64) -> Result<()> {
    if counts < STRONG_LO_COUNTS {
        return Err(KkError::WeakLocalOscillator {
            counts,
            required: STRONG_LO_COUNTS,
        });
    }
    Ok(())
}

/// Balanced-pair output `sum_j w_j (N_c - N_d)_j` for signal `a` and LO `b`
/// mixed as `c = (a + b)/sqrt 2`, `d = (a - b)/sqrt 2`.
fn balanced_shot<R: Rng + ?Sized>(a: &[Complex64], b: &[Complex64], weight: &[f64], dt: f64, rng: &mut R) -> f64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut acc = 0.0;
    for ((x, y), w) in a.iter().zip(b).zip(weight) {
        let nc = poisson_count(((x + y) * h).norm_sqr() * dt, rng);
        let nd = poisson_count(((x - y) * h).norm_sqr() * dt, rng);
        acc += w * (nc - nd);
    }
    acc
}

fn prepare_balanced(
    state: &CoherentField,
    lo: &LocalOscillator,
    response: &PhotodiodeResponse,
    shots: usize,
) -> Result<(ComplexSignal, Vec<f64>)> {
    check_shots(shots)?;
    response.validate()?;
    let grid = state.grid();
    let b = lo.field(grid)?;
    response.check_against(&b)?;
    check_strong_lo(lo.peak_counts(grid)?)?;
    Ok((b, response.integration_weight(grid.n_samples)))
}

/// Raw (uncalibrated) HD Monte Carlo with a shaped or monochromatic LO.
pub fn hd_monte_carlo(
    state: &CoherentField,
    lo: &LocalOscillator,
    response: &PhotodiodeResponse,
    shots: usize,
    seed: u64,
) -> Result<MonteCarloRun> {
    let (b, weight) = prepare_balanced(state, lo, response, shots)?;
    let dt = state.grid().dt;
    let a = state.psi().samples();
    let q: Vec<f64> = (0..shots as u64)
        .into_par_iter()
        .map(|i| balanced_shot(a, b.samples(), &weight, dt, &mut shot_rng(seed, i)))
        .collect();
    Ok(MonteCarloRun {
        stats: DetectionStats {
            receiver: Receiver::Hd,
            shots,
            q: QuadratureStats::from_samples(&q)?,
            p: None,
        },
        q,
        p: None,
        probe_phase: None,
    })
}

/// Raw DHD Monte Carlo: the signal is split on a balanced beamsplitter whose
/// other port is vacuum, and each half is homodyned with the full LO, the `p`
/// arm at phase `theta + pi/2`.
pub fn dhd_monte_carlo(
    state: &CoherentField,
    lo: &LocalOscillator,
    response: &PhotodiodeResponse,
    shots: usize,
    seed: u64,
) -> Result<MonteCarloRun> {
    let (bq, weight) = prepare_balanced(state, lo, response, shots)?;
    let bp = lo
        .with_phase(lo.phase + std::f64::consts::FRAC_PI_2)
        .field(state.grid())?;
    let dt = state.grid().dt;
    let half: Vec<Complex64> = state
        .psi()
        .samples()
        .iter()
        .map(|z| z * std::f64::consts::FRAC_1_SQRT_2)
        .collect();
    let pairs: Vec<(f64, f64)> = (0..shots as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = shot_rng(seed, i);
            let q = balanced_shot(&half, bq.samples(), &weight, dt, &mut rng);
            let p = balanced_shot(&half, bp.samples(), &weight, dt, &mut rng);
            (q, p)
        })
        .collect();
    let (q, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(MonteCarloRun {
        stats: DetectionStats {
            receiver: Receiver::Dhd,
            shots,
            q: QuadratureStats::from_samples(&q)?,
            p: Some(QuadratureStats::from_samples(&p)?),
        },
        q,
        p: Some(p),
        probe_phase: None,
    })
}

/// Inputs of a KK Monte Carlo run.
#[derive(Debug, Clone)]
pub struct KkSetup<'a> {
    pub state: &'a CoherentField,
    /// Must be monochromatic.
    pub lo: &'a LocalOscillator,
    pub bs: BeamsplitterParams,
    pub cfg: KkRetrievalConfig,
    /// Normalized single-sideband analysis mode.
    pub mode: &'a ComplexSignal,
    pub response: &'a PhotodiodeResponse,
    /// Sample index at which the retrieved phase is recorded each shot.
    pub probe: Option<usize>,
}

/// KK receiver: one detected output `c = r A e^{i theta} + t a(t)`, phase
/// retrieval, field reconstruction and projection on the analysis mode. The
/// quadratures are in field units; no calibration is applied.
pub fn kk_receive(setup: &KkSetup<'_>, shots: usize, seed: u64) -> Result<MonteCarloRun> {
    let KkSetup {
        state,
        lo,
        bs,
        cfg,
        mode,
        response,
        probe,
    } = *setup;
    check_shots(shots)?;
    response.validate()?;
    let grid = *state.grid();
    if !mode.grid().same_as(&grid) {
        return Err(KkError::GridMismatch);
    }
    if lo.mode != LoMode::Monochromatic {
        return Err(invalid("lo.mode", "KK reception needs a monochromatic LO"));
    }
    if (cfg.lo_amplitude - lo.amplitude).abs() > 1e-12 * lo.amplitude || (cfg.lo_phase - lo.phase).abs() > 1e-12 {
        return Err(invalid(
            "retrieval",
            "retrieval LO parameters differ from the physical LO",
        ));
    }
    if let Some(k) = probe {
        if k >= grid.n_samples {
            return Err(invalid("probe", format!("index {k} is off the grid")));
        }
    }
    validate_analysis_mode(mode)?;
    let resolution = rms_bandwidth(state.psi()) * grid.dt;
    if resolution > MAX_BANDWIDTH_DT {
        return Err(invalid(
            "signal",
            format!("bandwidth x dt = {resolution:.3} exceeds {MAX_BANDWIDTH_DT}; refine the grid"),
        ));
    }
    let check = min_phase_holds(state.psi(), &bs, lo.amplitude)?;
    let required = KK_MARGIN_FRACTION * bs.r * lo.amplitude;
    if check.margin < required {
        return Err(KkError::MinimumPhase {
            margin: check.margin,
            required,
        });
    }
    let lo_counts = (bs.r * lo.amplitude).powi(2) * grid.dt;
    check_strong_lo(lo_counts)?;
    let shifted = state
        .psi()
        .map(|z| z * bs.t + Complex64::from_polar(bs.r * lo.amplitude, lo.phase));
    response.check_against(state.psi())?;
    let retriever = KkRetriever::new(grid.n_samples, cfg, bs)?;
    let rates = shifted.intensity();

    let results: Vec<Result<(f64, f64, f64)>> = (0..shots as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = shot_rng(seed, i);
            let counts = sample_counts(&rates, grid.dt, NoiseModel::Poisson, &mut rng);
            let current: Vec<f64> = counts.iter().map(|n| n / grid.dt).collect();
            let current = response.apply(&current);
            let (field, ph) = retriever.reconstruct(grid, &current)?;
            let z = inner_product(mode, &field)?;
            let phase = probe.map_or(f64::NAN, |k| ph.phase[k]);
            Ok((z.re, z.im, phase))
        })
        .collect();
    let mut q = Vec::with_capacity(shots);
    let mut p = Vec::with_capacity(shots);
    let mut phase = Vec::with_capacity(shots);
    for r in results {
        let (a, b, c) = r?;
        q.push(a);
        p.push(b);
        phase.push(c);
    }
    Ok(MonteCarloRun {
        stats: DetectionStats {
            receiver: Receiver::Kk,
            shots,
            q: QuadratureStats::from_samples(&q)?,
            p: Some(QuadratureStats::from_samples(&p)?),
        },
        q,
        p: Some(p),
        probe_phase: probe.map(|_| phase),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Expansion;

    fn gaussian_mode(grid: TimeGrid, width: f64) -> ComplexSignal {
        ComplexSignal::from_fn(grid, |t| Complex64::new((-t * t / (2.0 * width * width)).exp(), 0.0))
            .normalized()
            .unwrap()
    }

    #[test]
    fn kernel_adjoint_identity() {
        let h = PhotodiodeResponse::kernel(vec![0.2, 0.5, 0.3]).unwrap();
        let x: Vec<f64> = (0..9).map(|k| (k as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = (0..9).map(|k| 1.0 + k as f64 * 0.1).collect();
        let lhs: f64 = h.apply(&x).iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(h.adjoint(&w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let impulse = h.apply(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(impulse, vec![0.0, 0.2, 0.5, 0.3, 0.0]);
        assert!(PhotodiodeResponse::kernel(vec![0.5, 0.5]).is_err());
        assert!(PhotodiodeResponse::kernel(vec![]).is_err());
    }

    #[test]
    fn analytic_hd_and_dhd() {
        let grid = TimeGrid::centered(1.0, 128).unwrap();
        let g = gaussian_mode(grid, 8.0);
        let lo = LocalOscillator::shaped(100.0, 0.0, g.clone()).unwrap();
        let ideal = PhotodiodeResponse::IdealDelta;
        let vac = CoherentField::new(ComplexSignal::zeros(grid));
        let st = hd_analytic(&vac, &lo, &ideal).unwrap();
        assert_eq!(st.q.mean, 0.0);
        assert!((st.q.var - 1e4).abs() < 1e-6);

        let cal = calibrate(&st).unwrap();
        let coh = CoherentField::from_mode(Complex64::new(3.0, 4.0), &g);
        let hd = cal.apply(&hd_analytic(&coh, &lo, &ideal).unwrap());
        assert!((hd.q.mean - 3.0).abs() < 1e-9);
        assert!((hd.q.var - 0.25).abs() < 1e-12);
        assert!((hd.q.snr - 9.0).abs() < 1e-8);

        let dhd = cal.apply(&dhd_analytic(&coh, &lo, &ideal).unwrap());
        let p = dhd.p.unwrap();
        assert!((dhd.q.mean - 3.0).abs() < 1e-9 && (p.mean - 4.0).abs() < 1e-9);
        assert!((dhd.q.var - 0.5).abs() < 1e-12 && (p.var - 0.5).abs() < 1e-12);
        assert!((dhd.q.snr / hd.q.snr - 0.5).abs() < 1e-12);

        // A mode orthogonal to xi gives zero mean.
        let odd = ComplexSignal::from_fn(grid, |t| Complex64::new(t * (-t * t / 128.0).exp(), 0.0))
            .normalized()
            .unwrap();
        let st = hd_analytic(&CoherentField::from_mode(Complex64::new(5.0, 0.0), &odd), &lo, &ideal).unwrap();
        assert!(st.q.mean.abs() < 1e-9);

        let dark = LocalOscillator::shaped(0.0, 0.0, g).unwrap();
        assert!(hd_analytic(&coh, &dark, &ideal).is_err());
    }

    #[test]
    fn calibration_rejects_degenerate_input() {
        assert!(ShotNoiseCalibration::new(0.0).is_err());
        let st = DetectionStats {
            receiver: Receiver::Hd,
            shots: 500,
            q: QuadratureStats::exact(0.0, 1.0),
            p: None,
        };
        assert!(calibrate(&st).is_err());
    }

    #[test]
    fn photocurrent_examples() {
        let grid = TimeGrid::new(0.0, 1e-3, 1000).unwrap();
        let zero = ComplexSignal::zeros(grid);
        let i = sample_photocurrent(&zero, &PhotodiodeResponse::IdealDelta, NoiseModel::Poisson, 1).unwrap();
        assert!(i.iter().all(|&x| x == 0.0));
        assert!(sample_photocurrent(&zero, &PhotodiodeResponse::IdealDelta, NoiseModel::Gaussian, 1).is_err());

        // lambda = 1e3 per bin: count variance equals the mean within 5%.
        let a = (1e3f64 / 1e-3).sqrt();
        let flat = ComplexSignal::from_fn(grid, |_| Complex64::new(a, 0.0));
        let i = sample_photocurrent(&flat, &PhotodiodeResponse::IdealDelta, NoiseModel::Poisson, 7).unwrap();
        let counts: Vec<f64> = i.iter().map(|x| x * 1e-3).collect();
        let st = QuadratureStats::from_samples(&counts).unwrap();
        assert!((st.mean - 1e3).abs() < 5.0 * st.stderr_mean);
        assert!((st.var / st.mean - 1.0).abs() < 0.1);
        let g = sample_photocurrent(&flat, &PhotodiodeResponse::IdealDelta, NoiseModel::Gaussian, 7).unwrap();
        assert_eq!(g.len(), 1000);
    }

    #[test]
    fn hd_monte_carlo_preconditions() {
        let grid = TimeGrid::centered(1.0, 64).unwrap();
        let g = gaussian_mode(grid, 6.0);
        let vac = CoherentField::new(ComplexSignal::zeros(grid));
        let weak = LocalOscillator::shaped(10.0, 0.0, g.clone()).unwrap();
        let ideal = PhotodiodeResponse::IdealDelta;
        assert!(matches!(
            hd_monte_carlo(&vac, &weak, &ideal, 200, 1),
            Err(KkError::WeakLocalOscillator { .. })
        ));
        let strong = LocalOscillator::shaped(200.0, 0.0, g).unwrap();
        assert!(hd_monte_carlo(&vac, &strong, &ideal, 10, 1).is_err());
        let wide = PhotodiodeResponse::kernel(vec![1.0 / 41.0; 41]).unwrap();
        assert!(hd_monte_carlo(&vac, &strong, &wide, 200, 1).is_err());
        let a = hd_monte_carlo(&vac, &strong, &ideal, 200, 9).unwrap();
        let b = hd_monte_carlo(&vac, &strong, &ideal, 200, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kk_rejects_minimum_phase_violation() {
        let grid = TimeGrid::centered(1.0, 2048).unwrap();
        let sigma = 12.0 * grid.d_omega();
        let chi = crate::states::make_ssb_gaussian_chi(grid, 6.0 * sigma, sigma, 1.0).unwrap();
        let mode = chi.normalized().unwrap();
        let bs = BeamsplitterParams::from_reflection(0.05).unwrap();
        let a = 1.5 * bs.t * chi.max_abs() / bs.r;
        let lo = LocalOscillator::monochromatic(a, 0.0).unwrap();
        let cfg = KkRetrievalConfig::new(Expansion::FullLog, a, 0.0, &bs).unwrap();
        let state = CoherentField::new(chi);
        let setup = KkSetup {
            state: &state,
            lo: &lo,
            bs,
            cfg,
            mode: &mode,
            response: &PhotodiodeResponse::IdealDelta,
            probe: None,
        };
        assert!(matches!(kk_receive(&setup, 200, 1), Err(KkError::MinimumPhase { .. })));
    }

    #[test]
    fn kk_rejects_undersampled_signal() {
        let grid = TimeGrid::centered(1.0, 256).unwrap();
        let sigma = 10.0 * grid.d_omega();
        let chi = crate::states::make_ssb_gaussian_chi(grid, 1.2, sigma, 1.0).unwrap();
        let mode = chi.normalized().unwrap();
        let bs = BeamsplitterParams::from_reflection(0.5).unwrap();
        let a = 100.0;
        let lo = LocalOscillator::monochromatic(a, 0.0).unwrap();
        let cfg = KkRetrievalConfig::new(Expansion::FullLog, a, 0.0, &bs).unwrap();
        let state = CoherentField::new(chi);
        let setup = KkSetup {
            state: &state,
            lo: &lo,
            bs,
            cfg,
            mode: &mode,
            response: &PhotodiodeResponse::IdealDelta,
            probe: None,
        };
        let err = kk_receive(&setup, 200, 1).unwrap_err();
        assert!(err.to_string().contains("bandwidth"), "{err}");
    }

    #[test]
    fn csv_output_has_expected_columns() {
        let run = MonteCarloRun {
            stats: DetectionStats {
                receiver: Receiver::Dhd,
                shots: 2,
                q: QuadratureStats::exact(0.0, 1.0),
                p: Some(QuadratureStats::exact(0.0, 1.0)),
            },
            q: vec![0.1, -0.2],
            p: Some(vec![1.0, 2.0]),
            probe_phase: None,
        };
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "shot,q,p\n0,0.1,1.0\n1,-0.2,2.0\n");
    }
}
