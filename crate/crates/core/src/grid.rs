//! Uniform time grids, sampled complex envelopes and mode algebra.
//!
//! Amplitudes are dimensionless with `|s(t)|^2` read as a photon flux in
//! photons per second, so `sum |s_k|^2 dt` is a mean photon number.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KkError, Result};

/// Uniform sampling grid `t_k = t_start + k dt`, `k = 0..n_samples`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub dt: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, n_samples: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KkError::InvalidGrid(format!("dt must be > 0, got {dt}")));
        }
        if !t_start.is_finite() {
            return Err(KkError::InvalidGrid("t_start must be finite".into()));
        }
        if n_samples < 2 {
            return Err(KkError::InvalidGrid(format!(
                "need at least 2 samples, got {n_samples}"
            )));
        }
        Ok(Self { t_start, dt, n_samples })
    }

    /// Grid of `n_samples` points centred on `t = 0`.
    pub fn centered(dt: f64, n_samples: usize) -> Result<Self> {
        Self::new(-(n_samples as f64) * dt / 2.0, dt, n_samples)
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn duration(&self) -> f64 {
        self.n_samples as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples).map(|k| self.time(k)).collect()
    }

    /// Frequency spacing `2 pi / T`.
    pub fn d_omega(&self) -> f64 {
        2.0 * PI / self.duration()
    }

    /// Angular frequency of spectral bin `j` in FFT order, spanning
    /// `[-pi/dt, pi/dt)`.
    pub fn omega(&self, j: usize) -> f64 {
        let n = self.n_samples as i64;
        let j = j as i64;
        let m = if j < (n + 1) / 2 { j } else { j - n };
        // Even n: bin n/2 maps to -pi/dt.
        let m = if n % 2 == 0 && j == n / 2 { -n / 2 } else { m };
        m as f64 * self.d_omega()
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.n_samples).map(|j| self.omega(j)).collect()
    }

    /// Nearest sample index for time `t`, if it lies on the grid span.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = ((t - self.t_start) / self.dt).round();
        if x < 0.0 || x >= self.n_samples as f64 {
            None
        } else {
            Some(x as usize)
        }
    }

    pub(crate) fn same_as(&self, other: &TimeGrid) -> bool {
        let tol = 1e-12 * self.dt.max(other.dt);
        self.n_samples == other.n_samples
            && (self.dt - other.dt).abs() <= tol
            && (self.t_start - other.t_start).abs() <= tol * self.n_samples as f64
    }
}

/// Complex envelope sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    grid: TimeGrid,
    samples: Vec<Complex64>,
}

impl ComplexSignal {
    pub fn new(grid: TimeGrid, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.n_samples {
            return Err(KkError::InvalidGrid(format!(
                "{} samples for a grid of {}",
                samples.len(),
                grid.n_samples
            )));
        }
        if let Some(k) = samples.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(KkError::NonFinite(k));
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            samples: vec![Complex64::new(0.0, 0.0); grid.n_samples],
        }
    }

    /// Samples `f(t_k)`. Panics on non-finite output.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> Complex64) -> Self {
        let samples: Vec<Complex64> = (0..grid.n_samples).map(|k| f(grid.time(k))).collect();
        Self::new(grid, samples).expect("sampled function must be finite")
    }

    pub fn from_real(grid: TimeGrid, re: &[f64]) -> Result<Self> {
        Self::new(grid, re.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `∫ |s|^2 dt`.
    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.arg()).collect()
    }

    pub fn real(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.re).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.im).collect()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|z| z * c)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self::new(self.grid, self.samples.iter().map(|&z| f(z)).collect()).expect("mapped signal must stay finite")
    }

    /// Unit-norm copy; `None` for the zero signal.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm_sqr();
        (n > 0.0).then(|| self.scale(Complex64::new(1.0 / n.sqrt(), 0.0)))
    }

    pub fn add(&self, other: &ComplexSignal) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexSignal) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &ComplexSignal, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(KkError::GridMismatch);
        }
        Self::new(
            self.grid,
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }
}

/// Spectral amplitudes on the conjugate frequency grid, stored in FFT order
/// (see [`TimeGrid::omega`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSignal {
    grid: TimeGrid,
    samples: Vec<Complex64>,
}

impl SpectralSignal {
    pub fn new(grid: TimeGrid, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.n_samples {
            return Err(KkError::InvalidGrid("spectrum length mismatch".into()));
        }
        Ok(Self { grid, samples })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.grid.omegas()
    }

    /// `∫ |S|^2 dw / 2pi`, equal to the time-domain energy by Parseval.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.d_omega() / (2.0 * PI)
    }
}

pub(crate) fn fft_plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    }
}

/// `F(a)(w_j) = sum_k a_k e^{+i w_j t_k} dt`.
pub fn forward_transform(sig: &ComplexSignal) -> SpectralSignal {
    let grid = sig.grid;
    let mut buf = sig.samples.clone();
    // rustfft's inverse uses e^{+2 pi i jk/n}, matching the + sign convention.
    fft_plan(grid.n_samples, false).process(&mut buf);
    for (j, z) in buf.iter_mut().enumerate() {
        let w = grid.omega(j);
        *z *= Complex64::from_polar(grid.dt, w * grid.t_start);
    }
    SpectralSignal { grid, samples: buf }
}

/// `a(t_k) = sum_j S_j e^{-i w_j t_k} dw / 2pi`.
pub fn inverse_transform(spec: &SpectralSignal) -> ComplexSignal {
    let grid = spec.grid;
    let scale = grid.d_omega() / (2.0 * PI);
    let mut buf: Vec<Complex64> = spec
        .samples
        .iter()
        .enumerate()
        .map(|(j, &z)| z * Complex64::from_polar(scale, -grid.omega(j) * grid.t_start))
        .collect();
    fft_plan(grid.n_samples, true).process(&mut buf);
    ComplexSignal { grid, samples: buf }
}

/// `<f|g> = ∫ f*(t) g(t) dt`.
pub fn inner_product(f: &ComplexSignal, g: &ComplexSignal) -> Result<Complex64> {
    if !f.grid.same_as(&g.grid) {
        return Err(KkError::GridMismatch);
    }
    let s: Complex64 = f.samples.iter().zip(&g.samples).map(|(a, b)| a.conj() * b).sum();
    Ok(s * f.grid.dt)
}

/// Fraction of spectral energy at strictly negative frequencies (zero for the
/// zero signal).
pub fn negative_frequency_fraction(sig: &ComplexSignal) -> f64 {
    let spec = forward_transform(sig);
    let mut neg = 0.0;
    let mut total = 0.0;
    for (j, z) in spec.samples.iter().enumerate() {
        let p = z.norm_sqr();
        total += p;
        if spec.grid.omega(j) < 0.0 {
            neg += p;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        neg / total
    }
}

/// True iff at most a fraction `tol` of the spectral energy lies at `w < 0`.
pub fn is_single_sideband(sig: &ComplexSignal, tol: f64) -> Result<bool> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid("tol", format!("must lie in (0, 1), got {tol}")));
    }
    Ok(negative_frequency_fraction(sig) <= tol)
}

/// Image mode `f*`. Its spectrum is the mirror `F(f*)(w) = F(f)(-w)*`.
pub fn conjugate_mode(f: &ComplexSignal) -> ComplexSignal {
    f.map(|z| z.conj())
}

/// Symbol train `a(t) = sum_k alpha_k g(t - k T_s)`.
#[derive(Debug, Clone)]
pub struct EncodedSignal {
    pub signal: ComplexSignal,
    /// Set when shifted pulses are not mutually orthogonal to 1e-8.
    pub overlap_warning: bool,
    /// Largest `|<g_k|g_l>|`, `k != l`, relative to `<g|g>`.
    pub max_cross_overlap: f64,
}

fn symbol_shift(grid: &TimeGrid, symbol_period: f64) -> Result<usize> {
    let s = symbol_period / grid.dt;
    let r = s.round();
    if !(r >= 1.0) || (s - r).abs() > 1e-9 * s.max(1.0) {
        return Err(invalid(
            "symbol_period",
            format!("must be a positive multiple of dt, got {symbol_period}"),
        ));
    }
    Ok(r as usize)
}

fn shifted_pulse(pulse: &ComplexSignal, shift: usize) -> Result<ComplexSignal> {
    let n = pulse.len();
    let total = pulse.norm_sqr();
    let lost: f64 = pulse.samples[n.saturating_sub(shift)..]
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        * pulse.grid.dt;
    if shift >= n || lost > 1e-12 * total.max(f64::MIN_POSITIVE) {
        return Err(invalid("pulse", "shifted pulse runs off the end of the grid"));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    out[shift..].copy_from_slice(&pulse.samples[..n - shift]);
    ComplexSignal::new(pulse.grid, out)
}

fn shifted_pulses(pulse: &ComplexSignal, symbol_period: f64, count: usize) -> Result<Vec<ComplexSignal>> {
    let s = symbol_shift(&pulse.grid, symbol_period)?;
    (0..count).map(|k| shifted_pulse(pulse, k * s)).collect()
}

pub fn encode_symbols(symbols: &[Complex64], pulse: &ComplexSignal, symbol_period: f64) -> Result<EncodedSignal> {
    let pulses = shifted_pulses(pulse, symbol_period, symbols.len())?;
    let mut acc = vec![Complex64::new(0.0, 0.0); pulse.len()];
    for (alpha, g) in symbols.iter().zip(&pulses) {
        for (a, z) in acc.iter_mut().zip(g.samples()) {
            *a += alpha * z;
        }
    }
    let norm = pulse.norm_sqr().max(f64::MIN_POSITIVE);
    let mut max_cross: f64 = 0.0;
    for k in 0..pulses.len() {
        for l in k + 1..pulses.len() {
            let c = inner_product(&pulses[k], &pulses[l])?.norm() / norm;
            max_cross = max_cross.max(c);
        }
    }
    Ok(EncodedSignal {
        signal: ComplexSignal::new(pulse.grid, acc)?,
        overlap_warning: max_cross > 1e-8,
        max_cross_overlap: max_cross,
    })
}

/// Matched-filter decoding `alpha_l = <g_l|a>`.
pub fn decode_symbols(
    a: &ComplexSignal,
    pulse: &ComplexSignal,
    symbol_period: f64,
    n_symbols: usize,
) -> Result<Vec<Complex64>> {
    shifted_pulses(pulse, symbol_period, n_symbols)?
        .iter()
        .map(|g| inner_product(g, a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::centered(0.01, 1024).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(0.0, 0.0, 8).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::new(f64::NAN, 1.0, 8).is_err());
    }

    #[test]
    fn frequency_grid_spans_half_open_band() {
        let g = grid();
        let w = g.omegas();
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + PI / g.dt).abs() < 1e-9);
        assert!(hi < PI / g.dt);
    }

    #[test]
    fn dc_signal_transforms_to_duration() {
        let g = grid();
        let s = ComplexSignal::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let spec = forward_transform(&s);
        assert!((spec.samples()[0] - Complex64::new(g.duration(), 0.0)).norm() < 1e-9);
        assert!(spec.samples()[1..].iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn negative_exponent_lands_at_positive_frequency() {
        let g = grid();
        let w0 = 5.0 * g.d_omega();
        let s = ComplexSignal::from_fn(g, |t| Complex64::from_polar(1.0, -w0 * t));
        let spec = forward_transform(&s);
        for (j, z) in spec.samples().iter().enumerate() {
            if j == 5 {
                assert!((z.norm() - g.duration()).abs() < 1e-9);
            } else {
                assert!(z.norm() < 1e-9, "bin {j}: {z}");
            }
        }
        assert!(is_single_sideband(&s, 1e-6).unwrap());
    }

    #[test]
    fn gaussian_spectrum_matches_closed_form() {
        let g = TimeGrid::centered(0.05, 2048).unwrap();
        let sigma = 1.5;
        let s = ComplexSignal::from_fn(g, |t| Complex64::new((-t * t / (2.0 * sigma * sigma)).exp(), 0.0));
        let spec = forward_transform(&s);
        for (j, z) in spec.samples().iter().enumerate() {
            let w = g.omega(j);
            let expect = sigma * (2.0 * PI).sqrt() * (-w * w * sigma * sigma / 2.0).exp();
            assert!((z - Complex64::new(expect, 0.0)).norm() < 1e-9, "w={w}");
        }
    }

    #[test]
    fn cosine_is_not_single_sideband() {
        let g = grid();
        let w0 = 7.0 * g.d_omega();
        let s = ComplexSignal::from_fn(g, |t| Complex64::new((w0 * t).cos(), 0.0));
        assert!(!is_single_sideband(&s, 0.01).unwrap());
        assert!((negative_frequency_fraction(&s) - 0.5).abs() < 1e-9);
        assert!(is_single_sideband(&ComplexSignal::zeros(g), 0.01).unwrap());
        assert!(is_single_sideband(&s, 1.0).is_err());
    }

    #[test]
    fn conjugate_mirrors_spectrum() {
        let g = grid();
        let w0 = 40.0 * g.d_omega();
        let f = ComplexSignal::from_fn(g, |t| Complex64::from_polar((-t * t).exp(), -w0 * t));
        assert!(is_single_sideband(&f, 1e-6).unwrap());
        let fc = conjugate_mode(&f);
        assert!(negative_frequency_fraction(&fc) > 1.0 - 1e-6);
        let real = ComplexSignal::from_fn(g, |t| Complex64::new(t.sin(), 0.0));
        assert_eq!(conjugate_mode(&real), real);
        // <f|f*> = ∫ (f*)^2 dt by direct quadrature.
        let direct: Complex64 = f.samples().iter().map(|z| z.conj() * z.conj()).sum::<Complex64>() * g.dt;
        let ip = inner_product(&f, &fc).unwrap();
        assert!((ip - direct).norm() < 1e-14);
        assert!(ip.norm() < 1e-8 * f.norm_sqr());
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let a = ComplexSignal::zeros(grid());
        let b = ComplexSignal::zeros(TimeGrid::centered(0.02, 1024).unwrap());
        assert_eq!(inner_product(&a, &b), Err(KkError::GridMismatch));
    }

    fn box_pulse(g: TimeGrid, width: usize) -> ComplexSignal {
        let mut s = vec![Complex64::new(0.0, 0.0); g.n_samples];
        for z in s.iter_mut().take(width) {
            *z = Complex64::new(1.0 / (width as f64 * g.dt).sqrt(), 0.0);
        }
        ComplexSignal::new(g, s).unwrap()
    }

    #[test]
    fn single_symbol_reproduces_pulse() {
        let g = grid();
        let p = box_pulse(g, 32);
        let enc = encode_symbols(&[Complex64::new(1.0, 0.0)], &p, 32.0 * g.dt).unwrap();
        assert_eq!(enc.signal, p);
        assert!(!enc.overlap_warning);
    }

    #[test]
    fn orthonormal_symbols_round_trip() {
        let g = grid();
        let p = box_pulse(g, 32);
        let syms = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
        ];
        let enc = encode_symbols(&syms, &p, 32.0 * g.dt).unwrap();
        let pulses = shifted_pulses(&p, 32.0 * g.dt, 3).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                let ip = inner_product(&pulses[k], &pulses[l]).unwrap();
                let want = if k == l { 1.0 } else { 0.0 };
                assert!((ip - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
        let dec = decode_symbols(&enc.signal, &p, 32.0 * g.dt, 3).unwrap();
        for (a, b) in dec.iter().zip(&syms) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn overlapping_pulses_raise_warning() {
        let g = grid();
        let p = box_pulse(g, 48);
        let enc = encode_symbols(&[Complex64::new(1.0, 0.0); 3], &p, 32.0 * g.dt).unwrap();
        assert!(enc.overlap_warning);
        assert!(encode_symbols(&[Complex64::new(1.0, 0.0); 40], &p, 32.0 * g.dt).is_err());
        assert!(encode_symbols(&[Complex64::new(1.0, 0.0)], &p, 31.5 * g.dt).is_err());
    }
}
