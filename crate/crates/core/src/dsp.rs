//! Kramers-Kronig signal processing: principal-value Hilbert kernel,
//! minimum-phase check, phase retrieval from intensity and field/quadrature
//! reconstruction.
//!
//! The KK Hilbert operator is `h(t) = -PV ∫ f(t') / (2 pi (t - t')) dt'`.
//! Under the `e^{+iwt}` forward convention its continuum transfer function is
//! `-(i/2) sign(w)`, so `cos(w0 t) -> -(1/2) sin(w0 t)` and
//! `sin(w0 t) -> +(1/2) cos(w0 t)`.
//!
//! On a grid the PV integral skips the singular sample, giving the discrete
//! kernel `K(m) = -1 / (2 pi m)`, `K(0) = 0`. The dt factors cancel, so the
//! kernel does not depend on the sample spacing. Its transfer function is
//! `-(i/2) sign(w) (1 - |w| dt / pi)`: the continuum multiplier up to a
//! relative error `|w| dt / pi`, which sets the resolution requirement
//! (signal bandwidth times dt small).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::Fft;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KkError, Result};
use crate::grid::{fft_plan, inner_product, is_single_sideband, ComplexSignal, TimeGrid};

/// Real beamsplitter amplitudes, `r^2 + t^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamsplitterParams {
    pub r: f64,
    pub t: f64,
}

impl BeamsplitterParams {
    pub fn new(r: f64, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&t) {
            return Err(invalid("beamsplitter", format!("r={r}, t={t} must lie in [0,1]")));
        }
        if (r * r + t * t - 1.0).abs() > 1e-12 {
            return Err(invalid("beamsplitter", format!("r^2 + t^2 = {} != 1", r * r + t * t)));
        }
        Ok(Self { r, t })
    }

    pub fn from_reflection(r: f64) -> Result<Self> {
        Self::new(r, (1.0 - r * r).max(0.0).sqrt())
    }

    pub fn balanced() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { r: h, t: h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// `ln I`, exact.
    FullLog,
    /// `(I - r^2 A^2) / (r^2 A^2)`, the first term of the log series.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KkRetrievalConfig {
    pub expansion: Expansion,
    pub lo_amplitude: f64,
    pub lo_phase: f64,
    pub intensity_floor: f64,
}

impl KkRetrievalConfig {
    /// Floor defaults to `1e-12 r^2 A^2`.
    pub fn new(expansion: Expansion, lo_amplitude: f64, lo_phase: f64, bs: &BeamsplitterParams) -> Result<Self> {
        let floor = 1e-12 * bs.r * bs.r * lo_amplitude * lo_amplitude;
        Self::with_floor(expansion, lo_amplitude, lo_phase, floor)
    }

    pub fn with_floor(expansion: Expansion, lo_amplitude: f64, lo_phase: f64, intensity_floor: f64) -> Result<Self> {
        if !(lo_amplitude > 0.0) || !lo_amplitude.is_finite() {
            return Err(invalid("lo_amplitude", format!("must be > 0, got {lo_amplitude}")));
        }
        if !(intensity_floor > 0.0) {
            return Err(invalid(
                "intensity_floor",
                format!("must be > 0, got {intensity_floor}"),
            ));
        }
        if !lo_phase.is_finite() {
            return Err(invalid("lo_phase", "must be finite"));
        }
        Ok(Self {
            expansion,
            lo_amplitude,
            lo_phase,
            intensity_floor,
        })
    }
}

/// Brute-force PV quadrature of the KK Hilbert operator, `O(n^2)`.
pub fn hilbert_kk_direct(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (j, &fj) in f.iter().enumerate() {
                if j != i {
                    acc += fj / (i as f64 - j as f64);
                }
            }
            -acc / (2.0 * PI)
        })
        .collect()
}

/// FFT evaluation of the same discrete operator as [`hilbert_kk_direct`],
/// prepared once for a given signal length.
///
/// The signal is zero-padded to `4n` (next power of two) so the circular
/// product realizes the linear PV sum without wraparound.
#[derive(Clone)]
pub struct HilbertKernel {
    n: usize,
    transfer: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for HilbertKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HilbertKernel")
            .field("n", &self.n)
            .field("padded", &self.transfer.len())
            .finish()
    }
}

impl HilbertKernel {
    pub fn new(n: usize) -> Self {
        let len = (4 * n.max(1)).next_power_of_two();
        let forward = fft_plan(len, true);
        let inverse = fft_plan(len, false);
        let mut k = vec![Complex64::new(0.0, 0.0); len];
        for m in 1..n {
            let v = -1.0 / (2.0 * PI * m as f64);
            k[m] = Complex64::new(v, 0.0);
            k[len - m] = Complex64::new(-v, 0.0);
        }
        forward.process(&mut k);
        let scale = 1.0 / len as f64;
        for z in &mut k {
            *z *= scale;
        }
        Self {
            n,
            transfer: k,
            forward,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Discrete transfer function at normalized angular frequency
    /// `theta = w dt` in `(-pi, pi)`.
    pub fn ideal_response(theta: f64) -> Complex64 {
        Complex64::new(0.0, -0.5 * theta.signum() * (1.0 - theta.abs() / PI))
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n, "kernel prepared for a different length");
        let mut buf = vec![Complex64::new(0.0, 0.0); self.transfer.len()];
        for (b, &x) in buf.iter_mut().zip(f) {
            *b = Complex64::new(x, 0.0);
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.transfer) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        buf[..self.n].iter().map(|z| z.re).collect()
    }
}

/// KK Hilbert operator via FFT. See [`HilbertKernel`].
pub fn hilbert_kk_fft(f: &[f64]) -> Vec<f64> {
    HilbertKernel::new(f.len()).apply(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinPhaseCheck {
    pub holds: bool,
    /// `r A - max |t a(t)|`.
    pub margin: f64,
}

/// Sufficient minimum-phase condition `|t a(t)| < r A` at every sample.
pub fn min_phase_holds(a: &ComplexSignal, bs: &BeamsplitterParams, lo_amplitude: f64) -> Result<MinPhaseCheck> {
    if !(lo_amplitude >= 0.0) {
        return Err(invalid("lo_amplitude", format!("must be >= 0, got {lo_amplitude}")));
    }
    let peak = bs.t * a.max_abs();
    let lo = bs.r * lo_amplitude;
    Ok(MinPhaseCheck {
        holds: peak < lo,
        margin: lo - peak,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRetrieval {
    pub phase: Vec<f64>,
    /// Samples raised to the intensity floor before the logarithm.
    pub clamped: usize,
}

/// Reusable KK retrieval chain for one grid length, beamsplitter and LO.
#[derive(Debug, Clone)]
pub struct KkRetriever {
    cfg: KkRetrievalConfig,
    bs: BeamsplitterParams,
    kernel: HilbertKernel,
}

impl KkRetriever {
    pub fn new(n: usize, cfg: KkRetrievalConfig, bs: BeamsplitterParams) -> Result<Self> {
        if !(bs.r > 0.0) {
            return Err(invalid("beamsplitter", "KK retrieval needs r > 0"));
        }
        Ok(Self {
            cfg,
            bs,
            kernel: HilbertKernel::new(n),
        })
    }

    pub fn config(&self) -> &KkRetrievalConfig {
        &self.cfg
    }

    /// Intensity the LO alone produces at the photodiode, `r^2 A^2`.
    pub fn lo_intensity(&self) -> f64 {
        let ra = self.bs.r * self.cfg.lo_amplitude;
        ra * ra
    }

    /// Phase of `r A + t a(t) e^{-i theta}` from the intensity trace.
    ///
    /// The constant `ln(r^2 A^2)` is removed before the Hilbert operator: it
    /// integrates to zero on the real line but not on a finite window.
    pub fn phase(&self, intensity: &[f64]) -> Result<PhaseRetrieval> {
        if intensity.len() != self.kernel.len() {
            return Err(KkError::InvalidGrid("intensity length differs from retriever".into()));
        }
        if let Some(k) = intensity.iter().position(|x| !x.is_finite()) {
            return Err(KkError::NonFinite(k));
        }
        let i0 = self.lo_intensity();
        let mut clamped = 0;
        let x: Vec<f64> = match self.cfg.expansion {
            Expansion::FullLog => {
                let base = i0.ln();
                intensity
                    .iter()
                    .map(|&v| {
                        if v <= self.cfg.intensity_floor {
                            clamped += 1;
                            self.cfg.intensity_floor.ln() - base
                        } else {
                            v.ln() - base
                        }
                    })
                    .collect()
            }
            Expansion::FirstOrder => intensity.iter().map(|&v| (v - i0) / i0).collect(),
        };
        Ok(PhaseRetrieval {
            phase: self.kernel.apply(&x),
            clamped,
        })
    }

    /// `a(t) = e^{i theta} (e^{i phi} sqrt(I) - r A) / t`.
    pub fn field(&self, grid: TimeGrid, intensity: &[f64], phase: &[f64]) -> Result<ComplexSignal> {
        if intensity.len() != grid.n_samples || phase.len() != grid.n_samples {
            return Err(KkError::InvalidGrid("intensity/phase length differs from grid".into()));
        }
        if !(self.bs.t > 0.0) {
            return Err(invalid("beamsplitter", "field reconstruction needs t > 0"));
        }
        let ra = self.bs.r * self.cfg.lo_amplitude;
        let rot = Complex64::from_polar(1.0 / self.bs.t, self.cfg.lo_phase);
        let samples = intensity
            .iter()
            .zip(phase)
            .map(|(&i, &p)| {
                let amp = i.max(0.0).sqrt();
                (Complex64::from_polar(amp, p) - ra) * rot
            })
            .collect();
        ComplexSignal::new(grid, samples)
    }

    /// Phase retrieval followed by field reconstruction.
    pub fn reconstruct(&self, grid: TimeGrid, intensity: &[f64]) -> Result<(ComplexSignal, PhaseRetrieval)> {
        let ph = self.phase(intensity)?;
        let field = self.field(grid, intensity, &ph.phase)?;
        Ok((field, ph))
    }
}

pub fn kk_phase_from_intensity(
    intensity: &[f64],
    cfg: &KkRetrievalConfig,
    bs: &BeamsplitterParams,
) -> Result<PhaseRetrieval> {
    KkRetriever::new(intensity.len(), *cfg, *bs)?.phase(intensity)
}

pub fn kk_field_reconstruct(
    grid: TimeGrid,
    intensity: &[f64],
    phase: &[f64],
    cfg: &KkRetrievalConfig,
    bs: &BeamsplitterParams,
) -> Result<ComplexSignal> {
    KkRetriever::new(intensity.len(), *cfg, *bs)?.field(grid, intensity, phase)
}

/// Single-sideband tolerance for analysis modes.
pub const SSB_TOL: f64 = 1e-3;

/// Checks that `f` is a normalized single-sideband analysis mode.
pub fn validate_analysis_mode(f: &ComplexSignal) -> Result<()> {
    let norm = f.norm_sqr();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(invalid("mode", format!("must be normalized, <f|f> = {norm}")));
    }
    if !is_single_sideband(f, SSB_TOL)? {
        return Err(KkError::NotSingleSideband {
            fraction: crate::grid::negative_frequency_fraction(f),
            tol: SSB_TOL,
        });
    }
    Ok(())
}

/// `(q, p) = (Re <f|a_rec>, Im <f|a_rec>)` for a single-sideband mode `f`.
pub fn kk_quadratures(a_rec: &ComplexSignal, f: &ComplexSignal) -> Result<(f64, f64)> {
    validate_analysis_mode(f)?;
    let z = inner_product(f, a_rec)?;
    Ok((z.re, z.im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::conjugate_mode;

    #[test]
    fn beamsplitter_validation() {
        assert!(BeamsplitterParams::new(0.6, 0.8).is_ok());
        assert!(BeamsplitterParams::new(0.6, 0.6).is_err());
        assert!(BeamsplitterParams::new(-0.1, 1.0).is_err());
        let bs = BeamsplitterParams::from_reflection(0.1).unwrap();
        assert!((bs.r * bs.r + bs.t * bs.t - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_is_annihilated_away_from_edges() {
        // The PV sum of a constant over a finite grid is -c/(2 pi) ln((n-1-i)/i):
        // zero only at the centre, which is the discrete analogue of the
        // real-line identity.
        let n = 257;
        let h = hilbert_kk_direct(&vec![3.0; n]);
        assert!(h[n / 2].abs() < 1e-8 * 3.0);
        assert_eq!(hilbert_kk_fft(&vec![0.0; 64]), vec![0.0; 64]);
    }

    #[test]
    fn transfer_matches_closed_form() {
        let n = 64;
        let ker = HilbertKernel::new(n);
        let theta: f64 = 0.3;
        // Positive frequency is e^{-i theta k}, so the response is
        // sum_m K(m) e^{+i theta m}.
        let direct: Complex64 = (1..2_000_000)
            .map(|m| {
                let m = m as f64;
                -1.0 / (2.0 * PI * m) * (Complex64::from_polar(1.0, theta * m) - Complex64::from_polar(1.0, -theta * m))
            })
            .sum();
        let want = HilbertKernel::ideal_response(theta);
        assert!((direct - want).norm() < 1e-5, "{direct} vs {want}");
        assert_eq!(ker.len(), n);
    }

    #[test]
    fn fft_matches_direct_on_random_input() {
        let n = 300;
        let f: Vec<f64> = (0..n).map(|k| ((k * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let a = hilbert_kk_direct(&f);
        let b = hilbert_kk_fft(&f);
        let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn min_phase_examples() {
        let grid = TimeGrid::centered(1.0, 64).unwrap();
        let bs = BeamsplitterParams::balanced();
        let zero = ComplexSignal::zeros(grid);
        let c = min_phase_holds(&zero, &bs, 2.0).unwrap();
        assert!(c.holds);
        assert!((c.margin - bs.r * 2.0).abs() < 1e-15);

        let a_amp = 2.0;
        let big = ComplexSignal::from_fn(grid, |_| Complex64::new(2.0 * a_amp * bs.r / bs.t, 0.0));
        assert!(!min_phase_holds(&big, &bs, a_amp).unwrap().holds);
        assert!(min_phase_holds(&zero, &bs, -1.0).is_err());
    }

    #[test]
    fn lo_only_gives_zero_phase_and_field() {
        let grid = TimeGrid::centered(1.0, 128).unwrap();
        let bs = BeamsplitterParams::balanced();
        let cfg = KkRetrievalConfig::new(Expansion::FullLog, 10.0, 0.0, &bs).unwrap();
        let i0 = vec![bs.r * bs.r * 100.0; 128];
        let ph = kk_phase_from_intensity(&i0, &cfg, &bs).unwrap();
        assert!(ph.phase.iter().all(|p| p.abs() < 1e-12));
        assert_eq!(ph.clamped, 0);
        let a = kk_field_reconstruct(grid, &i0, &ph.phase, &cfg, &bs).unwrap();
        assert!(a.max_abs() < 1e-12);
    }

    #[test]
    fn nonpositive_intensity_is_clamped_and_counted() {
        let bs = BeamsplitterParams::balanced();
        let cfg = KkRetrievalConfig::new(Expansion::FullLog, 10.0, 0.0, &bs).unwrap();
        let mut i = vec![50.0; 32];
        i[3] = 0.0;
        i[7] = -1.0;
        let ph = kk_phase_from_intensity(&i, &cfg, &bs).unwrap();
        assert_eq!(ph.clamped, 2);
        assert!(ph.phase.iter().all(|p| p.is_finite()));
        let first = KkRetrievalConfig::new(Expansion::FirstOrder, 10.0, 0.0, &bs).unwrap();
        assert_eq!(kk_phase_from_intensity(&i, &first, &bs).unwrap().clamped, 0);
    }

    #[test]
    fn quadratures_project_onto_mode() {
        let grid = TimeGrid::centered(0.05, 1024).unwrap();
        let w0 = 60.0 * grid.d_omega();
        let f = ComplexSignal::from_fn(grid, |t| Complex64::from_polar((-t * t / 2.0).exp(), -w0 * t))
            .normalized()
            .unwrap();
        let a = f.scale(Complex64::new(3.0, 4.0));
        let (q, p) = kk_quadratures(&a, &f).unwrap();
        assert!((q - 3.0).abs() < 1e-12 && (p - 4.0).abs() < 1e-12);

        // Image-mode content projects to ~0.
        let img = conjugate_mode(&f).scale(Complex64::new(2.0, -1.0));
        let (q, p) = kk_quadratures(&img, &f).unwrap();
        assert!(q.abs() < 1e-8 && p.abs() < 1e-8);

        let cos = ComplexSignal::from_fn(grid, |t| Complex64::new((-t * t / 2.0).exp() * (w0 * t).cos(), 0.0))
            .normalized()
            .unwrap();
        assert!(matches!(
            kk_quadratures(&a, &cos),
            Err(KkError::NotSingleSideband { .. })
        ));
        assert!(kk_quadratures(&a, &f.scale(Complex64::new(2.0, 0.0))).is_err());
    }
}
