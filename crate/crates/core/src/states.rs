//! Quantum states analysed by the receivers: coherent fields with temporal
//! envelopes, truncated Fock vectors, single-photon wavepackets and discrete
//! coherent mixtures.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::dsp::{BeamsplitterParams, SSB_TOL};
use crate::error::{invalid, KkError, Result};
use crate::grid::{is_single_sideband, negative_frequency_fraction, ComplexSignal, TimeGrid};

/// Split `psi(t) = A + chi(t)` of a coherent eigenvalue function.
#[derive(Debug, Clone, PartialEq)]
pub struct LoDecomposition {
    pub lo_amplitude: f64,
    pub chi: ComplexSignal,
}

/// Coherent state with `a(t)|psi> = psi(t)|psi>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentField {
    psi: ComplexSignal,
    decomposition: Option<LoDecomposition>,
}

impl CoherentField {
    pub fn new(psi: ComplexSignal) -> Self {
        Self {
            psi,
            decomposition: None,
        }
    }

    /// Field `alpha * mode(t)`.
    pub fn from_mode(alpha: Complex64, mode: &ComplexSignal) -> Self {
        Self::new(mode.scale(alpha))
    }

    /// `psi = A + chi` with `chi` single-sideband and `max |chi| < A`.
    pub fn decomposed(lo_amplitude: f64, chi: ComplexSignal) -> Result<Self> {
        if !(lo_amplitude > 0.0) {
            return Err(invalid("lo_amplitude", format!("must be > 0, got {lo_amplitude}")));
        }
        let peak = chi.max_abs();
        if peak >= lo_amplitude {
            return Err(KkError::MinimumPhase {
                margin: lo_amplitude - peak,
                required: 0.0,
            });
        }
        if !is_single_sideband(&chi, SSB_TOL)? {
            return Err(KkError::NotSingleSideband {
                fraction: negative_frequency_fraction(&chi),
                tol: SSB_TOL,
            });
        }
        let psi = chi.map(|z| z + lo_amplitude);
        Ok(Self {
            psi,
            decomposition: Some(LoDecomposition { lo_amplitude, chi }),
        })
    }

    pub fn psi(&self) -> &ComplexSignal {
        &self.psi
    }

    pub fn decomposition(&self) -> Option<&LoDecomposition> {
        self.decomposition.as_ref()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.psi.grid()
    }

    /// Mean photon number `∫ |psi|^2 dt`.
    pub fn mean_photons(&self) -> f64 {
        self.psi.norm_sqr()
    }
}

/// Gaussian-spectrum single-sideband pulse centred on the grid midpoint:
/// `chi(t) = peak * exp(-sigma_w^2 t^2 / 2) * exp(-i w0 t)`, whose spectrum is a
/// Gaussian of width `sigma_w` around `+w0`.
pub fn make_ssb_gaussian_chi(
    grid: TimeGrid,
    center_freq: f64,
    spectral_width: f64,
    peak_amplitude: f64,
) -> Result<ComplexSignal> {
    let center = grid.time(grid.n_samples / 2);
    make_ssb_gaussian_chi_at(grid, center_freq, spectral_width, peak_amplitude, center)
}

pub fn make_ssb_gaussian_chi_at(
    grid: TimeGrid,
    center_freq: f64,
    spectral_width: f64,
    peak_amplitude: f64,
    center_time: f64,
) -> Result<ComplexSignal> {
    if !(spectral_width > 0.0) {
        return Err(invalid("spectral_width", "must be > 0"));
    }
    if center_freq < 4.0 * spectral_width {
        return Err(invalid(
            "center_freq",
            format!("{center_freq} < 4 * spectral_width; the pulse would leak into negative frequencies"),
        ));
    }
    if spectral_width < 10.0 * grid.d_omega() {
        return Err(invalid(
            "spectral_width",
            format!(
                "{spectral_width} is below 10 frequency bins ({})",
                10.0 * grid.d_omega()
            ),
        ));
    }
    if !peak_amplitude.is_finite() {
        return Err(invalid("peak_amplitude", "must be finite"));
    }
    Ok(ComplexSignal::from_fn(grid, |t| {
        let u = t - center_time;
        Complex64::from_polar(
            peak_amplitude * (-0.5 * spectral_width * spectral_width * u * u).exp(),
            -center_freq * u,
        )
    }))
}

/// Full width at half maximum of `|s(t)|^2`, in seconds (sample resolution).
pub fn fwhm(sig: &ComplexSignal) -> f64 {
    let p = sig.intensity();
    let peak = p.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let first = p.iter().position(|&x| x >= peak / 2.0).unwrap_or(0);
    let last = p.iter().rposition(|&x| x >= peak / 2.0).unwrap_or(0);
    (last - first + 1) as f64 * sig.grid().dt
}

/// Super-Gaussian flat top of order 8 whose intensity is 1 at its centre and
/// 1/2 at `center ± duration / 2`.
pub fn flat_top_envelope(grid: TimeGrid, center: f64, duration: f64) -> Result<ComplexSignal> {
    if !(duration > 0.0) {
        return Err(invalid("duration", "must be > 0"));
    }
    Ok(ComplexSignal::from_fn(grid, |t| {
        let x = 2.0 * (t - center) / duration;
        Complex64::new((-0.5 * std::f64::consts::LN_2 * x.powi(8)).exp(), 0.0)
    }))
}

/// Monomode state `sum_n c_n |n>` truncated at `N = coeffs.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    coeffs: Vec<Complex64>,
}

impl FockVector {
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(invalid("coeffs", "truncation N must be >= 1"));
        }
        if let Some(k) = coeffs.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(KkError::NonFinite(k));
        }
        let norm: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(invalid("coeffs", format!("sum |c_n|^2 = {norm}, expected 1")));
        }
        let tail = coeffs.last().unwrap().norm_sqr();
        if tail >= 1e-8 {
            return Err(invalid(
                "coeffs",
                format!("tail mass |c_N|^2 = {tail:e} too large for truncation"),
            ));
        }
        Ok(Self { coeffs })
    }

    /// Normalizes the given coefficients first.
    pub fn normalized(coeffs: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(invalid("coeffs", "zero vector"));
        }
        Self::new(coeffs.into_iter().map(|z| z / norm).collect())
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn mean_number(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, z)| n as f64 * z.norm_sqr())
            .sum()
    }

    /// Coherent-state coefficients `e^{-|a|^2/2} a^n / sqrt(n!)`.
    pub fn coherent(alpha: Complex64, n_max: usize) -> Result<Self> {
        let mut c = Vec::with_capacity(n_max + 1);
        let mut term = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for n in 0..=n_max {
            if n > 0 {
                term = term * alpha / (n as f64).sqrt();
            }
            c.push(term);
        }
        Self::normalized(c)
    }
}

/// Normalizable phase eigenstate `c_n = (1 - |z|^2)^{1/2} z^n`.
pub fn make_phase_eigenstate(z: Complex64, n_max: usize) -> Result<FockVector> {
    let r2 = z.norm_sqr();
    if !(r2 < 1.0) {
        return Err(invalid("z", format!("|z| = {} must be < 1", r2.sqrt())));
    }
    if r2.powi(n_max as i32) >= 1e-10 {
        return Err(invalid(
            "n",
            format!("truncation {n_max} too small: |z|^(2N) = {:e}", r2.powi(n_max as i32)),
        ));
    }
    let norm = (1.0 - r2).sqrt();
    let mut zn = Complex64::new(1.0, 0.0);
    let mut c = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        c.push(zn * norm);
        zn *= z;
    }
    FockVector::new(c)
}

/// Even cat state `c_n ∝ (alpha^n / sqrt(n!)) (1 + (-1)^n)`, normalized.
pub fn make_cat_state(alpha: Complex64, n_max: usize) -> Result<FockVector> {
    let a = alpha.norm();
    if (n_max as f64) < a * a + 6.0 * a + 10.0 {
        return Err(invalid("n", format!("truncation {n_max} < |a|^2 + 6|a| + 10")));
    }
    let mut term = Complex64::new(1.0, 0.0);
    let mut c = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            term = term * alpha / (n as f64).sqrt();
        }
        c.push(if n % 2 == 0 {
            term * 2.0
        } else {
            Complex64::new(0.0, 0.0)
        });
    }
    FockVector::normalized(c)
}

/// Threshold below which `arg S` is reported as undefined.
pub const PHASE_UNDEFINED_BELOW: f64 = 1e-14;

/// `S = sum_n c_n c*_{n+1} sqrt(n+1)`, which equals `<a^dagger>` of the mode.
pub fn number_statistics_phase(v: &FockVector) -> Complex64 {
    v.coeffs
        .windows(2)
        .enumerate()
        .map(|(n, w)| w[0] * w[1].conj() * ((n + 1) as f64).sqrt())
        .sum()
}

/// `arg S`, or an error when `|S|` vanishes (vacuum, Fock states, cat states).
pub fn statistics_phase(s: Complex64) -> Result<f64> {
    if s.norm() < PHASE_UNDEFINED_BELOW {
        Err(KkError::PhaseUndefined(s.norm()))
    } else {
        Ok(s.arg())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceTerm {
    /// `r t A f(t) g*(t) S`.
    pub term: Complex64,
    /// Direct-detection mean `t^2 |f|^2 <n> + r^2 |A|^2 |g|^2 + 2 Re(term)`.
    pub mean_intensity: f64,
    /// Phase of the interference term, `theta - phi + arg f(t)` for `g = 1`;
    /// `None` when the term vanishes.
    pub total_phase: Option<f64>,
}

/// Interference between a monomode state in mode `f` and a coherent LO of
/// symbol `A` in mode `g`, evaluated at time `t`.
///
/// Time-domain operators are taken as `a(t) = a_f f*(t)`, so `<a^dagger(t)> =
/// f(t) S` and the LO contributes `<b(t)> = A g*(t)`.
pub fn interference_term(
    v: &FockVector,
    lo_symbol: Complex64,
    f: &ComplexSignal,
    g: &ComplexSignal,
    bs: &BeamsplitterParams,
    t: f64,
) -> Result<InterferenceTerm> {
    if !f.grid().same_as(g.grid()) {
        return Err(KkError::GridMismatch);
    }
    let k = f
        .grid()
        .index_of(t)
        .ok_or_else(|| invalid("t", format!("{t} is off the grid")))?;
    let fk = f.samples()[k];
    let gk = g.samples()[k];
    let s = number_statistics_phase(v);
    let term = bs.r * bs.t * lo_symbol * fk * gk.conj() * s;
    let mean_intensity = bs.t * bs.t * fk.norm_sqr() * v.mean_number()
        + bs.r * bs.r * lo_symbol.norm_sqr() * gk.norm_sqr()
        + 2.0 * term.re;
    Ok(InterferenceTerm {
        term,
        mean_intensity,
        total_phase: (term.norm() >= PHASE_UNDEFINED_BELOW).then(|| term.arg()),
    })
}

/// Normalized single-photon wavefunction `psi = A alpha_env(t) + chi(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePhotonState {
    psi: ComplexSignal,
    lo_amplitude: f64,
    envelope: ComplexSignal,
    chi: ComplexSignal,
}

impl SinglePhotonState {
    /// Builds `psi ∝ lo_ratio * max|chi| * envelope + chi` and normalizes it.
    /// `envelope` is expected to peak at 1.
    pub fn new(chi: ComplexSignal, envelope: ComplexSignal, lo_ratio: f64) -> Result<Self> {
        if !chi.grid().same_as(envelope.grid()) {
            return Err(KkError::GridMismatch);
        }
        let chi_peak = chi.max_abs();
        if !(chi_peak > 0.0) {
            return Err(invalid("chi", "zero signal"));
        }
        if !(lo_ratio >= 3.0) {
            return Err(invalid("lo_ratio", format!("{lo_ratio} < 3")));
        }
        // Sampled widths are quantized to dt, hence the 1% slack.
        if fwhm(&envelope) < 0.99 * 20.0 * fwhm(&chi) {
            return Err(invalid(
                "envelope",
                format!("duration {} < 20 x chi duration {}", fwhm(&envelope), fwhm(&chi)),
            ));
        }
        let env_peak = envelope.max_abs();
        let raw_lo = lo_ratio * chi_peak / env_peak;
        let raw = envelope.scale(Complex64::new(raw_lo, 0.0)).add(&chi)?;
        let norm = raw.norm_sqr().sqrt();
        let inv = Complex64::new(1.0 / norm, 0.0);
        Ok(Self {
            psi: raw.scale(inv),
            lo_amplitude: raw_lo / norm,
            envelope,
            chi: chi.scale(inv),
        })
    }

    pub fn psi(&self) -> &ComplexSignal {
        &self.psi
    }

    /// LO amplitude after normalization.
    pub fn lo_amplitude(&self) -> f64 {
        self.lo_amplitude
    }

    pub fn envelope(&self) -> &ComplexSignal {
        &self.envelope
    }

    /// `chi` after normalization.
    pub fn chi(&self) -> &ComplexSignal {
        &self.chi
    }

    pub fn grid(&self) -> &TimeGrid {
        self.psi.grid()
    }

    /// Click-time density `|psi(t)|^2`.
    pub fn density(&self) -> Vec<f64> {
        self.psi.intensity()
    }

    /// Same state with a global phase applied to every component.
    pub fn with_global_phase(&self, phase: f64) -> Self {
        let rot = Complex64::from_polar(1.0, phase);
        Self {
            psi: self.psi.scale(rot),
            lo_amplitude: self.lo_amplitude,
            envelope: self.envelope.scale(rot),
            chi: self.chi.scale(rot),
        }
    }
}

/// Parameters of the reference single-photon wavepacket used for tomography.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonLayout {
    pub n_samples: usize,
    pub dt: f64,
    /// chi FWHM as a fraction of the grid duration.
    pub chi_fraction: f64,
    /// Envelope FWHM as a fraction of the grid duration.
    pub envelope_fraction: f64,
    /// `w0 / sigma_w`.
    pub center_over_width: f64,
    /// `A / max|chi|`.
    pub lo_ratio: f64,
}

impl Default for SinglePhotonLayout {
    fn default() -> Self {
        Self {
            n_samples: 16384,
            dt: 1.0,
            chi_fraction: 1.0 / 40.0,
            envelope_fraction: 0.5,
            center_over_width: 6.0,
            lo_ratio: 5.0,
        }
    }
}

impl SinglePhotonLayout {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::centered(self.dt, self.n_samples)
    }

    /// Spectral width giving `|chi|^2` the requested FWHM: `2 sqrt(ln 2) / sigma_w`.
    pub fn spectral_width(&self) -> Result<f64> {
        let grid = self.grid()?;
        Ok(2.0 * std::f64::consts::LN_2.sqrt() / (self.chi_fraction * grid.duration()))
    }

    pub fn chi_duration(&self) -> Result<f64> {
        Ok(self.chi_fraction * self.grid()?.duration())
    }

    pub fn build(&self) -> Result<SinglePhotonState> {
        let grid = self.grid()?;
        let sigma = self.spectral_width()?;
        let chi = make_ssb_gaussian_chi(grid, self.center_over_width * sigma, sigma, 1.0)?;
        let center = grid.time(grid.n_samples / 2);
        let env = flat_top_envelope(grid, center, self.envelope_fraction * grid.duration())?;
        SinglePhotonState::new(chi, env, self.lo_ratio)
    }
}

/// Finite convex combination of coherent fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentMixture {
    components: Vec<(f64, CoherentField)>,
}

impl CoherentMixture {
    pub fn new(components: Vec<(f64, CoherentField)>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("components", "empty mixture"));
        }
        let grid = *components[0].1.grid();
        let mut total = 0.0;
        for (p, c) in &components {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(invalid("weight", format!("{p} outside (0, 1]")));
            }
            if !c.grid().same_as(&grid) {
                return Err(KkError::GridMismatch);
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weight", format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn pure(field: CoherentField) -> Self {
        Self {
            components: vec![(1.0, field)],
        }
    }

    pub fn components(&self) -> &[(f64, CoherentField)] {
        &self.components
    }

    pub fn grid(&self) -> &TimeGrid {
        self.components[0].1.grid()
    }
}

/// Phase of `e^{i phi}` wrapped to `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let mut x = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gaussian_chi_is_single_sideband() {
        let grid = TimeGrid::centered(1.0, 4096).unwrap();
        let sigma = 20.0 * grid.d_omega();
        let chi = make_ssb_gaussian_chi(grid, 6.0 * sigma, sigma, 1.0).unwrap();
        assert!(is_single_sideband(&chi, 1e-3).unwrap());
        assert!((chi.max_abs() - 1.0).abs() < 1e-12);
        let zero = make_ssb_gaussian_chi(grid, 6.0 * sigma, sigma, 0.0).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        assert!(make_ssb_gaussian_chi(grid, 3.0 * sigma, sigma, 1.0).is_err());
        assert!(make_ssb_gaussian_chi(grid, 6.0 * sigma, 5.0 * grid.d_omega(), 1.0).is_err());
    }

    #[test]
    fn lo_five_times_chi_is_minimum_phase() {
        let grid = TimeGrid::centered(1.0, 4096).unwrap();
        let sigma = 20.0 * grid.d_omega();
        let chi = make_ssb_gaussian_chi(grid, 6.0 * sigma, sigma, 1.0).unwrap();
        let bs = BeamsplitterParams::balanced();
        let a = 5.0 * chi.max_abs();
        assert!(crate::dsp::min_phase_holds(&chi, &bs, a).unwrap().holds);
        assert!(CoherentField::decomposed(a, chi.clone()).is_ok());
        assert!(CoherentField::decomposed(0.5, chi).is_err());
    }

    #[test]
    fn phase_eigenstate_coefficients() {
        let v = make_phase_eigenstate(c(0.0, 0.0), 4).unwrap();
        assert_eq!(v.coeffs()[0], c(1.0, 0.0));
        let v = make_phase_eigenstate(c(0.5, 0.0), 20).unwrap();
        for (n, z) in v.coeffs().iter().enumerate() {
            assert!((z - c(0.75f64.sqrt() * 0.5f64.powi(n as i32), 0.0)).norm() < 1e-15);
        }
        let z = Complex64::from_polar(0.9, PI / 3.0);
        let v = make_phase_eigenstate(z, 200).unwrap();
        // Geometric series: sum_{n<=N} (1-r^2) r^{2n} = 1 - r^{2(N+1)}.
        let norm: f64 = v.coeffs().iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - (1.0 - 0.81f64.powi(201))).abs() < 1e-12);
        assert!((norm - 1.0).abs() < 1e-10);
        assert!(make_phase_eigenstate(c(1.0, 0.0), 50).is_err());
        assert!(make_phase_eigenstate(c(0.9, 0.0), 10).is_err());
    }

    #[test]
    fn cat_state_has_only_even_terms() {
        let v = make_cat_state(c(0.0, 0.0), 12).unwrap();
        assert!((v.coeffs()[0] - c(1.0, 0.0)).norm() < 1e-15);
        let v = make_cat_state(c(1.0, 0.0), 20).unwrap();
        assert!(v.coeffs().iter().skip(1).step_by(2).all(|z| *z == c(0.0, 0.0)));
        // <n> of the even cat: |a|^2 tanh|a|^2.
        let v = make_cat_state(c(2.0, 0.0), 40).unwrap();
        let mut w = Vec::new();
        let mut fact = 1.0f64;
        for n in 0..=40usize {
            if n > 0 {
                fact *= n as f64;
            }
            w.push(if n % 2 == 0 {
                2.0f64.powi(n as i32) / fact.sqrt()
            } else {
                0.0
            });
        }
        let z: f64 = w.iter().map(|x| x * x).sum();
        let brute: f64 = w.iter().enumerate().map(|(n, x)| n as f64 * x * x).sum::<f64>() / z;
        assert!((v.mean_number() - brute).abs() < 1e-10);
        assert!((brute - 4.0 * 4.0f64.tanh()).abs() < 1e-9);
        assert!(make_cat_state(c(2.0, 0.0), 10).is_err());
    }

    #[test]
    fn statistics_phase_examples() {
        let phi0 = 0.7;
        let v = make_phase_eigenstate(Complex64::from_polar(0.6, phi0), 80).unwrap();
        let s = number_statistics_phase(&v);
        assert!((statistics_phase(s).unwrap() + phi0).abs() < 1e-12);
        // |S| = (1 - |z|^2) |z| sum |z|^{2n} sqrt(n+1).
        let r: f64 = 0.6;
        let want: f64 = (0..80).map(|n| r.powi(2 * n) * ((n + 1) as f64).sqrt()).sum::<f64>() * (1.0 - r * r) * r;
        assert!((s.norm() - want).abs() < 1e-10);

        let vac = FockVector::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(matches!(
            statistics_phase(number_statistics_phase(&vac)),
            Err(KkError::PhaseUndefined(_))
        ));

        let coh = FockVector::coherent(c(1.3, 0.0), 40).unwrap();
        let s = number_statistics_phase(&coh);
        assert!(statistics_phase(s).unwrap().abs() < 1e-14);
        // S = <a^dagger> = alpha* for a coherent state.
        assert!((s - c(1.3, 0.0)).norm() < 1e-10);

        let cat = make_cat_state(c(1.5, 0.0), 30).unwrap();
        assert!(statistics_phase(number_statistics_phase(&cat)).is_err());
    }

    #[test]
    fn fock_vector_validation() {
        assert!(FockVector::new(vec![c(1.0, 0.0)]).is_err());
        assert!(FockVector::new(vec![c(0.5, 0.0), c(0.5, 0.0)]).is_err());
        assert!(FockVector::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn interference_term_examples() {
        let grid = TimeGrid::centered(0.1, 64).unwrap();
        let bs = BeamsplitterParams::new(0.6, 0.8).unwrap();
        let f = ComplexSignal::from_fn(grid, |t| Complex64::from_polar((-t * t).exp(), -2.0 * t));
        let g = ComplexSignal::from_fn(grid, |_| c(1.0, 0.0));
        let t0 = grid.time(30);

        let vac = FockVector::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let it = interference_term(&vac, c(2.0, 1.0), &f, &g, &bs, t0).unwrap();
        assert_eq!(it.term, c(0.0, 0.0));
        assert!(it.total_phase.is_none());

        let one = FockVector::new(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let a = c(1.5, -0.5);
        let it = interference_term(&one, a, &f, &g, &bs, t0).unwrap();
        assert_eq!(it.term, c(0.0, 0.0));
        let fk = f.samples()[30];
        let want = 0.64 * fk.norm_sqr() + 0.36 * a.norm_sqr();
        assert!((it.mean_intensity - want).abs() < 1e-14);

        let (e0, theta, phi0) = (3.0, 0.4, 1.1);
        let v = make_phase_eigenstate(Complex64::from_polar(0.5, phi0), 60).unwrap();
        let it = interference_term(&v, Complex64::from_polar(e0, theta), &f, &g, &bs, t0).unwrap();
        let zeta = theta - phi0 + fk.arg();
        assert!((wrap_phase(it.total_phase.unwrap() - zeta)).abs() < 1e-12);
        assert!(interference_term(&v, c(1.0, 0.0), &f, &g, &bs, 1e3).is_err());
    }

    #[test]
    fn single_photon_layout_is_valid() {
        let layout = SinglePhotonLayout {
            n_samples: 4096,
            ..Default::default()
        };
        let st = layout.build().unwrap();
        assert!((st.psi().norm_sqr() - 1.0).abs() < 1e-8);
        let ratio = st.lo_amplitude() / st.chi().max_abs();
        assert!((ratio - 5.0).abs() < 1e-9);
        assert!(fwhm(st.envelope()) >= 0.99 * 20.0 * fwhm(st.chi()));
        assert!(is_single_sideband(st.chi(), 1e-3).unwrap());
        // Global phase leaves the density untouched.
        let rot = st.with_global_phase(0.8);
        for (a, b) in rot.density().iter().zip(st.density()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let grid = TimeGrid::centered(1.0, 16).unwrap();
        let f = CoherentField::new(ComplexSignal::zeros(grid));
        assert!(CoherentMixture::new(vec![(0.5, f.clone()), (0.5, f.clone())]).is_ok());
        assert!(CoherentMixture::new(vec![(0.5, f.clone()), (0.4, f.clone())]).is_err());
        assert!(CoherentMixture::new(vec![(1.2, f.clone()), (-0.2, f)]).is_err());
        assert!(CoherentMixture::new(vec![]).is_err());
    }

    #[test]
    fn wrap_phase_range() {
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-0.5) + 0.5).abs() < 1e-15);
    }
}
