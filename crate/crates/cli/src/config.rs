//! Experiment configuration files.
//!
//! Every file is a JSON object with a required integer `"version"`, an
//! `"experiment"` tag selecting the schema, an optional `"seed"` and an optional
//! `"output_dir"`.

use std::path::{Path, PathBuf};

use kkdetect::detectors::PhotodiodeResponse;
use kkdetect::dsp::Expansion;
use kkdetect::io::{read_signal_csv, signal_from_json};
use kkdetect::mixedphase::SeriesConfig;
use kkdetect::states::{make_ssb_gaussian_chi, SinglePhotonLayout};
use kkdetect::{Complex64, ComplexSignal, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum Experiment {
    Hd(HdConfig),
    Dhd(HdConfig),
    Kk(KkConfig),
    Tomography(TomographyConfig),
    MixedPhase(MixedPhaseConfig),
    SnrCompare(SnrCompareConfig),
    VarianceScaling(VarianceScalingConfig),
    Hilbert(HilbertConfig),
    Interference(InterferenceConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Hd(_) => "hd",
            Self::Dhd(_) => "dhd",
            Self::Kk(_) => "kk",
            Self::Tomography(_) => "tomography",
            Self::MixedPhase(_) => "mixed_phase",
            Self::SnrCompare(_) => "snr_compare",
            Self::VarianceScaling(_) => "variance_scaling",
            Self::Hilbert(_) => "hilbert",
            Self::Interference(_) => "interference",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Self::MixedPhase(_))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub dt: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self, field: &str) -> Result<TimeGrid, CliError> {
        TimeGrid::centered(self.dt, self.n).map_err(|e| CliError::config(field, e))
    }
}

/// Temporal mode shapes. Built modes are normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeSpec {
    /// `exp(-(t - center)^2 / (2 width^2))`.
    Gaussian {
        width: f64,
        #[serde(default)]
        center: f64,
    },
    /// Single-sideband pulse with a Gaussian spectrum around `+center_freq`.
    SsbGaussian { center_freq: f64, spectral_width: f64 },
    /// `t,re,im` CSV or JSON signal envelope, relative to the config file.
    File { path: PathBuf },
    /// LO only: the signal's own mode.
    Matched,
    /// LO only: constant in time.
    Monochromatic,
}

impl ModeSpec {
    pub fn build(&self, grid: TimeGrid, base: &Path, field: &str) -> Result<ComplexSignal, CliError> {
        let raw = match self {
            Self::Gaussian { width, center } => {
                if !(*width > 0.0) {
                    return Err(CliError::config(format!("{field}.width"), "must be > 0"));
                }
                let (w, c) = (*width, *center);
                ComplexSignal::from_fn(grid, |t| Complex64::new((-(t - c).powi(2) / (2.0 * w * w)).exp(), 0.0))
            }
            Self::SsbGaussian {
                center_freq,
                spectral_width,
            } => make_ssb_gaussian_chi(grid, *center_freq, *spectral_width, 1.0)
                .map_err(|e| CliError::config(field, e))?,
            Self::File { path } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| CliError::config(format!("{field}.path"), format!("{}: {e}", full.display())))?;
                let sig = if full.extension().is_some_and(|x| x == "json") {
                    signal_from_json(&text)
                } else {
                    read_signal_csv(text.as_bytes())
                }
                .map_err(|e| CliError::config(format!("{field}.path"), e))?;
                if sig.len() != grid.n_samples || (sig.grid().dt - grid.dt).abs() > 1e-9 * grid.dt {
                    return Err(CliError::config(
                        format!("{field}.path"),
                        "signal grid differs from the config grid",
                    ));
                }
                ComplexSignal::new(grid, sig.into_samples()).map_err(|e| CliError::config(field, e))?
            }
            Self::Matched | Self::Monochromatic => {
                return Err(CliError::config(format!("{field}.kind"), "only valid for an LO mode"));
            }
        };
        raw.normalized()
            .ok_or_else(|| CliError::config(field, "mode has zero norm"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalSpec {
    /// Coherent amplitude `[re, im]`.
    pub alpha: [f64; 2],
    pub mode: ModeSpec,
}

impl SignalSpec {
    pub fn alpha(&self) -> Complex64 {
        Complex64::new(self.alpha[0], self.alpha[1])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HdLoSpec {
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "matched")]
    pub mode: ModeSpec,
}

fn matched() -> ModeSpec {
    ModeSpec::Matched
}

fn default_calibration_shots() -> usize {
    10_000
}

fn default_expansion() -> Expansion {
    Expansion::FullLog
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HdConfig {
    pub grid: GridSpec,
    pub signal: SignalSpec,
    pub lo: HdLoSpec,
    #[serde(default)]
    pub response: PhotodiodeResponse,
    pub shots: usize,
    #[serde(default = "default_calibration_shots")]
    pub calibration_shots: usize,
}

/// LO for KK reception: either an absolute amplitude or the ratio
/// `r A / (t max|a|)` at the photodiode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KkLoSpec {
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KkConfig {
    pub grid: GridSpec,
    /// The signal mode doubles as the analysis mode and must be single-sideband.
    pub signal: SignalSpec,
    pub lo: KkLoSpec,
    pub reflection: f64,
    #[serde(default = "default_expansion")]
    pub expansion: Expansion,
    #[serde(default)]
    pub response: PhotodiodeResponse,
    pub shots: usize,
    #[serde(default)]
    pub probe_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KkPart {
    pub reflection: f64,
    pub ratio: f64,
    #[serde(default = "default_expansion")]
    pub expansion: Expansion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnrCompareConfig {
    pub grid: GridSpec,
    pub signal: SignalSpec,
    /// Shaped (matched) LO amplitude for the HD and DHD runs.
    pub hd_lo_amplitude: f64,
    #[serde(default)]
    pub response: PhotodiodeResponse,
    pub shots: usize,
    #[serde(default = "default_calibration_shots")]
    pub calibration_shots: usize,
    /// KK run on the same signal; omitted to compare HD and DHD only.
    #[serde(default)]
    pub kk: Option<KkPart>,
}

fn default_doublings() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceScalingConfig {
    pub grid: GridSpec,
    pub signal: SignalSpec,
    pub reflection: f64,
    /// LO amplitude of the first point.
    pub base_amplitude: f64,
    #[serde(default = "default_doublings")]
    pub doublings: usize,
    pub shots: usize,
    #[serde(default)]
    pub probe_time: Option<f64>,
    #[serde(default = "default_expansion")]
    pub expansion: Expansion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutSpec {
    pub n: usize,
    pub dt: f64,
    pub chi_fraction: f64,
    pub envelope_fraction: f64,
    pub center_over_width: f64,
    pub lo_ratio: f64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        let d = SinglePhotonLayout::default();
        Self {
            n: d.n_samples,
            dt: d.dt,
            chi_fraction: d.chi_fraction,
            envelope_fraction: d.envelope_fraction,
            center_over_width: d.center_over_width,
            lo_ratio: d.lo_ratio,
        }
    }
}

impl LayoutSpec {
    pub fn layout(&self) -> SinglePhotonLayout {
        SinglePhotonLayout {
            n_samples: self.n,
            dt: self.dt,
            chi_fraction: self.chi_fraction,
            envelope_fraction: self.envelope_fraction,
            center_over_width: self.center_over_width,
            lo_ratio: self.lo_ratio,
        }
    }
}

fn one() -> usize {
    1
}

fn ten() -> f64 {
    10.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographyConfig {
    #[serde(default)]
    pub layout: LayoutSpec,
    pub clicks: usize,
    /// Independent seeds `seed, seed + 1, ...`; medians are reported.
    #[serde(default = "one")]
    pub repeats: usize,
    /// Analysis window width in units of the chi duration.
    #[serde(default = "ten")]
    pub window_multiple: f64,
    /// Smoothing standard deviation in grid bins.
    #[serde(default = "two")]
    pub smoothing_bins: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldModel {
    /// `psi = A + c chi(t)`.
    LoPlusChi,
    /// `psi = A exp(u + i K[2u])` with `u = Re(c chi(t))` and `K` the discrete
    /// KK operator: the profile is fixed while `A` grows, and `arg psi` is
    /// the exact transform of `ln(|psi|^2 / A^2)`.
    LogPair,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChiShape {
    pub center_freq: f64,
    pub spectral_width: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub chi_amplitude: [f64; 2],
}

fn lo_plus_chi() -> FieldModel {
    FieldModel::LoPlusChi
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedPhaseConfig {
    pub grid: GridSpec,
    pub chi: ChiShape,
    #[serde(default = "lo_plus_chi")]
    pub field_model: FieldModel,
    pub lo_amplitudes: Vec<f64>,
    pub components: Vec<ComponentSpec>,
    pub series: SeriesConfig,
}

fn default_signals() -> usize {
    20
}

fn default_band() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HilbertConfig {
    pub n: usize,
    #[serde(default = "default_signals")]
    pub signals: usize,
    /// Highest tone as a fraction of the Nyquist frequency.
    #[serde(default = "default_band")]
    pub band_fraction: f64,
    /// Cycles of the sentinel cosine over the grid.
    pub sentinel_cycles: f64,
}

fn default_cases() -> usize {
    50
}

fn default_max_n() -> usize {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseEigenstateCheck {
    pub z_abs: f64,
    pub z_arg: f64,
    pub lo_amplitude: f64,
    pub lo_phase: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterferenceConfig {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    pub max_lo_amplitude: f64,
    pub reflection: f64,
    pub phase_eigenstate: PhaseEigenstateCheck,
}

/// Parses and checks the version field; schema-level validation happens when
/// the experiment is prepared.
pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::config("<json>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::config("<json>", "top level must be an object"))?;
    match obj.get("version") {
        None => return Err(CliError::config("version", "missing required field")),
        Some(v) if v.as_u64() != Some(CONFIG_VERSION as u64) => {
            return Err(CliError::config(
                "version",
                format!("unsupported version {v}, expected {CONFIG_VERSION}"),
            ));
        }
        _ => {}
    }
    if obj.get("experiment").and_then(|v| v.as_str()).is_none() {
        return Err(CliError::config("experiment", "missing or not a string"));
    }
    serde_json::from_value(value).map_err(|e| CliError::config("experiment", e.to_string()))
}

/// Schema and purpose of each experiment, for `describe`.
pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "hd" => HD_TEXT,
        "dhd" => DHD_TEXT,
        "kk" => KK_TEXT,
        "tomography" => TOMOGRAPHY_TEXT,
        "mixed_phase" => MIXED_TEXT,
        "snr_compare" => SNR_TEXT,
        "variance_scaling" => VARIANCE_TEXT,
        "hilbert" => HILBERT_TEXT,
        "interference" => INTERFERENCE_TEXT,
        _ => return None,
    })
}

pub const EXPERIMENTS: [&str; 9] = [
    "hd",
    "dhd",
    "kk",
    "tomography",
    "mixed_phase",
    "snr_compare",
    "variance_scaling",
    "hilbert",
    "interference",
];

const HD_TEXT: &str = "\
hd: balanced homodyne detection of a coherent pulse with a shaped LO.
A vacuum run fixes the shot-noise calibration (vacuum variance 1/4), then the
signal run reports calibrated mean, variance and SNR = mean^2 / (4 var) next to
the analytic moments 2 Re{alpha <xi|g>} and <xi|xi>, xi = |A| H f.

fields:
  grid: {dt, n}
  signal: {alpha: [re, im], mode: MODE}
  lo: {amplitude, phase = 0, mode: MODE | {kind: matched} (default) | {kind: monochromatic}}
  response: {kind: ideal_delta} (default) | {kind: kernel, taps: [..odd..]}
  shots, calibration_shots = 10000
MODE: {kind: gaussian, width, center = 0} | {kind: ssb_gaussian, center_freq, spectral_width}
      | {kind: file, path}
outputs: summary.json, shots.csv (shot, q)
";

const DHD_TEXT: &str = "\
dhd: double homodyne detection. The signal is split with a vacuum port and each
half is homodyned with the full LO, the second arm at phase +pi/2. Calibrated with
the same HD vacuum run, each quadrature has vacuum variance 1/2 and the SNR is
half the HD value (the 3 dB penalty).

fields: as for hd.
outputs: summary.json, shots.csv (shot, q, p)
";

const KK_TEXT: &str = "\
kk: Kramers-Kronig receiver. One beamsplitter output c = r A e^{i theta} + t a(t)
is detected; the phase is retrieved from ln I through the KK Hilbert operator,
the field is rebuilt as a = e^{i theta}(e^{i phi} sqrt(I) - r A)/t and the
quadratures are read as q + i p = <f|a_rec> on the single-sideband analysis mode
f. Requires r A - t max|a| >= 0.5 r A and (r A)^2 dt >= 1000 counts per bin.

fields:
  grid, signal (mode must be single-sideband),
  lo: {ratio | amplitude, phase = 0}   ratio = r A / (t max|a|)
  reflection (r), expansion = full_log | first_order, response, shots,
  probe_time (optional; records the retrieved phase there each shot)
outputs: summary.json, shots.csv (shot, q, p[, phase])
";

const TOMOGRAPHY_TEXT: &str = "\
tomography: single-photon wavefunction psi = A env(t) + chi(t) with a flat-top
envelope and a Gaussian-spectrum chi. Clicks are drawn from |psi|^2, histogrammed,
smoothed, and the phase is retrieved on an analysis window that must be at least
5x the chi duration and at most half the envelope duration.

fields:
  layout: {n = 16384, dt = 1, chi_fraction = 1/40, envelope_fraction = 1/2,
           center_over_width = 6, lo_ratio = 5}
  clicks, repeats = 1, window_multiple = 10, smoothing_bins = 2
outputs: summary.json (medians and per-seed fidelity_total, fidelity_chi,
         noise_floor), reconstruction.csv (t, re/im psi~, re/im psi), psd.csv
";

const MIXED_TEXT: &str = "\
mixed_phase: averaged KK phase of a coherent state or discrete coherent mixture
from the Stirling-number series of Poisson intensity moments. For each LO
amplitude it reports the error against arg psi (single component), against the
DSP phase path on the noiseless intensity, and the convexity residual of the
mixture against its weighted components.

fields:
  grid, chi: {center_freq, spectral_width},
  field_model = lo_plus_chi | log_pair, lo_amplitudes: [..],
  components: [{weight, chi_amplitude: [re, im]}], series: {n_max, convergence_tol}
outputs: summary.json, phase.csv (t, phi_series, phi_exact)
";

const SNR_TEXT: &str = "\
snr_compare: HD, DHD and (optionally) KK on the same coherent pulse, all referred
to one HD vacuum calibration. Reports SNRs, ratio_hd_dhd (expected 2),
ratio_hd_kk and the KK/HD variance ratios (expected 2 for r -> 0).

fields: grid, signal (single-sideband mode if kk is given), hd_lo_amplitude,
        response, shots, calibration_shots, kk: {reflection, ratio, expansion}
outputs: summary.json
";

const VARIANCE_TEXT: &str = "\
variance_scaling: variance of the KK-retrieved phase at one time versus LO
amplitude over A0 * 2^k, k = 0..doublings, with the log-log slope
(expected -2).

fields: grid, signal, reflection, base_amplitude, doublings = 4, shots,
        probe_time (default grid centre), expansion
outputs: summary.json, variance.csv (lo_amplitude, var, stderr_var)
";

const HILBERT_TEXT: &str = "\
hilbert: agreement of the FFT and direct KK Hilbert operators on random
band-limited signals (relative error on the central half) and the cosine
sentinel cos(w t) -> -(1/2) sin(w t).

fields: n, signals = 20, band_fraction = 0.25, sentinel_cycles
outputs: summary.json
";

const INTERFERENCE_TEXT: &str = "\
interference: interference term r t A f(t) g*(t) S and direct-detection mean for
random truncated Fock states, S = sum c_n c*_{n+1} sqrt(n+1), plus a phase
eigenstate check of the total phase theta - phi + arg f(t).

fields: cases = 50, max_n = 12, max_lo_amplitude, reflection,
        phase_eigenstate: {z_abs, z_arg, lo_amplitude, lo_phase, n_max}
outputs: summary.json, cases.json (inputs and results per case)
";
