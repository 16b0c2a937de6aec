//! Experiment runners. Each returns a JSON summary and the files to write;
//! nothing touches the filesystem here apart from reading referenced inputs.

use std::path::Path;

use kkdetect::detectors::{
    calibrate, dhd_analytic, dhd_monte_carlo, format_float, hd_analytic, hd_monte_carlo, kk_receive, DetectionStats,
    KkSetup, LocalOscillator, MonteCarloRun, QuadratureStats, MIN_CALIBRATION_SHOTS,
};
use kkdetect::dsp::{
    hilbert_kk_direct, hilbert_kk_fft, kk_phase_from_intensity, validate_analysis_mode, BeamsplitterParams,
    KkRetrievalConfig,
};
use kkdetect::mixedphase::kk_phase_series;
use kkdetect::states::{
    interference_term, make_phase_eigenstate, make_ssb_gaussian_chi, wrap_phase, CoherentField, CoherentMixture,
    FockVector,
};
use kkdetect::tomography::{check_window, default_window, estimate_density, reconstruct_wavefunction, sample_clicks};
use kkdetect::{Complex64, ComplexSignal, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::*;
use crate::{config_hash, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Map<String, Value>,
    pub files: Vec<OutputFile>,
}

impl RunOutput {
    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }
}

/// Deterministic sub-seed for independent parts of one run.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the experiment described by `cfg`. `raw` is the config file content
/// (hashed into the outputs), `base` the directory relative paths resolve
/// against and `seed_override` replaces the config seed.
pub fn run_experiment(
    cfg: &ConfigFile,
    raw: &[u8],
    base: &Path,
    seed_override: Option<u64>,
) -> Result<RunOutput, CliError> {
    let seed = seed_override.or(cfg.seed);
    if cfg.experiment.is_stochastic() && seed.is_none() {
        return Err(CliError::config("seed", "required for stochastic experiments"));
    }
    let seed_value = seed.unwrap_or(0);
    let (mut summary, mut files) = match &cfg.experiment {
        Experiment::Hd(c) => run_balanced(c, base, seed_value, false)?,
        Experiment::Dhd(c) => run_balanced(c, base, seed_value, true)?,
        Experiment::Kk(c) => run_kk(c, base, seed_value)?,
        Experiment::SnrCompare(c) => run_snr_compare(c, base, seed_value)?,
        Experiment::VarianceScaling(c) => run_variance_scaling(c, base, seed_value)?,
        Experiment::Tomography(c) => run_tomography(c, seed_value)?,
        Experiment::MixedPhase(c) => run_mixed_phase(c)?,
        Experiment::Hilbert(c) => run_hilbert(c, seed_value)?,
        Experiment::Interference(c) => run_interference(c, seed_value)?,
    };
    summary.insert("experiment".into(), json!(cfg.experiment.name()));
    summary.insert("version".into(), json!(cfg.version));
    summary.insert("config_hash".into(), json!(config_hash(raw)));
    summary.insert("seed".into(), seed.map_or(Value::Null, |s| json!(s)));
    summary.insert(
        "outputs".into(),
        json!(std::iter::once("summary.json".to_string())
            .chain(files.iter().map(|f| f.name.clone()))
            .collect::<Vec<_>>()),
    );
    let mut text = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    text.push(b'\n');
    files.insert(
        0,
        OutputFile {
            name: "summary.json".into(),
            bytes: text,
        },
    );
    Ok(RunOutput { summary, files })
}

type Parts = (Map<String, Value>, Vec<OutputFile>);

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("summary literals are objects"),
    }
}

fn shots_csv(run: &MonteCarloRun) -> Result<OutputFile, CliError> {
    let mut bytes = Vec::new();
    run.write_csv(&mut bytes)?;
    Ok(OutputFile {
        name: "shots.csv".into(),
        bytes,
    })
}

fn csv_file(name: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> OutputFile {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    OutputFile {
        name: name.into(),
        bytes: s.into_bytes(),
    }
}

fn lo_for(
    spec: &HdLoSpec,
    signal_mode: &ComplexSignal,
    grid: TimeGrid,
    base: &Path,
) -> Result<LocalOscillator, CliError> {
    let lo = match &spec.mode {
        ModeSpec::Matched => LocalOscillator::shaped(spec.amplitude, spec.phase, signal_mode.clone()),
        ModeSpec::Monochromatic => LocalOscillator::monochromatic(spec.amplitude, spec.phase),
        other => LocalOscillator::shaped(spec.amplitude, spec.phase, other.build(grid, base, "lo.mode")?),
    };
    lo.map_err(|e| CliError::config("lo", e))
}

fn check_calibration_shots(n: usize) -> Result<(), CliError> {
    if n < MIN_CALIBRATION_SHOTS {
        return Err(CliError::config(
            "calibration_shots",
            format!("need >= {MIN_CALIBRATION_SHOTS}, got {n}"),
        ));
    }
    Ok(())
}

fn run_balanced(c: &HdConfig, base: &Path, seed: u64, dhd: bool) -> Result<Parts, CliError> {
    let grid = c.grid.build("grid")?;
    let g = c.signal.mode.build(grid, base, "signal.mode")?;
    let lo = lo_for(&c.lo, &g, grid, base)?;
    c.response.validate().map_err(|e| CliError::config("response", e))?;
    check_calibration_shots(c.calibration_shots)?;
    let state = CoherentField::from_mode(c.signal.alpha(), &g);
    let vacuum = CoherentField::new(ComplexSignal::zeros(grid));

    let vac = hd_monte_carlo(&vacuum, &lo, &c.response, c.calibration_shots, sub_seed(seed, 0))?;
    let cal = calibrate(&vac.stats)?;
    let run = if dhd {
        dhd_monte_carlo(&state, &lo, &c.response, c.shots, sub_seed(seed, 1))?
    } else {
        hd_monte_carlo(&state, &lo, &c.response, c.shots, sub_seed(seed, 1))?
    };
    let calibrated = run.calibrated(&cal);
    let exact_cal = calibrate(&hd_analytic(&vacuum, &lo, &c.response)?)?;
    let analytic = if dhd {
        dhd_analytic(&state, &lo, &c.response)?
    } else {
        hd_analytic(&state, &lo, &c.response)?
    };
    let summary = obj(json!({
        "calibration": {
            "reference_variance": cal.reference_variance,
            "analytic_reference_variance": exact_cal.reference_variance,
            "shots": c.calibration_shots,
            "vacuum_calibrated_variance": cal.apply(&vac.stats).q.var,
        },
        "stats": to_value(&calibrated.stats),
        "analytic": to_value(&exact_cal.apply(&analytic)),
        "raw": to_value(&run.stats),
    }));
    Ok((summary, vec![shots_csv(&calibrated)?]))
}

struct KkInputs {
    grid: TimeGrid,
    mode: ComplexSignal,
    state: CoherentField,
    bs: BeamsplitterParams,
}

fn kk_inputs(grid: &GridSpec, signal: &SignalSpec, reflection: f64, base: &Path) -> Result<KkInputs, CliError> {
    let grid = grid.build("grid")?;
    let mode = signal.mode.build(grid, base, "signal.mode")?;
    validate_analysis_mode(&mode).map_err(|e| CliError::config("signal.mode", e))?;
    let bs = BeamsplitterParams::from_reflection(reflection).map_err(|e| CliError::config("reflection", e))?;
    if !(bs.r > 0.0) {
        return Err(CliError::config("reflection", "must be > 0"));
    }
    Ok(KkInputs {
        grid,
        state: CoherentField::from_mode(signal.alpha(), &mode),
        mode,
        bs,
    })
}

fn lo_amplitude_from_ratio(inp: &KkInputs, ratio: f64, field: &str) -> Result<f64, CliError> {
    let peak = inp.state.psi().max_abs();
    if !(ratio > 0.0) {
        return Err(CliError::config(field, "ratio must be > 0"));
    }
    if !(peak > 0.0) {
        return Err(CliError::config(
            field,
            "ratio is undefined for a zero signal; give an amplitude",
        ));
    }
    Ok(ratio * inp.bs.t * peak / inp.bs.r)
}

fn probe_index(grid: &TimeGrid, t: Option<f64>) -> Result<usize, CliError> {
    match t {
        None => Ok(grid.n_samples / 2),
        Some(t) => grid
            .index_of(t)
            .ok_or_else(|| CliError::config("probe_time", format!("{t} is off the grid"))),
    }
}

fn kk_run(
    inp: &KkInputs,
    (amplitude, phase): (f64, f64),
    expansion: kkdetect::dsp::Expansion,
    response: &kkdetect::detectors::PhotodiodeResponse,
    probe: Option<usize>,
    shots: usize,
    seed: u64,
) -> Result<MonteCarloRun, CliError> {
    let lo = LocalOscillator::monochromatic(amplitude, phase).map_err(|e| CliError::config("lo", e))?;
    let cfg = KkRetrievalConfig::new(expansion, amplitude, phase, &inp.bs).map_err(|e| CliError::config("lo", e))?;
    let setup = KkSetup {
        state: &inp.state,
        lo: &lo,
        bs: inp.bs,
        cfg,
        mode: &inp.mode,
        response,
        probe,
    };
    Ok(kk_receive(&setup, shots, seed)?)
}

fn run_kk(c: &KkConfig, base: &Path, seed: u64) -> Result<Parts, CliError> {
    let inp = kk_inputs(&c.grid, &c.signal, c.reflection, base)?;
    let amplitude = match (c.lo.amplitude, c.lo.ratio) {
        (Some(a), None) => a,
        (None, Some(r)) => lo_amplitude_from_ratio(&inp, r, "lo.ratio")?,
        _ => return Err(CliError::config("lo", "give exactly one of `amplitude` and `ratio`")),
    };
    c.response.validate().map_err(|e| CliError::config("response", e))?;
    let probe = c.probe_time.map(|_| probe_index(&inp.grid, c.probe_time)).transpose()?;
    let run = kk_run(
        &inp,
        (amplitude, c.lo.phase),
        c.expansion,
        &c.response,
        probe,
        c.shots,
        sub_seed(seed, 0),
    )?;
    let alpha = c.signal.alpha();
    let summary = obj(json!({
        "lo_amplitude": amplitude,
        "reflection": inp.bs.r,
        "stats": to_value(&run.stats),
        "expected_mean": [alpha.re, alpha.im],
        "model_vacuum_variance": 0.5 / (inp.bs.t * inp.bs.t),
    }));
    Ok((summary, vec![shots_csv(&run)?]))
}

fn run_snr_compare(c: &SnrCompareConfig, base: &Path, seed: u64) -> Result<Parts, CliError> {
    let grid = c.grid.build("grid")?;
    let g = c.signal.mode.build(grid, base, "signal.mode")?;
    let lo = LocalOscillator::shaped(c.hd_lo_amplitude, 0.0, g.clone())
        .map_err(|e| CliError::config("hd_lo_amplitude", e))?;
    c.response.validate().map_err(|e| CliError::config("response", e))?;
    check_calibration_shots(c.calibration_shots)?;
    let state = CoherentField::from_mode(c.signal.alpha(), &g);
    let vacuum = CoherentField::new(ComplexSignal::zeros(grid));

    let vac = hd_monte_carlo(&vacuum, &lo, &c.response, c.calibration_shots, sub_seed(seed, 0))?;
    let cal = calibrate(&vac.stats)?;
    let hd = cal.apply(&hd_monte_carlo(&state, &lo, &c.response, c.shots, sub_seed(seed, 1))?.stats);
    let dhd = cal.apply(&dhd_monte_carlo(&state, &lo, &c.response, c.shots, sub_seed(seed, 2))?.stats);
    let dhd_p = dhd.p.expect("dhd reports both quadratures");

    let mut summary = obj(json!({
        "shots": c.shots,
        "hd": to_value(&hd),
        "dhd": to_value(&dhd),
        "snr_hd": hd.q.snr,
        "snr_dhd": dhd.q.snr,
        "ratio_hd_dhd": hd.q.snr / dhd.q.snr,
        "var_ratio_dhd_hd_q": dhd.q.var / hd.q.var,
        "var_ratio_dhd_hd_p": dhd_p.var / hd.q.var,
    }));
    if let Some(k) = &c.kk {
        let mut inp = kk_inputs(&c.grid, &c.signal, k.reflection, base)?;
        inp.mode = g.clone();
        let amplitude = lo_amplitude_from_ratio(&inp, k.ratio, "kk.ratio")?;
        let kk = kk_run(
            &inp,
            (amplitude, 0.0),
            k.expansion,
            &c.response,
            None,
            c.shots,
            sub_seed(seed, 3),
        )?
        .stats;
        let kk_p = kk.p.expect("kk reports both quadratures");
        summary.insert("kk".into(), to_value(&kk));
        summary.insert("kk_lo_amplitude".into(), json!(amplitude));
        summary.insert("snr_kk".into(), json!(kk.q.snr));
        summary.insert("ratio_hd_kk".into(), json!(hd.q.snr / kk.q.snr));
        summary.insert("var_ratio_kk_hd_q".into(), json!(kk.q.var / hd.q.var));
        summary.insert("var_ratio_kk_hd_p".into(), json!(kk_p.var / hd.q.var));
    }
    Ok((summary, Vec::new()))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn run_variance_scaling(c: &VarianceScalingConfig, base: &Path, seed: u64) -> Result<Parts, CliError> {
    let inp = kk_inputs(&c.grid, &c.signal, c.reflection, base)?;
    if !(c.base_amplitude > 0.0) {
        return Err(CliError::config("base_amplitude", "must be > 0"));
    }
    if c.doublings < 1 {
        return Err(CliError::config("doublings", "must be >= 1"));
    }
    let probe = probe_index(&inp.grid, c.probe_time)?;
    let response = kkdetect::detectors::PhotodiodeResponse::IdealDelta;
    let mut amps = Vec::new();
    let mut vars = Vec::new();
    let mut points = Vec::new();
    for k in 0..=c.doublings {
        let a = c.base_amplitude * 2f64.powi(k as i32);
        let run = kk_run(
            &inp,
            (a, 0.0),
            c.expansion,
            &response,
            Some(probe),
            c.shots,
            sub_seed(seed, k as u64),
        )?;
        let st = QuadratureStats::from_samples(run.probe_phase.as_deref().expect("probe requested"))?;
        amps.push(a);
        vars.push(st.var);
        points.push(json!({"lo_amplitude": a, "var": st.var, "stderr_var": st.stderr_var}));
    }
    let slope = loglog_slope(&amps, &vars);
    let csv = csv_file(
        "variance.csv",
        &["lo_amplitude", "var", "stderr_var"],
        points.iter().map(|p| {
            ["lo_amplitude", "var", "stderr_var"]
                .iter()
                .map(|k| format_float(p[k].as_f64().unwrap()))
                .collect()
        }),
    );
    let summary = obj(json!({
        "probe_time": inp.grid.time(probe),
        "shots": c.shots,
        "points": points,
        "slope": slope,
    }));
    Ok((summary, vec![csv]))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn run_tomography(c: &TomographyConfig, seed: u64) -> Result<Parts, CliError> {
    let state = c.layout.layout().build().map_err(|e| CliError::config("layout", e))?;
    let window = default_window(&state, c.window_multiple);
    check_window(&state, window).map_err(|e| CliError::config("window_multiple", e))?;
    if c.repeats < 1 {
        return Err(CliError::config("repeats", "must be >= 1"));
    }
    if !(c.smoothing_bins >= 0.0) {
        return Err(CliError::config("smoothing_bins", "must be >= 0"));
    }
    let grid = *state.grid();
    let bandwidth = c.smoothing_bins * grid.dt;
    let reports: Vec<_> = (0..c.repeats as u64)
        .into_par_iter()
        .map(|r| -> Result<_, CliError> {
            let s = seed.wrapping_add(r);
            let clicks = sample_clicks(&state, c.clicks, s)?;
            let est = estimate_density(&clicks, &grid, bandwidth)?;
            Ok((s, reconstruct_wavefunction(&est, &state, window)?))
        })
        .collect::<Result<_, _>>()?;
    let per_seed: Vec<Value> = reports
        .iter()
        .map(|(s, r)| {
            json!({"seed": s, "fidelity_total": r.fidelity_total, "fidelity_chi": r.fidelity_chi,
                   "noise_floor": r.noise_floor, "clamped": r.clamped})
        })
        .collect();
    let pick =
        |f: fn(&kkdetect::tomography::ReconstructionReport) -> f64| median(reports.iter().map(|(_, r)| f(r)).collect());
    let summary = obj(json!({
        "n_clicks": c.clicks,
        "repeats": c.repeats,
        "lo_amplitude": state.lo_amplitude(),
        "window": [window.0, window.1],
        "fidelity_total": pick(|r| r.fidelity_total),
        "fidelity_chi": pick(|r| r.fidelity_chi),
        "noise_floor": pick(|r| r.noise_floor),
        "per_seed": per_seed,
    }));
    let first = &reports[0].1;
    let recon = csv_file(
        "reconstruction.csv",
        &["t", "re_psi_rec", "im_psi_rec", "re_psi", "im_psi"],
        first
            .psi_tilde
            .samples()
            .iter()
            .zip(state.psi().samples())
            .enumerate()
            .map(|(k, (a, b))| {
                vec![
                    format_float(grid.time(k)),
                    format_float(a.re),
                    format_float(a.im),
                    format_float(b.re),
                    format_float(b.im),
                ]
            }),
    );
    let sp = &first.spectrum;
    let psd = csv_file(
        "psd.csv",
        &["omega", "psd_true", "psd_reconstructed"],
        (0..sp.omega.len()).map(|j| {
            vec![
                format_float(sp.omega[j]),
                format_float(sp.psd_true[j]),
                format_float(sp.psd_reconstructed[j]),
            ]
        }),
    );
    Ok((summary, vec![recon, psd]))
}

/// Component fields for one LO amplitude.
pub fn mixture_fields(
    model: FieldModel,
    lo_amplitude: f64,
    chi: &ComplexSignal,
    amplitudes: &[Complex64],
) -> Vec<ComplexSignal> {
    amplitudes
        .iter()
        .map(|&c| match model {
            FieldModel::LoPlusChi => chi.map(|z| lo_amplitude + c * z),
            FieldModel::LogPair => {
                let u: Vec<f64> = chi.samples().iter().map(|z| (c * z).re).collect();
                let two_u: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
                let h = hilbert_kk_direct(&two_u);
                ComplexSignal::new(
                    *chi.grid(),
                    u.iter()
                        .zip(&h)
                        .map(|(x, y)| Complex64::from_polar(lo_amplitude * x.exp(), *y))
                        .collect(),
                )
                .expect("finite field")
            }
        })
        .collect()
}

fn central_half_max_abs(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    (n / 4..n - n / 4).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

fn run_mixed_phase(c: &MixedPhaseConfig) -> Result<Parts, CliError> {
    let grid = c.grid.build("grid")?;
    let chi = make_ssb_gaussian_chi(grid, c.chi.center_freq, c.chi.spectral_width, 1.0)
        .map_err(|e| CliError::config("chi", e))?;
    c.series.validate().map_err(|e| CliError::config("series", e))?;
    if c.lo_amplitudes.is_empty() || c.lo_amplitudes.iter().any(|a| !(*a > 0.0)) {
        return Err(CliError::config(
            "lo_amplitudes",
            "need at least one amplitude, all > 0",
        ));
    }
    if c.components.is_empty() {
        return Err(CliError::config("components", "empty"));
    }
    let weights: Vec<f64> = c.components.iter().map(|x| x.weight).collect();
    let amps: Vec<Complex64> = c
        .components
        .iter()
        .map(|x| Complex64::new(x.chi_amplitude[0], x.chi_amplitude[1]))
        .collect();
    let single = c.components.len() == 1;

    let mut points = Vec::new();
    let mut errs = Vec::new();
    let mut first_csv = None;
    for &a in &c.lo_amplitudes {
        let fields = mixture_fields(c.field_model, a, &chi, &amps);
        let mixture = CoherentMixture::new(
            weights
                .iter()
                .zip(&fields)
                .map(|(w, f)| (*w, CoherentField::new(f.clone())))
                .collect(),
        )
        .map_err(|e| CliError::config("components", e))?;
        let mix = kk_phase_series(&mixture, a, &c.series)?;
        let mut convex = vec![0.0; grid.n_samples];
        for (w, f) in weights.iter().zip(&fields) {
            let part = kk_phase_series(&CoherentMixture::pure(CoherentField::new(f.clone())), a, &c.series)?;
            for (acc, v) in convex.iter_mut().zip(&part.phase) {
                *acc += w * v;
            }
        }
        let convex_residual = mix
            .phase
            .iter()
            .zip(&convex)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let mut point = json!({
            "lo_amplitude": a,
            "tail_bound": mix.tail_bound,
            "ratio": mix.ratio,
            "convex_residual": convex_residual,
            "budget": 1.0 / (a * a),
        });
        let exact: Option<Vec<f64>> = single.then(|| fields[0].phase());
        if let Some(ex) = &exact {
            let bs = BeamsplitterParams::new(1.0, 0.0).expect("valid");
            let cfg = KkRetrievalConfig::new(kkdetect::dsp::Expansion::FullLog, a, 0.0, &bs).expect("valid");
            let dsp = kk_phase_from_intensity(&fields[0].intensity(), &cfg, &bs)?;
            let e = central_half_max_abs(&mix.phase, ex);
            point["error_exact"] = json!(e);
            point["error_dsp"] = json!(central_half_max_abs(&mix.phase, &dsp.phase));
            errs.push(e);
        }
        if first_csv.is_none() {
            first_csv = Some(csv_file(
                "phase.csv",
                &["t", "phi_series", "phi_exact"],
                (0..grid.n_samples).map(|k| {
                    vec![
                        format_float(grid.time(k)),
                        format_float(mix.phase[k]),
                        exact.as_ref().map_or(String::new(), |e| format_float(e[k])),
                    ]
                }),
            ));
        }
        points.push(point);
    }
    let mut summary = obj(json!({ "field_model": to_value(&c.field_model), "points": points }));
    if single && c.lo_amplitudes.len() >= 2 {
        summary.insert("slope".into(), json!(loglog_slope(&c.lo_amplitudes, &errs)));
    }
    Ok((summary, first_csv.into_iter().collect()))
}

/// Sum of random cosines below `band_fraction` of the Nyquist frequency.
pub fn band_limited_signal(n: usize, band_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..16)
        .map(|_| {
            (
                rng.random::<f64>(),
                rng.random::<f64>() * band_fraction * std::f64::consts::PI,
                rng.random::<f64>() * 2.0 * std::f64::consts::PI,
            )
        })
        .collect();
    (0..n)
        .map(|k| tones.iter().map(|(a, w, p)| a * (w * k as f64 + p).cos()).sum())
        .collect()
}

fn run_hilbert(c: &HilbertConfig, seed: u64) -> Result<Parts, CliError> {
    if c.n < 8 {
        return Err(CliError::config("n", "must be >= 8"));
    }
    if !(c.band_fraction > 0.0 && c.band_fraction <= 1.0) {
        return Err(CliError::config("band_fraction", "must lie in (0, 1]"));
    }
    if !(c.sentinel_cycles > 0.0 && c.sentinel_cycles < c.n as f64 / 2.0) {
        return Err(CliError::config("sentinel_cycles", "must lie in (0, n/2)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signals: Vec<Vec<f64>> = (0..c.signals)
        .map(|_| band_limited_signal(c.n, c.band_fraction, &mut rng))
        .collect();
    let errors: Vec<f64> = signals
        .iter()
        .map(|x| {
            let fast = hilbert_kk_fft(x);
            let slow = hilbert_kk_direct(x);
            let n = x.len();
            let scale = (n / 4..n - n / 4).map(|k| slow[k].abs()).fold(0.0, f64::max);
            central_half_max_abs(&fast, &slow) / scale
        })
        .collect();
    let w = 2.0 * std::f64::consts::PI * c.sentinel_cycles / c.n as f64;
    let tone: Vec<f64> = (0..c.n).map(|k| (w * k as f64).cos()).collect();
    let expected: Vec<f64> = (0..c.n).map(|k| -0.5 * (w * k as f64).sin()).collect();
    let sentinel = central_half_max_abs(&hilbert_kk_fft(&tone), &expected) / 0.5;
    let summary = obj(json!({
        "n": c.n,
        "relative_errors": errors,
        "max_relative_error": errors.iter().cloned().fold(0.0, f64::max),
        "sentinel_relative_error": sentinel,
    }));
    Ok((summary, Vec::new()))
}

/// Modes used by the interference experiment, on a 32-sample grid.
pub fn interference_modes() -> (ComplexSignal, ComplexSignal) {
    let grid = TimeGrid::centered(0.1, 32).expect("valid grid");
    let f = ComplexSignal::from_fn(grid, |t| Complex64::from_polar((-t * t).exp(), 1.7 * t + 0.3));
    let g = ComplexSignal::from_fn(grid, |t| Complex64::from_polar(1.0 / (1.0 + t * t), -0.4 * t));
    (f, g)
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn run_interference(c: &InterferenceConfig, seed: u64) -> Result<Parts, CliError> {
    if c.max_n < 1 {
        return Err(CliError::config("max_n", "must be >= 1"));
    }
    let bs = BeamsplitterParams::from_reflection(c.reflection).map_err(|e| CliError::config("reflection", e))?;
    let (f, g) = interference_modes();
    let grid = *f.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for _ in 0..c.cases {
        let n = rng.random_range(1..=c.max_n);
        let mut coeffs: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        coeffs.push(Complex64::new(0.0, 0.0));
        let v = FockVector::normalized(coeffs)?;
        let lo = Complex64::from_polar(
            rng.random::<f64>() * c.max_lo_amplitude,
            rng.random::<f64>() * 2.0 * std::f64::consts::PI,
        );
        let k = rng.random_range(0..grid.n_samples);
        let it = interference_term(&v, lo, &f, &g, &bs, grid.time(k))?;
        cases.push(json!({
            "coeffs": v.coeffs().iter().map(|z| pair(*z)).collect::<Vec<_>>(),
            "lo": pair(lo),
            "f": pair(f.samples()[k]),
            "g": pair(g.samples()[k]),
            "r": bs.r,
            "t": bs.t,
            "term": pair(it.term),
            "mean_intensity": it.mean_intensity,
        }));
    }

    let pe = &c.phase_eigenstate;
    let z = Complex64::from_polar(pe.z_abs, pe.z_arg);
    let v = make_phase_eigenstate(z, pe.n_max).map_err(|e| CliError::config("phase_eigenstate", e))?;
    let ones = ComplexSignal::from_fn(grid, |_| Complex64::new(1.0, 0.0));
    let k = grid.n_samples / 2;
    let it = interference_term(
        &v,
        Complex64::from_polar(pe.lo_amplitude, pe.lo_phase),
        &f,
        &ones,
        &bs,
        grid.time(k),
    )?;
    let expected = pe.lo_phase - pe.z_arg + f.samples()[k].arg();
    let zeta = it.total_phase.unwrap_or(f64::NAN);
    let summary = obj(json!({
        "cases": c.cases,
        "phase_eigenstate": {
            "zeta": zeta,
            "expected": wrap_phase(expected),
            "error": wrap_phase(zeta - expected).abs(),
        },
    }));
    let mut bytes = serde_json::to_vec_pretty(&cases).expect("serializable");
    bytes.push(b'\n');
    Ok((
        summary,
        vec![OutputFile {
            name: "cases.json".into(),
            bytes,
        }],
    ))
}

/// Calibrated DHD and HD statistics in one struct, for callers that want both.
pub fn stats_pair(hd: &DetectionStats, dhd: &DetectionStats) -> Value {
    json!({"hd": to_value(hd), "dhd": to_value(dhd)})
}
