//! Series evaluation of the averaged KK phase for coherent states and discrete
//! coherent mixtures, written in terms of Poisson intensity moments.
//!
//! Per sample the inner sum is
//! `s = sum_{n=1}^{N} sum_{k=0}^{n} sum_{l} (-1)^{k+1}/n C(n,k) S(k,l) x^l / A^{2k}`
//! with `x = |psi|^2`, which is `-sum_n E[(1 - N/A^2)^n] / n` for Poisson `N`
//! of mean `x`, and tends to `ln(x/A^2)` for a strong LO. The phase is the KK
//! Hilbert operator applied to `s`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::hilbert_kk_direct;
use crate::error::{invalid, KkError, Result};
use crate::states::CoherentMixture;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub n_max: usize,
    pub convergence_tol: f64,
}

impl SeriesConfig {
    pub fn new(n_max: usize, convergence_tol: f64) -> Result<Self> {
        let cfg = Self { n_max, convergence_tol };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(invalid("n_max", "must be >= 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(invalid("convergence_tol", "must be > 0"));
        }
        Ok(())
    }
}

/// Stirling number of the second kind by the triangular recurrence
/// `S(n,k) = k S(n-1,k) + S(n-1,k-1)`, exact in `u128`.
pub fn stirling2(n: usize, k: usize) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for m in 1..=n {
        for j in (1..=k.min(m)).rev() {
            row[j] = (j as u128)
                .checked_mul(row[j])
                .and_then(|v| v.checked_add(row[j - 1]))
                .ok_or_else(|| KkError::Overflow(format!("S({m},{j}) exceeds u128")))?;
        }
        row[0] = 0;
    }
    Ok(row[k])
}

pub fn binomial(n: usize, k: usize) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc
            .checked_mul((n - j) as u128)
            .ok_or_else(|| KkError::Overflow(format!("C({n},{k}) exceeds u128")))?
            / (j as u128 + 1);
    }
    Ok(acc)
}

/// First two moments of the instantaneous intensity at time `t`:
/// `m1 = sum_i p_i |psi_i|^2`, `m2 = sum_i p_i (|psi_i|^4 + |psi_i|^2)`.
pub fn intensity_moments_mixture(m: &CoherentMixture, t: f64) -> Result<(f64, f64)> {
    let k = m
        .grid()
        .index_of(t)
        .ok_or_else(|| invalid("t", format!("{t} is off the grid")))?;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (p, c) in m.components() {
        let x = c.psi().samples()[k].norm_sqr();
        m1 += p * x;
        m2 += p * (x * x + x);
    }
    Ok((m1, m2))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

struct Coefficient {
    /// Power of `x`.
    l: i32,
    /// Power of `1/A^2`.
    k: i32,
    value: f64,
}

fn coefficient_table(n_max: usize) -> Result<Vec<Coefficient>> {
    let mut out = Vec::new();
    for n in 1..=n_max {
        for k in 0..=n {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            let c_nk = binomial(n, k)?;
            let l_range = if k == 0 { 0..=0 } else { 1..=k };
            for l in l_range {
                let s = if k == 0 { 1 } else { stirling2(k, l)? };
                let w = c_nk
                    .checked_mul(s)
                    .ok_or_else(|| KkError::Overflow(format!("C({n},{k}) S({k},{l}) exceeds u128")))?;
                out.push(Coefficient {
                    l: l as i32,
                    k: k as i32,
                    value: sign * w as f64 / n as f64,
                });
            }
        }
    }
    Ok(out)
}

fn inner_sum(table: &[Coefficient], x: f64, inv_a2: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(table.iter().map(|c| c.value * x.powi(c.l) * inv_a2.powi(c.k)));
    scratch.sort_unstable_by(|a, b| b.abs().total_cmp(&a.abs()));
    compensated_sum(scratch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPhase {
    pub phase: Vec<f64>,
    /// Geometric tail estimate `rho^{N+1} / ((N+1)(1 - rho))`.
    pub tail_bound: f64,
    /// `rho = max_{i,t} |x - A^2| / A^2`.
    pub ratio: f64,
}

/// Averaged KK phase of a coherent mixture for an LO of amplitude `lo_amplitude`.
pub fn kk_phase_series(m: &CoherentMixture, lo_amplitude: f64, cfg: &SeriesConfig) -> Result<SeriesPhase> {
    cfg.validate()?;
    if !(lo_amplitude > 0.0 && lo_amplitude.is_finite()) {
        return Err(invalid("lo_amplitude", format!("must be > 0, got {lo_amplitude}")));
    }
    let a2 = lo_amplitude * lo_amplitude;
    let ratio = m
        .components()
        .iter()
        .flat_map(|(_, c)| c.psi().samples().iter().map(move |z| (z.norm_sqr() - a2).abs() / a2))
        .fold(0.0, f64::max);
    if ratio >= 1.0 {
        return Err(KkError::NonConvergent(format!(
            "max |psi|^2 deviates from A^2 by ratio {ratio:.4} >= 1"
        )));
    }
    let np1 = (cfg.n_max + 1) as f64;
    let tail_bound = ratio.powf(np1) / (np1 * (1.0 - ratio));
    if tail_bound >= cfg.convergence_tol {
        return Err(KkError::NonConvergent(format!(
            "tail bound {tail_bound:e} >= tol {:e} at n_max = {}",
            cfg.convergence_tol, cfg.n_max
        )));
    }

    let table = coefficient_table(cfg.n_max)?;
    let inv_a2 = 1.0 / a2;
    let n = m.grid().n_samples;
    let mut s = vec![0.0f64; n];
    for (p, c) in m.components() {
        let part: Vec<f64> = c
            .psi()
            .samples()
            .par_iter()
            .map_init(Vec::new, |scratch, z: &Complex64| {
                inner_sum(&table, z.norm_sqr(), inv_a2, scratch)
            })
            .collect();
        for (acc, v) in s.iter_mut().zip(part) {
            *acc += p * v;
        }
    }
    Ok(SeriesPhase {
        phase: hilbert_kk_direct(&s),
        tail_bound,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ComplexSignal, TimeGrid};
    use crate::states::CoherentField;

    fn explicit_stirling(n: u32, k: u32) -> f64 {
        let mut sum = 0.0;
        let mut c = 1.0;
        for j in 0..=k {
            if j > 0 {
                c = c * (k - j + 1) as f64 / j as f64;
            }
            let sign = if (k - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            sum += sign * c * (j as f64).powi(n as i32);
        }
        let fact: f64 = (1..=k).map(|x| x as f64).product();
        sum / fact
    }

    #[test]
    fn stirling_values() {
        assert_eq!(stirling2(4, 2).unwrap(), 7);
        assert_eq!(stirling2(5, 3).unwrap(), 25);
        assert_eq!(stirling2(0, 0).unwrap(), 1);
        assert_eq!(stirling2(3, 0).unwrap(), 0);
        assert_eq!(stirling2(2, 5).unwrap(), 0);
        for n in 1..=25 {
            assert_eq!(stirling2(n, 1).unwrap(), 1);
            assert_eq!(stirling2(n, n).unwrap(), 1);
            for k in 1..=n {
                let lhs = stirling2(n, k).unwrap();
                let rhs = k as u128 * stirling2(n - 1, k).unwrap() + stirling2(n - 1, k - 1).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
        for n in 0..=12u32 {
            for k in 0..=n {
                let exact = stirling2(n as usize, k as usize).unwrap() as f64;
                assert!((exact - explicit_stirling(n, k)).abs() <= 1e-9 * exact.max(1.0));
            }
        }
        assert!(matches!(stirling2(200, 100), Err(KkError::Overflow(_))));
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(8, 4).unwrap(), 70);
        assert_eq!(binomial(5, 0).unwrap(), 1);
        assert_eq!(binomial(3, 4).unwrap(), 0);
    }

    #[test]
    fn moments_examples() {
        let grid = TimeGrid::centered(1.0, 8).unwrap();
        let t0 = grid.time(3);
        let field = |v: f64| CoherentField::new(ComplexSignal::from_fn(grid, move |_| Complex64::new(v, 0.0)));
        let m = CoherentMixture::pure(field(0.0));
        assert_eq!(intensity_moments_mixture(&m, t0).unwrap(), (0.0, 0.0));
        let m = CoherentMixture::pure(field(2.0));
        assert_eq!(intensity_moments_mixture(&m, t0).unwrap(), (4.0, 20.0));
        let m = CoherentMixture::new(vec![(0.5, field(1.0)), (0.5, field(3.0))]).unwrap();
        assert_eq!(intensity_moments_mixture(&m, t0).unwrap(), (5.0, 46.0));
        assert!(intensity_moments_mixture(&m, 100.0).is_err());
    }

    #[test]
    fn inner_sum_is_poisson_log_moment() {
        // Independent evaluation of -sum_n E[(1 - N/A^2)^n]/n by summing the
        // Poisson distribution directly.
        let table = coefficient_table(6).unwrap();
        let (x, a2) = (90.0f64, 100.0f64);
        let mut want = 0.0;
        let mut pk = (-x).exp();
        for count in 0..400 {
            if count > 0 {
                pk *= x / count as f64;
            }
            let u = 1.0 - count as f64 / a2;
            let partial: f64 = (1..=6).map(|n| u.powi(n) / n as f64).sum();
            want -= pk * partial;
        }
        let got = inner_sum(&table, x, 1.0 / a2, &mut Vec::new());
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn constant_field_gives_zero_phase() {
        let grid = TimeGrid::centered(1.0, 256).unwrap();
        let a = 7.0;
        let m = CoherentMixture::pure(CoherentField::new(ComplexSignal::from_fn(grid, |_| {
            Complex64::new(a, 0.0)
        })));
        let cfg = SeriesConfig::new(8, 1e-8).unwrap();
        let out = kk_phase_series(&m, a, &cfg).unwrap();
        // The only residue is the Poisson offset -1/(2A^2) + O(A^-4), a constant
        // whose finite-window transform is bounded by its size times ln n.
        let offset = 1.0 / (2.0 * a * a);
        assert!(out.phase.iter().all(|p| p.abs() < offset * (256f64).ln()));
        let out = kk_phase_series(&m, 1e4, &SeriesConfig::new(2, 1e-3).unwrap()).unwrap_err();
        assert!(matches!(out, KkError::NonConvergent(_)));
    }

    #[test]
    fn rejects_slow_truncation() {
        let grid = TimeGrid::centered(1.0, 64).unwrap();
        let m = CoherentMixture::pure(CoherentField::new(ComplexSignal::from_fn(grid, |t| {
            Complex64::new(10.0 + 5.0 * (t / 8.0).cos(), 0.0)
        })));
        let err = kk_phase_series(&m, 10.0, &SeriesConfig::new(4, 1e-6).unwrap()).unwrap_err();
        assert!(matches!(err, KkError::NonConvergent(_)));
        assert!(SeriesConfig::new(0, 1e-3).is_err());
        assert!(SeriesConfig::new(3, 0.0).is_err());
    }
}
