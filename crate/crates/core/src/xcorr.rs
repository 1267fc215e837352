//! Noise residuals, lagged cross-correlation between wires, and ensemble
//! subtraction of shared noise.
//!
//! Lag convention: if `b[i] = a[i - L]` then `xcorr(a, b)` peaks at lag `L`,
//! and the reference sample aligned with target sample `i` is `b[i + L]`.

use crate::conditioning::{detrend, low_pass, DetrendMethod};
use crate::error::{Error, Result};
use crate::par;
use crate::trace::{mean_std, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct XcorrResult {
    pub lags: Vec<i64>,
    pub values: Vec<f64>,
    /// `(lag, value)` of the largest `|value|`, sign kept.
    pub peak: (i64, f64),
}

impl XcorrResult {
    pub fn value_at(&self, lag: i64) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|i| self.values[i])
    }

    /// Largest `|value|` at lags farther than `exclude` samples from the peak.
    pub fn background(&self, exclude: i64) -> f64 {
        self.lags
            .iter()
            .zip(&self.values)
            .filter(|(l, _)| (**l - self.peak.0).abs() > exclude)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Detrended trace minus its low-passed version: what is left once the
/// slow binding signal has been estimated and removed.
pub fn noise_only(trace: &Trace, method: &DetrendMethod, lp_cutoff_hz: f64) -> Result<Trace> {
    let (detrended, _) = detrend(trace, method)?;
    let signal = low_pass(&detrended, lp_cutoff_hz)?;
    let residual = detrended
        .samples()
        .iter()
        .zip(signal.samples())
        .map(|(d, s)| d - s)
        .collect();
    trace.with_samples(residual)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, sx) = mean_std(x);
    let (my, sy) = mean_std(y);
    if sx == 0.0 || sy == 0.0 {
        return 0.0;
    }
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    (cov / (sx * sy)).clamp(-1.0, 1.0)
}

/// Normalised cross-correlation over lags `-max_lag..=max_lag`. Each lag
/// correlates the overlapping parts of the two series with their own means
/// and standard deviations, so values never exceed 1 in magnitude.
pub fn xcorr(a: &Trace, b: &Trace, max_lag: usize) -> Result<XcorrResult> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::invalid(format!("series lengths differ: {n} vs {}", b.len())));
    }
    if max_lag >= n {
        return Err(Error::invalid(format!(
            "max lag {max_lag} must be below the length {n}"
        )));
    }
    for (name, t) in [("first", a), ("second", b)] {
        if mean_std(t.samples()).1 == 0.0 {
            return Err(Error::numeric(format!("{name} series has zero variance")));
        }
    }
    let (x, y) = (a.samples(), b.samples());
    let lags: Vec<i64> = (-(max_lag as i64)..=max_lag as i64).collect();
    let values = par::map_slice(&lags, |&lag| {
        let (xs, ys) = if lag >= 0 {
            let l = lag as usize;
            (&x[..n - l], &y[l..])
        } else {
            let l = (-lag) as usize;
            (&x[l..], &y[..n - l])
        };
        pearson(xs, ys)
    });
    // Ties go to the smaller |lag|, then to the positive side.
    let mut best = 0;
    for i in 1..lags.len() {
        let (v, bv) = (values[i].abs(), values[best].abs());
        if v > bv || (v == bv && (lags[i].abs(), -lags[i]) < (lags[best].abs(), -lags[best])) {
            best = i;
        }
    }
    Ok(XcorrResult {
        peak: (lags[best], values[best]),
        lags,
        values,
    })
}

/// Subtract the mean of the lag-aligned references from the target.
/// Reference samples that fall off either end count as zero.
pub fn ensemble_subtract(target: &Trace, references: &[Trace], lags: &[i64]) -> Result<Trace> {
    if references.len() != lags.len() {
        return Err(Error::invalid(format!(
            "{} references but {} lags",
            references.len(),
            lags.len()
        )));
    }
    if references.is_empty() {
        return Ok(target.clone());
    }
    let n = target.len();
    if let Some(r) = references.iter().find(|r| r.len() != n) {
        return Err(Error::invalid(format!(
            "reference length {} differs from target length {n}",
            r.len()
        )));
    }
    let k = references.len() as f64;
    let out = (0..n)
        .map(|i| {
            let estimate: f64 = references
                .iter()
                .zip(lags)
                .map(|(r, &lag)| {
                    let j = i as i64 + lag;
                    if (0..n as i64).contains(&j) {
                        r.samples()[j as usize]
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / k;
            target.samples()[i] - estimate
        })
        .collect();
    target.with_samples(out)
}

/// Align each reference by its own correlation peak against the target,
/// then subtract. Returns the cleaned trace and the lags used.
pub fn ensemble_denoise(target: &Trace, references: &[Trace], max_lag: usize) -> Result<(Trace, Vec<i64>)> {
    let lags = references
        .iter()
        .map(|r| xcorr(target, r, max_lag).map(|x| x.peak.0))
        .collect::<Result<Vec<_>>>()?;
    Ok((ensemble_subtract(target, references, &lags)?, lags))
}

/// Clean `target` with the noise-only residuals of `references`. Each
/// residual is aligned by its correlation peak against the target's own
/// residual; the aligned mean is subtracted from the raw target.
pub fn denoise_with_references(
    target: &Trace,
    references: &[Trace],
    method: &DetrendMethod,
    lp_cutoff_hz: f64,
    max_lag: usize,
) -> Result<(Trace, Vec<i64>)> {
    let target_noise = noise_only(target, method, lp_cutoff_hz)?;
    let ref_noise = par::map_slice(references, |r| noise_only(r, method, lp_cutoff_hz))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let lags = ref_noise
        .iter()
        .map(|r| xcorr(&target_noise, r, max_lag).map(|x| x.peak.0))
        .collect::<Result<Vec<_>>>()?;
    Ok((ensemble_subtract(target, &ref_noise, &lags)?, lags))
}

/// Peak of every wire pair `(i, j)` with `i < j`.
pub fn pairwise(traces: &[Trace], max_lag: usize) -> Result<Vec<(usize, usize, XcorrResult)>> {
    let pairs: Vec<(usize, usize)> = (0..traces.len())
        .flat_map(|i| (i + 1..traces.len()).map(move |j| (i, j)))
        .collect();
    par::map_slice(&pairs, |&(i, j)| {
        xcorr(&traces[i], &traces[j], max_lag).map(|r| (i, j, r))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        synthesize_array, synthesize_trace, ArrayScenario, EventSpec, NoiseSpec, SharedNoise, SimConfig, WireSpec,
    };

    fn tr(v: Vec<f64>) -> Trace {
        Trace::new(v, 1.0, 0.0).unwrap()
    }

    fn white(seed: u64, n: usize) -> Trace {
        synthesize_trace(&[], &NoiseSpec::white(1.0, seed), n as f64, 1.0).unwrap()
    }

    fn shared_pair(seed: u64, shared_power: f64, n: usize, lag_s: f64) -> Vec<Trace> {
        let own = (1.0 - shared_power).sqrt();
        let wire = |i: u64| WireSpec {
            modifier: format!("w{i}"),
            events: vec![],
            noise: NoiseSpec::white(own, seed * 10 + i),
        };
        synthesize_array(&ArrayScenario {
            duration: n as f64,
            dt: 1.0,
            sim: SimConfig::default(),
            wires: vec![wire(0), wire(1)],
            shared: Some(SharedNoise {
                sigma: shared_power.sqrt(),
                spikes: vec![],
                lags: vec![0.0, lag_s],
                seed,
            }),
        })
        .unwrap()
    }

    #[test]
    fn self_correlation() {
        let a = white(1, 300);
        let r = xcorr(&a, &a, 20).unwrap();
        assert_eq!(r.peak.0, 0);
        assert!((r.peak.1 - 1.0).abs() < 1e-12);
        assert!(r.values.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn constructed_shift() {
        let a = white(2, 400);
        for lag in [-7i64, -1, 3, 12] {
            let b: Vec<f64> = (0..400)
                .map(|i| {
                    let j = i as i64 - lag;
                    if (0..400).contains(&j) {
                        a.samples()[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect();
            let r = xcorr(&a, &tr(b), 20).unwrap();
            assert_eq!(r.peak.0, lag);
            assert!(r.peak.1 >= 0.99);
        }
    }

    #[test]
    fn antisymmetric_lag_and_affine_invariance() {
        let w = shared_pair(3, 0.6, 500, 2.0);
        let ab = xcorr(&w[0], &w[1], 10).unwrap();
        let ba = xcorr(&w[1], &w[0], 10).unwrap();
        assert_eq!(ab.peak.0, -ba.peak.0);
        let scaled = tr(w[1].samples().iter().map(|v| 3.5 * v - 11.0).collect());
        let r = xcorr(&w[0], &scaled, 10).unwrap();
        assert_eq!(r.peak.0, ab.peak.0);
        assert!((r.peak.1 - ab.peak.1).abs() < 1e-9);
    }

    #[test]
    fn negative_correlation_is_reported_signed() {
        let a = white(4, 300);
        let b = tr(a.samples().iter().map(|v| -v).collect());
        let r = xcorr(&a, &b, 5).unwrap();
        assert_eq!(r.peak, (0, -1.0));
    }

    #[test]
    fn errors() {
        let a = white(5, 50);
        assert!(xcorr(&a, &white(6, 40), 5).is_err());
        assert!(xcorr(&a, &a, 50).is_err());
        let flat = tr(vec![1.0; 50]);
        assert!(matches!(xcorr(&a, &flat, 5), Err(Error::Numeric(_))));
    }

    #[test]
    fn independent_wires_show_no_structure() {
        let n = 4000;
        for seed in 0..5 {
            let r = xcorr(&white(100 + seed, n), &white(200 + seed, n), 30).unwrap();
            assert!(r.peak.1.abs() < 5.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn shared_noise_peak_at_lag_one() {
        let w = shared_pair(7, 0.7, 2000, 1.0);
        let r = xcorr(&w[0], &w[1], 20).unwrap();
        assert_eq!(r.peak.0, 1);
        assert!(r.peak.1 >= 3.0 * r.background(0));
    }

    #[test]
    fn ensemble_perfect_reference() {
        let a = white(8, 500);
        let out = ensemble_subtract(&a, &[a.clone()], &[0]).unwrap();
        assert!(mean_std(out.samples()).1 < 1e-9);
        assert_eq!(ensemble_subtract(&a, &[], &[]).unwrap(), a);
        assert!(ensemble_subtract(&a, &[white(9, 400)], &[0]).is_err());
        assert!(ensemble_subtract(&a, &[a.clone()], &[]).is_err());
    }

    #[test]
    fn ensemble_reduces_shared_noise() {
        for seed in 0..5 {
            let w = shared_pair(seed, 0.7, 2000, 1.0);
            let (out, lags) = ensemble_denoise(&w[0], &w[1..], 10).unwrap();
            assert_eq!(lags, vec![1]);
            let before = mean_std(w[0].samples()).1.powi(2);
            let after = mean_std(out.samples()).1.powi(2);
            assert!(after <= 0.75 * before, "{before} -> {after}");
        }
    }

    #[test]
    fn ensemble_never_increases_variance_above_half_correlation() {
        for (seed, power) in [(11, 0.55), (12, 0.7), (13, 0.9)] {
            let w = shared_pair(seed, power, 3000, 0.0);
            let r = xcorr(&w[0], &w[1], 0).unwrap();
            assert!(r.peak.1 > 0.5);
            let out = ensemble_subtract(&w[0], &w[1..], &[0]).unwrap();
            assert!(mean_std(out.samples()).1 <= mean_std(w[0].samples()).1);
        }
    }

    #[test]
    fn noise_only_cases() {
        let method = DetrendMethod::GlobalPolyFit { degree: 0 };
        let zero = noise_only(&tr(vec![0.0; 200]), &method, 0.05).unwrap();
        assert!(zero.samples().iter().all(|v| *v == 0.0));

        let noise = white(14, 2000);
        let res = noise_only(&noise, &method, 0.05).unwrap();
        let kept = mean_std(res.samples()).1.powi(2) / mean_std(noise.samples()).1.powi(2);
        assert!(kept >= 0.8, "kept {kept}");

        let boxcar = synthesize_trace(
            &[EventSpec::binding(200.0, 100.0, -20.0)],
            &NoiseSpec::silent(),
            500.0,
            1.0,
        )
        .unwrap();
        let res = noise_only(&boxcar, &method, 0.05).unwrap();
        // Only the edge ringing survives, confined near the two steps.
        for (i, v) in res.samples().iter().enumerate() {
            let edge = (i as i64 - 200).abs().min((i as i64 - 300).abs());
            if edge > 40 {
                assert!(v.abs() < 1.0, "i={i} v={v}");
            }
        }
        assert!(res.samples().iter().all(|v| v.abs() < 20.0));
    }
}
