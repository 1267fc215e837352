//! Detrending, whitening and low-pass filtering.
//!
//! Standard deviations here are population values (divide by N) throughout,
//! so a whitened trace and a filter normalised by the same statistic agree.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::spectral;
use crate::trace::{mean_std, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum DetrendMethod {
    GlobalPolyFit {
        degree: usize,
    },
    MovingAverage {
        window_s: f64,
    },
    MovingMedian {
        window_s: f64,
    },
    /// Local mean = centre of the most populated conductance bin in the window.
    HistogramMode {
        window_s: f64,
        bin_width: f64,
    },
}

impl DetrendMethod {
    /// 200 s window, 2 nS bins.
    pub fn histogram_default() -> Self {
        DetrendMethod::HistogramMode {
            window_s: 200.0,
            bin_width: 2.0,
        }
    }
}

/// Local mean estimate aligned sample-for-sample with its source trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeanSeries(Vec<f64>);

impl LocalMeanSeries {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Centred window `[lo, hi)` of nominal width `w` around sample `i`,
/// truncated at both ends of a series of length `n`.
pub(crate) fn window_bounds(i: usize, n: usize, w: usize) -> (usize, usize) {
    let left = w / 2;
    let right = (w - 1) / 2;
    (i.saturating_sub(left), (i + right + 1).min(n))
}

fn window_samples(trace: &Trace, window_s: f64) -> Result<usize> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(Error::invalid(format!("window must be > 0 s, got {window_s}")));
    }
    let w = trace.samples_for(window_s);
    if w > trace.len() {
        return Err(Error::invalid(format!(
            "trace of {} samples is shorter than the {w}-sample window",
            trace.len()
        )));
    }
    Ok(w)
}

pub fn detrend(trace: &Trace, method: &DetrendMethod) -> Result<(Trace, LocalMeanSeries)> {
    let x = trace.samples();
    let trend = match *method {
        DetrendMethod::GlobalPolyFit { degree } => poly_trend(x, degree)?,
        DetrendMethod::MovingAverage { window_s } => moving_average(x, window_samples(trace, window_s)?),
        DetrendMethod::MovingMedian { window_s } => moving_median(x, window_samples(trace, window_s)?),
        DetrendMethod::HistogramMode { window_s, bin_width } => {
            if !(bin_width.is_finite() && bin_width > 0.0) {
                return Err(Error::invalid(format!("bin width must be > 0, got {bin_width}")));
            }
            histogram_mode(x, window_samples(trace, window_s)?, bin_width)
        }
    };
    let detrended = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok((trace.with_samples(detrended)?, LocalMeanSeries(trend)))
}

fn poly_trend(x: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n <= degree {
        return Err(Error::invalid(format!(
            "degree-{degree} fit needs more than {degree} samples, got {n}"
        )));
    }
    // Abscissa mapped onto [-1, 1] to keep the Vandermonde matrix well conditioned.
    let u = |i: usize| {
        if n == 1 {
            0.0
        } else {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        }
    };
    let design = DMatrix::from_fn(n, degree + 1, |i, j| u(i).powi(j as i32));
    let rhs = DVector::from_column_slice(x);
    let coef = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::numeric(format!("polynomial fit failed: {e}")))?;
    Ok((0..n)
        .map(|i| coef.iter().rev().fold(0.0, |acc, c| acc * u(i) + c))
        .collect())
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let (lo, hi) = window_bounds(i, n, w);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn median_of(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    let m = buf.len() / 2;
    if buf.len() % 2 == 1 {
        buf[m]
    } else {
        0.5 * (buf[m - 1] + buf[m])
    }
}

pub(crate) fn moving_median(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    par::map_range(n, |i| {
        let (lo, hi) = window_bounds(i, n, w);
        median_of(&mut x[lo..hi].to_vec())
    })
}

/// Samples per independently processed chunk of the histogram sweep.
const HISTOGRAM_CHUNK: usize = 2048;

fn histogram_mode(x: &[f64], w: usize, bin_width: f64) -> Vec<f64> {
    let n = x.len();
    // One grid for every window, with the global minimum at the centre of
    // bin 0 so a constant window reports its own value.
    let origin = x.iter().copied().fold(f64::INFINITY, f64::min) - 0.5 * bin_width;
    let bins: Vec<usize> = x.iter().map(|v| ((v - origin) / bin_width).floor() as usize).collect();
    let n_bins = bins.iter().copied().max().unwrap_or(0) + 1;
    let center = |b: usize| origin + (b as f64 + 0.5) * bin_width;

    let chunks = n.div_ceil(HISTOGRAM_CHUNK);
    par::map_range(chunks, |c| {
        let first = c * HISTOGRAM_CHUNK;
        let last = (first + HISTOGRAM_CHUNK).min(n);
        let mut counts = vec![0u32; n_bins];
        let (mut lo, mut hi) = window_bounds(first, n, w);
        bins[lo..hi].iter().for_each(|&b| counts[b] += 1);
        let mut out = Vec::with_capacity(last - first);
        for i in first..last {
            let (new_lo, new_hi) = window_bounds(i, n, w);
            while hi < new_hi {
                counts[bins[hi]] += 1;
                hi += 1;
            }
            while lo < new_lo {
                counts[bins[lo]] -= 1;
                lo += 1;
            }
            // Lowest bin wins ties.
            let (mode, _) = counts
                .iter()
                .enumerate()
                .fold((0, 0), |best, (b, &k)| if k > best.1 { (b, k) } else { best });
            out.push(center(mode));
        }
        out
    })
    .concat()
}

/// Subtract the mean and divide by the population standard deviation.
pub fn whiten(trace: &Trace) -> Result<Trace> {
    if trace.len() < 2 {
        return Err(Error::invalid("whitening needs at least 2 samples"));
    }
    let (mean, _) = mean_std(trace.samples());
    let centred: Vec<f64> = trace.samples().iter().map(|v| v - mean).collect();
    let (_, std) = mean_std(&centred);
    if std == 0.0 || !std.is_finite() {
        return Err(Error::numeric("constant trace cannot be whitened"));
    }
    trace.with_samples(centred.into_iter().map(|v| v / std).collect())
}

/// Brick-wall low-pass: frequencies at or above `cutoff_hz` are zeroed, DC is
/// kept. The trace is mirrored before the transform so its ends do not wrap
/// into each other.
pub fn low_pass(trace: &Trace, cutoff_hz: f64) -> Result<Trace> {
    let nyquist = trace.nyquist();
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::invalid(format!(
            "cutoff must lie in (0, {nyquist}) Hz, got {cutoff_hz}"
        )));
    }
    let x = trace.samples();
    let n = x.len();
    let mut ext = Vec::with_capacity(2 * n);
    ext.extend_from_slice(x);
    ext.extend(x.iter().rev());
    let m = ext.len();
    let mut spec = spectral::forward(&ext);
    let resolution = 1.0 / (m as f64 * trace.dt());
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k.min(m - k) as f64 * resolution;
        if f >= cutoff_hz {
            *c = Default::default();
        }
    }
    let mut y = spectral::inverse_real(spec);
    y.truncate(n);
    trace.with_samples(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{synthesize_trace, EventSpec, NoiseSpec, Trend};

    fn tr(v: Vec<f64>) -> Trace {
        Trace::new(v, 1.0, 0.0).unwrap()
    }

    fn all_methods() -> Vec<DetrendMethod> {
        vec![
            DetrendMethod::GlobalPolyFit { degree: 2 },
            DetrendMethod::MovingAverage { window_s: 11.0 },
            DetrendMethod::MovingMedian { window_s: 11.0 },
            DetrendMethod::HistogramMode {
                window_s: 11.0,
                bin_width: 2.0,
            },
        ]
    }

    #[test]
    fn constant_trace_any_method() {
        let t = tr(vec![7.5; 50]);
        for m in all_methods() {
            let (d, trend) = detrend(&t, &m).unwrap();
            for (&v, &tv) in d.samples().iter().zip(trend.values()) {
                assert!(v.abs() < 1e-9, "{m:?}");
                assert!((tv - 7.5).abs() < 1e-9, "{m:?}");
            }
        }
    }

    #[test]
    fn detrend_reconstructs_input() {
        let t = synthesize_trace(
            &[EventSpec::binding(30.0, 15.0, -20.0)],
            &NoiseSpec {
                white_sigma: 1.5,
                trend: Trend::Linear { slope: 0.05 },
                seed: 4,
                ..NoiseSpec::silent()
            },
            120.0,
            1.0,
        )
        .unwrap();
        for m in all_methods() {
            let (d, trend) = detrend(&t, &m).unwrap();
            for ((a, b), c) in d.samples().iter().zip(trend.values()).zip(t.samples()) {
                assert!((a + b - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_longer_than_trace_is_rejected() {
        let t = tr(vec![1.0; 10]);
        assert!(detrend(&t, &DetrendMethod::MovingMedian { window_s: 20.0 }).is_err());
        assert!(detrend(
            &t,
            &DetrendMethod::HistogramMode {
                window_s: 5.0,
                bin_width: 0.0
            }
        )
        .is_err());
    }

    #[test]
    fn poly_fit_recovers_quadratic() {
        let x: Vec<f64> = (0..100).map(|i| 3.0 - 0.2 * i as f64 + 0.01 * (i * i) as f64).collect();
        let (d, _) = detrend(&tr(x), &DetrendMethod::GlobalPolyFit { degree: 2 }).unwrap();
        assert!(d.samples().iter().all(|v| v.abs() < 1e-9));
    }

    // Brute-force oracle: for each sample, build the window's histogram by
    // direct counting on the same bin grid and take the first maximal bin.
    fn brute_mode(x: &[f64], w: usize, bw: f64) -> Vec<f64> {
        let origin = x.iter().copied().fold(f64::INFINITY, f64::min) - 0.5 * bw;
        let n = x.len();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(w / 2);
                let hi = (i + (w - 1) / 2 + 1).min(n);
                let mut best = (usize::MAX, 0usize);
                let max_bin = x.iter().map(|v| ((v - origin) / bw).floor() as usize).max().unwrap();
                for b in 0..=max_bin {
                    let count = x[lo..hi]
                        .iter()
                        .filter(|&&v| ((v - origin) / bw).floor() as usize == b)
                        .count();
                    if count > best.1 {
                        best = (b, count);
                    }
                }
                origin + (best.0 as f64 + 0.5) * bw
            })
            .collect()
    }

    fn ramp_with_boxcar(seed: u64) -> Trace {
        synthesize_trace(
            &[EventSpec::binding(400.0, 24.0, -20.0)],
            &NoiseSpec {
                white_sigma: 1.0,
                trend: Trend::Linear { slope: 0.01 },
                seed,
                ..NoiseSpec::silent()
            },
            1000.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn histogram_mode_matches_brute_force() {
        for seed in 0..3 {
            let t = ramp_with_boxcar(seed);
            let (_, trend) = detrend(&t, &DetrendMethod::histogram_default()).unwrap();
            assert_eq!(trend.values(), brute_mode(t.samples(), 200, 2.0).as_slice());
        }
        // Chunk boundaries are exercised once the trace exceeds one chunk.
        let long = synthesize_trace(&[], &NoiseSpec::white(2.0, 9), 5000.0, 1.0).unwrap();
        let (_, trend) = detrend(
            &long,
            &DetrendMethod::HistogramMode {
                window_s: 50.0,
                bin_width: 1.0,
            },
        )
        .unwrap();
        assert_eq!(trend.values(), brute_mode(long.samples(), 50, 1.0).as_slice());
    }

    #[test]
    fn histogram_trend_ignores_short_boxcar() {
        let t = ramp_with_boxcar(1);
        let (d, trend) = detrend(&t, &DetrendMethod::histogram_default()).unwrap();
        for i in 380..450 {
            let truth = 0.01 * i as f64;
            assert!((trend.values()[i] - truth).abs() < 2.0, "i={i}");
        }
        let depth: f64 = d.samples()[402..422].iter().sum::<f64>() / 20.0;
        assert!(depth < -18.0, "boxcar depth {depth}");
    }

    #[test]
    fn histogram_trend_holds_background_under_boxcar() {
        // No trend, no noise: the mode must stay on the background population.
        let t = synthesize_trace(
            &[EventSpec::binding(300.0, 80.0, -20.0)],
            &NoiseSpec::silent(),
            800.0,
            1.0,
        )
        .unwrap();
        let (_, trend) = detrend(&t, &DetrendMethod::histogram_default()).unwrap();
        let background = trend.values()[0];
        assert!(trend.values().iter().all(|&v| (v - background).abs() <= 2.0));
    }

    #[test]
    fn histogram_turns_long_step_into_spike() {
        // A step that persists turns into a transient once the window moves past it.
        let t = synthesize_trace(
            &[],
            &NoiseSpec {
                trend: Trend::PiecewiseStep {
                    times: vec![1300.0],
                    levels: vec![-20.0],
                },
                ..NoiseSpec::silent()
            },
            2000.0,
            1.0,
        )
        .unwrap();
        let noisy = synthesize_trace(
            &[],
            &NoiseSpec {
                white_sigma: 1.5,
                seed: 12,
                ..NoiseSpec::silent()
            },
            2000.0,
            1.0,
        )
        .unwrap();
        let x: Vec<f64> = t.samples().iter().zip(noisy.samples()).map(|(a, b)| a + b).collect();
        let (d, _) = detrend(&t.with_samples(x).unwrap(), &DetrendMethod::histogram_default()).unwrap();
        let s = d.samples();
        // The level change persists for 700 s in the input but survives only
        // within half a window of the step after detrending.
        let far: Vec<usize> = (0..2000).filter(|i| (*i as i64 - 1300).abs() > 100).collect();
        assert!(far.iter().all(|&i| s[i].abs() < 8.0));
        let excursion = s[1200..1400].iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(excursion < 20.0 + 8.0);
    }

    #[test]
    fn moving_median_step_has_no_overshoot() {
        let x: Vec<f64> = (0..60).map(|i| if i < 30 { 0.0 } else { 5.0 }).collect();
        let (_, trend) = detrend(&tr(x.clone()), &DetrendMethod::MovingMedian { window_s: 7.0 }).unwrap();
        assert_eq!(trend.values(), x.as_slice());
    }

    #[test]
    fn whiten_by_hand() {
        let w = whiten(&tr(vec![1.0, 3.0])).unwrap();
        assert_eq!(w.samples(), &[-1.0, 1.0]);
        let err = whiten(&tr(vec![4.0; 8])).unwrap_err();
        assert_eq!(err.to_string(), "constant trace cannot be whitened");
    }

    #[test]
    fn whiten_idempotent() {
        let t = synthesize_trace(&[], &NoiseSpec::white(3.0, 2), 1024.0, 1.0).unwrap();
        let once = whiten(&t).unwrap();
        let twice = whiten(&once).unwrap();
        for (a, b) in once.samples().iter().zip(twice.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (m, s) = mean_std(once.samples());
        assert!(m.abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn low_pass_keeps_dc() {
        let t = tr(vec![3.25; 77]);
        let y = low_pass(&t, 0.1).unwrap();
        assert!(y.samples().iter().all(|v| (v - 3.25).abs() < 1e-12));
        assert!(low_pass(&t, 0.5).is_err());
        assert!(low_pass(&t, 0.0).is_err());
    }

    #[test]
    fn low_pass_spike_versus_boxcar() {
        let render = |events: &[EventSpec]| {
            let t = synthesize_trace(events, &NoiseSpec::silent(), 1000.0, 1.0).unwrap();
            low_pass(&t, 1.0 / 20.0).unwrap()
        };
        let spike = render(&[EventSpec::spike(200.0, 1.0, -30.0)]);
        let attenuation = 30.0 / spike.samples()[200].abs();
        assert!(attenuation >= 10.0, "attenuation {attenuation}");
        let boxcar = render(&[EventSpec::binding(600.0, 30.0, -30.0)]);
        assert!(boxcar.samples()[615] / -30.0 >= 0.8);
        // Superposition: the pair is the sum of the two responses.
        let both = render(&[
            EventSpec::spike(200.0, 1.0, -30.0),
            EventSpec::binding(600.0, 30.0, -30.0),
        ]);
        for ((a, b), c) in spike.samples().iter().zip(boxcar.samples()).zip(both.samples()) {
            assert!((a + b - c).abs() < 1e-9);
        }
    }

    #[test]
    fn low_pass_two_tone() {
        let n = 2000;
        let slow: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 0.005 * i as f64).sin())
            .collect();
        let x: Vec<f64> = slow
            .iter()
            .enumerate()
            .map(|(i, s)| s + 0.8 * (2.0 * std::f64::consts::PI * 0.3 * i as f64).sin())
            .collect();
        let y = low_pass(&tr(x), 0.05).unwrap();
        let (my, sy) = mean_std(y.samples());
        let (ms, ss) = mean_std(&slow);
        let cov = y
            .samples()
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - my) * (b - ms))
            .sum::<f64>()
            / n as f64;
        assert!(cov / (sy * ss) >= 0.99);
    }
}
