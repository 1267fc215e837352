//! Boxcar matched filtering in the frequency domain.
//!
//! The kernel is laid out zero-phase ("unwrapped"): half the boxcar at the
//! start of the array and half at the end, so the filter output peaks at the
//! centre of a matching boxcar rather than at its leading edge. A negative
//! kernel against a negative-going binding yields a positive peak; detection
//! works on positive peaks of the normalised score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::spectral;
use crate::trace::{mean_std, DetectionEvent, EventTag, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxcarFilterSpec {
    /// nS
    pub amplitude: f64,
    pub width: usize,
    /// Transform length, a power of two.
    pub n: usize,
}

impl Default for BoxcarFilterSpec {
    fn default() -> Self {
        BoxcarFilterSpec {
            amplitude: -20.0,
            width: 20,
            n: 1024,
        }
    }
}

impl BoxcarFilterSpec {
    fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "transform length {} is not a power of two",
                self.n
            )));
        }
        if self.width == 0 || self.width >= self.n {
            return Err(Error::invalid(format!(
                "boxcar width must lie in 1..{}, got {}",
                self.n, self.width
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("boxcar amplitude must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakParams {
    pub threshold_sigma: f64,
    /// Defaults to the filter width.
    pub min_separation: Option<usize>,
}

impl Default for PeakParams {
    fn default() -> Self {
        PeakParams {
            threshold_sigma: 4.0,
            min_separation: None,
        }
    }
}

/// Normalised filter output for one transform window.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Raw output divided by its own population std (all zero if that std is 0).
    pub scores: Vec<f64>,
    /// Width of the boxcar that produced the scores.
    pub width: usize,
    pub dt: f64,
    /// Time of score index 0.
    pub t0: f64,
}

/// Zero-phase boxcar kernel: the first `ceil(w/2)` and last `floor(w/2)`
/// entries equal `amplitude / data_std`, the rest are zero.
pub fn build_boxcar_filter(spec: &BoxcarFilterSpec, data_std: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(data_std.is_finite() && data_std > 0.0) {
        return Err(Error::invalid(format!("data std must be > 0, got {data_std}")));
    }
    let value = spec.amplitude / data_std;
    let head = spec.width.div_ceil(2);
    let tail = spec.width / 2;
    let mut k = vec![0.0; spec.n];
    k[..head].iter_mut().for_each(|v| *v = value);
    k[spec.n - tail..].iter_mut().for_each(|v| *v = value);
    Ok(k)
}

/// Circular cross-correlation `out[j] = Σ_i data[(i + j) mod n] · kernel[i]`,
/// computed as `IFFT(FFT(data) · conj(FFT(kernel)))`. An impulse at 0 therefore
/// returns the kernel index-reversed (`out[j] = kernel[-j mod n]`), which for
/// the symmetric boxcar is the kernel itself up to a one-sample shift.
pub fn fft_convolve(data: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    if data.len() != kernel.len() {
        return Err(Error::invalid(format!(
            "data length {} differs from kernel length {}",
            data.len(),
            kernel.len()
        )));
    }
    if !data.len().is_power_of_two() {
        return Err(Error::invalid(format!("length {} is not a power of two", data.len())));
    }
    let d = spectral::forward(data);
    let k = spectral::forward(kernel);
    let product = d.iter().zip(&k).map(|(a, b)| a * b.conj()).collect();
    Ok(spectral::inverse_real(product))
}

fn normalise(raw: Vec<f64>) -> Vec<f64> {
    let (_, std) = mean_std(&raw);
    if std > 0.0 && std.is_finite() {
        raw.into_iter().map(|v| v / std).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// Whiten a window of exactly `spec.n` samples and run the matched filter on it.
pub fn filter_window(window: &[f64], spec: &BoxcarFilterSpec, dt: f64, t0: f64) -> Result<FilterOutput> {
    spec.validate()?;
    if window.len() != spec.n {
        return Err(Error::invalid(format!(
            "window has {} samples, expected {}",
            window.len(),
            spec.n
        )));
    }
    let (mean, std) = mean_std(window);
    if std == 0.0 {
        return Ok(FilterOutput {
            scores: vec![0.0; spec.n],
            width: spec.width,
            dt,
            t0,
        });
    }
    let whitened: Vec<f64> = window.iter().map(|v| (v - mean) / std).collect();
    let kernel = build_boxcar_filter(spec, std)?;
    let raw = fft_convolve(&whitened, &kernel)?;
    Ok(FilterOutput {
        scores: normalise(raw),
        width: spec.width,
        dt,
        t0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Peak {
    index: usize,
    score: f64,
}

fn local_maxima(scores: &[f64], range: std::ops::Range<usize>, circular: bool, threshold: f64) -> Vec<Peak> {
    let n = scores.len();
    range
        .filter(|&i| {
            let s = scores[i];
            if s <= threshold {
                return false;
            }
            let left = if i > 0 {
                Some(scores[i - 1])
            } else if circular {
                Some(scores[n - 1])
            } else {
                None
            };
            let right = if i + 1 < n {
                Some(scores[i + 1])
            } else if circular {
                Some(scores[0])
            } else {
                None
            };
            // Strict on the left, so a plateau reports its first sample.
            left.is_none_or(|l| s > l) && right.is_none_or(|r| s >= r)
        })
        .map(|i| Peak {
            index: i,
            score: scores[i],
        })
        .collect()
}

/// Greedy non-maximum suppression: strongest first, dropping any peak closer
/// than `min_sep` samples to one already kept. Output is in index order.
fn suppress(mut peaks: Vec<Peak>, min_sep: usize, circular_n: Option<usize>) -> Vec<Peak> {
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    let dist = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        circular_n.map_or(d, |n| d.min(n - d))
    };
    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        if kept.iter().all(|k| dist(k.index, p.index) >= min_sep) {
            kept.push(p);
        }
    }
    kept.sort_by_key(|p| p.index);
    kept
}

fn peak_event(p: Peak, width: usize, dt: f64, t0: f64) -> DetectionEvent {
    let start = p.index as i64 - (width / 2) as i64;
    DetectionEvent {
        start,
        len: width,
        onset: t0 + start as f64 * dt,
        duration: width as f64 * dt,
        amplitude: p.score,
        score: p.score,
        width: Some(width),
        tag: EventTag::Normal,
    }
}

/// Local maxima of the (circular) score series above `threshold_sigma`, with
/// greedy suppression. Each event starts `width / 2` samples before its peak.
pub fn detect_peaks(output: &FilterOutput, params: &PeakParams) -> Vec<DetectionEvent> {
    let min_sep = params.min_separation.unwrap_or(output.width);
    let n = output.scores.len();
    let peaks = local_maxima(&output.scores, 0..n, true, params.threshold_sigma);
    suppress(peaks, min_sep, Some(n))
        .into_iter()
        .map(|p| peak_event(p, output.width, output.dt, output.t0))
        .collect()
}

/// Matched-filter result stitched over a whole trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFilterResult {
    /// One score per trace sample.
    pub scores: Vec<f64>,
    pub events: Vec<DetectionEvent>,
}

fn window_starts(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return vec![0];
    }
    let hop = n / 2;
    let mut starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|&s| s + n < len).collect();
    starts.push(len - n);
    starts.dedup();
    starts
}

/// Run the filter over a trace of any length. Traces longer than `spec.n` are
/// cut into 50%-overlapping windows (the last one aligned to the trace end),
/// processed in parallel; each window owns the samples nearest its centre,
/// and peaks are de-duplicated across windows by the same suppression rule.
/// Shorter traces are zero-padded after whitening.
pub fn filter_trace(trace: &Trace, spec: &BoxcarFilterSpec, params: &PeakParams) -> Result<TraceFilterResult> {
    spec.validate()?;
    let x = trace.samples();
    let len = x.len();
    let n = spec.n;

    if len <= n {
        let (mean, std) = mean_std(x);
        let mut padded = vec![0.0; n];
        if std > 0.0 {
            for (p, v) in padded.iter_mut().zip(x) {
                *p = (v - mean) / std;
            }
        }
        // The padded window is already white; filter it with unit data std.
        let out = filter_window_prewhitened(&padded, spec, trace.dt(), trace.t0())?;
        let min_sep = params.min_separation.unwrap_or(spec.width);
        let peaks = local_maxima(&out.scores, 0..len, len == n, params.threshold_sigma);
        let events = suppress(peaks, min_sep, (len == n).then_some(n))
            .into_iter()
            .map(|p| peak_event(p, spec.width, trace.dt(), trace.t0()))
            .collect();
        let mut scores = out.scores;
        scores.truncate(len);
        return Ok(TraceFilterResult { scores, events });
    }

    let starts = window_starts(len, n);
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(starts.windows(2).map(|w| (w[0] + w[1] + n) / 2))
        .chain(std::iter::once(len))
        .collect();
    let outputs = par::map_range(starts.len(), |k| {
        let s = starts[k];
        filter_window(&x[s..s + n], spec, trace.dt(), trace.time(s)).map(|out| {
            let own = bounds[k] - s..bounds[k + 1] - s;
            let peaks: Vec<Peak> = local_maxima(&out.scores, own.clone(), false, params.threshold_sigma)
                .into_iter()
                .map(|p| Peak {
                    index: p.index + s,
                    score: p.score,
                })
                .collect();
            (out.scores[own].to_vec(), peaks)
        })
    });

    let mut scores = Vec::with_capacity(len);
    let mut peaks = Vec::new();
    for out in outputs {
        let (s, p) = out?;
        scores.extend(s);
        peaks.extend(p);
    }
    let min_sep = params.min_separation.unwrap_or(spec.width);
    let events = suppress(peaks, min_sep, None)
        .into_iter()
        .map(|p| peak_event(p, spec.width, trace.dt(), trace.t0()))
        .collect();
    Ok(TraceFilterResult { scores, events })
}

fn filter_window_prewhitened(window: &[f64], spec: &BoxcarFilterSpec, dt: f64, t0: f64) -> Result<FilterOutput> {
    let kernel = build_boxcar_filter(spec, 1.0)?;
    let raw = fft_convolve(window, &kernel)?;
    Ok(FilterOutput {
        scores: normalise(raw),
        width: spec.width,
        dt,
        t0,
    })
}

/// Run a bank of boxcar widths and return the union of detections, ordered
/// by start then width. Each event carries the width that found it.
pub fn filter_bank(
    trace: &Trace,
    amplitude: f64,
    widths: &[usize],
    n: usize,
    params: &PeakParams,
) -> Result<Vec<DetectionEvent>> {
    if widths.is_empty() {
        return Err(Error::invalid("filter bank needs at least one width"));
    }
    let mut events = Vec::new();
    for &width in widths {
        let spec = BoxcarFilterSpec { amplitude, width, n };
        events.extend(filter_trace(trace, &spec, params)?.events);
    }
    events.sort_by_key(|e| (e.start, e.width));
    Ok(events)
}
