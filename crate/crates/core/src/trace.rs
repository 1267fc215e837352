use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled conductance series, in nS.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f64>,
    dt: f64,
    t0: f64,
}

impl Trace {
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trace has no samples"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("sample interval must be > 0, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("trace start time must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Trace { samples, dt, t0 })
    }

    /// Same timing as `self`, new values. Values must have the same length.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::invalid(format!(
                "expected {} samples, got {}",
                self.samples.len(),
                samples.len()
            )));
        }
        Trace::new(samples, self.dt, self.t0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    /// Total span covered, `len * dt`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Number of samples closest to a span of `seconds`, at least 1.
    pub fn samples_for(&self, seconds: f64) -> usize {
        ((seconds / self.dt).round() as usize).max(1)
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }
}

/// Population mean and standard deviation (divide by N).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EventTag {
    #[default]
    Normal,
    /// Shorter than the configured minimum; likely a noise spike.
    SpikeLike,
    /// Longer than the configured maximum; possibly a broken wire.
    Anomalous,
}

impl EventTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EventTag::Normal => "normal",
            EventTag::SpikeLike => "spike-like",
            EventTag::Anomalous => "anomalous",
        }
    }
}

/// A detected (or ground-truth) event, located both in samples and seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    /// First sample index of the event. May be negative for a matched-filter
    /// event whose inferred onset precedes the trace start.
    pub start: i64,
    /// Length in samples.
    pub len: usize,
    pub onset: f64,
    pub duration: f64,
    /// Extremal excursion (nS) where meaningful, otherwise the score.
    pub amplitude: f64,
    pub score: f64,
    /// Matched-filter width that produced the event, if any.
    pub width: Option<usize>,
    pub tag: EventTag,
}

impl DetectionEvent {
    pub fn end(&self) -> i64 {
        self.start + self.len as i64
    }

    /// Intersection-over-union of the sample intervals of two events.
    pub fn iou(&self, other: &DetectionEvent) -> f64 {
        interval_iou((self.start, self.end()), (other.start, other.end()))
    }
}

/// Intersection-over-union of half-open integer intervals.
pub fn interval_iou(a: (i64, i64), b: (i64, i64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
