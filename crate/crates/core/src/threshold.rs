//! Low-pass + threshold event detection with fixed, calibrated and adaptive
//! per-wire thresholds.
//!
//! An event opens when the filtered signal goes beyond the threshold and
//! closes only once it recrosses the release level, halfway between the
//! baseline and the threshold. Events shorter than `min_duration` seconds
//! are dropped.

use serde::{Deserialize, Serialize};

use crate::conditioning::{low_pass, window_bounds};
use crate::error::{Error, Result};
use crate::par;
use crate::trace::{mean_std, DetectionEvent, EventTag, Trace};

/// Scale factor turning a median absolute deviation into a Gaussian sigma.
pub const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    #[default]
    Negative,
    Positive,
}

impl Polarity {
    fn sign(self) -> f64 {
        match self {
            Polarity::Negative => -1.0,
            Polarity::Positive => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Absolute, signed level in nS; baseline taken as 0.
    Fixed { level: f64 },
    /// `mean ± k·sigma` from an event-free calibration range `[start, end)` in samples.
    Calibrated { k_sigma: f64, start: usize, end: usize },
    /// Rolling median ± k·(1.4826·MAD) over a centred window.
    Adaptive { k_sigma: f64, window_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    #[serde(flatten)]
    pub rule: ThresholdRule,
    #[serde(default)]
    pub polarity: Polarity,
    #[serde(default = "default_min_duration")]
    pub min_duration: f64,
    /// Release level as a fraction of the threshold's distance from baseline.
    #[serde(default = "default_release")]
    pub release_fraction: f64,
}

fn default_min_duration() -> f64 {
    5.0
}

fn default_release() -> f64 {
    0.5
}

impl ThresholdPolicy {
    pub fn new(rule: ThresholdRule, polarity: Polarity) -> Self {
        ThresholdPolicy {
            rule,
            polarity,
            min_duration: default_min_duration(),
            release_fraction: default_release(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.rule {
            ThresholdRule::Fixed { level } => level.is_finite(),
            ThresholdRule::Calibrated { k_sigma, start, end } => k_sigma > 0.0 && start < end,
            ThresholdRule::Adaptive { k_sigma, window_s } => k_sigma > 0.0 && window_s > 0.0,
        };
        if !ok {
            return Err(Error::invalid(format!("invalid threshold rule {:?}", self.rule)));
        }
        if !(0.0..=1.0).contains(&self.release_fraction) || self.min_duration < 0.0 {
            return Err(Error::invalid(
                "release fraction must lie in [0, 1] and min duration be >= 0",
            ));
        }
        Ok(())
    }
}

/// Population std and mean of `trace[start..end)`.
pub fn calibrate_noise(trace: &Trace, start: usize, end: usize) -> Result<(f64, f64)> {
    if start >= end {
        return Err(Error::invalid(format!("empty calibration window {start}..{end}")));
    }
    if end > trace.len() {
        return Err(Error::invalid(format!(
            "calibration window {start}..{end} exceeds the {}-sample trace",
            trace.len()
        )));
    }
    let (mean, sigma) = mean_std(&trace.samples()[start..end]);
    Ok((sigma, mean))
}

/// Per-sample (baseline, threshold) levels for a filtered trace.
pub fn threshold_levels(filtered: &Trace, policy: &ThresholdPolicy) -> Result<(Vec<f64>, Vec<f64>)> {
    policy.validate()?;
    let n = filtered.len();
    let sign = policy.polarity.sign();
    match policy.rule {
        ThresholdRule::Fixed { level } => Ok((vec![0.0; n], vec![level; n])),
        ThresholdRule::Calibrated { k_sigma, start, end } => {
            let (sigma, mean) = calibrate_noise(filtered, start, end)?;
            Ok((vec![mean; n], vec![mean + sign * k_sigma * sigma; n]))
        }
        ThresholdRule::Adaptive { k_sigma, window_s } => {
            let w = filtered.samples_for(window_s);
            if w > n {
                return Err(Error::invalid(format!(
                    "adaptive window of {w} samples exceeds the {n}-sample trace"
                )));
            }
            let x = filtered.samples();
            let stats = par::map_range(n, |i| {
                let (lo, hi) = window_bounds(i, n, w);
                let mut buf = x[lo..hi].to_vec();
                let med = median(&mut buf);
                buf.iter_mut().for_each(|v| *v = (*v - med).abs());
                (med, MAD_TO_SIGMA * median(&mut buf))
            });
            Ok(stats
                .into_iter()
                .map(|(med, sigma)| (med, med + sign * k_sigma * sigma))
                .unzip())
        }
    }
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    let m = buf.len() / 2;
    if buf.len() % 2 == 1 {
        buf[m]
    } else {
        0.5 * (buf[m - 1] + buf[m])
    }
}

/// Hysteresis run extraction on a signal with per-sample levels. Returns
/// `[start, end)` runs that crossed `threshold` and stayed beyond `release`.
pub fn hysteresis_runs(x: &[f64], threshold: &[f64], release: &[f64], polarity: Polarity) -> Vec<(usize, usize)> {
    let sign = polarity.sign();
    let beyond = |v: f64, level: f64| sign * (v - level) > 0.0;
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        match open {
            None if beyond(v, threshold[i]) => open = Some(i),
            Some(s) if !beyond(v, release[i]) => {
                runs.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, x.len()));
    }
    runs
}

/// Low-pass the trace at `lp_cutoff_hz`, then extract threshold events.
pub fn threshold_detect(trace: &Trace, policy: &ThresholdPolicy, lp_cutoff_hz: f64) -> Result<Vec<DetectionEvent>> {
    let filtered = low_pass(trace, lp_cutoff_hz)?;
    detect_filtered(&filtered, policy)
}

/// Threshold events on an already filtered trace.
pub fn detect_filtered(filtered: &Trace, policy: &ThresholdPolicy) -> Result<Vec<DetectionEvent>> {
    let (baseline, threshold) = threshold_levels(filtered, policy)?;
    let release: Vec<f64> = baseline
        .iter()
        .zip(&threshold)
        .map(|(b, t)| b + policy.release_fraction * (t - b))
        .collect();
    let x = filtered.samples();
    let min_len = (policy.min_duration / filtered.dt()).round() as usize;
    let sign = policy.polarity.sign();
    Ok(hysteresis_runs(x, &threshold, &release, policy.polarity)
        .into_iter()
        .filter(|&(s, e)| e - s >= min_len.max(1))
        .map(|(s, e)| {
            let amplitude = x[s..e]
                .iter()
                .copied()
                .max_by(|a, b| (sign * a).total_cmp(&(sign * b)))
                .unwrap_or(0.0);
            DetectionEvent {
                start: s as i64,
                len: e - s,
                onset: filtered.time(s),
                duration: (e - s) as f64 * filtered.dt(),
                amplitude,
                score: sign * (amplitude - baseline[s]),
                width: None,
                tag: EventTag::Normal,
            }
        })
        .collect())
}
