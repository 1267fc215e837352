//! Ground-truth trace simulator.
//!
//! A trace is `baseline + trend + Σ events + common spikes + white noise`.
//! Event edges snap to the nearest sample; nothing is rendered at sub-sample
//! resolution. All randomness comes from named sub-streams of the noise seed,
//! so a given spec always renders to the same bits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    TransientSpike,
    SpecificBinding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    /// Seconds from trace start.
    pub onset: f64,
    pub duration: f64,
    /// nS, signed.
    pub amplitude: f64,
}

impl EventSpec {
    pub fn binding(onset: f64, duration: f64, amplitude: f64) -> Self {
        EventSpec {
            kind: EventKind::SpecificBinding,
            onset,
            duration,
            amplitude,
        }
    }

    pub fn spike(onset: f64, duration: f64, amplitude: f64) -> Self {
        EventSpec {
            kind: EventKind::TransientSpike,
            onset,
            duration,
            amplitude,
        }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    /// Sample interval `[start, end)` covered by the event at interval `dt`.
    pub fn sample_span(&self, dt: f64) -> (usize, usize) {
        let start = (self.onset / dt).round().max(0.0) as usize;
        let end = ((self.end() / dt).round() as usize).max(start + 1);
        (start, end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Trend {
    #[default]
    None,
    Linear {
        slope: f64,
    },
    /// `a·t + b·t²`
    Quadratic {
        a: f64,
        b: f64,
    },
    /// `levels[i]` holds from `times[i]` until the next step; zero before the first.
    PiecewiseStep {
        times: Vec<f64>,
        levels: Vec<f64>,
    },
}

impl Trend {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Trend::None => 0.0,
            Trend::Linear { slope } => slope * t,
            Trend::Quadratic { a, b } => a * t + b * t * t,
            Trend::PiecewiseStep { times, levels } => times
                .iter()
                .zip(levels)
                .take_while(|(&start, _)| start <= t)
                .last()
                .map_or(0.0, |(_, &level)| level),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Trend::PiecewiseStep { times, levels } => {
                if times.len() != levels.len() {
                    return Err(Error::invalid("step trend needs one level per time"));
                }
                if times.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::invalid("step trend times must be nondecreasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A single-sample spike at `time + lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonSpike {
    pub time: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub lag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub white_sigma: f64,
    #[serde(default)]
    pub trend: Trend,
    #[serde(default)]
    pub common_spikes: Vec<CommonSpike>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn silent() -> Self {
        NoiseSpec {
            white_sigma: 0.0,
            trend: Trend::None,
            common_spikes: Vec::new(),
            seed: 0,
        }
    }

    pub fn white(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            white_sigma: sigma,
            seed,
            ..NoiseSpec::silent()
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::silent()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeShape {
    /// Constant amplitude over the spike's own duration.
    #[default]
    Flat,
    /// Three samples `a/2, a, a/2` centred on the onset.
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub baseline: f64,
    pub spike_shape: SpikeShape,
    pub spike_max_duration: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            baseline: 0.0,
            spike_shape: SpikeShape::Flat,
            spike_max_duration: 2.0,
        }
    }
}

fn lag_samples(lag: f64, dt: f64) -> Result<i64> {
    let r = lag / dt;
    if !r.is_finite() || (r - r.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "lag {lag} s is not a multiple of the sample interval {dt} s"
        )));
    }
    Ok(r.round() as i64)
}

fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("sample interval must be > 0, got {dt}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!("duration must be > 0, got {duration}")));
    }
    Ok(((duration / dt).round() as usize).max(1))
}

/// Deterministic part of a trace (no white noise): events on a zero baseline.
fn render_events(config: &SimConfig, events: &[EventSpec], n: usize, dt: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    for (i, ev) in events.iter().enumerate() {
        if !(ev.duration.is_finite() && ev.duration > 0.0) {
            return Err(Error::invalid(format!("event {i}: duration must be > 0")));
        }
        if !(ev.onset.is_finite() && ev.onset >= 0.0 && ev.amplitude.is_finite()) {
            return Err(Error::invalid(format!("event {i}: onset/amplitude out of range")));
        }
        let (start, end) = ev.sample_span(dt);
        if end > n {
            return Err(Error::invalid(format!(
                "event {i} ends at {} s, past the trace duration {} s",
                ev.end(),
                n as f64 * dt
            )));
        }
        match ev.kind {
            EventKind::SpecificBinding => {
                out[start..end].iter_mut().for_each(|v| *v += ev.amplitude);
            }
            EventKind::TransientSpike => {
                if ev.duration > config.spike_max_duration {
                    return Err(Error::invalid(format!(
                        "event {i}: spike lasts {} s, longer than {} s",
                        ev.duration, config.spike_max_duration
                    )));
                }
                match config.spike_shape {
                    SpikeShape::Flat => out[start..end].iter_mut().for_each(|v| *v += ev.amplitude),
                    SpikeShape::Triangular => {
                        out[start] += ev.amplitude;
                        if start > 0 {
                            out[start - 1] += 0.5 * ev.amplitude;
                        }
                        if start + 1 < n {
                            out[start + 1] += 0.5 * ev.amplitude;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn add_common_spikes(out: &mut [f64], spikes: &[CommonSpike], dt: f64) -> Result<()> {
    for sp in spikes {
        let at = (sp.time / dt).round() as i64 + lag_samples(sp.lag, dt)?;
        if at < 0 || at as usize >= out.len() {
            return Err(Error::invalid(format!(
                "common spike at {} s (lag {} s) falls outside the trace",
                sp.time, sp.lag
            )));
        }
        out[at as usize] += sp.amplitude;
    }
    Ok(())
}

fn add_white<R: Rng>(out: &mut [f64], sigma: f64, rng: &mut R) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("white noise sigma must be >= 0, got {sigma}")));
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        out.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    Ok(())
}

fn render_wire(
    config: &SimConfig,
    events: &[EventSpec],
    noise: &NoiseSpec,
    n: usize,
    dt: f64,
    stream: &str,
) -> Result<Vec<f64>> {
    noise.trend.validate()?;
    let mut out = render_events(config, events, n, dt)?;
    add_common_spikes(&mut out, &noise.common_spikes, dt)?;
    for (i, v) in out.iter_mut().enumerate() {
        *v += config.baseline + noise.trend.value(i as f64 * dt);
    }
    add_white(&mut out, noise.white_sigma, &mut rng::stream(noise.seed, stream))?;
    Ok(out)
}

/// Render a single trace with the default [`SimConfig`].
pub fn synthesize_trace(events: &[EventSpec], noise: &NoiseSpec, duration: f64, dt: f64) -> Result<Trace> {
    synthesize_trace_with(&SimConfig::default(), events, noise, duration, dt)
}

pub fn synthesize_trace_with(
    config: &SimConfig,
    events: &[EventSpec],
    noise: &NoiseSpec,
    duration: f64,
    dt: f64,
) -> Result<Trace> {
    let n = sample_count(duration, dt)?;
    let samples = render_wire(config, events, noise, n, dt, "white")?;
    Trace::new(samples, dt, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSpec {
    pub modifier: String,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedSpike {
    pub time: f64,
    pub amplitude: f64,
}

/// Noise common to all wires of an array, delayed per wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedNoise {
    /// Std of a Gaussian stream shared by every wire.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub spikes: Vec<SharedSpike>,
    /// Per-wire delay in seconds; one entry per wire.
    pub lags: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayScenario {
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub sim: SimConfig,
    pub wires: Vec<WireSpec>,
    #[serde(default)]
    pub shared: Option<SharedNoise>,
}

impl ArrayScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("scenario: {e}")))
    }
}

/// Render one trace per wire. Wire `i` draws its white noise from the
/// sub-stream `wire{i}` of its own seed, so streams differ even when seeds
/// repeat across wires.
pub fn synthesize_array(scenario: &ArrayScenario) -> Result<Vec<Trace>> {
    let n = sample_count(scenario.duration, scenario.dt)?;
    let dt = scenario.dt;
    if scenario.wires.is_empty() {
        return Err(Error::invalid("scenario has no wires"));
    }
    let mut traces = scenario
        .wires
        .iter()
        .enumerate()
        .map(|(i, w)| render_wire(&scenario.sim, &w.events, &w.noise, n, dt, &format!("wire{i}")))
        .collect::<Result<Vec<_>>>()?;

    if let Some(shared) = &scenario.shared {
        if shared.lags.len() != traces.len() {
            return Err(Error::invalid(format!(
                "shared noise lists {} lags for {} wires",
                shared.lags.len(),
                traces.len()
            )));
        }
        let lags = shared
            .lags
            .iter()
            .map(|&l| lag_samples(l, dt))
            .collect::<Result<Vec<_>>>()?;
        let min_lag = lags.iter().copied().min().unwrap_or(0).min(0);
        let max_lag = lags.iter().copied().max().unwrap_or(0).max(0);
        // Common stream indexed so that wire sample i reads common[i - lag - min_lag].
        let span = n + (max_lag - min_lag) as usize;
        let mut common = vec![0.0; span];
        add_white(&mut common, shared.sigma, &mut rng::stream(shared.seed, "shared"))?;
        for (trace, &lag) in traces.iter_mut().zip(&lags) {
            let offset = (max_lag - lag) as usize;
            for (i, v) in trace.iter_mut().enumerate() {
                *v += common[i + offset];
            }
            for sp in &shared.spikes {
                let at = (sp.time / dt).round() as i64 + lag;
                if at < 0 || at as usize >= n {
                    return Err(Error::invalid(format!(
                        "shared spike at {} s falls outside a wire at lag {lag} samples",
                        sp.time
                    )));
                }
                trace[at as usize] += sp.amplitude;
            }
        }
    }

    traces.into_iter().map(|s| Trace::new(s, dt, 0.0)).collect()
}
