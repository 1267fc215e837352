//! Batch pipeline: an ordered list of stages read from a TOML file.
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//!
//! [[stages]]
//! op = "simulate"
//! duration = 1000.0
//! dt = 1.0
//! events = [{ kind = "specific-binding", onset = 100.0, duration = 20.0, amplitude = -20.0 }]
//! noise = { white_sigma = 2.0 }
//!
//! [[stages]]
//! op = "detrend"
//! method = "moving-median"
//! window_s = 200.0
//! ```
//!
//! Each stage transforms the current trace or adds to the pipeline state and
//! writes its own files into `out_dir`. Every file starts with a provenance
//! comment holding the SHA-256 of the canonical config and the seed, and all
//! randomness is derived from the seed, so a rerun reproduces every byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::{detrend, low_pass, whiten, DetrendMethod};
use crate::error::{Error, Result};
use crate::hsmm::{
    em_train, viterbi_decode_with, BinScheme, DecodeOptions, Discretizer, HsmmConfig, HsmmModel, Label, MacroState,
    ModelFile,
};
use crate::io::{self, Provenance};
use crate::matched_filter::{filter_trace, BoxcarFilterSpec, PeakParams};
use crate::rng;
use crate::sim::{synthesize_trace_with, EventKind, EventSpec, NoiseSpec, SimConfig};
use crate::trace::{DetectionEvent, EventTag, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Stage {
    /// Render a trace. The noise seed is replaced by a sub-stream of the
    /// pipeline seed.
    Simulate {
        duration: f64,
        dt: f64,
        #[serde(default)]
        events: Vec<EventSpec>,
        #[serde(default)]
        noise: NoiseSpec,
        #[serde(default)]
        sim: SimConfig,
    },
    Detrend {
        #[serde(flatten)]
        method: DetrendMethod,
    },
    Whiten,
    Lowpass {
        cutoff_hz: f64,
    },
    Matchfilter {
        #[serde(default)]
        filter: BoxcarFilterSpec,
        #[serde(default)]
        peaks: PeakParams,
    },
    /// Training labels from the matched-filter detections: Dock over each
    /// detected boxcar, NoDock where the score is negative and at least
    /// `guard` samples from any detection, unlabeled elsewhere.
    ThresholdLabels {
        #[serde(default = "default_guard")]
        guard: usize,
    },
    HsmmTrain {
        #[serde(default)]
        config: HsmmConfig,
        #[serde(default)]
        scheme: BinScheme,
        #[serde(default = "default_iters")]
        max_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    HsmmDecode {
        /// Model file to use instead of the one trained earlier in the run.
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default = "default_min_len")]
        min_len: usize,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
}

fn default_guard() -> usize {
    5
}

fn default_iters() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-6
}

fn default_min_len() -> usize {
    DecodeOptions::default().min_len
}

fn default_max_len() -> usize {
    DecodeOptions::default().max_len
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate { .. } => "simulate",
            Stage::Detrend { .. } => "detrend",
            Stage::Whiten => "whiten",
            Stage::Lowpass { .. } => "lowpass",
            Stage::Matchfilter { .. } => "matchfilter",
            Stage::ThresholdLabels { .. } => "threshold-labels",
            Stage::HsmmTrain { .. } => "hsmm-train",
            Stage::HsmmDecode { .. } => "hsmm-decode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Trace CSV; not needed when the first stage simulates.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub stages: Vec<Stage>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("pipeline config: {}", e.message())))
    }

    /// Read a config file; relative `input`, `out_dir` and model paths are
    /// taken relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.input.as_mut() {
            rebase(p);
        }
        rebase(&mut config.out_dir);
        for stage in &mut config.stages {
            if let Stage::HsmmDecode { model: Some(p), .. } = stage {
                rebase(p);
            }
        }
        Ok(config)
    }

    /// Hex SHA-256 of the canonical TOML form, so formatting differences in
    /// the source file do not change it. The input path is part of the hash,
    /// the output directory is not.
    pub fn hash(&self) -> Result<String> {
        let keyed = PipelineConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let canonical = toml::to_string(&keyed).map_err(|e| Error::invalid(format!("pipeline config: {e}")))?;
        Ok(Provenance::from_text(&canonical, self.seed).config_hash)
    }
}

/// Files written by a run and the final detections, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub outputs: Vec<PathBuf>,
    pub events: Option<Vec<DetectionEvent>>,
}

#[derive(Default)]
struct State {
    trace: Option<Trace>,
    detrended: Option<Trace>,
    scores: Option<Vec<f64>>,
    detections: Option<Vec<DetectionEvent>>,
    labels: Option<Vec<Label>>,
    model: Option<ModelFile>,
}

impl State {
    fn trace(&self, stage: &str) -> Result<&Trace> {
        self.trace
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("stage {stage} needs a trace: set input or simulate first")))
    }
}

/// Dock over `spans`, NoDock where `scores` is negative and more than
/// `guard` samples from every span, unlabeled elsewhere.
pub fn labels_from_spans(scores: &[f64], spans: &[(i64, i64)], guard: usize) -> Vec<Label> {
    let n = scores.len() as i64;
    let mut near = vec![false; scores.len()];
    let mut labels: Vec<Label> = scores
        .iter()
        .map(|&s| if s < 0.0 { Label::NoDock } else { Label::Unlabeled })
        .collect();
    for &(a, b) in spans {
        let g = guard as i64;
        for i in (a - g).max(0)..(b + g).min(n) {
            near[i as usize] = true;
        }
    }
    for (l, &nr) in labels.iter_mut().zip(&near) {
        if nr {
            *l = Label::Unlabeled;
        }
    }
    for &(a, b) in spans {
        for i in a.max(0)..b.min(n) {
            labels[i as usize] = Label::Dock;
        }
    }
    labels
}

fn label_code(l: Label) -> f64 {
    match l {
        Label::Dock => 1.0,
        Label::NoDock => 0.0,
        Label::Unlabeled => -1.0,
    }
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let prov = Provenance {
        config_hash: config.hash()?,
        seed: config.seed,
    };
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::new();
    let out = |name: &str| out_dir.join(name);

    let mut state = State::default();
    if let Some(input) = &config.input {
        if config.stages.is_empty() {
            let dest = out("output.csv");
            fs::copy(input, &dest).map_err(|e| Error::io(input, e))?;
            return Ok(PipelineReport {
                outputs: vec![dest],
                events: None,
            });
        }
        state.trace = Some(io::read_trace(input)?);
    } else if config.stages.is_empty() {
        return Err(Error::invalid("pipeline has neither an input nor any stages"));
    }

    let mut events = None;
    for (k, stage) in config.stages.iter().enumerate() {
        log::info!("stage {}: {}", k + 1, stage.name());
        match stage {
            Stage::Simulate {
                duration,
                dt,
                events: truth,
                noise,
                sim,
            } => {
                let noise = NoiseSpec {
                    seed: rng::sub_seed(config.seed, &format!("simulate{k}")),
                    ..noise.clone()
                };
                let trace = synthesize_trace_with(sim, truth, &noise, *duration, *dt)?;
                let truth_events: Vec<DetectionEvent> = truth
                    .iter()
                    .filter(|e| e.kind == EventKind::SpecificBinding)
                    .map(|e| {
                        let (s, end) = e.sample_span(*dt);
                        DetectionEvent {
                            start: s as i64,
                            len: end - s,
                            onset: e.onset,
                            duration: e.duration,
                            amplitude: e.amplitude,
                            score: e.amplitude.abs(),
                            width: None,
                            tag: EventTag::Normal,
                        }
                    })
                    .collect();
                io::write_trace(&out("simulated.csv"), &trace, Some(&prov))?;
                io::write_detections(&out("truth.csv"), &truth_events, Some(&prov))?;
                outputs.extend([out("simulated.csv"), out("truth.csv")]);
                state.trace = Some(trace);
            }
            Stage::Detrend { method } => {
                let (d, trend) = detrend(state.trace(stage.name())?, method)?;
                io::write_trace(&out("detrended.csv"), &d, Some(&prov))?;
                let t = d.with_samples(trend.into_values())?;
                io::write_trace(&out("trend.csv"), &t, Some(&prov))?;
                outputs.extend([out("detrended.csv"), out("trend.csv")]);
                state.detrended = Some(d.clone());
                state.trace = Some(d);
            }
            Stage::Whiten => {
                let w = whiten(state.trace(stage.name())?)?;
                io::write_trace(&out("whitened.csv"), &w, Some(&prov))?;
                outputs.push(out("whitened.csv"));
                state.trace = Some(w);
            }
            Stage::Lowpass { cutoff_hz } => {
                let y = low_pass(state.trace(stage.name())?, *cutoff_hz)?;
                io::write_trace(&out("lowpassed.csv"), &y, Some(&prov))?;
                outputs.push(out("lowpassed.csv"));
                state.trace = Some(y);
            }
            Stage::Matchfilter { filter, peaks } => {
                let trace = state.trace(stage.name())?;
                let res = filter_trace(trace, filter, peaks)?;
                let idx: Vec<f64> = (0..res.scores.len()).map(|i| i as f64).collect();
                io::write_detections(&out("detections.csv"), &res.events, Some(&prov))?;
                io::emit_plot_data(
                    &out("scores.csv"),
                    "index",
                    &idx,
                    &[("score", &res.scores)],
                    Some(&prov),
                )?;
                outputs.extend([out("detections.csv"), out("scores.csv")]);
                state.scores = Some(res.scores);
                events = Some(res.events.clone());
                state.detections = Some(res.events);
            }
            Stage::ThresholdLabels { guard } => {
                let (Some(scores), Some(det)) = (&state.scores, &state.detections) else {
                    return Err(Error::invalid("threshold-labels needs a matchfilter stage before it"));
                };
                let spans: Vec<(i64, i64)> = det.iter().map(|e| (e.start, e.end())).collect();
                let labels = labels_from_spans(scores, &spans, *guard);
                io::write_labels(&out("train_labels.csv"), &labels, Some(&prov))?;
                outputs.push(out("train_labels.csv"));
                state.labels = Some(labels);
            }
            Stage::HsmmTrain {
                config: hcfg,
                scheme,
                max_iters,
                tol,
            } => {
                let trace = state.trace(stage.name())?;
                let disc = Discretizer::fit(trace.samples(), hcfg.bins, *scheme)?;
                let obs = disc.apply(trace.samples());
                let labels = state
                    .labels
                    .clone()
                    .unwrap_or_else(|| vec![Label::Unlabeled; obs.len()]);
                let hcfg = HsmmConfig {
                    bins: disc.bins(),
                    seed: rng::sub_seed(config.seed, &format!("hsmm-train{k}")),
                    ..hcfg.clone()
                };
                let init = HsmmModel::initialize(&hcfg, &obs, &labels)?;
                let model = em_train(&init, &obs, &labels, *max_iters, *tol)?;
                let file = ModelFile {
                    model,
                    discretizer: Some(disc),
                };
                let text = format!("{}{}", prov.comment(), file.to_toml()?);
                fs::write(out("model.toml"), text).map_err(|e| Error::io(out("model.toml"), e))?;
                outputs.push(out("model.toml"));
                state.model = Some(file);
            }
            Stage::HsmmDecode {
                model,
                min_len,
                max_len,
            } => {
                let file = match model {
                    Some(path) => {
                        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                        ModelFile::from_toml(&text)?
                    }
                    None => state
                        .model
                        .clone()
                        .ok_or_else(|| Error::invalid("hsmm-decode needs a model: train first or give a model file"))?,
                };
                let disc = file
                    .discretizer
                    .as_ref()
                    .ok_or_else(|| Error::invalid("model file has no bin boundaries"))?;
                let trace = state.trace(stage.name())?;
                let obs = disc.apply(trace.samples());
                let opts = DecodeOptions {
                    dt: trace.dt(),
                    t0: trace.t0(),
                    min_len: *min_len,
                    max_len: *max_len,
                };
                let decoded = viterbi_decode_with(&file.model, &obs, &opts)?;
                let labels: Vec<Label> = decoded.labels.iter().map(|&m| m.into()).collect();
                io::write_labels(&out("decoded_labels.csv"), &labels, Some(&prov))?;
                io::write_tagged_events(&out("events.csv"), &decoded.events, Some(&prov))?;
                outputs.extend([out("decoded_labels.csv"), out("events.csv")]);

                let time: Vec<f64> = (0..trace.len()).map(|i| trace.time(i)).collect();
                let symbols: Vec<f64> = obs.iter().map(|&o| o as f64).collect();
                let predicted: Vec<f64> = decoded
                    .labels
                    .iter()
                    .map(|&m| if m == MacroState::Dock { 1.0 } else { 0.0 })
                    .collect();
                let mut series: Vec<(&str, &[f64])> = vec![("discretized", &symbols), ("predicted", &predicted)];
                if let Some(d) = &state.detrended {
                    series.push(("detrended", d.samples()));
                }
                let training: Option<Vec<f64>> = state
                    .labels
                    .as_ref()
                    .map(|l| l.iter().map(|&x| label_code(x)).collect());
                if let Some(t) = &training {
                    series.push(("training_labels", t));
                }
                if let Some(s) = &state.scores {
                    series.push(("filter_score", s));
                }
                io::emit_plot_data(&out("hsmm_bundle.csv"), "time", &time, &series, Some(&prov))?;
                outputs.push(out("hsmm_bundle.csv"));
                events = Some(decoded.events);
            }
        }
    }
    if let Some(trace) = &state.trace {
        io::write_trace(&out("output.csv"), trace, Some(&prov))?;
        outputs.push(out("output.csv"));
    }
    Ok(PipelineReport { outputs, events })
}

/// Stages of the usual docking analysis on a simulated trace: median
/// detrend, whiten, matched filter, labels from the filter, HSMM train and
/// decode.
pub fn canonical_stages(duration: f64, events: Vec<EventSpec>, noise_sigma: f64) -> Vec<Stage> {
    vec![
        Stage::Simulate {
            duration,
            dt: 1.0,
            events,
            noise: NoiseSpec {
                white_sigma: noise_sigma,
                ..NoiseSpec::silent()
            },
            sim: SimConfig::default(),
        },
        Stage::Detrend {
            method: DetrendMethod::MovingMedian { window_s: 200.0 },
        },
        Stage::Whiten,
        Stage::Matchfilter {
            filter: BoxcarFilterSpec::default(),
            peaks: PeakParams::default(),
        },
        Stage::ThresholdLabels { guard: default_guard() },
        Stage::HsmmTrain {
            config: HsmmConfig::default(),
            scheme: BinScheme::Quantile,
            max_iters: default_iters(),
            tol: default_tol(),
        },
        Stage::HsmmDecode {
            model: None,
            min_len: default_min_len(),
            max_len: default_max_len(),
        },
    ]
}
