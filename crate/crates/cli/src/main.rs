//! `nanowire` command-line front end.
//!
//! Every subcommand reads CSV/TOML inputs, writes fixed-name outputs into
//! `--out-dir`, and on failure prints one line to stderr:
//!
//! ```text
//! error kind=<bad_input|parse|io|numeric> code=<2|3> msg="..."
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nanowire::bayes::{self, EvidenceMode, PosteriorOptions};
use nanowire::conditioning::{self, DetrendMethod};
use nanowire::hsmm::{self, BinScheme, DecodeOptions, Discretizer, HsmmConfig, HsmmModel, Label, ModelFile};
use nanowire::io::{self, Provenance};
use nanowire::matched_filter::{self, BoxcarFilterSpec, PeakParams};
use nanowire::pipeline::{self, PipelineConfig};
use nanowire::sim::{self, ArrayScenario, EventKind};
use nanowire::threshold::{self, Polarity, ThresholdPolicy, ThresholdRule};
use nanowire::xcorr;
use nanowire::{Error, Result, Trace};

#[derive(Parser, Debug)]
#[command(
    name = "nanowire",
    version,
    about = "Binding-event detection for nanowire sensor traces"
)]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Scenario file for `simulate`, pipeline file for `pipeline`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render traces from a scenario file.
    Simulate,
    /// Remove the slow baseline.
    Detrend(DetrendArgs),
    /// Scale to zero mean and unit std.
    Whiten(InputArg),
    /// Brick-wall low-pass at `--cutoff` Hz.
    Lowpass {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, default_value_t = 0.05)]
        cutoff: f64,
    },
    /// Boxcar matched filter; a comma-separated width list runs a bank.
    Matchfilter {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, value_delimiter = ',', default_value = "20")]
        width: Vec<usize>,
        #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
        amp: f64,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 4.0)]
        threshold: f64,
        #[arg(long)]
        min_sep: Option<usize>,
    },
    /// Low-pass then threshold.
    Threshold(ThresholdArgs),
    /// Posterior over agents from array evidence.
    Bayes {
        /// Response table CSV; the built-in table when omitted.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Use the strength column as soft evidence.
        #[arg(long)]
        soft: bool,
    },
    /// Fit the docking model by EM, optionally with partial labels.
    HsmmTrain {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        phases: usize,
        #[arg(long, default_value_t = 8)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = Scheme::Quantile)]
        scheme: Scheme,
        #[arg(long, default_value_t = 1)]
        components: usize,
        #[arg(long, default_value_t = 20.0)]
        mean_duration: f64,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Most likely dock/no-dock path under a trained model.
    HsmmDecode {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
        #[arg(long, default_value_t = 600)]
        max_len: usize,
    },
    /// Pairwise cross-correlation of the wires in a multi-wire CSV.
    Xcorr {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        /// Correlate noise-only residuals instead of the raw traces.
        #[arg(long)]
        noise_only: bool,
        #[command(flatten)]
        residual: ResidualArgs,
    },
    /// Subtract lag-aligned reference noise from a target wire.
    Denoise {
        #[command(flatten)]
        input: InputArg,
        /// Target wire column; the first wire when omitted.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        refs: Vec<String>,
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
        #[command(flatten)]
        residual: ResidualArgs,
    },
    /// Run the stages listed in the `--config` file.
    Pipeline,
}

#[derive(Args, Debug)]
struct InputArg {
    #[arg(long)]
    input: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Method {
    Poly,
    MovingAverage,
    Median,
    Histogram,
}

#[derive(Args, Debug)]
struct DetrendArgs {
    #[command(flatten)]
    input: InputArg,
    #[arg(long, value_enum, default_value_t = Method::Histogram)]
    method: Method,
    /// Window in seconds.
    #[arg(long, default_value_t = 200.0)]
    window: f64,
    #[arg(long, default_value_t = 2.0)]
    bin_width: f64,
    #[arg(long, default_value_t = 2)]
    degree: usize,
}

impl DetrendArgs {
    fn method(&self) -> DetrendMethod {
        detrend_method(self.method, self.window, self.bin_width, self.degree)
    }
}

fn detrend_method(method: Method, window_s: f64, bin_width: f64, degree: usize) -> DetrendMethod {
    match method {
        Method::Poly => DetrendMethod::GlobalPolyFit { degree },
        Method::MovingAverage => DetrendMethod::MovingAverage { window_s },
        Method::Median => DetrendMethod::MovingMedian { window_s },
        Method::Histogram => DetrendMethod::HistogramMode { window_s, bin_width },
    }
}

#[derive(Args, Debug)]
struct ResidualArgs {
    #[arg(long, value_enum, default_value_t = Method::Median)]
    detrend: Method,
    #[arg(long, default_value_t = 200.0)]
    window: f64,
    #[arg(long, default_value_t = 0.05)]
    cutoff: f64,
}

impl ResidualArgs {
    fn method(&self) -> DetrendMethod {
        detrend_method(self.detrend, self.window, 2.0, 2)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Policy {
    Fixed,
    Calibrated,
    Adaptive,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Scheme {
    EqualWidth,
    Quantile,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Sign {
    Negative,
    Positive,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[command(flatten)]
    input: InputArg,
    #[arg(long, value_enum, default_value_t = Policy::Calibrated)]
    policy: Policy,
    #[arg(long, default_value_t = 5.0)]
    k: f64,
    /// Event-free calibration range in seconds, `start:end`.
    #[arg(long, default_value = "0:300")]
    cal: String,
    /// Level for the fixed policy, nS.
    #[arg(long, allow_hyphen_values = true)]
    level: Option<f64>,
    /// Adaptive window in seconds.
    #[arg(long, default_value_t = 200.0)]
    window: f64,
    #[arg(long, default_value_t = 0.05)]
    cutoff: f64,
    #[arg(long, value_enum, default_value_t = Sign::Negative)]
    polarity: Sign,
    /// Seconds.
    #[arg(long, default_value_t = 5.0)]
    min_duration: f64,
}

fn parse_range(text: &str, trace: &Trace) -> Result<(usize, usize)> {
    let bad = || Error::InvalidInput(format!("calibration range must be start:end in seconds, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a >= 0.0 && b > a) {
        return Err(bad());
    }
    let to_index = |s: f64| ((s - trace.t0()) / trace.dt()).round().max(0.0) as usize;
    Ok((to_index(a), to_index(b)))
}

struct Ctx {
    out_dir: PathBuf,
    seed: u64,
    prov: Provenance,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    if let Command::Pipeline = cli.command {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("pipeline needs --config".into()))?;
        let mut config = PipelineConfig::from_file(path)?;
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        if cli.out_dir != Path::new(".") {
            config.out_dir = cli.out_dir.clone();
        }
        let report = pipeline::run_pipeline(&config)?;
        for p in &report.outputs {
            log::info!("wrote {}", p.display());
        }
        return Ok(());
    }
    if cli.config.is_some() && !matches!(cli.command, Command::Simulate) {
        return Err(Error::InvalidInput(
            "--config is only used by simulate and pipeline".into(),
        ));
    }

    fs::create_dir_all(&cli.out_dir).map_err(|e| Error::Io {
        path: cli.out_dir.clone(),
        source: e,
    })?;
    // Outputs of single commands are keyed on the invocation minus where it writes.
    let invocation = invocation_without_out_dir(std::env::args().skip(1));
    let ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        seed,
        prov: Provenance::from_text(&invocation.join("\u{0}"), seed),
    };
    let prov = Some(&ctx.prov);

    match cli.command {
        Command::Simulate => {
            let path = cli
                .config
                .ok_or_else(|| Error::InvalidInput("simulate needs --config <scenario.toml>".into()))?;
            let text = fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let mut scenario = ArrayScenario::from_toml(&text)?;
            if let Some(s) = cli.seed {
                for (i, w) in scenario.wires.iter_mut().enumerate() {
                    w.noise.seed = nanowire::rng::sub_seed(s, &format!("wire{i}"));
                }
                if let Some(shared) = scenario.shared.as_mut() {
                    shared.seed = nanowire::rng::sub_seed(s, "shared");
                }
            }
            let traces = sim::synthesize_array(&scenario)?;
            if traces.len() == 1 {
                io::write_trace(&ctx.path("trace.csv"), &traces[0], prov)?;
            } else {
                let names: Vec<String> = (1..=traces.len()).map(|i| format!("w{i}")).collect();
                io::write_multi(&ctx.path("trace.csv"), &names, &traces, prov)?;
            }
            let rows: Vec<Vec<String>> = scenario
                .wires
                .iter()
                .enumerate()
                .flat_map(|(i, w)| {
                    w.events.iter().map(move |e| {
                        vec![
                            format!("w{}", i + 1),
                            w.modifier.clone(),
                            match e.kind {
                                EventKind::SpecificBinding => "specific-binding".to_owned(),
                                EventKind::TransientSpike => "transient-spike".to_owned(),
                            },
                            e.onset.to_string(),
                            e.duration.to_string(),
                            e.amplitude.to_string(),
                        ]
                    })
                })
                .collect();
            io::write_rows(
                &ctx.path("truth.csv"),
                &["wire", "modifier", "kind", "onset", "duration", "amplitude"],
                &rows,
                prov,
            )?;
        }
        Command::Detrend(args) => {
            let trace = io::read_trace(&args.input.input)?;
            let (d, trend) = conditioning::detrend(&trace, &args.method())?;
            io::write_trace(&ctx.path("detrended.csv"), &d, prov)?;
            io::write_trace(&ctx.path("trend.csv"), &d.with_samples(trend.into_values())?, prov)?;
        }
        Command::Whiten(input) => {
            let trace = io::read_trace(&input.input)?;
            io::write_trace(&ctx.path("whitened.csv"), &conditioning::whiten(&trace)?, prov)?;
        }
        Command::Lowpass { input, cutoff } => {
            let trace = io::read_trace(&input.input)?;
            io::write_trace(
                &ctx.path("lowpassed.csv"),
                &conditioning::low_pass(&trace, cutoff)?,
                prov,
            )?;
        }
        Command::Matchfilter {
            input,
            width,
            amp,
            n,
            threshold,
            min_sep,
        } => {
            let trace = io::read_trace(&input.input)?;
            let params = PeakParams {
                threshold_sigma: threshold,
                min_separation: min_sep,
            };
            let mut events = Vec::new();
            let mut columns = Vec::new();
            for &w in &width {
                let spec = BoxcarFilterSpec {
                    amplitude: amp,
                    width: w,
                    n,
                };
                let res = matched_filter::filter_trace(&trace, &spec, &params)?;
                events.extend(res.events);
                columns.push((format!("score_w{w}"), res.scores));
            }
            events.sort_by_key(|e| (e.start, e.width));
            io::write_detections(&ctx.path("detections.csv"), &events, prov)?;
            let index: Vec<f64> = (0..trace.len()).map(|i| i as f64).collect();
            let series: Vec<(&str, &[f64])> = if columns.len() == 1 {
                vec![("score", &columns[0].1)]
            } else {
                columns.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect()
            };
            io::emit_plot_data(&ctx.path("scores.csv"), "index", &index, &series, prov)?;
        }
        Command::Threshold(args) => {
            let trace = io::read_trace(&args.input.input)?;
            let rule = match args.policy {
                Policy::Fixed => ThresholdRule::Fixed {
                    level: args
                        .level
                        .ok_or_else(|| Error::InvalidInput("fixed policy needs --level".into()))?,
                },
                Policy::Calibrated => {
                    let (start, end) = parse_range(&args.cal, &trace)?;
                    ThresholdRule::Calibrated {
                        k_sigma: args.k,
                        start,
                        end,
                    }
                }
                Policy::Adaptive => ThresholdRule::Adaptive {
                    k_sigma: args.k,
                    window_s: args.window,
                },
            };
            let polarity = match args.polarity {
                Sign::Negative => Polarity::Negative,
                Sign::Positive => Polarity::Positive,
            };
            let policy = ThresholdPolicy {
                min_duration: args.min_duration,
                ..ThresholdPolicy::new(rule, polarity)
            };
            let events = threshold::threshold_detect(&trace, &policy, args.cutoff)?;
            io::write_detections(&ctx.path("detections.csv"), &events, prov)?;
        }
        Command::Bayes {
            table,
            evidence,
            prior,
            soft,
        } => {
            let table = match table {
                Some(p) => io::read_table(&p)?,
                None => bayes::default_table(),
            };
            let ev = io::read_evidence(&evidence, &table)?;
            let prior = match prior {
                Some(p) => io::read_prior(&p, &table)?,
                None => bayes::uniform_prior(&table),
            };
            let options = PosteriorOptions {
                mode: if soft { EvidenceMode::Soft } else { EvidenceMode::Hard },
                ..PosteriorOptions::default()
            };
            let post = bayes::posterior_with(&table, &ev, &prior, &options)?;
            io::write_posterior(&ctx.path("posterior.csv"), &post, prov)?;
            let index: Vec<f64> = (0..post.probs.len()).map(|i| i as f64).collect();
            io::emit_plot_data(
                &ctx.path("posterior_bars.csv"),
                "agent_index",
                &index,
                &[("posterior", &post.probs)],
                prov,
            )?;
        }
        Command::HsmmTrain {
            input,
            labels,
            phases,
            bins,
            scheme,
            components,
            mean_duration,
            max_iters,
            tol,
        } => {
            let trace = io::read_trace(&input.input)?;
            let scheme = match scheme {
                Scheme::EqualWidth => BinScheme::EqualWidth,
                Scheme::Quantile => BinScheme::Quantile,
            };
            let disc = Discretizer::fit(trace.samples(), bins, scheme)?;
            let obs = disc.apply(trace.samples());
            let labels = match labels {
                Some(p) => io::read_labels(&p, obs.len())?,
                None => vec![Label::Unlabeled; obs.len()],
            };
            let config = HsmmConfig {
                phases,
                bins: disc.bins(),
                mean_duration,
                dock_components: components,
                seed: nanowire::rng::sub_seed(ctx.seed, "hsmm-train"),
            };
            let init = HsmmModel::initialize(&config, &obs, &labels)?;
            let report = hsmm::em_train_report(&init, &obs, &labels, max_iters, tol)?;
            log::info!(
                "em: {} iterations, final log-likelihood {:?}",
                report.log_likelihoods.len().saturating_sub(1),
                report.log_likelihoods.last()
            );
            let file = ModelFile {
                model: report.model,
                discretizer: Some(disc),
            };
            let path = ctx.path("model.toml");
            fs::write(&path, format!("{}{}", ctx.prov.comment(), file.to_toml()?))
                .map_err(|e| Error::Io { path, source: e })?;
        }
        Command::HsmmDecode {
            input,
            model,
            min_len,
            max_len,
        } => {
            let trace = io::read_trace(&input.input)?;
            let text = fs::read_to_string(&model).map_err(|e| Error::Io {
                path: model.clone(),
                source: e,
            })?;
            let file = ModelFile::from_toml(&text)?;
            let disc = file
                .discretizer
                .ok_or_else(|| Error::InvalidInput("model file has no bin boundaries".into()))?;
            let obs = disc.apply(trace.samples());
            let opts = DecodeOptions {
                dt: trace.dt(),
                t0: trace.t0(),
                min_len,
                max_len,
            };
            let decoded = hsmm::viterbi_decode_with(&file.model, &obs, &opts)?;
            let labels: Vec<Label> = decoded.labels.iter().map(|&m| m.into()).collect();
            io::write_labels(&ctx.path("decoded_labels.csv"), &labels, prov)?;
            io::write_tagged_events(&ctx.path("events.csv"), &decoded.events, prov)?;
        }
        Command::Xcorr {
            input,
            max_lag,
            noise_only,
            residual,
        } => {
            let (names, mut traces) = io::read_multi(&input.input)?;
            if traces.len() < 2 {
                return Err(Error::InvalidInput("xcorr needs at least two wires".into()));
            }
            if noise_only {
                traces = traces
                    .iter()
                    .map(|t| xcorr::noise_only(t, &residual.method(), residual.cutoff))
                    .collect::<Result<Vec<_>>>()?;
            }
            let mut summary = Vec::new();
            for (i, j, r) in xcorr::pairwise(&traces, max_lag)? {
                let lags: Vec<f64> = r.lags.iter().map(|&l| l as f64).collect();
                let name = format!("xcorr_{}_{}.csv", names[i], names[j]);
                io::emit_plot_data(&ctx.path(&name), "lag", &lags, &[("value", &r.values)], prov)?;
                summary.push(vec![
                    names[i].clone(),
                    names[j].clone(),
                    r.peak.0.to_string(),
                    r.peak.1.to_string(),
                ]);
            }
            io::write_rows(
                &ctx.path("xcorr_summary.csv"),
                &["wire_i", "wire_j", "peak_lag", "peak_value"],
                &summary,
                prov,
            )?;
        }
        Command::Denoise {
            input,
            target,
            refs,
            max_lag,
            residual,
        } => {
            let (names, traces) = io::read_multi(&input.input)?;
            let find = |name: &str| {
                names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::InvalidInput(format!("no wire named {name}")))
            };
            let t = match &target {
                Some(name) => find(name)?,
                None => 0,
            };
            let references = refs
                .iter()
                .map(|r| find(r).map(|i| traces[i].clone()))
                .collect::<Result<Vec<_>>>()?;
            let (clean, lags) =
                xcorr::denoise_with_references(&traces[t], &references, &residual.method(), residual.cutoff, max_lag)?;
            log::info!("reference lags {lags:?}");
            io::write_trace(&ctx.path("denoised.csv"), &clean, prov)?;
        }
        Command::Pipeline => unreachable!("handled above"),
    }
    Ok(())
}

fn invocation_without_out_dir(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut kept = Vec::new();
    let mut skip_next = false;
    for a in args {
        if skip_next {
            skip_next = false;
        } else if a == "--out-dir" {
            skip_next = true;
        } else if !a.starts_with("--out-dir=") {
            kept.push(a);
        }
    }
    kept
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e
                .to_string()
                .replace('\\', "\\\\")
                .replace('"', "\\\"")
                .replace('\n', " ");
            eprintln!("error kind={} code={} msg=\"{}\"", e.kind(), e.exit_code(), msg);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
