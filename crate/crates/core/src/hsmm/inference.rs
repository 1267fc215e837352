//! Scaled forward-backward and Viterbi on the expanded chain.
//!
//! Labels clamp the macro state at their sample: the forward and backward
//! messages are zeroed on every phase of the other macro state, while the
//! phase stays latent.

use super::model::{ExpandedHmm, HsmmModel, MacroState};
use super::Label;
use crate::error::{Error, Result};
use crate::trace::{DetectionEvent, EventTag};

pub(crate) fn check_inputs(model: &HsmmModel, obs: &[usize], labels: Option<&[Label]>) -> Result<()> {
    model.validate()?;
    if obs.is_empty() {
        return Err(Error::invalid("observation sequence is empty"));
    }
    let k = model.symbols();
    if let Some(&bad) = obs.iter().find(|&&o| o >= k) {
        return Err(Error::invalid(format!("symbol {bad} is outside 0..{k}")));
    }
    if let Some(l) = labels {
        if l.len() != obs.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} observations",
                l.len(),
                obs.len()
            )));
        }
    }
    Ok(())
}

fn allowed(hmm: &ExpandedHmm, s: usize, label: Option<Label>) -> bool {
    match label.and_then(Label::macro_state) {
        Some(m) => hmm.macro_of[s] == m,
        None => true,
    }
}

/// Forward-backward quantities for one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `gamma[t][s]`: posterior of expanded state `s` at sample `t`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi[s][s']`: expected number of `s → s'` transitions over the sequence.
    pub xi: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

impl Posteriors {
    /// `[P(NoDock), P(Dock)]` at each sample.
    pub fn macro_marginals(&self, hmm: &ExpandedHmm) -> Vec<[f64; 2]> {
        self.gamma
            .iter()
            .map(|g| {
                let mut out = [0.0; 2];
                for (s, &p) in g.iter().enumerate() {
                    out[hmm.macro_of[s].index()] += p;
                }
                out
            })
            .collect()
    }
}

struct Forward {
    alpha: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

fn forward_pass(hmm: &ExpandedHmm, obs: &[usize], labels: Option<&[Label]>) -> Result<Forward> {
    let n = hmm.n_states();
    let t_len = obs.len();
    let label_at = |t: usize| labels.map(|l| l[t]);
    let mut alpha = Vec::with_capacity(t_len);
    let mut scale = Vec::with_capacity(t_len);
    let mut prev: Vec<f64> = Vec::new();
    for (t, &o) in obs.iter().enumerate() {
        let mut cur: Vec<f64> = (0..n)
            .map(|s| {
                if !allowed(hmm, s, label_at(t)) {
                    return 0.0;
                }
                let pred = if t == 0 {
                    hmm.initial[s]
                } else {
                    (0..n).map(|r| prev[r] * hmm.transition[r][s]).sum()
                };
                pred * hmm.emission[s][o]
            })
            .collect();
        let c: f64 = cur.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::numeric(if labels.is_some() {
                format!("labels inconsistent with model support (sample {t})")
            } else {
                format!("observations have zero probability under the model (sample {t})")
            }));
        }
        cur.iter_mut().for_each(|v| *v /= c);
        scale.push(c);
        alpha.push(cur.clone());
        prev = cur;
    }
    Ok(Forward { alpha, scale })
}

/// Total log-likelihood `ln P(obs, labels)`; without labels, `ln P(obs)`.
pub fn forward_likelihood(model: &HsmmModel, obs: &[usize], labels: Option<&[Label]>) -> Result<f64> {
    check_inputs(model, obs, labels)?;
    let fwd = forward_pass(&model.expand(), obs, labels)?;
    Ok(fwd.scale.iter().map(|c| c.ln()).sum())
}

pub fn posteriors(model: &HsmmModel, obs: &[usize], labels: Option<&[Label]>) -> Result<Posteriors> {
    check_inputs(model, obs, labels)?;
    let hmm = model.expand();
    posteriors_expanded(&hmm, obs, labels)
}

pub(crate) fn posteriors_expanded(hmm: &ExpandedHmm, obs: &[usize], labels: Option<&[Label]>) -> Result<Posteriors> {
    let n = hmm.n_states();
    let t_len = obs.len();
    let Forward { alpha, scale } = forward_pass(hmm, obs, labels)?;
    let label_at = |t: usize| labels.map(|l| l[t]);

    // Emission × clamp for sample t, shared by the backward step and xi.
    let weight = |t: usize, s: usize| {
        if allowed(hmm, s, label_at(t)) {
            hmm.emission[s][obs[t]]
        } else {
            0.0
        }
    };

    let mut beta = vec![vec![1.0; n]; t_len];
    for t in (0..t_len - 1).rev() {
        let next: Vec<f64> = (0..n).map(|s| weight(t + 1, s) * beta[t + 1][s]).collect();
        for s in 0..n {
            beta[t][s] = (0..n).map(|r| hmm.transition[s][r] * next[r]).sum::<f64>() / scale[t + 1];
        }
    }

    let gamma: Vec<Vec<f64>> = (0..t_len)
        .map(|t| (0..n).map(|s| alpha[t][s] * beta[t][s]).collect())
        .collect();

    let mut xi = vec![vec![0.0; n]; n];
    for t in 0..t_len.saturating_sub(1) {
        let next: Vec<f64> = (0..n)
            .map(|r| weight(t + 1, r) * beta[t + 1][r] / scale[t + 1])
            .collect();
        for s in 0..n {
            if alpha[t][s] == 0.0 {
                continue;
            }
            for r in 0..n {
                xi[s][r] += alpha[t][s] * hmm.transition[s][r] * next[r];
            }
        }
    }

    Ok(Posteriors {
        gamma,
        xi,
        log_likelihood: scale.iter().map(|c| c.ln()).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub dt: f64,
    pub t0: f64,
    /// Dock runs shorter than this many samples are tagged spike-like.
    pub min_len: usize,
    /// Dock runs longer than this many samples are tagged anomalous.
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            dt: 1.0,
            t0: 0.0,
            min_len: 3,
            max_len: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Most probable expanded-state path.
    pub path: Vec<usize>,
    pub labels: Vec<MacroState>,
    /// `ln` of the joint probability of the path and the observations.
    pub log_prob: f64,
    pub events: Vec<DetectionEvent>,
}

pub fn viterbi_decode(model: &HsmmModel, obs: &[usize]) -> Result<Decoded> {
    viterbi_decode_with(model, obs, &DecodeOptions::default())
}

pub fn viterbi_decode_with(model: &HsmmModel, obs: &[usize], options: &DecodeOptions) -> Result<Decoded> {
    check_inputs(model, obs, None)?;
    let hmm = model.expand();
    let n = hmm.n_states();
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let log_a: Vec<Vec<f64>> = hmm
        .transition
        .iter()
        .map(|r| r.iter().map(|&p| ln(p)).collect())
        .collect();
    let log_b: Vec<Vec<f64>> = hmm
        .emission
        .iter()
        .map(|r| r.iter().map(|&p| ln(p)).collect())
        .collect();

    let mut delta: Vec<f64> = (0..n).map(|s| ln(hmm.initial[s]) + log_b[s][obs[0]]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(obs.len());
    back.push(vec![0; n]);
    for &o in &obs[1..] {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0; n];
        for s in 0..n {
            // Strict comparison keeps the lowest-index predecessor on ties.
            for r in 0..n {
                let v = delta[r] + log_a[r][s];
                if v > next[s] {
                    next[s] = v;
                    arg[s] = r;
                }
            }
            next[s] += log_b[s][o];
        }
        back.push(arg);
        delta = next;
    }
    let (mut s, &log_prob) =
        delta.iter().enumerate().fold(
            (0, &f64::NEG_INFINITY),
            |best, (i, v)| if *v > *best.1 { (i, v) } else { best },
        );
    if log_prob == f64::NEG_INFINITY {
        return Err(Error::numeric("observations have zero probability under the model"));
    }
    let mut path = vec![0; obs.len()];
    for t in (0..obs.len()).rev() {
        path[t] = s;
        s = back[t][s];
    }
    let labels: Vec<MacroState> = path.iter().map(|&s| hmm.macro_of[s]).collect();
    let events = dock_events(&labels, obs, options);
    Ok(Decoded {
        path,
        labels,
        log_prob,
        events,
    })
}

/// Maximal Dock runs as events. Amplitude is the mean symbol over the run.
pub fn dock_events(labels: &[MacroState], obs: &[usize], options: &DecodeOptions) -> Vec<DetectionEvent> {
    let mut events = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] != MacroState::Dock {
            t += 1;
            continue;
        }
        let start = t;
        while t < labels.len() && labels[t] == MacroState::Dock {
            t += 1;
        }
        let len = t - start;
        let mean_symbol = obs[start..t].iter().sum::<usize>() as f64 / len as f64;
        let tag = if len < options.min_len {
            EventTag::SpikeLike
        } else if len > options.max_len {
            EventTag::Anomalous
        } else {
            EventTag::Normal
        };
        events.push(DetectionEvent {
            start: start as i64,
            len,
            onset: options.t0 + start as f64 * options.dt,
            duration: len as f64 * options.dt,
            amplitude: mean_symbol,
            score: len as f64,
            width: None,
            tag,
        });
    }
    events
}
