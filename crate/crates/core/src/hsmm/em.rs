//! Semi-supervised Baum-Welch on the expanded chain.
//!
//! Labeled samples clamp their macro state; unlabeled samples are fully
//! latent. Emissions are tied across the phases of a macro state. Each
//! M-step is an exact maximiser over the constrained parameter set
//! (emission cells floored at [`EMISSION_FLOOR`], last Coxian phase unable
//! to advance), so the clamped log-likelihood never decreases.

use super::emission::{floored_normalise, EmissionModel, EMISSION_FLOOR};
use super::inference::{check_inputs, posteriors_expanded};
use super::model::{HsmmModel, MacroState};
use super::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    pub model: HsmmModel,
    /// Clamped log-likelihood of the initial model and after each iteration.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

pub fn em_train(initial: &HsmmModel, obs: &[usize], labels: &[Label], max_iters: usize, tol: f64) -> Result<HsmmModel> {
    em_train_report(initial, obs, labels, max_iters, tol).map(|r| r.model)
}

pub fn em_train_report(
    initial: &HsmmModel,
    obs: &[usize],
    labels: &[Label],
    max_iters: usize,
    tol: f64,
) -> Result<EmReport> {
    check_inputs(initial, obs, Some(labels))?;
    let has = |want: Label| labels.contains(&want);
    if (has(Label::Dock) || has(Label::NoDock)) && !(has(Label::Dock) && has(Label::NoDock)) {
        return Err(Error::invalid(
            "labels must include both dock and nodock samples, or none at all",
        ));
    }
    let clamp = labels.iter().any(|l| *l != Label::Unlabeled).then_some(labels);

    let mut model = initial.clone();
    let mut history = Vec::new();
    if max_iters == 0 {
        return Ok(EmReport {
            model,
            log_likelihoods: history,
            converged: false,
        });
    }
    let mut converged = false;
    let mut post = posteriors_expanded(&model.expand(), obs, clamp)?;
    history.push(post.log_likelihood);
    for _ in 0..max_iters {
        model = m_step(&model, obs, &post);
        post = posteriors_expanded(&model.expand(), obs, clamp)?;
        let prev = *history.last().unwrap();
        history.push(post.log_likelihood);
        if (post.log_likelihood - prev).abs() < tol {
            converged = true;
            break;
        }
    }
    Ok(EmReport {
        model,
        log_likelihoods: history,
        converged,
    })
}

fn m_step(model: &HsmmModel, obs: &[usize], post: &super::inference::Posteriors) -> HsmmModel {
    let mut next = model.clone();
    let k = model.symbols();

    let mut init = [0.0; 2];
    for m in MacroState::ALL {
        let off = model.offset(m);
        let phases = model.state(m).duration.phases();
        init[m.index()] = post.gamma[0][off..off + phases].iter().sum();
    }
    let total: f64 = init.iter().sum();
    next.initial = [init[0] / total, init[1] / total];

    for m in MacroState::ALL {
        let off = model.offset(m);
        let st = model.state(m);
        let phases = st.duration.phases();
        let other_off = model.offset(m.other());
        let other_phases = model.state(m.other()).duration.phases();

        let dur = &mut next.state_mut(m).duration;
        for ph in 0..phases {
            let s = off + ph;
            let stay = post.xi[s][s];
            let advance = if ph + 1 < phases { post.xi[s][s + 1] } else { 0.0 };
            let exit: f64 = post.xi[s][other_off..other_off + other_phases].iter().sum();
            let total = stay + advance + exit;
            if total > 0.0 {
                dur.stay[ph] = stay / total;
                dur.advance[ph] = advance / total;
                dur.exit[ph] = exit / total;
            }
        }

        // Posterior mass of macro state m at each sample.
        let occupancy: Vec<f64> = post.gamma.iter().map(|g| g[off..off + phases].iter().sum()).collect();
        let new_emission = match &st.emission {
            EmissionModel::Multinomial { .. } => {
                let mut counts = vec![0.0; k];
                for (&o, &w) in obs.iter().zip(&occupancy) {
                    counts[o] += w;
                }
                EmissionModel::Multinomial {
                    probs: floored_normalise(&counts, EMISSION_FLOOR),
                }
            }
            EmissionModel::Mixture { weights, components } => {
                let c = weights.len();
                let mut counts = vec![vec![0.0; k]; c];
                for (&o, &w) in obs.iter().zip(&occupancy) {
                    if w == 0.0 {
                        continue;
                    }
                    let parts: Vec<f64> = (0..c).map(|j| weights[j] * components[j][o]).collect();
                    let total: f64 = parts.iter().sum();
                    if total > 0.0 {
                        for j in 0..c {
                            counts[j][o] += w * parts[j] / total;
                        }
                    }
                }
                let mass: Vec<f64> = counts.iter().map(|row| row.iter().sum()).collect();
                let all: f64 = mass.iter().sum();
                EmissionModel::Mixture {
                    weights: if all > 0.0 {
                        mass.iter().map(|m| m / all).collect()
                    } else {
                        weights.clone()
                    },
                    components: counts
                        .iter()
                        .map(|row| floored_normalise(row, EMISSION_FLOOR))
                        .collect(),
                }
            }
        };
        next.state_mut(m).emission = new_emission;
    }
    next
}
