use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor applied to every emission cell during learning.
pub const EMISSION_FLOOR: f64 = 1e-6;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EmissionModel {
    Multinomial {
        probs: Vec<f64>,
    },
    /// Per-sample mixture: `P(o) = Σ_c w_c · p_c(o)`.
    Mixture {
        weights: Vec<f64>,
        components: Vec<Vec<f64>>,
    },
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !(0.0..=1.0).contains(p)) || (v.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(format!("{what} is not a probability vector")));
    }
    Ok(())
}

impl EmissionModel {
    pub fn symbols(&self) -> usize {
        match self {
            EmissionModel::Multinomial { probs } => probs.len(),
            EmissionModel::Mixture { components, .. } => components.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EmissionModel::Multinomial { probs } => {
                if probs.len() < 2 {
                    return Err(Error::invalid("emissions need at least 2 symbols"));
                }
                check_simplex(probs, "emission vector")
            }
            EmissionModel::Mixture { weights, components } => {
                if components.is_empty() || weights.len() != components.len() {
                    return Err(Error::invalid("mixture needs one weight per component"));
                }
                check_simplex(weights, "mixture weights")?;
                let k = components[0].len();
                if k < 2 || components.iter().any(|c| c.len() != k) {
                    return Err(Error::invalid("mixture components must share a symbol count >= 2"));
                }
                components
                    .iter()
                    .try_for_each(|c| check_simplex(c, "mixture component"))
            }
        }
    }

    pub fn prob(&self, symbol: usize) -> f64 {
        match self {
            EmissionModel::Multinomial { probs } => probs[symbol],
            EmissionModel::Mixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c[symbol]).sum()
            }
        }
    }
}

/// Maximise `Σ_o counts[o] · ln p[o]` over the simplex with every `p[o] ≥ floor`.
///
/// The constrained optimum is `p[o] = max(floor, counts[o] / λ)`; the loop
/// pins cells to the floor until the remaining mass, shared in proportion to
/// the counts, keeps every free cell above it.
pub fn floored_normalise(counts: &[f64], floor: f64) -> Vec<f64> {
    let k = counts.len();
    let mut pinned = vec![false; k];
    loop {
        let n_pinned = pinned.iter().filter(|p| **p).count();
        let mass = 1.0 - n_pinned as f64 * floor;
        let free_total: f64 = counts.iter().zip(&pinned).filter(|(_, p)| !**p).map(|(c, _)| c).sum();
        let n_free = k - n_pinned;
        let p: Vec<f64> = counts
            .iter()
            .zip(&pinned)
            .map(|(&c, &pin)| {
                if pin {
                    floor
                } else if free_total > 0.0 {
                    mass * c / free_total
                } else {
                    mass / n_free as f64
                }
            })
            .collect();
        let mut changed = false;
        for o in 0..k {
            if !pinned[o] && p[o] < floor {
                pinned[o] = true;
                changed = true;
            }
        }
        if !changed {
            return p;
        }
    }
}
