//! Two-macro-state hidden semi-Markov model with discrete Coxian durations.
//!
//! The Dock and NoDock macro states each hold for a Coxian phase-type
//! duration and emit discretised conductance symbols from a multinomial
//! (or a mixture of multinomials). Inference runs on the equivalent HMM
//! over `(macro state, phase)` pairs.

mod coxian;
mod discretize;
mod em;
mod emission;
mod inference;
mod model;

use serde::{Deserialize, Serialize};

pub use coxian::CoxianDuration;
pub use discretize::{discretize, BinScheme, Discretizer};
pub use em::{em_train, em_train_report, EmReport};
pub use emission::{floored_normalise, EmissionModel, EMISSION_FLOOR};
pub use inference::{
    dock_events, forward_likelihood, posteriors, viterbi_decode, viterbi_decode_with, DecodeOptions, Decoded,
    Posteriors,
};
pub use model::{ExpandedHmm, HsmmConfig, HsmmModel, MacroState, StateParams};

/// Per-sample training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Dock,
    NoDock,
    Unlabeled,
}

impl Label {
    pub fn macro_state(self) -> Option<MacroState> {
        match self {
            Label::Dock => Some(MacroState::Dock),
            Label::NoDock => Some(MacroState::NoDock),
            Label::Unlabeled => None,
        }
    }
}

impl From<MacroState> for Label {
    fn from(m: MacroState) -> Self {
        match m {
            MacroState::Dock => Label::Dock,
            MacroState::NoDock => Label::NoDock,
        }
    }
}

/// Duration law of a macro state from a given 0-based start phase.
pub fn duration_pmf(duration: &CoxianDuration, start: usize, t: usize) -> f64 {
    duration.pmf(start, t)
}

/// Trained model plus the binning it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: HsmmModel,
    pub discretizer: Option<Discretizer>,
}

impl ModelFile {
    pub fn to_toml(&self) -> crate::Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::InvalidInput(format!("model serialisation: {e}")))
    }

    pub fn from_toml(text: &str) -> crate::Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| crate::Error::InvalidInput(format!("model file: {e}")))?;
        file.model.validate()?;
        Ok(file)
    }
}

#[cfg(test)]
mod tests;
