use rand::Rng;
use serde::{Deserialize, Serialize};

use super::coxian::CoxianDuration;
use super::emission::{floored_normalise, EmissionModel, EMISSION_FLOOR};
use super::Label;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroState {
    NoDock,
    Dock,
}

impl MacroState {
    pub const ALL: [MacroState; 2] = [MacroState::NoDock, MacroState::Dock];

    pub fn index(self) -> usize {
        match self {
            MacroState::NoDock => 0,
            MacroState::Dock => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            MacroState::NoDock
        } else {
            MacroState::Dock
        }
    }

    pub fn other(self) -> Self {
        match self {
            MacroState::NoDock => MacroState::Dock,
            MacroState::Dock => MacroState::NoDock,
        }
    }
}

/// Per-macro-state parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub duration: CoxianDuration,
    /// Phase distribution on entry (and at the start of the sequence).
    pub entry: Vec<f64>,
    pub emission: EmissionModel,
}

/// Two-macro-state HSMM. On leaving a macro state the chain always enters
/// the other one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsmmModel {
    /// `[P(NoDock), P(Dock)]` at the first sample.
    pub initial: [f64; 2],
    pub no_dock: StateParams,
    pub dock: StateParams,
}

/// Model as a plain HMM over `(macro state, phase)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedHmm {
    pub initial: Vec<f64>,
    /// Row-major `n × n` transition matrix.
    pub transition: Vec<Vec<f64>>,
    /// Macro state of each expanded state.
    pub macro_of: Vec<MacroState>,
    /// `emission[s][o]`, tied across the phases of a macro state.
    pub emission: Vec<Vec<f64>>,
}

impl ExpandedHmm {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsmmConfig {
    pub phases: usize,
    pub bins: usize,
    /// Initial mean duration (samples) for both macro states.
    pub mean_duration: f64,
    /// Mixture components for the Dock emissions; 1 means a single multinomial.
    pub dock_components: usize,
    pub seed: u64,
}

impl Default for HsmmConfig {
    fn default() -> Self {
        HsmmConfig {
            phases: 2,
            bins: 8,
            mean_duration: 20.0,
            dock_components: 1,
            seed: 0,
        }
    }
}

fn point_mass(m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[0] = 1.0;
    v
}

impl HsmmModel {
    pub fn state(&self, m: MacroState) -> &StateParams {
        match m {
            MacroState::NoDock => &self.no_dock,
            MacroState::Dock => &self.dock,
        }
    }

    pub fn state_mut(&mut self, m: MacroState) -> &mut StateParams {
        match m {
            MacroState::NoDock => &mut self.no_dock,
            MacroState::Dock => &mut self.dock,
        }
    }

    pub fn symbols(&self) -> usize {
        self.no_dock.emission.symbols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("initial macro-state distribution must sum to 1"));
        }
        for m in MacroState::ALL {
            let s = self.state(m);
            s.duration.validate()?;
            s.emission.validate()?;
            if s.entry.len() != s.duration.phases()
                || s.entry.iter().any(|p| !(0.0..=1.0).contains(p))
                || (s.entry.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::invalid(format!("{m:?} entry distribution is invalid")));
            }
        }
        if self.no_dock.emission.symbols() != self.dock.emission.symbols() {
            return Err(Error::invalid("both macro states must emit over the same alphabet"));
        }
        Ok(())
    }

    /// Offset of macro state `m`'s first phase in the expanded chain.
    pub fn offset(&self, m: MacroState) -> usize {
        match m {
            MacroState::NoDock => 0,
            MacroState::Dock => self.no_dock.duration.phases(),
        }
    }

    pub fn n_expanded(&self) -> usize {
        self.no_dock.duration.phases() + self.dock.duration.phases()
    }

    /// Expand into an HMM over `(macro, phase)`: phase `k` self-loops with
    /// `s_k`, advances with `a_k`, and with `e_k` enters the other macro
    /// state according to its entry distribution.
    pub fn expand(&self) -> ExpandedHmm {
        let n = self.n_expanded();
        let k = self.symbols();
        let mut initial = vec![0.0; n];
        let mut transition = vec![vec![0.0; n]; n];
        let mut macro_of = vec![MacroState::NoDock; n];
        let mut emission = vec![vec![0.0; k]; n];
        for m in MacroState::ALL {
            let st = self.state(m);
            let off = self.offset(m);
            let other = self.state(m.other());
            let other_off = self.offset(m.other());
            let em: Vec<f64> = (0..k).map(|o| st.emission.prob(o)).collect();
            for ph in 0..st.duration.phases() {
                let s = off + ph;
                initial[s] = self.initial[m.index()] * st.entry[ph];
                macro_of[s] = m;
                emission[s] = em.clone();
                transition[s][s] += st.duration.stay[ph];
                if ph + 1 < st.duration.phases() {
                    transition[s][s + 1] += st.duration.advance[ph];
                }
                for (j, &pe) in other.entry.iter().enumerate() {
                    transition[s][other_off + j] += st.duration.exit[ph] * pe;
                }
            }
        }
        ExpandedHmm {
            initial,
            transition,
            macro_of,
            emission,
        }
    }

    /// Model with Coxian durations of the given mean for both states,
    /// entry at phase 0, and the given emissions.
    pub fn with_emissions(
        phases: usize,
        mean_duration: f64,
        no_dock: EmissionModel,
        dock: EmissionModel,
    ) -> Result<Self> {
        let duration = CoxianDuration::with_mean(phases, mean_duration)?;
        let model = HsmmModel {
            initial: [0.5, 0.5],
            no_dock: StateParams {
                duration: duration.clone(),
                entry: point_mass(phases),
                emission: no_dock,
            },
            dock: StateParams {
                duration,
                entry: point_mass(phases),
                emission: dock,
            },
        };
        model.validate()?;
        Ok(model)
    }

    /// Starting point for EM. Emissions come from the histograms of labeled
    /// samples when both labels are present, otherwise from a uniform vector
    /// with 1% seeded jitter.
    pub fn initialize(config: &HsmmConfig, obs: &[usize], labels: &[Label]) -> Result<Self> {
        if config.bins < 2 {
            return Err(Error::invalid("need at least 2 symbols"));
        }
        if config.dock_components == 0 {
            return Err(Error::invalid("need at least one Dock mixture component"));
        }
        let k = config.bins;
        if let Some(&bad) = obs.iter().find(|&&o| o >= k) {
            return Err(Error::invalid(format!("symbol {bad} is outside 0..{k}")));
        }
        let mut rng = rng::stream(config.seed, "hsmm-init");
        let mut jittered = |base: &[f64]| -> Vec<f64> {
            let v: Vec<f64> = base
                .iter()
                .map(|b| b * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0)))
                .collect();
            floored_normalise(&v, EMISSION_FLOOR)
        };

        let histogram = |want: Label| -> Option<Vec<f64>> {
            let mut counts = vec![0.0; k];
            let mut any = false;
            for (&o, &l) in obs.iter().zip(labels) {
                if l == want {
                    counts[o] += 1.0;
                    any = true;
                }
            }
            any.then_some(counts)
        };
        let uniform = vec![1.0 / k as f64; k];
        let (no_dock_base, dock_base) = match (histogram(Label::NoDock), histogram(Label::Dock)) {
            (Some(n), Some(d)) => (
                floored_normalise(&n, EMISSION_FLOOR),
                floored_normalise(&d, EMISSION_FLOOR),
            ),
            _ => (uniform.clone(), uniform),
        };
        let no_dock = EmissionModel::Multinomial {
            probs: jittered(&no_dock_base),
        };
        let dock = if config.dock_components == 1 {
            EmissionModel::Multinomial {
                probs: jittered(&dock_base),
            }
        } else {
            let c = config.dock_components;
            EmissionModel::Mixture {
                weights: vec![1.0 / c as f64; c],
                components: (0..c).map(|_| jittered(&dock_base)).collect(),
            }
        };
        HsmmModel::with_emissions(config.phases, config.mean_duration, no_dock, dock)
    }

    /// Draw a macro-state path and symbols of length `t` from the model.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> (Vec<MacroState>, Vec<usize>) {
        let draw = |p: &dyn Fn(usize) -> f64, n: usize, rng: &mut R| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for i in 0..n {
                acc += p(i);
                if u < acc {
                    return i;
                }
            }
            n - 1
        };
        let mut states = Vec::with_capacity(t);
        let mut obs = Vec::with_capacity(t);
        let mut m = MacroState::from_index(draw(&|i| self.initial[i], 2, rng));
        while states.len() < t {
            let st = self.state(m);
            let start = draw(&|i| st.entry[i], st.entry.len(), rng);
            let d = st.duration.sample(start, rng);
            for _ in 0..d.min(t - states.len()) {
                states.push(m);
                obs.push(draw(&|o| st.emission.prob(o), st.emission.symbols(), rng));
            }
            m = m.other();
        }
        (states, obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(phases: usize) -> HsmmModel {
        HsmmModel::with_emissions(
            phases,
            10.0,
            EmissionModel::Multinomial { probs: vec![0.8, 0.2] },
            EmissionModel::Multinomial { probs: vec![0.1, 0.9] },
        )
        .unwrap()
    }

    #[test]
    fn expanded_rows_are_stochastic() {
        for phases in 1..4 {
            let e = model(phases).expand();
            assert_eq!(e.n_states(), 2 * phases);
            for row in &e.transition {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert!((e.initial.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_phase_is_two_state_hmm() {
        let m = model(1);
        let e = m.expand();
        let p = m.no_dock.duration.exit[0];
        assert!((e.transition[0][1] - p).abs() < 1e-15);
        assert!((e.transition[0][0] - (1.0 - p)).abs() < 1e-15);
        assert_eq!(e.macro_of, vec![MacroState::NoDock, MacroState::Dock]);
    }

    #[test]
    fn initialize_from_labels() {
        let obs = vec![0, 0, 1, 1, 0, 1];
        let labels = vec![
            Label::NoDock,
            Label::NoDock,
            Label::Dock,
            Label::Dock,
            Label::Unlabeled,
            Label::Unlabeled,
        ];
        let cfg = HsmmConfig {
            bins: 2,
            ..HsmmConfig::default()
        };
        let m = HsmmModel::initialize(&cfg, &obs, &labels).unwrap();
        assert!(m.no_dock.emission.prob(0) > 0.99);
        assert!(m.dock.emission.prob(1) > 0.99);
        assert!(HsmmModel::initialize(&cfg, &[0, 5], &[Label::Unlabeled; 2]).is_err());
    }

    #[test]
    fn mixture_initialisation() {
        let cfg = HsmmConfig {
            bins: 3,
            dock_components: 2,
            ..HsmmConfig::default()
        };
        let m = HsmmModel::initialize(&cfg, &[0, 1, 2], &[Label::Unlabeled; 3]).unwrap();
        assert!(matches!(m.dock.emission, EmissionModel::Mixture { .. }));
        m.validate().unwrap();
    }
}
