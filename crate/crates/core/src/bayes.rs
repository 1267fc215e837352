//! Naive Bayes fusion of per-modifier detections across a multiplexed array.
//!
//! Each cell `p[m][a]` of a [`ResponseTable`] is read as
//! `P(detection on modifier m | agent a present)`. Given one outcome per
//! modifier, the posterior over agents is
//! `P(a | e) ∝ prior(a) · Π_m (e_m ? p[m][a] : 1 − p[m][a])`, evaluated in
//! log space. Cells are clamped to `[1e-6, 1 − 1e-6]` at evaluation time.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Clamp applied to table cells before use; the stored table is unchanged.
pub const CELL_CLAMP: f64 = 1e-6;

pub const AGENT_NEW: &str = "New";
pub const AGENT_BUFFER: &str = "Buffer";

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    modifiers: Vec<String>,
    agents: Vec<String>,
    /// Row-major, one row per modifier.
    p: Vec<Vec<f64>>,
}

impl ResponseTable {
    pub fn new(modifiers: Vec<String>, agents: Vec<String>, p: Vec<Vec<f64>>) -> Result<Self> {
        if modifiers.is_empty() || agents.is_empty() {
            return Err(Error::invalid(
                "response table needs at least one modifier and one agent",
            ));
        }
        if p.len() != modifiers.len() || p.iter().any(|row| row.len() != agents.len()) {
            return Err(Error::invalid(format!(
                "response table must be {}x{}",
                modifiers.len(),
                agents.len()
            )));
        }
        for (m, row) in modifiers.iter().zip(&p) {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!("cell {v} in row {m} is outside [0, 1]")));
            }
        }
        Ok(ResponseTable { modifiers, agents, p })
    }

    pub fn modifiers(&self) -> &[String] {
        &self.modifiers
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn modifier_index(&self, id: &str) -> Option<usize> {
        self.modifiers.iter().position(|m| m == id)
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a == id)
    }

    pub fn cell(&self, modifier: &str, agent: &str) -> Option<f64> {
        Some(self.p[self.modifier_index(modifier)?][self.agent_index(agent)?])
    }

    /// Whether the agent list carries the catch-all hypotheses that make it
    /// exhaustive.
    pub fn has_catch_all(&self) -> bool {
        self.agent_index(AGENT_NEW).is_some() && self.agent_index(AGENT_BUFFER).is_some()
    }

    /// Table with an extra modifier row.
    pub fn with_row(&self, modifier: &str, row: Vec<f64>) -> Result<Self> {
        let mut modifiers = self.modifiers.clone();
        modifiers.push(modifier.to_owned());
        let mut p = self.p.clone();
        p.push(row);
        ResponseTable::new(modifiers, self.agents.clone(), p)
    }
}

/// Specific, within-family and out-of-family cell values of the default table.
/// Replace them with a measured table via `io::read_table` when one is available.
pub const SPECIFIC: f64 = 0.98;
pub const WITHIN_FAMILY: f64 = 0.3;
pub const OUT_OF_FAMILY: f64 = 0.02;
pub const RECEPTOR_VIRUS: f64 = 0.95;
pub const RECEPTOR_BUFFER: f64 = 0.02;

/// Two families (A with three variants, B with two), an unrepresented
/// A-family member, a new agent and plain buffer, against six antibody rows
/// and one cell-surface receptor row.
pub fn default_table() -> ResponseTable {
    let agents = ["A1", "A2", "A3", "Other-A", "B1", "B2", AGENT_NEW, AGENT_BUFFER];
    // (row id, family, specific agent)
    let antibodies = [
        ("Anti-A1-1", 'A', "A1"),
        ("Anti-A1-2", 'A', "A1"),
        ("Anti-A2-1", 'A', "A2"),
        ("Anti-A3-1", 'A', "A3"),
        ("Anti-B1-1", 'B', "B1"),
        ("Anti-B2-1", 'B', "B2"),
    ];
    let family = |agent: &str| match agent {
        "A1" | "A2" | "A3" | "Other-A" => Some('A'),
        "B1" | "B2" => Some('B'),
        _ => None,
    };
    let mut p: Vec<Vec<f64>> = antibodies
        .iter()
        .map(|&(_, fam, target)| {
            agents
                .iter()
                .map(|&a| {
                    if a == target {
                        SPECIFIC
                    } else if family(a) == Some(fam) {
                        WITHIN_FAMILY
                    } else {
                        OUT_OF_FAMILY
                    }
                })
                .collect()
        })
        .collect();
    p.push(
        agents
            .iter()
            .map(|&a| {
                if a == AGENT_BUFFER {
                    RECEPTOR_BUFFER
                } else {
                    RECEPTOR_VIRUS
                }
            })
            .collect(),
    );
    let mut modifiers: Vec<String> = antibodies.iter().map(|a| a.0.to_owned()).collect();
    modifiers.push("CellSurface".to_owned());
    ResponseTable::new(modifiers, agents.iter().map(|s| s.to_string()).collect(), p)
        .expect("default table is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Detected,
    NotDetected,
}

/// One outcome per modifier row, in table order, with an optional soft
/// response strength in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub outcomes: Vec<Outcome>,
    pub strengths: Option<Vec<f64>>,
}

impl Evidence {
    pub fn hard(outcomes: Vec<Outcome>) -> Self {
        Evidence {
            outcomes,
            strengths: None,
        }
    }

    /// Collapse replicate wires sharing a modifier by majority vote; a tie
    /// counts as not detected. Every table row needs at least one wire.
    pub fn from_wires(table: &ResponseTable, wires: &[(String, Outcome)]) -> Result<Self> {
        let mut votes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (id, outcome) in wires {
            let m = table
                .modifier_index(id)
                .ok_or_else(|| Error::invalid(format!("unknown modifier {id}")))?;
            let v = votes.entry(m).or_default();
            match outcome {
                Outcome::Detected => v.0 += 1,
                Outcome::NotDetected => v.1 += 1,
            }
        }
        let outcomes = (0..table.modifiers.len())
            .map(|m| match votes.get(&m) {
                Some(&(yes, no)) if yes > no => Ok(Outcome::Detected),
                Some(_) => Ok(Outcome::NotDetected),
                None => Err(Error::invalid(format!("no wire for modifier {}", table.modifiers[m]))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evidence::hard(outcomes))
    }

    pub fn detected(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| *o == Outcome::Detected).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvidenceMode {
    #[default]
    Hard,
    /// Likelihood `p·s + (1 − p)·(1 − s)` from the response strength `s`.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorOptions {
    pub mode: EvidenceMode,
    /// Cells are clamped to `[c, 1 − c]`; `None` uses the raw table.
    pub clamp: Option<f64>,
}

impl Default for PosteriorOptions {
    fn default() -> Self {
        PosteriorOptions {
            mode: EvidenceMode::Hard,
            clamp: Some(CELL_CLAMP),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub agents: Vec<String>,
    pub probs: Vec<f64>,
}

impl Posterior {
    /// Agent indices sorted by decreasing probability (ties by table order).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }

    pub fn argmax(&self) -> &str {
        &self.agents[self.ranking()[0]]
    }

    pub fn prob(&self, agent: &str) -> Option<f64> {
        self.agents.iter().position(|a| a == agent).map(|i| self.probs[i])
    }

    /// True when the runner-up is within a factor `ratio` of the leader,
    /// which suggests a mixture rather than a single agent.
    pub fn ambiguous(&self, ratio: f64) -> bool {
        let r = self.ranking();
        r.len() > 1 && self.probs[r[0]] <= ratio * self.probs[r[1]]
    }
}

pub fn uniform_prior(table: &ResponseTable) -> Vec<f64> {
    vec![1.0 / table.agents.len() as f64; table.agents.len()]
}

pub fn posterior(table: &ResponseTable, evidence: &Evidence, prior: &[f64]) -> Result<Posterior> {
    posterior_with(table, evidence, prior, &PosteriorOptions::default())
}

pub fn posterior_with(
    table: &ResponseTable,
    evidence: &Evidence,
    prior: &[f64],
    options: &PosteriorOptions,
) -> Result<Posterior> {
    let n_agents = table.agents.len();
    if evidence.outcomes.len() != table.modifiers.len() {
        return Err(Error::invalid(format!(
            "evidence has {} outcomes for {} modifiers",
            evidence.outcomes.len(),
            table.modifiers.len()
        )));
    }
    if prior.len() != n_agents || prior.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::invalid("prior must give one nonnegative probability per agent"));
    }
    if (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("prior must sum to 1"));
    }
    let strengths = match options.mode {
        EvidenceMode::Hard => None,
        EvidenceMode::Soft => Some(
            evidence
                .strengths
                .as_ref()
                .ok_or_else(|| Error::invalid("soft evidence needs response strengths"))?,
        ),
    };

    let log_post: Vec<f64> = (0..n_agents)
        .map(|a| {
            let mut lp = prior[a].ln();
            for (m, row) in table.p.iter().enumerate() {
                let p = options.clamp.map_or(row[a], |c| row[a].clamp(c, 1.0 - c));
                let lik = match strengths {
                    Some(s) => {
                        let s = s[m].clamp(0.0, 1.0);
                        p * s + (1.0 - p) * (1.0 - s)
                    }
                    None => match evidence.outcomes[m] {
                        Outcome::Detected => p,
                        Outcome::NotDetected => 1.0 - p,
                    },
                };
                lp += lik.ln();
            }
            lp
        })
        .collect();

    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::numeric("evidence impossible under table"));
    }
    let weights: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(Posterior {
        agents: table.agents.clone(),
        probs: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// Detection probability when several agents act independently on one modifier.
pub fn noisy_or(ps: &[f64]) -> f64 {
    1.0 - ps.iter().map(|p| 1.0 - p).product::<f64>()
}

/// Simulate array evidence for the agents in `present` (Buffer alone means
/// no agent). Each modifier's response is the noisy-OR of its cells for the
/// present agents, perturbed by Gaussian noise of std `noise_sigma`; it is
/// reported as detected when the perturbed response reaches 0.5. A modifier
/// therefore flips from its noiseless outcome with probability
/// `Φ(−|r − 0.5| / noise_sigma)`.
pub fn simulate_evidence(table: &ResponseTable, present: &[&str], noise_sigma: f64, seed: u64) -> Result<Evidence> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let cols = present
        .iter()
        .filter(|&&a| a != AGENT_BUFFER)
        .map(|a| {
            table
                .agent_index(a)
                .ok_or_else(|| Error::invalid(format!("unknown agent {a}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(seed, "evidence");
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut outcomes = Vec::with_capacity(table.p.len());
    let mut strengths = Vec::with_capacity(table.p.len());
    for row in &table.p {
        let r = noisy_or(&cols.iter().map(|&c| row[c]).collect::<Vec<_>>());
        let observed = if noise_sigma > 0.0 {
            r + normal.sample(&mut rng)
        } else {
            r
        };
        outcomes.push(if observed >= 0.5 {
            Outcome::Detected
        } else {
            Outcome::NotDetected
        });
        strengths.push(observed.clamp(0.0, 1.0));
    }
    Ok(Evidence {
        outcomes,
        strengths: Some(strengths),
    })
}
