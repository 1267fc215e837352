//! Discrete-time Coxian phase-type durations.
//!
//! A duration is the number of steps spent in a chain of `M` phases before
//! absorption. In phase `k` each step ends with one of: stay (`s_k`), move on
//! to phase `k + 1` (`a_k`), or exit (`e_k`). The last phase cannot advance.
//! One phase gives a geometric duration; more phases give sums and mixtures
//! of geometrics, which can be multimodal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxianDuration {
    pub stay: Vec<f64>,
    pub advance: Vec<f64>,
    pub exit: Vec<f64>,
}

impl CoxianDuration {
    pub fn new(stay: Vec<f64>, advance: Vec<f64>, exit: Vec<f64>) -> Result<Self> {
        let d = CoxianDuration { stay, advance, exit };
        d.validate()?;
        Ok(d)
    }

    /// Single phase exiting with probability `p` per step.
    pub fn geometric(p: f64) -> Result<Self> {
        CoxianDuration::new(vec![1.0 - p], vec![0.0], vec![p])
    }

    /// `phases` phases sharing one stay probability, each non-final phase
    /// splitting its leaving mass evenly between advance and exit, scaled so
    /// the mean duration from phase 0 is `mean`.
    pub fn with_mean(phases: usize, mean: f64) -> Result<Self> {
        if phases == 0 {
            return Err(Error::invalid("a Coxian needs at least one phase"));
        }
        if !(mean.is_finite() && mean >= 1.0) {
            return Err(Error::invalid(format!("mean duration must be >= 1, got {mean}")));
        }
        // Mean = L · Σ_{k<M} 0.5^k, with L = 1 / (1 − s) the mean sojourn per visited phase.
        let reach: f64 = (0..phases).map(|k| 0.5f64.powi(k as i32)).sum();
        let sojourn = (mean / reach).max(1.0);
        let leave = 1.0 / sojourn;
        let mut stay = vec![1.0 - leave; phases];
        let mut advance = vec![0.5 * leave; phases];
        let mut exit = vec![0.5 * leave; phases];
        advance[phases - 1] = 0.0;
        exit[phases - 1] = leave;
        stay[phases - 1] = 1.0 - leave;
        CoxianDuration::new(stay, advance, exit)
    }

    pub fn phases(&self) -> usize {
        self.stay.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.stay.len();
        if m == 0 || self.advance.len() != m || self.exit.len() != m {
            return Err(Error::invalid(
                "Coxian stay/advance/exit vectors must share a nonzero length",
            ));
        }
        for k in 0..m {
            let row = [self.stay[k], self.advance[k], self.exit[k]];
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!(
                    "Coxian phase {k} has a probability outside [0, 1]"
                )));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                return Err(Error::invalid(format!("Coxian phase {k} does not sum to 1")));
            }
        }
        if self.advance[m - 1] != 0.0 {
            return Err(Error::invalid("the last Coxian phase cannot advance"));
        }
        Ok(())
    }

    /// `P(D = t | start)` for `t ≥ 1`, with `start` a 0-based phase index.
    /// Equals `(Q^{t−1} e)[start]`, `Q` being the transient phase sub-chain
    /// and `e` the exit vector.
    pub fn pmf(&self, start: usize, t: usize) -> f64 {
        if t == 0 || start >= self.phases() {
            return 0.0;
        }
        let mut u = self.exit.clone();
        for _ in 1..t {
            u = self.apply_sub_chain(&u);
        }
        u[start]
    }

    /// `pmf(start, t)` for `t = 1..=t_max`, as a vector indexed from 0.
    pub fn pmf_series(&self, start: usize, t_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(t_max);
        if start >= self.phases() {
            return vec![0.0; t_max];
        }
        let mut u = self.exit.clone();
        for t in 1..=t_max {
            if t > 1 {
                u = self.apply_sub_chain(&u);
            }
            out.push(u[start]);
        }
        out
    }

    /// `P(D ≥ t | start)`: the chain is still transient after `t − 1` steps.
    pub fn survival(&self, start: usize, t: usize) -> f64 {
        if t <= 1 {
            return 1.0;
        }
        let mut u = vec![1.0; self.phases()];
        for _ in 1..t {
            u = self.apply_sub_chain(&u);
        }
        u[start]
    }

    // (Q u)[k] = s_k u[k] + a_k u[k + 1]
    fn apply_sub_chain(&self, u: &[f64]) -> Vec<f64> {
        let m = self.phases();
        (0..m)
            .map(|k| self.stay[k] * u[k] + if k + 1 < m { self.advance[k] * u[k + 1] } else { 0.0 })
            .collect()
    }

    /// Expected duration from `start`.
    pub fn mean(&self, start: usize) -> f64 {
        // Solve (I − Q) x = 1 by back substitution; Q is upper bidiagonal.
        let m = self.phases();
        let mut x = vec![0.0; m];
        for k in (start..m).rev() {
            let next = if k + 1 < m { self.advance[k] * x[k + 1] } else { 0.0 };
            x[k] = (1.0 + next) / (1.0 - self.stay[k]);
        }
        x[start]
    }

    /// Draw a duration by walking the phase chain.
    pub fn sample<R: Rng + ?Sized>(&self, start: usize, rng: &mut R) -> usize {
        let mut phase = start;
        let mut t = 1;
        loop {
            let u: f64 = rng.random();
            if u < self.exit[phase] {
                return t;
            }
            if u < self.exit[phase] + self.advance[phase] {
                phase += 1;
            }
            t += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_phase_is_geometric() {
        let d = CoxianDuration::geometric(0.5).unwrap();
        for t in 1..30 {
            assert_eq!(d.pmf(0, t), 0.5f64.powi(t as i32));
        }
    }

    #[test]
    fn unreachable_second_phase() {
        let d = CoxianDuration::new(vec![0.7, 0.5], vec![0.0, 0.0], vec![0.3, 0.5]).unwrap();
        for t in 1..20 {
            let geo = 0.7f64.powi(t as i32 - 1) * 0.3;
            assert!((d.pmf(0, t) - geo).abs() < 1e-15);
        }
    }

    #[test]
    fn pmf_normalises() {
        let d = CoxianDuration::new(vec![0.8, 0.9], vec![0.15, 0.0], vec![0.05, 0.1]).unwrap();
        for start in 0..2 {
            let series = d.pmf_series(start, 2000);
            let total: f64 = series.iter().sum();
            let tail = d.survival(start, 2001);
            assert!(tail < 1e-12);
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_matches_series() {
        let d = CoxianDuration::with_mean(2, 20.0).unwrap();
        assert!((d.mean(0) - 20.0).abs() < 1e-9);
        let series = d.pmf_series(0, 5000);
        let m: f64 = series.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
        assert!((m - 20.0).abs() < 1e-6);
    }

    #[test]
    fn two_phase_pmf_can_rise() {
        // Geometric pmfs only ever fall; this two-phase chain peaks at t > 1.
        let h = CoxianDuration::new(vec![0.8, 0.8], vec![0.2, 0.0], vec![0.0, 0.2]).unwrap();
        let hs = h.pmf_series(0, 60);
        let mode = hs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(mode > 0 && hs[0] < hs[mode]);
    }

    #[test]
    fn sampler_agrees_with_mean() {
        let d = CoxianDuration::new(vec![0.6, 0.9], vec![0.3, 0.0], vec![0.1, 0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let avg = (0..n).map(|_| d.sample(0, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((avg - d.mean(0)).abs() < 0.1, "{avg} vs {}", d.mean(0));
    }

    #[test]
    fn validation() {
        assert!(CoxianDuration::new(vec![0.5], vec![0.1], vec![0.4]).is_err());
        assert!(CoxianDuration::new(vec![0.5, 0.5], vec![0.2, 0.0], vec![0.2, 0.5]).is_err());
        assert!(CoxianDuration::new(vec![], vec![], vec![]).is_err());
        assert!(CoxianDuration::with_mean(0, 5.0).is_err());
    }
}
