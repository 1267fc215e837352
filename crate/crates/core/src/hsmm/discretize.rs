use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BinScheme {
    EqualWidth,
    #[default]
    Quantile,
}

/// Monotone binning by sorted interior cut points: a value's symbol is the
/// number of cut points at or below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub boundaries: Vec<f64>,
}

impl Discretizer {
    pub fn fit(values: &[f64], bins: usize, scheme: BinScheme) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
        }
        if values.is_empty() {
            return Err(Error::invalid("cannot fit bins to an empty series"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cannot bin non-finite values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let boundaries = match scheme {
            BinScheme::EqualWidth => (1..bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect(),
            BinScheme::Quantile => {
                let mut distinct = sorted.clone();
                distinct.dedup();
                if distinct.len() < bins {
                    log::warn!(
                        "{} distinct values cannot fill {bins} quantile bins; using one bin per value",
                        distinct.len()
                    );
                    distinct[1..].to_vec()
                } else {
                    let n = sorted.len();
                    let mut cuts: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
                    cuts.dedup();
                    if cuts.len() + 1 < bins {
                        log::warn!("tied values merged quantile bins: {} of {bins} remain", cuts.len() + 1);
                    }
                    cuts
                }
            }
        };
        Ok(Discretizer { boundaries })
    }

    pub fn bins(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn symbol(&self, x: f64) -> usize {
        self.boundaries.partition_point(|b| *b <= x)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<usize> {
        values.iter().map(|&x| self.symbol(x)).collect()
    }
}

/// Fit bins to `values` and return the symbols together with the binning.
pub fn discretize(values: &[f64], bins: usize, scheme: BinScheme) -> Result<(Vec<usize>, Discretizer)> {
    let d = Discretizer::fit(values, bins, scheme)?;
    Ok((d.apply(values), d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_bins_equal_width() {
        let (s, _) = discretize(&[-1.0, 1.0], 2, BinScheme::EqualWidth).unwrap();
        assert_eq!(s, vec![0, 1]);
    }

    #[test]
    fn monotone_on_sorted_input() {
        let xs: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.37).sin() * i as f64).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        for scheme in [BinScheme::EqualWidth, BinScheme::Quantile] {
            let d = Discretizer::fit(&xs, 6, scheme).unwrap();
            let s = d.apply(&sorted);
            assert!(s.windows(2).all(|w| w[0] <= w[1]));
            assert!(s.iter().all(|&b| b < 6));
        }
    }

    #[test]
    fn quantile_occupancy() {
        let mut rng = crate::rng::stream(3, "quantile");
        let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (s, _) = discretize(&xs, 4, BinScheme::Quantile).unwrap();
        for b in 0..4 {
            let count = s.iter().filter(|&&v| v == b).count();
            assert!((count as i64 - 250).abs() <= 40, "bin {b}: {count}");
        }
    }

    #[test]
    fn quantile_fallback_to_distinct_values() {
        let (s, d) = discretize(&[1.0, 1.0, 2.0, 2.0, 2.0], 4, BinScheme::Quantile).unwrap();
        assert_eq!(d.bins(), 2);
        assert_eq!(s, vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(discretize(&[1.0, 2.0], 1, BinScheme::Quantile).is_err());
        assert!(discretize(&[], 2, BinScheme::Quantile).is_err());
    }
}
