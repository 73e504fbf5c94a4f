//! Datasets: a synthetic road-network generator, CSV ingestion, and
//! feature standardization.

mod csv_io;
mod synthetic;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv_dataset, write_csv_dataset, CsvPaths};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use crate::graph::{FeatureSequence, SensorGraph};

/// Smallest standard deviation used when scaling a feature.
pub const STD_FLOOR: f64 = 1e-8;

/// Graph, observations and provenance of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub graph: SensorGraph,
    pub features: FeatureSequence,
    pub feature_names: Vec<String>,
    pub meta: BundleMeta,
}

/// Sidecar metadata written next to a dataset on disk.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub provenance: String,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    pub label_names: Vec<String>,
}

impl DatasetBundle {
    pub fn validate(&self) -> Result<()> {
        if self.features.n() != self.graph.n() {
            return Err(Error::InvalidArgument(format!(
                "features cover {} nodes, graph has {}",
                self.features.n(),
                self.graph.n()
            )));
        }
        if self.feature_names.len() != self.features.d() {
            return Err(Error::InvalidArgument(format!(
                "{} feature names for {} features",
                self.feature_names.len(),
                self.features.d()
            )));
        }
        Ok(())
    }
}

/// Per-feature standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose raw deviation fell below [`STD_FLOOR`].
    pub floored: Vec<bool>,
}

impl NormStats {
    /// Mean and population standard deviation of each feature over the
    /// steps in `range` and the listed `nodes`. Nothing else is read.
    pub fn fit(features: &FeatureSequence, range: Range<usize>, nodes: &[usize]) -> Result<Self> {
        if range.is_empty() || nodes.is_empty() {
            return Err(Error::Empty("standardization range".into()));
        }
        if range.end > features.steps() {
            return Err(Error::InvalidArgument(format!(
                "range {range:?} exceeds {} steps",
                features.steps()
            )));
        }
        let d = features.d();
        let count = (range.len() * nodes.len()) as f64;
        let mut mean = vec![0.0; d];
        for t in range.clone() {
            for &i in nodes {
                for (m, v) in mean.iter_mut().zip(features.node(t, i)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for t in range {
            for &i in nodes {
                for ((s, v), m) in var.iter_mut().zip(features.node(t, i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let mut floored = vec![false; d];
        let std = var
            .iter()
            .zip(&mut floored)
            .map(|(s, flag)| {
                let sd = (s / count).sqrt();
                if sd < STD_FLOOR {
                    *flag = true;
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        let stats = NormStats { mean, std, floored };
        if stats.floored.iter().any(|&f| f) {
            log::warn!("zero-variance feature(s) floored: {:?}", stats.floored);
        }
        Ok(stats)
    }

    pub fn apply(&self, features: &FeatureSequence) -> FeatureSequence {
        let mut out = features.clone();
        let d = features.d();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            let f = k % d;
            *v = (*v - self.mean[f]) / self.std[f];
        }
        out
    }

    pub fn invert(&self, features: &FeatureSequence) -> FeatureSequence {
        let mut out = features.clone();
        let d = features.d();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            let f = k % d;
            *v = *v * self.std[f] + self.mean[f];
        }
        out
    }
}

/// Standardizes `features` with statistics fit on `range` and `nodes`.
pub fn zscore(features: &FeatureSequence, range: Range<usize>, nodes: &[usize]) -> Result<(FeatureSequence, NormStats)> {
    let stats = NormStats::fit(features, range, nodes)?;
    Ok((stats.apply(features), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..20 * 5 * 2).map(|_| rng.random_range(-3.0..7.0)).collect();
        FeatureSequence::from_vec(20, 5, 2, vals).unwrap()
    }

    #[test]
    fn standardized_data_has_unit_stats() {
        let seq = random_seq(1);
        let all: Vec<usize> = (0..5).collect();
        let (z, _) = zscore(&seq, 0..20, &all).unwrap();
        let again = NormStats::fit(&z, 0..20, &all).unwrap();
        for f in 0..2 {
            assert!(again.mean[f].abs() < 1e-12);
            assert!((again.std[f] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let seq = random_seq(2);
        let (z, stats) = zscore(&seq, 0..10, &[0, 1, 2]).unwrap();
        let back = stats.invert(&z);
        for (a, b) in back.as_slice().iter().zip(seq.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_ignore_test_range_and_hidden_nodes() {
        let seq = random_seq(3);
        let base = NormStats::fit(&seq, 0..12, &[0, 2]).unwrap();
        let mut poked = seq.clone();
        for t in 12..20 {
            poked.node_mut(t, 0).fill(1e6);
        }
        for t in 0..20 {
            poked.node_mut(t, 4).fill(f64::NAN);
        }
        assert_eq!(NormStats::fit(&poked, 0..12, &[0, 2]).unwrap(), base);
    }

    #[test]
    fn constant_feature_is_floored() {
        let seq = FeatureSequence::from_vec(3, 2, 1, vec![4.0; 6]).unwrap();
        let stats = NormStats::fit(&seq, 0..3, &[0, 1]).unwrap();
        assert_eq!(stats.floored, vec![true]);
        assert_eq!(stats.std, vec![STD_FLOOR]);
        assert!(NormStats::fit(&seq, 0..0, &[0]).is_err());
    }
}
