//! Comparison methods: a constant mean predictor, graph nearest-neighbor and
//! Gaussian-process interpolation, and an LSTM trained on imputed series.

mod gpr;
mod knn;
mod lstm;

use std::ops::Range;

pub use gpr::{gpr_predict, GprConfig, GprImputer};
pub use knn::{knn_predict, KnnImputer};
pub use lstm::{Lstm, LstmForecaster};

use crate::error::{Error, Result};
use crate::graph::{FeatureSequence, Mask, SensorGraph};
use crate::tensor::Matrix;

/// Per-feature mean of `features` over the steps in `range` and the listed
/// `nodes`.
pub fn mean_predict(features: &FeatureSequence, range: Range<usize>, nodes: &[usize]) -> Result<Vec<f64>> {
    if range.is_empty() || nodes.is_empty() {
        return Err(Error::Empty("mean predictor training set".into()));
    }
    if range.end > features.steps() {
        return Err(Error::InvalidArgument(format!("range {range:?} exceeds {} steps", features.steps())));
    }
    let mut mean = vec![0.0; features.d()];
    for t in range.clone() {
        for &i in nodes {
            for (m, v) in mean.iter_mut().zip(features.node(t, i)) {
                *m += v;
            }
        }
    }
    let count = (range.len() * nodes.len()) as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(mean)
}

/// `steps` copies of an `n`-row matrix whose every row is `value`.
pub fn constant_predictions(value: &[f64], n: usize, steps: usize) -> Vec<Matrix> {
    let m = Matrix::from_fn(n, value.len(), |_, c| value[c]);
    vec![m; steps]
}

/// Spatial interpolator used by [`impute_series`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Imputer {
    Knn,
    Gpr(GprConfig),
}

/// Copy of `features` in which every row outside `observed` is replaced,
/// step by step, by an estimate from the observed rows of the same step.
///
/// Rows outside `observed` are never read.
pub fn impute_series(
    features: &FeatureSequence,
    observed: &Mask,
    graph: &SensorGraph,
    imputer: Imputer,
) -> Result<FeatureSequence> {
    if observed.len() != features.n() || graph.n() != features.n() {
        return Err(Error::InvalidArgument(format!(
            "mask of {} nodes, graph of {}, data of {}",
            observed.len(),
            graph.n(),
            features.n()
        )));
    }
    let mut steps = Vec::with_capacity(features.steps());
    match imputer {
        Imputer::Knn => {
            let knn = KnnImputer::new(graph, observed)?;
            for t in 0..features.steps() {
                steps.push(knn.impute(&features.step(t))?);
            }
        }
        Imputer::Gpr(cfg) => {
            let coords = graph
                .coords()
                .ok_or_else(|| Error::InvalidArgument("GPR needs node coordinates".into()))?;
            let gpr = GprImputer::new(coords, observed, cfg)?;
            for t in 0..features.steps() {
                steps.push(gpr.impute(&features.step(t))?);
            }
        }
    }
    FeatureSequence::from_steps(&steps)
}
