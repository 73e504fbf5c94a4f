use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{Mask, SensorGraph};
use crate::tensor::Matrix;

/// Graph nearest-neighbor interpolation with an adaptive neighbor count.
///
/// An unobserved node takes the mean of its observed neighbors. Without
/// any, it takes the mean of all observed nodes at the smallest hop
/// distance, and the mean of every observed node when none is reachable.
/// Edges are followed in both directions.
#[derive(Clone, Debug)]
pub struct KnnImputer {
    observed: Mask,
    /// Source nodes for each unobserved node; empty means global mean.
    sources: Vec<Vec<usize>>,
}

impl KnnImputer {
    pub fn new(graph: &SensorGraph, observed: &Mask) -> Result<Self> {
        let n = graph.n();
        if observed.len() != n {
            return Err(Error::InvalidArgument(format!("mask of {} nodes for graph of {n}", observed.len())));
        }
        if observed.count() == 0 {
            return Err(Error::Empty("observed node set".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(j, i) in graph.edges() {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let mut sources = vec![Vec::new(); n];
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for i in (0..n).filter(|&i| !observed.contains(i)) {
            dist.fill(usize::MAX);
            dist[i] = 0;
            queue.clear();
            queue.push_back(i);
            let mut found_at = usize::MAX;
            let mut found = Vec::new();
            while let Some(u) = queue.pop_front() {
                if dist[u] >= found_at {
                    break;
                }
                for &v in &adjacency[u] {
                    if dist[v] != usize::MAX {
                        continue;
                    }
                    dist[v] = dist[u] + 1;
                    if observed.contains(v) {
                        found_at = dist[v];
                        found.push(v);
                    } else {
                        queue.push_back(v);
                    }
                }
            }
            found.sort_unstable();
            sources[i] = found;
        }
        Ok(KnnImputer {
            observed: observed.clone(),
            sources,
        })
    }

    /// Nodes averaged for node `i`; empty for observed nodes and for nodes
    /// that fall back to the global mean.
    pub fn sources(&self, i: usize) -> &[usize] {
        &self.sources[i]
    }

    /// Copy of `x` with unobserved rows estimated from observed rows.
    pub fn impute(&self, x: &Matrix) -> Result<Matrix> {
        let n = self.observed.len();
        if x.rows() != n {
            return Err(Error::Shape {
                op: "knn_predict",
                left: x.shape(),
                right: (n, x.cols()),
            });
        }
        let d = x.cols();
        let observed = self.observed.indices();
        let mut global = vec![0.0; d];
        for &j in &observed {
            for (g, v) in global.iter_mut().zip(x.row(j)) {
                *g += v;
            }
        }
        global.iter_mut().for_each(|g| *g /= observed.len() as f64);
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            if self.observed.contains(i) {
                out.row_mut(i).copy_from_slice(x.row(i));
                continue;
            }
            let src = &self.sources[i];
            if src.is_empty() {
                out.row_mut(i).copy_from_slice(&global);
                continue;
            }
            let row = out.row_mut(i);
            for &j in src {
                for (o, v) in row.iter_mut().zip(x.row(j)) {
                    *o += v;
                }
            }
            row.iter_mut().for_each(|o| *o /= src.len() as f64);
        }
        Ok(out)
    }
}

/// Estimates every unobserved row of `x` from the observed rows; observed
/// rows are copied unchanged.
pub fn knn_predict(x: &Matrix, observed: &Mask, graph: &SensorGraph) -> Result<Matrix> {
    KnnImputer::new(graph, observed)?.impute(x)
}
