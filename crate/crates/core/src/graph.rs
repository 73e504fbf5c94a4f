//! Sensor graphs, node partitions, masks and spatio-temporal feature tensors.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Directed sensor graph with static node labels.
///
/// An edge `(j, i)` means information flows from `v_j` to `v_i`, so `j` is in
/// the in-neighborhood of `i`. Self-loops and duplicate edges are dropped on
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
    coords: Option<Vec<[f64; 2]>>,
    labels: Matrix,
}

impl SensorGraph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        coords: Option<Vec<[f64; 2]>>,
        labels: Matrix,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (j, i) in edges {
            for v in [j, i] {
                if v >= n {
                    return Err(Error::NodeOutOfRange { index: v, n });
                }
            }
            if j != i {
                set.insert((j, i));
            }
        }
        if labels.rows() != n {
            return Err(Error::InvalidArgument(format!(
                "label matrix has {} rows for {n} nodes",
                labels.rows()
            )));
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(Error::InvalidArgument(format!("{} coordinates for {n} nodes", c.len())));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut in_neighbors = vec![Vec::new(); n];
        for &(j, i) in &edges {
            in_neighbors[i].push(j);
        }
        Ok(SensorGraph {
            n,
            edges,
            in_neighbors,
            coords,
            labels,
        })
    }

    /// Expands each undirected pair into both directed edges.
    pub fn from_undirected(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        coords: Option<Vec<[f64; 2]>>,
        labels: Matrix,
    ) -> Result<Self> {
        let edges: Vec<_> = pairs.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        Self::new(n, edges, coords, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sources of edges pointing at `i`.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn label_width(&self) -> usize {
        self.labels.cols()
    }

    /// Same topology with a different label matrix.
    pub fn with_labels(&self, labels: Matrix) -> Result<Self> {
        if labels.rows() != self.n {
            return Err(Error::InvalidArgument(format!(
                "label matrix has {} rows for {} nodes",
                labels.rows(),
                self.n
            )));
        }
        Ok(SensorGraph {
            labels,
            ..self.clone()
        })
    }

    /// Same topology with the uninformative `n x 1` all-ones label column.
    pub fn without_labels(&self) -> Self {
        self.with_labels(Matrix::ones(self.n, 1)).expect("row count matches")
    }

    /// Whether every node is reachable from every other ignoring direction.
    pub fn is_weakly_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(j, i) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Binary node-membership vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn all(n: usize) -> Self {
        Mask(vec![true; n])
    }

    pub fn none(n: usize) -> Self {
        Mask(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Mask(self.0.iter().map(|b| !b).collect())
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// Mask as 0/1 reals.
    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Mask as an `n x 1` column of 0/1 reals.
    pub fn column(&self) -> Matrix {
        Matrix::column(&self.values())
    }

    /// Mask broadcast along `width` feature columns.
    pub fn broadcast(&self, width: usize) -> Matrix {
        Matrix::from_fn(self.len(), width, |r, _| if self.0[r] { 1.0 } else { 0.0 })
    }
}

/// Mask with `m_i = 1` iff `i` is in `subset`.
pub fn build_mask(subset: &[usize], n: usize) -> Result<Mask> {
    let mut bits = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(Error::NodeOutOfRange { index: i, n });
        }
        bits[i] = true;
    }
    Ok(Mask(bits))
}

/// Zeroes the rows of an `n x d` slice where the mask is 0.
///
/// Masked rows are overwritten rather than multiplied, so the stored values
/// there (including NaN) are never read.
pub fn apply_mask(x: &Matrix, mask: &Mask) -> Result<Matrix> {
    if x.rows() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "mask of length {} for {} nodes",
            mask.len(),
            x.rows()
        )));
    }
    let mut out = x.clone();
    for i in 0..x.rows() {
        if !mask.contains(i) {
            out.row_mut(i).fill(0.0);
        }
    }
    Ok(out)
}

/// `T x n x d` observation tensor, stored time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    steps: usize,
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl FeatureSequence {
    pub fn zeros(steps: usize, n: usize, d: usize) -> Self {
        FeatureSequence {
            steps,
            n,
            d,
            values: vec![0.0; steps * n * d],
        }
    }

    pub fn from_vec(steps: usize, n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != steps * n * d {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {steps}x{n}x{d} sequence",
                values.len()
            )));
        }
        Ok(FeatureSequence { steps, n, d, values })
    }

    pub fn from_steps(steps: &[Matrix]) -> Result<Self> {
        let first = steps.first().ok_or_else(|| Error::Empty("feature sequence".into()))?;
        let (n, d) = first.shape();
        let mut values = Vec::with_capacity(steps.len() * n * d);
        for s in steps {
            if s.shape() != (n, d) {
                return Err(Error::Shape {
                    op: "from_steps",
                    left: (n, d),
                    right: s.shape(),
                });
            }
            values.extend_from_slice(s.as_slice());
        }
        Ok(FeatureSequence {
            steps: steps.len(),
            n,
            d,
            values,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    fn offset(&self, t: usize, i: usize, f: usize) -> usize {
        (t * self.n + i) * self.d + f
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, f: usize) -> f64 {
        self.values[self.offset(t, i, f)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, i: usize, f: usize, v: f64) {
        let o = self.offset(t, i, f);
        self.values[o] = v;
    }

    /// Features of node `i` at step `t`.
    pub fn node(&self, t: usize, i: usize) -> &[f64] {
        let o = self.offset(t, i, 0);
        &self.values[o..o + self.d]
    }

    pub fn node_mut(&mut self, t: usize, i: usize) -> &mut [f64] {
        let o = self.offset(t, i, 0);
        &mut self.values[o..o + self.d]
    }

    /// The `n x d` slice at step `t`.
    pub fn step(&self, t: usize) -> Matrix {
        let o = t * self.n * self.d;
        Matrix::from_vec(self.n, self.d, self.values[o..o + self.n * self.d].to_vec()).expect("sized")
    }

    /// Copy of every step in `range`.
    pub fn window(&self, range: std::ops::Range<usize>) -> Vec<Matrix> {
        range.map(|t| self.step(t)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Copy with masked-out nodes zeroed at every step.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        if mask.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "mask of length {} for {} nodes",
                mask.len(),
                self.n
            )));
        }
        let mut out = self.clone();
        for t in 0..self.steps {
            for i in 0..self.n {
                if !mask.contains(i) {
                    out.node_mut(t, i).fill(0.0);
                }
            }
        }
        Ok(out)
    }

    /// Whether every value at nodes selected by `mask` is finite.
    pub fn finite_at(&self, mask: &Mask) -> bool {
        (0..self.steps).all(|t| mask.indices().iter().all(|&i| self.node(t, i).iter().all(|v| v.is_finite())))
    }
}

/// Disjoint node roles for one experiment split.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodePartition {
    pub v_in: Vec<usize>,
    pub v_opt: Vec<usize>,
    pub v_val: Vec<usize>,
    pub v_test: Vec<usize>,
}

impl NodePartition {
    pub fn n(&self) -> usize {
        self.v_in.len() + self.v_opt.len() + self.v_val.len() + self.v_test.len()
    }

    /// Observed nodes: inputs and optimization targets.
    pub fn observed(&self) -> Vec<usize> {
        let mut v: Vec<_> = self.v_in.iter().chain(&self.v_opt).copied().collect();
        v.sort_unstable();
        v
    }

    /// Nodes never observed: validation and test.
    pub fn unobserved(&self) -> Vec<usize> {
        let mut v: Vec<_> = self.v_val.iter().chain(&self.v_test).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn input_mask(&self) -> Mask {
        build_mask(&self.v_in, self.n()).expect("partition indices in range")
    }

    pub fn observed_mask(&self) -> Mask {
        build_mask(&self.observed(), self.n()).expect("partition indices in range")
    }

    pub fn val_mask(&self) -> Mask {
        build_mask(&self.v_val, self.n()).expect("partition indices in range")
    }

    pub fn test_mask(&self) -> Mask {
        build_mask(&self.v_test, self.n()).expect("partition indices in range")
    }

    /// Stable 64-bit fingerprint used to check that models share a split.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the four index lists with separators.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for set in [&self.v_in, &self.v_opt, &self.v_val, &self.v_test] {
            for &i in set.iter().chain(std::iter::once(&usize::MAX)) {
                for b in (i as u64).to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Random observed/unobserved split.
///
/// `round(share * n)` nodes are observed. After a seeded shuffle the first
/// `floor(k / 2)` observed nodes become inputs and the rest optimization
/// targets; the unobserved nodes are split the same way into validation and
/// test. Every set is returned in ascending order.
pub fn split_nodes(n: usize, observed_share: f64, seed: u64) -> Result<NodePartition> {
    if !(observed_share > 0.0 && observed_share < 1.0) {
        return Err(Error::InvalidArgument(format!("observed share {observed_share} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let observed = ((observed_share * n as f64).round() as usize).min(n);
    let (seen, unseen) = order.split_at(observed);
    let halve = |set: &[usize]| {
        let (a, b) = set.split_at(set.len() / 2);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    };
    let (v_in, v_opt) = halve(seen);
    let (v_val, v_test) = halve(unseen);
    for (name, set) in [("v_in", &v_in), ("v_opt", &v_opt), ("v_val", &v_val), ("v_test", &v_test)] {
        if set.is_empty() {
            return Err(Error::Empty(format!(
                "{name} is empty for n = {n}, observed share = {observed_share}"
            )));
        }
    }
    Ok(NodePartition {
        v_in,
        v_opt,
        v_val,
        v_test,
    })
}

/// Temporal boundaries `0 < train_end < val_end < total`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeSplit {
    pub train_end: usize,
    pub val_end: usize,
    pub total: usize,
}

impl TimeSplit {
    pub fn new(train_end: usize, val_end: usize, total: usize) -> Result<Self> {
        if !(0 < train_end && train_end < val_end && val_end < total) {
            return Err(Error::InvalidArgument(format!(
                "time split requires 0 < {train_end} < {val_end} < {total}"
            )));
        }
        Ok(TimeSplit {
            train_end,
            val_end,
            total,
        })
    }

    /// Split at fractions of the total length.
    pub fn from_fractions(total: usize, train: f64, val: f64) -> Result<Self> {
        let p = (train * total as f64).round() as usize;
        let q = (val * total as f64).round() as usize;
        Self::new(p, q, total)
    }

    pub fn train(&self) -> std::ops::Range<usize> {
        0..self.train_end
    }

    pub fn val(&self) -> std::ops::Range<usize> {
        self.train_end..self.val_end
    }

    pub fn test(&self) -> std::ops::Range<usize> {
        self.val_end..self.total
    }
}

/// Edges of a distance-threshold graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdEdges {
    pub edges: Vec<(usize, usize)>,
    /// Set when no pair is within the threshold.
    pub all_isolated: bool,
}

/// Both directed edges for every pair at Euclidean distance in `(0, delta]`.
pub fn threshold_graph(coords: &[[f64; 2]], delta: f64) -> Result<ThresholdEdges> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {delta}")));
    }
    if coords.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {}", coords.len())));
    }
    let mut edges = Vec::new();
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let dist = dx.hypot(dy);
            if dist > 0.0 && dist <= delta {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
    }
    edges.sort_unstable();
    let all_isolated = edges.is_empty();
    if all_isolated {
        log::warn!("threshold graph with delta = {delta} has no edges");
    }
    Ok(ThresholdEdges { edges, all_isolated })
}
