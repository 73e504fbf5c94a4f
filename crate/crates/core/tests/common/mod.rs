//! Brute-force reference implementations and small fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use funs::graph::{Mask, SensorGraph};
use funs::mpnn::AttentionLayer;
use funs::nn::ParamStore;
use funs::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random directed graph with edge probability `p`, no self-loops.
pub fn random_graph(n: usize, p: f64, label_width: usize, rng: &mut ChaCha8Rng) -> SensorGraph {
    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if i != j && rng.random::<f64>() < p {
                edges.push((j, i));
            }
        }
    }
    let coords = (0..n).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)]).collect();
    let labels = random_matrix(n, label_width, rng);
    SensorGraph::new(n, edges, Some(coords), labels).unwrap()
}

/// Attention layer evaluated one node at a time from its definition:
/// `e_ji = a · leaky(W_srcᵀ h_j + W_dstᵀ h_i)` over `j ∈ N(i) ∪ {i}`,
/// softmax over `j`, `out_i = Σ_j c_ji W_srcᵀ h_j + b`.
pub fn attention_oracle(layer: &AttentionLayer, store: &ParamStore, h: &Matrix, graph: &SensorGraph) -> Matrix {
    let w_src = store.get(layer.w_src);
    let w_dst = store.get(layer.w_dst);
    let att = store.get(layer.att);
    let bias = store.get(layer.bias);
    let (d_in, d_out) = (w_src.rows(), w_src.cols());
    let project = |w: &Matrix, node: usize| -> Vec<f64> {
        (0..d_out)
            .map(|o| (0..d_in).map(|k| h.get(node, k) * w.get(k, o)).sum())
            .collect()
    };
    let mut out = Matrix::zeros(graph.n(), d_out);
    for i in 0..graph.n() {
        let mut sources: Vec<usize> = graph.in_neighbors(i).to_vec();
        sources.push(i);
        let dst = project(w_dst, i);
        let scores: Vec<f64> = sources
            .iter()
            .map(|&j| {
                let src = project(w_src, j);
                (0..d_out)
                    .map(|o| {
                        let z = src[o] + dst[o];
                        let z = if z > 0.0 { z } else { 0.2 * z };
                        att.get(o, 0) * z
                    })
                    .sum()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (k, &j) in sources.iter().enumerate() {
            let src = project(w_src, j);
            for o in 0..d_out {
                let v = out.get(i, o) + exps[k] / total * src[o];
                out.set(i, o, v);
            }
        }
        for o in 0..d_out {
            let v = out.get(i, o) + bias.get(0, o);
            out.set(i, o, v);
        }
    }
    out
}

/// Mean of squared errors over the listed rows of every step.
pub fn mse_oracle(preds: &[Matrix], targets: &[Matrix], nodes: &[usize]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        for &i in nodes {
            for f in 0..p.cols() {
                acc += (p.get(i, f) - t.get(i, f)).powi(2);
                count += 1.0;
            }
        }
    }
    acc / count
}

/// Graph nearest-neighbor interpolation from all-pairs hop distances
/// (Floyd–Warshall over undirected edges).
pub fn knn_oracle(x: &Matrix, observed: &Mask, graph: &SensorGraph) -> Matrix {
    let n = graph.n();
    let inf = usize::MAX / 4;
    let mut dist = vec![vec![inf; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(j, i) in graph.edges() {
        dist[i][j] = 1;
        dist[j][i] = 1;
    }
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                if dist[a][k] + dist[k][b] < dist[a][b] {
                    dist[a][b] = dist[a][k] + dist[k][b];
                }
            }
        }
    }
    let obs: Vec<usize> = (0..n).filter(|&i| observed.contains(i)).collect();
    let mut out = x.clone();
    for i in (0..n).filter(|&i| !observed.contains(i)) {
        let best = obs.iter().map(|&j| dist[i][j]).min().unwrap();
        let chosen: Vec<usize> = if best >= inf {
            obs.clone()
        } else {
            obs.iter().copied().filter(|&j| dist[i][j] == best).collect()
        };
        for f in 0..x.cols() {
            let v = chosen.iter().map(|&j| x.get(j, f)).sum::<f64>() / chosen.len() as f64;
            out.set(i, f, v);
        }
    }
    out
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in &mut m[col] {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = m[r][col];
                if factor != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= factor * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Posterior mean `k(q, O) (K + noise I)^-1 y` with an explicit inverse, on
/// per-axis standardized coordinates.
pub fn gpr_oracle(x: &Matrix, observed: &Mask, coords: &[[f64; 2]], sigma: f64, noise: f64) -> Matrix {
    let n = coords.len();
    let mut z = coords.to_vec();
    for axis in 0..2 {
        let mean = coords.iter().map(|c| c[axis]).sum::<f64>() / n as f64;
        let sd = (coords.iter().map(|c| (c[axis] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for c in &mut z {
            c[axis] = (c[axis] - mean) / if sd > 0.0 { sd } else { 1.0 };
        }
    }
    let k = |a: [f64; 2], b: [f64; 2]| (-((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / (2.0 * sigma * sigma)).exp();
    let obs: Vec<usize> = (0..n).filter(|&i| observed.contains(i)).collect();
    let gram: Vec<Vec<f64>> = obs
        .iter()
        .enumerate()
        .map(|(a, &i)| obs.iter().enumerate().map(|(b, &j)| k(z[i], z[j]) + if a == b { noise } else { 0.0 }).collect())
        .collect();
    let inv = invert(&gram);
    let mut out = x.clone();
    for q in (0..n).filter(|&i| !observed.contains(i)) {
        let kq: Vec<f64> = obs.iter().map(|&j| k(z[q], z[j])).collect();
        for f in 0..x.cols() {
            let mut v = 0.0;
            for a in 0..obs.len() {
                for b in 0..obs.len() {
                    v += kq[a] * inv[a][b] * x.get(obs[b], f);
                }
            }
            out.set(q, f, v);
        }
    }
    out
}
