mod common;

use common::{attention_oracle, random_graph, random_matrix, rng};
use funs::graph::SensorGraph;
use funs::mpnn::{AttentionLayer, MessageGraph};
use funs::nn::{Bound, ParamStore};
use funs::tensor::{grad_check_many, Matrix};
use rand::Rng;

fn random_layer(d_in: usize, d_out: usize, seed: u64) -> (ParamStore, AttentionLayer) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let layer = AttentionLayer::new(&mut store, "layer", d_in, d_out, &mut r).unwrap();
    *store.get_mut(layer.bias) = random_matrix(1, d_out, &mut r);
    (store, layer)
}

#[test]
fn forward_matches_per_node_loop() {
    for seed in 0..30 {
        let mut r = rng(1000 + seed);
        let n = r.random_range(1..=10);
        let (d_in, d_out) = (r.random_range(1..5), r.random_range(1..5));
        let g = random_graph(n, 0.3, 1, &mut r);
        let h = random_matrix(n, d_in, &mut r);
        let (store, layer) = random_layer(d_in, d_out, seed);
        let got = layer.apply(&store, &h, &MessageGraph::new(&g)).unwrap();
        let want = attention_oracle(&layer, &store, &h, &g);
        assert!(got.max_abs_diff(&want) < 1e-8, "seed {seed}: {}", got.max_abs_diff(&want));
    }
}

#[test]
fn node_relabeling_permutes_outputs() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let n = 8;
        let g = random_graph(n, 0.35, 1, &mut r);
        let h = random_matrix(n, 3, &mut r);
        let (store, layer) = random_layer(3, 2, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let edges: Vec<_> = g.edges().iter().map(|&(j, i)| (perm[j], perm[i])).collect();
        let pg = SensorGraph::new(n, edges, None, Matrix::ones(n, 1)).unwrap();
        let mut ph = Matrix::zeros(n, 3);
        for i in 0..n {
            ph.row_mut(perm[i]).copy_from_slice(h.row(i));
        }
        let out = layer.apply(&store, &h, &MessageGraph::new(&g)).unwrap();
        let pout = layer.apply(&store, &ph, &MessageGraph::new(&pg)).unwrap();
        for i in 0..n {
            for c in 0..2 {
                assert!((out.get(i, c) - pout.get(perm[i], c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layer_gradients_match_differences() {
    for seed in 0..5 {
        let mut r = rng(50 + seed);
        let n = 6;
        let g = random_graph(n, 0.4, 1, &mut r);
        let mg = MessageGraph::new(&g);
        let (store, layer) = random_layer(3, 2, seed);
        let mut inputs = store.values().to_vec();
        inputs.push(random_matrix(n, 3, &mut r));
        let err = grad_check_many(
            |_, vars| {
                let p = Bound::from_vars(vars[..vars.len() - 1].to_vec());
                let out = layer.forward(&p, vars[vars.len() - 1], &mg)?;
                Ok(out.tanh().sum())
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
