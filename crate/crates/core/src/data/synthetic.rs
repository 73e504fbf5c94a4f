use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BundleMeta, DatasetBundle};
use crate::error::{Error, Result};
use crate::graph::{FeatureSequence, SensorGraph};
use crate::tensor::Matrix;

const MAX_GRAPH_ATTEMPTS: usize = 100;

/// Parameters of the synthetic road-network generator.
///
/// Nodes sit on a jittered grid; grid edges are dropped at random while the
/// graph stays connected. Each node gets a road type from spatially coherent
/// patches. The latent state of every node relaxes toward its neighbors at a
/// type-dependent rate, reverts toward a base level, and receives Gaussian
/// shocks. Observed density adds a per-type level and a daily sinusoid with a
/// per-type phase; speed falls with density from a per-node limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub steps: usize,
    /// 1 (density) or 2 (density, speed).
    pub d: usize,
    pub road_types: usize,
    /// Base neighbor-relaxation rate, scaled per road type.
    pub diffusion: f64,
    pub amplitude: f64,
    pub noise: f64,
    /// Steps per cycle of the shared sinusoid.
    pub period: f64,
    /// Per-step reversion factor of the latent state toward the base level.
    pub persistence: f64,
    /// Spread of the per-type density levels.
    pub type_level: f64,
    /// Probability of dropping each grid edge.
    pub edge_drop: f64,
    /// Steps simulated before recording starts.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_nodes: 150,
            steps: 294,
            d: 2,
            road_types: 3,
            diffusion: 0.5,
            amplitude: 1.0,
            noise: 0.3,
            period: 96.0,
            persistence: 0.95,
            type_level: 0.8,
            edge_drop: 0.2,
            burn_in: 100,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_nodes < 4 {
            return bad(format!("n_nodes = {} (need at least 4)", self.n_nodes));
        }
        if self.steps < 50 {
            return bad(format!("steps = {} (need at least 50)", self.steps));
        }
        if !(self.diffusion > 0.0 && self.diffusion < 1.0) {
            return bad(format!("diffusion = {} outside (0, 1)", self.diffusion));
        }
        if !(1..=2).contains(&self.d) {
            return bad(format!("d = {} (supported: 1 or 2)", self.d));
        }
        if self.road_types == 0 {
            return bad("road_types must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.persistence) || !(0.0..1.0).contains(&self.edge_drop) {
            return bad("persistence must lie in [0, 1] and edge_drop in [0, 1)".into());
        }
        if self.noise < 0.0 || self.amplitude < 0.0 || self.period <= 0.0 {
            return bad("noise and amplitude must be non-negative, period positive".into());
        }
        Ok(())
    }
}

/// Grid layout for `n` cells: `cols = ceil(sqrt(n))`, filled row by row.
fn grid_position(i: usize, cols: usize) -> (usize, usize) {
    (i / cols, i % cols)
}

fn random_grid_graph(n: usize, edge_drop: f64, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut full = Vec::new();
    for i in 0..n {
        let (_, c) = grid_position(i, cols);
        if c + 1 < cols && i + 1 < n {
            full.push((i, i + 1));
        }
        if i + cols < n {
            full.push((i, i + cols));
        }
    }
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let kept: Vec<_> = full.iter().copied().filter(|_| rng.random::<f64>() >= edge_drop).collect();
        if connected(n, &kept) {
            return Ok(kept);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no connected graph after {MAX_GRAPH_ATTEMPTS} attempts with edge_drop = {edge_drop}"
    )))
}

fn connected(n: usize, pairs: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = n;
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

/// Builds a synthetic dataset. Identical configs give identical bundles.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let types = cfg.road_types;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let pairs = random_grid_graph(n, cfg.edge_drop, &mut rng)?;
    let cols = (n as f64).sqrt().ceil() as usize;
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (r, c) = grid_position(i, cols);
            [c as f64 + rng.random_range(-0.2..0.2), r as f64 + rng.random_range(-0.2..0.2)]
        })
        .collect();

    // Road types come in spatial patches around random centers.
    let patches = types.max(n / 15);
    let mut centers: Vec<usize> = (0..n).collect();
    centers.shuffle(&mut rng);
    centers.truncate(patches);
    let mut patch_types: Vec<usize> = (0..patches).map(|k| k % types).collect();
    patch_types.shuffle(&mut rng);
    let road_type: Vec<usize> = coords
        .iter()
        .map(|p| {
            let nearest = (0..patches)
                .min_by(|&a, &b| {
                    let da = dist2(p, &coords[centers[a]]);
                    let db = dist2(p, &coords[centers[b]]);
                    da.total_cmp(&db)
                })
                .expect("at least one patch");
            patch_types[nearest]
        })
        .collect();

    let type_frac = |k: usize| if types > 1 { k as f64 / (types - 1) as f64 } else { 0.5 };
    let length: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let speed_limit: Vec<f64> = road_type
        .iter()
        .map(|&k| 1.0 - 0.6 * type_frac(k) + rng.random_range(-0.05..0.05))
        .collect();

    let label_names: Vec<String> = (0..types)
        .map(|k| format!("type_{k}"))
        .chain(["length".to_string(), "speed_limit".to_string()])
        .collect();
    let labels = Matrix::from_fn(n, types + 2, |i, c| match c {
        c if c < types => f64::from(u8::from(road_type[i] == c)),
        c if c == types => length[i],
        _ => speed_limit[i],
    });
    let graph = SensorGraph::from_undirected(n, pairs, Some(coords), labels)?;

    let rate: Vec<f64> = road_type
        .iter()
        .map(|&k| (cfg.diffusion * (0.5 + type_frac(k))).min(0.95))
        .collect();
    let level: Vec<f64> = road_type.iter().map(|&k| cfg.type_level * (type_frac(k) - 0.5) * 2.0).collect();
    let phase: Vec<f64> = road_type.iter().map(|&k| TAU * k as f64 / types as f64).collect();

    let base = 0.0;
    let stationary = if cfg.persistence < 1.0 {
        cfg.noise / (1.0 - cfg.persistence * cfg.persistence).sqrt()
    } else {
        cfg.noise
    };
    let mut state: Vec<f64> = (0..n)
        .map(|_| base + stationary * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut next = vec![0.0; n];
    let advance = |state: &mut Vec<f64>, next: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
        for i in 0..n {
            let nbrs = graph.in_neighbors(i);
            let local = if nbrs.is_empty() {
                state[i]
            } else {
                nbrs.iter().map(|&j| state[j]).sum::<f64>() / nbrs.len() as f64
            };
            let relaxed = (1.0 - rate[i]) * state[i] + rate[i] * local;
            let shock: f64 = rng.sample(StandardNormal);
            next[i] = base + cfg.persistence * (relaxed - base) + cfg.noise * shock;
        }
        std::mem::swap(state, next);
    };
    for _ in 0..cfg.burn_in {
        advance(&mut state, &mut next, &mut rng);
    }

    let mut features = FeatureSequence::zeros(cfg.steps, n, cfg.d);
    for t in 0..cfg.steps {
        if t > 0 {
            advance(&mut state, &mut next, &mut rng);
        }
        let angle = TAU * t as f64 / cfg.period;
        for i in 0..n {
            let density = level[i] + state[i] + cfg.amplitude * (angle + phase[i]).sin();
            features.set(t, i, 0, density);
            if cfg.d == 2 {
                let shock: f64 = rng.sample(StandardNormal);
                let speed = speed_limit[i] - 0.5 * density + 0.3 * cfg.noise * shock;
                features.set(t, i, 1, speed);
            }
        }
    }

    let feature_names = ["density", "speed"][..cfg.d].iter().map(|s| s.to_string()).collect();
    let bundle = DatasetBundle {
        graph,
        features,
        feature_names,
        meta: BundleMeta {
            provenance: "synthetic road-network diffusion".into(),
            seed: Some(cfg.seed),
            config: Some(serde_json::to_value(cfg).expect("plain config")),
            label_names,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}
