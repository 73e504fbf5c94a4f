//! Single-head attention message passing.
//!
//! For node `i` with augmented neighborhood `N_i ∪ {i}`:
//!
//! ```text
//! e_ji  = a · leaky_relu(h_j W_src + h_i W_dst)
//! c_ji  = softmax_j(e_ji)
//! out_i = Σ_j c_ji (h_j W_src) + b
//! ```
//!
//! The self-loop is added here, not stored in the graph, so every node has a
//! well-defined output even when isolated.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SensorGraph;
use crate::nn::{Bound, ParamId, ParamStore};
use crate::tensor::{Matrix, Tape, Var, DEFAULT_LEAKY_SLOPE};

/// Edge index of a [`SensorGraph`] plus one self-loop per node.
#[derive(Clone, Debug)]
pub struct MessageGraph {
    n: usize,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
}

impl MessageGraph {
    pub fn new(graph: &SensorGraph) -> Self {
        let n = graph.n();
        let mut src = Vec::with_capacity(graph.edges().len() + n);
        let mut dst = Vec::with_capacity(graph.edges().len() + n);
        for &(j, i) in graph.edges() {
            src.push(j);
            dst.push(i);
        }
        for i in 0..n {
            src.push(i);
            dst.push(i);
        }
        MessageGraph {
            n,
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of messages, self-loops included.
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn sources(&self) -> &[usize] {
        &self.src
    }

    pub fn targets(&self) -> &[usize] {
        &self.dst
    }
}

/// Parameters of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionLayer {
    pub w_src: ParamId,
    pub w_dst: ParamId,
    /// `d_out x 1` attention vector.
    pub att: ParamId,
    /// `1 x d_out` bias.
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
    pub slope: f64,
}

impl AttentionLayer {
    /// Transforms uniform in `±1/sqrt(d_in)`, attention vector uniform in
    /// `±1/sqrt(d_out)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d_out == 0 {
            return Err(Error::InvalidArgument(format!("{name}: output width must be positive")));
        }
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let w_src = store.uniform(format!("{name}.w_src"), d_in, d_out, bound, rng);
        let w_dst = store.uniform(format!("{name}.w_dst"), d_in, d_out, bound, rng);
        let att = store.uniform(format!("{name}.att"), d_out, 1, 1.0 / (d_out as f64).sqrt(), rng);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, d_out));
        Ok(AttentionLayer {
            w_src,
            w_dst,
            att,
            bias,
            d_in,
            d_out,
            slope: DEFAULT_LEAKY_SLOPE,
        })
    }

    fn check_input(&self, h: Var<'_>, graph: &MessageGraph) -> Result<()> {
        let shape = h.shape();
        if shape != (graph.n, self.d_in) {
            return Err(Error::Shape {
                op: "mpnn",
                left: shape,
                right: (graph.n, self.d_in),
            });
        }
        Ok(())
    }

    /// Projected messages and their normalized coefficients, in
    /// [`MessageGraph`] edge order.
    fn messages<'t>(&self, p: &Bound<'t>, h: Var<'t>, graph: &MessageGraph) -> Result<(Var<'t>, Var<'t>)> {
        self.check_input(h, graph)?;
        let src_proj = h.matmul(p.var(self.w_src))?;
        let dst_proj = h.matmul(p.var(self.w_dst))?;
        let xs = src_proj.gather_rows(graph.src.clone())?;
        let xd = dst_proj.gather_rows(graph.dst.clone())?;
        let scores = xs.add(xd)?.leaky_relu(self.slope).matmul(p.var(self.att))?;
        let coeff = scores.segment_softmax(graph.dst.clone())?;
        Ok((xs, coeff))
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, h: Var<'t>, graph: &MessageGraph) -> Result<Var<'t>> {
        let (xs, coeff) = self.messages(p, h, graph)?;
        xs.scale_rows(coeff)?
            .scatter_add_rows(graph.dst.clone(), graph.n)?
            .add_row(p.var(self.bias))
    }

    /// Coefficient `c_ji` for every message `(j, i)`, self-loops included.
    pub fn attention_scores(&self, store: &ParamStore, h: &Matrix, graph: &MessageGraph) -> Result<Vec<(usize, usize, f64)>> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let (_, coeff) = self.messages(&p, tape.leaf(h.clone()), graph)?;
        let c = coeff.value();
        Ok(graph
            .src
            .iter()
            .zip(graph.dst.iter())
            .enumerate()
            .map(|(e, (&j, &i))| (j, i, c.get(e, 0)))
            .collect())
    }

    /// Tape-free evaluation of [`AttentionLayer::forward`].
    pub fn apply(&self, store: &ParamStore, h: &Matrix, graph: &MessageGraph) -> Result<Matrix> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = self.forward(&p, tape.leaf(h.clone()), graph)?;
        let v = out.value().clone();
        Ok(v)
    }
}
