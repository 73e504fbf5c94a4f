//! The forecasting network: static encoding, graph imputation, gap filling,
//! a GRU whose gates are attention layers, and a per-node readout.
//!
//! One step of the recurrence, with `m` the input mask and `m̄ = 1 - m`:
//!
//! ```text
//! S   = ψ(m || m̄ || L)                      once per sequence
//! Z   = MPNN_imp(X || H' || S)
//! X̂   = m ⊙ X + m̄ ⊙ Z
//! F   = X̂ || S
//! R   = σ(MPNN_r(F || H'))
//! U   = σ(MPNN_u(F || H'))
//! C   = tanh(MPNN_c(F || R ⊙ H'))
//! H   = U ⊙ H' + (1 - U) ⊙ C
//! P   = MPNN_out(H || F)
//! Ŷ   = φ(P)
//! ```
//!
//! `H'` is the previous hidden state, zero at the start of every sequence.
//! Dropout is applied to `H` and `P` in training mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{apply_mask, Mask};
use crate::mpnn::{AttentionLayer, MessageGraph};
use crate::nn::{Bound, Linear, ParamStore};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    fn training(self) -> bool {
        self == Mode::Train
    }
}

/// Layer widths and regularization of a [`FunsNet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunsConfig {
    /// Features per node.
    pub d: usize,
    /// Columns of the static label matrix.
    pub label_width: usize,
    pub hidden: usize,
    pub static_width: usize,
    pub dropout: f64,
}

impl FunsConfig {
    /// Static width equal to the hidden width.
    pub fn new(d: usize, label_width: usize, hidden: usize, dropout: f64) -> Self {
        FunsConfig {
            d,
            label_width,
            hidden,
            static_width: hidden,
            dropout,
        }
    }
}

/// Network parameters and their layout in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FunsNet {
    pub config: FunsConfig,
    pub params: ParamStore,
    static_hidden: Linear,
    static_out: Linear,
    impute: AttentionLayer,
    gate_reset: AttentionLayer,
    gate_update: AttentionLayer,
    gate_candidate: AttentionLayer,
    output: AttentionLayer,
    readout: Linear,
}

/// Intermediate values of one recurrent step.
#[derive(Clone, Copy)]
pub struct GruOutput<'t> {
    pub reset: Var<'t>,
    pub update: Var<'t>,
    pub candidate: Var<'t>,
    pub hidden: Var<'t>,
}

/// Values that stay fixed across the steps of one sequence.
pub struct SequenceContext<'t> {
    pub static_state: Var<'t>,
    keep: Var<'t>,
    fill: Var<'t>,
}

impl FunsNet {
    pub fn new(config: FunsConfig, seed: u64) -> Result<Self> {
        let FunsConfig {
            d,
            label_width,
            hidden: h,
            static_width: s,
            dropout,
        } = config;
        if d == 0 || h == 0 || s == 0 {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let static_hidden = Linear::new(&mut p, "static.hidden", 2 + label_width, h, &mut rng);
        let static_out = Linear::new(&mut p, "static.out", h, s, &mut rng);
        let impute = AttentionLayer::new(&mut p, "impute", d + h + s, d, &mut rng)?;
        let gate_reset = AttentionLayer::new(&mut p, "gru.reset", d + s + h, h, &mut rng)?;
        let gate_update = AttentionLayer::new(&mut p, "gru.update", d + s + h, h, &mut rng)?;
        let gate_candidate = AttentionLayer::new(&mut p, "gru.candidate", d + s + h, h, &mut rng)?;
        let output = AttentionLayer::new(&mut p, "output", h + d + s, h, &mut rng)?;
        let readout = Linear::new(&mut p, "readout", h, d, &mut rng);
        Ok(FunsNet {
            config,
            params: p,
            static_hidden,
            static_out,
            impute,
            gate_reset,
            gate_update,
            gate_candidate,
            output,
            readout,
        })
    }

    pub fn impute_layer(&self) -> &AttentionLayer {
        &self.impute
    }

    pub fn update_gate(&self) -> &AttentionLayer {
        &self.gate_update
    }

    pub fn readout(&self) -> &Linear {
        &self.readout
    }

    pub fn static_out(&self) -> &Linear {
        &self.static_out
    }

    /// `S = ψ(m || m̄ || L)`.
    pub fn encode_static<'t>(&self, p: &Bound<'t>, mask: &Mask, labels: &Matrix) -> Result<Var<'t>> {
        let tape = p.vars()[0].tape();
        if labels.rows() != mask.len() {
            return Err(Error::Shape {
                op: "encode_static",
                left: (mask.len(), 2),
                right: labels.shape(),
            });
        }
        if labels.cols() != self.config.label_width {
            return Err(Error::Shape {
                op: "encode_static",
                left: labels.shape(),
                right: (labels.rows(), self.config.label_width),
            });
        }
        let input = mask.column().hcat(&mask.complement().column())?.hcat(labels)?;
        let hidden = self.static_hidden.forward(p, tape.leaf(input))?.tanh();
        self.static_out.forward(p, hidden)
    }

    /// Static state plus the broadcast masks used by gap filling.
    pub fn context<'t>(&self, p: &Bound<'t>, mask: &Mask, labels: &Matrix) -> Result<SequenceContext<'t>> {
        let tape = p.vars()[0].tape();
        Ok(SequenceContext {
            static_state: self.encode_static(p, mask, labels)?,
            keep: tape.leaf(mask.broadcast(self.config.d)),
            fill: tape.leaf(mask.complement().broadcast(self.config.d)),
        })
    }

    /// `Z = MPNN(X || H' || S)`.
    pub fn impute_step<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        h_prev: Var<'t>,
        static_state: Var<'t>,
        graph: &MessageGraph,
    ) -> Result<Var<'t>> {
        let input = x.concat(h_prev)?.concat(static_state)?;
        self.impute.forward(p, input, graph)
    }

    /// `X̂ = m ⊙ X + m̄ ⊙ Z`, with `keep = m` and `fill = m̄` broadcast to `n x d`.
    pub fn fill_gaps<'t>(x: Var<'t>, z: Var<'t>, keep: Var<'t>, fill: Var<'t>) -> Result<Var<'t>> {
        x.mul(keep)?.add(z.mul(fill)?)
    }

    /// Graph-gated recurrence. Dropout hits the returned hidden state.
    pub fn gru_step<'t, R: Rng + ?Sized>(
        &self,
        p: &Bound<'t>,
        features: Var<'t>,
        h_prev: Var<'t>,
        graph: &MessageGraph,
        mode: Mode,
        rng: &mut R,
    ) -> Result<GruOutput<'t>> {
        let gate_in = features.concat(h_prev)?;
        let reset = self.gate_reset.forward(p, gate_in, graph)?.sigmoid();
        let update = self.gate_update.forward(p, gate_in, graph)?.sigmoid();
        let cand_in = features.concat(reset.mul(h_prev)?)?;
        let candidate = self.gate_candidate.forward(p, cand_in, graph)?.tanh();
        let mixed = combine_gates(update, h_prev, candidate)?;
        let hidden = mixed.dropout(self.config.dropout, rng, mode.training())?;
        Ok(GruOutput {
            reset,
            update,
            candidate,
            hidden,
        })
    }

    /// `Ŷ = φ(dropout(MPNN(H || F)))`.
    pub fn predict_step<'t, R: Rng + ?Sized>(
        &self,
        p: &Bound<'t>,
        hidden: Var<'t>,
        features: Var<'t>,
        graph: &MessageGraph,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var<'t>> {
        let mixed = self.output.forward(p, hidden.concat(features)?, graph)?;
        let mixed = mixed.dropout(self.config.dropout, rng, mode.training())?;
        self.readout.forward(p, mixed)
    }

    /// One full step; returns the new hidden state and the prediction.
    pub fn step<'t, R: Rng + ?Sized>(
        &self,
        p: &Bound<'t>,
        ctx: &SequenceContext<'t>,
        x: Var<'t>,
        h_prev: Var<'t>,
        graph: &MessageGraph,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let z = self.impute_step(p, x, h_prev, ctx.static_state, graph)?;
        let filled = Self::fill_gaps(x, z, ctx.keep, ctx.fill)?;
        let features = filled.concat(ctx.static_state)?;
        let gru = self.gru_step(p, features, h_prev, graph, mode, rng)?;
        let y = self.predict_step(p, gru.hidden, features, graph, mode, rng)?;
        Ok((gru.hidden, y))
    }

    fn check_window(&self, window: &[Matrix], mask: &Mask) -> Result<()> {
        let Some(first) = window.first() else {
            return Err(Error::Empty("input window".into()));
        };
        let want = (mask.len(), self.config.d);
        for x in window {
            if x.shape() != want {
                return Err(Error::Shape {
                    op: "forward_sequence",
                    left: x.shape(),
                    right: want,
                });
            }
        }
        debug_assert_eq!(first.shape(), want);
        Ok(())
    }

    /// Unrolls the network over `window` on one tape, for training.
    ///
    /// Rows outside `mask` are zeroed before use. The returned prediction at
    /// position `w` depends only on `window[..=w]`.
    pub fn forward_sequence<'t, R: Rng + ?Sized>(
        &self,
        p: &Bound<'t>,
        window: &[Matrix],
        mask: &Mask,
        labels: &Matrix,
        graph: &MessageGraph,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<Var<'t>>> {
        self.check_window(window, mask)?;
        let tape = p.vars()[0].tape();
        let ctx = self.context(p, mask, labels)?;
        let mut h = tape.leaf(Matrix::zeros(mask.len(), self.config.hidden));
        let mut out = Vec::with_capacity(window.len());
        for x in window {
            let x = tape.leaf(apply_mask(x, mask)?);
            let (next, y) = self.step(p, &ctx, x, h, graph, mode, rng)?;
            h = next;
            out.push(y);
        }
        Ok(out)
    }

    /// Evaluation-mode predictions for every step of `window`, one tape per
    /// step so memory stays flat for long sequences.
    pub fn predict_sequence(
        &self,
        window: &[Matrix],
        mask: &Mask,
        labels: &Matrix,
        graph: &MessageGraph,
    ) -> Result<Vec<Matrix>> {
        self.check_window(window, mask)?;
        let static_state = {
            let tape = Tape::new();
            let p = self.params.bind(&tape);
            let s = self.encode_static(&p, mask, labels)?;
            let v = s.value().clone();
            v
        };
        let keep = mask.broadcast(self.config.d);
        let fill = mask.complement().broadcast(self.config.d);
        // Eval mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = Matrix::zeros(mask.len(), self.config.hidden);
        let mut out = Vec::with_capacity(window.len());
        for x in window {
            let tape = Tape::new();
            let p = self.params.bind(&tape);
            let ctx = SequenceContext {
                static_state: tape.leaf(static_state.clone()),
                keep: tape.leaf(keep.clone()),
                fill: tape.leaf(fill.clone()),
            };
            let x = tape.leaf(apply_mask(x, mask)?);
            let h_prev = tape.leaf(h);
            let (next, y) = self.step(&p, &ctx, x, h_prev, graph, Mode::Eval, &mut rng)?;
            h = next.value().clone();
            out.push(y.value().clone());
        }
        Ok(out)
    }
}

/// `U ⊙ H' + (1 - U) ⊙ C`.
pub fn combine_gates<'t>(update: Var<'t>, h_prev: Var<'t>, candidate: Var<'t>) -> Result<Var<'t>> {
    update.mul(h_prev)?.add(update.one_minus().mul(candidate)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_mask, SensorGraph};

    fn setup(n: usize) -> (FunsNet, SensorGraph, MessageGraph) {
        let labels = Matrix::from_fn(n, 2, |r, c| ((r + c) % 3) as f64);
        let g = SensorGraph::from_undirected(n, (0..n - 1).map(|i| (i, i + 1)), None, labels).unwrap();
        let mg = MessageGraph::new(&g);
        let net = FunsNet::new(FunsConfig::new(2, 2, 4, 0.25), 3).unwrap();
        (net, g, mg)
    }

    fn window(steps: usize, n: usize) -> Vec<Matrix> {
        (0..steps)
            .map(|t| Matrix::from_fn(n, 2, |r, c| ((t * 7 + r * 3 + c) % 11) as f64 / 5.0 - 1.0))
            .collect()
    }

    #[test]
    fn static_state_is_row_wise() {
        let (net, g, _) = setup(4);
        let tape = Tape::new();
        let p = net.params.bind(&tape);
        let mask = build_mask(&[0, 1], 4).unwrap();
        let mut labels = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![0.5, 0.5]]);
        let s = net.encode_static(&p, &mask, &labels).unwrap().value().clone();
        assert_eq!(s.row(0), s.row(1));
        labels.set(2, 0, 9.0);
        let s2 = net.encode_static(&p, &mask, &labels).unwrap().value().clone();
        for r in 0..4 {
            assert_eq!(s.row(r) == s2.row(r), r != 2);
        }
        assert!(net.encode_static(&p, &mask, &Matrix::ones(4, 3)).is_err());
        let _ = g;
    }

    #[test]
    fn static_state_with_zero_output_weights_is_bias() {
        let (mut net, _, _) = setup(3);
        let (w, b) = (net.static_out.weight, net.static_out.bias);
        *net.params.get_mut(w) = Matrix::zeros(4, 4);
        *net.params.get_mut(b) = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]);
        let tape = Tape::new();
        let p = net.params.bind(&tape);
        let s = net.encode_static(&p, &Mask::all(3), &Matrix::ones(3, 2)).unwrap();
        for r in 0..3 {
            assert_eq!(s.value().row(r), &[0.1, 0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn fill_gaps_selects_rows() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64));
        let z = tape.leaf(Matrix::from_fn(3, 2, |r, c| -((r * 2 + c) as f64) - 10.0));
        for mask in [Mask::all(3), Mask::none(3), build_mask(&[1], 3).unwrap()] {
            let keep = tape.leaf(mask.broadcast(2));
            let fill = tape.leaf(mask.complement().broadcast(2));
            let out = FunsNet::fill_gaps(x, z, keep, fill).unwrap();
            for r in 0..3 {
                let want = if mask.contains(r) { x.value().row(r).to_vec() } else { z.value().row(r).to_vec() };
                assert_eq!(out.value().row(r), &want[..]);
            }
        }
    }

    #[test]
    fn gate_ranges() {
        let (net, _, mg) = setup(5);
        let tape = Tape::new();
        let p = net.params.bind(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = tape.leaf(Matrix::from_fn(5, 6, |r, c| (r as f64 - c as f64) * 0.7));
        let h = tape.leaf(Matrix::from_fn(5, 4, |r, c| ((r * c) % 3) as f64 - 1.0));
        let out = net.gru_step(&p, f, h, &mg, Mode::Eval, &mut rng).unwrap();
        for v in out.reset.value().as_slice().iter().chain(out.update.value().as_slice()) {
            assert!(*v > 0.0 && *v < 1.0);
        }
        assert!(out.candidate.value().as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn predictions_cover_every_step() {
        let (net, g, mg) = setup(5);
        let mask = build_mask(&[0, 2, 4], 5).unwrap();
        let w = window(3, 5);
        let preds = net.predict_sequence(&w, &mask, g.labels(), &mg).unwrap();
        assert_eq!(preds.len(), 3);
        assert!(preds.iter().all(|y| y.shape() == (5, 2)));
        let one = net.predict_sequence(&w[..1], &mask, g.labels(), &mg).unwrap();
        assert_eq!(one[0], preds[0]);
        assert!(net.predict_sequence(&[], &mask, g.labels(), &mg).is_err());
    }

    #[test]
    fn eval_tape_paths_agree() {
        let (net, g, mg) = setup(5);
        let mask = build_mask(&[1, 3], 5).unwrap();
        let w = window(4, 5);
        let tape = Tape::new();
        let p = net.params.bind(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one_tape = net.forward_sequence(&p, &w, &mask, g.labels(), &mg, Mode::Eval, &mut rng).unwrap();
        let per_step = net.predict_sequence(&w, &mask, g.labels(), &mg).unwrap();
        for (a, b) in one_tape.iter().zip(&per_step) {
            assert_eq!(&*a.value(), b);
        }
    }

    #[test]
    fn training_mode_is_stochastic_eval_is_not() {
        let (net, g, mg) = setup(5);
        let mask = Mask::all(5);
        let w = window(2, 5);
        let run = |mode, seed| {
            let tape = Tape::new();
            let p = net.params.bind(&tape);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys = net.forward_sequence(&p, &w, &mask, g.labels(), &mg, mode, &mut rng).unwrap();
            let v = ys[1].value().clone();
            v
        };
        assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 2));
        assert_ne!(run(Mode::Train, 1), run(Mode::Train, 2));
    }
}
