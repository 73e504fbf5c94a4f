use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::FeatureSequence;
use crate::nn::{Bound, Linear, ParamId, ParamStore};
use crate::tensor::{Matrix, Tape, Var};
use crate::train::Forecaster;

#[derive(Clone, Copy, Debug)]
struct Gate {
    input: ParamId,
    hidden: ParamId,
    bias: ParamId,
}

/// Long short-term memory with a linear readout. Rows are independent
/// series that share weights.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub params: ParamStore,
    pub d: usize,
    pub hidden: usize,
    input_gate: Gate,
    forget_gate: Gate,
    output_gate: Gate,
    candidate: Gate,
    pub readout: Linear,
}

/// Gate activations of one step.
pub struct LstmStep<'t> {
    pub input: Var<'t>,
    pub forget: Var<'t>,
    pub output: Var<'t>,
    pub candidate: Var<'t>,
    pub cell: Var<'t>,
    pub hidden: Var<'t>,
}

impl Lstm {
    pub fn new(d: usize, hidden: usize, seed: u64) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!("LSTM widths d={d}, h={hidden}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut gate = |name: &str, params: &mut ParamStore| Gate {
            input: params.uniform(format!("lstm.{name}.input"), d, hidden, bound, &mut rng),
            hidden: params.uniform(format!("lstm.{name}.hidden"), hidden, hidden, bound, &mut rng),
            bias: params.add(format!("lstm.{name}.bias"), Matrix::zeros(1, hidden)),
        };
        let input_gate = gate("i", &mut params);
        let forget_gate = gate("f", &mut params);
        let output_gate = gate("o", &mut params);
        let candidate = gate("c", &mut params);
        let readout = Linear::new(&mut params, "lstm.readout", hidden, d, &mut rng);
        Ok(Lstm {
            params,
            d,
            hidden,
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            readout,
        })
    }

    fn pre<'t>(p: &Bound<'t>, g: Gate, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.var(g.input))?
            .add(h.matmul(p.var(g.hidden))?)?
            .add_row(p.var(g.bias))
    }

    pub fn cell_step<'t>(&self, p: &Bound<'t>, x: Var<'t>, h: Var<'t>, c: Var<'t>) -> Result<LstmStep<'t>> {
        if x.shape().1 != self.d {
            return Err(Error::Shape {
                op: "lstm",
                left: x.shape(),
                right: (x.shape().0, self.d),
            });
        }
        let input = Self::pre(p, self.input_gate, x, h)?.sigmoid();
        let forget = Self::pre(p, self.forget_gate, x, h)?.sigmoid();
        let output = Self::pre(p, self.output_gate, x, h)?.sigmoid();
        let candidate = Self::pre(p, self.candidate, x, h)?.tanh();
        let cell = forget.mul(c)?.add(input.mul(candidate)?)?;
        let hidden = output.mul(cell.tanh())?;
        Ok(LstmStep {
            input,
            forget,
            output,
            candidate,
            cell,
            hidden,
        })
    }

    /// Predictions for each step of `window`, starting from zero state.
    pub fn forward<'t>(&self, p: &Bound<'t>, window: &[Matrix]) -> Result<Vec<Var<'t>>> {
        let Some(first) = window.first() else {
            return Err(Error::Empty("input window".into()));
        };
        let tape = p.vars()[0].tape();
        let rows = first.rows();
        let mut h = tape.leaf(Matrix::zeros(rows, self.hidden));
        let mut c = tape.leaf(Matrix::zeros(rows, self.hidden));
        let mut out = Vec::with_capacity(window.len());
        for x in window {
            let step = self.cell_step(p, tape.leaf(x.clone()), h, c)?;
            h = step.hidden;
            c = step.cell;
            out.push(self.readout.forward(p, h)?);
        }
        Ok(out)
    }

    /// Evaluation predictions, one tape per step.
    pub fn predict(&self, window: &[Matrix]) -> Result<Vec<Matrix>> {
        let Some(first) = window.first() else {
            return Err(Error::Empty("input window".into()));
        };
        let rows = first.rows();
        let mut h = Matrix::zeros(rows, self.hidden);
        let mut c = Matrix::zeros(rows, self.hidden);
        let mut out = Vec::with_capacity(window.len());
        for x in window {
            let tape = Tape::new();
            let p = self.params.bind(&tape);
            let step = self.cell_step(&p, tape.leaf(x.clone()), tape.leaf(h), tape.leaf(c))?;
            out.push(self.readout.forward(&p, step.hidden)?.value().clone());
            h = step.hidden.value().clone();
            c = step.cell.value().clone();
        }
        Ok(out)
    }
}

/// An LSTM paired with imputed input series: one for training, filled from
/// the input nodes, and one for evaluation, filled from all observed nodes.
pub struct LstmForecaster<'a> {
    pub lstm: Lstm,
    pub train_inputs: &'a FeatureSequence,
    pub eval_inputs: &'a FeatureSequence,
}

impl Forecaster for LstmForecaster<'_> {
    fn params(&self) -> &ParamStore {
        &self.lstm.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.lstm.params
    }

    fn forward_train<'t>(&self, p: &Bound<'t>, range: Range<usize>, _rng: &mut ChaCha8Rng) -> Result<Vec<Var<'t>>> {
        self.lstm.forward(p, &self.train_inputs.window(range))
    }

    fn predict(&self, end: usize) -> Result<Vec<Matrix>> {
        self.lstm.predict(&self.eval_inputs.window(0..end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> Vec<Matrix> {
        (0..5).map(|t| Matrix::from_fn(3, 2, |r, c| ((t + r * 2 + c) % 5) as f64 - 2.0)).collect()
    }

    #[test]
    fn zero_weights_give_readout_bias() {
        let mut lstm = Lstm::new(2, 4, 1).unwrap();
        lstm.params.values_mut().iter_mut().for_each(|m| *m = Matrix::zeros(m.rows(), m.cols()));
        *lstm.params.get_mut(lstm.readout.bias) = Matrix::from_rows(&[vec![0.5, -1.5]]);
        for y in lstm.predict(&window()).unwrap() {
            for r in 0..3 {
                assert_eq!(y.row(r), &[0.5, -1.5]);
            }
        }
    }

    #[test]
    fn gate_ranges() {
        let lstm = Lstm::new(2, 4, 2).unwrap();
        let tape = Tape::new();
        let p = lstm.params.bind(&tape);
        let x = tape.leaf(Matrix::from_fn(3, 2, |r, c| (r as f64 - 1.0) * 5.0 + c as f64));
        let h = tape.leaf(Matrix::filled(3, 4, 0.3));
        let c = tape.leaf(Matrix::filled(3, 4, -0.2));
        let s = lstm.cell_step(&p, x, h, c).unwrap();
        for gate in [s.input, s.forget, s.output] {
            assert!(gate.value().as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(s.candidate.value().as_slice().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn rows_are_independent_and_paths_agree() {
        let lstm = Lstm::new(2, 3, 3).unwrap();
        let w = window();
        let all = lstm.predict(&w).unwrap();
        let tape = Tape::new();
        let p = lstm.params.bind(&tape);
        let taped = lstm.forward(&p, &w).unwrap();
        for (a, b) in all.iter().zip(&taped) {
            assert!(a.max_abs_diff(&b.value()) < 1e-14);
        }
        let single: Vec<Matrix> = w.iter().map(|m| Matrix::from_rows(&[m.row(1).to_vec()])).collect();
        for (a, b) in all.iter().zip(lstm.predict(&single).unwrap()) {
            assert!((a.get(1, 0) - b.get(0, 0)).abs() < 1e-14);
        }
        assert!(lstm.predict(&[]).is_err());
        assert!(lstm.predict(&[Matrix::zeros(2, 3)]).is_err());
    }
}
