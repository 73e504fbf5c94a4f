//! Parameter storage, dense layers, the Adam optimizer, and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Matrix, Tape, Var};

/// Index of a matrix in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named learnable matrices, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!name.contains(char::is_whitespace), "parameter names cannot contain whitespace");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Registers a matrix drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let m = Matrix::from_fn(rows, cols, |_, _| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 });
        self.add(name, m)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|m| tape.leaf(m.clone())).collect(),
        }
    }

    /// Text checkpoint. Floats are written in shortest round-trip form, so
    /// reading the text back restores every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::from("funs-params v1\n");
        let _ = writeln!(out, "{}", self.len());
        for (name, m) in self.names.iter().zip(&self.values) {
            let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
            let line: Vec<String> = m.as_slice().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |what: &str| Error::Parse(format!("checkpoint: {what}"));
        if lines.next() != Some("funs-params v1") {
            return Err(bad("missing header"));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing count"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut parts = head.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("missing name"))?;
            let dims: Vec<usize> = parts.map(|p| p.parse().map_err(|_| bad("bad shape"))).collect::<Result<_>>()?;
            let [rows, cols] = dims[..] else {
                return Err(bad("bad shape"));
            };
            let body = lines.next().ok_or_else(|| bad("truncated"))?;
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad("bad value")))
                .collect::<Result<_>>()?;
            store.add(name, Matrix::from_vec(rows, cols, values)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidArgument("parameter names differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
            *a = b.clone();
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Wraps vars recorded in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradient for every parameter, zeros where unreachable.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(d_in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), d_in, d_out, bound, rng);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, d_out));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.var(self.weight))?.add_row(p.var(self.bias))
    }
}

/// Adaptive moment estimation.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: i32,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if self.first.is_empty() {
            self.first = store.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for (k, (param, g)) in store.values_mut().iter_mut().zip(grads).enumerate() {
            if param.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    left: param.shape(),
                    right: g.shape(),
                });
            }
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (idx, (p, &gi)) in param.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * gi;
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[idx] / c1;
                let v_hat = v[idx] / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        Linear::new(&mut s, "a", 3, 2, &mut rng);
        s.add("odd", Matrix::from_rows(&[vec![0.1, 1e-300, -2.5e17, std::f64::consts::PI]]));
        s
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = store();
        let back = ParamStore::from_text(&s.to_text()).unwrap();
        assert_eq!(s.names(), back.names());
        for (a, b) in s.values().iter().zip(back.values()) {
            let (a, b): (Vec<u64>, Vec<u64>) = (
                a.as_slice().iter().map(|v| v.to_bits()).collect(),
                b.as_slice().iter().map(|v| v.to_bits()).collect(),
            );
            assert_eq!(a, b);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ParamStore::from_text("nope").is_err());
        assert!(ParamStore::from_text("funs-params v1\n1\nw 1 2\n0.5\n").is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = store();
        let before = s.clone();
        let zeros: Vec<Matrix> = s.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        let mut opt = Adam::new(1e-3);
        opt.step(&mut s, &zeros).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn adam_zero_learning_rate_is_noop() {
        let mut s = store();
        let before = s.clone();
        let ones: Vec<Matrix> = s.values().iter().map(|m| Matrix::ones(m.rows(), m.cols())).collect();
        let mut opt = Adam::new(0.0);
        opt.step(&mut s, &ones).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::filled(1, 1, 1.0));
        let mut opt = Adam::new(0.1);
        opt.step(&mut s, &[Matrix::filled(1, 1, 3.0)]).unwrap();
        assert!((s.get(id).get(0, 0) - 0.9).abs() < 1e-9);
    }
}
