//! Masked-node training and evaluation.
//!
//! Training samples windows from the training range, hides every observed
//! node outside the input set, and scores predictions against targets
//! shifted by the horizon at *all* observed nodes. Evaluation feeds the whole
//! history with every observed node visible and scores only the held-out
//! nodes.

use std::ops::Range;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureSequence, Mask, TimeSplit};
use crate::model::{FunsNet, Mode};
use crate::mpnn::MessageGraph;
use crate::nn::{Adam, Bound, ParamStore};
use crate::tensor::{Matrix, Tape, Var};

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Steps between the last input and the predicted state.
    pub horizon: usize,
    pub window_len: usize,
    pub epochs: usize,
    pub windows_per_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Wall-clock limit checked at epoch boundaries.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon: 0,
            window_len: 24,
            epochs: 100,
            windows_per_epoch: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dropout: 0.25,
            hidden: 8,
            seed: 0,
            patience: 20,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::InvalidArgument("window_len must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {}", self.dropout)));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> Adam {
        let mut adam = Adam::new(self.learning_rate);
        adam.beta1 = self.beta1;
        adam.beta2 = self.beta2;
        adam.eps = self.adam_eps;
        adam
    }
}

/// Which time steps each phase uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// No temporal split: every phase spans the whole sequence and the
    /// phases are separated by nodes only.
    NodesOnly { total: usize },
    Temporal(TimeSplit),
}

impl Schedule {
    pub fn total(&self) -> usize {
        match *self {
            Schedule::NodesOnly { total } => total,
            Schedule::Temporal(s) => s.total,
        }
    }

    pub fn train(&self) -> Range<usize> {
        match *self {
            Schedule::NodesOnly { total } => 0..total,
            Schedule::Temporal(s) => s.train(),
        }
    }

    pub fn val(&self) -> Range<usize> {
        match *self {
            Schedule::NodesOnly { total } => 0..total,
            Schedule::Temporal(s) => s.val(),
        }
    }

    pub fn test(&self) -> Range<usize> {
        match *self {
            Schedule::NodesOnly { total } => 0..total,
            Schedule::Temporal(s) => s.test(),
        }
    }
}

/// Draws a window `[start, start + window_len)` whose horizon-shifted
/// targets stay inside `[0, train_len)`.
pub fn sample_window<R: Rng + ?Sized>(
    train_len: usize,
    window_len: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if window_len == 0 || window_len + horizon > train_len {
        return Err(Error::InvalidArgument(format!(
            "window of {window_len} steps with horizon {horizon} does not fit {train_len} training steps"
        )));
    }
    let start = rng.random_range(0..=train_len - window_len - horizon);
    Ok((start, start + window_len))
}

/// Mean squared error over `nodes` of every step, recorded on the tape.
///
/// Only the listed rows of the targets are read.
pub fn training_loss<'t>(preds: &[Var<'t>], targets: &[Matrix], nodes: &[usize]) -> Result<Var<'t>> {
    if nodes.is_empty() {
        return Err(Error::Empty("observed node set".into()));
    }
    let Some(first) = preds.first() else {
        return Err(Error::Empty("prediction window".into()));
    };
    if preds.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let tape = first.tape();
    let index: std::rc::Rc<[usize]> = nodes.into();
    let mut total: Option<Var<'t>> = None;
    let mut count = 0usize;
    for (pred, target) in preds.iter().zip(targets) {
        if pred.shape() != target.shape() {
            return Err(Error::Shape {
                op: "training_loss",
                left: pred.shape(),
                right: target.shape(),
            });
        }
        let d = target.cols();
        let mut rows = Matrix::zeros(nodes.len(), d);
        for (k, &i) in nodes.iter().enumerate() {
            rows.row_mut(k).copy_from_slice(target.row(i));
        }
        let diff = pred.gather_rows(index.clone())?.sub(tape.leaf(rows))?;
        let sq = diff.mul(diff)?.sum();
        total = Some(match total {
            Some(t) => t.add(sq)?,
            None => sq,
        });
        count += nodes.len() * d;
    }
    Ok(total.expect("non-empty window").scale(1.0 / count as f64))
}

/// Mean squared error restricted to `nodes`.
pub fn test_loss(preds: &[Matrix], targets: &[Matrix], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Empty("evaluation node set".into()));
    }
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(Error::Shape {
                op: "test_loss",
                left: p.shape(),
                right: t.shape(),
            });
        }
        for &i in nodes {
            for (a, b) in p.row(i).iter().zip(t.row(i)) {
                acc += (a - b) * (a - b);
            }
            count += p.cols();
        }
    }
    Ok(acc / count as f64)
}

/// A model trainable by [`train`].
pub trait Forecaster {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Training-mode predictions for each step of `range`, on one tape.
    fn forward_train<'t>(&self, p: &Bound<'t>, range: Range<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<Var<'t>>>;

    /// Evaluation-mode predictions for steps `0..end`, each using the whole
    /// history before it.
    fn predict(&self, end: usize) -> Result<Vec<Matrix>>;
}

/// The network paired with the data and masks of one experiment.
pub struct FunsForecaster<'a> {
    pub net: FunsNet,
    pub data: &'a FeatureSequence,
    pub labels: &'a Matrix,
    pub graph: MessageGraph,
    /// Nodes visible while training.
    pub train_mask: Mask,
    /// Nodes visible while evaluating.
    pub eval_mask: Mask,
}

impl Forecaster for FunsForecaster<'_> {
    fn params(&self) -> &ParamStore {
        &self.net.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.net.params
    }

    fn forward_train<'t>(&self, p: &Bound<'t>, range: Range<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<Var<'t>>> {
        let window = self.data.window(range);
        self.net
            .forward_sequence(p, &window, &self.train_mask, self.labels, &self.graph, Mode::Train, rng)
    }

    fn predict(&self, end: usize) -> Result<Vec<Matrix>> {
        let window = self.data.window(0..end);
        self.net.predict_sequence(&window, &self.eval_mask, self.labels, &self.graph)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub test_mse: f64,
    pub stopped_early: bool,
    pub budget_exhausted: bool,
}

impl TrainReport {
    /// One JSON object per epoch, then a summary object.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("plain record"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "test_mse": self.test_mse,
            "stopped_early": self.stopped_early,
            "budget_exhausted": self.budget_exhausted,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// Node sets used by [`train`].
pub struct Roles<'a> {
    /// Nodes whose targets enter the training loss.
    pub loss_nodes: &'a [usize],
    pub val_nodes: &'a [usize],
    pub test_nodes: &'a [usize],
}

/// Mean squared error of `model` on `nodes`, predicting from step 0 and
/// scoring predictions at steps `w` in `range.start..range.end - horizon`
/// against targets at `w + horizon`.
pub fn evaluate<M: Forecaster + ?Sized>(
    model: &M,
    targets: &FeatureSequence,
    nodes: &[usize],
    range: Range<usize>,
    horizon: usize,
) -> Result<f64> {
    let preds = model.predict(range.end.saturating_sub(horizon))?;
    score_range(&preds, targets, nodes, range, horizon)
}

/// Scores precomputed predictions the same way as [`evaluate`].
pub fn score_range(
    preds: &[Matrix],
    targets: &FeatureSequence,
    nodes: &[usize],
    range: Range<usize>,
    horizon: usize,
) -> Result<f64> {
    let end = range.end.checked_sub(horizon).filter(|&e| e > range.start).ok_or_else(|| {
        Error::Empty(format!("evaluation range {range:?} with horizon {horizon}"))
    })?;
    let target_steps: Vec<Matrix> = (range.start..end).map(|w| targets.step(w + horizon)).collect();
    test_loss(&preds[range.start..end], &target_steps, nodes)
}

/// Fits `model` with Adam, keeping the parameters of the epoch with the
/// lowest validation error.
pub fn train<M: Forecaster + ?Sized>(
    model: &mut M,
    targets: &FeatureSequence,
    roles: &Roles<'_>,
    schedule: Schedule,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if targets.steps() != schedule.total() {
        return Err(Error::InvalidArgument(format!(
            "schedule covers {} steps, data has {}",
            schedule.total(),
            targets.steps()
        )));
    }
    for (name, set) in [("loss", roles.loss_nodes), ("validation", roles.val_nodes), ("test", roles.test_nodes)] {
        if set.is_empty() {
            return Err(Error::Empty(format!("{name} node set")));
        }
    }
    let started = Instant::now();
    let budget = config.time_budget_secs.map(Duration::from_secs_f64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = config.optimizer();
    let train_len = schedule.train().end;
    let horizon = config.horizon;

    let mut best = model.params().clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut records = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let mut budget_exhausted = false;

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..config.windows_per_epoch {
            let (start, end) = sample_window(train_len, config.window_len, horizon, &mut rng)?;
            let tape = Tape::new();
            let p = model.params().bind(&tape);
            let preds = model.forward_train(&p, start..end, &mut rng)?;
            let window_targets = targets.window(start + horizon..end + horizon);
            let loss = training_loss(&preds, &window_targets, roles.loss_nodes)?;
            let value = loss.value().get(0, 0);
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            epoch_loss += value;
            let grads = tape.backward(loss)?;
            let grads = p.gradients(&grads);
            optimizer.step(model.params_mut(), &grads)?;
        }
        let train_loss = epoch_loss / config.windows_per_epoch.max(1) as f64;
        let val_mse = evaluate(model, targets, roles.val_nodes, schedule.val(), horizon)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_mse });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_mse:.5}");
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best = model.params().clone();
        } else if epoch - best_epoch >= config.patience {
            stopped_early = true;
            break;
        }
        if budget.is_some_and(|b| started.elapsed() > b) {
            log::warn!("time budget exhausted after epoch {epoch}");
            budget_exhausted = true;
            break;
        }
    }

    model.params_mut().assign(&best)?;
    let test_mse = evaluate(model, targets, roles.test_nodes, schedule.test(), horizon)?;
    Ok(TrainReport {
        epochs: records,
        best_epoch,
        best_val_mse: best_val,
        test_mse,
        stopped_early,
        budget_exhausted,
    })
}
