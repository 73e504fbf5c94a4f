//! Seeded sweeps over observed shares, seeds and horizons.
//!
//! Each `(share, seed)` pair draws one node partition that every model and
//! horizon reuses. Random streams are derived from the cell coordinates by a
//! counter-based mix (see [`sub_seed`]), so a cell's result does not depend
//! on which other cells run or in what order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    constant_predictions, impute_series, mean_predict, GprConfig, Imputer, Lstm, LstmForecaster,
};
use crate::data::{generate_synthetic, load_csv_dataset, zscore, CsvPaths, DatasetBundle, SyntheticConfig};
use crate::error::{Error, Result};
use crate::graph::{split_nodes, FeatureSequence, Mask, NodePartition, SensorGraph, TimeSplit};
use crate::model::{FunsConfig, FunsNet};
use crate::mpnn::MessageGraph;
use crate::tensor::Matrix;
use crate::train::{score_range, train, FunsForecaster, Roles, Schedule, TrainConfig};

/// Column order of result files.
pub const RESULT_HEADER: [&str; 7] = ["model", "share", "horizon", "seed", "val_mse", "test_mse", "wall_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FunsN,
    FunsNNoLabels,
    Mean,
    Knn,
    Gpr,
    KnnLstm,
    GprLstm,
    AllObservedBound,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::FunsN,
        ModelKind::FunsNNoLabels,
        ModelKind::Mean,
        ModelKind::Knn,
        ModelKind::Gpr,
        ModelKind::KnnLstm,
        ModelKind::GprLstm,
        ModelKind::AllObservedBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FunsN => "funs_n",
            ModelKind::FunsNNoLabels => "funs_n_no_labels",
            ModelKind::Mean => "mean",
            ModelKind::Knn => "knn",
            ModelKind::Gpr => "gpr",
            ModelKind::KnnLstm => "knn_lstm",
            ModelKind::GprLstm => "gpr_lstm",
            ModelKind::AllObservedBound => "all_observed_bound",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model {s:?}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    Csv(CsvSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub values: PathBuf,
    pub coords: PathBuf,
    pub labels: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Distance threshold for the graph when no edges file is given.
    pub delta: f64,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<DatasetBundle> {
        match self {
            DatasetSpec::Synthetic(cfg) => generate_synthetic(cfg),
            DatasetSpec::Csv(spec) => load_csv_dataset(
                &CsvPaths {
                    values: spec.values.clone(),
                    coords: spec.coords.clone(),
                    labels: spec.labels.clone(),
                    edges: spec.edges.clone(),
                },
                spec.delta,
            ),
        }
    }
}

/// A sweep definition, usually read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub shares: Vec<f64>,
    pub seeds: Vec<u64>,
    pub horizons: Vec<usize>,
    pub models: Vec<ModelKind>,
    /// Base training settings; `horizon` and `seed` are set per cell.
    pub train: TrainConfig,
    pub gpr: GprConfig,
    /// End of the training and validation ranges, as fractions of the
    /// sequence, for horizons above zero.
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// LSTM hidden width; defaults to the network's.
    pub lstm_hidden: Option<usize>,
    pub output: Option<PathBuf>,
    /// Record elapsed time per row. Off keeps result files reproducible.
    pub record_wall_time: bool,
    /// Worker threads.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic(SyntheticConfig::default()),
            shares: vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            seeds: vec![0, 1, 2, 3, 4],
            horizons: vec![0, 12],
            models: ModelKind::ALL.to_vec(),
            train: TrainConfig::default(),
            gpr: GprConfig::default(),
            train_fraction: 0.7,
            val_fraction: 0.85,
            lstm_hidden: None,
            output: None,
            record_wall_time: false,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.shares.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::InvalidArgument(format!("share {s} outside (0, 1)")));
        }
        for (what, empty) in [
            ("shares", self.shares.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("horizons", self.horizons.is_empty()),
            ("models", self.models.is_empty()),
        ] {
            if empty {
                return Err(Error::Empty(what.into()));
            }
        }
        if !(0.0 < self.train_fraction && self.train_fraction < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "time fractions {} / {} must satisfy 0 < train < val < 1",
                self.train_fraction, self.val_fraction
            )));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        self.gpr.validate()?;
        self.train.validate()
    }

    /// Cells in execution order.
    pub fn plan(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &share in &self.shares {
            for &seed in &self.seeds {
                for &horizon in &self.horizons {
                    cells.push(CellKey { share, seed, horizon });
                }
            }
        }
        cells
    }
}

/// Coordinates of one unit of work: every roster model is run on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellKey {
    pub share: f64,
    pub seed: u64,
    pub horizon: usize,
}

/// Random stream tags for [`sub_seed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Partition = 1,
    Init = 2,
    Train = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one random stream of one cell: SplitMix64 folded over the base
/// seed, the share in millionths, the horizon and the stream tag. Partitions
/// pass horizon 0 so that all horizons share them.
pub fn sub_seed(seed: u64, share: f64, horizon: usize, stream: Stream) -> u64 {
    let share_code = (share * 1e6).round() as u64;
    [share_code, horizon as u64, stream as u64]
        .into_iter()
        .fold(splitmix64(seed), |acc, part| splitmix64(acc ^ part))
}

/// One line of a result file. Failed cells carry `NaN` errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub share: f64,
    pub horizon: usize,
    pub seed: u64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn is_failure(&self) -> bool {
        !(self.val_mse.is_finite() && self.test_mse.is_finite())
    }

    pub fn to_record(&self) -> [String; 7] {
        [
            self.model.clone(),
            format!("{}", self.share),
            self.horizon.to_string(),
            self.seed.to_string(),
            format!("{:?}", self.val_mse),
            format!("{:?}", self.test_mse),
            self.wall_ms.to_string(),
        ]
    }

    pub fn from_record(record: &csv::StringRecord) -> Result<Self> {
        if record.len() != RESULT_HEADER.len() {
            return Err(Error::Parse(format!("result row has {} fields", record.len())));
        }
        let num = |k: usize| -> Result<f64> {
            record[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("column {}: {:?}", RESULT_HEADER[k], &record[k])))
        };
        let int = |k: usize| -> Result<u64> {
            record[k]
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("column {}: {:?}", RESULT_HEADER[k], &record[k])))
        };
        Ok(ResultRow {
            model: record[0].to_string(),
            share: num(1)?,
            horizon: int(2)? as usize,
            seed: int(3)?,
            val_mse: num(4)?,
            test_mse: num(5)?,
            wall_ms: int(6)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// Messages of failed model runs.
    pub failures: Vec<String>,
}

impl ExperimentResult {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RESULT_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.to_record()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }
}

/// Data shared by all models of one cell.
pub struct CellData {
    pub partition: NodePartition,
    pub schedule: Schedule,
    /// Standardized features of every node.
    pub features: FeatureSequence,
    pub graph: SensorGraph,
}

/// Splits nodes and time for one cell and standardizes the features with
/// statistics from the observed nodes over the training range.
pub fn prepare_cell(bundle: &DatasetBundle, config: &ExperimentConfig, key: CellKey) -> Result<CellData> {
    let n = bundle.graph.n();
    let steps = bundle.features.steps();
    let partition = split_nodes(n, key.share, sub_seed(key.seed, key.share, 0, Stream::Partition))?;
    let schedule = if key.horizon == 0 {
        Schedule::NodesOnly { total: steps }
    } else {
        Schedule::Temporal(TimeSplit::from_fractions(steps, config.train_fraction, config.val_fraction)?)
    };
    let (features, _) = zscore(&bundle.features, schedule.train(), &partition.observed())?;
    Ok(CellData {
        partition,
        schedule,
        features,
        graph: bundle.graph.clone(),
    })
}

/// Validation and test error of one model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub val_mse: f64,
    pub test_mse: f64,
}

fn score_fixed(preds: &[Matrix], cell: &CellData, horizon: usize) -> Result<Scores> {
    let s = &cell.schedule;
    Ok(Scores {
        val_mse: score_range(preds, &cell.features, &cell.partition.v_val, s.val(), horizon)?,
        test_mse: score_range(preds, &cell.features, &cell.partition.v_test, s.test(), horizon)?,
    })
}

/// Trains or fits `model` on one cell and scores it.
pub fn run_model(model: ModelKind, cell: &CellData, config: &ExperimentConfig, key: CellKey) -> Result<Scores> {
    let part = &cell.partition;
    let observed = part.observed();
    let horizon = key.horizon;
    let mut train_cfg = config.train.clone();
    train_cfg.horizon = horizon;
    train_cfg.seed = sub_seed(key.seed, key.share, horizon, Stream::Train);
    let init_seed = sub_seed(key.seed, key.share, horizon, Stream::Init);
    let d = cell.features.d();
    let steps = cell.features.steps();
    let roles = Roles {
        loss_nodes: &observed,
        val_nodes: &part.v_val,
        test_nodes: &part.v_test,
    };

    match model {
        ModelKind::FunsN | ModelKind::FunsNNoLabels | ModelKind::AllObservedBound => {
            let labels = if model == ModelKind::FunsNNoLabels {
                Matrix::ones(cell.graph.n(), 1)
            } else {
                cell.graph.labels().clone()
            };
            let net = FunsNet::new(FunsConfig::new(d, labels.cols(), train_cfg.hidden, train_cfg.dropout), init_seed)?;
            let (train_mask, eval_mask, loss_nodes) = if model == ModelKind::AllObservedBound {
                (Mask::all(part.n()), Mask::all(part.n()), (0..part.n()).collect())
            } else {
                (part.input_mask(), part.observed_mask(), observed.clone())
            };
            let mut forecaster = FunsForecaster {
                net,
                data: &cell.features,
                labels: &labels,
                graph: MessageGraph::new(&cell.graph),
                train_mask,
                eval_mask,
            };
            let roles = Roles {
                loss_nodes: &loss_nodes,
                ..roles
            };
            let report = train(&mut forecaster, &cell.features, &roles, cell.schedule, &train_cfg)?;
            Ok(Scores {
                val_mse: report.best_val_mse,
                test_mse: report.test_mse,
            })
        }
        ModelKind::Mean => {
            let mean = mean_predict(&cell.features, cell.schedule.train(), &observed)?;
            score_fixed(&constant_predictions(&mean, part.n(), steps), cell, horizon)
        }
        ModelKind::Knn | ModelKind::Gpr => {
            let imputed = impute_series(&cell.features, &part.observed_mask(), &cell.graph, imputer(model, config))?;
            let preds: Vec<Matrix> = (0..steps).map(|t| imputed.step(t)).collect();
            score_fixed(&preds, cell, horizon)
        }
        ModelKind::KnnLstm | ModelKind::GprLstm => {
            let method = imputer(model, config);
            let train_inputs = impute_series(&cell.features, &part.input_mask(), &cell.graph, method)?;
            let eval_inputs = impute_series(&cell.features, &part.observed_mask(), &cell.graph, method)?;
            let hidden = config.lstm_hidden.unwrap_or(train_cfg.hidden);
            let mut forecaster = LstmForecaster {
                lstm: Lstm::new(d, hidden, init_seed)?,
                train_inputs: &train_inputs,
                eval_inputs: &eval_inputs,
            };
            let report = train(&mut forecaster, &cell.features, &roles, cell.schedule, &train_cfg)?;
            Ok(Scores {
                val_mse: report.best_val_mse,
                test_mse: report.test_mse,
            })
        }
    }
}

fn imputer(model: ModelKind, config: &ExperimentConfig) -> Imputer {
    match model {
        ModelKind::Gpr | ModelKind::GprLstm => Imputer::Gpr(config.gpr),
        _ => Imputer::Knn,
    }
}

fn run_cell(bundle: &DatasetBundle, config: &ExperimentConfig, key: CellKey) -> (Vec<ResultRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let failed_row = |model: ModelKind| ResultRow {
        model: model.name().to_string(),
        share: key.share,
        horizon: key.horizon,
        seed: key.seed,
        val_mse: f64::NAN,
        test_mse: f64::NAN,
        wall_ms: 0,
    };
    let cell = match prepare_cell(bundle, config, key) {
        Ok(c) => c,
        Err(e) => {
            for &m in &config.models {
                failures.push(format!("{m} share={} seed={} horizon={}: {e}", key.share, key.seed, key.horizon));
                rows.push(failed_row(m));
            }
            return (rows, failures);
        }
    };
    log::info!(
        "cell share={} seed={} horizon={} partition={:016x}",
        key.share,
        key.seed,
        key.horizon,
        cell.partition.fingerprint()
    );
    for &model in &config.models {
        let started = Instant::now();
        let outcome = run_model(model, &cell, config, key);
        let wall_ms = if config.record_wall_time { started.elapsed().as_millis() as u64 } else { 0 };
        match outcome {
            Ok(s) => {
                log::info!("  {model}: val {:.4} test {:.4}", s.val_mse, s.test_mse);
                rows.push(ResultRow {
                    model: model.name().to_string(),
                    share: key.share,
                    horizon: key.horizon,
                    seed: key.seed,
                    val_mse: s.val_mse,
                    test_mse: s.test_mse,
                    wall_ms,
                })
            }
            Err(e) => {
                log::error!("  {model}: {e}");
                failures.push(format!("{model} share={} seed={} horizon={}: {e}", key.share, key.seed, key.horizon));
                rows.push(ResultRow { wall_ms, ..failed_row(model) });
            }
        }
    }
    (rows, failures)
}

/// Runs every cell of the sweep. Rows are appended to `config.output` as
/// each cell finishes; with one job the file order equals the plan order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let bundle = config.dataset.load()?;
    run_on_bundle(config, &bundle)
}

/// [`run_experiment`] on an already loaded dataset.
pub fn run_on_bundle(config: &ExperimentConfig, bundle: &DatasetBundle) -> Result<ExperimentResult> {
    config.validate()?;
    let cells = config.plan();
    let mut writer = match &config.output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
            w.write_record(RESULT_HEADER).map_err(|e| Error::Parse(e.to_string()))?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut result = ExperimentResult::default();
    let mut append = |rows: Vec<ResultRow>, failures: Vec<String>, result: &mut ExperimentResult| -> Result<()> {
        if let Some(w) = writer.as_mut() {
            for r in &rows {
                w.write_record(r.to_record()).map_err(|e| Error::Parse(e.to_string()))?;
            }
            w.flush()?;
        }
        result.rows.extend(rows);
        result.failures.extend(failures);
        Ok(())
    };

    if config.jobs == 1 {
        for &key in &cells {
            let (rows, failures) = run_cell(bundle, config, key);
            append(rows, failures, &mut result)?;
        }
        return Ok(result);
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..config.jobs.min(cells.len()) {
            let tx = tx.clone();
            let (next, cells) = (&next, &cells);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&key) = cells.get(k) else { break };
                if tx.send(run_cell(bundle, config, key)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (rows, failures) in rx {
            append(rows, failures, &mut result)?;
        }
        Ok(())
    })?;
    Ok(result)
}

/// Text rendering of the cell plan.
pub fn describe_plan(config: &ExperimentConfig) -> String {
    let cells = config.plan();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} cells x {} models = {} runs",
        cells.len(),
        config.models.len(),
        cells.len() * config.models.len()
    );
    let roster: Vec<&str> = config.models.iter().map(|m| m.name()).collect();
    for c in cells {
        let _ = writeln!(
            out,
            "share={} seed={} horizon={} partition_seed={:016x} models={}",
            c.share,
            c.seed,
            c.horizon,
            sub_seed(c.seed, c.share, 0, Stream::Partition),
            roster.join(",")
        );
    }
    out
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(RESULT_HEADER) {
        return Err(Error::Parse(format!("{}: unexpected header {header:?}", path.display())));
    }
    reader
        .records()
        .map(|r| ResultRow::from_record(&r.map_err(|e| Error::Parse(e.to_string()))?))
        .collect()
}

/// Test-error statistics of one `(model, share, horizon)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub share: f64,
    pub horizon: usize,
    /// Seeds with a finite result.
    pub count: usize,
    /// Seeds that failed or are absent from the file.
    pub missing: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

/// Groups rows by `(model, share, horizon)` and reports the mean and
/// standard deviation of the test error over seeds. A group lacking some
/// seed that appears elsewhere in the file is flagged as missing.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut shares: Vec<f64> = rows.iter().map(|r| r.share).collect();
    shares.sort_by(|a, b| b.total_cmp(a));
    shares.dedup();
    let mut horizons: Vec<usize> = rows.iter().map(|r| r.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();

    let mut groups: BTreeMap<(usize, u64, usize), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_failure()) {
        let m = models.iter().position(|&m| m == r.model).expect("collected above");
        groups.entry((m, r.share.to_bits(), r.horizon)).or_default().push(r.test_mse);
    }
    let mut out = Vec::new();
    for (m, model) in models.iter().enumerate() {
        for &horizon in &horizons {
            for &share in &shares {
                let values = groups.get(&(m, share.to_bits(), horizon)).cloned().unwrap_or_default();
                let count = values.len();
                let mean = if count > 0 { values.iter().sum::<f64>() / count as f64 } else { f64::NAN };
                let std = if count > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
                } else if count == 1 {
                    0.0
                } else {
                    f64::NAN
                };
                out.push(SummaryRow {
                    model: model.to_string(),
                    share,
                    horizon,
                    count,
                    missing: seeds.len().saturating_sub(count),
                    mean,
                    std,
                });
            }
        }
    }
    out
}

/// Aligned text table of a summary.
pub fn render_summary(summary: &[SummaryRow]) -> String {
    let cells: Vec<[String; 6]> = summary
        .iter()
        .map(|s| {
            let stat = |v: f64| if v.is_finite() { format!("{v:.4}") } else { "-".into() };
            [
                s.model.clone(),
                format!("{}", s.share),
                s.horizon.to_string(),
                stat(s.mean),
                stat(s.std),
                if s.missing > 0 { format!("{} (missing {})", s.count, s.missing) } else { s.count.to_string() },
            ]
        })
        .collect();
    let header = ["model", "share", "horizon", "mean_mse", "std_mse", "seeds"];
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cols: &[&str], out: &mut String| {
        let padded: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header, &mut out);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}

pub fn write_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let io = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["model", "share", "horizon", "count", "missing", "mean_mse", "std_mse"])
        .map_err(io)?;
    for s in summary {
        w.write_record([
            s.model.clone(),
            format!("{}", s.share),
            s.horizon.to_string(),
            s.count.to_string(),
            s.missing.to_string(),
            format!("{:?}", s.mean),
            format!("{:?}", s.std),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the sweep results to a writer as CSV.
pub fn write_results<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER).map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.write_record(r.to_record()).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic(SyntheticConfig {
                n_nodes: 16,
                steps: 60,
                ..SyntheticConfig::default()
            }),
            shares: vec![0.5],
            seeds: vec![0],
            horizons: vec![0],
            models: vec![ModelKind::Mean],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sub_seeds_depend_on_every_coordinate() {
        let base = sub_seed(0, 0.5, 0, Stream::Init);
        assert_eq!(base, sub_seed(0, 0.5, 0, Stream::Init));
        for other in [
            sub_seed(1, 0.5, 0, Stream::Init),
            sub_seed(0, 0.4, 0, Stream::Init),
            sub_seed(0, 0.5, 12, Stream::Init),
            sub_seed(0, 0.5, 0, Stream::Train),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn smallest_sweep_has_one_row() {
        let result = run_experiment(&small_config()).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert!(result.all_succeeded());
        assert_eq!(result.rows[0].model, "mean");
        assert!(result.rows[0].test_mse.is_finite());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = small_config();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = "shares = [0.3]\nmodels = [\"knn\", \"funs_n\"]\n[dataset]\nkind = \"synthetic\"\nn_nodes = 20\n";
        let parsed = ExperimentConfig::from_toml(partial).unwrap();
        assert_eq!(parsed.models, vec![ModelKind::Knn, ModelKind::FunsN]);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            ExperimentConfig { shares: vec![1.0], ..small_config() },
            ExperimentConfig { seeds: vec![], ..small_config() },
            ExperimentConfig { models: vec![], ..small_config() },
            ExperimentConfig { train_fraction: 0.9, ..small_config() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    fn row(model: &str, share: f64, seed: u64, test: f64) -> ResultRow {
        ResultRow {
            model: model.into(),
            share,
            horizon: 0,
            seed,
            val_mse: test,
            test_mse: test,
            wall_ms: 0,
        }
    }

    #[test]
    fn summary_matches_hand_computation() {
        let rows = [row("a", 0.5, 0, 1.0), row("a", 0.5, 1, 2.0), row("a", 0.5, 2, 4.0)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert!((s[0].mean - 7.0 / 3.0).abs() < 1e-15);
        let var = ((1.0f64 - 7.0 / 3.0).powi(2) + (2.0f64 - 7.0 / 3.0).powi(2) + (4.0f64 - 7.0 / 3.0).powi(2)) / 2.0;
        assert!((s[0].std - var.sqrt()).abs() < 1e-15);
        assert_eq!((s[0].count, s[0].missing), (3, 0));
    }

    #[test]
    fn summary_marks_missing_cells() {
        let rows = [row("a", 0.5, 0, 1.0), row("a", 0.5, 1, f64::NAN), row("b", 0.3, 0, 2.0)];
        let s = summarize(&rows);
        let find = |m: &str, share: f64| s.iter().find(|r| r.model == m && r.share == share).unwrap();
        assert_eq!(find("a", 0.5).missing, 1);
        assert_eq!(find("a", 0.5).std, 0.0);
        assert_eq!(find("a", 0.3).count, 0);
        assert!(find("a", 0.3).mean.is_nan());
        let text = render_summary(&s);
        assert!(text.contains("missing"));
    }

    #[test]
    fn result_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![row("funs_n", 0.7, 3, 0.123456789), row("mean", 0.1, 0, f64::NAN)];
        write_results(&rows, std::fs::File::create(&path).unwrap()).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].is_failure());
    }
}
