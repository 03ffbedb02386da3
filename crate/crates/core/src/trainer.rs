//! The training protocol: shuffled minibatch Adam, per-epoch validation with
//! the plateau rule, early stop at perfect validation accuracy, an epoch cap,
//! and best-of-N seed selection.
//!
//! The test set is scored after every epoch so accuracy curves can be drawn,
//! but nothing computed from it feeds back into training or selection.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::datagen::{Example, Regimen};
use crate::error::{Error, Result};
use crate::model::{self, init_model, BatchStats, LstmParams, LstmWeights, ModelConfig};
use crate::numkit::{Matrix, RandomStream};
use crate::optim::{adam_step, AdamState, PlateauState};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub n_seeds: usize,
    pub validation_frac: f64,
    pub shuffle_each_epoch: bool,
    /// Global gradient-norm clip; off by default. With it off, the loss can
    /// spike once memorization takes off, and the plateau rule then halves the
    /// rate until training stalls; the desk-scale preset clips at 1.0.
    pub clip: Option<f64>,
    /// Epochs without validation improvement before the rate is halved.
    pub patience: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 240,
            batch_size: 64,
            initial_lr: crate::optim::DEFAULT_LR,
            n_seeds: 3,
            validation_frac: 0.05,
            shuffle_each_epoch: true,
            clip: None,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config("clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// The three splits a run sees.
#[derive(Clone, Copy, Debug)]
pub struct Datasets<'a> {
    pub train: &'a [Example],
    pub validation: &'a [Example],
    pub test: &'a [Example],
}

impl Datasets<'_> {
    /// All splits non-empty, one shared sequence length, ids below `vocab_size`.
    pub fn check(&self, vocab_size: usize) -> Result<usize> {
        let n = self
            .train
            .first()
            .map(Example::len)
            .ok_or_else(|| Error::Data("empty training set".into()))?;
        for (name, split) in [("train", self.train), ("validation", self.validation), ("test", self.test)] {
            if split.is_empty() {
                return Err(Error::Data(format!("empty {name} set")));
            }
            for ex in split {
                if ex.len() != n {
                    return Err(Error::Data(format!(
                        "{name} set has length {} but training length is {n}",
                        ex.len()
                    )));
                }
                if let Some(&t) = ex.tokens.iter().chain([&ex.label]).find(|&&t| t as usize >= vocab_size) {
                    return Err(Error::Data(format!("{name} set uses id {t} but V={vocab_size}")));
                }
            }
        }
        Ok(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PerfectValidation,
    EpochCap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::PerfectValidation => "perfect_validation",
            StopReason::EpochCap => "epoch_cap",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub stop_reason: StopReason,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("a finished run has at least one epoch")
    }

    pub fn final_val_acc(&self) -> f64 {
        self.last().val_acc
    }

    pub fn final_val_loss(&self) -> f64 {
        self.last().val_loss
    }

    /// `epoch,train_loss,val_loss,val_acc,test_acc,lr`
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,test_acc,lr\n");
        for m in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.epoch, m.train_loss, m.val_loss, m.val_acc, m.test_acc, m.lr
            ));
        }
        out
    }
}

/// A finished run and the parameters it ended with.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub record: RunRecord,
    pub params: LstmParams,
}

/// Mean loss and accuracy of `params` over `data`.
pub fn evaluate_stats(params: &LstmParams, data: &[Example]) -> Result<BatchStats> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut total = BatchStats::default();
    for chunk in data.chunks(EVAL_CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        total += model::batch_stats(params, &refs)?;
    }
    Ok(total)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn evaluate(params: &LstmParams, data: &[Example]) -> Result<f64> {
    let s = evaluate_stats(params, data)?;
    Ok(s.correct as f64 / s.count as f64)
}

fn clip_global_norm(grad: &mut LstmWeights, max_norm: f64) {
    let norm = grad.norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
}

/// A training run that can be advanced epoch by epoch and checkpointed.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    params: LstmParams,
    adam: AdamState,
    plateau: PlateauState,
    history: Vec<EpochMetrics>,
    stop: Option<StopReason>,
}

impl Trainer {
    pub fn new(config: &TrainConfig, model_config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = init_model(model_config)?;
        let adam = AdamState::new(model_config.hidden, config.initial_lr);
        Ok(Self {
            config: config.clone(),
            params,
            adam,
            plateau: PlateauState {
                patience: config.patience,
                ..Default::default()
            },
            history: Vec::new(),
            stop: None,
        })
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn seed(&self) -> u64 {
        self.params.config().seed
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr
    }

    pub fn plateau(&self) -> &PlateauState {
        &self.plateau
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn is_finished(&self) -> bool {
        self.stop.is_some()
    }

    fn epoch_order(&self, len: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        if self.config.shuffle_each_epoch {
            RandomStream::new(self.seed(), format!("trainer/shuffle/epoch-{epoch}")).shuffle(&mut order);
        }
        order
    }

    /// Train one epoch, score validation and test, apply the plateau rule and
    /// the stopping rules.
    pub fn run_epoch(&mut self, data: &Datasets<'_>) -> Result<&EpochMetrics> {
        if self.is_finished() {
            return Err(Error::Config("run already finished".into()));
        }
        data.check(self.params.vocab_size())?;
        let epoch = self.history.len() + 1;
        let lr = self.adam.lr;

        let order = self.epoch_order(data.train.len(), epoch);
        let mut train = BatchStats::default();
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data.train[i]).collect();
            let (stats, mut grad) = model::batch_loss_and_grad(&self.params, &batch)?;
            if !stats.loss_sum.is_finite() || !grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {epoch} (seed {})",
                    self.seed()
                )));
            }
            if let Some(c) = self.config.clip {
                clip_global_norm(&mut grad, c);
            }
            adam_step(&mut self.params.weights, &grad, &mut self.adam)?;
            train += stats;
        }

        let val = evaluate_stats(&self.params, data.validation)?;
        let test_acc = evaluate(&self.params, data.test)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: train.loss_sum / train.count as f64,
            val_loss: val.loss_sum / val.count as f64,
            val_acc: val.correct as f64 / val.count as f64,
            test_acc,
            lr,
        };
        if !metrics.val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        self.adam.lr = self.plateau.update(metrics.val_loss, lr);
        if metrics.val_acc >= 1.0 {
            self.stop = Some(StopReason::PerfectValidation);
        } else if epoch >= self.config.max_epochs {
            self.stop = Some(StopReason::EpochCap);
        }
        self.history.push(metrics);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(self, checkpoint: Option<PathBuf>) -> Result<TrainedRun> {
        let stop_reason = self
            .stop
            .ok_or_else(|| Error::Config("run has not finished".into()))?;
        Ok(TrainedRun {
            record: RunRecord {
                seed: self.seed(),
                epochs: self.history,
                stop_reason,
                checkpoint,
            },
            params: self.params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT,
            model: self.params.config().clone(),
            train: self.config.clone(),
            adam_step_count: self.adam.step_count,
            adam_lr: self.adam.lr,
            adam_betas: (self.adam.beta1, self.adam.beta2),
            adam_eps: self.adam.eps,
            plateau: self.plateau.clone(),
            history: self.history.clone(),
            stop: self.stop,
        };
        let tensors: Vec<&[f64]> = self
            .params
            .weights
            .tensors()
            .into_iter()
            .chain(self.adam.m.tensors())
            .chain(self.adam.v.tensors())
            .chain([self.params.embedding().data()])
            .collect();
        write_checkpoint(path, &header, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut tensors) = read_checkpoint(path)?;
        if tensors.len() != 10 {
            return Err(Error::Data(format!("{}: expected 10 tensors, found {}", path.display(), tensors.len())));
        }
        let d = header.model.hidden;
        let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
            Matrix::from_vec(rows, cols, tensors.remove(0))
        };
        let mut weights = || -> Result<LstmWeights> {
            Ok(LstmWeights {
                w_x: take(4 * d, d)?,
                w_h: take(4 * d, d)?,
                b: take(1, 4 * d)?.into_vec(),
            })
        };
        let w = weights()?;
        let m = weights()?;
        let v = weights()?;
        let embedding = take(header.model.vocab_size, d)?;
        let params = LstmParams::from_parts(header.model.clone(), w, embedding)?;
        Ok(Self {
            config: header.train,
            params,
            adam: AdamState {
                m,
                v,
                step_count: header.adam_step_count,
                lr: header.adam_lr,
                beta1: header.adam_betas.0,
                beta2: header.adam_betas.1,
                eps: header.adam_eps,
            },
            plateau: header.plateau,
            history: header.history,
            stop: header.stop,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MEMLABCK";
const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: u32,
    model: ModelConfig,
    train: TrainConfig,
    adam_step_count: u64,
    adam_lr: f64,
    adam_betas: (f64, f64),
    adam_eps: f64,
    plateau: PlateauState,
    history: Vec<EpochMetrics>,
    stop: Option<StopReason>,
}

/// Layout: magic, u64 header length, JSON header, u32 tensor count, then per
/// tensor a u64 length and raw little-endian f64 values.
fn write_checkpoint(path: &Path, header: &CheckpointHeader, tensors: &[&[f64]]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e| Error::io(&tmp, e);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        let json = serde_json::to_vec(header).map_err(|e| Error::json(path, e))?;
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
        for t in tensors {
            w.write_all(&(t.len() as u64).to_le_bytes()).map_err(io)?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(u64buf) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| Error::json(path, e))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("{}: unsupported checkpoint format {}", path.display(), header.format)));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64buf).map_err(io)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes).map_err(io)?;
        tensors.push(
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    Ok((header, tensors))
}

/// Model parameters stored in a checkpoint.
pub fn load_params(path: &Path) -> Result<LstmParams> {
    Ok(Trainer::load(path)?.params)
}

/// Train one seed to completion.
pub fn train_run(config: &TrainConfig, model_config: &ModelConfig, data: &Datasets<'_>) -> Result<TrainedRun> {
    train_run_checkpointed(config, model_config, data, None)
}

/// As [`train_run`], saving state to `checkpoint` after every epoch and
/// resuming from it when the file already exists.
pub fn train_run_checkpointed(
    config: &TrainConfig,
    model_config: &ModelConfig,
    data: &Datasets<'_>,
    checkpoint: Option<&Path>,
) -> Result<TrainedRun> {
    data.check(model_config.vocab_size)?;
    let mut trainer = match checkpoint {
        Some(p) if p.exists() => {
            let t = Trainer::load(p)?;
            if t.params.config() != model_config {
                return Err(Error::Integrity(format!(
                    "{}: checkpoint was written for a different model configuration",
                    p.display()
                )));
            }
            if &t.config != config {
                return Err(Error::Integrity(format!(
                    "{}: checkpoint was written for a different training configuration",
                    p.display()
                )));
            }
            t
        }
        _ => Trainer::new(config, model_config)?,
    };
    while !trainer.is_finished() {
        let m = trainer.run_epoch(data)?;
        log::info!(
            "seed {} epoch {:>3} lr {:.2e} train_loss {:.4} val_loss {:.4} val_acc {:.4} test_acc {:.4}",
            model_config.seed,
            m.epoch,
            m.lr,
            m.train_loss,
            m.val_loss,
            m.val_acc,
            m.test_acc
        );
        if let Some(p) = checkpoint {
            trainer.save(p)?;
        }
    }
    trainer.finish(checkpoint.map(Path::to_path_buf))
}

/// All seeds' runs plus the index of the selected one.
#[derive(Clone, Debug)]
pub struct Selection {
    pub runs: Vec<TrainedRun>,
    pub best: usize,
    /// Test accuracy of the selected run's final parameters.
    pub test_acc: f64,
}

impl Selection {
    pub fn selected(&self) -> &TrainedRun {
        &self.runs[self.best]
    }
}

/// Index of the run with the highest final validation accuracy; ties go to
/// lower final validation loss, then lower seed.
pub fn select_best(records: &[RunRecord]) -> Option<usize> {
    (0..records.len()).min_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        rb.final_val_acc()
            .total_cmp(&ra.final_val_acc())
            .then(ra.final_val_loss().total_cmp(&rb.final_val_loss()))
            .then(ra.seed.cmp(&rb.seed))
    })
}

/// Seeds used by a multi-seed run starting at `base_seed`.
pub fn run_seeds(base_seed: u64, n_seeds: usize) -> Vec<u64> {
    (0..n_seeds as u64).map(|i| base_seed.wrapping_add(i)).collect()
}

/// Train `config.n_seeds` runs and keep the best by validation accuracy.
/// `model_for(seed)` gives each run's model configuration; `checkpoint_for`
/// optionally names each run's checkpoint file.
pub fn multi_seed_select(
    config: &TrainConfig,
    model_for: &dyn Fn(u64) -> ModelConfig,
    data: &Datasets<'_>,
    base_seed: u64,
    checkpoint_for: Option<&dyn Fn(u64) -> PathBuf>,
) -> Result<Selection> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.n_seeds);
    for seed in run_seeds(base_seed, config.n_seeds) {
        let path = checkpoint_for.map(|f| f(seed));
        runs.push(train_run_checkpointed(config, &model_for(seed), data, path.as_deref())?);
    }
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let best = select_best(&records).expect("at least one seed");
    let test_acc = evaluate(&runs[best].params, data.test)?;
    Ok(Selection { runs, best, test_acc })
}

/// One point of the sweep grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub regimen: Regimen,
    pub n: usize,
    pub hidden: usize,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.regimen, self.n, self.hidden)
    }
}

impl std::str::FromStr for Cell {
    type Err = Error;

    /// `regimen:n:d`, e.g. `language:40:50`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [r, n, d] = parts.as_slice() else {
            return Err(Error::Config(format!("cell {s:?} is not regimen:n:d")));
        };
        let num = |x: &str| {
            x.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Config(format!("cell {s:?}: {x:?} is not a positive integer")))
        };
        Ok(Cell {
            regimen: r.parse()?,
            n: num(n)?,
            hidden: num(d)?,
        })
    }
}

/// Cartesian product in regimen-major order.
pub fn grid(regimens: &[Regimen], lengths: &[usize], hidden: &[usize]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &regimen in regimens {
        for &h in hidden {
            for &n in lengths {
                cells.push(Cell { regimen, n, hidden: h });
            }
        }
    }
    cells
}

/// Data for one cell.
#[derive(Clone, Debug)]
pub struct CellData {
    pub vocab_size: usize,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl CellData {
    pub fn datasets(&self) -> Datasets<'_> {
        Datasets {
            train: &self.train,
            validation: &self.validation,
            test: &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub seed_selected: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub runs: Vec<RunRecord>,
}

impl CellResult {
    pub fn from_selection(cell: Cell, sel: &Selection) -> Self {
        let best = &sel.selected().record;
        Self {
            cell,
            seed_selected: best.seed,
            val_acc: best.final_val_acc(),
            test_acc: sel.test_acc,
            epochs: best.epochs.len(),
            stop_reason: best.stop_reason,
            runs: sel.runs.iter().map(|r| r.record.clone()).collect(),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.cell.regimen,
            self.cell.n,
            self.cell.hidden,
            self.seed_selected,
            self.val_acc,
            self.test_acc,
            self.epochs,
            self.stop_reason
        )
    }
}

pub const SUMMARY_HEADER: &str = "regimen,n,hidden,seed_selected,val_acc,test_acc,epochs,stop_reason";

/// `regimen,n,hidden,seed_selected,val_acc,test_acc,epochs,stop_reason`
pub fn summary_csv(results: &[CellResult]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Apply `f` to every item on up to `jobs` scoped worker threads. Results
/// come back in input order and do not depend on `jobs`.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: &(dyn Fn(&T) -> R + Sync)) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(item) = items.get(i) else { break };
        let r = f(item);
        slots.lock().expect("worker slot lock")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.clamp(1, items.len().max(1)) {
            s.spawn(worker);
        }
        worker();
    });
    slots
        .into_inner()
        .expect("worker slot lock")
        .into_iter()
        .map(|r| r.expect("every item visited"))
        .collect()
}

/// Run [`multi_seed_select`] for every cell on up to `jobs` worker threads.
pub fn sweep(
    cells: &[Cell],
    config: &TrainConfig,
    data_for: &(dyn Fn(&Cell) -> Result<CellData> + Sync),
    model_for: &(dyn Fn(&Cell, usize, u64) -> ModelConfig + Sync),
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<CellResult>> {
    parallel_map(cells, jobs, &|cell: &Cell| {
        let data = data_for(cell)?;
        let sel = multi_seed_select(
            config,
            &|seed| model_for(cell, data.vocab_size, seed),
            &data.datasets(),
            base_seed,
            None,
        )?;
        Ok(CellResult::from_selection(*cell, &sel))
    })
    .into_iter()
    .collect()
}
