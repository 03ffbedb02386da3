//! File-based pipeline: generate datasets, train cells, evaluate, probe, and
//! export figure data. Everything lands under one output directory:
//!
//! ```text
//! <out>/vocab.tsv
//! <out>/data/n<n>/<regimen>/{train,validation}.jsonl + manifest.json
//! <out>/data/n<n>/rare_test/test.jsonl + manifest.json
//! <out>/runs/<regimen>-n<n>-d<d>/seed<s>.{ckpt,metrics.csv}, selected.ckpt, result.json
//! <out>/runs/<regimen>-n<n>-d<d>/probe/{report.json,trace_neuron<j>_c.csv}
//! <out>/report/{summary,figure1,figure2}.csv, report/figure4/<cell>.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SynthConfig, Vocabulary};
use crate::datagen::{self, DatasetSpec, Example, Manifest, Regimen, FULL_GRID_LENGTHS};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numkit::RandomStream;
use crate::probe::{self, ProbeReport, StateKind, DEFAULT_PROBE_EXAMPLES};
use crate::trainer::{self, grid, Cell, CellData, CellResult, TrainConfig};

pub const DEFAULT_RARE_TEST_SIZE: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Whitespace-tokenized text file.
    File {
        path: PathBuf,
        #[serde(default = "default_max_types")]
        max_types: usize,
        /// Append an end-of-sentence token after every non-blank line.
        #[serde(default = "default_true")]
        eos: bool,
    },
    Synthetic(SynthConfig),
}

fn default_max_types() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SynthConfig::default())
    }
}

impl CorpusSource {
    pub fn load(&self, seed: u64) -> Result<Corpus> {
        match self {
            CorpusSource::File { path, max_types, eos } => Corpus::from_file(path, *max_types, *eos),
            CorpusSource::Synthetic(cfg) => Corpus::synthetic(seed, cfg),
        }
    }

    fn describe(&self) -> String {
        match self {
            CorpusSource::File { path, .. } => path.display().to_string(),
            CorpusSource::Synthetic(cfg) => cfg.describe(),
        }
    }
}

/// Model hyperparameters shared by every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelTemplate {
    /// Embedding init half-width; `None` means `DEFAULT_EMBEDDING_GAIN/√d`.
    pub embedding_scale: Option<f64>,
    /// Gate-weight init half-width; `None` means `1/√d`.
    pub init_scale: Option<f64>,
}

impl Default for ModelTemplate {
    fn default() -> Self {
        Self {
            embedding_scale: None,
            init_scale: None,
        }
    }
}

impl ModelTemplate {
    pub fn config(&self, vocab_size: usize, hidden: usize, seed: u64) -> ModelConfig {
        let mut c = ModelConfig::new(vocab_size, hidden, seed);
        if let Some(s) = self.embedding_scale {
            c.embedding_scale = s;
        }
        if let Some(s) = self.init_scale {
            c.init_scale = s;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub regimens: Vec<Regimen>,
    pub lengths: Vec<usize>,
    pub hidden_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub model: ModelTemplate,
    /// Cap on examples per cell before the validation split.
    pub max_examples: Option<usize>,
    pub rare_test_size: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::default(),
            regimens: Regimen::full_grid_regimens(),
            lengths: FULL_GRID_LENGTHS.to_vec(),
            hidden_sizes: vec![50],
            train: TrainConfig::default(),
            model: ModelTemplate::default(),
            max_examples: None,
            rare_test_size: DEFAULT_RARE_TEST_SIZE,
            out: PathBuf::from("memlab-out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.regimens.is_empty() || self.lengths.is_empty() || self.hidden_sizes.is_empty() {
            return Err(Error::Config("regimens, lengths and hidden_sizes must be non-empty".into()));
        }
        if self.regimens.contains(&Regimen::RareTest) {
            return Err(Error::Config("rare_test is an evaluation set, not a training regimen".into()));
        }
        if self.lengths.contains(&0) || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("lengths and hidden sizes must be positive".into()));
        }
        if self.rare_test_size == 0 {
            return Err(Error::Config("rare_test_size must be positive".into()));
        }
        if let CorpusSource::File { path, .. } = &self.corpus {
            if !path.exists() {
                return Err(Error::Config(format!("corpus file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        grid(&self.regimens, &self.lengths, &self.hidden_sizes)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.out)
    }
}

/// Paths inside an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.tsv")
    }

    pub fn data_dir(&self, regimen: Regimen, n: usize) -> PathBuf {
        self.root.join("data").join(format!("n{n}")).join(regimen.to_string())
    }

    pub fn rare_dir(&self, n: usize) -> PathBuf {
        self.data_dir(Regimen::RareTest, n)
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, cell: &Cell) -> PathBuf {
        self.runs().join(cell_slug(cell))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn cell_slug(cell: &Cell) -> String {
    format!("{}-n{}-d{}", cell.regimen, cell.n, cell.hidden)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_dataset(
    dir: &Path,
    spec: DatasetSpec,
    parts: &[(&str, &[Example])],
    vocab_hash: &str,
    global_seed: u64,
) -> Result<()> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let mut examples = 0;
    for (name, exs) in parts {
        let file = format!("{name}.jsonl");
        let hash = datagen::write_jsonl(&dir.join(&file), exs)?;
        files.push((file, hash));
        examples += exs.len();
    }
    Manifest {
        spec,
        vocab_hash: vocab_hash.to_owned(),
        files,
        examples,
        global_seed,
    }
    .save(&dir.join("manifest.json"))
}

/// What `gen-data` wrote.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenSummary {
    pub vocab_size: usize,
    pub corpus_tokens: usize,
    pub training_sets: usize,
    pub rare_test_sets: usize,
}

/// Write the vocabulary, one train/validation pair per (regimen, n), and one
/// rare-word test set per n.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenSummary> {
    cfg.validate()?;
    let layout = cfg.layout();
    let corpus = cfg.corpus.load(cfg.seed)?;
    create_dir(&layout.root)?;
    corpus.vocab.save(&layout.vocab())?;
    let vocab_hash = corpus.vocab.content_hash();
    let source = cfg.corpus.describe();
    let spec = |regimen, n, count| DatasetSpec {
        regimen,
        n,
        count,
        seed: cfg.seed,
        source: source.clone(),
    };

    let mut summary = GenSummary {
        vocab_size: corpus.vocab.len(),
        corpus_tokens: corpus.stream.len(),
        training_sets: 0,
        rare_test_sets: 0,
    };
    for &n in &cfg.lengths {
        let rare_spec = spec(Regimen::RareTest, n, Some(cfg.rare_test_size));
        let test = datagen::generate(&rare_spec, &corpus.vocab, None)?;
        write_dataset(&layout.rare_dir(n), rare_spec, &[("test", &test)], &vocab_hash, cfg.seed)?;
        summary.rare_test_sets += 1;

        for &regimen in &cfg.regimens {
            let available = corpus.stream.len() / n;
            let count = cfg.max_examples.map_or(available, |m| m.min(available));
            let data_spec = spec(regimen, n, Some(count));
            let pool = datagen::generate(&data_spec, &corpus.vocab, Some(&corpus.stream))?;
            let mut rng = RandomStream::new(cfg.seed, format!("split/{regimen}/n{n}"));
            let (train, validation) = datagen::split_validation(pool, cfg.train.validation_frac, &mut rng)?;
            write_dataset(
                &layout.data_dir(regimen, n),
                data_spec,
                &[("train", &train), ("validation", &validation)],
                &vocab_hash,
                cfg.seed,
            )?;
            summary.training_sets += 1;
        }
    }
    Ok(summary)
}

fn load_vocab(layout: &Layout) -> Result<Vocabulary> {
    let path = layout.vocab();
    if !path.exists() {
        return Err(Error::Data(format!("missing vocabulary {}; run gen-data first", path.display())));
    }
    Vocabulary::load(&path)
}

fn load_verified(dir: &Path, file: &str, vocab: &Vocabulary) -> Result<Vec<Example>> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(Error::Data(format!("missing dataset {}; run gen-data first", path.display())));
    }
    Manifest::load(&dir.join("manifest.json"))?.verify(dir, vocab)?;
    datagen::read_jsonl(&path)
}

/// Training, validation and rare test data for a cell, checked against the
/// manifests and the saved vocabulary.
pub fn load_cell_data(layout: &Layout, cell: &Cell) -> Result<CellData> {
    let vocab = load_vocab(layout)?;
    let dir = layout.data_dir(cell.regimen, cell.n);
    Ok(CellData {
        vocab_size: vocab.len(),
        train: load_verified(&dir, "train.jsonl", &vocab)?,
        validation: load_verified(&dir, "validation.jsonl", &vocab)?,
        test: load_verified(&layout.rare_dir(cell.n), "test.jsonl", &vocab)?,
    })
}

/// Train every requested cell (all configured cells when `cells` is empty),
/// resuming from per-seed checkpoints where they exist.
pub fn cmd_train(cfg: &ExperimentConfig, cells: &[Cell], jobs: usize) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let layout = cfg.layout();
    let cells = if cells.is_empty() { cfg.cells() } else { cells.to_vec() };
    trainer::parallel_map(&cells, jobs, &|cell: &Cell| train_cell(cfg, &layout, cell))
        .into_iter()
        .collect()
}

fn train_cell(cfg: &ExperimentConfig, layout: &Layout, cell: &Cell) -> Result<CellResult> {
    let data = load_cell_data(layout, cell)?;
    let dir = layout.run_dir(cell);
    create_dir(&dir)?;
    let ckpt = |seed: u64| dir.join(format!("seed{seed}.ckpt"));
    let sel = trainer::multi_seed_select(
        &cfg.train,
        &|seed| cfg.model.config(data.vocab_size, cell.hidden, seed),
        &data.datasets(),
        cfg.seed,
        Some(&ckpt),
    )?;
    for run in &sel.runs {
        write_text(&dir.join(format!("seed{}.metrics.csv", run.record.seed)), &run.record.metrics_csv())?;
    }
    let selected = dir.join("selected.ckpt");
    let best = ckpt(sel.selected().record.seed);
    fs::copy(&best, &selected).map_err(|e| Error::io(&selected, e))?;
    let result = CellResult::from_selection(*cell, &sel);
    write_json(&dir.join("result.json"), &result)?;
    write_text(&dir.join("summary.csv"), &trainer::summary_csv(std::slice::from_ref(&result)))?;
    Ok(result)
}

fn load_selected(layout: &Layout, cell: &Cell, vocab: &Vocabulary) -> Result<crate::model::LstmParams> {
    let path = layout.run_dir(cell).join("selected.ckpt");
    if !path.exists() {
        return Err(Error::Data(format!("missing checkpoint {}; train the cell first", path.display())));
    }
    let params = trainer::load_params(&path)?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Integrity(format!(
            "{}: model has V={} but the vocabulary has {} types",
            path.display(),
            params.vocab_size(),
            vocab.len()
        )));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cell: Cell,
    pub val_acc: f64,
    pub test_acc: f64,
    pub test_examples: usize,
}

/// Score each cell's selected checkpoint on its validation and rare test sets.
pub fn cmd_eval(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<EvalRecord>> {
    let layout = cfg.layout();
    let vocab = load_vocab(&layout)?;
    let cells = if cells.is_empty() { completed_cells(&layout)? } else { cells.to_vec() };
    let mut out = Vec::new();
    for cell in &cells {
        let params = load_selected(&layout, cell, &vocab)?;
        let data = load_cell_data(&layout, cell)?;
        let rec = EvalRecord {
            cell: *cell,
            val_acc: trainer::evaluate(&params, &data.validation)?,
            test_acc: trainer::evaluate(&params, &data.test)?,
            test_examples: data.test.len(),
        };
        write_json(&layout.run_dir(cell).join("eval.json"), &rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Probe the selected model of a cell on its rare test set; writes the report
/// and cell-state traces of the two best counting neurons.
pub fn cmd_probe(cfg: &ExperimentConfig, cell: &Cell, limit: usize) -> Result<ProbeReport> {
    let layout = cfg.layout();
    let vocab = load_vocab(&layout)?;
    let params = load_selected(&layout, cell, &vocab)?;
    let test = load_verified(&layout.rare_dir(cell.n), "test.jsonl", &vocab)?;
    let report = probe::probe(&params, &test, limit, 2)?;
    let dir = layout.run_dir(cell).join("probe");
    create_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;

    let mut shown = test.first();
    for ex in &test {
        if crate::model::predict(&params, &ex.tokens)? == ex.label {
            shown = Some(ex);
            break;
        }
    }
    let shown = shown.expect("rare test sets are non-empty");
    for r in report.per_neuron.iter().take(2) {
        let trace = probe::trace_neuron(&params, shown, r.neuron, StateKind::C)?;
        write_text(&dir.join(format!("trace_neuron{}_c.csv", r.neuron)), &probe::trace_csv(&trace))?;
    }
    Ok(report)
}

/// Cells under `runs/` that have a `result.json`, sorted.
pub fn completed_cells(layout: &Layout) -> Result<Vec<Cell>> {
    Ok(load_results(layout)?.into_iter().map(|r| r.cell).collect())
}

fn load_results(layout: &Layout) -> Result<Vec<CellResult>> {
    let runs = layout.runs();
    let mut out = Vec::new();
    if runs.exists() {
        for entry in fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))? {
            let path = entry.map_err(|e| Error::io(&runs, e))?.path().join("result.json");
            if path.exists() {
                out.push(read_json::<CellResult>(&path)?);
            }
        }
    }
    out.sort_by_key(|r| r.cell);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportFiles {
    pub cells: usize,
    pub files: Vec<PathBuf>,
}

/// Figure data from completed cells. Cells that never finished are absent.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<ReportFiles> {
    let layout = cfg.layout();
    let results = load_results(&layout)?;
    if results.is_empty() {
        return Err(Error::Data(format!("no completed cells under {}", layout.runs().display())));
    }
    let dir = layout.report_dir();
    create_dir(&dir.join("figure4"))?;
    let mut files = Vec::new();
    let mut emit = |path: PathBuf, text: String| -> Result<()> {
        write_text(&path, &text)?;
        files.push(path);
        Ok(())
    };

    emit(dir.join("summary.csv"), trainer::summary_csv(&results))?;

    let fig1_hidden = cfg.hidden_sizes[0];
    let mut fig1 = String::from("regimen,n,test_acc\n");
    for r in results.iter().filter(|r| r.cell.hidden == fig1_hidden) {
        fig1.push_str(&format!("{},{},{}\n", r.cell.regimen, r.cell.n, r.test_acc));
    }
    emit(dir.join("figure1.csv"), fig1)?;

    let mut fig2 = String::from("regimen,hidden,n,test_acc\n");
    for r in &results {
        fig2.push_str(&format!("{},{},{},{}\n", r.cell.regimen, r.cell.hidden, r.cell.n, r.test_acc));
    }
    emit(dir.join("figure2.csv"), fig2)?;

    for r in &results {
        let Some(run) = r.runs.iter().find(|run| run.seed == r.seed_selected) else {
            continue;
        };
        let mut fig4 = String::from("epoch,val_acc,test_acc\n");
        for m in &run.epochs {
            fig4.push_str(&format!("{},{},{}\n", m.epoch, m.val_acc, m.test_acc));
        }
        emit(dir.join("figure4").join(format!("{}.csv", cell_slug(&r.cell))), fig4)?;
    }
    Ok(ReportFiles {
        cells: results.len(),
        files,
    })
}

/// Command-line interface of the `memlab` binary.
#[derive(Debug, Parser)]
#[command(name = "memlab", version, about = "LSTM middle-token memorization experiments")]
pub struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate datasets, manifests and rare-word test sets.
    GenData,
    /// Train cells with multi-seed selection.
    Train {
        /// Cell as regimen:n:d; repeatable. Defaults to every configured cell.
        #[arg(long = "cell")]
        cells: Vec<Cell>,
    },
    /// Score selected checkpoints on validation and rare test sets.
    Eval {
        #[arg(long = "cell")]
        cells: Vec<Cell>,
    },
    /// Regress the timestep on recorded states of a trained cell.
    Probe {
        #[arg(long = "cell", required = true)]
        cells: Vec<Cell>,
        /// Test examples fed to the probe.
        #[arg(long, default_value_t = DEFAULT_PROBE_EXAMPLES)]
        examples: usize,
    },
    /// Export figure data from completed cells.
    Report,
}

impl Cli {
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

/// Execute a parsed command line, printing a JSON summary on success.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.experiment_config()?;
    match &cli.command {
        Command::GenData => print_json(&cmd_gen_data(&cfg)?),
        Command::Train { cells } => {
            let results = cmd_train(&cfg, cells, cli.jobs)?;
            print!("{}", trainer::summary_csv(&results));
        }
        Command::Eval { cells } => print_json(&cmd_eval(&cfg, cells)?),
        Command::Probe { cells, examples } => {
            for cell in cells {
                let r = cmd_probe(&cfg, cell, *examples)?;
                let top = r.top_neuron();
                println!(
                    "{cell}: full-state R2 c={:.4} h={:.4}; top neuron {} R2 c={:.4} h={:.4}",
                    r.full_state_r2_c, r.full_state_r2_h, top.neuron, top.r2_c, top.r2_h
                );
            }
        }
        Command::Report => print_json(&cmd_report(&cfg)?),
    }
    Ok(())
}
