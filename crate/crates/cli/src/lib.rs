//! Command-line shell: configuration, persistence, and the subcommands.

pub mod config;
pub mod render;

use std::path::{Path, PathBuf};

use grasplab::approximator::Checkpoint;
use grasplab::env::{rollout, write_trace, Env};
use grasplab::experiments::{
    constant_torque_eval, evaluate_policy, physics_score, run_category, write_jsonl, Category, Cell, Column,
    ExperimentError, RawOutcome, ResultsRow, ResultsTable,
};
use grasplab::scene::{build_dataset, DatasetFile, PreGrasp};
use grasplab::trpo::{train, TrainOutcome};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or inputs; exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::InvalidConfig(_) | ExperimentError::DimensionMismatch { .. } | ExperimentError::EmptySet => {
            CliError::Validation(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    }
}

/// Configuration source plus command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A validated configuration and the text it was read from.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    /// Verbatim config file, or the defaults serialized when no file was given.
    pub source: String,
}

impl Prepared {
    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }
}

pub fn prepare(inv: &Invocation) -> Result<Prepared, CliError> {
    let (mut config, source) = match &inv.config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("cannot read config {}", p.display()))(e.to_string()))?;
            (RunConfig::parse(&text)?, text)
        }
        None => {
            let c = RunConfig::default();
            let text = serde_json::to_string_pretty(&c).expect("config serializes");
            (c, text)
        }
    };
    if let Some(s) = inv.seed {
        config.seed = s;
    }
    if let Some(w) = inv.workers {
        config.workers = w;
    }
    if let Some(o) = &inv.out {
        config.out_dir = o.clone();
    }
    let config = config.resolve();
    config.validate()?;
    Ok(Prepared { config, source })
}

/// Creates the output directory and records the configuration used.
fn start_output(p: &Prepared) -> Result<(), CliError> {
    let dir = p.out_dir();
    std::fs::create_dir_all(dir).map_err(|e| runtime(dir.display())(e.to_string()))?;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| runtime(path.display())(e.to_string()))
    };
    write("config.json", &p.source)?;
    write("effective_config.json", &serde_json::to_string_pretty(&p.config).expect("config serializes"))
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("cannot read dataset {}", path.display()))(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("dataset {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).map_err(|e| CliError::Validation(format!("checkpoint {}: {e}", path.display())))
}

/// Writes `dataset.json` with the configured objects; returns its path.
pub fn cmd_dataset(p: &Prepared) -> Result<PathBuf, CliError> {
    start_output(p)?;
    let c = &p.config;
    let file = build_dataset(&c.objects, c.dataset.n_pregrasps, c.dataset.split_ratio, c.seed, &c.hand, &c.dataset.sampler)
        .map_err(|e| CliError::Validation(format!("dataset: {e}")))?;
    let path = p.out_dir().join("dataset.json");
    let text = serde_json::to_string_pretty(&file).expect("dataset serializes");
    std::fs::write(&path, text + "\n").map_err(|e| runtime(path.display())(e.to_string()))?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub object: String,
    pub resume: Option<PathBuf>,
}

pub fn cmd_train(p: &Prepared, args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let c = &p.config;
    let file = load_dataset(&args.dataset)?;
    let d = file
        .find(&args.object)
        .ok_or_else(|| CliError::Validation(format!("object {:?} is not in {}", args.object, args.dataset.display())))?;
    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    if let Some(ck) = &resume {
        if ck.contact_feedback != c.episode.contact_feedback || ck.obs_dim() != c.episode.obs_dim() {
            return Err(CliError::Validation(format!(
                "checkpoint has contact_feedback = {} ({} observations) but episode.contact_feedback = {} ({})",
                ck.contact_feedback,
                ck.obs_dim(),
                c.episode.contact_feedback,
                c.episode.obs_dim()
            )));
        }
    }
    start_output(p)?;
    train(&c.hand, &c.episode, &c.trpo, &d.train_set(), resume, Some(p.out_dir()), c.workers)
        .map_err(|e| CliError::Runtime(format!("training: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

fn split_of(file: &DatasetFile, object: Option<&str>, split: Split) -> Result<Vec<(String, Vec<PreGrasp>)>, CliError> {
    let sets: Vec<(String, Vec<PreGrasp>)> = file
        .datasets
        .iter()
        .filter(|d| object.is_none_or(|o| d.object.name() == o))
        .map(|d| (d.object.name().to_string(), if split == Split::Train { d.train_set() } else { d.test_set() }))
        .collect();
    if sets.is_empty() {
        return Err(CliError::Validation(format!("object {:?} is not in the dataset", object.unwrap_or(""))));
    }
    Ok(sets)
}

fn write_table(dir: &Path, stem: &str, table: &ResultsTable, raw: &[RawOutcome]) -> Result<(), CliError> {
    let e = |err: ExperimentError| CliError::Runtime(err.to_string());
    table.write_csv(&dir.join(format!("{stem}.csv"))).map_err(e)?;
    table.write_text(&dir.join(format!("{stem}.txt"))).map_err(e)?;
    write_jsonl(&dir.join(format!("{stem}_raw.jsonl")), raw).map_err(e)
}

fn raw(category: Category, object: &str, column: Column, pregrasp_id: u32, success: bool, fraction: Option<f64>) -> RawOutcome {
    RawOutcome { category, object: object.to_string(), column: column.header().to_string(), seed: None, pregrasp_id, success, fraction }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub object: Option<String>,
    pub split: Split,
    /// Also write one trace per evaluated pre-grasp under `traces/`.
    pub traces: bool,
}

/// Mean-action evaluation of a checkpoint; fills the ¬C or C column.
pub fn cmd_eval(p: &Prepared, args: &EvalArgs) -> Result<ResultsTable, CliError> {
    let c = &p.config;
    let file = load_dataset(&args.dataset)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let sets = split_of(&file, args.object.as_deref(), args.split)?;
    start_output(p)?;
    let column = if ck.contact_feedback { Column::Contacts } else { Column::NoContacts };
    let category = Category::MultiPregrasp;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(c.workers).build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = Vec::new();
    let mut raws = Vec::new();
    for (object, set) in &sets {
        let r = pool.install(|| evaluate_policy(&ck, set, &c.hand, &c.episode)).map_err(experiment_error)?;
        raws.extend(r.outcomes.iter().map(|o| raw(category, object, column, o.pregrasp_id, o.success, None)));
        let mut cells = std::collections::BTreeMap::new();
        cells.insert(column, cell(set.len(), r.fraction));
        rows.push(ResultsRow { object: object.clone(), cells });
        if args.traces {
            let dir = p.out_dir().join("traces");
            std::fs::create_dir_all(&dir).map_err(|e| runtime(dir.display())(e.to_string()))?;
            for pg in set {
                let mut env = Env::new(c.hand.clone(), c.episode.clone()).map_err(|e| CliError::Runtime(e.to_string()))?;
                let run = rollout(&mut env, pg, 0, true, |o| ck.act(o).unwrap_or_else(|_| vec![0.0; 4]))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                let path = dir.join(format!("{object}_{:04}.jsonl", pg.id));
                write_trace(&path, &run.trace).map_err(|e| runtime(path.display())(e.to_string()))?;
            }
        }
    }
    let table = ResultsTable { category, columns: category.columns(), rows };
    write_table(p.out_dir(), "eval", &table, &raws)?;
    Ok(table)
}

fn cell(n: usize, fraction: f64) -> Cell {
    Cell { percent: Some(100.0 * fraction), n, per_seed: vec![100.0 * fraction], error: None }
}

#[derive(Debug, Clone)]
pub struct BaselineArgs {
    pub dataset: PathBuf,
    pub object: Option<String>,
    pub split: Split,
}

/// Physics score and constant torque on a split; policy columns stay blank.
pub fn cmd_baseline(p: &Prepared, args: &BaselineArgs) -> Result<ResultsTable, CliError> {
    let c = &p.config;
    let file = load_dataset(&args.dataset)?;
    let sets = split_of(&file, args.object.as_deref(), args.split)?;
    start_output(p)?;
    let category = Category::MultiPregrasp;
    let x = c.experiment_config();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(c.workers).build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = Vec::new();
    let mut raws = Vec::new();
    for (object, set) in &sets {
        let mut cells = std::collections::BTreeMap::new();
        let scores = pool
            .install(|| set.iter().map(|pg| physics_score(pg, &c.hand, &c.episode.physics, &x.physics_score)).collect::<Result<Vec<_>, _>>())
            .map_err(experiment_error)?;
        let passed = scores.iter().filter(|s| s.passes()).count();
        cells.insert(Column::PhysicsScore, cell(set.len(), passed as f64 / set.len() as f64));
        raws.extend(scores.iter().map(|s| raw(category, object, Column::PhysicsScore, s.pregrasp_id, s.passes(), Some(s.fraction()))));
        let ep = grasplab::env::EpisodeConfig { contact_feedback: false, ..c.episode.clone() };
        let ct = pool
            .install(|| constant_torque_eval(set, x.constant_torque_fraction * c.hand.torque_limit, &c.hand, &ep))
            .map_err(experiment_error)?;
        cells.insert(Column::ConstantTorque, cell(set.len(), ct.fraction));
        raws.extend(ct.outcomes.iter().map(|o| raw(category, object, Column::ConstantTorque, o.pregrasp_id, o.success, None)));
        rows.push(ResultsRow { object: object.clone(), cells });
    }
    let table = ResultsTable { category, columns: category.columns(), rows };
    write_table(p.out_dir(), "baseline", &table, &raws)?;
    Ok(table)
}

/// Renders every `render.every`-th step of a trace into `frames/` under the output directory.
pub fn cmd_render(p: &Prepared, trace: &Path) -> Result<Vec<PathBuf>, CliError> {
    let text = std::fs::read_to_string(trace).map_err(|e| runtime(format!("cannot read trace {}", trace.display()))(e.to_string()))?;
    let records = render::parse_trace(&text)?;
    start_output(p)?;
    render::render_trace(&records, &p.config.render, p.config.episode.physics.dt, &p.out_dir().join("frames"))
}

/// Runs the configured experiment category; writes `results.csv`, `results.txt`, `results_raw.jsonl`.
pub fn cmd_experiment(p: &Prepared, category: Option<Category>) -> Result<ResultsTable, CliError> {
    let mut x = p.config.experiment_config();
    if let Some(cat) = category {
        x.category = cat;
        if cat == Category::MultiPregraspNoise {
            x.eval_noise = true;
        }
        x.validate().map_err(experiment_error)?;
    }
    start_output(p)?;
    let r = run_category(&x, &p.config.hand).map_err(experiment_error)?;
    write_table(p.out_dir(), "results", &r.table, &r.raw)?;
    Ok(r.table)
}
